import sys

from hybrid_ann.cli import main

sys.exit(main())
