"""Generate the 100k reference corpus and cache every artifact the acceptance suite needs.

    python scripts/reference_corpus.py [--root DIR]

The first run builds three graphs over 100k documents on one thread, which
takes a while; later runs only load the cache.
"""

import argparse
import json
import logging
import time
from pathlib import Path

from hybrid_ann.reference import ReferenceCache


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--root", type=Path, default=None, help="cache root (default: ~/.cache/hybrid_ann)")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    t0 = time.perf_counter()
    cache = ReferenceCache(root=args.root)
    cache.warm()
    print(f"cache: {cache.dir}")
    print("params:", cache.params())
    for mode, ratio in (("two-stage", 0.0), ("naive-hybrid", 0.0), ("two-stage", 0.4)):
        print(f"{mode} prune={ratio}:", json.dumps(cache.graph(mode, ratio).stats, sort_keys=True))
    print(f"total {time.perf_counter() - t0:.0f}s")


if __name__ == "__main__":
    main()
