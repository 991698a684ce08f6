"""Binary file formats (all integers little-endian, no padding).

Dense vectors   ``HDV1`` u32 count, u32 dim, count*dim f32
Sparse vectors  ``HSV1`` u32 count, u32 dim, u64 nnz, (count+1) u64 indptr,
                nnz u32 indices, nnz f32 values
Ground truth    ``HGT1`` u32 count, u32 k, count*k u32 ids, count*k f32 distances
                (missing entries: id 0xFFFFFFFF, distance +inf)
Qrels           UTF-8 text, one ``query_id<TAB>doc_id<TAB>grade`` line per label
Index           ``HIX1`` u32 version, metadata block, embedded dense and sparse
                files, count u32 levels, then for each layer 0..max_level and
                each node on it (ascending id): u32 degree, degree u32 ids

Index metadata block, in order:

    u32 count, u32 dense_dim, u32 sparse_dim, u32 m, f64 level_lambda,
    u8 build_stage, u8 normalized, f64 norm_denominator, f64 prune_ratio,
    u8 prune_queries, i32 entry_point, i32 max_level,
    u8 has_params, f64 norm_denominator, f64 gamma, f64 alpha, i64 seed,
    f64 query_fraction, f64 doc_fraction

Loaders re-validate every structural invariant and report the byte offset of
the first problem. Saving a loaded file reproduces it byte for byte.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from hybrid_ann.alignment import AlignmentParams
from hybrid_ann.errors import FormatError
from hybrid_ann.evaluation import GroundTruth, Qrels
from hybrid_ann.graph import BuildStage, HybridGraph
from hybrid_ann.store import DocumentStore

DATA_DIR_ENV = "HYBRID_ANN_DATA_DIR"
INDEX_VERSION = 1
MISSING_ID = 0xFFFFFFFF

_STAGES = [BuildStage.DENSE_BUILT, BuildStage.HYBRID_REFINED, BuildStage.NAIVE_HYBRID]
_META = struct.Struct("<IIIIdBBddBii")
_PARAMS = struct.Struct("<Bdddqdd")


def data_path(path: str | os.PathLike) -> Path:
    """Resolve a relative path against $HYBRID_ANN_DATA_DIR when it is set."""
    p = Path(path)
    root = os.environ.get(DATA_DIR_ENV)
    if root and not p.is_absolute() and not p.exists():
        return Path(root) / p
    return p


class _Reader:
    def __init__(self, buf: bytes, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def need(self, n: int) -> None:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what}: truncated, needed {n} more bytes, "
                              f"{len(self.buf) - self.pos} left", self.pos)

    def magic(self, tag: bytes) -> None:
        self.need(4)
        got = self.buf[self.pos:self.pos + 4]
        if got != tag:
            raise FormatError(f"{self.what}: bad magic {got!r}, expected {tag!r}", self.pos)
        self.pos += 4

    def unpack(self, st: struct.Struct):
        self.need(st.size)
        out = st.unpack_from(self.buf, self.pos)
        self.pos += st.size
        return out

    def array(self, dtype, count: int) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        self.need(dt.itemsize * count)
        out = np.frombuffer(self.buf, dtype=dt, count=count, offset=self.pos)
        self.pos += dt.itemsize * count
        return out.astype(dt.newbyteorder("="))

    def done(self) -> None:
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what}: {len(self.buf) - self.pos} trailing bytes", self.pos)


def _le(a: np.ndarray, dtype) -> bytes:
    return np.ascontiguousarray(a, dtype=np.dtype(dtype).newbyteorder("<")).tobytes()


# ------------------------------------------------------------------ dense / sparse


def dense_bytes(dense: np.ndarray) -> bytes:
    count, dim = dense.shape
    return b"HDV1" + struct.pack("<II", count, dim) + _le(dense, np.float32)


def _read_dense(r: _Reader) -> np.ndarray:
    r.magic(b"HDV1")
    count, dim = r.unpack(struct.Struct("<II"))
    data = r.array(np.float32, count * dim).reshape(count, dim)
    return data


def sparse_bytes(store: DocumentStore) -> bytes:
    head = b"HSV1" + struct.pack("<IIQ", store.count, store.sparse_dim, store.nnz)
    return (head + _le(store.indptr, np.uint64) + _le(store.indices, np.uint32)
            + _le(store.values, np.float32))


def _read_sparse(r: _Reader):
    r.magic(b"HSV1")
    count, dim, nnz = r.unpack(struct.Struct("<IIQ"))
    ip_at = r.pos
    indptr = r.array(np.uint64, count + 1)
    if indptr[0] != 0:
        raise FormatError(f"{r.what}: indptr[0] must be 0", ip_at)
    bad = np.flatnonzero(np.diff(indptr.astype(np.int64)) < 0) if count else np.empty(0)
    if bad.size:
        raise FormatError(f"{r.what}: indptr decreases at row {int(bad[0])}", ip_at + 8 * int(bad[0] + 1))
    if int(indptr[-1]) != nnz:
        raise FormatError(f"{r.what}: indptr[count]={int(indptr[-1])} != nnz={nnz}", ip_at + 8 * count)
    idx_at = r.pos
    indices = r.array(np.uint32, nnz)
    values_at = r.pos
    values = r.array(np.float32, nnz)
    if nnz:
        over = np.flatnonzero(indices >= dim)
        if over.size:
            raise FormatError(f"{r.what}: index {int(indices[over[0]])} >= dim {dim}", idx_at + 4 * int(over[0]))
        inc = np.diff(indices.astype(np.int64)) <= 0
        inc[indptr[1:-1][(indptr[1:-1] > 0) & (indptr[1:-1] < nnz)].astype(np.int64) - 1] = False
        bad = np.flatnonzero(inc)
        if bad.size:
            raise FormatError(f"{r.what}: indices not strictly increasing within a row",
                              idx_at + 4 * int(bad[0] + 1))
        nonfinite = np.flatnonzero(~np.isfinite(values))
        if nonfinite.size:
            raise FormatError(f"{r.what}: non-finite value", values_at + 4 * int(nonfinite[0]))
    return count, dim, indptr.astype(np.int64), indices, values


def save_dense(path, dense: np.ndarray) -> None:
    Path(path).write_bytes(dense_bytes(np.asarray(dense, dtype=np.float32)))


def load_dense(path) -> np.ndarray:
    r = _Reader(Path(path).read_bytes(), str(path))
    out = _read_dense(r)
    r.done()
    return out


def save_sparse(path, store: DocumentStore) -> None:
    Path(path).write_bytes(sparse_bytes(store))


def load_sparse(path):
    """Returns (count, dim, indptr, indices, values)."""
    r = _Reader(Path(path).read_bytes(), str(path))
    out = _read_sparse(r)
    r.done()
    return out


def save_store(dense_path, sparse_path, store: DocumentStore) -> None:
    save_dense(dense_path, store.dense)
    save_sparse(sparse_path, store)


def load_store(dense_path, sparse_path) -> DocumentStore:
    dense = load_dense(dense_path)
    count, dim, indptr, indices, values = load_sparse(sparse_path)
    if count != dense.shape[0]:
        raise FormatError(f"{dense_path} has {dense.shape[0]} rows but {sparse_path} has {count}")
    return DocumentStore(dense, indptr, indices, values, sparse_dim=dim)


# ------------------------------------------------------------------ ground truth / qrels


def groundtruth_bytes(gt: GroundTruth) -> bytes:
    count, k = gt.ids.shape
    ids = np.where(gt.ids < 0, MISSING_ID, gt.ids).astype(np.uint32)
    return b"HGT1" + struct.pack("<II", count, k) + _le(ids, np.uint32) + _le(gt.distances, np.float32)


def save_groundtruth(path, gt: GroundTruth) -> None:
    Path(path).write_bytes(groundtruth_bytes(gt))


def load_groundtruth(path) -> GroundTruth:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(b"HGT1")
    count, k = r.unpack(struct.Struct("<II"))
    ids = r.array(np.uint32, count * k).reshape(count, k).astype(np.int64)
    dist = r.array(np.float32, count * k).reshape(count, k)
    r.done()
    ids[ids == MISSING_ID] = -1
    return GroundTruth(ids, dist)


def save_qrels(path, qrels: Qrels) -> None:
    lines = [f"{q}\t{d}\t{g}\n" for q in sorted(qrels) for d, g in sorted(qrels[q].items())]
    Path(path).write_text("".join(lines), encoding="utf-8")


def load_qrels(path) -> Qrels:
    out: Qrels = {}
    offset = 0
    for line in Path(path).read_bytes().decode("utf-8").splitlines(keepends=True):
        text = line.rstrip("\r\n")
        if text:
            parts = text.split("\t")
            try:
                q, d, g = (int(x) for x in parts)
            except ValueError:
                raise FormatError(f"{path}: expected query_id<TAB>doc_id<TAB>grade, got {text!r}",
                                  offset) from None
            out.setdefault(q, {})[d] = g
        offset += len(line.encode("utf-8"))
    return out


def save_calibration(path, params: AlignmentParams, extra: dict | None = None) -> None:
    body = {"alignment": params.to_dict(), **(extra or {})}
    Path(path).write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_calibration(path) -> AlignmentParams:
    try:
        body = json.loads(Path(path).read_text(encoding="utf-8"))
        return AlignmentParams.from_dict(body["alignment"])
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a calibration file ({exc})") from None


# ------------------------------------------------------------------ index


def index_bytes(graph: HybridGraph) -> bytes:
    s = graph.store
    p = graph.params
    parts = [b"HIX1", struct.pack("<I", INDEX_VERSION),
             _META.pack(s.count, s.dense_dim, s.sparse_dim, graph.m, graph.level_lambda,
                        _STAGES.index(graph.build_stage), int(s.normalized),
                        s.norm_denominator, s.prune_ratio, int(graph.prune_queries), graph.entry_point,
                        graph.max_level)]
    if p is None:
        parts.append(_PARAMS.pack(0, 0.0, 0.0, 0.0, 0, 0.0, 0.0))
    else:
        parts.append(_PARAMS.pack(1, p.norm_denominator, p.gamma, p.alpha, p.seed,
                                  p.query_fraction, p.doc_fraction))
    parts += [dense_bytes(s.dense), sparse_bytes(s), _le(graph.levels, np.uint32)]
    for level in range(graph.max_level + 1):
        if level == 0:
            deg, rows = graph.deg0, graph.links0
            nodes = np.arange(s.count)
            slots = nodes
        else:
            nodes = graph.layer_nodes(level)
            slots = graph.upper_off[nodes] + level - 1
            deg, rows = graph.upper_deg, graph.upper_links
        body = bytearray()
        for slot in slots:
            d = int(deg[slot])
            body += struct.pack("<I", d) + _le(rows[slot, :d], np.uint32)
        parts.append(bytes(body))
    return b"".join(parts)


def save_index(path, graph: HybridGraph) -> None:
    Path(path).write_bytes(index_bytes(graph))


def load_index(path) -> HybridGraph:
    r = _Reader(Path(path).read_bytes(), str(path))
    r.magic(b"HIX1")
    at = r.pos
    (version,) = r.unpack(struct.Struct("<I"))
    if version != INDEX_VERSION:
        raise FormatError(f"{path}: unsupported index version {version}", at)
    at = r.pos
    (count, ddim, sdim, m, level_lambda, stage, normalized, denom, prune_ratio,
     prune_queries, entry, max_level) = r.unpack(_META)
    if stage >= len(_STAGES):
        raise FormatError(f"{path}: unknown build stage {stage}", at + 24)
    if m < 2:
        raise FormatError(f"{path}: m={m} must be at least 2", at + 12)
    has, p_denom, gamma, alpha, seed, qf, df = r.unpack(_PARAMS)
    params = AlignmentParams(p_denom, gamma, alpha, seed, qf, df) if has else None
    dense_at = r.pos
    dense = _read_dense(r)
    if dense.shape != (count, ddim):
        raise FormatError(f"{path}: embedded dense block is {dense.shape}, expected {(count, ddim)}", dense_at)
    sp_at = r.pos
    s_count, s_dim, indptr, indices, values = _read_sparse(r)
    if (s_count, s_dim) != (count, sdim):
        raise FormatError(f"{path}: embedded sparse block has shape {(s_count, s_dim)}", sp_at)
    store = DocumentStore(dense, indptr, indices, values, sparse_dim=sdim,
                          normalized=bool(normalized), norm_denominator=denom,
                          prune_ratio=prune_ratio)
    lv_at = r.pos
    levels = r.array(np.uint32, count).astype(np.int32)
    top = int(levels.max()) if count else -1
    if top != max_level:
        raise FormatError(f"{path}: max_level={max_level} but highest node level is {top}", lv_at)
    if count and not (0 <= entry < count and levels[entry] == top):
        raise FormatError(f"{path}: entry point {entry} is not a top-level node", at + 43)
    graph = HybridGraph.allocate(store, params, m, level_lambda, levels)
    graph.entry_point, graph.max_level, graph.build_stage = entry, max_level, _STAGES[stage]
    graph.prune_queries = bool(prune_queries)
    for level in range(max_level + 1):
        cap = 2 * m if level == 0 else m
        for node in (range(count) if level == 0 else graph.layer_nodes(level)):
            d_at = r.pos
            (deg,) = r.unpack(struct.Struct("<I"))
            if deg > cap:
                raise FormatError(f"{path}: node {node} level {level} degree {deg} > {cap}", d_at)
            nb = r.array(np.uint32, deg)
            if deg and (int(nb.max()) >= count or np.any(nb == node)
                        or np.unique(nb).size != deg
                        or (level > 0 and np.any(levels[nb] < level))):
                raise FormatError(f"{path}: invalid adjacency for node {node} level {level}", d_at + 4)
            if level == 0:
                graph.links0[node, :deg] = nb
                graph.deg0[node] = deg
            else:
                slot = graph.upper_off[node] + level - 1
                graph.upper_links[slot, :deg] = nb
                graph.upper_deg[slot] = deg
    r.done()
    return graph
