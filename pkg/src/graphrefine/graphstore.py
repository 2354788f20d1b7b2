"""Graph data model, dataset ingestion, splits, and structural diagnostics.

A dataset lives in a directory of five text files:

- ``edges.tsv``     one edge per line, ``src<TAB>dst``, zero-based ids
- ``features.csv``  one row of comma-separated floats per node
- ``labels.tsv``    one integer per node, -1 marks an unlabeled node
- ``split.tsv``     one token per node from {train, val, test, none}
- ``meta.tsv``      ``num_nodes<TAB>N`` and ``directed<TAB>{0,1}``

Graphs are stored as canonical CSR (sorted column indices, no duplicate
slots, no self-loops, strictly positive weights) and are immutable after
construction.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import (
    FormatError,
    LoadError,
    PreconditionError,
    UndefinedResultError,
)

log = logging.getLogger(__name__)

SPLIT_TOKENS = ("train", "val", "test", "none")


@dataclass(frozen=True)
class EdgeSet:
    """An ordered list of (src, dst) pairs.

    When ``canonical`` is true the set describes undirected pairs: each
    pair is stored once with src < dst and stands for both directed
    slots. With ``canonical`` false the pairs are directed slots as-is.
    """

    edges: np.ndarray  # (m, 2) int64
    canonical: bool = True

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        object.__setattr__(self, "edges", e)
        if len(e):
            if np.any(e[:, 0] == e[:, 1]):
                raise PreconditionError("edge set contains a self-loop")
            if self.canonical and np.any(e[:, 0] > e[:, 1]):
                raise PreconditionError(
                    "canonical edge set requires src < dst on every pair"
                )
            keys = e[:, 0] * (e.max() + 1) + e[:, 1] if e.size else e[:, 0]
            if len(np.unique(keys)) != len(e):
                raise PreconditionError("edge set contains duplicate pairs")

    def __len__(self) -> int:
        return len(self.edges)

    def __iter__(self):
        return iter(map(tuple, self.edges))

    def as_set(self) -> set[tuple[int, int]]:
        return {(int(s), int(d)) for s, d in self.edges}

    @staticmethod
    def from_pairs(pairs, canonical: bool = True) -> "EdgeSet":
        arr = np.asarray(sorted(set((int(a), int(b)) for a, b in pairs)), dtype=np.int64)
        return EdgeSet(arr.reshape(-1, 2), canonical=canonical)


@dataclass(frozen=True)
class Graph:
    """Immutable attributed graph with train/val/test masks."""

    num_nodes: int
    adjacency: sp.csr_matrix  # canonical CSR, weights > 0, no self-loops
    features: np.ndarray      # (N, d) float64
    labels: np.ndarray        # (N,) int64, -1 for unlabeled
    train_mask: np.ndarray    # (N,) bool
    val_mask: np.ndarray
    test_mask: np.ndarray
    directed: bool

    def __post_init__(self):
        _validate_graph(self)

    @property
    def num_edges(self) -> int:
        """Number of stored directed edge slots."""
        return int(self.adjacency.nnz)

    @property
    def num_canonical_edges(self) -> int:
        """Edges counted once per unordered pair when undirected."""
        return self.num_edges if self.directed else self.num_edges // 2

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def num_classes(self) -> int:
        labeled = self.labels[self.labels >= 0]
        return int(labeled.max()) + 1 if len(labeled) else 0

    def edge_slots(self) -> np.ndarray:
        """All stored (src, dst) slots as an (nnz, 2) array."""
        coo = self.adjacency.tocoo()
        return np.column_stack([coo.row, coo.col]).astype(np.int64)

    def canonical_edge_array(self) -> np.ndarray:
        """Canonical pairs: src < dst for undirected, all slots otherwise."""
        slots = self.edge_slots()
        if self.directed:
            return slots
        return slots[slots[:, 0] < slots[:, 1]]

    def edge_set(self) -> EdgeSet:
        return EdgeSet(self.canonical_edge_array(), canonical=not self.directed)


def _canonical_csr(num_nodes, rows, cols, weights) -> sp.csr_matrix:
    m = sp.csr_matrix(
        (np.asarray(weights, dtype=np.float64),
         (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(num_nodes, num_nodes),
    )
    m.sum_duplicates()
    m.sort_indices()
    m.eliminate_zeros()
    return m


def _validate_graph(g: Graph) -> None:
    a = g.adjacency
    if a.shape != (g.num_nodes, g.num_nodes):
        raise PreconditionError("adjacency shape does not match num_nodes")
    if a.nnz:
        if np.any(a.data <= 0):
            raise PreconditionError("adjacency contains non-positive weights")
        coo = a.tocoo()
        if np.any(coo.row == coo.col):
            raise PreconditionError("adjacency stores self-loops")
        if not g.directed:
            if (a != a.T).nnz != 0:
                raise PreconditionError("undirected adjacency is not symmetric")
    if g.features.shape[0] != g.num_nodes:
        raise PreconditionError("feature row count does not match num_nodes")
    if len(g.labels) != g.num_nodes:
        raise PreconditionError("label count does not match num_nodes")
    masks = (g.train_mask, g.val_mask, g.test_mask)
    for m in masks:
        if len(m) != g.num_nodes or m.dtype != np.bool_:
            raise PreconditionError("masks must be boolean vectors of length N")
    if np.any((g.train_mask & g.val_mask) | (g.train_mask & g.test_mask)
              | (g.val_mask & g.test_mask)):
        raise PreconditionError("train/val/test masks overlap")
    if np.any(g.labels[g.train_mask] < 0):
        raise PreconditionError("a train-mask node is unlabeled")


def build_graph(num_nodes, edges, features, labels, split, directed,
                weights=None) -> Graph:
    """Assemble a Graph from edge pairs, symmetrizing when undirected.

    ``edges`` are (src, dst) pairs; duplicates and self-loops must have
    been removed by the caller. ``split`` is a length-N token array.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if weights is None:
        weights = np.ones(len(edges))
    if not directed and len(edges):
        edges = np.vstack([edges, edges[:, ::-1]])
        weights = np.concatenate([weights, weights])
        # symmetrization may re-create duplicates when both directions
        # were present in the input; collapse them to a single slot
        keys = edges[:, 0] * num_nodes + edges[:, 1]
        _, idx = np.unique(keys, return_index=True)
        edges, weights = edges[idx], np.asarray(weights)[idx]
    adjacency = _canonical_csr(num_nodes, edges[:, 0] if len(edges) else [],
                               edges[:, 1] if len(edges) else [],
                               weights if len(edges) else [])
    split = np.asarray(split)
    return Graph(
        num_nodes=num_nodes,
        adjacency=adjacency,
        features=np.asarray(features, dtype=np.float64).reshape(num_nodes, -1),
        labels=np.asarray(labels, dtype=np.int64),
        train_mask=split == "train",
        val_mask=split == "val",
        test_mask=split == "test",
        directed=bool(directed),
    )


def _read_meta(path: Path) -> tuple[int, bool]:
    meta = {}
    for line in path.read_text().splitlines():
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise FormatError(f"{path.name}: malformed line {line!r}")
        meta[parts[0]] = parts[1]
    try:
        num_nodes = int(meta["num_nodes"])
        directed = bool(int(meta["directed"]))
    except (KeyError, ValueError) as e:
        raise FormatError(f"{path.name}: missing or invalid key ({e})") from None
    if num_nodes < 0:
        raise FormatError(f"{path.name}: negative num_nodes")
    return num_nodes, directed


def load_graph(dir_path, directed: bool | None = None, strict: bool = False) -> Graph:
    """Load a dataset directory into a Graph.

    ``directed`` overrides the flag in meta.tsv when given. Duplicate edge
    lines are deduplicated and self-loop lines dropped; both are counted
    and logged, or rejected outright when ``strict`` is set.
    """
    d = Path(dir_path)
    files = {name: d / name for name in
             ("edges.tsv", "features.csv", "labels.tsv", "split.tsv", "meta.tsv")}
    for name, path in files.items():
        if not path.is_file():
            raise LoadError(f"dataset file missing: {path}")

    num_nodes, meta_directed = _read_meta(files["meta.tsv"])
    if directed is None:
        directed = meta_directed

    pairs = []
    seen = set()
    dup_count = 0
    loop_count = 0
    with open(files["edges.tsv"]) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise FormatError(f"edges.tsv line {lineno}: expected src<TAB>dst")
            try:
                s, t = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"edges.tsv line {lineno}: non-integer id") from None
            if s < 0 or t < 0 or s >= num_nodes or t >= num_nodes:
                raise FormatError(
                    f"edges.tsv line {lineno}: node id out of range "
                    f"(got {s},{t} with num_nodes={num_nodes})")
            if s == t:
                if strict:
                    raise FormatError(f"edges.tsv line {lineno}: self-loop {s}")
                loop_count += 1
                continue
            key = (s, t) if directed else (min(s, t), max(s, t))
            if key in seen:
                dup_count += 1
                if strict and (directed or (s, t) in {(a, b) for a, b in pairs}):
                    # undirected datasets may legitimately list both directions
                    raise FormatError(f"edges.tsv line {lineno}: duplicate edge {s},{t}")
                continue
            seen.add(key)
            pairs.append(key)
    if dup_count or loop_count:
        log.warning("load_graph(%s): dropped %d duplicate and %d self-loop edge lines",
                    d, dup_count, loop_count)

    feats = _read_features(files["features.csv"], num_nodes)

    labels = []
    with open(files["labels.tsv"]) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError:
                raise FormatError(f"labels.tsv line {lineno}: non-integer label") from None
    if len(labels) != num_nodes:
        raise FormatError(
            f"labels.tsv: expected {num_nodes} lines, found {len(labels)}")

    split = []
    with open(files["split.tsv"]) as f:
        for lineno, line in enumerate(f, 1):
            tok = line.strip()
            if not tok:
                continue
            if tok not in SPLIT_TOKENS:
                raise FormatError(f"split.tsv line {lineno}: unknown token {tok!r}")
            split.append(tok)
    if len(split) != num_nodes:
        raise FormatError(
            f"split.tsv: expected {num_nodes} lines, found {len(split)}")

    edges = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    try:
        return build_graph(num_nodes, edges, feats, labels, split, directed)
    except PreconditionError as e:
        raise FormatError(f"{d}: {e}") from e


def _read_features(path: Path, num_nodes: int) -> np.ndarray:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                row = np.fromstring(line, dtype=np.float64, sep=",")
            except ValueError:
                raise FormatError(f"features.csv line {lineno}: parse failure") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(
                    f"features.csv line {lineno}: expected {width} values, "
                    f"found {len(row)}")
            rows.append(row)
    if len(rows) != num_nodes:
        raise FormatError(
            f"features.csv: expected {num_nodes} rows, found {len(rows)}")
    if num_nodes == 0:
        return np.zeros((0, 0))
    return np.vstack(rows)


def write_dataset(g: Graph, dir_path) -> None:
    """Write a Graph back out in the dataset directory format."""
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    pairs = g.canonical_edge_array()
    with open(d / "edges.tsv", "w") as f:
        for s, t in pairs:
            f.write(f"{s}\t{t}\n")
    with open(d / "features.csv", "w") as f:
        for row in g.features:
            f.write(",".join(f"{v:.17g}" for v in row) + "\n")
    with open(d / "labels.tsv", "w") as f:
        for y in g.labels:
            f.write(f"{y}\n")
    tokens = np.full(g.num_nodes, "none", dtype=object)
    tokens[g.train_mask] = "train"
    tokens[g.val_mask] = "val"
    tokens[g.test_mask] = "test"
    with open(d / "split.tsv", "w") as f:
        for t in tokens:
            f.write(f"{t}\n")
    with open(d / "meta.tsv", "w") as f:
        f.write(f"num_nodes\t{g.num_nodes}\n")
        f.write(f"directed\t{int(g.directed)}\n")


def remove_edges(g: Graph, removed: EdgeSet) -> Graph:
    """Residual graph: subtract the removed edges from the adjacency.

    For an undirected graph a canonical pair removes both stored slots.
    Every removed edge must be present.
    """
    if len(removed) == 0:
        return g
    slots = removed.edges
    if removed.canonical and not g.directed:
        slots = np.vstack([slots, slots[:, ::-1]])
    n = g.num_nodes
    if np.any(slots < 0) or np.any(slots >= n):
        raise PreconditionError("removed edge ids out of range")

    coo = g.adjacency.tocoo()
    present = coo.row.astype(np.int64) * n + coo.col.astype(np.int64)
    targets = slots[:, 0] * n + slots[:, 1]
    hit = np.isin(targets, present)
    if not np.all(hit):
        bad = slots[~hit][0]
        raise PreconditionError(
            f"edge ({bad[0]}, {bad[1]}) not present in graph")
    keep = ~np.isin(present, targets)
    adjacency = _canonical_csr(n, coo.row[keep], coo.col[keep], coo.data[keep])
    return Graph(
        num_nodes=n, adjacency=adjacency, features=g.features, labels=g.labels,
        train_mask=g.train_mask, val_mask=g.val_mask, test_mask=g.test_mask,
        directed=g.directed)


def sample_edge_fraction(g: Graph, p: float, seed: int) -> EdgeSet:
    """Uniformly sample floor(p * |E_canonical|) canonical edges without
    replacement; deterministic for a fixed seed."""
    if not 0.0 <= p <= 1.0:
        raise PreconditionError(f"fraction p={p} outside [0, 1]")
    pairs = g.canonical_edge_array()
    count = int(np.floor(p * len(pairs)))
    if count == 0:
        return EdgeSet(np.zeros((0, 2), dtype=np.int64),
                       canonical=not g.directed)
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pairs), size=count, replace=False)
    return EdgeSet(pairs[np.sort(idx)], canonical=not g.directed)


def edge_homophily(g: Graph) -> float:
    """Fraction of edge slots whose endpoints share a label.

    Slots with an unlabeled endpoint are excluded on both sides of the
    ratio; having no countable slot at all is an error.
    """
    coo = g.adjacency.tocoo()
    lr, lc = g.labels[coo.row], g.labels[coo.col]
    counted = (lr >= 0) & (lc >= 0)
    if not np.any(counted):
        raise UndefinedResultError("no edge with two labeled endpoints")
    return float(np.mean(lr[counted] == lc[counted]))


def stratified_split(labels: np.ndarray, train_size: int, val_size: int,
                     test_size: int, seed: int) -> np.ndarray:
    """Seeded random split tokens, train allocation stratified by label.

    The train set takes a per-class share proportional to class frequency
    (largest-remainder rounding); val and test are drawn uniformly from
    the remaining labeled nodes.
    """
    labels = np.asarray(labels)
    n = len(labels)
    labeled = np.flatnonzero(labels >= 0)
    if train_size + val_size + test_size > len(labeled):
        raise PreconditionError("split sizes exceed number of labeled nodes")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels[labeled])
    # proportional allocation with largest remainder
    counts = np.array([np.sum(labels[labeled] == c) for c in classes])
    quota = train_size * counts / counts.sum()
    alloc = np.floor(quota).astype(int)
    rem = train_size - alloc.sum()
    order = np.argsort(-(quota - alloc))
    alloc[order[:rem]] += 1

    tokens = np.full(n, "none", dtype=object)
    leftover = []
    for c, k in zip(classes, alloc):
        members = np.flatnonzero(labels == c)
        members = rng.permutation(members)
        tokens[members[:k]] = "train"
        leftover.extend(members[k:])
    leftover = rng.permutation(np.asarray(leftover, dtype=np.int64))
    tokens[leftover[:val_size]] = "val"
    tokens[leftover[val_size:val_size + test_size]] = "test"
    return tokens


def with_split(g: Graph, tokens: np.ndarray) -> Graph:
    """Copy of the graph with masks replaced by the given split tokens."""
    tokens = np.asarray(tokens)
    return Graph(
        num_nodes=g.num_nodes, adjacency=g.adjacency, features=g.features,
        labels=g.labels, train_mask=tokens == "train", val_mask=tokens == "val",
        test_mask=tokens == "test", directed=g.directed)
