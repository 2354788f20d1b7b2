"""Generate the bundled datasets under data/.

Two synthetic graphs ship with the repository:

  data/toy        24 nodes, two dense communities with a couple of
                  bridge edges; fast enough for CLI smoke tests
  data/sbm_small  400-node stochastic block model, 4 communities,
                  cross-community noise edges and class-informative
                  Gaussian features

Run from the repository root:

    python3 scripts/make_bundled_data.py

Regeneration is deterministic; the files are committed, so this script
only needs to run when the recipes change.
"""

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from graphrefine.graphstore import build_graph, stratified_split, write_dataset


def sbm_edges(sizes, p_in, noise_fraction, rng):
    """Intra-community edges at density p_in plus uniformly random
    cross-community edges, noise_fraction of the intra count."""
    n = sum(sizes)
    community = np.repeat(np.arange(len(sizes)), sizes)
    edges = set()
    for a in range(n):
        for b in range(a + 1, n):
            if community[a] == community[b] and rng.random() < p_in:
                edges.add((a, b))
    intra = len(edges)
    target = intra + int(round(noise_fraction * intra))
    while len(edges) < target:
        a, b = rng.integers(0, n, 2)
        if a == b or community[a] == community[b]:
            continue
        edges.add((min(a, b), max(a, b)))
    return np.array(sorted(edges), dtype=np.int64), community


def gaussian_features(labels, dim, separation, noise, rng):
    """Class means on random unit directions, isotropic noise around them."""
    classes = int(labels.max()) + 1
    means = rng.standard_normal((classes, dim))
    means *= separation / np.linalg.norm(means, axis=1, keepdims=True)
    return means[labels] + noise * rng.standard_normal((len(labels), dim))


def make_toy(root):
    rng = np.random.default_rng(7)
    half = 12
    edges = set()
    for offset in (0, half):
        for a in range(half):
            for b in range(a + 1, half):
                if rng.random() < 0.4:
                    edges.add((offset + a, offset + b))
    edges.add((3, half + 5))
    edges.add((8, half + 1))
    edges = np.array(sorted(edges), dtype=np.int64)
    labels = np.repeat([0, 1], half)
    feats = gaussian_features(labels, 4, separation=2.0, noise=0.8, rng=rng)
    split = stratified_split(labels, 8, 8, 8, seed=7)
    g = build_graph(2 * half, edges, feats, labels, split, directed=False)
    write_dataset(g, root / "toy")
    print(f"toy: {g.num_nodes} nodes, {g.num_canonical_edges} edges")


def make_sbm_small(root):
    rng = np.random.default_rng(11)
    sizes = [100, 100, 100, 100]
    edges, labels = sbm_edges(sizes, p_in=0.05, noise_fraction=0.2, rng=rng)
    feats = gaussian_features(labels, 16, separation=1.5, noise=1.0, rng=rng)
    split = stratified_split(labels, 40, 80, 200, seed=11)
    g = build_graph(sum(sizes), edges, feats, labels, split, directed=False)
    write_dataset(g, root / "sbm_small")
    print(f"sbm_small: {g.num_nodes} nodes, {g.num_canonical_edges} edges")


if __name__ == "__main__":
    root = Path(__file__).resolve().parent.parent / "data"
    root.mkdir(exist_ok=True)
    make_toy(root)
    make_sbm_small(root)
