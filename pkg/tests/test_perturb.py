"""Tests for spectrum perturbation, edge scoring, and synthesis."""

import numpy as np
import numpy.testing as npt
import pytest
import scipy.sparse as sp

from graphrefine.errors import ConsistencyError, PreconditionError
from graphrefine.graphstore import EdgeSet, build_graph, remove_edges
from graphrefine.perturb import (
    EnhancedGraph,
    PerturbationPlan,
    PerturbedSpectrum,
    delta_sigma,
    perturbed_spectrum,
    recovery_count,
    run_pipeline,
    score_nonedges,
    synthesize,
)
from graphrefine.rankopt import BoConfig, EvalConfig
from graphrefine.spectral import SvdFactors, exact_svd, truncate
from synth import orthonormal_columns, random_graph

# ---- helpers -----------------------------------------------------------


def delta_dense(n, removed, weights=None, canonical=True):
    """The dense perturbation matrix the removed edges stand for."""
    da = np.zeros((n, n))
    w = np.ones(len(removed)) if weights is None else np.asarray(weights)
    for (r, c), wi in zip(removed, w):
        da[r, c] += wi
        if canonical:
            da[c, r] += wi
    return da


def score_oracle(base, sigma, residual, count):
    """Dense enumeration of the candidate ranking."""
    n = residual.num_nodes
    recon = (base.left * sigma) @ base.right.T
    undirected = not residual.directed
    if undirected:
        recon = 0.5 * (recon + recon.T)
    adj = residual.adjacency.toarray()
    cands = []
    for r in range(n):
        for c in range(r + 1, n) if undirected else range(n):
            if r == c or adj[r, c] != 0:
                continue
            cands.append((-recon[r, c], r, c))
    cands.sort()
    cands = cands[:count]
    pairs = np.array([[r, c] for _, r, c in cands], dtype=np.int64)
    scores = np.array([-s for s, _, _ in cands])
    return pairs.reshape(-1, 2), scores


# ---- delta_sigma -------------------------------------------------------


class TestDeltaSigma:
    def test_empty_removal_is_zero(self):
        f = exact_svd(np.eye(4))
        d = delta_sigma(f, EdgeSet(np.zeros((0, 2), dtype=np.int64)))
        npt.assert_array_equal(d, np.zeros(4))

    def test_linear_in_weights(self):
        g = random_graph(20, 40, seed=0)
        f = exact_svd(g.adjacency.toarray())
        removed = EdgeSet(g.canonical_edge_array()[:4])
        d1 = delta_sigma(f, removed, np.full(4, 0.3))
        d2 = delta_sigma(f, removed, np.full(4, 0.6))
        npt.assert_allclose(d2, 2.0 * d1, rtol=1e-12)

    def test_matches_eigenvalue_shift_on_symmetric_positive_matrix(self):
        """Independent oracle: for a symmetric matrix with positive
        simple spectrum, the singular shifts equal the classic
        first-order eigenvalue shifts x_i' dA x_i."""
        rng = np.random.default_rng(1)
        for trial in range(5):
            x = orthonormal_columns(12, 12, rng)
            eigs = np.sort(rng.uniform(1.0, 10.0, 12))[::-1]
            m = (x * eigs) @ x.T
            f = exact_svd(m)
            removed = EdgeSet.from_pairs([(0, 3), (1, 7), (4, 9)])
            got = delta_sigma(f, removed, np.full(3, 0.05))

            evals, evecs = np.linalg.eigh(m)
            order = np.argsort(evals)[::-1]
            evecs = evecs[:, order]
            da = delta_dense(12, removed.edges, np.full(3, 0.05))
            want = np.array([evecs[:, i] @ da @ evecs[:, i]
                             for i in range(12)])
            npt.assert_allclose(got, want, atol=1e-8)

    def test_first_order_error_shrinks_quadratically(self):
        """Against exact re-factorization: halving the perturbation
        weight shrinks the approximation error by about four."""
        rng = np.random.default_rng(2)
        g = random_graph(25, 60, seed=3)
        a = g.adjacency.toarray()
        removed = EdgeSet(g.canonical_edge_array()[:3])
        residual = a - delta_dense(25, removed.edges)
        f = exact_svd(residual)
        errs = []
        for s in (1.0, 0.5, 0.25):
            w = np.full(3, 0.2 * s)
            approx = delta_sigma(f, removed, w)
            exact = exact_svd(residual + delta_dense(
                25, removed.edges, w)).singular_values - f.singular_values
            errs.append(np.linalg.norm(approx - exact))
        assert 3.0 <= errs[0] / errs[1] <= 5.0
        assert 3.0 <= errs[1] / errs[2] <= 5.0

    def test_directed_slots_count_once(self):
        rng = np.random.default_rng(4)
        m = rng.standard_normal((8, 8))
        f = exact_svd(m)
        removed = EdgeSet(np.array([[5, 2]]), canonical=False)
        got = delta_sigma(f, removed)
        want = f.left[5] * f.right[2]
        npt.assert_allclose(got, want, atol=1e-12)

    def test_input_validation(self):
        f = exact_svd(np.eye(4))
        with pytest.raises(PreconditionError):
            delta_sigma(f, EdgeSet(np.array([[0, 9]])))
        with pytest.raises(PreconditionError):
            delta_sigma(f, EdgeSet(np.array([[0, 1]])), np.ones(2))


class TestPerturbedSpectrum:
    def test_sum_identity_holds_exactly(self):
        g = random_graph(15, 30, seed=5)
        f = exact_svd(g.adjacency.toarray())
        ps = perturbed_spectrum(f, EdgeSet(g.canonical_edge_array()[:2]))
        npt.assert_array_equal(ps.perturbed_sigma,
                               f.singular_values + ps.delta_sigma)

    def test_tampered_spectrum_rejected(self):
        f = exact_svd(np.eye(3))
        with pytest.raises(PreconditionError):
            PerturbedSpectrum(base=f, delta_sigma=np.zeros(3),
                              perturbed_sigma=np.ones(3) * 2)
        with pytest.raises(PreconditionError):
            PerturbedSpectrum(base=f, delta_sigma=np.zeros(2),
                              perturbed_sigma=np.ones(2))


# ---- score_nonedges ----------------------------------------------------


class TestScoreNonedges:
    def test_matches_dense_enumeration(self):
        """Blocked scoring equals brute force over every non-edge."""
        for seed, n, m in ((0, 10, 15), (1, 30, 80), (2, 64, 300)):
            g = random_graph(n, m, seed=seed)
            f = truncate(exact_svd(g.adjacency.toarray()), 6)
            sigma = f.singular_values * 1.1 + 0.01
            for count in (1, 5, 40):
                got = score_nonedges(f, sigma, g, count)
                pairs, scores = score_oracle(f, sigma, g, count)
                npt.assert_array_equal(got.edges.edges, pairs)
                npt.assert_allclose(got.scores, scores, atol=1e-12)

    def test_count_zero_gives_empty(self):
        g = random_graph(10, 15, seed=3)
        f = exact_svd(g.adjacency.toarray())
        out = score_nonedges(f, f.singular_values, g, 0)
        assert len(out.edges) == 0 and len(out.scores) == 0

    def test_oversized_count_returns_whole_pool(self):
        g = random_graph(10, 15, seed=4)
        f = exact_svd(g.adjacency.toarray())
        pool = 10 * 9 // 2 - 15
        out = score_nonedges(f, f.singular_values, g, 10_000)
        assert len(out.edges) == pool

    def test_exact_ties_order_by_pair(self):
        """With identical scores everywhere the ranking must fall back
        to ascending (row, col)."""
        n = 5
        g = build_graph(n, np.zeros((0, 2), dtype=np.int64), np.eye(n),
                        np.zeros(n, dtype=int), ["train"] * n,
                        directed=False)
        f = SvdFactors(np.eye(n)[:, :1], np.array([1.0]), np.eye(n)[:, :1])
        out = score_nonedges(f, np.zeros(1), g, 3)
        npt.assert_array_equal(out.edges.edges, [[0, 1], [0, 2], [0, 3]])
        npt.assert_array_equal(out.scores, np.zeros(3))

    def test_missing_single_edge_in_complete_graph(self):
        """The one absent pair of a near-complete graph is the only
        candidate and the reconstruction ranks it first."""
        n = 8
        full = [(i, j) for i in range(n) for j in range(i + 1, n)]
        full.remove((2, 5))
        g = build_graph(n, np.array(full), np.eye(n),
                        np.zeros(n, dtype=int), ["train"] * n,
                        directed=False)
        f = exact_svd(g.adjacency.toarray())
        out = score_nonedges(f, f.singular_values, g, 5)
        npt.assert_array_equal(out.edges.edges, [[2, 5]])

    def test_multi_block_path_matches_oracle(self):
        """A graph big enough to split the row sweep into several blocks
        still reproduces the dense ranking."""
        n = 1500
        rng = np.random.default_rng(6)
        pairs = np.unique(rng.integers(0, n, (4000, 2)), axis=0)
        pairs = pairs[pairs[:, 0] < pairs[:, 1]]
        g = build_graph(n, pairs, np.ones((n, 1)), np.zeros(n, dtype=int),
                        ["train"] * n, directed=False)
        u = orthonormal_columns(n, 4, rng)
        v = orthonormal_columns(n, 4, rng)
        f = SvdFactors(u, np.array([4.0, 3.0, 2.0, 1.0]), v)
        sigma = f.singular_values
        got = score_nonedges(f, sigma, g, 50)
        pairs_o, scores_o = score_oracle(f, sigma, g, 50)
        npt.assert_array_equal(got.edges.edges, pairs_o)
        npt.assert_allclose(got.scores, scores_o, atol=1e-12)

    def test_negative_count_rejected(self):
        g = random_graph(6, 8, seed=7)
        f = exact_svd(g.adjacency.toarray())
        with pytest.raises(PreconditionError):
            score_nonedges(f, f.singular_values, g, -1)


# ---- recovery_count ----------------------------------------------------


class TestRecoveryCount:
    def test_reference_budget(self):
        """0.4% + 0.2% of 1000 edges is exactly 6 despite float
        representation of the sum."""
        assert recovery_count(1000, 0.004, 0.002) == 6

    def test_floor_behavior(self):
        assert recovery_count(1000, 0.0035, 0.0) == 3
        assert recovery_count(100, 0.29, 0.0) == 29
        assert recovery_count(10, 0.05, 0.0) == 0

    def test_negative_sum_clamps_to_zero(self):
        assert recovery_count(1000, 0.004, -0.004) == 0
        assert recovery_count(1000, 0.001, -0.05) == 0


# ---- synthesize --------------------------------------------------------


class TestSynthesize:
    def empty_set(self):
        return EdgeSet(np.zeros((0, 2), dtype=np.int64))

    def test_no_removal_no_recovery_is_identity(self):
        g = random_graph(20, 40, seed=8)
        plan = PerturbationPlan(removed=self.empty_set(), p=0.0, q=0.0,
                                alpha=0.5)
        eg = synthesize(g, plan, self.empty_set(), k_star=3)
        npt.assert_array_equal(eg.adjacency.toarray(),
                               g.adjacency.toarray())

    def test_remove_then_recover_at_unit_alpha_round_trips(self):
        g = random_graph(20, 40, seed=9)
        removed = EdgeSet(g.canonical_edge_array()[5:8])
        plan = PerturbationPlan(removed=removed, p=0.1, q=0.0, alpha=1.0)
        eg = synthesize(g, plan, removed, k_star=2)
        npt.assert_array_equal(eg.adjacency.toarray(),
                               g.adjacency.toarray())

    def test_matches_dense_formula(self):
        """Entrywise check of A - dA + alpha * A_P on a random graph."""
        g = random_graph(30, 70, seed=10)
        a = g.adjacency.toarray()
        removed = EdgeSet(g.canonical_edge_array()[::7])
        residual = remove_edges(g, removed)
        rng = np.random.default_rng(11)
        pool = []
        for r in range(30):
            for c in range(r + 1, 30):
                if residual.adjacency[r, c] == 0:
                    pool.append((r, c))
        picked = [pool[i] for i in rng.choice(len(pool), 6, replace=False)]
        recovered = EdgeSet.from_pairs(picked)
        plan = PerturbationPlan(removed=removed, p=0.1, q=0.05, alpha=0.5)
        eg = synthesize(g, plan, recovered, k_star=4)
        expect = a - delta_dense(30, removed.edges) \
            + 0.5 * delta_dense(30, recovered.edges)
        npt.assert_array_equal(eg.adjacency.toarray(), expect)

    def test_zero_alpha_drops_recovered_from_storage(self):
        g = random_graph(15, 30, seed=12)
        removed = EdgeSet(g.canonical_edge_array()[:2])
        recovered = EdgeSet(removed.edges.copy())
        plan = PerturbationPlan(removed=removed, p=0.1, q=0.0, alpha=0.0)
        eg = synthesize(g, plan, recovered, k_star=1)
        for r, c in recovered:
            assert eg.adjacency[r, c] == 0.0
        assert len(eg.recovered) == 2

    def test_recovered_collision_with_kept_edge_rejected(self):
        g = random_graph(15, 30, seed=13)
        kept_pair = g.canonical_edge_array()[4:5]
        plan = PerturbationPlan(removed=self.empty_set(), p=0.0, q=0.1,
                                alpha=0.5)
        with pytest.raises(ConsistencyError, match="kept"):
            synthesize(g, plan, EdgeSet(kept_pair), k_star=1)

    def test_weight_alphabet_enforced(self):
        g = random_graph(10, 15, seed=14)
        plan = PerturbationPlan(removed=self.empty_set(), p=0.0, q=0.0,
                                alpha=0.5)
        bad = g.adjacency.copy().astype(np.float64)
        bad.data[:] = 0.7
        with pytest.raises(ConsistencyError, match="weight"):
            EnhancedGraph(adjacency=bad, kept=g.edge_set(),
                          recovered=self.empty_set(), params=plan,
                          k_star=1, source=g)

    def test_as_graph_carries_node_data(self):
        g = random_graph(12, 24, seed=15)
        plan = PerturbationPlan(removed=self.empty_set(), p=0.0, q=0.0,
                                alpha=0.3)
        eg = synthesize(g, plan, self.empty_set(), k_star=2)
        h = eg.as_graph()
        npt.assert_array_equal(h.features, g.features)
        npt.assert_array_equal(h.labels, g.labels)
        npt.assert_array_equal(h.val_mask, g.val_mask)

    def test_plan_validation(self):
        with pytest.raises(PreconditionError):
            PerturbationPlan(removed=self.empty_set(), p=1.5, q=0.0,
                             alpha=0.5)
        with pytest.raises(PreconditionError):
            PerturbationPlan(removed=self.empty_set(), p=0.1, q=0.0,
                             alpha=-0.1)


# ---- run_pipeline ------------------------------------------------------


def small_bo(g, size=6, iters=3):
    from graphrefine.rankopt import default_grid
    return BoConfig(grid=default_grid(g.num_nodes, size=size),
                    init_points=3, iterations=iters)


class TestRunPipeline:
    def test_identity_settings_reproduce_input(self, medium_graph):
        """p = 0, q = 0: nothing removed, nothing recovered, A_E = A."""
        g = medium_graph
        result = run_pipeline(g, p=0.0, q=0.0, alpha=0.5,
                              bo_cfg=small_bo(g), mode="full",
                              eval_cfg=EvalConfig(epochs=20))
        npt.assert_array_equal(result.enhanced.adjacency.toarray(),
                               g.adjacency.toarray())
        assert len(result.plan.removed) == 0
        assert len(result.scored.edges) == 0

    def test_deterministic_for_fixed_seed(self, medium_graph):
        g = medium_graph
        kwargs = dict(p=0.05, q=0.02, alpha=0.5, bo_cfg=small_bo(g),
                      mode="full", seed=11, eval_cfg=EvalConfig(epochs=20))
        r1 = run_pipeline(g, **kwargs)
        r2 = run_pipeline(g, **kwargs)
        assert r1.k_star == r2.k_star
        npt.assert_array_equal(r1.enhanced.adjacency.toarray(),
                               r2.enhanced.adjacency.toarray())
        npt.assert_array_equal(r1.scored.edges.edges, r2.scored.edges.edges)
        npt.assert_array_equal(r1.scored.scores, r2.scored.scores)

    def test_recovery_budget_honored(self, medium_graph):
        g = medium_graph
        result = run_pipeline(g, p=0.05, q=0.03, alpha=0.5,
                              bo_cfg=small_bo(g), mode="full", seed=3,
                              eval_cfg=EvalConfig(epochs=20))
        want = recovery_count(g.num_canonical_edges, 0.05, 0.03)
        assert len(result.scored.edges) == want
        assert len(result.plan.removed) == int(0.05 * g.num_canonical_edges)

    def test_mode_output_contract(self, medium_graph):
        g = medium_graph
        common = dict(p=0.05, q=0.02, alpha=0.5, bo_cfg=small_bo(g),
                      seed=1, eval_cfg=EvalConfig(epochs=15))
        full = run_pipeline(g, mode="full", **common)
        assert full.enhanced is not None and full.denoised_op is None
        assert full.trace is not None

        ad = run_pipeline(g, mode="ad_only", **common)
        assert ad.enhanced is None and ad.denoised_op is not None
        assert ad.plan is None and ad.scored is None

        sp_ = run_pipeline(g, mode="sp_only", **common)
        assert sp_.enhanced is not None and sp_.denoised_op is None
        assert sp_.trace is None
        assert sp_.k_star == min(g.num_nodes, 3072)

        both = run_pipeline(g, mode="sp_then_ad", **common)
        assert both.enhanced is not None and both.denoised_op is not None
        assert both.trace is not None

    def test_ad_only_ignores_removal_settings(self, medium_graph):
        g = medium_graph
        r = run_pipeline(g, p=0.3, q=0.1, alpha=0.5, bo_cfg=small_bo(g),
                         mode="ad_only", seed=2,
                         eval_cfg=EvalConfig(epochs=15))
        assert r.factors.rank == r.k_star

    def test_unknown_mode_rejected(self, medium_graph):
        with pytest.raises(PreconditionError, match="mode"):
            run_pipeline(medium_graph, p=0.0, q=0.0, alpha=0.5,
                         mode="everything")

    def test_grid_above_rank_cap_rejected(self, medium_graph):
        g = medium_graph
        cfg = BoConfig(grid=(1, 64), init_points=1, iterations=0)
        with pytest.raises(PreconditionError, match="cap"):
            run_pipeline(g, p=0.0, q=0.0, alpha=0.5, bo_cfg=cfg,
                         rank_cap=32)

    def test_failures_carry_phase_notes(self):
        """An empty validation split fails inside rank optimization; the
        exception surfaces with the phase and rank attached."""
        g = random_graph(30, 60, seed=16)
        from graphrefine.graphstore import with_split
        tokens = np.where(np.arange(30) < 15, "train", "none")
        bad = with_split(g, tokens)
        with pytest.raises(PreconditionError) as info:
            run_pipeline(bad, p=0.0, q=0.0, alpha=0.5,
                         bo_cfg=small_bo(bad), mode="full")
        notes = getattr(info.value, "__notes__", [])
        assert any("rank optimization" in n for n in notes)
        assert any("k=" in n for n in notes)

    def test_recovered_edges_absent_from_residual(self, medium_graph):
        g = medium_graph
        r = run_pipeline(g, p=0.08, q=0.04, alpha=0.5, bo_cfg=small_bo(g),
                         mode="full", seed=5, eval_cfg=EvalConfig(epochs=15))
        residual = remove_edges(g, r.plan.removed)
        kept = residual.edge_set().as_set()
        assert not (r.scored.edges.as_set() & kept)
