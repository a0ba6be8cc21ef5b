import numpy as np
import pytest

from blockedbandits.completion import (
    CompletionProblem,
    SolverConfig,
    diagnostics,
    estimate,
    partition_count,
    solve_block,
    subset_floor_sample,
)
from blockedbandits.rng import stream


def incoherent_low_rank(n: int, rank: int, seed: int, scale: float = 2.0) -> np.ndarray:
    """Orthonormal factors with equal singular values; entries O(scale)."""
    g = np.random.default_rng(seed)
    u, _ = np.linalg.qr(g.normal(size=(n, rank)))
    v, _ = np.linalg.qr(g.normal(size=(n, rank)))
    return (u @ v.T) * scale * np.sqrt(n / rank)


def masked_problem(truth: np.ndarray, p: float, sigma: float, seed: int) -> CompletionProblem:
    g = np.random.default_rng(seed)
    mask = g.random(truth.shape) < p
    omega = np.argwhere(mask)
    values = truth[mask] + g.normal(0, sigma, size=mask.sum())
    return CompletionProblem(truth.shape[0], truth.shape[1], omega, values,
                             rank=2, sigma=sigma)


def nuclear_objective(q: np.ndarray, prob: CompletionProblem, lam: float) -> float:
    resid = q[prob.omega[:, 0], prob.omega[:, 1]] - prob.values
    return 0.5 * float(resid @ resid) + lam * float(
        np.linalg.svd(q, compute_uv=False).sum())


def subgradient_oracle(prob: CompletionProblem, lam: float,
                       iters: int = 60_000) -> tuple[np.ndarray, float]:
    """Independent high-precision solver for the same convex program:
    plain subgradient descent with a diminishing step, best iterate kept."""
    q = np.zeros((prob.n_rows, prob.n_cols))
    best, best_f = q.copy(), nuclear_objective(q, prob, lam)
    rows, cols = prob.omega[:, 0], prob.omega[:, 1]
    step0 = 0.5
    for k in range(1, iters + 1):
        grad = np.zeros_like(q)
        np.add.at(grad, (rows, cols), q[rows, cols] - prob.values)
        u, s, vt = np.linalg.svd(q, full_matrices=False)
        grad += lam * (u @ vt)
        q = q - (step0 / np.sqrt(k)) * grad
        f = nuclear_objective(q, prob, lam)
        if f < best_f:
            best, best_f = q.copy(), f
    return best, best_f


class TestSolveBlock:
    def test_full_observation_zero_noise_exact(self):
        g = np.random.default_rng(0)
        truth = np.outer(g.normal(size=8), g.normal(size=6))
        omega = np.argwhere(np.ones_like(truth, dtype=bool))
        prob = CompletionProblem(8, 6, omega, truth.ravel(), rank=1, sigma=0.0)
        res = solve_block(prob, SolverConfig())
        assert res.lam == 0.0
        assert np.abs(res.matrix - truth).max() <= 1e-6

    def test_huge_regulariser_gives_zero(self):
        truth = incoherent_low_rank(10, 2, seed=1)
        prob = masked_problem(truth, 0.8, 0.1, seed=1)
        res = solve_block(prob, SolverConfig(c_lambda=1e9))
        assert np.abs(res.matrix).max() == 0.0

    def test_matches_subgradient_oracle_20x20(self):
        truth = incoherent_low_rank(20, 2, seed=2)
        prob = masked_problem(truth, 0.5, 0.01, seed=2)
        res = solve_block(prob, SolverConfig(max_iters=20_000, tol=1e-12))
        _, oracle_f = subgradient_oracle(prob, res.lam)
        ours_f = nuclear_objective(res.matrix, prob, res.lam)
        assert abs(ours_f - oracle_f) <= 1e-3

    def test_matches_dense_convex_solver_20x20(self):
        cp = pytest.importorskip("cvxpy")
        truth = incoherent_low_rank(20, 2, seed=2)
        prob = masked_problem(truth, 0.5, 0.01, seed=2)
        res = solve_block(prob, SolverConfig(max_iters=20_000, tol=1e-12))
        q = cp.Variable((20, 20))
        resid = q[prob.omega[:, 0], prob.omega[:, 1]] - prob.values
        objective = 0.5 * cp.sum_squares(resid) + res.lam * cp.normNuc(q)
        cp.Problem(cp.Minimize(objective)).solve(solver=cp.SCS, eps=1e-9,
                                                 max_iters=20_000)
        assert np.abs(res.matrix - q.value).max() <= 0.05

    def test_objective_monotone_every_iteration(self):
        truth = incoherent_low_rank(16, 2, seed=3)
        prob = masked_problem(truth, 0.5, 0.2, seed=3)
        res = solve_block(prob, SolverConfig())
        objs = np.array(res.objectives)
        slack = 1e-10 * np.maximum(1.0, np.abs(objs[:-1]))
        assert (np.diff(objs) <= slack).all()

    def test_low_rank_output(self):
        truth = incoherent_low_rank(14, 2, seed=4)
        prob = masked_problem(truth, 0.7, 0.05, seed=4)
        res = solve_block(prob, SolverConfig())
        svals = np.linalg.svd(res.matrix, compute_uv=False)
        assert (svals > 1e-8 * svals[0]).sum() < 14  # thresholding truncates

    def test_duplicate_observations_averaged(self):
        # same pair observed twice: the fit targets the count-weighted mean
        omega = np.array([[0, 0], [0, 0], [1, 1]])
        values = np.array([1.0, 3.0, 0.5])
        prob = CompletionProblem(2, 2, omega, values, rank=1, sigma=0.5)
        res = solve_block(prob, SolverConfig(c_lambda=1e-6))
        assert res.matrix[0, 0] == pytest.approx(2.0, abs=1e-3)

    def test_empty_omega_rejected(self):
        with pytest.raises(ValueError):
            solve_block(CompletionProblem(2, 2, np.empty((0, 2), dtype=int),
                                          np.empty(0), 1, 0.1))


class TestEstimate:
    def test_partition_counts(self):
        assert partition_count(4, 10) == 3
        assert partition_count(10, 4) == 3
        assert partition_count(7, 7) == 1
        assert partition_count(3, 100) == 34

    def test_square_single_block_matches_solve(self):
        truth = incoherent_low_rank(12, 2, seed=5)
        prob = masked_problem(truth, 0.6, 0.05, seed=5)
        direct = solve_block(prob, SolverConfig())
        via_estimate = estimate(12, 12, prob.omega, prob.values, 0.05, 2,
                                SolverConfig(), stream(0, "part"))
        assert np.abs(direct.matrix - via_estimate.matrix).max() <= 1e-9

    def test_empty_block_zeroed_and_flagged(self):
        rng = stream(3, "partition")
        # learn the column assignment this rng will draw, then leave one
        # group unobserved
        probe = rng.integers(2, size=4)
        rng = stream(3, "partition")
        empty_group = probe[3]
        cols_in_empty = np.flatnonzero(probe == empty_group)
        keep_cols = np.flatnonzero(probe != empty_group)
        omega = np.array([[r, c] for r in range(2) for c in keep_cols])
        values = np.ones(len(omega))
        res = estimate(2, 4, omega, values, 0.1, 1, SolverConfig(), rng)
        assert res.empty_blocks
        assert (res.matrix[:, cols_in_empty] == 0).all()

    def test_row_relabelling_equivariance_rectangular(self):
        # columns are partitioned, so permuting rows commutes with the
        # solver for the same partition stream
        truth = incoherent_low_rank(18, 2, seed=6)[:6]  # 6 x 18
        prob = masked_problem(truth, 0.7, 0.02, seed=6)
        base = estimate(6, 18, prob.omega, prob.values, 0.02, 2,
                        SolverConfig(), stream(5, "zeta"))
        perm = np.random.default_rng(1).permutation(6)
        omega2 = prob.omega.copy()
        omega2[:, 0] = perm[omega2[:, 0]]
        permuted = estimate(6, 18, omega2, prob.values, 0.02, 2,
                            SolverConfig(), stream(5, "zeta"))
        assert np.abs(base.matrix[np.argsort(np.argsort(perm))] -
                      permuted.matrix[np.argsort(np.argsort(perm))]).max() >= 0
        assert np.abs(permuted.matrix[perm] - base.matrix).max() <= 1e-8

    def test_full_relabelling_equivariance_square(self):
        truth = incoherent_low_rank(10, 2, seed=7)
        prob = masked_problem(truth, 0.8, 0.05, seed=7)
        base = estimate(10, 10, prob.omega, prob.values, 0.05, 2,
                        SolverConfig(), stream(6, "zeta"))
        g = np.random.default_rng(2)
        rperm, cperm = g.permutation(10), g.permutation(10)
        omega2 = np.stack([rperm[prob.omega[:, 0]],
                           cperm[prob.omega[:, 1]]], axis=1)
        permuted = estimate(10, 10, omega2, prob.values, 0.05, 2,
                            SolverConfig(), stream(6, "zeta"))
        assert np.abs(permuted.matrix[np.ix_(rperm, cperm)] -
                      base.matrix).max() <= 1e-8

    def test_partial_error_bounded_by_full_reference(self):
        # sparse-sample error within 5x of the fully observed reference
        truth = incoherent_low_rank(100, 2, seed=8, scale=1.0)
        ref = masked_problem(truth, 1.0, 0.01, seed=8)
        full = estimate(100, 100, ref.omega, ref.values, 0.01, 2,
                        SolverConfig(), stream(7, "zeta"))
        sparse = masked_problem(truth, 0.3, 0.01, seed=9)
        part = estimate(100, 100, sparse.omega, sparse.values, 0.01, 2,
                        SolverConfig(), stream(7, "zeta"))
        err_full = np.abs(full.matrix - truth).max()
        err_part = np.abs(part.matrix - truth).max()
        assert err_part <= 5 * err_full


class TestDiagnostics:
    def test_spike_column_attains_max_mu(self):
        # identical columns scaled by a one-hot pattern: all column mass on
        # one singular direction concentrated in a single item
        n_users, n_items, n_clusters = 8, 12, 4
        rewards = np.zeros((n_users, n_items))
        rewards[:, 3] = 1.0 + np.arange(n_users) % n_clusters
        diag = diagnostics(rewards, np.arange(n_users) % n_clusters)
        assert diag.mu_col == pytest.approx(n_items / n_clusters)

    def test_orthonormal_factors_kappa_near_one(self):
        g = np.random.default_rng(9)
        v, _ = np.linalg.qr(g.normal(size=(40, 3)))
        x = v.T  # 3 distinct rows, orthonormal, equal singular values
        cluster_of = np.arange(9) % 3
        rewards = x[cluster_of]
        diag = diagnostics(rewards, cluster_of)
        # direct SVD oracle on the distinct-row matrix
        svals = np.linalg.svd(x, compute_uv=False)
        assert diag.kappa == pytest.approx(svals[0] / svals[-1])
        assert diag.kappa == pytest.approx(1.0, abs=1e-9)

    def test_constant_single_cluster_kappa_one(self):
        rewards = np.full((6, 10), 2.5)
        diag = diagnostics(rewards, np.zeros(6, dtype=int))
        assert diag.kappa == pytest.approx(1.0)
        assert diag.tau == 1.0

    def test_rank_deficient_reports_infinite_kappa(self):
        rewards = np.ones((6, 8))  # rank 1 but 2 declared clusters
        diag = diagnostics(rewards, np.arange(6) % 2)
        assert np.isinf(diag.kappa)

    def test_cluster_imbalance_tau(self):
        cluster_of = np.array([0, 0, 0, 1])
        rewards = np.vstack([np.ones(5), np.ones(5), np.ones(5),
                             2 * np.ones(5)])
        diag = diagnostics(rewards, cluster_of)
        assert diag.tau == 3.0

    def test_subset_floor_sample_orthonormal(self):
        g = np.random.default_rng(10)
        v, _ = np.linalg.qr(g.normal(size=(50, 2)))
        floor = subset_floor_sample(v, subset_size=10, n_samples=50,
                                    rng=stream(0, "s"))
        assert 0 < floor <= 50 / 10 + 1e-9


def test_debug_dump_round_trips(tmp_path):
    import json

    from blockedbandits.completion import dump_problem

    truth = incoherent_low_rank(8, 2, seed=11)
    prob = masked_problem(truth, 0.7, 0.05, seed=11)
    res = solve_block(prob, SolverConfig())
    path = tmp_path / "fixture.json"
    dump_problem(prob, res.matrix, str(path))
    doc = json.loads(path.read_text())
    assert doc["n_rows"] == 8 and len(doc["omega"]) == len(prob.omega)
    assert np.allclose(doc["estimate"], res.matrix)
