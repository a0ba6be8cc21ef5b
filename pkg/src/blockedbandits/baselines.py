"""Reference policies: explore-then-commit, the practical phased variant,
neighborhood collaborative greedy, the clairvoyant oracle, and uniform random.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .completion import SolverConfig, estimate
from .env import ConfigurationError, Simulation

__all__ = [
    "EtcConfig",
    "PracticalConfig",
    "CollabGreedyConfig",
    "run_etc",
    "run_practical",
    "run_collab_greedy",
    "run_oracle",
    "run_random",
    "etc_sampling_prob",
    "kmeans",
    "pick_k_elbow",
]


# -- explore-then-commit -----------------------------------------------------


@dataclass(frozen=True)
class EtcConfig:
    p_override: float | None = None
    m_target: float | None = None  # expected exploration rounds; sets p = m/N
    constant: float = 1.0  # stands in for the hidden factors of the p rule
    mu_bound: float = 2.0
    solver: SolverConfig = field(default_factory=SolverConfig)


def etc_sampling_prob(n_users: int, n_items: int, horizon: int, sigma: float,
                      rank: int, reward_ceiling: float, mu_bound: float,
                      constant: float = 1.0) -> float:
    """Exploration rate balancing estimation error against exploration cost.

    (N * Pmax)^(-2/3) * (T * sigma * r * mu^(3/2) / sqrt(d2))^(2/3), floored
    at mu^2 / d2, the minimum rate for completion to see enough entries.
    """
    d2 = min(n_users, n_items)
    ceiling = max(reward_ceiling, 1e-12)
    main = (n_items * ceiling) ** (-2 / 3) * (
        horizon * sigma * rank * mu_bound ** 1.5 / math.sqrt(d2)) ** (2 / 3)
    return constant * max(main, mu_bound ** 2 / d2)


def run_etc(sim: Simulation, cfg: EtcConfig, rng: np.random.Generator) -> None:
    """One Bernoulli exploration block, one completion call, then commit."""
    inst = sim.instance
    horizon = inst.horizon
    sigma = inst.noise.sigma if inst.noise.kind == "gaussian" else 1.0
    if cfg.p_override is not None:
        p = cfg.p_override
    elif cfg.m_target is not None:
        p = cfg.m_target / inst.n_items
    else:
        p = etc_sampling_prob(inst.n_users, inst.n_items, horizon, sigma,
                              inst.n_clusters, inst.reward_ceiling,
                              cfg.mu_bound, cfg.constant)
    if not (0 < p <= 1):
        warnings.warn(f"exploration rate {p:.3g} clamped into (0, 1]")
        p = min(max(p, 1e-6), 1.0)

    picks = rng.random((inst.n_users, inst.n_items)) < p
    per_user = [np.flatnonzero(picks[u]) for u in range(inst.n_users)]
    m = min(max((len(q) for q in per_user), default=0), horizon)

    rows: list[int] = []
    cols: list[int] = []
    values: list[float] = []
    consumed: list[int] = []
    for user in range(inst.n_users):
        queue = per_user[user][: m]
        in_omega = set(int(j) for j in per_user[user])
        for item in queue:
            value, event_id = sim.recommend(user, int(item), "explore",
                                            consumable=True)
            rows.append(user)
            cols.append(int(item))
            values.append(value)
            consumed.append(event_id)
        for _ in range(m - len(queue)):
            free = sim.unblocked_in(user, np.arange(inst.n_items))
            outside = free[[int(j) not in in_omega for j in free]]
            pick = int(rng.choice(outside)) if outside.size else int(rng.choice(free))
            sim.recommend(user, pick, "filler")

    if values:
        omega = np.stack([rows, cols], axis=1)
        res = estimate(inst.n_users, inst.n_items, omega, np.asarray(values),
                       sigma, inst.n_clusters, cfg.solver, rng)
        call_id = sim.new_estimate_call()
        sim.mark_consumed(consumed, call_id)
        scores = res.matrix
    else:
        scores = np.zeros((inst.n_users, inst.n_items))

    order = np.argsort(-scores, axis=1, kind="stable")
    for user in range(inst.n_users):
        pointer = 0
        for _ in range(m, horizon):
            counts = sim.ledger.counts_row(user)
            while counts[order[user, pointer]] >= inst.budget:
                pointer += 1
            sim.recommend(user, int(order[user, pointer]), "commit")


# -- practical phased variant (random exploration + k-means refinement) ------


@dataclass(frozen=True)
class PracticalConfig:
    n_clusters: int | None = None  # upper bound for k-means; instance C if None
    sigma: float | None = None  # noise scale; instance-derived if None
    phase_length_base: int = 10  # phase ell lasts base + slope * ell rounds
    phase_length_slope: int = 2
    gap_divisor: float = 8.0  # gap at phase ell is ceiling / (divisor * 2^ell)
    kmeans_restarts: int = 5
    kmeans_iters: int = 100
    elbow_threshold: float = 0.10
    centroid_smoothing: bool = True  # prune on cluster-centroid rows
    solver: SolverConfig = field(default_factory=SolverConfig)


def kmeans(points: np.ndarray, k: int, rng: np.random.Generator,
           restarts: int = 5, iters: int = 100) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with farthest-point initialisation.

    Returns (labels, sse); the within-cluster SSE is non-increasing across
    Lloyd iterations and the best of ``restarts`` runs is kept.
    """
    n = points.shape[0]
    k = min(k, n)
    best_labels = np.zeros(n, dtype=np.int64)
    best_sse = np.inf
    for _ in range(restarts):
        centers = [points[rng.integers(n)]]
        for _ in range(k - 1):
            d2 = np.min(
                [((points - c) ** 2).sum(axis=1) for c in centers], axis=0)
            centers.append(points[int(np.argmax(d2))])
        centers = np.stack(centers)
        labels = np.zeros(n, dtype=np.int64)
        prev_sse = np.inf
        for _ in range(iters):
            d2 = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            sse = float(d2[np.arange(n), labels].sum())
            if sse > prev_sse + 1e-9:
                raise AssertionError("k-means objective increased")
            for j in range(k):
                sel = labels == j
                if sel.any():
                    centers[j] = points[sel].mean(axis=0)
            if prev_sse - sse <= 1e-12 * max(1.0, prev_sse):
                prev_sse = sse
                break
            prev_sse = sse
        if prev_sse < best_sse:
            best_sse = prev_sse
            best_labels = labels
    return best_labels, best_sse


def pick_k_elbow(points: np.ndarray, k_max: int, rng: np.random.Generator,
                 restarts: int = 5, iters: int = 100,
                 threshold: float = 0.10) -> tuple[int, np.ndarray]:
    """Pick the cluster count by the elbow of the SSE curve.

    Stops at the first k whose SSE gain over k-1, measured relative to the
    total SSE at k=1, falls below ``threshold`` and returns k-1; relative to
    k=1 rather than k-1 so near-perfect clusterings are not split further on
    noise.
    """
    k_max = max(1, min(k_max, points.shape[0]))
    sses: list[float] = []
    labelings: list[np.ndarray] = []
    for k in range(1, k_max + 1):
        labels, sse = kmeans(points, k, rng, restarts, iters)
        sses.append(sse)
        labelings.append(labels)
        if k >= 2:
            total = max(sses[0], 1e-300)
            improvement = (sses[k - 2] - sse) / total
            if improvement < threshold:
                return k - 1, labelings[k - 2]
    return k_max, labelings[-1]


@dataclass
class PracticalPhase:
    level: int
    groups: list[tuple[np.ndarray, np.ndarray]]  # (users, active) after refining


def run_practical(sim: Simulation, cfg: PracticalConfig,
                  rng: np.random.Generator) -> list[PracticalPhase]:
    """Phases of random in-group exploration, completion, k-means refinement.

    Each phase collects one random unblocked recommendation per user per
    round within the group's active set, solves the nuclear-norm program with
    lam = 10 * sigma * sqrt(m_ell / M), clusters users by their estimated
    rows (elbow-selected k <= C), and keeps per cluster the items within the
    phase gap of some member's rank-T estimate.

    Observations accumulate across phases (every pair is observed at most
    once under B = 1, and reusing them sharpens later estimates), and with
    ``centroid_smoothing`` the pruning rule reads each user's row off its
    cluster centroid, which is the row estimate the clustering step itself
    asserts.
    """
    inst = sim.instance
    horizon = inst.horizon
    n_clusters = cfg.n_clusters or inst.n_clusters
    sigma = cfg.sigma
    if sigma is None:
        sigma = inst.noise.sigma if inst.noise.kind == "gaussian" else 1.0
    all_items = np.arange(inst.n_items)
    groups: list[tuple[np.ndarray, np.ndarray]] = [
        (np.arange(inst.n_users), all_items)]
    report: list[PracticalPhase] = []
    t = 0
    level = 1
    observations: list[tuple[int, int, float, int]] = []
    while t < horizon:
        m_ell = cfg.phase_length_base + cfg.phase_length_slope * level
        nu_ell = inst.reward_ceiling / (cfg.gap_divisor * 2 ** level)
        lam = 10.0 * sigma * math.sqrt(m_ell / inst.n_users)
        rounds = min(m_ell, horizon - t)
        for _ in range(rounds):
            for users, active in groups:
                for user in users:
                    cand = sim.unblocked_in(user, active)
                    if not cand.size:
                        cand = sim.unblocked_in(user, all_items)
                    item = int(rng.choice(cand))
                    value, event_id = sim.recommend(user, item, "explore",
                                                    consumable=True)
                    observations.append((user, item, value, event_id))
        t += rounds
        if t >= horizon:
            break

        solver = SolverConfig(tol=cfg.solver.tol, max_iters=cfg.solver.max_iters,
                              step=cfg.solver.step, lam_override=lam)
        next_groups: list[tuple[np.ndarray, np.ndarray]] = []
        for users, active in groups:
            local_u = {int(u): i for i, u in enumerate(users)}
            local_j = {int(j): i for i, j in enumerate(active)}
            entries = [(local_u[u], local_j[j], v, eid)
                       for u, j, v, eid in observations
                       if u in local_u and j in local_j]
            if not entries:
                next_groups.append((users, active))
                continue
            omega = np.array([(r, c) for r, c, _, _ in entries], dtype=np.int64)
            vals = np.array([v for _, _, v, _ in entries])
            res = estimate(len(users), len(active), omega, vals, sigma,
                           n_clusters, solver, rng)
            call_id = sim.new_estimate_call()
            sim.mark_consumed([eid for _, _, _, eid in entries], call_id)
            rows_est = res.matrix
            k, labels = pick_k_elbow(rows_est, n_clusters, rng,
                                     cfg.kmeans_restarts, cfg.kmeans_iters,
                                     cfg.elbow_threshold)
            if cfg.centroid_smoothing:
                for c in range(k):
                    sel = labels == c
                    if sel.any():
                        rows_est[sel] = rows_est[sel].mean(axis=0)
            order = np.sort(rows_est, axis=1)[:, ::-1]
            rank_idx = min(horizon, active.size) - 1
            cutoff = order[:, rank_idx]  # each user's rank-T estimated value
            keep_per_user = rows_est >= (cutoff[:, None] - nu_ell)
            for c in range(k):
                sel = np.flatnonzero(labels == c)
                if not sel.size:
                    continue
                keep = np.flatnonzero(keep_per_user[sel].any(axis=0))
                next_groups.append((users[sel], active[keep]))
        groups = next_groups
        report.append(PracticalPhase(level=level, groups=list(groups)))
        level += 1

    # horizon reached mid-phase is fine; any shortfall is filled uniformly
    for user in range(inst.n_users):
        while sim.round_of(user) < horizon:
            cand = sim.unblocked_in(user, all_items)
            sim.recommend(user, int(rng.choice(cand)), "fill")
    return report


# -- neighborhood collaborative greedy ---------------------------------------


@dataclass(frozen=True)
class CollabGreedyConfig:
    theta: float = 0.5  # random-exploration probability decays as t^-theta
    alpha: float = 0.5  # joint-exploration probability decays as t^-alpha
    agreement: float = 0.5  # co-rating agreement defining the neighborhood


def explore_probabilities(t: int, cfg: CollabGreedyConfig) -> tuple[float, float]:
    return t ** (-cfg.theta), t ** (-cfg.alpha)


def run_collab_greedy(sim: Simulation, cfg: CollabGreedyConfig,
                      rng: np.random.Generator) -> None:
    """Epsilon-greedy with a shared joint-exploration item sequence.

    Only meaningful for +/-1 sign feedback: like-rates are estimated within a
    neighborhood of users whose co-rated items agree at least half the time.
    Reconstructed baseline; exact neighborhood details follow common practice
    rather than any single reference implementation.
    """
    inst = sim.instance
    if inst.noise.kind != "sign":
        raise ConfigurationError("collaborative greedy needs sign feedback")
    n_u, n_i = inst.n_users, inst.n_items
    horizon = inst.horizon
    rating_sum = np.zeros((n_u, n_i))
    rated = np.zeros((n_u, n_i), dtype=bool)
    joint_sequence = rng.permutation(n_i)
    joint_ptr = 0
    all_items = np.arange(n_i)

    def note(user: int, item: int, value: float) -> None:
        rating_sum[user, item] += value
        rated[user, item] = True

    for t in range(1, horizon + 1):
        p_rand, p_joint = explore_probabilities(t, cfg)
        joint_item = int(joint_sequence[joint_ptr % n_i])
        joint_ptr += 1
        # neighborhood like-rates from everything rated so far this round
        signs = np.sign(rating_sum)
        has = rated & (signs != 0)
        co = has.astype(np.float64) @ has.T.astype(np.float64)
        agree = (co + signs @ signs.T) / 2.0
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(co > 0, agree / np.maximum(co, 1), 0.0)
        np.fill_diagonal(frac, 1.0)
        neighbors = frac >= cfg.agreement
        likes = neighbors.astype(np.float64) @ ((signs > 0) & rated)
        pulls = neighbors.astype(np.float64) @ rated
        with np.errstate(invalid="ignore", divide="ignore"):
            like_rate = np.where(pulls > 0, likes / np.maximum(pulls, 1),
                                 -np.inf)
        for user in range(n_u):
            draw = rng.random()
            free = sim.unblocked_in(user, all_items)
            if draw < p_rand:
                item = int(rng.choice(free))
            elif draw < p_rand + p_joint:
                item = joint_item if not sim.ledger.is_blocked(user, joint_item) \
                    else int(rng.choice(free))
            else:
                scores = like_rate[user, free]
                item = int(free[int(np.argmax(scores))]) \
                    if np.isfinite(scores).any() else int(rng.choice(free))
            value, _ = sim.recommend(user, item, "greedy")
            note(user, item, value)


# -- oracle and uniform random ------------------------------------------------


def run_oracle(sim: Simulation) -> None:
    """Clairvoyant schedule: each user's top ceil(T/B) mean-reward items,
    budget times each (the last one for the remainder).  Zero regret by
    construction."""
    inst = sim.instance
    from .env import mean_reward_matrix

    means = mean_reward_matrix(inst)
    order = np.argsort(-means, axis=1, kind="stable")
    for user in range(inst.n_users):
        for t in range(inst.horizon):
            item = int(order[user, t // inst.budget])
            sim.recommend(user, item, "oracle")


def run_random(sim: Simulation, rng: np.random.Generator) -> None:
    inst = sim.instance
    all_items = np.arange(inst.n_items)
    for _ in range(inst.horizon):
        for user in range(inst.n_users):
            free = sim.unblocked_in(user, all_items)
            sim.recommend(user, int(rng.choice(free)), "random")
