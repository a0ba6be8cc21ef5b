"""Phased collaborative bandit under a per-pair recommendation budget.

The policy runs in phases of geometrically increasing accuracy.  Each phase,
per user group: (1) an exploit component recommends jointly-safe high-reward
items ("golden" items, the ones an oracle would spend budget on) whenever the
current estimate certifies a large gap; (2) an explore component samples a
Bernoulli pattern of user-item pairs, recommends them, and runs low-rank
completion to halve the estimate error; (3) users are re-partitioned by the
connected components of a similarity graph on estimated rows, and each part
keeps only items close to its users' remaining golden ranks.  Groups evolve
asynchronously; two count matrices guarantee no pair ever exceeds budget B
and no observation is consumed by more than one estimation call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .completion import SolverConfig, estimate
from .env import Simulation

__all__ = [
    "PhasedConfig",
    "PhaseRecord",
    "RunReport",
    "sampling_prob",
    "exploration_floor",
    "golden_rank",
    "similarity_components",
    "run_phased",
]

# Gap-schedule constants: an estimate accurate to eps certifies golden items
# once the top-to-target gap exceeds EXPLOIT_GAP_FACTOR * C * delta, where
# delta = eps / (ACCURACY_TO_GAP * C); similarity edges require agreement
# within EDGE_FACTOR * delta on every active item.
ACCURACY_TO_GAP = 88
EXPLOIT_GAP_FACTOR = 64
EDGE_FACTOR = 2


@dataclass(frozen=True)
class PhasedConfig:
    """Knobs the policy is assumed to know about the instance."""

    n_clusters: int
    sigma: float
    reward_ceiling: float  # largest |expected reward|, sets the phase-1 scale
    mu_bound: float = 2.0  # incoherence bound fed to the sampling rule
    eps1: float | None = None  # phase-1 accuracy; defaults to reward_ceiling
    sampling_c: float = 1.0  # constant in the sampling-probability rule
    floor_c: float = 1.5  # constant in the noiseless sampling floor
    solver: SolverConfig = field(default_factory=SolverConfig)
    max_phases: int = 64

    def initial_accuracy(self) -> float:
        return self.reward_ceiling if self.eps1 is None else self.eps1


@dataclass
class PhaseRecord:
    level: int
    users: np.ndarray
    active_before: np.ndarray
    active_after_exploit: np.ndarray
    components: list[np.ndarray] = field(default_factory=list)
    explored: bool = False
    sampling_p: float = 0.0


@dataclass
class RunReport:
    records: list[PhaseRecord] = field(default_factory=list)

    def components_at_level(self, level: int) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for rec in self.records:
            if rec.level == level:
                out.extend(rec.components)
        return out


def sampling_prob(n_users: int, n_items: int, delta: float, sigma: float,
                  mu_bound: float, c: float = 1.0) -> float:
    """Bernoulli rate that drives the completion error below ``delta``.

    c * sigma^2 * mu^3 * log(d1) / (delta^2 * d2) with d1/d2 the larger and
    smaller of the two dimensions.  Unclamped; the caller routes p >= 1 to
    the terminal branch.
    """
    d1 = max(n_users, n_items)
    d2 = min(n_users, n_items)
    if delta <= 0 or d2 == 0:
        return float("inf")
    return c * (sigma ** 2) * (mu_bound ** 3) * math.log(d1) / (delta ** 2 * d2)


def exploration_floor(n_users: int, n_items: int, mu_bound: float, rank: int,
                      floor_c: float = 1.5) -> float:
    """Minimum sampling rate for completion to identify a rank-``rank`` block.

    Even noiseless completion needs on the order of mu * r * log(d1) observed
    entries per row/column; below this the accuracy-driven rate (which
    vanishes as sigma -> 0) would starve the solver.
    """
    d1 = max(n_users, n_items)
    d2 = min(n_users, n_items)
    if d2 == 0:
        return float("inf")
    return floor_c * mu_bound * rank * math.log(d1) / d2


def golden_rank(horizon: int, budget: int, exploit_rounds: int) -> int:
    """Index (1-based) of the last golden slot still unclaimed."""
    return math.ceil(horizon / budget) - exploit_rounds // budget


def similarity_components(est_rows: np.ndarray, threshold: float) -> list[np.ndarray]:
    """Partition row indices into components of the agreement graph.

    Two rows are adjacent when they differ by at most ``threshold`` on every
    column.  Returns local index arrays, deterministic order.
    """
    g = est_rows.shape[0]
    if g == 1:
        return [np.array([0])]
    diff = np.abs(est_rows[:, None, :] - est_rows[None, :, :]).max(axis=2)
    adj = diff <= threshold
    n_comp, labels = connected_components(csr_matrix(adj), directed=False)
    return [np.flatnonzero(labels == k) for k in range(n_comp)]


@dataclass
class _Task:
    level: int
    users: np.ndarray
    active: np.ndarray
    t0: int
    t_exploit: int
    eps: float


def _pick_filler(sim: Simulation, user: int, active: np.ndarray,
                 exclude: set[int], rng: np.random.Generator) -> int:
    """Unblocked item outside ``exclude``, preferring the active set."""
    cand = sim.unblocked_in(user, active)
    cand = cand[[c not in exclude for c in cand]] if exclude else cand
    if cand.size:
        return int(rng.choice(cand))
    return sim.any_unblocked(user, active)


def _explore(sim: Simulation, users: np.ndarray, active: np.ndarray, t0: int,
             p: float, cfg: PhasedConfig, rng: np.random.Generator,
             ) -> tuple[np.ndarray | None, int]:
    """Explore component: Bernoulli sampling, budget-aware recommendation,
    completion.  Returns the estimated sub-matrix (or None) and the new round.
    """
    inst = sim.instance
    horizon = inst.horizon
    n_u, n_i = len(users), len(active)
    picks = rng.random((n_u, n_i)) < p
    per_user = [np.flatnonzero(picks[lu]) for lu in range(n_u)]
    m = max((len(q) for q in per_user), default=0)
    m = min(m, horizon - t0)
    if m == 0:
        return None, t0

    omega_rows: list[int] = []
    omega_cols: list[int] = []
    values: list[float] = []
    consumed_ids: list[int] = []
    for lu, user in enumerate(users):
        queue = per_user[lu]
        in_omega = {int(active[lj]) for lj in queue}
        used = 0
        for lj in queue[: m]:
            item = int(active[lj])
            if not sim.ledger.is_blocked(user, item):
                value, event_id = sim.recommend(user, item, "explore",
                                                consumable=True)
                omega_rows.append(lu)
                omega_cols.append(int(lj))
                values.append(value)
                consumed_ids.append(event_id)
            else:
                if sim.ledger.has_reusable(user, item):
                    value, event_id = sim.reuse_observation(user, item)
                    omega_rows.append(lu)
                    omega_cols.append(int(lj))
                    values.append(value)
                    consumed_ids.append(event_id)
                # else: the pair is dropped from the completion problem
                filler = _pick_filler(sim, user, active, in_omega, rng)
                sim.recommend(user, filler, "filler")
            used += 1
        for _ in range(m - used):
            filler = _pick_filler(sim, user, active, in_omega, rng)
            sim.recommend(user, filler, "filler")

    t_new = t0 + m
    if not values:
        return None, t_new
    omega = np.stack([omega_rows, omega_cols], axis=1)
    result = estimate(n_u, n_i, omega, np.asarray(values), cfg.sigma,
                      cfg.n_clusters, cfg.solver, rng)
    call_id = sim.new_estimate_call()
    sim.mark_consumed(consumed_ids, call_id)
    return result.matrix, t_new


def _exploit(sim: Simulation, users: np.ndarray, active: np.ndarray, t0: int,
             t_exploit: int, p_tilde: np.ndarray, delta_l: float,
             delta_next: float, cfg: PhasedConfig,
             ) -> tuple[np.ndarray, int, int, list[int]]:
    """Exploit component: recommend certified golden items B times each.

    While some user's estimated gap between its best active item and the item
    at the remaining-golden rank exceeds the certification threshold, the
    union of items within EDGE_FACTOR * delta_next of each user's top is
    recommended B times to every group user (blocked pairs fall back to the
    lowest-index unblocked active item), then pruned from the active set.
    """
    inst = sim.instance
    horizon, budget = inst.horizon, inst.budget
    active = np.array(active, copy=True)
    chosen: list[int] = []
    threshold = EXPLOIT_GAP_FACTOR * cfg.n_clusters * delta_l
    while t0 < horizon and active.size:
        rank = golden_rank(horizon, budget, t_exploit)
        if rank <= 0:
            break
        est = p_tilde[np.ix_(users, active)]
        order = np.sort(est, axis=1)[:, ::-1]
        idx = min(rank, active.size) - 1
        gaps = order[:, 0] - order[:, idx]
        if gaps.max() < threshold:
            break
        tops = order[:, 0]
        near_top = est >= tops[:, None] - EDGE_FACTOR * delta_next
        s_items = active[np.flatnonzero(near_top.any(axis=0))]
        n_rounds = min(len(s_items) * budget, horizon - t0)
        for step in range(1, n_rounds + 1):
            item = int(s_items[math.ceil(step / budget) - 1])
            for user in users:
                if not sim.ledger.is_blocked(user, item):
                    sim.recommend(user, item, "exploit")
                else:
                    sub = sim.any_unblocked(user, active)
                    sim.recommend(user, sub, "filler")
        t0 += n_rounds
        t_exploit += n_rounds
        chosen.extend(int(j) for j in s_items)
        keep = ~np.isin(active, s_items)
        active = active[keep]
    return active, t0, t_exploit, chosen


def _fill_until_end(sim: Simulation, users: np.ndarray, active: np.ndarray,
                    t0: int, rng: np.random.Generator) -> None:
    horizon = sim.instance.horizon
    for user in users:
        for _ in range(t0, horizon):
            cand = sim.unblocked_in(user, active)
            item = int(rng.choice(cand)) if cand.size else sim.any_unblocked(user, active)
            sim.recommend(user, item, "fill")


def run_phased(sim: Simulation, cfg: PhasedConfig,
               rng: np.random.Generator) -> RunReport:
    """Run the full phased policy on ``sim`` until every user has T rounds."""
    inst = sim.instance
    horizon = inst.horizon
    p_tilde = np.zeros((inst.n_users, inst.n_items))
    report = RunReport()
    tasks = [_Task(level=1, users=np.arange(inst.n_users),
                   active=np.arange(inst.n_items), t0=0, t_exploit=0,
                   eps=cfg.initial_accuracy())]
    while tasks:
        task = tasks.pop(0)
        if task.t0 >= horizon:
            continue
        eps_next = task.eps / 2
        c_gap = ACCURACY_TO_GAP * cfg.n_clusters
        delta_l = cfg.reward_ceiling if task.level == 1 else task.eps / c_gap
        delta_next = eps_next / c_gap
        record = PhaseRecord(level=task.level, users=task.users,
                             active_before=task.active,
                             active_after_exploit=task.active)
        report.records.append(record)

        active, t0, t_exploit, _ = _exploit(
            sim, task.users, task.active, task.t0, task.t_exploit,
            p_tilde, delta_l, delta_next, cfg)
        record.active_after_exploit = active
        if t0 >= horizon:
            continue
        if active.size == 0:
            _fill_until_end(sim, task.users, np.arange(inst.n_items), t0, rng)
            continue

        p_raw = sampling_prob(len(task.users), len(active), delta_next,
                              cfg.sigma, cfg.mu_bound, cfg.sampling_c)
        p = max(p_raw, exploration_floor(len(task.users), len(active),
                                         cfg.mu_bound, cfg.n_clusters,
                                         cfg.floor_c))
        record.sampling_p = p
        deep = task.level >= cfg.max_phases
        if active.size >= horizon ** (1 / 3) and p < 1 and not deep:
            block, t0 = _explore(sim, task.users, active, t0, p, cfg, rng)
            record.explored = block is not None
            if block is not None:
                p_tilde[np.ix_(task.users, active)] = block
            if t0 >= horizon:
                continue
            rank = golden_rank(horizon, inst.budget, t_exploit)
            est = p_tilde[np.ix_(task.users, active)]
            order = np.sort(est, axis=1)[:, ::-1]
            idx = max(min(rank, active.size), 1) - 1
            cutoffs = order[:, idx]
            good = est >= (cutoffs[:, None] - EDGE_FACTOR * delta_next)
            comps = similarity_components(est, EDGE_FACTOR * delta_next)
            for comp in comps:
                comp_users = task.users[comp]
                record.components.append(comp_users)
                joint = active[np.flatnonzero(good[comp].any(axis=0))]
                tasks.append(_Task(level=task.level + 1, users=comp_users,
                                   active=joint, t0=t0, t_exploit=t_exploit,
                                   eps=eps_next))
        else:
            _fill_until_end(sim, task.users, active, t0, rng)
    return report


def default_config(sim: Simulation, **overrides) -> PhasedConfig:
    """Config with instance-derived defaults (rank, noise scale, reward scale)."""
    inst = sim.instance
    sigma = inst.noise.sigma if inst.noise.kind == "gaussian" else 1.0
    base = PhasedConfig(n_clusters=inst.n_clusters, sigma=sigma,
                        reward_ceiling=inst.reward_ceiling)
    return replace(base, **overrides) if overrides else base
