"""Shared instance builders for the test suite."""

from __future__ import annotations

import math

import numpy as np
import pytest

from blockedbandits.env import Instance, NoiseModel


def cluster_gap_instance(seed: int, n_users: int = 60, n_items: int = 60,
                         n_clusters: int = 4, horizon: int = 60,
                         sigma: float = 0.0, n_high: int = 6,
                         budget: int | None = None) -> Instance:
    """Rank-C instance where every item separates every pair of clusters by
    at least 0.5, and a small band of high-value items forms an unambiguous
    golden set for every user."""
    g = np.random.default_rng(seed)
    base = g.uniform(0.0, 1.0, n_items)
    high = np.zeros(n_items)
    high[g.choice(n_items, n_high, replace=False)] = 2.4
    offsets = 0.75 * np.arange(n_clusters)
    factors = (base + high)[:, None] + offsets[None, :] \
        + g.uniform(-0.05, 0.05, (n_items, n_clusters))
    cluster_of = np.arange(n_users) % n_clusters
    rewards = factors[:, cluster_of].T
    if budget is None:
        budget = max(1, math.ceil(math.log2(horizon)))
    return Instance(n_users, n_items, horizon, budget, n_clusters,
                    cluster_of, rewards, NoiseModel("gaussian", sigma))


def item_cluster_instance(seed: int, n_users: int = 60, n_items: int = 60,
                          n_user_clusters: int = 2, n_item_clusters: int = 2,
                          horizon: int = 36, standout: bool = False) -> Instance:
    """Zero-noise instance whose rewards depend only on the (user cluster,
    item cluster) pair.  ``standout`` lifts item cluster 0 far above the rest
    so the exploit component has certified golden items to recommend."""
    g = np.random.default_rng(seed)
    base = g.uniform(0.0, 1.0, n_item_clusters)
    core = base[None, :] + 0.9 * np.arange(n_user_clusters)[:, None] \
        + g.uniform(-0.05, 0.05, (n_user_clusters, n_item_clusters))
    if standout:
        core[:, 0] += 4.0
    cluster_of = np.arange(n_users) % n_user_clusters
    item_cluster_of = np.arange(n_items) % n_item_clusters
    rewards = core[np.ix_(cluster_of, item_cluster_of)]
    return Instance(n_users, n_items, horizon, 1, n_user_clusters, cluster_of,
                    rewards, NoiseModel("gaussian", 0.0),
                    item_cluster_of=item_cluster_of)


def true_partition(inst: Instance) -> set[frozenset]:
    return {frozenset(np.flatnonzero(inst.cluster_of == c).tolist())
            for c in range(inst.n_clusters)}


def golden_threshold(inst: Instance) -> np.ndarray:
    """Per-user reward value of the last golden slot (ties included)."""
    n_golden = math.ceil(inst.horizon / inst.budget)
    return np.sort(inst.rewards, axis=1)[:, ::-1][:, n_golden - 1]


@pytest.fixture
def tiny_gaussian_instance() -> Instance:
    g = np.random.default_rng(11)
    factors = g.uniform(0, 5, size=(15, 3))
    cluster_of = np.arange(12) % 3
    return Instance(12, 15, 8, 2, 3, cluster_of, factors[:, cluster_of].T,
                    NoiseModel("gaussian", 0.3))
