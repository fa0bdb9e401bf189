"""Equilibrium taxonomy: cluster partitions, interior/boundary verdicts,
and the quadratic Lyapunov function used for the stability checks.

Agent indices are 0-based. A state is an interior equilibrium when each
pair of agents is either coincident (within eps) or strictly farther
apart than its support bound plus eps; the boundary verdict admits pairs
sitting on their switching surfaces, which are equilibria of undetermined
stability.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import HeterogeneousKernels
from .model import KernelMatrix, SystemState, pairwise_distances

__all__ = [
    "Partition",
    "ClusterSet",
    "EquilibriumVerdict",
    "EquilibriumClass",
    "classify_state",
    "partitions_separated",
    "lyapunov_value",
    "merge_clusters",
]


@dataclass(frozen=True)
class Partition:
    """Disjoint nonempty agent-index blocks covering 0..n-1, in canonical order."""

    blocks: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        blocks = tuple(sorted((frozenset(b) for b in self.blocks), key=min))
        object.__setattr__(self, "blocks", blocks)
        seen: set[int] = set()
        for b in blocks:
            if not b:
                raise ValueError("empty block")
            if seen & b:
                raise ValueError("blocks overlap")
            seen |= b
        if seen != set(range(len(seen))):
            raise ValueError("blocks must cover a contiguous 0..n-1 index range")

    @property
    def n(self) -> int:
        return sum(len(b) for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    @staticmethod
    def from_labels(labels) -> "Partition":
        groups: dict[int, set[int]] = {}
        for idx, lab in enumerate(labels):
            groups.setdefault(int(lab), set()).add(idx)
        return Partition(tuple(frozenset(g) for g in groups.values()))


@dataclass(frozen=True)
class ClusterSet:
    """A partition with per-block weighted mean opinions and total weights."""

    partition: Partition
    centers: np.ndarray  # (k, d)
    block_weights: np.ndarray  # (k,)

    def __post_init__(self) -> None:
        c = np.array(self.centers, dtype=float)
        bw = np.array(self.block_weights, dtype=float).ravel()
        if c.ndim == 1:
            c = c[:, None]
        if c.shape[0] != len(self.partition) or bw.shape[0] != len(self.partition):
            raise ValueError("one center and one weight per block required")
        if not np.all(np.isfinite(c)) or np.any(bw <= 0.0):
            raise ValueError("centers must be finite, block weights positive")
        c.setflags(write=False)
        bw.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "block_weights", bw)

    @property
    def k(self) -> int:
        return len(self.partition)


class EquilibriumVerdict(Enum):
    INTERIOR_F = "interior_F"
    BOUNDARY_FBAR_ONLY = "boundary_Fbar_only"
    NOT_EQUILIBRIUM = "not_equilibrium"


@dataclass(frozen=True)
class EquilibriumClass:
    verdict: EquilibriumVerdict
    partition: Partition | None


class _UnionFind:
    def __init__(self, size: int):
        self.parent = list(range(size))

    def find(self, u: int) -> int:
        while self.parent[u] != u:
            self.parent[u] = self.parent[self.parent[u]]
            u = self.parent[u]
        return u

    def union(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru != rv:
            self.parent[rv] = ru


def _cluster_partition(dist: np.ndarray, eps: float) -> Partition:
    n = dist.shape[0]
    uf = _UnionFind(n)
    ii, jj = np.nonzero(np.triu(dist <= eps, k=1))
    for i, j in zip(ii, jj):
        uf.union(int(i), int(j))
    return Partition.from_labels([uf.find(i) for i in range(n)])


def classify_state(state: SystemState, kernels: KernelMatrix, eps: float) -> EquilibriumClass:
    """Classify a state against the equilibrium taxonomy.

    Blocks are connected components of the relation d_ij <= eps
    (transitive closure, so chains of nearly-coincident opinions cluster
    together). The verdict then depends on the cross-block distances
    relative to the support bounds.
    """
    if eps <= 0.0:
        raise ValueError("eps must be strictly positive")
    dist = pairwise_distances(state.opinions)
    part = _cluster_partition(dist, eps)
    labels = np.empty(state.n, dtype=int)
    for b_idx, block in enumerate(part.blocks):
        for i in block:
            labels[i] = b_idx
    q = kernels.q_matrix()
    cross = labels[:, None] != labels[None, :]
    iu = np.triu_indices(state.n, 1)
    cross_iu = cross[iu]
    d_cross = dist[iu][cross_iu]
    q_cross = q[iu][cross_iu]
    if d_cross.size == 0 or np.all(d_cross > q_cross + eps):
        return EquilibriumClass(EquilibriumVerdict.INTERIOR_F, part)
    if np.all(d_cross >= q_cross - eps) and np.any(np.abs(d_cross - q_cross) <= eps):
        return EquilibriumClass(EquilibriumVerdict.BOUNDARY_FBAR_ONLY, part)
    return EquilibriumClass(EquilibriumVerdict.NOT_EQUILIBRIUM, None)


def partitions_separated(p1: Partition, p2: Partition) -> bool:
    """True iff the partitions differ (distinct partitions label separated
    closed equilibrium components, so a converged trajectory's partition
    is unique)."""
    if p1.n != p2.n:
        raise ValueError("partitions cover different index sets")
    return p1.blocks != p2.blocks


def lyapunov_value(state: SystemState, reference: SystemState) -> float:
    """sum_i w_i |x_i - x_i*|^2; zero iff the states coincide."""
    if state.n != reference.n or state.d != reference.d:
        raise ValueError("state and reference have mismatched shapes")
    diff = state.opinions - reference.opinions
    return float((state.weights * np.einsum("ij,ij->i", diff, diff)).sum())


def merge_clusters(
    state: SystemState, kernels: KernelMatrix, eps: float
) -> tuple[ClusterSet, SystemState]:
    """Collapse each cluster into a single agent carrying the block weight.

    Requires one shared kernel across all pairs (the merged dynamics only
    makes sense when the influence functions are identical) and a state
    that classifies as an equilibrium.
    """
    common = kernels.common_spec
    if common is None:
        raise HeterogeneousKernels("cluster merging needs one shared kernel")
    cls = classify_state(state, kernels, eps)
    if cls.verdict is EquilibriumVerdict.NOT_EQUILIBRIUM:
        raise ValueError("state is not an equilibrium; nothing to merge")
    part = cls.partition
    k = len(part)
    centers = np.empty((k, state.d))
    bw = np.empty(k)
    for b_idx, block in enumerate(part.blocks):
        idx = sorted(block)
        w_blk = state.weights[idx]
        bw[b_idx] = w_blk.sum()
        centers[b_idx] = (w_blk[:, None] * state.opinions[idx]).sum(axis=0) / bw[b_idx]
    cluster_set = ClusterSet(part, centers, bw)
    reduced = SystemState(opinions=centers, weights=bw, time=state.time)
    return cluster_set, reduced
