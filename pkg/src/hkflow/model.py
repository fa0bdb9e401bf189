"""Kernels, system states, graph-restricted vector fields, and scalar monitors.

The dynamics couples n agents with opinions in R^d: agent i moves with
velocity sum_j xi_ij(|x_j - x_i|) w_j (x_j - x_i), where each interaction
kernel xi_ij is nonnegative, symmetric in (i, j), and vanishes at distances
beyond its support bound q_ij. Because kernels may jump to zero at q_ij the
full field is discontinuous; smooth graph-restricted fields (one per edge
set) are the building blocks the integrator switches between.

Everything in this module is a pure function over immutable value objects.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import AmbiguousPairLimit

__all__ = [
    "KernelFamily",
    "KernelSpec",
    "SystemState",
    "KernelMatrix",
    "InteractionGraph",
    "MonitorSample",
    "eval_kernel",
    "pairwise_distances",
    "vector_field",
    "graph_field",
    "active_graph_set",
    "monitors",
]


class KernelFamily(str, Enum):
    INDICATOR = "indicator"
    TENT = "tent"
    SMOOTH_BUMP = "smooth_bump"
    PIECEWISE_POLY = "piecewise_poly"


@dataclass(frozen=True)
class KernelSpec:
    """One interaction kernel: a nonnegative weight on opinion distance.

    The kernel is strictly positive on (0, q) and zero at every r >= q.
    All families except the indicator are C1 on [0, q) with finite left
    limits of value and slope at q. `coeffs` is used only by the
    piecewise-polynomial family and holds coefficients of a polynomial in
    u = r/q, lowest order first.
    """

    family: KernelFamily
    q: float
    coeffs: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "coeffs", tuple(float(c) for c in self.coeffs))
        if not np.isfinite(self.q) or self.q <= 0.0:
            raise ValueError(f"support bound q must be finite and positive, got {self.q}")
        if self.family is KernelFamily.PIECEWISE_POLY:
            if not self.coeffs:
                raise ValueError("piecewise-polynomial kernel needs coefficients")
            u = np.linspace(0.0, 1.0, 257)[1:-1]
            vals = npoly.polyval(u, self.coeffs)
            if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
                raise ValueError("polynomial kernel must be strictly positive on (0, q)")
        elif self.coeffs:
            raise ValueError(f"{self.family.value} kernel takes no coefficients")

    def eval(self, r):
        """Kernel value with the compact-support cutoff applied (zero at r >= q)."""
        r_arr = np.asarray(r, dtype=float)
        inside = r_arr < self.q
        out = np.where(inside, self._formula(r_arr), 0.0)
        return float(out) if np.isscalar(r) or out.ndim == 0 else out

    def eval_extended(self, r):
        """The nonnegative extension past the support bound.

        Agrees with `eval` on [0, q), takes the left-limit value at q, and
        is clamped at zero beyond; graph-restricted fields use it so they
        stay well defined (and keep the weighted-sum identities) across
        the switching surface. Kernels with a nonzero slope into a zero
        value at q admit no globally C1 nonnegative extension, so past q
        the clamp trades smoothness for sign; fields are only ever
        consumed on the closures of their smooth regions, where the two
        notions coincide.
        """
        r_arr = np.asarray(r, dtype=float)
        if self.family is KernelFamily.SMOOTH_BUMP:
            out = np.where(r_arr < self.q, self._formula(r_arr), 0.0)
        else:
            out = np.maximum(self._formula(r_arr), 0.0)
        return float(out) if np.isscalar(r) or out.ndim == 0 else out

    def _formula(self, r: np.ndarray) -> np.ndarray:
        u = r / self.q
        if self.family is KernelFamily.INDICATOR:
            return np.ones_like(u)
        if self.family is KernelFamily.TENT:
            return 1.0 - u
        if self.family is KernelFamily.SMOOTH_BUMP:
            return (1.0 - u * u) ** 2
        return npoly.polyval(u, self.coeffs)

    @property
    def value_at_q(self) -> float:
        """Left limit of the kernel at its support bound (the field jump size)."""
        return float(self.eval_extended(self.q))

    @property
    def is_continuous_at_q(self) -> bool:
        return self.value_at_q == 0.0


def eval_kernel(spec: KernelSpec, r) -> float:
    """Evaluate a kernel at distance r. Total: indicator is 1 iff r < q (strict)."""
    return spec.eval(r)


@dataclass(frozen=True)
class SystemState:
    """Opinions of n agents in R^d plus their positive weights, at one time.

    Arrays are copied on construction and frozen; states are safe to share
    across threads. A 1-D `opinions` input is treated as n scalar opinions.
    """

    opinions: np.ndarray
    weights: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        x = np.array(self.opinions, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ValueError(f"opinions must be an (n, d) array, got shape {x.shape}")
        w = np.array(self.weights, dtype=float).ravel()
        if w.shape[0] != x.shape[0]:
            raise ValueError(f"{w.shape[0]} weights for {x.shape[0]} agents")
        if not np.all(np.isfinite(x)):
            raise ValueError("opinions must be finite")
        if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
            raise ValueError("weights must be finite and strictly positive")
        if not np.isfinite(self.time) or self.time < 0.0:
            raise ValueError(f"time must be a nonnegative real, got {self.time}")
        x.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "opinions", x)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "time", float(self.time))

    @property
    def n(self) -> int:
        return self.opinions.shape[0]

    @property
    def d(self) -> int:
        return self.opinions.shape[1]

    def replace(self, opinions=None, time=None) -> "SystemState":
        return SystemState(
            self.opinions if opinions is None else opinions,
            self.weights,
            self.time if time is None else time,
        )


class KernelMatrix:
    """Symmetric n-by-n table of kernels; the diagonal is unused.

    Entry (i, j) and (j, i) are the same object by construction. Most
    systems are homogeneous (one shared kernel); that case avoids storing
    a table at all and keeps field evaluation fully vectorized.
    """

    __slots__ = ("n", "_common", "_table", "_groups", "_qmat")

    def __init__(self, n: int, entries: Mapping[tuple[int, int], KernelSpec]):
        if n < 1:
            raise ValueError("need at least one agent")
        self.n = int(n)
        table: dict[tuple[int, int], KernelSpec] = {}
        for (i, j), spec in entries.items():
            if i == j:
                raise ValueError(f"diagonal entry ({i},{j}) is unused and must not be set")
            if not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"pair ({i},{j}) out of range for n={n}")
            key = (min(i, j), max(i, j))
            if key in table and table[key] is not spec and table[key] != spec:
                raise ValueError(f"conflicting kernels for pair {key}")
            table[key] = spec
        expected = n * (n - 1) // 2
        if len(table) != expected:
            raise ValueError(f"kernel table covers {len(table)} of {expected} pairs")
        specs = set(table.values())
        self._common = specs.pop() if len(specs) == 1 else None
        self._table = None if self._common is not None else table
        self._groups = None
        self._qmat = None

    @classmethod
    def homogeneous(cls, n: int, spec: KernelSpec) -> "KernelMatrix":
        obj = cls.__new__(cls)
        obj.n = int(n)
        obj._common = spec
        obj._table = None
        obj._groups = None
        obj._qmat = None
        if obj.n < 1:
            raise ValueError("need at least one agent")
        return obj

    @property
    def is_homogeneous(self) -> bool:
        return self._common is not None

    @property
    def common_spec(self) -> KernelSpec | None:
        return self._common

    def spec(self, i: int, j: int) -> KernelSpec:
        if i == j:
            raise ValueError("diagonal kernel entries are unused")
        if self._common is not None:
            return self._common
        return self._table[(min(i, j), max(i, j))]

    def pairs(self) -> Iterable[tuple[int, int]]:
        return itertools.combinations(range(self.n), 2)

    def q_matrix(self) -> np.ndarray:
        """Support bounds as an (n, n) array with +inf on the diagonal."""
        if self._qmat is None:
            if self._common is not None:
                q = np.full((self.n, self.n), self._common.q)
            else:
                q = np.empty((self.n, self.n))
                for (i, j), spec in self._table.items():
                    q[i, j] = q[j, i] = spec.q
            np.fill_diagonal(q, np.inf)
            q.setflags(write=False)
            self._qmat = q
        return self._qmat

    def _spec_groups(self) -> list[tuple[KernelSpec, np.ndarray]]:
        if self._groups is None:
            groups: dict[KernelSpec, np.ndarray] = {}
            for (i, j), spec in self._table.items():
                mask = groups.setdefault(spec, np.zeros((self.n, self.n), dtype=bool))
                mask[i, j] = mask[j, i] = True
            self._groups = list(groups.items())
        return self._groups

    def values(self, distances: np.ndarray) -> np.ndarray:
        """Elementwise xi_ij(d_ij) with a zero diagonal."""
        if self._common is not None:
            out = np.asarray(self._common.eval(distances), dtype=float).copy()
        else:
            out = np.zeros_like(distances)
            for spec, mask in self._spec_groups():
                out[mask] = spec.eval(distances[mask])
        np.fill_diagonal(out, 0.0)
        return out

    def values_extended(self, distances: np.ndarray) -> np.ndarray:
        """Elementwise C1 extension values with a zero diagonal."""
        if self._common is not None:
            out = np.asarray(self._common.eval_extended(distances), dtype=float).copy()
        else:
            out = np.zeros_like(distances)
            for spec, mask in self._spec_groups():
                out[mask] = spec.eval_extended(distances[mask])
        np.fill_diagonal(out, 0.0)
        return out


def _normalize_edges(edges: Iterable[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    out = set()
    for i, j in edges:
        if i == j:
            raise ValueError(f"self-loop ({i},{j}) not allowed")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


@dataclass(frozen=True)
class InteractionGraph:
    """An undirected edge set on agents; selects one smooth field f^G."""

    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        object.__setattr__(self, "edges", _normalize_edges(self.edges))

    @staticmethod
    def complete(n: int) -> "InteractionGraph":
        return InteractionGraph(frozenset(itertools.combinations(range(n), 2)))

    @staticmethod
    def empty() -> "InteractionGraph":
        return InteractionGraph(frozenset())

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edges

    def adjacency(self, n: int) -> np.ndarray:
        adj = np.zeros((n, n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = adj[j, i] = True
        return adj


@dataclass(frozen=True)
class MonitorSample:
    """Scalar diagnostics of one state: the conserved mean and dissipative moments."""

    time: float
    weighted_mean: tuple[float, ...]
    m2: float
    dissipative: tuple[tuple[int, tuple[float, ...], float], ...]


def pairwise_distances(x: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix of the rows of x, zero diagonal."""
    g = x @ x.T
    sq = np.einsum("ij,ij->i", x, x)
    d2 = sq[:, None] + sq[None, :] - 2.0 * g
    np.maximum(d2, 0.0, out=d2)
    d = np.sqrt(d2)
    np.fill_diagonal(d, 0.0)
    return d


def vector_field(state: SystemState, kernels: KernelMatrix) -> np.ndarray:
    """The full (discontinuous) right-hand side f(x), one row per agent."""
    x, w = state.opinions, state.weights
    if state.n == 1:
        return np.zeros_like(x)
    dist = pairwise_distances(x)
    coup = kernels.values(dist) * w[None, :]
    return coup @ x - coup.sum(axis=1)[:, None] * x


def graph_field(state: SystemState, kernels: KernelMatrix, graph: InteractionGraph) -> np.ndarray:
    """The smooth field f^G: interactions restricted to the edges of G,
    kernel values taken from the C1 extension."""
    adj = graph.adjacency(state.n)
    return graph_field_from_adjacency(state.opinions, state.weights, kernels, adj)


def graph_field_from_adjacency(
    x: np.ndarray, w: np.ndarray, kernels: KernelMatrix, adj: np.ndarray
) -> np.ndarray:
    """`graph_field` on raw arrays; the integrator's hot path."""
    n = x.shape[0]
    if n == 1 or not adj.any():
        return np.zeros_like(x)
    common = kernels.common_spec
    if common is not None and common.family is KernelFamily.INDICATOR:
        coup = adj * w[None, :]
    else:
        dist = pairwise_distances(x)
        coup = np.where(adj, kernels.values_extended(dist), 0.0) * w[None, :]
    return coup @ x - coup.sum(axis=1)[:, None] * x


def active_graph_set(
    state: SystemState, kernels: KernelMatrix, tol: float = 1e-9
) -> frozenset[InteractionGraph]:
    """The graphs whose fields span the Filippov hull at this state.

    Pairs strictly inside their support bound (by more than tol) are always
    edges, pairs strictly outside never are, and each pair within tol of
    its surface contributes both variants, so the result has size
    2^(#ambiguous pairs).
    """
    if tol < 0.0:
        raise ValueError("tol must be nonnegative")
    dist = pairwise_distances(state.opinions)
    q = kernels.q_matrix()
    iu = np.triu_indices(state.n, k=1)
    gap = dist[iu] - q[iu]
    ambiguous = np.abs(gap) <= tol
    certain = gap < -tol
    pairs = list(zip(*iu))
    base = [p for p, c in zip(pairs, certain) if c]
    amb = [p for p, a in zip(pairs, ambiguous) if a]
    if len(amb) > 30:
        raise AmbiguousPairLimit(
            f"{len(amb)} pairs are within {tol} of their switching surfaces; "
            f"enumerating 2^{len(amb)} interaction graphs is not tractable"
        )
    graphs = set()
    for r in range(len(amb) + 1):
        for extra in itertools.combinations(amb, r):
            graphs.add(InteractionGraph(frozenset(base) | frozenset(extra)))
    return frozenset(graphs)


def monitors(
    state: SystemState, probes: Sequence[tuple[int, Sequence[float]]] = ()
) -> MonitorSample:
    """Evaluate the conserved/dissipative scalars at one state.

    weighted_mean = (1/n) sum_i w_i x_i stays constant along trajectories;
    m2 = sum_i w_i |x_i|^2 is non-increasing; each probe (r, k) yields the
    shifted even moment sum_{i,l} w_i (x_i^l - k^l)^{2r}, non-increasing
    along trajectories of C1 kernels.
    """
    x, w = state.opinions, state.weights
    mean = (w[:, None] * x).sum(axis=0) / state.n
    m2 = float((w * np.einsum("ij,ij->i", x, x)).sum())
    diss = []
    for r, k in probes:
        r = int(r)
        if r < 1:
            raise ValueError(f"probe order r must be a positive integer, got {r}")
        k_arr = np.asarray(k, dtype=float).ravel()
        if k_arr.shape[0] != state.d:
            raise ValueError(f"probe shift has dimension {k_arr.shape[0]}, state has d={state.d}")
        value = float((w[:, None] * (x - k_arr[None, :]) ** (2 * r)).sum())
        diss.append((r, tuple(k_arr.tolist()), value))
    return MonitorSample(
        time=state.time,
        weighted_mean=tuple(mean.tolist()),
        m2=m2,
        dissipative=tuple(diss),
    )
