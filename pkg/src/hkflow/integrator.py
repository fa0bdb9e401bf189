"""Event-driven time stepping for the switching opinion dynamics.

Between switching events the active interaction graph is fixed and the
motion follows the smooth field f^G; integration alternates smooth
segments with event location on the surfaces |x_i - x_j| = q_ij. Events
are found by scanning per-pair gap functions g_ij(t) = |x_i - x_j|^2 -
q_ij^2 on the segment's dense output and bisecting the earliest sign
change.

Two segment steppers are available:

* an adaptive Dormand-Prince 5(4) pair (scipy's RK45) with dense output,
  for arbitrary kernel families;
* an exact eigenbasis propagator for pure-indicator kernels, whose
  per-segment field is linear. It evaluates the segment flow in closed
  form at any time, which makes the very long horizons of the robustness
  sweeps (~1/delta time units) cheap.

Classification of a located crossing compares the one-sided normal
derivatives n.f with the edge present and absent. For the nonnegative
kernels of this model the difference of the two is -2 xi(q) (w_i + w_j)
q^2 <= 0, so an attracting sliding regime on a single-pair surface is
impossible: crossings are transversal, tangential, or repulsive. The
sliding combination is still provided as an operation for analysis of
states prepared on a surface.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.integrate import RK45
from scipy.linalg import eigh
from scipy.spatial.distance import pdist as sq_pdist

from .errors import (
    NonUniqueContinuation,
    NoRootError,
    NoTangentCombination,
    StepSizeUnderflow,
    SwitchCapExceeded,
)
from .model import (
    KernelFamily,
    KernelMatrix,
    SystemState,
    graph_field_from_adjacency,
)

__all__ = [
    "EventKind",
    "Termination",
    "IntegratorConfig",
    "EventRecord",
    "Trajectory",
    "integrate",
    "locate_event",
    "classify_crossing",
    "sliding_field",
    "tangent_combination",
]

Pair = tuple[int, int]


class EventKind(Enum):
    ENTER_BALL = "enter_ball"
    LEAVE_BALL = "leave_ball"
    ATTRACTIVE_SLIDING = "attractive_sliding"
    REPULSIVE_NON_UNIQUE = "repulsive_non_unique"
    TANGENTIAL_GRAZE = "tangential_graze"
    MULTI_SURFACE = "multi_surface"


class Termination(Enum):
    EQUILIBRIUM = "equilibrium"
    T_MAX = "t_max"
    SWITCH_CAP = "switch_cap"
    NON_UNIQUE = "non_unique"


@dataclass(frozen=True)
class IntegratorConfig:
    """Tolerances and policies for `integrate`.

    `stepper` is "auto" (exact affine propagation when every kernel is an
    indicator, RK45 otherwise), "rk45", or "affine". `surface_branch` is
    the edge assignment for initial conditions sitting exactly on a
    surface whose continuation is genuinely non-unique: "inactive" keeps
    the strict-inequality convention of the indicator, "active" takes the
    other branch.
    """

    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    event_time_tol: float = 1e-12
    max_step: float = np.inf
    t_max: float = 500.0
    max_switches: int = 10000
    stepper: str = "auto"
    surface_branch: str = "inactive"
    eq_field_tol: float = 1e-10
    eq_cluster_eps: float = 1e-4
    tangency_rel_tol: float = 1e-8
    surface_tol: float = 1e-9
    max_samples: int = 4096
    raise_on_switch_cap: bool = False
    consensus_snap_tol: float | None = None  # None: 20 (abs_tol + rel_tol scale)

    def __post_init__(self) -> None:
        for name in ("rel_tol", "abs_tol", "event_time_tol", "max_step",
                     "eq_field_tol", "eq_cluster_eps", "tangency_rel_tol", "surface_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be strictly positive")
        if self.max_switches < 1:
            raise ValueError("max_switches must be at least 1")
        if self.stepper not in ("auto", "rk45", "affine"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.surface_branch not in ("inactive", "active"):
            raise ValueError(f"unknown surface_branch {self.surface_branch!r}")


@dataclass(frozen=True)
class EventRecord:
    """One located switching event; `edge_active_after` is None when the
    run aborted at this event."""

    time: float
    pair: Pair
    kind: EventKind
    pre_state: SystemState
    post_state: SystemState
    edge_active_after: bool | None


@dataclass(frozen=True)
class Trajectory:
    samples: tuple[tuple[float, SystemState], ...]
    events: tuple[EventRecord, ...]
    terminated_by: Termination
    initial_edges: frozenset[Pair]
    initial_surface_pairs: tuple[tuple[Pair, bool], ...] = ()

    @property
    def final_state(self) -> SystemState:
        return self.samples[-1][1]

    @property
    def final_time(self) -> float:
        return self.samples[-1][0]

    def switch_count(self) -> int:
        return sum(1 for e in self.events if e.edge_active_after is not None)

    def segments(self) -> Iterable[tuple[float, float, frozenset[Pair]]]:
        """Yield (t_start, t_end, active edge set) for each smooth segment."""
        edges = set(self.initial_edges)
        t0 = self.samples[0][0]
        for ev in self.events:
            yield t0, ev.time, frozenset(edges)
            if ev.edge_active_after is not None:
                if ev.edge_active_after:
                    edges.add(ev.pair)
                else:
                    edges.discard(ev.pair)
            t0 = ev.time
        yield t0, self.final_time, frozenset(edges)


# ---------------------------------------------------------------------------
# crossing geometry
# ---------------------------------------------------------------------------


def _normal_rates(
    x: np.ndarray, w: np.ndarray, kernels: KernelMatrix, adj: np.ndarray, pair: Pair
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """One-sided d/dt of g = |x_i - x_j|^2 - q^2 with the edge on and off."""
    i, j = pair
    adj_on = adj.copy()
    adj_on[i, j] = adj_on[j, i] = True
    adj_off = adj.copy()
    adj_off[i, j] = adj_off[j, i] = False
    f_on = graph_field_from_adjacency(x, w, kernels, adj_on)
    f_off = graph_field_from_adjacency(x, w, kernels, adj_off)
    rel = x[i] - x[j]
    nf_on = 2.0 * float(rel @ (f_on[i] - f_on[j]))
    nf_off = 2.0 * float(rel @ (f_off[i] - f_off[j]))
    return nf_on, nf_off, f_on, f_off


def _classify_rates(nf_on: float, nf_off: float, tangency_rel_tol: float) -> EventKind:
    tol = tangency_rel_tol * max(1.0, abs(nf_on), abs(nf_off))
    if abs(nf_on) <= tol or abs(nf_off) <= tol:
        return EventKind.TANGENTIAL_GRAZE
    if nf_on > 0.0 and nf_off > 0.0:
        return EventKind.LEAVE_BALL
    if nf_on < 0.0 and nf_off < 0.0:
        return EventKind.ENTER_BALL
    if nf_on < 0.0 < nf_off:
        return EventKind.REPULSIVE_NON_UNIQUE
    return EventKind.ATTRACTIVE_SLIDING


def classify_crossing(
    state: SystemState,
    pair: Pair,
    kernels: KernelMatrix,
    *,
    surface_tol: float = 1e-9,
    tangency_rel_tol: float = 1e-8,
) -> EventKind:
    """Classify a state sitting on the switching surface of `pair`.

    Returns MULTI_SURFACE when more than one pair lies within
    `surface_tol` of its surface. Otherwise compares the one-sided normal
    derivatives: same sign gives a transversal crossing (leaving or
    entering the mutual ball by direction), opposite signs pointing away
    give the repulsive non-unique geometry, and a near-zero derivative on
    either side is a tangential graze.
    """
    x, w = state.opinions, state.weights
    q = kernels.q_matrix()
    on_surface = _pairs_on_surface(x, q, surface_tol)
    if pair not in on_surface and (pair[1], pair[0]) not in on_surface:
        raise ValueError(f"pair {pair} is not within {surface_tol} of its surface")
    if len(on_surface) > 1:
        return EventKind.MULTI_SURFACE
    adj = _strict_adjacency(x, q)
    nf_on, nf_off, _, _ = _normal_rates(x, w, kernels, adj, pair)
    return _classify_rates(nf_on, nf_off, tangency_rel_tol)


def tangent_combination(nf_on: float, nf_off: float) -> float:
    """The alpha with (1 - alpha) nf_on + alpha nf_off = 0 (affine in alpha)."""
    denom = nf_on - nf_off
    if denom == 0.0 or abs(denom) <= 1e-14 * (abs(nf_on) + abs(nf_off)):
        raise NoTangentCombination(
            f"both normal components equal ({nf_on}); tangential geometry"
        )
    return nf_on / denom


def sliding_field(
    state: SystemState, pair: Pair, kernels: KernelMatrix, *, surface_tol: float = 1e-9
) -> np.ndarray:
    """Convex combination (1-a) f_on + a f_off tangent to the pair's surface."""
    x, w = state.opinions, state.weights
    q = kernels.q_matrix()
    adj = _strict_adjacency(x, q)
    nf_on, nf_off, f_on, f_off = _normal_rates(x, w, kernels, adj, pair)
    alpha = tangent_combination(nf_on, nf_off)
    return (1.0 - alpha) * f_on + alpha * f_off


def _strict_adjacency(x: np.ndarray, q: np.ndarray) -> np.ndarray:
    dist = _distance_matrix(x)
    adj = dist < q
    np.fill_diagonal(adj, False)
    return adj


def _distance_matrix(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def _pairs_on_surface(x: np.ndarray, q: np.ndarray, tol: float) -> list[Pair]:
    dist = _distance_matrix(x)
    n = x.shape[0]
    iu = np.triu_indices(n, 1)
    hits = np.abs(dist[iu] - q[iu]) <= tol
    return [(int(iu[0][k]), int(iu[1][k])) for k in np.nonzero(hits)[0]]


# ---------------------------------------------------------------------------
# event location on dense output
# ---------------------------------------------------------------------------


def locate_event(
    dense_segment: Callable[[float], np.ndarray],
    t_lo: float,
    t_hi: float,
    pair: Pair,
    q: float,
    *,
    time_tol: float = 1e-12,
) -> float:
    """Earliest root of g(t) = |x_i(t) - x_j(t)|^2 - q^2 on [t_lo, t_hi].

    `dense_segment` maps a time to the full (n, d) state. The root is
    found by bisection safeguarded with a sampled grid that is refined
    until the first sign change is bracketed unambiguously. Raises
    `NoRootError` if g neither changes sign nor touches zero.
    """
    i, j = pair
    q2 = q * q

    def g(t: float) -> float:
        x = dense_segment(t)
        rel = x[i] - x[j]
        return float(rel @ rel) - q2

    g_lo = g(t_lo)
    atol = 1e-13 * max(1.0, q2)
    if abs(g_lo) <= atol:
        return t_lo
    s = 1.0 if g_lo > 0.0 else -1.0
    bracket = _first_sign_change(g, t_lo, t_hi, s, atol, depth=4)
    if bracket is None:
        raise NoRootError(f"g_{pair} has no root on [{t_lo}, {t_hi}]")
    lo, hi = bracket
    if abs(g(hi)) <= atol and hi - lo <= time_tol:
        return hi
    return _bisect(g, lo, hi, s, time_tol)


def _first_sign_change(g, t_lo, t_hi, s, atol, depth, points=33):
    """First subinterval where s*g goes from >= -atol to < -atol, or a
    touched zero; refines around suspicious dips when no change is found."""
    ts = np.linspace(t_lo, t_hi, points)
    vals = np.array([s * g(t) for t in ts])
    for k in range(1, points):
        if vals[k] < -atol:
            return ts[k - 1], ts[k]
        if abs(vals[k]) <= atol:
            return ts[k - 1], ts[k]
    if depth <= 0:
        return None
    k_min = int(np.argmin(vals))
    if 0 < k_min < points - 1 and vals[k_min] < 0.25 * max(vals[0], vals[-1]):
        return _first_sign_change(g, ts[k_min - 1], ts[k_min + 1], s, atol, depth - 1, points)
    return None


def _bisect(g, lo, hi, s, time_tol):
    for _ in range(256):
        if hi - lo <= time_tol:
            break
        mid = 0.5 * (lo + hi)
        if s * g(mid) < 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# segment scanning shared by both steppers
# ---------------------------------------------------------------------------


class _PairTable:
    """Upper-triangle bookkeeping: index maps, support bounds, armed signs."""

    def __init__(self, n: int, q_matrix: np.ndarray):
        self.n = n
        self.iu = np.triu_indices(n, 1)
        self.q = q_matrix[self.iu]
        self.q2 = self.q**2
        finite = np.isfinite(self.q)
        self.q2_safe = np.where(finite, self.q2, 1.0)
        self.finite = finite

    def pair(self, k: int) -> Pair:
        return int(self.iu[0][k]), int(self.iu[1][k])

    def index_of(self, pair: Pair) -> int:
        i, j = min(pair), max(pair)
        # column index within the condensed upper triangle
        n = self.n
        return int(n * i - i * (i + 1) // 2 + (j - i - 1))

    def gap_and_dist(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Condensed g = d^2 - q^2 and d vectors (triu row-major order)."""
        v = sq_pdist(x, "sqeuclidean")
        g = np.where(self.finite, v - self.q2_safe, -1.0)
        return g, np.sqrt(v)

    def g_values(self, x: np.ndarray) -> np.ndarray:
        return self.gap_and_dist(x)[0]

    def distances(self, x: np.ndarray) -> np.ndarray:
        return self.gap_and_dist(x)[1]


@dataclass
class _SegmentOutcome:
    status: str  # "event" | "t_end" | "equilibrium"
    t: float
    x: np.ndarray
    crossings: list[int] | None = None  # condensed pair indices hit within event_time_tol


def _scan_window(
    dense: Callable[[np.ndarray], np.ndarray],
    t0: float,
    t1: float,
    cand_idx: np.ndarray,
    table: _PairTable,
    armed: np.ndarray,
    floors: np.ndarray,
    time_tol: float,
    grid: int = 9,
    depth: int = 3,
):
    """Earliest armed-sign crossing among candidate pairs on [t0, t1].

    Returns (t_root, crossing pair indices within time_tol) or None.
    `dense` maps an array of times to states of shape (m, n, d).
    """
    if cand_idx.size == 0 or t1 <= t0:
        return None
    cands = np.asarray(cand_idx)
    ta, tb = t0, t1
    top_level = True
    for _ in range(256):
        ts = np.linspace(ta, tb, grid)
        states = dense(ts)
        ii = table.iu[0][cands]
        jj = table.iu[1][cands]
        dx = states[:, ii, :] - states[:, jj, :]
        gs = np.einsum("mkj,mkj->mk", dx, dx) - table.q2_safe[cands]
        signed = gs * armed[cands][None, :]
        below = signed < -floors[cands][None, :]
        flipped = below.any(axis=0)
        if not flipped.any():
            # no sign change; refine once around a suspicious interior dip
            if top_level and depth > 0:
                k_min_col = signed.min(axis=0)
                k_min_idx = signed.argmin(axis=0)
                guard = 0.25 * np.maximum(signed[0], signed[-1])
                sus = np.nonzero(
                    (k_min_idx > 0) & (k_min_idx < grid - 1) & (k_min_col < guard)
                )[0]
                for c in sus:
                    k_min = int(k_min_idx[c])
                    sub = _scan_window(
                        dense, ts[k_min - 1], ts[k_min + 1],
                        cands[np.array([c])], table, armed, floors, time_tol,
                        grid=grid, depth=depth - 1,
                    )
                    if sub is not None:
                        return sub
            return None

        first = np.where(flipped, below.argmax(axis=0), grid)
        k_min = int(first[flipped].min())
        if k_min == 0:
            # already past the surface at the bracket start (location slop)
            hits = sorted(int(cands[c]) for c in np.nonzero(first == 0)[0])
            return ts[0], hits
        if tb - ta <= max(time_tol, 4e-16 * max(abs(ta), abs(tb))):
            hits = sorted(int(cands[c]) for c in np.nonzero(flipped)[0])
            return 0.5 * (ta + tb), hits
        # shrink to the earliest flip interval, keeping the neighbor cell
        # so near-simultaneous crossings stay in play
        keep = flipped & (first <= k_min + 1)
        cands = cands[keep]
        ta = ts[k_min - 1]
        tb = ts[min(k_min + 1, grid - 1)]
        top_level = False
    return None


def _bands_ok(dist: np.ndarray, q: np.ndarray, eps: float) -> bool:
    finite = np.isfinite(q)
    return bool(np.all(~finite | (dist <= eps) | (dist >= q - eps)))


def _snap_tol(cfg: IntegratorConfig, x: np.ndarray) -> float:
    if cfg.consensus_snap_tol is not None:
        return cfg.consensus_snap_tol
    scale = max(1.0, float(np.max(np.abs(x))))
    return 20.0 * (cfg.abs_tol + cfg.rel_tol * scale)


def _snap_consensus(x: np.ndarray, w: np.ndarray, adj: np.ndarray) -> np.ndarray:
    """Project each active-graph component onto its weighted mean.

    Explicit steppers leave decayed contraction modes hovering at the
    error-control noise floor, which blocks the field-norm stopping rule
    forever; once every active edge is shorter than the snap tolerance the
    true solution is the component consensus, and the projection keeps the
    conserved weighted mean exactly while strictly decreasing m2.
    """
    n = x.shape[0]
    parent = list(range(n))

    def find(u: int) -> int:
        while parent[u] != u:
            parent[u] = parent[parent[u]]
            u = parent[u]
        return u

    ii, jj = np.nonzero(np.triu(adj, k=1))
    for i, j in zip(ii, jj):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[rj] = ri
    out = x.copy()
    roots: dict[int, list[int]] = {}
    for i in range(n):
        roots.setdefault(find(i), []).append(i)
    for members in roots.values():
        if len(members) < 2:
            continue
        idx = np.array(members)
        wm = w[idx]
        out[idx] = (wm[:, None] * x[idx]).sum(axis=0) / wm.sum()
    return out


# ---------------------------------------------------------------------------
# segment steppers
# ---------------------------------------------------------------------------


def _run_segment_rk45(x0, t0, t_end, adj, w, kernels, table, armed, floors, cfg, sink):
    n, d = x0.shape
    common = kernels.common_spec
    if common is not None and common.family is KernelFamily.INDICATOR:
        # the segment field is linear; freeze the coupling matrix
        coup = adj * w[None, :]
        drift = coup.sum(axis=1)[:, None]

        def fun(_t, y):
            xm = y.reshape(n, d)
            return (coup @ xm - drift * xm).ravel()
    else:

        def fun(_t, y):
            return graph_field_from_adjacency(y.reshape(n, d), w, kernels, adj).ravel()

    rk = RK45(fun, t0, x0.ravel(), t_bound=t_end, rtol=cfg.rel_tol,
              atol=cfg.abs_tol, max_step=cfg.max_step)
    prev_t = t0
    prev_x = x0
    g_prev = table.g_values(x0)
    while rk.status == "running":
        msg = rk.step()
        if rk.status == "failed":
            raise StepSizeUnderflow(f"RK45 failed at t={rk.t}: {msg}")
        cur_t = rk.t
        cur_x = rk.y.reshape(n, d)
        g_cur, dist = table.gap_and_dist(cur_x)
        h = cur_t - prev_t

        flips = (armed * g_cur) < -floors
        vmax = float(np.max(np.abs(cur_x - prev_x))) / max(h, 1e-300)
        band = 16.0 * np.maximum(dist, table.q) * vmax * h
        near = np.minimum(np.abs(g_prev), np.abs(g_cur)) < band
        cand = np.nonzero((flips | near) & table.finite)[0]
        if cand.size:
            dense = rk.dense_output()

            def dense_eval(ts_arr, _dense=dense):
                return _dense(ts_arr).T.reshape(len(ts_arr), n, d)

            found = _scan_window(dense_eval, prev_t, cur_t, cand, table,
                                 armed, floors, cfg.event_time_tol)
            if found is not None:
                t_root, hits = found
                x_root = dense_eval(np.array([t_root]))[0]
                return _SegmentOutcome("event", t_root, x_root, hits)

        sink(cur_t, cur_x)
        if _bands_ok(dist, table.q, cfg.eq_cluster_eps):
            f_inf = float(np.max(np.abs(fun(cur_t, rk.y)))) if n > 1 else 0.0
            if f_inf < cfg.eq_field_tol:
                return _SegmentOutcome("equilibrium", cur_t, cur_x)
            edge_d = dist[adj[table.iu]]
            if edge_d.size == 0 or float(edge_d.max()) <= _snap_tol(cfg, cur_x):
                snapped = _snap_consensus(cur_x, w, adj)
                f_snap = graph_field_from_adjacency(snapped, w, kernels, adj)
                if float(np.max(np.abs(f_snap))) < cfg.eq_field_tol:
                    return _SegmentOutcome("equilibrium", cur_t, snapped)
        prev_t, prev_x, g_prev = cur_t, cur_x, g_cur
    return _SegmentOutcome("t_end", rk.t, rk.y.reshape(n, d))


class _AffinePropagator:
    """Exact flow of the linear indicator-graph field via the symmetric
    eigenproblem of the weight-similarity transform."""

    def __init__(self, adj: np.ndarray, w: np.ndarray, x0: np.ndarray, t0: float):
        coup = adj * w[None, :]
        gen = coup - np.diag(coup.sum(axis=1))  # dX/dt = gen @ X
        sqw = np.sqrt(w)
        sym = gen * (sqw[:, None] / sqw[None, :])
        lam, u = eigh(sym)
        self.t0 = t0
        self.lam = lam
        self.u = u
        self.sqw = sqw
        self.y0 = u.T @ (sqw[:, None] * x0)
        self.gen = gen

    def states(self, ts: np.ndarray) -> np.ndarray:
        phases = np.exp(np.outer(ts - self.t0, self.lam))  # (m, n)
        y = phases[:, :, None] * self.y0[None, :, :]
        return (self.u @ y) / self.sqw[None, :, None]

    def state(self, t: float) -> np.ndarray:
        return self.states(np.array([t]))[0]

    def velocity(self, x: np.ndarray) -> np.ndarray:
        return self.gen @ x


def _run_segment_affine(x0, t0, t_end, adj, w, kernels, table, armed, floors, cfg, sink):
    n = x0.shape[0]
    prop = _AffinePropagator(adj, w, x0, t0)
    lam_scale = float(np.max(np.abs(prop.lam))) if n > 1 else 0.0
    sqw_inv = 1.0 / prop.sqw

    t = t0
    x = x0
    h = min(0.5 / lam_scale if lam_scale > 0.0 else (t_end - t0), t_end - t0, cfg.max_step)
    while True:
        v = prop.velocity(x)
        f_inf = float(np.max(np.abs(v))) if n > 1 else 0.0
        dist = table.distances(x)
        if _bands_ok(dist, table.q, cfg.eq_cluster_eps):
            if f_inf < cfg.eq_field_tol:
                return _SegmentOutcome("equilibrium", t, x)
            edge_d = dist[adj[table.iu]]
            if edge_d.size and float(edge_d.max()) <= _snap_tol(cfg, x):
                snapped = _snap_consensus(x, w, adj)
                f_snap = graph_field_from_adjacency(snapped, w, kernels, adj)
                if float(np.max(np.abs(f_snap))) < cfg.eq_field_tol:
                    return _SegmentOutcome("equilibrium", t, snapped)
        if t >= t_end:
            return _SegmentOutcome("t_end", t, x)
        if f_inf == 0.0:
            sink(t_end, x)
            return _SegmentOutcome("t_end", t_end, x)

        h_try = min(h, t_end - t, cfg.max_step)
        # w-norm of the velocity never grows along the segment, so the
        # per-pair closing speed is bounded for the whole window.
        s_w = float(np.sqrt((w * np.einsum("ij,ij->i", v, v)).sum()))
        speed = s_w * (sqw_inv[table.iu[0]] + sqw_inv[table.iu[1]])
        x1 = prop.state(t + h_try)
        g0 = table.g_values(x)
        g1 = table.g_values(x1)
        flips = (armed * g1) < -floors
        reach = 2.2 * np.maximum(dist, table.q) * speed * h_try
        near = np.minimum(np.abs(g0), np.abs(g1)) < reach
        cand = np.nonzero((flips | near) & table.finite)[0]
        if cand.size:
            found = _scan_window(prop.states, t, t + h_try, cand, table,
                                 armed, floors, cfg.event_time_tol, grid=17)
            if found is not None:
                t_root, hits = found
                return _SegmentOutcome("event", t_root, prop.state(t_root), hits)
        t += h_try
        x = x1
        sink(t, x)
        h = min(h * 2.0, max(t_end - t, h))


# ---------------------------------------------------------------------------
# the integrator
# ---------------------------------------------------------------------------


class _Sampler:
    """Bounded trajectory sampling: decimates by doubling the stride."""

    def __init__(self, cap: int):
        self.cap = max(int(cap), 64)
        self.stride = 1
        self.counter = 0
        self.items: list[tuple[float, np.ndarray]] = []

    def add(self, t: float, x: np.ndarray, force: bool = False) -> None:
        keep = force or (self.counter % self.stride == 0)
        self.counter += 1
        if not keep:
            return
        if self.items and t <= self.items[-1][0]:
            if force and t == self.items[-1][0]:
                # termination states (e.g. the consensus snap) supersede
                # the plain sample recorded at the same time
                self.items[-1] = (float(t), np.array(x))
            return
        self.items.append((float(t), np.array(x)))
        if len(self.items) > self.cap:
            self.items = self.items[::2] + [self.items[-1]] if len(self.items) % 2 == 0 \
                else self.items[::2]
            self.stride *= 2


def _all_indicator(kernels: KernelMatrix) -> bool:
    if kernels.common_spec is not None:
        return kernels.common_spec.family is KernelFamily.INDICATOR
    return all(kernels.spec(i, j).family is KernelFamily.INDICATOR for i, j in kernels.pairs())


def integrate(
    initial: SystemState,
    kernels: KernelMatrix,
    cfg: IntegratorConfig | None = None,
    *,
    surface_overrides: Mapping[Pair, bool] | None = None,
) -> Trajectory:
    """Advance the switching system from `initial` until equilibrium,
    t_max, the switch cap, or a non-unique continuation.

    Initial conditions exactly on a switching surface are resolved by the
    flow direction when the crossing is transversal; genuinely non-unique
    geometries (repulsive or tangential) require either an entry in
    `surface_overrides` ({(i, j): edge_active}) or fall back to
    `cfg.surface_branch`, and are reported in `initial_surface_pairs`.
    """
    cfg = cfg or IntegratorConfig()
    if kernels.n != initial.n:
        raise ValueError("kernel table size does not match the state")
    w = initial.weights
    n, d = initial.n, initial.d
    x = np.array(initial.opinions)
    t = float(initial.time)
    q = kernels.q_matrix()
    table = _PairTable(n, q)
    overrides = {(min(p), max(p)): bool(v) for p, v in (surface_overrides or {}).items()}

    use_affine = cfg.stepper == "affine" or (cfg.stepper == "auto" and _all_indicator(kernels))
    runner = _run_segment_affine if use_affine else _run_segment_rk45

    # --- initial adjacency, with on-surface pairs resolved ---
    dist0 = table.distances(x)
    on_surface = np.abs(dist0 - table.q) <= cfg.surface_tol
    inside = (dist0 < table.q) & ~on_surface
    adj = np.zeros((n, n), dtype=bool)
    adj[table.iu] = inside
    adj |= adj.T
    initial_surface: list[tuple[Pair, bool]] = []
    for k in np.nonzero(on_surface)[0]:
        pair = table.pair(int(k))
        nf_on, nf_off, _, _ = _normal_rates(x, w, kernels, adj, pair)
        kind = _classify_rates(nf_on, nf_off, cfg.tangency_rel_tol)
        if kind is EventKind.ENTER_BALL:
            active = True
        elif kind is EventKind.LEAVE_BALL:
            active = False
        elif pair in overrides:
            active = overrides[pair]
        elif kind is EventKind.REPULSIVE_NON_UNIQUE:
            err = NonUniqueContinuation(
                f"initial condition on the repulsive surface of pair {pair}; "
                "pass surface_overrides to select a branch"
            )
            err.pair = pair
            raise err
        else:
            active = cfg.surface_branch == "active"
        i, j = pair
        adj[i, j] = adj[j, i] = active
        initial_surface.append((pair, active))
    initial_edges = frozenset(table.pair(int(k)) for k in np.nonzero(adj[table.iu])[0])

    armed = np.where(adj[table.iu], -1.0, 1.0)
    base_floor = 1e-13 * table.q2_safe
    floors = base_floor.copy()

    sampler = _Sampler(cfg.max_samples)
    sampler.add(t, x, force=True)
    events: list[EventRecord] = []
    switches = 0
    termination: Termination | None = None
    last_event_t = -np.inf
    stall_count = 0

    def rearm(touched: Sequence[int], x_now: np.ndarray) -> None:
        # widen the refire guard only for pairs that just sat on a surface;
        # everyone else keeps the tiny absolute floor so location accuracy
        # is not degraded
        nonlocal armed, floors
        armed = np.where(adj[table.iu], -1.0, 1.0)
        floors = base_floor.copy()
        if touched:
            g_now = table.g_values(x_now)
            idx = np.asarray(list(touched), dtype=int)
            floors[idx] = np.maximum(4.0 * np.abs(g_now[idx]), base_floor[idx])

    rearm([table.index_of(p) for p, _ in initial_surface], x)

    while termination is None:
        if t >= cfg.t_max:
            termination = Termination.T_MAX
            break
        out = runner(x, t, cfg.t_max, adj, w, kernels, table, armed, floors, cfg, sampler.add)
        if out.status == "t_end":
            t, x = out.t, out.x
            termination = Termination.T_MAX
            continue
        if out.status == "equilibrium":
            t, x = out.t, out.x
            termination = Termination.EQUILIBRIUM
            continue

        # --- event ---
        t_e, x_e = out.t, out.x
        if t_e - t <= 1e-15 * max(1.0, abs(t)) and abs(t_e - last_event_t) <= 1e-15 * max(1.0, abs(t_e)):
            stall_count += 1
            if stall_count > 8:
                raise StepSizeUnderflow(f"event chatter pinned at t={t_e}")
        else:
            stall_count = 0
        last_event_t = t_e
        pre_state = SystemState(x_e, w, time=t_e)
        hit_pairs = [table.pair(k) for k in out.crossings]

        if len(hit_pairs) == 1:
            pair = hit_pairs[0]
            i, j = pair
            nf_on, nf_off, _, _ = _normal_rates(x_e, w, kernels, adj, pair)
            kind = _classify_rates(nf_on, nf_off, cfg.tangency_rel_tol)
            if kind in (EventKind.ENTER_BALL, EventKind.LEAVE_BALL):
                active = kind is EventKind.ENTER_BALL
                adj[i, j] = adj[j, i] = active
                events.append(EventRecord(t_e, pair, kind, pre_state, pre_state, active))
                switches += 1
            elif kind is EventKind.TANGENTIAL_GRAZE and kernels.spec(i, j).is_continuous_at_q:
                # continuous field across this surface: the crossing is a
                # bookkeeping toggle, continuation stays unique
                k_idx = table.index_of(pair)
                g_here = table.g_values(x_e)[k_idx]
                active = g_here < 0.0
                adj[i, j] = adj[j, i] = active
                events.append(EventRecord(t_e, pair, kind, pre_state, pre_state, active))
                switches += 1
            else:
                # jump-kernel graze, repulsive arrival, or (unreachable for
                # nonnegative kernels) attracting surface: do not guess
                events.append(EventRecord(t_e, pair, kind, pre_state, pre_state, None))
                termination = Termination.NON_UNIQUE
                t, x = t_e, x_e
                sampler.add(t, x, force=True)
                continue
        else:
            # simultaneous crossings: toggle every transversal pair and
            # require the combined continuation to leave the intersection
            trial = adj.copy()
            directions = {}
            for pair in hit_pairs:
                k_idx = table.index_of(pair)
                outward = armed[k_idx] < 0.0  # was inside, crossing out
                directions[pair] = not outward
                trial[pair[0], pair[1]] = trial[pair[1], pair[0]] = not outward
            f_post = graph_field_from_adjacency(x_e, w, kernels, trial)
            consistent = True
            for pair in hit_pairs:
                i, j = pair
                rel = x_e[i] - x_e[j]
                rate = 2.0 * float(rel @ (f_post[i] - f_post[j]))
                tol = cfg.tangency_rel_tol * max(1.0, abs(rate))
                wants_out = not directions[pair]
                if abs(rate) <= tol or (rate > 0.0) != wants_out:
                    consistent = False
                    break
            if consistent:
                adj = trial
                for pair in hit_pairs:
                    events.append(EventRecord(t_e, pair, EventKind.MULTI_SURFACE,
                                              pre_state, pre_state, directions[pair]))
                switches += len(hit_pairs)
            else:
                for pair in hit_pairs:
                    events.append(EventRecord(t_e, pair, EventKind.MULTI_SURFACE,
                                              pre_state, pre_state, None))
                termination = Termination.NON_UNIQUE
                t, x = t_e, x_e
                sampler.add(t, x, force=True)
                continue

        t, x = t_e, x_e
        sampler.add(t, x, force=True)
        rearm(out.crossings, x)
        if switches > cfg.max_switches:
            if cfg.raise_on_switch_cap:
                raise SwitchCapExceeded(f"{switches} switches by t={t}")
            termination = Termination.SWITCH_CAP

    sampler.add(t, x, force=True)
    samples = tuple((st, SystemState(sx, w, time=st)) for st, sx in sampler.items)
    return Trajectory(
        samples=samples,
        events=tuple(events),
        terminated_by=termination,
        initial_edges=initial_edges,
        initial_surface_pairs=tuple(initial_surface),
    )
