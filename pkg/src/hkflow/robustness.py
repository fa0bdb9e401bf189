"""Zero-agent robustness theory for clustered indicator equilibria.

An equilibrium of k clusters (pairwise separation above the shared
confidence bound) is probed by injecting a "zero agent" of weight delta
at an initial opinion x0. The analytic operations decide the shared
center of mass condition (SCMC), genericity of the sphere arrangement,
and the sqrt(2) pair condition; together these drive the necessary and
sufficient robustness verdicts. The measured side integrates the
(k+1)-agent system and reports the disruption

    Delta = sup over time, clusters, and solution branches of
            |x_i(t) - x_i*|,

with non-unique continuations explored as separate branches up to a cap.

The delta = 0 reduced dynamics (clusters frozen, only the zero agent
moves) is piecewise linear with spherical switching surfaces and is
propagated in closed form: inside a region with active cluster set S the
motion is a straight-line exponential approach to the center of mass
m_S, so switching times reduce to quadratic roots.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    BranchExplosion,
    HeterogeneousKernels,
    InitialOnSurface,
    NonUniqueContinuation,
)
from .integrator import IntegratorConfig, Termination, integrate
from .model import KernelFamily, KernelMatrix, KernelSpec, SystemState

__all__ = [
    "ClusteredEquilibrium",
    "ZeroAgentScenario",
    "TrajectoryKind",
    "TrajectoryType",
    "ScmcResult",
    "GenericityResult",
    "Sqrt2Result",
    "TripleBallResult",
    "NecessaryVerdict",
    "SufficientVerdict",
    "SweepPoint",
    "DeltaSweep",
    "RobustnessReport",
    "center_of_mass",
    "scmc_check",
    "genericity_check",
    "radius_intersections",
    "sqrt2_hypothesis",
    "triple_ball_check",
    "zero_agent_reduced_field",
    "classify_zero_trajectory",
    "measure_delta",
    "delta_sweep",
    "theorem_verdicts",
    "robustness_report",
    "default_sweep_config",
    "scenario_system",
]


@dataclass(frozen=True)
class ClusteredEquilibrium:
    """k cluster centers with combined weights and one confidence bound q.

    Converged simulations stop a hair short of exact separation, so the
    pairwise-distance invariant is enforced up to `separation_slack`.
    """

    centers: np.ndarray  # (k, d)
    weights: np.ndarray  # (k,)
    q: float = 1.0
    separation_slack: float = 1e-3

    def __post_init__(self) -> None:
        c = np.array(self.centers, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        w = np.array(self.weights, dtype=float).ravel()
        if c.shape[0] != w.shape[0]:
            raise ValueError("one weight per cluster required")
        if np.any(w <= 0.0) or not np.all(np.isfinite(c)):
            raise ValueError("weights must be positive, centers finite")
        if self.q <= 0.0:
            raise ValueError("confidence bound q must be positive")
        for i, j in itertools.combinations(range(c.shape[0]), 2):
            dij = float(np.linalg.norm(c[i] - c[j]))
            if dij <= self.q - self.separation_slack:
                raise ValueError(
                    f"clusters {i},{j} at distance {dij:.6g} violate separation > q={self.q}"
                )
        c.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "q", float(self.q))

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    @property
    def d(self) -> int:
        return self.centers.shape[1]


@dataclass(frozen=True)
class ZeroAgentScenario:
    equilibrium: ClusteredEquilibrium
    x0: np.ndarray  # (d,)
    delta: float
    q0: np.ndarray | None = None  # per-cluster zero-agent bounds, default all q

    def __post_init__(self) -> None:
        x0 = np.array(self.x0, dtype=float).ravel()
        if x0.shape[0] != self.equilibrium.d:
            raise ValueError("x0 dimension does not match the equilibrium")
        if self.delta < 0.0:
            raise ValueError("delta must be nonnegative")
        q0 = self.q0
        if q0 is None:
            q0 = np.full(self.equilibrium.k, self.equilibrium.q)
        else:
            q0 = np.array(q0, dtype=float).ravel()
            if q0.shape[0] != self.equilibrium.k or np.any(q0 <= 0.0):
                raise ValueError("q0 needs one positive bound per cluster")
        x0.setflags(write=False)
        q0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "q0", q0)

    @property
    def homogeneous_bounds(self) -> bool:
        return bool(np.all(self.q0 == self.equilibrium.q))


class TrajectoryKind(Enum):
    TYPE1 = "type1"
    TYPE2_SUSPECTED = "type2_suspected"
    IRREGULAR = "irregular"


@dataclass(frozen=True)
class TrajectoryType:
    kind: TrajectoryKind
    switches: int
    reason: str = ""


@dataclass(frozen=True)
class ScmcResult:
    holds: bool
    witness: frozenset[int] | None
    exhaustive: bool  # False above the subset-enumeration cap (pairwise only)


@dataclass(frozen=True)
class GenericityResult:
    is_generic: bool
    violations: tuple[tuple[str, tuple], ...]  # (clause, detail)
    exhaustive: bool


@dataclass(frozen=True)
class Sqrt2Result:
    holds: bool
    violating_pair: tuple[int, int] | None


@dataclass(frozen=True)
class TripleBallResult:
    holds: bool  # True: no three confidence balls share a point
    violating_triple: tuple[int, int, int] | None


class NecessaryVerdict(Enum):
    NOT_ROBUST_SCMC = "not_robust_scmc"
    INCONCLUSIVE = "inconclusive"


class SufficientVerdict(Enum):
    ROBUST_THM = "robust_thm"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class SweepPoint:
    delta: float
    disruption: float
    branch_count: int


@dataclass(frozen=True)
class DeltaSweep:
    points: tuple[SweepPoint, ...]
    monotone_decreasing: bool
    limit_estimate: float
    disruption_per_delta: tuple[float, ...]


@dataclass(frozen=True)
class RobustnessReport:
    scmc: ScmcResult
    generic: GenericityResult
    sqrt2: Sqrt2Result
    triple_balls: TripleBallResult
    necessary_verdict: NecessaryVerdict
    sufficient_verdict: SufficientVerdict
    sweep: DeltaSweep | None = None


# ---------------------------------------------------------------------------
# analytic conditions
# ---------------------------------------------------------------------------


def center_of_mass(eq: ClusteredEquilibrium, subset: Sequence[int]) -> np.ndarray:
    """Weighted center of the clusters in `subset`."""
    idx = sorted(set(int(i) for i in subset))
    if not idx:
        raise ValueError("subset must be nonempty")
    w = eq.weights[idx]
    return (w[:, None] * eq.centers[idx]).sum(axis=0) / w.sum()


def _iter_subset_masks(k: int, chunk: int = 1 << 15):
    """Chunks of subset membership masks for all 2^k subsets."""
    total = 1 << k
    bits = np.arange(k, dtype=np.uint64)
    for start in range(0, total, chunk):
        ids = np.arange(start, min(start + chunk, total), dtype=np.uint64)
        yield ((ids[:, None] >> bits[None, :]) & 1).astype(bool)


def _subset_centers(masks: np.ndarray, eq: ClusteredEquilibrium):
    w_tot = masks @ eq.weights
    moment = masks @ (eq.weights[:, None] * eq.centers)
    with np.errstate(invalid="ignore"):
        centers = moment / w_tot[:, None]
    return centers, w_tot


def scmc_check(
    eq: ClusteredEquilibrium, max_k_exhaustive: int = 20
) -> ScmcResult:
    """Shared center of mass condition: some subset S (|S| >= 2) whose
    weighted center lies strictly inside every member's confidence ball.

    Exhaustive over all 2^k - k - 1 candidates up to `max_k_exhaustive`
    clusters; larger equilibria fall back to pairs only, reported via
    exhaustive=False (the "pairwise SCMC" of the experiments).
    """
    k, q = eq.k, eq.q
    if k < 2:
        return ScmcResult(False, None, True)
    if k <= max_k_exhaustive:
        for masks in _iter_subset_masks(k):
            sizes = masks.sum(axis=1)
            cand = sizes >= 2
            if not cand.any():
                continue
            centers, _ = _subset_centers(masks, eq)
            dist = np.linalg.norm(centers[:, None, :] - eq.centers[None, :, :], axis=2)
            ok = np.all(~masks | (dist < q), axis=1) & cand
            hits = np.nonzero(ok)[0]
            if hits.size:
                witness = frozenset(int(i) for i in np.nonzero(masks[hits[0]])[0])
                return ScmcResult(True, witness, True)
        return ScmcResult(False, None, True)
    # pairwise fallback
    for i, j in itertools.combinations(range(k), 2):
        m = center_of_mass(eq, (i, j))
        if (
            np.linalg.norm(m - eq.centers[i]) < q
            and np.linalg.norm(m - eq.centers[j]) < q
        ):
            return ScmcResult(True, frozenset((i, j)), False)
    return ScmcResult(False, None, False)


def _sphere_triple_feasibility(eq: ClusteredEquilibrium, triple, tol: float):
    """Residual-radius feasibility of the three-sphere system.

    Subtracting pairs of sphere equations leaves two linear equations; the
    minimum-norm solution y* (relative to the first center) fixes the
    in-plane offset, and the residual radius is r^2 = q^2 - |y*|^2. The
    triple is flagged when r^2 >= -tol (the system is feasible or within
    tol of its feasibility boundary).
    """
    a, b, c = (eq.centers[i] for i in triple)
    q2 = eq.q * eq.q
    rows = np.array([2.0 * (b - a), 2.0 * (c - a)])
    rhs = np.array(
        [float(b @ b) - float(a @ a), float(c @ c) - float(a @ a)]
    ) - rows @ a
    sol, _, rank, _ = np.linalg.lstsq(rows, rhs, rcond=None)
    if not np.allclose(rows @ sol, rhs, atol=1e-9 * max(1.0, float(np.abs(rhs).max()))):
        return False, np.inf  # inconsistent (e.g. parallel radical planes)
    resid = q2 - float(sol @ sol)
    return resid >= -tol, resid


def genericity_check(
    eq: ClusteredEquilibrium, tol: float = 1e-9, max_k_exhaustive: int = 20
) -> GenericityResult:
    """The three genericity clauses of the sphere arrangement.

    (1) no two confidence spheres tangential (center distance within tol
        of 2q, or coincident centers);
    (2) no three spheres with a feasible common intersection, decided by
        the linear reduction of the sphere system plus a residual-radius
        feasibility margin;
    (3) no subset center of mass within tol of any sphere.

    Clause (3) enumerates all nonempty subsets when k <= max_k_exhaustive;
    above the cap only singletons, pairs and the full set are examined and
    the result is marked non-exhaustive.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    k, q = eq.k, eq.q
    violations: list[tuple[str, tuple]] = []

    for i, j in itertools.combinations(range(k), 2):
        dij = float(np.linalg.norm(eq.centers[i] - eq.centers[j]))
        if abs(dij - 2.0 * q) <= tol or dij <= tol:
            violations.append(("sphere_tangency", (i, j)))

    for triple in itertools.combinations(range(k), 3):
        feasible, _ = _sphere_triple_feasibility(eq, triple, tol)
        if feasible:
            violations.append(("triple_sphere_intersection", triple))

    exhaustive = True
    if k <= max_k_exhaustive:
        found = None
        for masks in _iter_subset_masks(k):
            sizes = masks.sum(axis=1)
            cand = sizes >= 1
            centers, _ = _subset_centers(masks, eq)
            dist = np.linalg.norm(centers[:, None, :] - eq.centers[None, :, :], axis=2)
            on_sphere = np.abs(dist - q) <= tol
            hit = on_sphere.any(axis=1) & cand
            hits = np.nonzero(hit)[0]
            if hits.size:
                subset = tuple(int(i) for i in np.nonzero(masks[hits[0]])[0])
                sphere = int(np.nonzero(on_sphere[hits[0]])[0][0])
                found = (subset, sphere)
                break
        if found is not None:
            violations.append(("mass_center_on_sphere", found))
    else:
        exhaustive = False
        subsets = [
            (i,) for i in range(k)
        ] + list(itertools.combinations(range(k), 2)) + [tuple(range(k))]
        for subset in subsets:
            m = center_of_mass(eq, subset)
            dist = np.linalg.norm(m - eq.centers, axis=1)
            hit = np.abs(dist - q) <= tol
            if hit.any():
                violations.append(("mass_center_on_sphere", (subset, int(np.argmax(hit)))))
                break

    return GenericityResult(not violations, tuple(violations), exhaustive)


def radius_intersections(x1: np.ndarray, x2: np.ndarray, lam: np.ndarray) -> int:
    """How many times the radius {x1 + lam t : t in [0,1]} meets the unit
    sphere around x2; the double root counts once."""
    x1 = np.asarray(x1, dtype=float).ravel()
    x2 = np.asarray(x2, dtype=float).ravel()
    lam = np.asarray(lam, dtype=float).ravel()
    rel = x2 - x1
    sep = float(np.linalg.norm(rel))
    if sep <= 1.0:
        raise ValueError("centers must be more than one unit apart")
    norm = float(np.linalg.norm(lam))
    if abs(norm - 1.0) > 1e-9:
        raise ValueError("lam must be a unit vector")
    c = float(lam @ rel)
    disc = c * c - sep * sep + 1.0
    if disc < 0.0:
        return 0
    root = math.sqrt(disc)
    ts = {c - root, c + root}
    return sum(1 for t in ts if 0.0 <= t <= 1.0)


def sqrt2_hypothesis(eq: ClusteredEquilibrium) -> Sqrt2Result:
    """True iff for every pair the mutual center of mass is farther than
    sqrt(2)*q from at least one of the two centers."""
    thresh = math.sqrt(2.0) * eq.q
    for i, j in itertools.combinations(range(eq.k), 2):
        m = center_of_mass(eq, (i, j))
        di = float(np.linalg.norm(m - eq.centers[i]))
        dj = float(np.linalg.norm(m - eq.centers[j]))
        if max(di, dj) <= thresh:
            return Sqrt2Result(False, (i, j))
    return Sqrt2Result(True, None)


def _triple_ball_radius(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> float:
    """Minimum enclosing ball radius of three points (any dimension)."""
    pts = [a, b, c]
    best = np.inf
    for (i, j) in ((0, 1), (0, 2), (1, 2)):
        mid = 0.5 * (pts[i] + pts[j])
        r = 0.5 * float(np.linalg.norm(pts[i] - pts[j]))
        third = pts[3 - i - j]
        if np.linalg.norm(third - mid) <= r + 1e-12:
            best = min(best, r)
    if np.isfinite(best):
        return best
    la = float(np.linalg.norm(b - c))
    lb = float(np.linalg.norm(a - c))
    lc = float(np.linalg.norm(a - b))
    s = 0.5 * (la + lb + lc)
    area_sq = max(s * (s - la) * (s - lb) * (s - lc), 0.0)
    if area_sq == 0.0:
        return 0.5 * max(la, lb, lc)
    return la * lb * lc / (4.0 * math.sqrt(area_sq))


def triple_ball_check(eq: ClusteredEquilibrium) -> TripleBallResult:
    """True iff no three distinct confidence balls share a point, i.e.
    every triple of centers has minimum enclosing ball radius >= q."""
    for triple in itertools.combinations(range(eq.k), 3):
        r = _triple_ball_radius(*(eq.centers[i] for i in triple))
        if r < eq.q:
            return TripleBallResult(False, triple)
    return TripleBallResult(True, None)


# ---------------------------------------------------------------------------
# the delta = 0 reduced dynamics (closed form)
# ---------------------------------------------------------------------------


def zero_agent_reduced_field(eq: ClusteredEquilibrium, x0: np.ndarray) -> np.ndarray:
    """Velocity of a weightless zero agent: attraction toward every
    cluster whose confidence ball (strictly) contains x0."""
    x0 = np.asarray(x0, dtype=float).ravel()
    dist = np.linalg.norm(eq.centers - x0[None, :], axis=1)
    active = dist < eq.q
    if not active.any():
        return np.zeros_like(x0)
    w = eq.weights[active]
    return (w[:, None] * (eq.centers[active] - x0[None, :])).sum(axis=0)


def _earliest_sphere_root(a: np.ndarray, b: np.ndarray, q: float, s_hi: float):
    """Largest s in (0, s_hi) with |a + s b| = q, where the segment point
    is m_S + s (x0 - m_S) and a = m_S - center. Returns None if no root."""
    A = float(b @ b)
    B = 2.0 * float(a @ b)
    C = float(a @ a) - q * q
    if A == 0.0:
        if B == 0.0:
            return None
        s = -C / B
        return s if 0.0 < s < s_hi else None
    disc = B * B - 4.0 * A * C
    if disc < 0.0:
        return None
    root = math.sqrt(disc)
    cands = sorted(((-B + root) / (2.0 * A), (-B - root) / (2.0 * A)), reverse=True)
    for s in cands:
        if 0.0 < s < s_hi:
            return s
    return None


def classify_zero_trajectory(
    eq: ClusteredEquilibrium,
    x0: np.ndarray,
    max_switches: int = 1000,
    *,
    surface_tol: float = 1e-12,
) -> TrajectoryType:
    """Type the delta = 0 zero-agent trajectory from x0.

    Inside a region with active set S the flow runs along the straight
    segment toward m_S with the exponential parameter s = exp(-W_S tau),
    so each leg is resolved in closed form. Type 1 means the trajectory
    reaches a zero-field region or an interior fixed point after finitely
    many clean single-sphere crossings; tangential, simultaneous, or
    non-generic encounters are reported as irregular, and exceeding
    `max_switches` as suspected type 2.
    """
    x = np.asarray(x0, dtype=float).ravel()
    if x.shape[0] != eq.d:
        raise ValueError("x0 dimension mismatch")
    q = eq.q
    dist = np.linalg.norm(eq.centers - x[None, :], axis=1)
    if np.any(np.abs(dist - q) <= surface_tol * max(1.0, q)):
        raise InitialOnSurface("initial zero opinion sits on a switching sphere")
    active = dist < q

    switches = 0
    while True:
        if not active.any():
            return TrajectoryType(TrajectoryKind.TYPE1, switches)
        w_act = eq.weights[active]
        m_s = (w_act[:, None] * eq.centers[active]).sum(axis=0) / w_act.sum()
        b = x - m_s
        # earliest crossing: largest s in (0,1) over all spheres
        best_s, best_i = None, None
        for i in range(eq.k):
            s_i = _earliest_sphere_root(m_s - eq.centers[i], b, q, 1.0 - 1e-14)
            if s_i is not None and (best_s is None or s_i > best_s):
                best_s, best_i = s_i, i
        if best_s is None:
            # converges to m_S; require the fixed point strictly interior
            d_lim = np.linalg.norm(eq.centers - m_s[None, :], axis=1)
            margin = np.abs(d_lim - q)
            if np.any(margin <= 1e-9 * max(1.0, q)):
                return TrajectoryType(
                    TrajectoryKind.IRREGULAR, switches, "limit point on a sphere"
                )
            consistent = np.all((d_lim < q) == active)
            if consistent:
                return TrajectoryType(TrajectoryKind.TYPE1, switches)
            return TrajectoryType(
                TrajectoryKind.IRREGULAR, switches, "inconsistent limit membership"
            )
        # simultaneous crossings?
        x_cross = m_s + best_s * b
        d_cross = np.linalg.norm(eq.centers - x_cross[None, :], axis=1)
        on_spheres = np.nonzero(np.abs(d_cross - q) <= 1e-10 * max(1.0, q))[0]
        if on_spheres.size > 1:
            return TrajectoryType(
                TrajectoryKind.IRREGULAR, switches, "simultaneous sphere crossing"
            )
        l = int(best_i)
        v_cur = zero_agent_reduced_field_from(eq, x_cross, active)
        toggled = active.copy()
        toggled[l] = ~toggled[l]
        v_new = zero_agent_reduced_field_from(eq, x_cross, toggled)
        normal = x_cross - eq.centers[l]
        rate_cur = 2.0 * float(normal @ v_cur)
        rate_new = 2.0 * float(normal @ v_new)
        scale = max(1.0, abs(rate_cur), abs(rate_new))
        if abs(rate_cur) <= 1e-10 * scale or abs(rate_new) <= 1e-10 * scale:
            return TrajectoryType(
                TrajectoryKind.IRREGULAR, switches, f"tangential graze on sphere {l}"
            )
        if (rate_cur > 0.0) != (rate_new > 0.0):
            return TrajectoryType(
                TrajectoryKind.IRREGULAR, switches, f"non-transversal crossing at sphere {l}"
            )
        active = toggled
        x = x_cross
        switches += 1
        if switches > max_switches:
            return TrajectoryType(TrajectoryKind.TYPE2_SUSPECTED, switches)


def zero_agent_reduced_field_from(
    eq: ClusteredEquilibrium, x0: np.ndarray, active: np.ndarray
) -> np.ndarray:
    """Reduced field with an explicitly prescribed active cluster set."""
    if not active.any():
        return np.zeros_like(x0)
    w = eq.weights[active]
    return (w[:, None] * (eq.centers[active] - x0[None, :])).sum(axis=0)


# ---------------------------------------------------------------------------
# measured disruption
# ---------------------------------------------------------------------------


def scenario_system(scn: ZeroAgentScenario) -> tuple[SystemState, KernelMatrix]:
    eq = scn.equilibrium
    k = eq.k
    opinions = np.vstack([scn.x0[None, :], eq.centers])
    weights = np.concatenate([[scn.delta], eq.weights])
    if scn.homogeneous_bounds:
        kernels = KernelMatrix.homogeneous(
            k + 1, KernelSpec(KernelFamily.INDICATOR, q=eq.q)
        )
    else:
        entries = {}
        cluster_spec = KernelSpec(KernelFamily.INDICATOR, q=eq.q)
        for i in range(1, k + 1):
            entries[(0, i)] = KernelSpec(KernelFamily.INDICATOR, q=float(scn.q0[i - 1]))
            for j in range(i + 1, k + 1):
                entries[(i, j)] = cluster_spec
        kernels = KernelMatrix(k + 1, entries)
    return SystemState(opinions, weights), kernels


def default_sweep_config(delta: float) -> IntegratorConfig:
    """Horizon scaled to the zero-agent drift timescale 1/delta."""
    return IntegratorConfig(t_max=max(50.0, 20.0 / delta))


def measure_delta(
    scn: ZeroAgentScenario,
    cfg: IntegratorConfig | None = None,
    *,
    branch_cap: int = 16,
) -> tuple[float, int]:
    """Measured disruption of the equilibrium by the weighted zero agent.

    Integrates the (k+1)-agent system with full event handling; the
    disruption is the sup over dense-output samples, event states, and
    explored solution branches of the cluster displacements
    |x_i(t) - x_i*| (i >= 1). Every non-unique continuation spawns both
    branches of the blocking pair, up to `branch_cap` leaves.
    """
    if scn.delta <= 0.0:
        raise ValueError("measure_delta needs delta > 0")
    cfg = cfg or default_sweep_config(scn.delta)
    initial, kernels = scenario_system(scn)
    centers = scn.equilibrium.centers

    worst = 0.0
    leaves = 0
    stack: list[tuple[SystemState, dict]] = [(initial, {})]
    spawned = 1
    while stack:
        state, overrides = stack.pop()
        try:
            traj = integrate(state, kernels, cfg, surface_overrides=overrides)
        except NonUniqueContinuation as exc:
            pair = getattr(exc, "pair", None)
            if pair is None:
                raise
            spawned += 1
            if spawned > branch_cap:
                raise BranchExplosion(
                    f"more than {branch_cap} solution branches while measuring Delta"
                ) from exc
            stack.append((state, {**overrides, pair: True}))
            stack.append((state, {**overrides, pair: False}))
            continue
        for _, s in traj.samples:
            dev = float(np.max(np.linalg.norm(s.opinions[1:] - centers, axis=1)))
            if dev > worst:
                worst = dev
        if traj.terminated_by is Termination.NON_UNIQUE:
            blocked = [e for e in traj.events if e.edge_active_after is None]
            pair = blocked[-1].pair
            spawned += 1
            if spawned > branch_cap:
                raise BranchExplosion(
                    f"more than {branch_cap} solution branches while measuring Delta"
                )
            resume = traj.final_state
            stack.append((resume, {pair: True}))
            stack.append((resume, {pair: False}))
        else:
            leaves += 1
    return worst, leaves


def delta_sweep(
    eq: ClusteredEquilibrium,
    x0: np.ndarray,
    deltas: Sequence[float],
    cfg: IntegratorConfig | None = None,
    *,
    q0: Sequence[float] | None = None,
    branch_cap: int = 16,
) -> DeltaSweep:
    """Measure the disruption across decreasing zero-agent weights and
    attach the monotone-trend and linear-scaling diagnostics."""
    deltas = [float(d) for d in deltas]
    if not deltas or any(d <= 0.0 for d in deltas):
        raise ValueError("deltas must be positive")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError("deltas must be strictly decreasing")
    points = []
    for d in deltas:
        scn = ZeroAgentScenario(eq, x0, d, q0=q0)
        run_cfg = replace(cfg, t_max=max(50.0, 20.0 / d)) if cfg else default_sweep_config(d)
        value, branches = measure_delta(scn, run_cfg, branch_cap=branch_cap)
        points.append(SweepPoint(d, value, branches))
    values = [p.disruption for p in points]
    monotone = all(b < a for a, b in zip(values, values[1:]))
    if len(points) >= 2:
        (d1, v1), (d2, v2) = (
            (points[-2].delta, points[-2].disruption),
            (points[-1].delta, points[-1].disruption),
        )
        limit = v2 - d2 * (v1 - v2) / (d1 - d2)
    else:
        limit = values[-1]
    ratios = tuple(p.disruption / p.delta for p in points)
    return DeltaSweep(tuple(points), monotone, limit, ratios)


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


def theorem_verdicts(
    eq: ClusteredEquilibrium,
    *,
    tol: float = 1e-9,
    max_k_exhaustive: int = 20,
) -> RobustnessReport:
    """Analytic robustness verdicts for a unit-confidence-bound equilibrium.

    Necessary direction: a generic equilibrium satisfying SCMC is not
    robust. Sufficient direction: generic, non-SCMC, no triple ball
    intersection, and the sqrt(2) pair condition give robustness (almost
    surely and uniformly). Anything else is inconclusive; in particular
    non-SCMC alone is left open.
    """
    if eq.q != 1.0:
        raise ValueError("the robustness theorems assume a common bound q = 1")
    scmc = scmc_check(eq, max_k_exhaustive)
    generic = genericity_check(eq, tol, max_k_exhaustive)
    sqrt2 = sqrt2_hypothesis(eq)
    balls = triple_ball_check(eq)
    necessary = (
        NecessaryVerdict.NOT_ROBUST_SCMC
        if generic.is_generic and scmc.holds
        else NecessaryVerdict.INCONCLUSIVE
    )
    sufficient = (
        SufficientVerdict.ROBUST_THM
        if generic.is_generic and not scmc.holds and balls.holds and sqrt2.holds
        else SufficientVerdict.INCONCLUSIVE
    )
    return RobustnessReport(scmc, generic, sqrt2, balls, necessary, sufficient)


def robustness_report(
    eq: ClusteredEquilibrium,
    x0: np.ndarray | None = None,
    deltas: Sequence[float] = (),
    cfg: IntegratorConfig | None = None,
    *,
    q0: Sequence[float] | None = None,
    branch_cap: int = 16,
    tol: float = 1e-9,
    max_k_exhaustive: int = 20,
) -> RobustnessReport:
    """Analytic verdicts plus, when requested, a measured delta sweep.

    Heterogeneous zero-agent bounds are accepted by the measurement
    operations but refused here: the theorem hypotheses assume one shared
    bound.
    """
    if q0 is not None and np.any(np.asarray(q0, dtype=float) != eq.q):
        raise HeterogeneousKernels(
            "robustness verdicts assume homogeneous zero-agent bounds"
        )
    report = theorem_verdicts(eq, tol=tol, max_k_exhaustive=max_k_exhaustive)
    if x0 is not None and deltas:
        sweep = delta_sweep(eq, x0, deltas, cfg, q0=q0, branch_cap=branch_cap)
        report = replace(report, sweep=sweep)
    return report
