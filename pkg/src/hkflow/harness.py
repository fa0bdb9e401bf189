"""Experiment orchestration: seeded scenario generation, batch runs,
summary statistics, and file export.

Reproducibility contract: a spec plus its seed determines every output
byte. Randomness comes from the counter-based Philox generator keyed by
the experiment seed; run r draws from the disjoint counter block
r * 2^192, so runs are independent substreams regardless of scheduling
order or worker count.
"""

from __future__ import annotations

import itertools
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .equilibrium import (
    ClusterSet,
    EquilibriumClass,
    EquilibriumVerdict,
    classify_state,
    merge_clusters,
)
from .errors import ConfigError, MissingVerdicts, NumericalAbort
from .integrator import IntegratorConfig, Trajectory, integrate
from .model import (
    KernelFamily,
    KernelMatrix,
    KernelSpec,
    MonitorSample,
    SystemState,
    monitors,
)
from .robustness import (
    ClusteredEquilibrium,
    DeltaSweep,
    GenericityResult,
    ScmcResult,
    Sqrt2Result,
    TripleBallResult,
    center_of_mass,
    delta_sweep,
    genericity_check,
    scmc_check,
    sqrt2_hypothesis,
    triple_ball_check,
)

__all__ = [
    "WeightScheme",
    "AnalysisFlags",
    "ExperimentSpec",
    "RunVerdicts",
    "RunRecord",
    "SummaryStats",
    "run_stream",
    "sample_initial",
    "run_experiment",
    "table1_stats",
    "export",
    "read_trajectory_csv",
    "spec_from_json",
    "spec_to_json",
]


@dataclass(frozen=True)
class WeightScheme:
    """Agent weights: all ones, an explicit list, or log-uniform draws."""

    kind: str = "uniform"  # "uniform" | "list" | "log_uniform"
    values: tuple[float, ...] | None = None
    low: float = 0.1
    high: float = 10.0

    def __post_init__(self) -> None:
        if self.values is not None:
            object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.kind not in ("uniform", "list", "log_uniform"):
            raise ConfigError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "list" and not self.values:
            raise ConfigError("list weight scheme needs values")
        if self.kind == "log_uniform" and not (0.0 < self.low < self.high):
            raise ConfigError("log_uniform weights need 0 < low < high")

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return np.ones(n)
        if self.kind == "list":
            vals = np.asarray(self.values, dtype=float)
            if vals.shape[0] != n:
                raise ConfigError(f"{vals.shape[0]} weights for n={n}")
            return vals
        return np.exp(rng.uniform(np.log(self.low), np.log(self.high), size=n))


@dataclass(frozen=True)
class AnalysisFlags:
    pairwise_scmc: bool = False
    scmc: bool = False
    genericity: bool = False
    sqrt2: bool = False
    sweep_deltas: tuple[float, ...] = ()
    x0_policy: str = "mutual_midpoint"  # or "random_in_union"
    sweep_x0: tuple[float, ...] | None = None  # explicit vector policy

    @property
    def any_verdicts(self) -> bool:
        return self.pairwise_scmc or self.scmc or self.genericity or self.sqrt2

    def __post_init__(self) -> None:
        object.__setattr__(self, "sweep_deltas", tuple(float(d) for d in self.sweep_deltas))
        if self.sweep_x0 is not None:
            object.__setattr__(self, "sweep_x0", tuple(float(v) for v in self.sweep_x0))
        if self.x0_policy not in ("mutual_midpoint", "random_in_union", "explicit"):
            raise ConfigError(f"unknown x0 policy {self.x0_policy!r}")
        if self.x0_policy == "explicit" and self.sweep_x0 is None:
            raise ConfigError("explicit x0 policy needs sweep_x0")


@dataclass(frozen=True)
class ExperimentSpec:
    n: int
    d: int
    radius: float
    kernel: KernelSpec
    weights: WeightScheme = WeightScheme()
    seed: int = 0
    runs: int = 1
    integrator: IntegratorConfig = IntegratorConfig()
    analyses: AnalysisFlags = AnalysisFlags()
    initial_opinions: tuple | None = None  # explicit override of the sampler
    eps_cluster: float = 1e-4
    probe_orders: tuple[int, ...] = (1, 2, 3)
    probes_per_order: int = 3

    def __post_init__(self) -> None:
        if self.n < 1 or self.d < 1 or self.runs < 1:
            raise ConfigError("n, d, and runs must all be at least 1")
        if self.radius <= 0.0:
            raise ConfigError("radius must be positive")
        if self.initial_opinions is not None:
            arr = np.asarray(self.initial_opinions, dtype=float)
            if arr.ndim == 1:
                arr = arr[:, None]
            if arr.shape != (self.n, self.d):
                raise ConfigError(
                    f"initial_opinions shape {arr.shape} != ({self.n}, {self.d})"
                )
            object.__setattr__(
                self, "initial_opinions", tuple(tuple(row) for row in arr)
            )


@dataclass(frozen=True)
class RunVerdicts:
    pairwise_scmc: ScmcResult | None = None
    scmc: ScmcResult | None = None
    genericity: GenericityResult | None = None
    sqrt2: Sqrt2Result | None = None
    triple_balls: TripleBallResult | None = None
    sufficient_hypotheses: bool | None = None
    sweep: DeltaSweep | None = None


@dataclass(frozen=True)
class RunRecord:
    run_index: int
    seed: int
    final_state: SystemState | None
    terminated_by: str | None
    cluster_set: ClusterSet | None
    equilibrium_class: EquilibriumClass | None
    monitor_trace: tuple[MonitorSample, ...]
    verdicts: RunVerdicts | None
    trajectory: Trajectory | None
    failed: bool = False
    error: str | None = None
    wall_time: float = field(default=0.0, compare=False)


@dataclass(frozen=True)
class SummaryStats:
    runs: int
    failed: int
    count_pairwise_scmc: int
    count_sufficient_hypotheses: int
    count_neither: int
    cluster_histogram: tuple[tuple[int, int], ...]  # (cluster count, occurrences)


def run_stream(seed: int, run_index: int) -> np.random.Generator:
    """The documented splittable substream: Philox keyed by the experiment
    seed, with the 256-bit counter offset to block run_index * 2^192."""
    return np.random.Generator(
        np.random.Philox(key=np.uint64(seed & (2**64 - 1)), counter=run_index << 192)
    )


def sample_initial(
    n: int,
    d: int,
    radius: float,
    rng: np.random.Generator,
    weights: np.ndarray | None = None,
) -> SystemState:
    """n opinions i.i.d. uniform in the d-ball of the given radius, by
    rejection from the bounding cube."""
    out = np.empty((n, d))
    have = 0
    while have < n:
        draw = rng.uniform(-radius, radius, size=(2 * (n - have) + 8, d))
        keep = draw[np.einsum("ij,ij->i", draw, draw) <= radius * radius]
        take = min(keep.shape[0], n - have)
        out[have : have + take] = keep[:take]
        have += take
    w = np.ones(n) if weights is None else weights
    return SystemState(out, w)


def _sweep_x0(flags: AnalysisFlags, eq: ClusteredEquilibrium, rng) -> np.ndarray | None:
    if flags.x0_policy == "explicit":
        return np.asarray(flags.sweep_x0, dtype=float)
    if flags.x0_policy == "mutual_midpoint":
        if eq.k < 2:
            return eq.centers[0]
        best = None
        for i, j in itertools.combinations(range(eq.k), 2):
            dij = float(np.linalg.norm(eq.centers[i] - eq.centers[j]))
            if best is None or dij < best[0]:
                best = (dij, (i, j))
        return center_of_mass(eq, best[1])
    # random_in_union: rejection-sample the union of confidence balls
    for _ in range(4096):
        i = int(rng.integers(eq.k))
        probe = eq.centers[i] + rng.uniform(-eq.q, eq.q, size=eq.d)
        if np.linalg.norm(probe - eq.centers[i]) < eq.q:
            return probe
    return eq.centers[0]


def _analyze(eq: ClusteredEquilibrium, flags: AnalysisFlags, rng) -> RunVerdicts:
    pairwise = scmc_check(eq, max_k_exhaustive=0) if flags.pairwise_scmc else None
    full = scmc_check(eq) if (flags.scmc or flags.sqrt2 or flags.genericity) else None
    generic = genericity_check(eq) if flags.genericity else None
    s2 = sqrt2_hypothesis(eq) if flags.sqrt2 else None
    balls = triple_ball_check(eq) if flags.sqrt2 else None
    sufficient = None
    if generic is not None and s2 is not None and full is not None:
        sufficient = bool(
            generic.is_generic and not full.holds and balls.holds and s2.holds
        )
    sweep = None
    if flags.sweep_deltas:
        x0 = _sweep_x0(flags, eq, rng)
        sweep = delta_sweep(eq, x0, list(flags.sweep_deltas))
    return RunVerdicts(
        pairwise_scmc=pairwise,
        scmc=full,
        genericity=generic,
        sqrt2=s2,
        triple_balls=balls,
        sufficient_hypotheses=sufficient,
        sweep=sweep,
    )


def _single_run(spec: ExperimentSpec, run_index: int) -> RunRecord:
    started = time.perf_counter()
    rng = run_stream(spec.seed, run_index)
    weights = spec.weights.draw(spec.n, rng)
    if spec.initial_opinions is not None:
        state = SystemState(np.asarray(spec.initial_opinions, dtype=float), weights)
    else:
        state = sample_initial(spec.n, spec.d, spec.radius, rng, weights)
    probes = [
        (r, rng.uniform(-spec.radius, spec.radius, size=spec.d))
        for r in spec.probe_orders
        for _ in range(spec.probes_per_order)
    ]
    kernels = KernelMatrix.homogeneous(spec.n, spec.kernel)
    try:
        traj = integrate(state, kernels, spec.integrator)
    except NumericalAbort as exc:
        return RunRecord(
            run_index, spec.seed, None, None, None, None, (), None, None,
            failed=True, error=f"{type(exc).__name__}: {exc}",
            wall_time=time.perf_counter() - started,
        )
    final = traj.final_state
    eq_class = classify_state(final, kernels, spec.eps_cluster)
    cluster_set = None
    verdicts = None
    if eq_class.verdict is not EquilibriumVerdict.NOT_EQUILIBRIUM:
        cluster_set, reduced = merge_clusters(final, kernels, spec.eps_cluster)
        if spec.analyses.any_verdicts or spec.analyses.sweep_deltas:
            eq = ClusteredEquilibrium(
                cluster_set.centers, cluster_set.block_weights, q=spec.kernel.q
            )
            verdicts = _analyze(eq, spec.analyses, rng)
    trace = tuple(monitors(s, probes) for _, s in traj.samples)
    return RunRecord(
        run_index=run_index,
        seed=spec.seed,
        final_state=final,
        terminated_by=traj.terminated_by.value,
        cluster_set=cluster_set,
        equilibrium_class=eq_class,
        monitor_trace=trace,
        verdicts=verdicts,
        trajectory=traj,
        wall_time=time.perf_counter() - started,
    )


def run_experiment(spec: ExperimentSpec, workers: int = 1) -> list[RunRecord]:
    """Execute every run of the spec; aborted runs become failed records,
    never batch failures. Results are ordered by run index regardless of
    worker scheduling."""
    indices = list(range(spec.runs))
    if workers <= 1 or spec.runs == 1:
        return [_single_run(spec, i) for i in indices]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_single_run, [spec] * spec.runs, indices))


def table1_stats(records: Sequence[RunRecord]) -> SummaryStats:
    """Mutually exclusive category counts: pairwise SCMC first, then the
    sufficiency hypotheses, else neither. Failed runs, and runs whose
    final state never reached an equilibrium (nothing to categorize), are
    excluded from the denominators and reported in the failure count."""
    ok = [
        r for r in records
        if not r.failed
        and not (
            r.equilibrium_class is not None
            and r.equilibrium_class.verdict is EquilibriumVerdict.NOT_EQUILIBRIUM
        )
    ]
    failed = len(records) - len(ok)
    c_pair = c_suff = c_neither = 0
    hist: dict[int, int] = {}
    for rec in ok:
        if rec.verdicts is None or rec.verdicts.pairwise_scmc is None:
            raise MissingVerdicts(f"run {rec.run_index} carries no verdicts")
        k = rec.cluster_set.k if rec.cluster_set is not None else 0
        hist[k] = hist.get(k, 0) + 1
        if rec.verdicts.pairwise_scmc.holds:
            c_pair += 1
        elif rec.verdicts.sufficient_hypotheses:
            c_suff += 1
        else:
            c_neither += 1
    return SummaryStats(
        runs=len(ok),
        failed=failed,
        count_pairwise_scmc=c_pair,
        count_sufficient_hypotheses=c_suff,
        count_neither=c_neither,
        cluster_histogram=tuple(sorted(hist.items())),
    )


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8", newline="\n")
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc


def write_trajectory_csv(samples, d: int, path: Path) -> None:
    lines = ["t,agent," + ",".join(f"comp_{l + 1}" for l in range(d))]
    for t, state in samples:
        x = state.opinions if isinstance(state, SystemState) else np.asarray(state)
        for agent in range(x.shape[0]):
            comps = ",".join(_fmt(c) for c in x[agent])
            lines.append(f"{_fmt(t)},{agent},{comps}")
    _write_text(path, "\n".join(lines) + "\n")


def read_trajectory_csv(path: Path):
    """Inverse of `write_trajectory_csv`: list of (t, (n, d) array)."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    lines = [ln for ln in text.split("\n") if ln]
    header = lines[0].split(",")
    d = len(header) - 2
    out: list[tuple[float, list]] = []
    for ln in lines[1:]:
        parts = ln.split(",")
        t = float(parts[0])
        agent = int(parts[1])
        comps = [float(p) for p in parts[2:]]
        if not out or out[-1][0] != t:
            out.append((t, []))
        assert agent == len(out[-1][1])
        out[-1][1].append(comps)
    return [(t, np.asarray(rows, dtype=float).reshape(-1, d)) for t, rows in out]


def write_monitor_csv(trace: Sequence[MonitorSample], path: Path) -> None:
    if not trace:
        _write_text(path, "t,m2\n")
        return
    d = len(trace[0].weighted_mean)
    cols = ["t"] + [f"mean_{l + 1}" for l in range(d)] + ["m2"]
    cols += [f"M{2 * r}_{i}" for i, (r, _k, _v) in enumerate(trace[0].dissipative)]
    lines = [",".join(cols)]
    for m in trace:
        row = [_fmt(m.time)] + [_fmt(v) for v in m.weighted_mean] + [_fmt(m.m2)]
        row += [_fmt(v) for (_r, _k, v) in m.dissipative]
        lines.append(",".join(row))
    _write_text(path, "\n".join(lines) + "\n")


def _run_summary(rec: RunRecord) -> dict:
    entry: dict = {
        "run": rec.run_index,
        "failed": rec.failed,
        "error": rec.error,
        "terminated_by": rec.terminated_by,
    }
    if rec.final_state is not None:
        entry["final_time"] = rec.final_state.time
        entry["final_opinions"] = rec.final_state.opinions.tolist()
        entry["weights"] = rec.final_state.weights.tolist()
    if rec.equilibrium_class is not None:
        entry["equilibrium_verdict"] = rec.equilibrium_class.verdict.value
    if rec.cluster_set is not None:
        entry["cluster_count"] = rec.cluster_set.k
        entry["cluster_centers"] = rec.cluster_set.centers.tolist()
        entry["cluster_weights"] = rec.cluster_set.block_weights.tolist()
    if rec.verdicts is not None:
        v = rec.verdicts
        entry["verdicts"] = {
            "pairwise_scmc": None if v.pairwise_scmc is None else v.pairwise_scmc.holds,
            "scmc": None if v.scmc is None else v.scmc.holds,
            "scmc_exhaustive": None if v.scmc is None else v.scmc.exhaustive,
            "generic": None if v.genericity is None else v.genericity.is_generic,
            "sqrt2": None if v.sqrt2 is None else v.sqrt2.holds,
            "triple_balls_free": None if v.triple_balls is None else v.triple_balls.holds,
            "sufficient_hypotheses": v.sufficient_hypotheses,
        }
        if v.sweep is not None:
            entry["verdicts"]["sweep"] = [
                {"delta": p.delta, "disruption": p.disruption, "branches": p.branch_count}
                for p in v.sweep.points
            ]
    return entry


def spec_to_json(spec: ExperimentSpec) -> dict:
    out = {
        "n": spec.n,
        "d": spec.d,
        "radius": spec.radius,
        "kernel": {"family": spec.kernel.family.value, "q": spec.kernel.q},
        "weights": {"kind": spec.weights.kind},
        "seed": spec.seed,
        "runs": spec.runs,
        "eps_cluster": spec.eps_cluster,
        "integrator": {
            "rel_tol": spec.integrator.rel_tol,
            "abs_tol": spec.integrator.abs_tol,
            "event_time_tol": spec.integrator.event_time_tol,
            "max_step": spec.integrator.max_step if np.isfinite(spec.integrator.max_step) else None,
            "t_max": spec.integrator.t_max,
            "max_switches": spec.integrator.max_switches,
            "stepper": spec.integrator.stepper,
            "surface_branch": spec.integrator.surface_branch,
            "eq_field_tol": spec.integrator.eq_field_tol,
            "eq_cluster_eps": spec.integrator.eq_cluster_eps,
            "tangency_rel_tol": spec.integrator.tangency_rel_tol,
            "surface_tol": spec.integrator.surface_tol,
            "max_samples": spec.integrator.max_samples,
            "raise_on_switch_cap": spec.integrator.raise_on_switch_cap,
        },
        "analyses": {
            "pairwise_scmc": spec.analyses.pairwise_scmc,
            "scmc": spec.analyses.scmc,
            "genericity": spec.analyses.genericity,
            "sqrt2": spec.analyses.sqrt2,
        },
    }
    if spec.kernel.coeffs:
        out["kernel"]["coeffs"] = list(spec.kernel.coeffs)
    if spec.weights.kind == "list":
        out["weights"]["values"] = list(spec.weights.values)
    if spec.weights.kind == "log_uniform":
        out["weights"]["low"] = spec.weights.low
        out["weights"]["high"] = spec.weights.high
    if spec.analyses.sweep_deltas:
        out["analyses"]["sweep"] = {
            "deltas": list(spec.analyses.sweep_deltas),
            "x0_policy": spec.analyses.x0_policy,
        }
        if spec.analyses.sweep_x0 is not None:
            out["analyses"]["sweep"]["x0"] = list(spec.analyses.sweep_x0)
    if spec.initial_opinions is not None:
        out["initial_opinions"] = [list(row) for row in spec.initial_opinions]
    return out


def spec_from_json(doc: dict) -> ExperimentSpec:
    try:
        kern = doc["kernel"]
        kernel = KernelSpec(
            KernelFamily(kern["family"]),
            q=float(kern["q"]),
            coeffs=tuple(kern.get("coeffs", ())),
        )
        wdoc = doc.get("weights", {"kind": "uniform"})
        weights = WeightScheme(
            kind=wdoc.get("kind", "uniform"),
            values=tuple(wdoc["values"]) if "values" in wdoc else None,
            low=float(wdoc.get("low", 0.1)),
            high=float(wdoc.get("high", 10.0)),
        )
        idoc = dict(doc.get("integrator", {}))
        if idoc.get("max_step") is None:
            idoc.pop("max_step", None)
        integrator = IntegratorConfig(**idoc)
        adoc = doc.get("analyses", {})
        sweep = adoc.get("sweep", {})
        analyses = AnalysisFlags(
            pairwise_scmc=bool(adoc.get("pairwise_scmc", False)),
            scmc=bool(adoc.get("scmc", False)),
            genericity=bool(adoc.get("genericity", False)),
            sqrt2=bool(adoc.get("sqrt2", False)),
            sweep_deltas=tuple(float(x) for x in sweep.get("deltas", ())),
            x0_policy=sweep.get("x0_policy", "mutual_midpoint"),
            sweep_x0=tuple(sweep["x0"]) if "x0" in sweep else None,
        )
        return ExperimentSpec(
            n=int(doc["n"]),
            d=int(doc["d"]),
            radius=float(doc["radius"]),
            kernel=kernel,
            weights=weights,
            seed=int(doc.get("seed", 0)),
            runs=int(doc.get("runs", 1)),
            integrator=integrator,
            analyses=analyses,
            initial_opinions=doc.get("initial_opinions"),
            eps_cluster=float(doc.get("eps_cluster", 1e-4)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid experiment config: {exc}") from exc


def export(
    spec: ExperimentSpec,
    records: Sequence[RunRecord],
    out_dir: Path | str,
    formats: Iterable[str] = ("trajectory", "monitors", "summary"),
) -> list[Path]:
    """Write per-run trajectory and monitor CSVs plus the summary JSON.

    Outputs are bytewise deterministic in (spec, seed): floats use
    shortest round-trip decimals, line endings are LF, and timing data is
    deliberately left out of the files.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    formats = set(formats)
    written: list[Path] = []
    for rec in records:
        if rec.trajectory is None:
            continue
        if "trajectory" in formats:
            p = out / f"trajectory_run{rec.run_index:03d}.csv"
            write_trajectory_csv(rec.trajectory.samples, spec.d, p)
            written.append(p)
        if "monitors" in formats:
            p = out / f"monitors_run{rec.run_index:03d}.csv"
            write_monitor_csv(rec.monitor_trace, p)
            written.append(p)
    if "summary" in formats:
        doc = {
            "spec": spec_to_json(spec),
            "runs": [_run_summary(r) for r in records],
            "stats": _stats_summary(records),
        }
        p = out / "summary.json"
        _write_text(p, json.dumps(doc, indent=2, sort_keys=True) + "\n")
        written.append(p)
    return written


def _stats_summary(records: Sequence[RunRecord]) -> dict:
    ok = [r for r in records if not r.failed]
    base = {
        "runs": len(ok),
        "failed": len(records) - len(ok),
        "terminations": {},
    }
    terms: dict[str, int] = {}
    for rec in ok:
        terms[rec.terminated_by] = terms.get(rec.terminated_by, 0) + 1
    base["terminations"] = dict(sorted(terms.items()))
    converged = [
        r for r in ok
        if r.equilibrium_class is not None
        and r.equilibrium_class.verdict is not EquilibriumVerdict.NOT_EQUILIBRIUM
    ]
    have_verdicts = converged and all(
        r.verdicts is not None and r.verdicts.pairwise_scmc is not None
        for r in converged
    )
    if have_verdicts:
        stats = table1_stats(records)
        base["table1"] = {
            "pairwise_scmc": stats.count_pairwise_scmc,
            "sufficient_hypotheses": stats.count_sufficient_hypotheses,
            "neither": stats.count_neither,
            "cluster_histogram": {str(k): v for k, v in stats.cluster_histogram},
        }
    return base
