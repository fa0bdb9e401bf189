"""Command-line interface.

Exit codes: 0 on success, 2 for configuration problems, 3 when a run
aborts numerically. The HKFLOW_SEED environment variable overrides the
seed of any loaded experiment config.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from .equilibrium import classify_state
from .errors import ConfigError, NumericalAbort
from .harness import export, run_experiment, spec_from_json, table1_stats
from .model import KernelFamily, KernelMatrix, KernelSpec, SystemState
from .robustness import (
    ClusteredEquilibrium,
    radius_intersections,
    robustness_report,
)

SEED_ENV = "HKFLOW_SEED"


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def _apply_seed_env(doc: dict) -> dict:
    override = os.environ.get(SEED_ENV)
    if override is not None:
        try:
            doc = {**doc, "seed": int(override)}
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV}={override!r} is not an integer") from exc
    return doc


def _parse_vector(text: str) -> np.ndarray:
    try:
        return np.array([float(x) for x in text.split(",") if x != ""])
    except ValueError as exc:
        raise ConfigError(f"expected a comma-separated vector, got {text!r}") from exc


def _cmd_simulate(args) -> int:
    doc = _apply_seed_env(_load_json(args.config))
    spec = spec_from_json(doc)
    records = run_experiment(spec, workers=args.workers)
    ok = [r for r in records if not r.failed]
    print(f"runs: {len(records)}  completed: {len(ok)}  failed: {len(records) - len(ok)}")
    for rec in records:
        if rec.failed:
            print(f"  run {rec.run_index}: FAILED ({rec.error})")
        else:
            k = rec.cluster_set.k if rec.cluster_set else "-"
            print(
                f"  run {rec.run_index}: {rec.terminated_by} at t={rec.final_state.time:.4g}, "
                f"clusters={k}, verdict={rec.equilibrium_class.verdict.value}"
            )
    if args.out:
        paths = export(spec, records, args.out)
        print(f"wrote {len(paths)} files to {args.out}")
    return 0


def _cmd_robustness(args) -> int:
    doc = _load_json(args.config)
    try:
        centers = np.asarray(doc["centers"], dtype=float)
        weights = np.asarray(doc["weights"], dtype=float)
        q = float(doc.get("q", 1.0))
        q0 = doc.get("q0")
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid equilibrium config: {exc}") from exc
    try:
        eq = ClusteredEquilibrium(centers, weights, q=q)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    x0 = _parse_vector(args.x0)
    deltas = [float(x) for x in args.deltas.split(",")] if args.deltas else []
    report = robustness_report(eq, x0, deltas, q0=q0)
    print(f"clusters: {eq.k}  dimension: {eq.d}")
    print(f"SCMC: {report.scmc.holds} (exhaustive={report.scmc.exhaustive}, "
          f"witness={sorted(report.scmc.witness) if report.scmc.witness else None})")
    print(f"generic: {report.generic.is_generic}"
          + (f" violations={list(report.generic.violations)}" if report.generic.violations else ""))
    print(f"sqrt2 condition: {report.sqrt2.holds}")
    print(f"triple balls disjoint: {report.triple_balls.holds}")
    print(f"necessary verdict: {report.necessary_verdict.value}")
    print(f"sufficient verdict: {report.sufficient_verdict.value}")
    if report.sweep is not None:
        for p in report.sweep.points:
            print(f"  delta={p.delta:g}  Delta={p.disruption:.6g}  branches={p.branch_count}")
        print(f"  decreasing: {report.sweep.monotone_decreasing}  "
              f"limit estimate: {report.sweep.limit_estimate:.6g}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc_out = {
            "scmc": report.scmc.holds,
            "scmc_witness": sorted(report.scmc.witness) if report.scmc.witness else None,
            "generic": report.generic.is_generic,
            "sqrt2": report.sqrt2.holds,
            "triple_balls_free": report.triple_balls.holds,
            "necessary_verdict": report.necessary_verdict.value,
            "sufficient_verdict": report.sufficient_verdict.value,
            "sweep": [
                {"delta": p.delta, "disruption": p.disruption, "branches": p.branch_count}
                for p in (report.sweep.points if report.sweep else ())
            ],
        }
        path = out / "robustness.json"
        path.write_text(json.dumps(doc_out, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        print(f"wrote {path}")
    return 0


def _read_state_csv(path: str) -> SystemState:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read state {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigError(f"state file {path} is empty")
    header = [h.strip().lower() for h in lines[0].split(",")]
    has_header = any(h.startswith("comp") or h == "weight" for h in header)
    rows = lines[1:] if has_header else lines
    weight_col = header.index("weight") if has_header and "weight" in header else None
    opinions, weights = [], []
    for ln in rows:
        vals = [float(x) for x in ln.split(",")]
        if weight_col is not None:
            weights.append(vals[weight_col])
            vals = [v for i, v in enumerate(vals) if i != weight_col]
        opinions.append(vals)
    w = np.asarray(weights) if weights else np.ones(len(opinions))
    return SystemState(np.asarray(opinions), w)


def _cmd_classify(args) -> int:
    state = _read_state_csv(args.state)
    kernels = KernelMatrix.homogeneous(
        state.n, KernelSpec(KernelFamily.INDICATOR, q=args.q)
    )
    cls = classify_state(state, kernels, eps=args.eps)
    print(f"verdict: {cls.verdict.value}")
    if cls.partition is not None:
        blocks = [sorted(b) for b in cls.partition.blocks]
        print(f"clusters: {len(blocks)}")
        for i, b in enumerate(blocks):
            print(f"  cluster {i}: agents {b}")
    return 0


def _cmd_table1(args) -> int:
    doc = {
        "n": args.n,
        "d": args.d,
        "radius": args.radius,
        "kernel": {"family": "indicator", "q": 1.0},
        "weights": {"kind": "uniform"},
        "seed": args.seed,
        "runs": args.runs,
        "integrator": {
            "rel_tol": 1e-6,
            "abs_tol": 1e-9,
            "t_max": 500.0,
            "max_samples": 512,
        },
        "analyses": {
            "pairwise_scmc": True,
            "scmc": True,
            "genericity": True,
            "sqrt2": True,
        },
    }
    spec = spec_from_json(_apply_seed_env(doc))
    records = run_experiment(spec, workers=args.workers)
    stats = table1_stats(records)
    print(f"agents: {args.n}  experiments: {stats.runs}  failed: {stats.failed}")
    print(f"pairwise SCMC:            {stats.count_pairwise_scmc}")
    print(f"sufficiency hypotheses:   {stats.count_sufficient_hypotheses}")
    print(f"neither:                  {stats.count_neither}")
    hist = ", ".join(f"{k} clusters x {c}" for k, c in stats.cluster_histogram)
    print(f"cluster counts: {hist}")
    if args.out:
        paths = export(spec, records, args.out)
        print(f"wrote {len(paths)} files to {args.out}")
    return 0


def _cmd_geometry(args) -> int:
    if not args.lemma44:
        raise ConfigError("geometry requires --lemma44")
    x2 = _parse_vector(args.x2)
    sep = float(np.linalg.norm(x2))
    if sep <= 1.0:
        raise ConfigError("|x2| must exceed 1 (centers more than a unit apart)")
    rng = np.random.default_rng(args.seed)
    d = x2.shape[0]
    e = x2 / sep
    n_uniform = args.samples // 2
    lams = rng.normal(size=(n_uniform, d))
    lams /= np.linalg.norm(lams, axis=1)[:, None]
    cs = np.linspace(-0.999, 0.999, args.samples - n_uniform - 1).tolist()
    # the two-intersection window is lam.x2 in (sqrt(sep^2-1), sep^2/2)
    low2 = sep * sep - 1.0
    if low2 > 0.0 and sep < math.sqrt(2.0):
        cs.append(0.5 * (math.sqrt(low2) + sep * sep / 2.0) / sep)
    counts = [radius_intersections(np.zeros(d), x2, lam) for lam in lams]
    for c in cs:
        u = rng.normal(size=d)
        u -= (u @ e) * e
        nu = np.linalg.norm(u)
        if nu == 0.0:
            continue
        u /= nu
        lam = c * e + math.sqrt(max(1.0 - c * c, 0.0)) * u
        counts.append(radius_intersections(np.zeros(d), x2, lam))
    max_count = max(counts)
    frac2 = sum(1 for c in counts if c == 2) / len(counts)
    if sep >= math.sqrt(2.0):
        predicted = "at most 1"
        agrees = max_count <= 1
    else:
        predicted = "2 for some direction"
        agrees = max_count == 2
    print(f"|x2 - x1| = {sep:.6g}  (sqrt(2) = {math.sqrt(2.0):.6f})")
    print(f"sampled directions: {len(counts)}")
    print(f"max intersections observed: {max_count}  (lemma predicts {predicted})")
    print(f"fraction with two intersections: {frac2:.4f}")
    return 0 if agrees else 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hkflow",
        description="Bounded-confidence opinion dynamics: simulation and robustness analysis",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a batch experiment from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("robustness", help="analytic verdicts and a measured delta sweep")
    p.add_argument("--config", required=True, help="JSON with centers, weights, q")
    p.add_argument("--x0", required=True, help="initial zero opinion, comma separated")
    p.add_argument("--deltas", default="", help="decreasing list, e.g. 1e-2,1e-3,1e-4")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_robustness)

    p = sub.add_parser("classify", help="equilibrium taxonomy of a saved state")
    p.add_argument("--state", required=True, help="CSV of agent opinions (comp_1..comp_d[,weight])")
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--eps", type=float, default=1e-4)
    p.set_defaults(func=_cmd_classify)

    p = sub.add_parser("table1", help="cluster-condition frequencies over random batches")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--radius", type=float, default=5.0)
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_table1)

    p = sub.add_parser("geometry", help="sampled check of the radius-intersection lemma")
    p.add_argument("--lemma44", action="store_true")
    p.add_argument("--x2", required=True, help="second center, comma separated")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_geometry)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
