"""Experiment harness tests: sampling, batch runs, stats, and export."""

import json
from importlib import resources

import numpy as np
import pytest

from hkflow.errors import ConfigError, MissingVerdicts
from hkflow.harness import (
    AnalysisFlags,
    ExperimentSpec,
    WeightScheme,
    export,
    read_trajectory_csv,
    run_experiment,
    run_stream,
    sample_initial,
    spec_from_json,
    spec_to_json,
    table1_stats,
    write_trajectory_csv,
)
from hkflow.integrator import IntegratorConfig
from hkflow.model import KernelFamily, KernelSpec

INDICATOR1 = KernelSpec(KernelFamily.INDICATOR, q=1.0)


def small_spec(**kw):
    base = dict(
        n=12,
        d=2,
        radius=2.0,
        kernel=INDICATOR1,
        seed=7,
        runs=2,
        integrator=IntegratorConfig(t_max=200.0, max_samples=256),
        analyses=AnalysisFlags(pairwise_scmc=True, scmc=True, genericity=True, sqrt2=True),
    )
    base.update(kw)
    return ExperimentSpec(**base)


# ---------------------------------------------------------------------------
# sampling and streams
# ---------------------------------------------------------------------------


def test_sample_initial_within_ball_and_centered():
    rng = run_stream(1, 0)
    state = sample_initial(100_000, 3, 5.0, rng)
    norms = np.linalg.norm(state.opinions, axis=1)
    assert np.all(norms <= 5.0)
    # mean of a uniform ball is the origin; sigma per axis is r/sqrt(5)
    sigma = 5.0 / np.sqrt(5.0) / np.sqrt(100_000)
    assert np.all(np.abs(state.opinions.mean(axis=0)) < 3.0 * sigma)


def test_sample_initial_deterministic():
    a = sample_initial(3, 2, 1.0, run_stream(42, 0)).opinions
    b = sample_initial(3, 2, 1.0, run_stream(42, 0)).opinions
    assert np.array_equal(a, b)


def test_run_streams_are_disjoint():
    a = run_stream(5, 0).random(8)
    b = run_stream(5, 1).random(8)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, run_stream(5, 0).random(8))


# ---------------------------------------------------------------------------
# run_experiment
# ---------------------------------------------------------------------------


def test_fixed_two_agent_run_merges_at_mean():
    spec = ExperimentSpec(
        n=2,
        d=1,
        radius=1.0,
        kernel=INDICATOR1,
        seed=0,
        runs=1,
        integrator=IntegratorConfig(t_max=30.0),
        initial_opinions=((0.0,), (0.8,)),
    )
    (rec,) = run_experiment(spec)
    assert not rec.failed
    assert rec.cluster_set.k == 1
    assert rec.cluster_set.centers[0, 0] == pytest.approx(0.4, abs=1e-8)


def test_weight_schemes():
    rng = run_stream(0, 0)
    assert np.all(WeightScheme("uniform").draw(4, rng) == 1.0)
    assert np.allclose(WeightScheme("list", values=(1.0, 2.0)).draw(2, rng), [1.0, 2.0])
    w = WeightScheme("log_uniform", low=0.5, high=2.0).draw(100, rng)
    assert np.all((w >= 0.5) & (w <= 2.0))
    with pytest.raises(ConfigError):
        WeightScheme("list")
    with pytest.raises(ConfigError):
        WeightScheme("nope")


def test_records_converge_and_carry_verdicts():
    records = run_experiment(small_spec())
    assert len(records) == 2
    for rec in records:
        assert not rec.failed
        assert rec.terminated_by in ("equilibrium", "t_max")
        assert rec.equilibrium_class.verdict.value in ("interior_F", "boundary_Fbar_only")
        assert rec.verdicts is not None
        assert rec.verdicts.pairwise_scmc is not None
        # monitor trace is monotone in m2 and conserves the mean
        trace = rec.monitor_trace
        m0 = np.array(trace[0].weighted_mean)
        for a, b in zip(trace, trace[1:]):
            assert b.m2 <= a.m2 + 1e-9 * trace[0].m2
        assert np.linalg.norm(np.array(trace[-1].weighted_mean) - m0) <= 1e-8 * (
            1 + np.linalg.norm(m0)
        )


def test_parallel_runs_match_serial(tmp_path):
    spec = small_spec()
    serial = run_experiment(spec, workers=1)
    parallel = run_experiment(spec, workers=2)
    d1 = tmp_path / "serial"
    d2 = tmp_path / "parallel"
    export(spec, serial, d1)
    export(spec, parallel, d2)
    for p1 in sorted(d1.iterdir()):
        p2 = d2 / p1.name
        assert p1.read_bytes() == p2.read_bytes()


def test_end_to_end_byte_determinism(tmp_path):
    spec = small_spec()
    for name in ("a", "b"):
        export(spec, run_experiment(spec), tmp_path / name)
    files_a = sorted((tmp_path / "a").iterdir())
    files_b = sorted((tmp_path / "b").iterdir())
    assert [p.name for p in files_a] == [p.name for p in files_b]
    for pa, pb in zip(files_a, files_b):
        assert pa.read_bytes() == pb.read_bytes()


# ---------------------------------------------------------------------------
# table-1 statistics
# ---------------------------------------------------------------------------


def test_table1_categories_are_exclusive():
    records = run_experiment(small_spec(runs=3))
    stats = table1_stats(records)
    assert stats.runs == 3 and stats.failed == 0
    assert (
        stats.count_pairwise_scmc
        + stats.count_sufficient_hypotheses
        + stats.count_neither
        == stats.runs
    )
    assert sum(c for _, c in stats.cluster_histogram) == stats.runs


def test_table1_requires_verdicts():
    spec = small_spec(analyses=AnalysisFlags())
    records = run_experiment(spec)
    with pytest.raises(MissingVerdicts):
        table1_stats(records)


def test_unconverged_runs_are_excluded_from_table1():
    # a horizon too short to converge leaves nothing to categorize
    spec = ExperimentSpec(
        n=2,
        d=1,
        radius=1.0,
        kernel=INDICATOR1,
        runs=1,
        integrator=IntegratorConfig(t_max=0.05),
        initial_opinions=((0.0,), (0.8,)),
        analyses=AnalysisFlags(pairwise_scmc=True),
    )
    (rec,) = run_experiment(spec)
    assert not rec.failed
    assert rec.equilibrium_class.verdict.value == "not_equilibrium"
    stats = table1_stats([rec])
    assert stats.runs == 0 and stats.failed == 1


def test_sweep_analysis_attached_to_records():
    spec = small_spec(
        n=6,
        d=1,
        runs=1,
        analyses=AnalysisFlags(
            pairwise_scmc=True, sweep_deltas=(1e-2, 1e-3), x0_policy="mutual_midpoint"
        ),
    )
    (rec,) = run_experiment(spec)
    assert rec.verdicts is not None and rec.verdicts.sweep is not None
    points = rec.verdicts.sweep.points
    assert [p.delta for p in points] == [1e-2, 1e-3]
    assert all(p.disruption >= 0.0 for p in points)


def test_aborted_run_becomes_failed_record():
    # initial condition on a repulsive surface, no override: the run aborts
    # and is recorded, not fatal to the batch
    bad = ((0.0, 0.0), (0.5, 0.6), (-1.0, 0.0))
    spec = ExperimentSpec(
        n=3,
        d=2,
        radius=2.0,
        kernel=INDICATOR1,
        runs=1,
        integrator=IntegratorConfig(t_max=5.0),
        initial_opinions=bad,
    )
    (rec,) = run_experiment(spec)
    assert rec.failed
    assert "NonUniqueContinuation" in rec.error
    assert rec.final_state is None


# ---------------------------------------------------------------------------
# export formats
# ---------------------------------------------------------------------------


def test_trajectory_csv_shape_and_roundtrip(tmp_path):
    spec = ExperimentSpec(
        n=1,
        d=1,
        radius=1.0,
        kernel=INDICATOR1,
        runs=1,
        integrator=IntegratorConfig(t_max=1.0),
        initial_opinions=((0.25,),),
    )
    (rec,) = run_experiment(spec)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(rec.trajectory.samples, 1, path)
    text = path.read_text()
    lines = text.strip().split("\n")
    assert lines[0] == "t,agent,comp_1"
    assert len(lines) == 1 + len(rec.trajectory.samples)  # one agent

    parsed = read_trajectory_csv(path)
    path2 = tmp_path / "traj2.csv"
    write_trajectory_csv(parsed, 1, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_two_sample_single_agent_csv(tmp_path):
    samples = [(0.0, np.array([[0.25]])), (1.0, np.array([[0.5]]))]
    path = tmp_path / "tiny.csv"
    write_trajectory_csv(samples, 1, path)
    lines = path.read_text().strip().split("\n")
    assert len(lines) == 3  # header + one row per sample per agent
    assert lines[1] == "0.0,0,0.25"
    assert lines[2] == "1.0,0,0.5"


def test_full_precision_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    samples = [(float(t), rng.normal(size=(4, 3)) * 10.0**rng.integers(-8, 8))
               for t in np.linspace(0.0, 1.0, 7)]
    p = tmp_path / "x.csv"
    write_trajectory_csv(samples, 3, p)
    parsed = read_trajectory_csv(p)
    for (t0, x0), (t1, x1) in zip(samples, parsed):
        assert t0 == t1
        assert np.array_equal(np.asarray(x0), x1)


def test_summary_json_validates_against_schema(tmp_path):
    jsonschema = pytest.importorskip("jsonschema")
    spec = small_spec()
    records = run_experiment(spec)
    export(spec, records, tmp_path)
    doc = json.loads((tmp_path / "summary.json").read_text())
    schema = json.loads(
        resources.files("hkflow").joinpath("schemas/summary.schema.json").read_text()
    )
    jsonschema.validate(doc, schema)
    assert doc["stats"]["table1"]["pairwise_scmc"] + doc["stats"]["table1"][
        "sufficient_hypotheses"
    ] + doc["stats"]["table1"]["neither"] == doc["stats"]["runs"]


def test_monitor_csv_satisfies_conservation(tmp_path):
    spec = small_spec(runs=1)
    records = run_experiment(spec)
    export(spec, records, tmp_path)
    lines = (tmp_path / "monitors_run000.csv").read_text().strip().split("\n")
    header = lines[0].split(",")
    assert header[:4] == ["t", "mean_1", "mean_2", "m2"]
    rows = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]])
    means = rows[:, 1:3]
    m2 = rows[:, 3]
    assert np.all(np.linalg.norm(means - means[0], axis=1) <= 1e-8 * (1 + np.linalg.norm(means[0])))
    assert np.all(np.diff(m2) <= 1e-9 * m2[0])


# ---------------------------------------------------------------------------
# config round trip
# ---------------------------------------------------------------------------


def test_spec_json_roundtrip():
    spec = small_spec(
        weights=WeightScheme("log_uniform", low=0.2, high=4.0),
        analyses=AnalysisFlags(
            pairwise_scmc=True,
            sweep_deltas=(1e-2, 1e-3),
            x0_policy="explicit",
            sweep_x0=(0.1, 0.2),
        ),
    )
    doc = spec_to_json(spec)
    again = spec_from_json(json.loads(json.dumps(doc)))
    assert again == spec


def test_spec_from_json_rejects_garbage():
    with pytest.raises(ConfigError):
        spec_from_json({"n": 2})
    with pytest.raises(ConfigError):
        spec_from_json(
            {
                "n": 2,
                "d": 1,
                "radius": 1.0,
                "kernel": {"family": "nope", "q": 1.0},
            }
        )
