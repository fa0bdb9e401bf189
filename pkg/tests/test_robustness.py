"""Zero-agent robustness tests: analytic conditions, reduced dynamics,
and measured disruption."""

import math

import numpy as np
import pytest

from hkflow.errors import HeterogeneousKernels, InitialOnSurface
from hkflow.integrator import IntegratorConfig
from hkflow.robustness import (
    ClusteredEquilibrium,
    NecessaryVerdict,
    SufficientVerdict,
    TrajectoryKind,
    ZeroAgentScenario,
    center_of_mass,
    classify_zero_trajectory,
    delta_sweep,
    genericity_check,
    measure_delta,
    radius_intersections,
    robustness_report,
    scmc_check,
    sqrt2_hypothesis,
    theorem_verdicts,
    triple_ball_check,
    zero_agent_reduced_field,
)


def eq1d(centers, weights):
    return ClusteredEquilibrium(np.array(centers, dtype=float)[:, None], weights)


TWO_EQUAL_NEAR = eq1d([0.0, 1.5], [1.0, 1.0])  # SCMC pair
TWO_EQUAL_FAR = eq1d([0.0, 2.5], [1.0, 1.0])  # no SCMC, sqrt2 fails
TWO_LOPSIDED = eq1d([0.0, 1.7], [10.0, 1.0])  # robust by the theorem


# ---------------------------------------------------------------------------
# centers of mass and SCMC
# ---------------------------------------------------------------------------


def test_center_of_mass_examples():
    assert center_of_mass(TWO_EQUAL_NEAR, [1])[0] == pytest.approx(1.5)
    assert center_of_mass(TWO_EQUAL_NEAR, [0, 1])[0] == pytest.approx(0.75)
    assert center_of_mass(TWO_LOPSIDED, [0, 1])[0] == pytest.approx(1.7 / 11.0)
    with pytest.raises(ValueError):
        center_of_mass(TWO_EQUAL_NEAR, [])


def test_scmc_pair_examples():
    res = scmc_check(TWO_EQUAL_NEAR)
    assert res.holds and res.witness == frozenset({0, 1}) and res.exhaustive
    assert not scmc_check(TWO_EQUAL_FAR).holds
    assert not scmc_check(TWO_LOPSIDED).holds


def test_scmc_pair_closed_form_oracle():
    # for a pair: SCMC iff D < 1 + min(w)/max(w)
    rng = np.random.default_rng(1234)
    for _ in range(1000):
        w = rng.uniform(0.1, 10.0, size=2)
        dist = rng.uniform(1.001, 3.0)
        eq = eq1d([0.0, dist], w)
        expected = dist < 1.0 + w.min() / w.max()
        assert scmc_check(eq).holds == expected


def test_scmc_exhaustive_matches_bruteforce_subsets():
    import itertools

    rng = np.random.default_rng(4242)
    checked = 0
    while checked < 30:
        k = int(rng.integers(2, 6))
        centers = rng.uniform(-2.5, 2.5, size=(k, 2))
        weights = rng.uniform(0.2, 5.0, size=k)
        try:
            eq = ClusteredEquilibrium(centers, weights)
        except ValueError:
            continue
        checked += 1
        expected = False
        for size in range(2, k + 1):
            for sub in itertools.combinations(range(k), size):
                m = center_of_mass(eq, sub)
                if all(np.linalg.norm(m - eq.centers[i]) < 1.0 for i in sub):
                    expected = True
        res = scmc_check(eq)
        assert res.exhaustive
        assert res.holds == expected
        if res.holds:
            m = center_of_mass(eq, sorted(res.witness))
            assert all(np.linalg.norm(m - eq.centers[i]) < 1.0 for i in res.witness)


def test_scmc_pairwise_fallback_above_cap():
    centers = np.arange(5, dtype=float)[:, None] * 1.5
    eq = ClusteredEquilibrium(centers, np.ones(5))
    res = scmc_check(eq, max_k_exhaustive=3)
    assert res.holds and not res.exhaustive and len(res.witness) == 2


# ---------------------------------------------------------------------------
# genericity
# ---------------------------------------------------------------------------


def test_tangent_spheres_are_non_generic():
    eq = eq1d([0.0, 2.0], [1.0, 1.0])
    res = genericity_check(eq)
    assert not res.is_generic
    assert any(c == "sphere_tangency" for c, _ in res.violations)


def test_lopsided_pair_is_generic():
    res = genericity_check(TWO_LOPSIDED)
    assert res.is_generic and res.exhaustive


def test_triple_sphere_clause_uses_feasibility_oracle():
    # oracle: three unit circles around an equilateral triangle of side s
    # have a feasible common system iff the circumradius s/sqrt(3) <= 1
    def equilateral(side):
        r = side / math.sqrt(3.0)
        ang = np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])
        return ClusteredEquilibrium(
            np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1), np.ones(3)
        )

    wide = genericity_check(equilateral(1.9))  # circumradius 1.097 > 1
    assert not any(c == "triple_sphere_intersection" for c, _ in wide.violations)
    tight = genericity_check(equilateral(1.5))  # circumradius 0.866 < 1
    assert any(c == "triple_sphere_intersection" for c, _ in tight.violations)


def test_mass_center_on_sphere_clause():
    eq = eq1d([0.0, 4.0], [3.0, 1.0])  # m_{01} = 1.0 sits on sphere 0
    res = genericity_check(eq)
    assert not res.is_generic
    assert any(c == "mass_center_on_sphere" for c, _ in res.violations)


def test_verdicts_invariant_under_rigid_motions():
    rng = np.random.default_rng(77)
    centers = np.array([[0.0, 0.0], [1.6, 0.4], [-0.5, 2.2]])
    weights = np.array([2.0, 1.0, 3.0])
    x0 = np.array([0.7, 0.25])
    eq = ClusteredEquilibrium(centers, weights)
    base_type = classify_zero_trajectory(eq, x0)
    base = (
        scmc_check(eq).holds,
        genericity_check(eq).is_generic,
        sqrt2_hypothesis(eq).holds,
        triple_ball_check(eq).holds,
    )
    for _ in range(5):
        theta = rng.uniform(0, 2 * np.pi)
        rot = np.array(
            [[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]]
        )
        shift = rng.normal(size=2)
        moved = ClusteredEquilibrium(centers @ rot.T + shift, weights)
        assert base == (
            scmc_check(moved).holds,
            genericity_check(moved).is_generic,
            sqrt2_hypothesis(moved).holds,
            triple_ball_check(moved).holds,
        )
        moved_type = classify_zero_trajectory(moved, rot @ x0 + shift)
        assert moved_type.kind is base_type.kind
        assert moved_type.switches == base_type.switches


# ---------------------------------------------------------------------------
# the sqrt(2) lemma and hypothesis
# ---------------------------------------------------------------------------


def test_radius_intersections_two_roots_example():
    x2 = np.array([1.2, 0.0])
    lx = 0.7 / 1.2
    lam = np.array([lx, math.sqrt(1.0 - lx * lx)])
    assert radius_intersections(np.zeros(2), x2, lam) == 2


def test_radius_intersections_far_centers_at_most_once():
    rng = np.random.default_rng(8)
    x2 = np.array([2.0, 0.0])
    for _ in range(200):
        v = rng.normal(size=2)
        lam = v / np.linalg.norm(v)
        assert radius_intersections(np.zeros(2), x2, lam) <= 1


def test_radius_intersections_pointing_away():
    assert radius_intersections(np.zeros(2), np.array([1.5, 0.0]), np.array([-1.0, 0.0])) == 0


def sample_directions(rng, d, x2, n):
    """Uniform directions plus a structured sweep of cosines against x2.

    A double intersection needs the cosine of lam against x2 inside a
    window that collapses as |x2| approaches sqrt(2), so uniform sampling
    alone cannot witness existence near the threshold; sweeping the
    cosine axis (including the window midpoint) covers it.
    """
    sep = float(np.linalg.norm(x2))
    e = x2 / sep
    lams = rng.normal(size=(n // 2, d))
    lams /= np.linalg.norm(lams, axis=1)[:, None]
    cs = np.linspace(-0.999, 0.999, n - n // 2 - 1).tolist()
    low2 = sep * sep - 1.0
    if 0.0 < low2 and sep < math.sqrt(2.0):
        cs.append(0.5 * (math.sqrt(low2) + sep * sep / 2.0) / sep)
    structured = []
    for c in cs:
        u = rng.normal(size=d)
        u -= (u @ e) * e
        nu = np.linalg.norm(u)
        if nu == 0.0:
            continue
        u /= nu
        structured.append(c * e + math.sqrt(max(1.0 - c * c, 0.0)) * u)
    return np.vstack([lams, np.array(structured)])


def test_sqrt2_lemma_both_directions_sampled():
    rng = np.random.default_rng(9)
    for d in (2, 3):
        for _ in range(25):
            sep = rng.uniform(1.01, 3.0)
            if abs(sep - math.sqrt(2.0)) < 1e-3:
                continue
            direction = rng.normal(size=d)
            x2 = direction / np.linalg.norm(direction) * sep
            lams = sample_directions(rng, d, x2, 1000)
            counts = [radius_intersections(np.zeros(d), x2, lam) for lam in lams]
            if sep >= math.sqrt(2.0):
                assert max(counts) <= 1
            else:
                assert max(counts) == 2


def test_sqrt2_hypothesis_examples():
    assert sqrt2_hypothesis(TWO_LOPSIDED).holds  # 1.5454 > sqrt(2)
    res = sqrt2_hypothesis(TWO_EQUAL_FAR)  # both 1.25 < sqrt(2)
    assert not res.holds and res.violating_pair == (0, 1)
    assert sqrt2_hypothesis(eq1d([0.0, 3.0], [5.0, 1.0])).holds  # D > 2 sqrt(2)


def test_triple_ball_check():
    # acute triple with circumradius < 1: balls share a point
    centers = np.array([[0.0, 0.0], [1.5, 0.0], [0.75, 1.3]])
    eq = ClusteredEquilibrium(centers, np.ones(3))
    res = triple_ball_check(eq)
    assert not res.holds and res.violating_triple == (0, 1, 2)
    assert triple_ball_check(TWO_EQUAL_FAR).holds  # fewer than 3 clusters


# ---------------------------------------------------------------------------
# reduced zero-agent dynamics
# ---------------------------------------------------------------------------


def test_reduced_field_regions():
    eq = TWO_EQUAL_NEAR
    assert np.all(zero_agent_reduced_field(eq, np.array([5.0])) == 0.0)
    f = zero_agent_reduced_field(eq, np.array([-0.5]))
    assert f[0] == pytest.approx(1.0 * 0.5)  # w1 (x1 - x0)
    # inside the mutual ball the field points along the segment toward m_S
    eq2 = ClusteredEquilibrium(np.array([[0.0, 0.0], [1.5, 0.0]]), [2.0, 1.0])
    x0 = np.array([0.7, 0.2])
    f2 = zero_agent_reduced_field(eq2, x0)
    m = center_of_mass(eq2, [0, 1])
    cross = f2[0] * (m - x0)[1] - f2[1] * (m - x0)[0]
    assert abs(cross) < 1e-12


def test_reduced_trajectory_stays_on_segment_until_first_switch():
    # independent oracle: fixed-step RK4 on the reduced field
    eq = ClusteredEquilibrium(np.array([[0.0, 0.0], [1.5, 0.5]]), [2.0, 1.0])
    x0 = np.array([0.9, 0.1])
    m = center_of_mass(eq, [0, 1])
    seg = m - x0
    x = x0.copy()
    dt = 1e-4
    for _ in range(2000):
        k1 = zero_agent_reduced_field(eq, x)
        k2 = zero_agent_reduced_field(eq, x + 0.5 * dt * k1)
        k3 = zero_agent_reduced_field(eq, x + 0.5 * dt * k2)
        k4 = zero_agent_reduced_field(eq, x + dt / 6.0 * k3)
        active = np.linalg.norm(eq.centers - x[None, :], axis=1) < 1.0
        if not np.array_equal(
            active, np.linalg.norm(eq.centers - x0[None, :], axis=1) < 1.0
        ):
            break
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        rel = x - x0
        cross = rel[0] * seg[1] - rel[1] * seg[0]
        assert abs(cross) <= 1e-8


def test_classify_zero_trajectory_examples():
    outside = classify_zero_trajectory(TWO_EQUAL_NEAR, np.array([5.0]))
    assert outside.kind is TrajectoryKind.TYPE1 and outside.switches == 0

    one_switch = classify_zero_trajectory(TWO_LOPSIDED, np.array([0.85]))
    assert one_switch.kind is TrajectoryKind.TYPE1 and one_switch.switches == 1

    fixed_point = classify_zero_trajectory(TWO_EQUAL_NEAR, np.array([0.75]))
    assert fixed_point.kind is TrajectoryKind.TYPE1 and fixed_point.switches == 0

    with pytest.raises(InitialOnSurface):
        classify_zero_trajectory(TWO_EQUAL_NEAR, np.array([-1.0]))


def test_classify_zero_trajectory_simultaneous_crossing_is_irregular():
    centers = np.array([[1.6, 0.0], [1.05, 0.99], [1.05, -0.99]])
    eq = ClusteredEquilibrium(centers, np.array([5.0, 1.0, 1.0]))
    res = classify_zero_trajectory(eq, np.array([0.65, 0.0]))
    assert res.kind is TrajectoryKind.IRREGULAR


# ---------------------------------------------------------------------------
# measured disruption
# ---------------------------------------------------------------------------


def test_delta_zero_outside_all_balls():
    for delta in (1e-2, 1e-3):
        scn = ZeroAgentScenario(TWO_EQUAL_NEAR, np.array([4.0]), delta)
        value, branches = measure_delta(scn, IntegratorConfig(t_max=50.0))
        assert value == 0.0
        assert branches == 1


def test_scmc_scenario_disrupts_by_a_quarter():
    scn = ZeroAgentScenario(TWO_EQUAL_NEAR, np.array([0.75]), 1e-3)
    value, _ = measure_delta(scn)
    assert value >= 0.25 - 1e-3


def test_robust_scenario_small_disruption():
    scn = ZeroAgentScenario(TWO_LOPSIDED, np.array([0.85]), 1e-3)
    value, branches = measure_delta(scn)
    assert value < 0.01
    assert branches == 1


def test_delta_sweep_diagnostics_and_validation():
    sweep = delta_sweep(TWO_LOPSIDED, np.array([0.85]), [1e-2, 1e-3])
    assert sweep.monotone_decreasing
    assert sweep.points[0].disruption > sweep.points[1].disruption
    assert sweep.limit_estimate < sweep.points[-1].disruption
    with pytest.raises(ValueError):
        delta_sweep(TWO_LOPSIDED, np.array([0.85]), [1e-3, 1e-2])
    with pytest.raises(ValueError):
        delta_sweep(TWO_LOPSIDED, np.array([0.85]), [])


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------


def test_theorem_verdict_examples():
    near = theorem_verdicts(TWO_EQUAL_NEAR)
    assert near.necessary_verdict is NecessaryVerdict.NOT_ROBUST_SCMC
    assert near.sufficient_verdict is SufficientVerdict.INCONCLUSIVE

    lop = theorem_verdicts(TWO_LOPSIDED)
    assert lop.sufficient_verdict is SufficientVerdict.ROBUST_THM
    assert lop.necessary_verdict is NecessaryVerdict.INCONCLUSIVE

    far = theorem_verdicts(TWO_EQUAL_FAR)
    assert far.necessary_verdict is NecessaryVerdict.INCONCLUSIVE
    assert far.sufficient_verdict is SufficientVerdict.INCONCLUSIVE


def test_verdicts_never_both_fire():
    rng = np.random.default_rng(55)
    count = 0
    while count < 40:
        k = int(rng.integers(2, 5))
        centers = rng.uniform(-3, 3, size=(k, 2))
        try:
            eq = ClusteredEquilibrium(centers, rng.uniform(0.5, 5.0, size=k))
        except ValueError:
            continue
        count += 1
        rep = theorem_verdicts(eq)
        assert not (
            rep.necessary_verdict is NecessaryVerdict.NOT_ROBUST_SCMC
            and rep.sufficient_verdict is SufficientVerdict.ROBUST_THM
        )


def test_verdicts_require_unit_bound():
    eq = ClusteredEquilibrium(np.array([[0.0], [3.0]]), [1.0, 1.0], q=2.0)
    with pytest.raises(ValueError):
        theorem_verdicts(eq)


def test_report_refuses_heterogeneous_zero_bounds():
    with pytest.raises(HeterogeneousKernels):
        robustness_report(TWO_LOPSIDED, q0=[1.0, 0.5])
    rep = robustness_report(TWO_LOPSIDED, np.array([0.85]), deltas=[1e-2, 1e-3])
    assert rep.sweep is not None and len(rep.sweep.points) == 2


def test_heterogeneous_bounds_still_measurable():
    scn = ZeroAgentScenario(TWO_LOPSIDED, np.array([0.85]), 1e-2, q0=[1.0, 0.5])
    value, _ = measure_delta(scn)
    assert np.isfinite(value)
