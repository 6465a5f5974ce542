import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinrot.design import (DesignError, DesignReport, PairSolveError, RobustFamilyParams, curvature_at_resonance,
                            delta0, design_locally_robust_pair, design_robust, design_robust_one_switch,
                            design_robust_two_switch, design_selective, fig_b1_guide, heuristic_time_bound,
                            identity_offsets, landscape_guides, min_time_regular_candidates, regular_candidates,
                            symmetric_bang_solutions)
from spinrot.propagation import CancellationWarning, ControlField, profile_derivative, propagate_matrices
from spinrot.so3 import x_rotation

PI = math.pi
SQ3 = math.sqrt(3)


def max_dev(a, b):
    return float(np.max(np.abs(a - b)))


def test_delta0_examples():
    assert delta0(PI, 1.0) == pytest.approx(SQ3, abs=1e-12)
    assert delta0(PI / 2, 1.0) == pytest.approx(math.sqrt(15), abs=1e-12)
    assert delta0(1.1, 2.0) == pytest.approx(2 * delta0(1.1, 1.0), abs=1e-12)
    # full-amplitude pulse of angle phi sends delta0 to the identity
    d = delta0(1.1, 1.0)
    np.testing.assert_allclose(propagate_matrices(ControlField.constant(1.0, 1.1), [d])[0], np.eye(3), atol=1e-12)
    for bad in (0.0, 2 * PI, -1.0):
        with pytest.raises(DesignError):
            delta0(bad, 1.0)


def test_design_selective_examples():
    d = design_selective(PI, 1.0, 1.0)
    assert d.t_s == pytest.approx(PI * SQ3, abs=1e-12)
    assert d.omega_s == pytest.approx(1 / SQ3, abs=1e-12)
    u = propagate_matrices(d.field, [0.0, 1.0])
    assert max_dev(u[0], x_rotation(PI).matrix) < 1e-10
    assert max_dev(u[1], np.eye(3)) < 1e-10
    edge = design_selective(PI, SQ3, 1.0)
    assert edge.t_s == pytest.approx(PI, abs=1e-12)
    assert edge.omega_s == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DesignError, match="no admissible singular pulse"):
        design_selective(PI, 2.0, 1.0)


@given(st.floats(0.05, 2 * PI - 0.05), st.floats(0.01, 0.99), st.floats(0.2, 3))
def test_design_selective_invariants(phi, frac, w0):
    d1 = frac * delta0(phi, w0)
    d = design_selective(phi, d1, w0)
    assert abs(d.omega_s) <= w0
    assert d.t_s * d.omega_s == pytest.approx(phi, abs=1e-12)
    assert d.t_s * math.hypot(d.omega_s, d1) == pytest.approx(2 * PI, abs=1e-10)
    u = propagate_matrices(d.field, [0.0, d1, -d1])
    assert max_dev(u[0], x_rotation(phi).matrix) < 1e-9
    assert max_dev(u[1], np.eye(3)) < 1e-9
    assert max_dev(u[2], np.eye(3)) < 1e-9


def test_one_switch_reference_durations():
    rep = design_robust_one_switch(RobustFamilyParams(1, 2, 1, PI))
    np.testing.assert_allclose(rep.field.durations, [1.5 * PI, 0.5 * PI], atol=1e-15)
    np.testing.assert_allclose(rep.field.amplitudes, [1.0, -1.0])
    assert max_dev(propagate_matrices(rep.field, [0.0])[0], x_rotation(PI).matrix) < 1e-10
    assert rep.total_time == pytest.approx(2 * PI, abs=1e-12)


def test_one_switch_n2_k1_identity_offsets():
    rep = design_robust_one_switch(RobustFamilyParams(1, 2, 1, PI))
    # at delta = sqrt 3 the bangs are 3 pi and -pi half-turn multiples about tilted axes:
    # their product is a 120 degree turn about y, not the identity
    u = propagate_matrices(rep.field, [SQ3])[0]
    assert np.trace(u) == pytest.approx(0.0, abs=1e-12)
    assert u[1, 1] == pytest.approx(1.0, abs=1e-12)
    assert not any(abs(d - SQ3) < 1e-8 for d in rep.identity_offsets)
    assert any("not confirmed" in n for n in rep.notes)
    # both bangs are whole turns where sqrt(1 + delta^2) = 4 or 8
    np.testing.assert_allclose(rep.identity_offsets, [math.sqrt(15), math.sqrt(63)], atol=1e-9)


@pytest.mark.parametrize("n,k", [(3, 1), (4, 2), (5, 1), (5, 3), (6, 2), (6, 4)])
def test_one_switch_predicted_offset_when_parities_match(n, k):
    rep = design_robust_one_switch(RobustFamilyParams(1, n, k, PI))
    t1, t2 = rep.field.durations
    predicted = math.sqrt((2 * k * PI / (t1 - t2)) ** 2 - 1)
    assert any(abs(d - predicted) < 1e-8 for d in rep.identity_offsets)
    for d in rep.identity_offsets:
        assert max_dev(propagate_matrices(rep.field, [d])[0], np.eye(3)) < 1e-9


def test_one_switch_degenerate_cases():
    rep = design_robust_one_switch(RobustFamilyParams(1, 1, 1, PI))
    assert len(rep.field.segments) == 1
    assert rep.total_time == pytest.approx(PI, abs=1e-15)
    assert rep.notes
    with pytest.raises(DesignError):
        design_robust_one_switch(RobustFamilyParams(1, 1, 2, PI))


def test_two_switch_reference_solutions():
    rep = design_robust(RobustFamilyParams(2, 5, 3, PI, alpha=1.0))
    np.testing.assert_allclose(rep.field.durations, [PI / 3, 5 * PI / 3, PI / 3], atol=1e-14)
    np.testing.assert_allclose(rep.field.amplitudes, [-1.0, 1.0, -1.0])
    assert rep.total_time == pytest.approx(7 * PI / 3, abs=1e-12)
    assert round(rep.total_time / PI, 2) == 2.33
    assert abs(rep.curvature_at_zero) < 1e-12
    assert rep.identity_offsets == pytest.approx([math.sqrt(35)], abs=1e-8)
    rep2 = design_robust(RobustFamilyParams(2, 3, 2, PI, alpha=1.0))
    np.testing.assert_allclose(rep2.field.durations, [PI / 4, 1.5 * PI, PI / 4], atol=1e-14)
    assert rep2.total_time == pytest.approx(2 * PI, abs=1e-12)
    assert rep2.curvature_at_zero == pytest.approx(16 * (3 - 2 * math.sqrt(2)), abs=1e-12)
    for r in (rep, rep2):
        assert max_dev(propagate_matrices(r.field, [0.0])[0], x_rotation(PI).matrix) < 1e-10
        assert r.total_time == pytest.approx(sum(r.field.durations), abs=1e-15)


def test_two_switch_degenerate_family():
    with pytest.raises(DesignError, match="degenerate family"):
        design_robust(RobustFamilyParams(2, 1, 1, PI / 2, alpha=1.0))


@pytest.mark.parametrize("n,k", [(2, 1), (3, 1), (3, 2), (4, 3), (5, 2), (5, 3), (7, 4)])
@pytest.mark.parametrize("phi", [PI / 2, PI, 1.3])
def test_two_switch_first_derivative_vanishes(n, k, phi):
    rep = design_robust(RobustFamilyParams(2, n, k, phi, alpha=1.0))
    assert max_dev(propagate_matrices(rep.field, [0.0])[0], x_rotation(phi).matrix) < 1e-9
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CancellationWarning)
        assert abs(profile_derivative(rep.field, x_rotation(phi), 0.0, order=1)) < 1e-6
    for d in rep.identity_offsets:
        assert max_dev(propagate_matrices(rep.field, [d])[0], np.eye(3)) < 1e-9


def test_curvature_examples():
    assert curvature_at_resonance(PI / 3, PI / 3, 1.0) == pytest.approx(0, abs=1e-12)
    assert curvature_at_resonance(PI / 4, PI / 4, 1.0) == pytest.approx(16 * (3 - 2 * math.sqrt(2)), abs=1e-12)
    assert curvature_at_resonance(0.0, 0.0, 1.0) == pytest.approx(16, abs=1e-12)


@pytest.mark.parametrize("w0", [1.0, 2.0])
def test_curvature_matches_finite_differences(rng, w0):
    for _ in range(20):
        t1, t3 = rng.uniform(0, PI / w0, 2)
        fld = ControlField.bangs([-1, 1, -1], [t1, t1 + t3 + PI / w0, t3], w0)
        fd = profile_derivative(fld, x_rotation(PI), 0.0, order=2)
        assert curvature_at_resonance(t1, t3, w0) == pytest.approx(fd, abs=1e-3)


def test_symmetric_bang_solutions():
    assert symmetric_bang_solutions(PI / 3, 1.0) == [0.0]
    assert symmetric_bang_solutions(PI / 6, 1.0) == []
    arg = lambda t: (3 + 2 * math.cos(2 * t)) / (4 * math.cos(t))  # noqa: E731
    for t in np.linspace(0.05, 3, 40):
        if abs(math.cos(t)) > 1e-3 and abs(arg(t)) > 1 + 1e-9:
            assert symmetric_bang_solutions(float(t), 1.0) == []


def test_identity_offsets_examples():
    np.testing.assert_allclose(identity_offsets(ControlField.constant(1.0, PI), 4.0), [SQ3, math.sqrt(15)],
                               atol=1e-9)
    sel = design_selective(PI, 1.0, 1.0).field
    assert identity_offsets(sel, 1.5)[0] == pytest.approx(1.0, abs=1e-9)
    free = ControlField(1.0, ((0.0, 2.0),))
    np.testing.assert_allclose(identity_offsets(free, 10.0), [PI, 2 * PI, 3 * PI], atol=1e-9)


def test_regular_candidates_examples():
    assert min_time_regular_candidates(PI, 1.0, SQ3) == pytest.approx(PI, abs=1e-12)
    cands = regular_candidates(PI, 1.0, math.sqrt(35), max_switches=2)
    assert any(abs(c.total_time - 7 * PI / 3) < 1e-9 for c in cands)
    for c in cands[:20]:
        u = propagate_matrices(c.to_field(1.0), [0.0, math.sqrt(35)])
        assert max_dev(u[0], x_rotation(PI).matrix) < 1e-9
        assert max_dev(u[1], np.eye(3)) < 1e-9


def test_regular_candidates_conjecture_at_unit_offset():
    t_s = design_selective(PI, 1.0, 1.0).t_s
    best = min_time_regular_candidates(PI, 1.0, 1.0, max_switches=3)
    assert best is None or best > t_s


@pytest.mark.parametrize("phi", [PI / 2, PI])
def test_conjecture_grid(phi):
    d0 = delta0(phi, 1.0)
    for d1 in np.arange(0.25, d0 - 0.25 + 1e-12, 0.25):
        t_s = design_selective(phi, float(d1), 1.0).t_s
        best = min_time_regular_candidates(phi, 1.0, float(d1), max_switches=3)
        assert best is None or best > t_s


def test_locally_robust_pair_has_no_exact_two_bang_solution():
    # a two-bang product at delta1 != 0 always has a y component in its axis,
    # so X_phi is out of reach; the solver must report rather than fake it
    with pytest.raises(PairSolveError) as info:
        design_locally_robust_pair(PI, 1.0, 0.5)
    assert info.value.best.residual > 0.5


def test_locally_robust_pair_small_offset_limit():
    residuals = []
    for d1 in (0.2, 0.1, 0.05, 0.01):
        with pytest.raises(PairSolveError) as info:
            design_locally_robust_pair(PI, 1.0, d1)
        residuals.append(info.value.best.residual)
        assert info.value.best.residual < 2.1 * d1
        # the resonant pi pulse is the limiting solution
        u = propagate_matrices(ControlField.constant(1.0, PI), [d1, -d1])
        assert max_dev(u[0], x_rotation(PI).matrix) < 2 * d1
    assert residuals == sorted(residuals, reverse=True)


def test_locally_robust_pair_precondition():
    with pytest.raises(DesignError):
        design_locally_robust_pair(PI, 1.0, 2.0)


def test_heuristic_time_bound():
    assert heuristic_time_bound(PI, SQ3, 2 * SQ3) == pytest.approx(2 * PI, abs=1e-12)
    assert heuristic_time_bound(PI, SQ3, 1e12) == pytest.approx(design_selective(PI, SQ3, 1.0).t_s, abs=1e-9)
    with pytest.raises(DesignError):
        heuristic_time_bound(PI, SQ3, SQ3)


def test_landscape_guides():
    assert landscape_guides(SQ3, PI, 1, "low") == pytest.approx(PI, abs=1e-12)
    lo, hi = landscape_guides(1.0, PI, 1, "high")
    assert (lo, hi) == (pytest.approx(3 * PI), pytest.approx(5 * PI))
    with pytest.raises(DesignError):
        landscape_guides(1.0, 3 * PI, 1, "low")
    with pytest.raises(DesignError):
        landscape_guides(1.0, PI, 1, "middle")
    # guide durations send delta2 to the identity for a full-amplitude pulse
    t = fig_b1_guide(2.0, 3)
    np.testing.assert_allclose(propagate_matrices(ControlField.constant(1.0, t), [2.0])[0], np.eye(3), atol=1e-12)


def test_design_report_json_roundtrip():
    rep = design_robust(RobustFamilyParams(2, 5, 3, PI))
    data = json.loads(rep.to_json())
    assert {"field", "total_time", "identity_offsets", "curvature_at_zero"} <= set(data)
    back = DesignReport.from_dict(data)
    assert back.field == rep.field
    assert back.total_time == rep.total_time


def test_params_validation():
    with pytest.raises(DesignError):
        RobustFamilyParams(3, 2, 1, PI)
    with pytest.raises(DesignError):
        RobustFamilyParams(2, 0, 1, PI)
    with pytest.raises(DesignError):
        RobustFamilyParams(2, 2, 1, 7.0)
    with pytest.raises(DesignError):
        RobustFamilyParams(2, 2, 1, PI, alpha=0.0)


def test_regular_bang_ties_singular_time_at_rational_point():
    # phi = pi/2, delta1 = sqrt(15)/7: a single -w0 bang of 7 pi/2 is a whole number
    # of turns at delta1 and nets -7 pi/2 = pi/2 (mod 2 pi) at resonance
    d1 = math.sqrt(15) / 7
    t_s = design_selective(PI / 2, d1, 1.0).t_s
    best = min_time_regular_candidates(PI / 2, 1.0, d1)
    assert t_s == pytest.approx(3.5 * PI, abs=1e-12)
    assert best == pytest.approx(t_s, abs=1e-12)
