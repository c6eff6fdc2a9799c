import math
from dataclasses import replace

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemobound.analysis import (
    A_theorem_variant,
    assemble_AB,
    bound_report,
    check_odi,
    constants_AB,
    critical_mass,
    energy_return_time,
    gradient_residual_coefficient,
    intermediate_constants,
    lower_bound_explicit,
    lower_bound_implicit,
    lower_bound_implicit_literal,
    optimize_epsilon,
)
from chemobound.fields import Grid, ScalarField
from chemobound.simulator import ModelParams, TimeControls, Trajectory, TrajectoryRecord, run

ONES = ModelParams.ones()


def quad_time(A, B, E0, ET):
    mpmath.mp.dps = 30
    return float(mpmath.quad(lambda E: 1 / (A * E**1.5 + B * E**2), [E0, ET]))


def with_sigma(sigma):
    return ModelParams(alpha=1, beta=1, gamma=1, delta=1, chi=1 + sigma, xi=1)


def test_critical_mass():
    assert critical_mass(with_sigma(1.0)) == pytest.approx(4 * math.pi)
    assert critical_mass(with_sigma(0.5)) == pytest.approx(8 * math.pi)
    assert critical_mass(ModelParams(1, 1, 1, 1, 1, 2)) is None
    assert critical_mass(ONES) is None


def test_intermediate_constants_all_ones():
    c1, c2 = intermediate_constants(ONES, 1.0, 1.0)
    assert c1 == pytest.approx(89 / 81, abs=1e-15)
    assert c2 == pytest.approx(4 / 27, abs=1e-15)


def test_intermediate_constants_small_xi():
    p = ModelParams(alpha=2, beta=1, gamma=0.7, delta=1.3, chi=1.5, xi=1e-12)
    c1, c2 = intermediate_constants(p, 5.0)
    assert c1 == pytest.approx(3.0, abs=1e-10)
    assert c2 == pytest.approx(0.0, abs=1e-10)


def test_intermediate_constants_errors():
    with pytest.raises(ValueError):
        intermediate_constants(ONES, 1.0, 0.0)
    with pytest.raises(ValueError):
        intermediate_constants(ONES, -1.0)


positive = st.floats(0.05, 20)


@settings(max_examples=200)
@given(positive, positive, positive, positive, positive, positive, st.floats(0, 10))
def test_reduction_to_closed_forms(a, b, g, d, chi, xi, ct):
    p = ModelParams(a, b, g, d, chi, xi)
    c1, c2 = intermediate_constants(p, ct, g / d)
    assert c1 == pytest.approx(a * chi + 8 * xi * g * d / 81, rel=1e-14)
    assert c2 == pytest.approx(4 * ct * xi * d**3 / (27 * g**2), rel=1e-14, abs=1e-300)


def test_constants_AB_unit_disk(unit_disk_geom):
    A, B = constants_AB(ONES, unit_disk_geom, 1.0)
    assert A == pytest.approx((89 / 81) * math.sqrt(2) / 2 + 4 / 27, abs=1e-14)
    assert A == pytest.approx(0.925094, abs=1e-5)
    assert B == pytest.approx(0.301822, abs=1e-5)


def test_constants_AB_small_xi(unit_disk_geom):
    p = ModelParams(alpha=1.5, beta=1, gamma=1, delta=1, chi=2, xi=1e-12)
    A, B = constants_AB(p, unit_disk_geom, 1.0)
    assert A == pytest.approx(3 * math.sqrt(2) / 2, rel=1e-10)
    assert B == pytest.approx(9 * 4 / 16, rel=1e-10)


def test_A_is_affine_in_m1(unit_disk_geom):
    g2 = replace(unit_disk_geom, m1=2 * unit_disk_geom.m1)
    A1, _ = constants_AB(ONES, unit_disk_geom, 1.0)
    A2, _ = constants_AB(ONES, g2, 1.0)
    c2 = 4 / 27
    assert A2 - c2 == pytest.approx(2 * (A1 - c2), rel=1e-15)


@settings(max_examples=100)
@given(positive, positive, positive, positive, positive, positive, st.floats(0, 10))
def test_assembly_matches_closed_form(a, b, g, d, chi, xi, ct):
    from chemobound.geometry import GeometryConstants
    geom = GeometryConstants(rho0=0.4, d=1.3, m1=3 / 0.8, m2=1 + 1.3 / 0.4, area=1.0, perimeter=4.0)
    p = ModelParams(a, b, g, d, chi, xi)
    A, B = assemble_AB(*intermediate_constants(p, ct), geom)
    Ac, Bc = constants_AB(p, geom, ct)
    assert A == pytest.approx(Ac, rel=1e-14)
    assert B == pytest.approx(Bc, rel=1e-14)


def test_gradient_term_cancels():
    for c in (0.01, 89 / 81, 3.0, 1e6):
        assert abs(gradient_residual_coefficient(c, c)) <= 4e-16
    assert gradient_residual_coefficient(1.0, 2.0) == -1.0


def test_assemble_rejects_nonpositive(unit_disk_geom):
    with pytest.raises(ValueError):
        assemble_AB(0.0, 1.0, unit_disk_geom)


def test_theorem_variant(unit_disk_geom):
    # bracket differs from the primary form unless ctilde*xi*delta terms coincide with 8*gamma*xi*delta/81
    k = 4 / 27
    assert A_theorem_variant(ONES, unit_disk_geom, 1.0) == pytest.approx((1 + k) * math.sqrt(2) / 2 + k)
    c_eq = 2 / 3  # ctilde where 4*ctilde/27 == 8/81
    A, _ = constants_AB(ONES, unit_disk_geom, c_eq)
    assert A_theorem_variant(ONES, unit_disk_geom, c_eq) == pytest.approx(A, rel=1e-14)


def test_optimize_epsilon_not_worse(unit_disk_geom):
    eps = optimize_epsilon(ONES, unit_disk_geom, 1.0)

    def A_of(e):
        c1, c2 = intermediate_constants(ONES, 1.0, e)
        return c1 * math.sqrt(2) / 3 * unit_disk_geom.m1 + c2
    assert A_of(eps) <= A_of(1.0)
    assert A_of(eps) <= min(A_of(eps * 1.01), A_of(eps / 1.01))


def test_explicit_bound_examples():
    assert lower_bound_explicit(1, 4) == 1
    assert lower_bound_explicit(2, 1) == 1
    assert lower_bound_explicit(0.925094, math.pi) == pytest.approx(2 / (0.925094 * math.sqrt(math.pi)))
    with pytest.raises(ValueError):
        lower_bound_explicit(0, 1)


def test_implicit_bound_examples():
    assert lower_bound_implicit(1, 0, 1, 4) == pytest.approx(1.0, abs=1e-15)
    assert lower_bound_implicit(1, 1, 3, 3) == 0.0
    assert lower_bound_implicit(1, 1, 1) == pytest.approx(2 - 2 * math.log(2), abs=1e-12)
    assert lower_bound_implicit(1, 1, 1) == pytest.approx(quad_time(1, 1, 1, mpmath.inf), rel=1e-12)
    with pytest.raises(ValueError):
        lower_bound_implicit(1, 1, 4, 1)


@settings(max_examples=60, deadline=None)
@given(st.floats(1e-2, 1e2), st.floats(1e-3, 1e2), st.floats(1e-2, 1e3), st.floats(1.001, 1e6))
def test_implicit_matches_quadrature(A, B, E0, ratio):
    ET = E0 * ratio
    assert lower_bound_implicit(A, B, E0, ET) == pytest.approx(quad_time(A, B, E0, ET), rel=1e-8)


@settings(max_examples=100)
@given(st.floats(1e-2, 1e2), st.floats(1e-6, 1e2), st.floats(1e-2, 1e3))
def test_implicit_below_explicit(A, B, E0):
    assert lower_bound_implicit(A, B, E0) <= lower_bound_explicit(A, E0) * (1 + 1e-14)


def test_implicit_approaches_explicit_as_B_vanishes():
    for B in (1e-4, 1e-8, 1e-12):
        assert lower_bound_implicit(1.3, B, 2.0) == pytest.approx(lower_bound_explicit(1.3, 2.0),
                                                                  rel=5 * B * (1 + abs(math.log(B))))


def test_implicit_monotonicity_and_limit():
    A, B = 0.9, 0.3
    E0s = [0.1, 0.5, 1, 2, 10]
    vals = [lower_bound_implicit(A, B, e, 1e4) for e in E0s]
    assert all(x >= y for x, y in zip(vals, vals[1:]))
    targets = [2, 10, 1e2, 1e6, 1e8, 1e10]
    vals = [lower_bound_implicit(A, B, 1.0, t) for t in targets]
    assert all(x <= y for x, y in zip(vals, vals[1:]))
    lim = lower_bound_implicit(A, B, 1.0)
    errs = [abs(lim - lower_bound_implicit(A, B, 1.0, t)) for t in (1e6, 1e8, 1e10)]
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 1e-9


def test_literal_form_agrees_where_stable():
    for A, B, E0, ET in [(1, 1, 1, 10), (0.9, 0.3, 2, 50), (2, 0.1, 0.5, 1e3)]:
        assert lower_bound_implicit(A, B, E0, ET) == pytest.approx(
            lower_bound_implicit_literal(A, B, E0, ET), rel=1e-10)
    assert lower_bound_implicit(1, 1, 1) == pytest.approx(
        lower_bound_implicit_literal(1, 1, 1, math.inf), rel=1e-12)


def test_stable_form_when_B_dominates():
    # A/(B sqrt E) tiny: the literal form loses all digits, the stable form does not
    A, B, E0 = 1e-6, 1e3, 1e4
    assert lower_bound_implicit(A, B, E0) == pytest.approx(quad_time(A, B, E0, mpmath.inf), rel=1e-8)


def _traj_from_energy(t, E):
    from chemobound.simulator import EnergyTerms
    z = EnergyTerms(0, 0, 0, 0)
    tr = Trajectory(ONES, [TrajectoryRecord(ti, Ei, 1.0, 1.0, 0.1, 1, 1, z) for ti, Ei in zip(t, E)])
    return tr


def test_check_odi_steady_state():
    g = Grid(0, 1, 0, 1, 8, 8)
    traj = run(ScalarField.constant(g, 2.0), ONES, TimeControls(0.1, 1.0, 0.1))
    rep = check_odi(traj, 1.0, 0.5)
    assert rep.ok and rep.n_checked == len(traj.records) - 2
    assert np.allclose(rep.margins, 4**1.5 + 0.5 * 16)
    assert rep.compliant_fraction == 1.0


def test_check_odi_decreasing_energy():
    t = np.linspace(0, 1, 11)
    rep = check_odi(_traj_from_energy(t, np.exp(-t)), 0.1, 0.1)
    assert np.all(rep.margins > 0)


def test_check_odi_flags_fast_growth():
    t = np.linspace(0, 1, 11)
    rep = check_odi(_traj_from_energy(t, np.exp(20 * t)), 1e-9, 1e-9)
    assert not rep.ok
    assert rep.first_violation_time == pytest.approx(0.1)
    with pytest.raises(ValueError):
        check_odi(_traj_from_energy(t[:2], t[:2] + 1), 1, 1)


def test_energy_return_time():
    t = np.linspace(0, 4, 5)
    E = np.array([2.0, 1.0, 1.5, 3.0, 9.0])
    assert energy_return_time(_traj_from_energy(t, E)) == pytest.approx(2 + 1 / 3)
    assert energy_return_time(_traj_from_energy(t, np.arange(5.0) + 2)) == 0.0


def test_bound_report_unit_disk(unit_disk_geom):
    rep = bound_report(ONES, unit_disk_geom, 1.0, math.pi)
    assert rep.A == pytest.approx(0.925094, abs=1e-5)
    assert rep.t_lower_explicit == pytest.approx(2 / (rep.A * math.sqrt(math.pi)), rel=1e-15)
    assert rep.t_lower_implicit < rep.t_lower_explicit
    assert rep.t_lower_implicit == pytest.approx(
        quad_time(rep.A, rep.B, math.pi, mpmath.inf), rel=1e-10)
    assert rep.out_of_regime
    assert rep.critical_mass is None
    text = rep.to_keyvalue()
    assert "critical_mass=none (sigma <= 0)" in text
    assert "A_theorem_variant=" in text
    head, row = rep.to_csv().splitlines()
    assert len(head.split(",")) == len(row.split(","))


def test_bound_report_errors(unit_disk_geom):
    with pytest.raises(ValueError, match="energy"):
        bound_report(ONES, unit_disk_geom, 1.0, 0.0)
    with pytest.raises(ValueError):
        bound_report(ONES, unit_disk_geom, -1.0, 1.0)


def test_bound_report_in_regime(unit_disk_geom):
    p = ModelParams(alpha=1, beta=1, gamma=0.5, delta=1, chi=1, xi=0.5)
    rep = bound_report(p, unit_disk_geom, 0.5, 3.0, ctilde_provenance="estimated", extra={"ctilde_seed": 7})
    assert not rep.out_of_regime
    assert rep.critical_mass == pytest.approx(4 * math.pi / 0.75)
    assert rep.A > 0 and rep.B > 0
    assert "ctilde_seed=7" in rep.to_keyvalue()
    assert "ctilde_provenance=estimated" in rep.to_keyvalue()
