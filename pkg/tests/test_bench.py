import math

import numpy as np
import pytest

from chemobound.bench import (
    TrialFunction,
    bench_grid,
    check_ehrling_bound,
    check_l3_inequality,
    check_trace_inequality,
    constant_ratio,
    ehrling_ratio,
    estimate_ctilde,
    run_bench,
    sample_trials,
)
from chemobound.fields import Grid, ScalarField
from chemobound.geometry import Disk, Rectangle, compute_geometry_constants, make_domain
from chemobound.simulator import ModelParams

ONES = ModelParams.ones()


def rect_setup(a, b, n=64):
    dom = make_domain(Rectangle(a, b, (0.0, 0.0)), (0.0, 0.0))
    return dom, compute_geometry_constants(dom), bench_grid(dom, n)


def test_trace_constant_wide_rectangle():
    _, geom, grid = rect_setup(2, 1)
    res = check_trace_inequality(ScalarField.constant(grid, 1.0), geom)
    assert res.lhs == pytest.approx(12.0, abs=1e-10)
    assert res.rhs == pytest.approx(16.0, abs=1e-10)
    assert res.margin == pytest.approx(4.0, abs=1e-10)


def test_trace_constant_square_is_equality(unit_square, unit_square_geom):
    grid = bench_grid(unit_square, 64)
    assert abs(check_trace_inequality(ScalarField.constant(grid, 1.0), unit_square_geom).margin) < 1e-10
    _, geom, g2 = rect_setup(1, 1)
    assert abs(check_trace_inequality(ScalarField.constant(g2, 1.0), geom).margin) < 1e-10


def test_trace_cosine_profile():
    _, geom, grid = rect_setup(1, 1, 256)
    V = ScalarField.from_function(grid, lambda x, y: (1 + np.cos(np.pi * x) / 2) ** 2)
    assert not check_trace_inequality(V, geom).violated()


@pytest.mark.parametrize("lam", [2.0, 10.0])
def test_trace_margin_scales_quadratically(lam):
    _, geom, grid = rect_setup(1.5, 1, 64)
    tf = sample_trials(np.random.default_rng(3), 5, (-1.5, 1.5, -1, 1))[3]
    V = tf.evaluate(grid)
    m1 = check_trace_inequality(V, geom).margin
    m2 = check_trace_inequality(ScalarField(grid, lam * V.values, nonnegative=True), geom).margin
    assert m2 == pytest.approx(lam**2 * m1, rel=1e-12)


def test_l3_constant_unit_square(unit_square, unit_square_geom):
    grid = bench_grid(unit_square, 32)
    res = check_l3_inequality(ScalarField.constant(grid, 1.0), unit_square_geom, 1.0)
    assert res.lhs == pytest.approx(1.0, abs=1e-12)
    expected = math.sqrt(2) + (1 + math.sqrt(2)) ** 2 / 16 - 1
    assert res.margin == pytest.approx(expected, abs=1e-12)
    assert res.margin == pytest.approx(0.7785, abs=1e-4)


def test_l3_zero_and_errors(unit_square, unit_square_geom):
    grid = bench_grid(unit_square, 16)
    assert check_l3_inequality(ScalarField.constant(grid, 0.0), unit_square_geom, 1.0).margin == 0
    with pytest.raises(ValueError):
        check_l3_inequality(ScalarField.constant(grid, 1.0), unit_square_geom, 0.0)


def test_l3_sweep_random_trig(unit_square, unit_square_geom):
    grid = bench_grid(unit_square, 128)
    trials = [t for t in sample_trials(np.random.default_rng(11), 30, (0, 1, 0, 1)) if t.family == "trig"]
    assert trials
    for tf in trials:
        V = tf.evaluate(grid)
        for c1 in (0.1, 1.0, 10.0):
            assert not check_l3_inequality(V, unit_square_geom, c1).violated()


def test_ehrling_constant_cases(unit_square):
    grid = bench_grid(unit_square, 32)
    f = ScalarField.constant(grid, 1.0)
    assert check_ehrling_bound(f, ONES, 1.0).margin == pytest.approx(2 / 3, abs=1e-10)
    assert abs(check_ehrling_bound(f, ONES, 1 / 3).margin) < 1e-10
    assert ehrling_ratio(f, ONES) == pytest.approx(1 / 3, abs=1e-12)
    assert constant_ratio(ONES, 1.0) == pytest.approx(1 / 3)
    assert constant_ratio(ONES, math.pi) == pytest.approx((1 / 3) / math.sqrt(math.pi))
    # 1/delta^3 < 2/(3 delta^2) makes the constant ratio vanish
    assert constant_ratio(ModelParams(1, 1, 1, 2, 1, 1), 1.0) == 0.0


def test_trial_functions_nonnegative_and_neumann():
    grid = Grid(-1, 2, 0, 1, 48, 16)
    for tf in sample_trials(np.random.default_rng(5), 40, (-1, 2, 0, 1)):
        vals = tf.evaluate(grid).values
        assert vals.min() >= 0 and np.isfinite(vals).all()
    trig = TrialFunction("trig", ((1.0, 0.5), (0.3, 0.2)))
    assert "degree=1" in trig.describe()


def test_sampling_is_prefix_stable():
    a = sample_trials(np.random.default_rng(9), 10, (0, 1, 0, 1))
    b = sample_trials(np.random.default_rng(9), 25, (0, 1, 0, 1))
    assert a == b[:10]
    assert a[0] == TrialFunction("constant", (1.0,))


def test_estimate_ctilde_constant_only(unit_square):
    est = estimate_ctilde(unit_square, ONES, 1, seed=0, grid_n=32)
    assert est.value == 2.0 * est.raw_max
    assert est.raw_max == pytest.approx(1 / 3, abs=1e-12)
    assert est.argmax_description.startswith("constant")
    assert "provenance=estimated" in est.to_keyvalue()


def test_estimate_ctilde_disk_closed_form():
    disk = make_domain(Disk(1.0, (0.0, 0.0)), (0.0, 0.0))
    est = estimate_ctilde(disk, ONES, 1, seed=0)
    assert est.value == pytest.approx(2 * (1 / 3) / math.sqrt(math.pi), rel=1e-14)
    assert est.raw_max == pytest.approx(0.1881, abs=1e-4)
    with pytest.raises(ValueError):
        estimate_ctilde(disk, ONES, 5, seed=0)


def test_estimate_ctilde_monotone_in_trials(unit_square):
    vals = [estimate_ctilde(unit_square, ONES, n, seed=4, grid_n=32).value for n in (1, 5, 20, 60)]
    assert all(x <= y for x, y in zip(vals, vals[1:]))
    assert vals[0] >= 2 * constant_ratio(ONES, 1.0) - 1e-12


def test_estimate_ctilde_deterministic(unit_square):
    a = estimate_ctilde(unit_square, ONES, 15, seed=2, grid_n=32)
    b = estimate_ctilde(unit_square, ONES, 15, seed=2, grid_n=32)
    assert a == b


def test_bench_grid_rejects_disk():
    disk = make_domain(Disk(1.0, (0.0, 0.0)), (0.0, 0.0))
    with pytest.raises(ValueError):
        bench_grid(disk, 32)


def test_run_bench_small(unit_square, unit_square_geom):
    rep = run_bench(unit_square, unit_square_geom, ONES, 12, seed=1, grid_n=64)
    assert not rep.violations()
    assert {r.check for r in rep.rows} >= {"trace", "l3[c1=1.0]", "ehrling", "ehrling_heldout"}
    assert all(r.margin >= 0 for r in rep.rows if r.check == "ehrling")
    text = rep.to_csv("hdr")
    assert text.startswith("# hdr\ntrial_id,family,check")
    assert "# summary n_trials=12 seed=1" in text
