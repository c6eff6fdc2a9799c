"""Quadrature checks of the trace, L3 and elliptic cubic inequalities on trial functions,
plus an empirical estimate of the elliptic constant ``ctilde``."""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Grid,
    ScalarField,
    cell_gradient,
    integrate_boundary,
    solve_screened_poisson,
)
from .geometry import DomainGeometry, GeometryConstants, Rectangle
from .simulator import ModelParams

VIOLATION_RTOL = 1e-8
DEFAULT_C1_SWEEP = (0.1, 1.0, 10.0)


@dataclass(frozen=True)
class TrialFunction:
    """A nonnegative C^1 trial function.

    ``family`` is ``"constant"`` (``data = (c,)``), ``"trig"`` (square of a
    cosine polynomial; ``data`` is the coefficient matrix, rows for x) or
    ``"gaussian"`` (``data = (amplitude, cx, cy, width)``).
    """

    family: str
    data: tuple

    def describe(self) -> str:
        if self.family == "constant":
            return f"constant(c={self.data[0]:.6g})"
        if self.family == "gaussian":
            a, cx, cy, w = self.data
            return f"gaussian(amp={a:.6g}, center=({cx:.6g}, {cy:.6g}), width={w:.6g})"
        deg = len(self.data) - 1
        return f"trig(degree={deg}, c00={self.data[0][0]:.6g})"

    def evaluate(self, grid: Grid) -> ScalarField:
        if self.family == "constant":
            return ScalarField.constant(grid, self.data[0], nonnegative=True)
        if self.family == "gaussian":
            a, cx, cy, w = self.data
            x, y = grid.mesh()
            vals = a * np.exp(-0.5 * ((x - cx) ** 2 + (y - cy) ** 2) / w**2)
            return ScalarField(grid, vals, nonnegative=True)
        coef = np.asarray(self.data, dtype=float)
        k = np.arange(coef.shape[0])
        # cosines in the rectangle's own coordinates have zero normal derivative on the walls
        cx = np.cos(np.pi * np.outer(k, (grid.xc - grid.x_min) / (grid.x_max - grid.x_min)))
        cy = np.cos(np.pi * np.outer(k, (grid.yc - grid.y_min) / (grid.y_max - grid.y_min)))
        lin = cx.T @ coef @ cy
        return ScalarField(grid, lin * lin, nonnegative=True)


def sample_trials(rng: np.random.Generator, n: int, extent: tuple[float, float, float, float],
                  include_constant: bool = True, max_degree: int = 6) -> list[TrialFunction]:
    """Draw ``n`` trial functions; the first is the constant 1 when ``include_constant``.

    Draws are sequential, so a smaller ``n`` with the same generator state
    yields a prefix of a larger draw.
    """
    xmin, xmax, ymin, ymax = extent
    side = min(xmax - xmin, ymax - ymin)
    trials: list[TrialFunction] = []
    for i in range(n):
        if i == 0 and include_constant:
            trials.append(TrialFunction("constant", (1.0,)))
            continue
        u = rng.random()
        scale = float(np.exp(rng.uniform(-2.0, 2.0)))
        if u < 0.1:
            trials.append(TrialFunction("constant", (scale,)))
        elif u < 0.45:
            cx = float(rng.uniform(xmin, xmax))
            cy = float(rng.uniform(ymin, ymax))
            width = float(side * np.exp(rng.uniform(np.log(0.03), np.log(0.5))))
            trials.append(TrialFunction("gaussian", (scale, cx, cy, width)))
        else:
            deg = int(rng.integers(1, max_degree + 1))
            j = np.arange(deg + 1)
            decay = 1.0 / (1.0 + j[:, None] + j[None, :])
            coef = rng.normal(size=(deg + 1, deg + 1)) * decay
            coef[0, 0] += rng.uniform(-1.0, 2.0)
            coef *= math.sqrt(scale)
            trials.append(TrialFunction("trig", tuple(tuple(map(float, r)) for r in coef)))
    return trials


@dataclass(frozen=True)
class InequalityCheck:
    """``lhs <= sum(rhs_terms)`` evaluated by quadrature."""

    lhs: float
    rhs_terms: tuple[float, ...]

    @property
    def rhs(self) -> float:
        return float(sum(self.rhs_terms))

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def violated(self, rtol: float = VIOLATION_RTOL) -> bool:
        return self.margin < -rtol * (1.0 + abs(self.rhs))


def _v_grad_norm(V: ScalarField) -> np.ndarray:
    gx, gy = cell_gradient(V)
    return np.hypot(gx, gy)


def check_trace_inequality(V: ScalarField, geom: GeometryConstants) -> InequalityCheck:
    """Boundary ``int V^2`` against ``(4 m1/3) int V^2 + 2 (m2-1) int V |grad V|``."""
    g = V.grid
    v = V.clipped()
    lhs = integrate_boundary(ScalarField(g, v * v))
    l2 = float(np.sum(v * v) * g.cell_area)
    vg = float(np.sum(v * _v_grad_norm(V)) * g.cell_area)
    return InequalityCheck(lhs, (4 * geom.m1 / 3 * l2, 2 * (geom.m2 - 1) * vg))


def check_l3_inequality(V: ScalarField, geom: GeometryConstants, c1: float) -> InequalityCheck:
    if not c1 > 0:
        raise ValueError(f"c1 must be positive, got {c1}")
    g = V.grid
    v = V.clipped()
    l2 = float(np.sum(v * v) * g.cell_area)
    l3 = float(np.sum(v**3) * g.cell_area)
    grad_sq = float(np.sum(_v_grad_norm(V) ** 2) * g.cell_area)
    return InequalityCheck(l3, (math.sqrt(2) * geom.m1 / 3 * l2**1.5,
                                geom.m2**2 * c1 / 16 * l2**2,
                                2 / c1 * grad_sq))


def _ehrling_parts(f: ScalarField, params: ModelParams) -> tuple[float, float, float]:
    """(int phi^3, (2 gamma^3 / 3 delta^2) int f^3, int f^2)."""
    phi = solve_screened_poisson(f, params.gamma, params.delta)
    g = f.grid
    fv = f.clipped()
    p = np.maximum(phi.values, 0.0)
    coef = 2 * params.gamma**3 / (3 * params.delta**2)
    return (float(np.sum(p**3) * g.cell_area), coef * float(np.sum(fv**3) * g.cell_area),
            float(np.sum(fv * fv) * g.cell_area))


def check_ehrling_bound(f: ScalarField, params: ModelParams, ctilde: float) -> InequalityCheck:
    phi3, f3_term, f2 = _ehrling_parts(f, params)
    return InequalityCheck(phi3, (f3_term, ctilde * f2**1.5))


def ehrling_ratio(f: ScalarField, params: ModelParams) -> float:
    """Smallest ctilde making the elliptic bound hold for this ``f`` (clipped at 0)."""
    phi3, f3_term, f2 = _ehrling_parts(f, params)
    if f2 == 0:
        return 0.0
    return max(0.0, (phi3 - f3_term) / f2**1.5)


def constant_ratio(params: ModelParams, area: float) -> float:
    """Ehrling ratio of a constant source, where ``phi = (gamma/delta) f``."""
    g, d = params.gamma, params.delta
    return max(0.0, g**3 * (1 / d**3 - 2 / (3 * d**2))) / math.sqrt(area)


@dataclass(frozen=True)
class CtildeEstimate:
    value: float
    n_trials: int
    argmax_description: str
    safety_factor: float
    raw_max: float
    seed: int
    grid_n: int

    def to_keyvalue(self) -> str:
        return (f"ctilde={self.value!r}\nraw_max={self.raw_max!r}\n"
                f"safety_factor={self.safety_factor!r}\nn_trials={self.n_trials}\n"
                f"seed={self.seed}\ngrid_n={self.grid_n}\n"
                f"argmax={self.argmax_description}\nprovenance=estimated\n")


def bench_grid(domain: DomainGeometry, n: int) -> Grid:
    if not isinstance(domain.shape, Rectangle):
        raise ValueError("quadrature checks need a rectangle domain; "
                         f"got {domain.shape.kind}")
    r = domain.shape
    # keep cells close to square
    if r.a >= r.b:
        return Grid.for_rectangle(r, n, max(4, round(n * r.b / r.a)))
    return Grid.for_rectangle(r, max(4, round(n * r.a / r.b)), n)


def estimate_ctilde(domain: DomainGeometry, params: ModelParams, n_trials: int, seed: int,
                    grid_n: int = 128, safety_factor: float = 2.0,
                    trials: list[TrialFunction] | None = None) -> CtildeEstimate:
    """Safety factor times the largest observed Ehrling ratio over seeded trials.

    The first trial is always the constant. On non-rectangular domains only that
    trial is available (evaluated in closed form from the area).
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if not isinstance(domain.shape, Rectangle):
        if n_trials != 1:
            raise ValueError("non-rectangular domains only support the constant trial (n_trials=1)")
        raw = constant_ratio(params, domain.area)
        return CtildeEstimate(safety_factor * raw, 1, "constant(c=1) [closed form]",
                              safety_factor, raw, seed, 0)
    grid = bench_grid(domain, grid_n)
    if trials is None:
        trials = sample_trials(np.random.default_rng(seed), n_trials,
                               (grid.x_min, grid.x_max, grid.y_min, grid.y_max))
    best, best_desc = -1.0, ""
    for tf in trials[:n_trials]:
        r = ehrling_ratio(tf.evaluate(grid), params)
        if r > best:
            best, best_desc = r, tf.describe()
    return CtildeEstimate(safety_factor * best, n_trials, best_desc, safety_factor, best,
                          seed, grid_n)


@dataclass
class BenchRow:
    trial_id: int
    family: str
    check: str
    lhs: float
    rhs_terms: tuple[float, ...]
    margin: float
    flagged: bool = False
    confirmed: bool = False


@dataclass
class BenchReport:
    rows: list[BenchRow] = field(default_factory=list)
    ctilde: CtildeEstimate | None = None
    n_trials: int = 0
    seed: int = 0

    def violations(self, check_prefix: str = "") -> list[BenchRow]:
        return [r for r in self.rows if r.confirmed and r.check.startswith(check_prefix)]

    def flagged(self, check_prefix: str = "") -> list[BenchRow]:
        return [r for r in self.rows if r.flagged and r.check.startswith(check_prefix)]

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        for line in header.splitlines():
            buf.write(f"# {line}\n")
        buf.write("trial_id,family,check,lhs,rhs_1,rhs_2,rhs_3,margin,violation\n")
        for r in self.rows:
            terms = list(r.rhs_terms) + [0.0] * (3 - len(r.rhs_terms))
            buf.write(f"{r.trial_id},{r.family},{r.check},{r.lhs!r},"
                      + ",".join(repr(float(t)) for t in terms)
                      + f",{r.margin!r},{int(r.confirmed)}\n")
        checks = sorted({r.check for r in self.rows})
        buf.write(f"# summary n_trials={self.n_trials} seed={self.seed}\n")
        for c in checks:
            rows = [r for r in self.rows if r.check == c]
            buf.write(f"# {c}: rows={len(rows)} min_margin={min(r.margin for r in rows)!r} "
                      f"flagged={sum(r.flagged for r in rows)} "
                      f"confirmed={sum(r.confirmed for r in rows)}\n")
        if self.ctilde is not None:
            buf.write(f"# ctilde={self.ctilde.value!r} raw_max={self.ctilde.raw_max!r} "
                      f"safety_factor={self.ctilde.safety_factor!r}\n")
        return buf.getvalue()


def run_bench(domain: DomainGeometry, geom: GeometryConstants, params: ModelParams,
              n_trials: int, seed: int, grid_n: int = 256,
              c1_values=DEFAULT_C1_SWEEP, ctilde: float | None = None,
              safety_factor: float = 2.0, heldout: bool = True) -> BenchReport:
    """Check trace and L3 inequalities on ``n_trials`` trials and the elliptic bound.

    ``ctilde`` defaults to the estimate from these same trials; with ``heldout``
    the elliptic bound is then also checked on a fresh set of the same size
    (seeded with ``seed + 1``). A flagged margin is only reported as a
    violation if it stays negative on a grid refined by 2.
    """
    grid = bench_grid(domain, grid_n)
    extent = (grid.x_min, grid.x_max, grid.y_min, grid.y_max)
    trials = sample_trials(np.random.default_rng(seed), n_trials, extent)
    report = BenchReport(n_trials=n_trials, seed=seed)

    def confirm(tf: TrialFunction, checker) -> bool:
        return checker(tf.evaluate(grid.refined(2))).violated()

    ratios = []
    for i, tf in enumerate(trials):
        V = tf.evaluate(grid)
        checks = [("trace", lambda F: check_trace_inequality(F, geom))]
        checks += [(f"l3[c1={c}]", lambda F, c=c: check_l3_inequality(F, geom, c))
                   for c in c1_values]
        for name, checker in checks:
            res = checker(V)
            row = BenchRow(i, tf.family, name, res.lhs, res.rhs_terms, res.margin)
            if res.violated():
                row.flagged = True
                row.confirmed = confirm(tf, checker)
            report.rows.append(row)
        ratios.append((ehrling_ratio(V, params), tf))

    if ctilde is None:
        raw, best = max(ratios, key=lambda p: p[0])
        report.ctilde = CtildeEstimate(safety_factor * raw, n_trials, best.describe(),
                                       safety_factor, raw, seed, grid_n)
        ctilde = report.ctilde.value

    ehrling_sets = [("ehrling", trials)]
    if heldout:
        fresh = sample_trials(np.random.default_rng(seed + 1), n_trials, extent,
                              include_constant=False)
        ehrling_sets.append(("ehrling_heldout", fresh))
    for name, trial_set in ehrling_sets:
        for i, tf in enumerate(trial_set):
            res = check_ehrling_bound(tf.evaluate(grid), params, ctilde)
            row = BenchRow(i, tf.family, name, res.lhs, res.rhs_terms, res.margin)
            if res.violated():
                row.flagged = True
                row.confirmed = check_ehrling_bound(
                    tf.evaluate(grid.refined(2)), params, ctilde).violated()
            report.rows.append(row)
    return report
