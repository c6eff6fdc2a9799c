"""Blow-up time lower bounds from the energy inequality ``E' <= A E^{3/2} + B E^2``."""
from __future__ import annotations

import io
import math
import sys
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import GeometryConstants
from .simulator import ModelParams, Trajectory


def critical_mass(params: ModelParams) -> float | None:
    sigma = params.sigma
    return 4 * math.pi / sigma if sigma > 0 else None


def default_epsilon(params: ModelParams) -> float:
    return params.gamma / params.delta


def intermediate_constants(params: ModelParams, ctilde: float,
                           epsilon: float | None = None) -> tuple[float, float]:
    """Coefficients of ``int u^3`` and ``(int u^2)^{3/2}`` after the Young split with ``epsilon``."""
    eps = default_epsilon(params) if epsilon is None else epsilon
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    if ctilde < 0:
        raise ValueError("ctilde must be nonnegative")
    p = params
    young = (1.5 * eps) ** -2
    c1 = p.sigma + p.xi * p.delta * eps + (2 * p.xi * p.gamma**3 / (9 * p.delta)) * young
    c2 = (ctilde * p.xi * p.delta / 3) * young
    return c1, c2


def gradient_residual_coefficient(ctilde1: float, c1: float) -> float:
    """Coefficient left on ``int |grad u|^2`` after absorbing with the L3 inequality.

    ``-2`` from the energy identity plus ``ctilde1 * 2/c1`` from the interpolation;
    zero exactly when ``c1 = ctilde1``.
    """
    return -2.0 + ctilde1 * (2.0 / c1)


def assemble_AB(ctilde1: float, ctilde2: float, geom: GeometryConstants) -> tuple[float, float]:
    if not ctilde1 > 0:
        raise ValueError(f"ctilde1={ctilde1} must be positive to absorb the gradient term")
    c1 = ctilde1
    # exact in real arithmetic; allow one rounding in c1 * (2/c1)
    if abs(gradient_residual_coefficient(ctilde1, c1)) > 4 * sys.float_info.epsilon:
        raise ArithmeticError("gradient term does not cancel")
    A = ctilde1 * (math.sqrt(2) / 3) * geom.m1 + ctilde2
    B = ctilde1 * (geom.m2**2 * c1 / 16)
    return A, B


def constants_AB(params: ModelParams, geom: GeometryConstants, ctilde: float) -> tuple[float, float]:
    """Closed forms at ``epsilon = gamma/delta``."""
    p = params
    bracket = p.alpha * p.chi + 8 * p.gamma * p.xi * p.delta / 81
    A = bracket * (math.sqrt(2) / 3) * geom.m1 + 4 * ctilde * p.xi * p.delta**3 / (27 * p.gamma**2)
    B = bracket**2 * geom.m2**2 / 16
    return A, B


def A_theorem_variant(params: ModelParams, geom: GeometryConstants, ctilde: float) -> float:
    """Alternative ``A`` with ``k = 4 ctilde xi delta^3 / (27 gamma^2)`` in the bracket
    in place of ``8 gamma xi delta / 81``; reported next to ``A``."""
    p = params
    k = (ctilde * p.xi * p.delta / 3) * (1.5 * p.gamma / p.delta) ** -2
    return (p.alpha * p.chi + k) * (math.sqrt(2) / 3) * geom.m1 + k


def optimize_epsilon(params: ModelParams, geom: GeometryConstants, ctilde: float,
                     bracket: tuple[float, float] = (-8.0, 8.0), tol: float = 1e-10) -> float:
    """Extension: the epsilon minimising A, by golden-section search on log(epsilon).

    Not used by default; the reported constants always use ``gamma/delta``.
    """
    def A_of(log_eps: float) -> float:
        c1, c2 = intermediate_constants(params, ctilde, math.exp(log_eps))
        return c1 * (math.sqrt(2) / 3) * geom.m1 + c2

    lo, hi = bracket
    inv = (math.sqrt(5) - 1) / 2
    a, b = hi - inv * (hi - lo), lo + inv * (hi - lo)
    fa, fb = A_of(a), A_of(b)
    while hi - lo > tol:
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - inv * (hi - lo)
            fa = A_of(a)
        else:
            lo, a, fa = a, b, fb
            b = lo + inv * (hi - lo)
            fb = A_of(b)
    return math.exp(0.5 * (lo + hi))


def lower_bound_explicit(A: float, E0: float) -> float:
    if not (A > 0 and E0 > 0):
        raise ValueError("need A > 0 and E0 > 0")
    return 2.0 / (A * math.sqrt(E0))


def _x_minus_log1p(x: float) -> float:
    if x == math.inf:
        return math.inf
    if abs(x) < 1e-3:
        # alternating series; truncation error below x^7/7
        return x * x * (0.5 - x * (1 / 3 - x * (0.25 - x * (0.2 - x / 6))))
    return x - math.log1p(x)


def lower_bound_implicit(A: float, B: float, E0: float, E_target: float = math.inf) -> float:
    """Time for ``E' = A E^{3/2} + B E^2`` to carry E from ``E0`` to ``E_target``.

    With ``s = sqrt(E)`` and ``x = A/(B s)`` the antiderivative is
    ``(2B/A^2) * (log B + log1p(x) - x)``, which stays accurate when
    ``B sqrt(E)`` dominates ``A``.
    """
    if not (A > 0 and B >= 0 and E0 > 0):
        raise ValueError("need A > 0, B >= 0 and E0 > 0")
    if E_target < E0:
        raise ValueError(f"E_target={E_target} is below E0={E0}")
    if E_target == E0:
        return 0.0
    s0 = math.sqrt(E0)
    sT = math.sqrt(E_target)
    if B == 0:
        return (2.0 / A) * (1.0 / s0 - 1.0 / sT)
    x0 = A / (B * s0)
    xT = A / (B * sT)
    return (2.0 * B / A**2) * (_x_minus_log1p(x0) - _x_minus_log1p(xT))


def lower_bound_implicit_literal(A: float, B: float, E0: float, E_target: float) -> float:
    """The integrated form written with plain logarithms (reference expression)."""
    if math.isinf(E_target):
        return 2 / (A * math.sqrt(E0)) + (B / A**2) * math.log(E0 * B**2 / (A + B * math.sqrt(E0)) ** 2)
    return ((2 / A) * (1 / math.sqrt(E0) - 1 / math.sqrt(E_target))
            + (B / A**2) * math.log(E0 * (A + B * math.sqrt(E_target)) ** 2
                                    / (E_target * (A + B * math.sqrt(E0)) ** 2)))


def energy_return_time(trajectory: Trajectory) -> float:
    """Last time the energy equals its initial value (linear interpolation, backward scan)."""
    t = trajectory.column("t")
    E = trajectory.column("E")
    E0 = E[0]
    for i in range(len(E) - 1, 0, -1):
        if E[i - 1] <= E0 <= E[i] or E[i - 1] >= E0 >= E[i]:
            if E[i] == E[i - 1]:
                return float(t[i])
            return float(t[i - 1] + (E0 - E[i - 1]) * (t[i] - t[i - 1]) / (E[i] - E[i - 1]))
    return float(t[0])


@dataclass
class OdiReport:
    n_checked: int
    n_violations: int
    min_margin: float
    min_relative_margin: float
    first_violation_time: float | None
    compliant_fraction: float
    margins: np.ndarray = field(repr=False)

    @property
    def ok(self) -> bool:
        return self.n_violations == 0


def check_odi(trajectory: Trajectory, A: float, B: float, tolerance: float = 0.05) -> OdiReport:
    """Compare the differenced energy with ``A E^{3/2} + B E^2`` at interior records."""
    recs = trajectory.records
    if len(recs) < 3:
        raise ValueError("ODI check needs at least 3 records")
    E = trajectory.column("E")
    t = trajectory.column("t")
    dEdt = np.gradient(E, t, edge_order=2)
    rhs = A * E**1.5 + B * E**2
    margin = (rhs - dEdt)[1:-1]
    scale = (1.0 + rhs)[1:-1]
    viol = margin < -tolerance * scale
    first = float(t[1:-1][viol][0]) if viol.any() else None
    return OdiReport(
        n_checked=len(margin),
        n_violations=int(viol.sum()),
        min_margin=float(margin.min()),
        min_relative_margin=float((margin / scale).min()),
        first_violation_time=first,
        compliant_fraction=float(1.0 - viol.mean()),
        margins=margin,
    )


REPORT_KEYS = ("ctilde", "ctilde_provenance", "epsilon", "c1", "ctilde1", "ctilde2", "A", "B",
               "A_theorem_variant", "sigma", "critical_mass", "out_of_regime", "E0",
               "t_lower_explicit", "t_lower_implicit", "t_lower_explicit_theorem_variant")


@dataclass
class BoundReport:
    ctilde: float
    ctilde_provenance: str
    epsilon: float
    c1: float
    ctilde1: float
    ctilde2: float
    A: float
    B: float
    A_theorem_variant: float
    sigma: float
    critical_mass: float | None
    out_of_regime: bool
    E0: float
    t_lower_explicit: float
    t_lower_implicit: float
    t_lower_explicit_theorem_variant: float
    extra: dict = field(default_factory=dict)

    def items(self):
        d = asdict(self)
        extra = d.pop("extra")
        out = [(k, d[k]) for k in REPORT_KEYS]
        return out + sorted(extra.items())

    def to_keyvalue(self) -> str:
        lines = []
        for k, v in self.items():
            if v is None:
                v = "none (sigma <= 0)"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def to_csv(self, header: bool = True) -> str:
        items = self.items()
        buf = io.StringIO()
        if header:
            buf.write(",".join(k for k, _ in items) + "\n")
        buf.write(",".join("" if v is None else (repr(v) if isinstance(v, float) else str(v))
                           for _, v in items) + "\n")
        return buf.getvalue()


def bound_report(params: ModelParams, geom: GeometryConstants, ctilde: float, E0: float,
                 ctilde_provenance: str = "user", epsilon: float | None = None,
                 extra: dict | None = None) -> BoundReport:
    if not E0 > 0:
        raise ValueError("initial energy must be positive")
    if ctilde < 0:
        raise ValueError("ctilde must be nonnegative")
    eps = default_epsilon(params) if epsilon is None else epsilon
    ct1, ct2 = intermediate_constants(params, ctilde, eps)
    A, B = assemble_AB(ct1, ct2, geom)
    A_var = A_theorem_variant(params, geom, ctilde)
    return BoundReport(
        ctilde=ctilde, ctilde_provenance=ctilde_provenance, epsilon=eps, c1=ct1,
        ctilde1=ct1, ctilde2=ct2, A=A, B=B, A_theorem_variant=A_var,
        sigma=params.sigma, critical_mass=critical_mass(params),
        out_of_regime=params.sigma <= 0, E0=E0,
        t_lower_explicit=lower_bound_explicit(A, E0),
        t_lower_implicit=lower_bound_implicit(A, B, E0, math.inf),
        t_lower_explicit_theorem_variant=lower_bound_explicit(A_var, E0),
        extra=dict(extra or {}),
    )
