"""Time stepping for the attraction-repulsion chemotaxis system.

The cell density ``u`` evolves by

    u_t = lap(u) - div(u * (chi*grad v - xi*grad w))

with ``v`` and ``w`` solving screened Poisson problems driven by ``u``. One
step is IMEX Euler: chemotactic fluxes explicitly, upwinded at faces, then
backward Euler for diffusion. All boundaries are zero flux.
"""
from __future__ import annotations

import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (
    Grid,
    ScalarField,
    _divergence,
    _face_gradient,
    dirichlet_energy,
    integrate,
    negativity_tolerance,
    solve_screened_poisson,
    solve_shifted,
)

log = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ("t", "E", "mass", "u_max", "dEdt_numeric", "odi_rhs", "odi_margin", "dt")


class CFLViolation(ValueError):
    def __init__(self, dt: float, dt_max: float):
        super().__init__(f"dt={dt:.3e} exceeds the advective stability bound {dt_max:.3e}")
        self.dt = dt
        self.dt_max = dt_max


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    beta: float
    gamma: float
    delta: float
    chi: float
    xi: float

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta", "chi", "xi"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"model parameter {name} must be positive, got {val}")

    @property
    def sigma(self) -> float:
        """Net aggregation strength ``chi*alpha - xi*gamma``."""
        return self.chi * self.alpha - self.xi * self.gamma

    @classmethod
    def ones(cls) -> "ModelParams":
        return cls(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)


@dataclass(frozen=True)
class SimState:
    t: float
    u: ScalarField
    v: ScalarField
    w: ScalarField
    dt: float
    step_count: int = 0


def solve_signals(u: ScalarField, params: ModelParams) -> tuple[ScalarField, ScalarField]:
    v = solve_screened_poisson(u, params.alpha, params.beta)
    w = solve_screened_poisson(u, params.gamma, params.delta)
    return v, w


def initial_state(u0: ScalarField, params: ModelParams, dt: float) -> SimState:
    u = ScalarField(u0.grid, u0.values, nonnegative=True)
    v, w = solve_signals(u, params)
    return SimState(0.0, u, v, w, dt, 0)


# ---------------------------------------------------------------- initial data

def make_initial_data(kind: str, grid: Grid, **kw) -> ScalarField:
    """Initial density. Kinds: ``constant(c)``, ``gaussian(center, width, mass)``,
    ``annulus(center, radius, width, mass)``.

    Gaussian and annulus data are rescaled so the discrete mass equals ``mass``.
    """
    if kind == "constant":
        c = float(kw["c"])
        if c < 0:
            raise ValueError("constant initial density must be nonnegative")
        return ScalarField.constant(grid, c, nonnegative=True)

    if kind not in ("gaussian", "annulus"):
        raise ValueError(f"unknown initial data kind {kind!r}")
    center = tuple(float(c) for c in kw["center"])
    width = float(kw["width"])
    mass = float(kw["mass"])
    if not mass > 0:
        raise ValueError("requested mass must be positive")
    if not width > 0:
        raise ValueError("width must be positive")
    if not grid.contains(center):
        raise ValueError(f"center {center} lies outside the domain")
    if width < 2 * max(grid.hx, grid.hy):
        raise ValueError(f"under-resolved initial data: width {width:g} < 2h = "
                         f"{2 * max(grid.hx, grid.hy):g}")
    x, y = grid.mesh()
    r = np.hypot(x - center[0], y - center[1])
    if kind == "gaussian":
        profile = np.exp(-0.5 * (r / width) ** 2)
    else:
        radius = float(kw["radius"])
        if not radius > 0:
            raise ValueError("annulus radius must be positive")
        profile = np.exp(-0.5 * ((r - radius) / width) ** 2)
    total = profile.sum() * grid.cell_area
    if total <= 0:
        raise ValueError("initial profile has no mass on the grid")
    return ScalarField(grid, profile * (mass / total), nonnegative=True)


def classify_mass(params: ModelParams, u0: ScalarField) -> tuple[str, bool]:
    """Return (regime, marginal) with regime one of subcritical/supercritical/repulsion_dominant."""
    sigma = params.sigma
    if sigma <= 0:
        return "repulsion_dominant", False
    mass = integrate(u0)
    crit = 4 * math.pi / sigma
    marginal = abs(mass - crit) < 1e-9 * mass
    if marginal or mass > crit:
        return "supercritical", marginal
    return "subcritical", False


# ---------------------------------------------------------------- stepping

def _face_velocity(v: np.ndarray, w: np.ndarray, grid: Grid, params: ModelParams):
    vx, vy = _face_gradient(v, grid.hx, grid.hy)
    wx, wy = _face_gradient(w, grid.hx, grid.hy)
    return params.chi * vx - params.xi * wx, params.chi * vy - params.xi * wy


def stable_dt(state: SimState, params: ModelParams, cfl: float = 0.4) -> float:
    """Largest explicit step with ``dt*(max|a_x|/hx + max|a_y|/hy) <= cfl``."""
    g = state.u.grid
    ax, ay = _face_velocity(state.v.values, state.w.values, g, params)
    rate = np.abs(ax).max() / g.hx + np.abs(ay).max() / g.hy
    return math.inf if rate == 0 else cfl / rate


def _upwind_flux(u: np.ndarray, ax: np.ndarray, ay: np.ndarray):
    fx = np.zeros_like(ax)
    fy = np.zeros_like(ay)
    a = ax[1:-1, :]
    fx[1:-1, :] = np.where(a > 0, a * u[:-1, :], a * u[1:, :])
    a = ay[:, 1:-1]
    fy[:, 1:-1] = np.where(a > 0, a * u[:, :-1], a * u[:, 1:])
    return fx, fy


def step(state: SimState, params: ModelParams, dt: float, cfl: float = 0.4) -> SimState:
    """Advance one IMEX step; raises ``CFLViolation`` when ``dt`` is too large."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    g = state.u.grid
    dt_max = stable_dt(state, params, cfl)
    if dt > dt_max:
        raise CFLViolation(dt, dt_max)
    u = state.u.values
    ax, ay = _face_velocity(state.v.values, state.w.values, g, params)
    fx, fy = _upwind_flux(u, ax, ay)
    u_star = u - dt * _divergence(fx, fy, g.hx, g.hy)
    # backward Euler diffusion: (I - dt*lap) u_new = u_star
    u_new = solve_shifted(u_star / dt, g, 1.0 / dt)
    u_field = ScalarField(g, u_new)
    v, w = solve_signals(u_field, params)
    return SimState(state.t + dt, u_field, v, w, state.dt, state.step_count + 1)


# ---------------------------------------------------------------- diagnostics

@dataclass(frozen=True)
class EnergyTerms:
    """Pieces of ``dE/dt`` for the exact solution at one instant."""

    grad_sq: float
    u3: float
    u2w: float
    u2v: float

    def rhs(self, params: ModelParams) -> float:
        return (-2.0 * self.grad_sq + params.sigma * self.u3
                + params.xi * params.delta * self.u2w - params.chi * params.beta * self.u2v)

    def scale(self, params: ModelParams) -> float:
        return (2.0 * self.grad_sq + abs(params.sigma) * self.u3
                + params.xi * params.delta * self.u2w + params.chi * params.beta * self.u2v)


def energy_terms(state: SimState) -> EnergyTerms:
    g = state.u.grid
    u = np.maximum(state.u.values, 0.0)
    u2 = u * u
    ca = g.cell_area
    return EnergyTerms(
        grad_sq=dirichlet_energy(state.u),
        u3=float(np.sum(u2 * u) * ca),
        u2w=float(np.sum(u2 * np.maximum(state.w.values, 0.0)) * ca),
        u2v=float(np.sum(u2 * np.maximum(state.v.values, 0.0)) * ca),
    )


@dataclass
class TrajectoryRecord:
    t: float
    E: float
    mass: float
    u_max: float
    dt: float
    v_mass: float
    w_mass: float
    terms: EnergyTerms
    dEdt_numeric: float = math.nan
    odi_rhs: float = math.nan
    odi_margin: float = math.nan

    def row(self) -> tuple[float, ...]:
        return tuple(getattr(self, c) for c in TRAJECTORY_COLUMNS)


@dataclass
class Trajectory:
    params: ModelParams
    records: list[TrajectoryRecord] = field(default_factory=list)
    status: str = "completed"
    message: str = ""
    blowup_indicator: str = ""
    cfl_halvings: int = 0
    steps: int = 0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def t_final(self) -> float:
        return self.records[-1].t

    def fill_derivatives(self, A: float | None = None, B: float | None = None) -> None:
        """Differentiate the recorded E(t); with (A, B) also fill the ODI columns."""
        if len(self.records) >= 3:
            t = self.column("t")
            dEdt = np.gradient(self.column("E"), t, edge_order=2)
        elif len(self.records) == 2:
            t, E = self.column("t"), self.column("E")
            dEdt = np.full(2, (E[1] - E[0]) / (t[1] - t[0]))
        else:
            dEdt = np.full(len(self.records), math.nan)
        for rec, d in zip(self.records, dEdt):
            rec.dEdt_numeric = float(d)
            if A is not None and B is not None:
                rec.odi_rhs = A * rec.E ** 1.5 + B * rec.E ** 2
                rec.odi_margin = rec.odi_rhs - rec.dEdt_numeric

    def to_csv(self, header: str = "") -> str:
        buf = io.StringIO()
        for line in header.splitlines():
            buf.write(f"# {line}\n")
        buf.write(",".join(TRAJECTORY_COLUMNS) + "\n")
        for rec in self.records:
            buf.write(",".join(f"{x!r}" for x in rec.row()) + "\n")
        buf.write(f"# status={self.status}")
        if self.blowup_indicator:
            buf.write(f" indicator={self.blowup_indicator}")
        if self.message:
            buf.write(f" message={self.message}")
        buf.write("\n")
        return buf.getvalue()


def _record(state: SimState, dt: float) -> TrajectoryRecord:
    u = state.u.values
    ca = state.u.grid.cell_area
    return TrajectoryRecord(
        t=state.t,
        E=float(np.sum(u * u) * ca),
        mass=integrate(state.u),
        u_max=float(u.max()),
        dt=dt,
        v_mass=integrate(state.v),
        w_mass=integrate(state.w),
        terms=energy_terms(state),
    )


@dataclass(frozen=True)
class TimeControls:
    dt0: float
    t_end: float
    output_interval: float
    blowup_umax_factor: float = 1e6
    blowup_energy_factor: float = 1e8
    cfl: float = 0.4
    dt_min: float = 1e-12
    grow_after: int = 20
    mass_rtol: float = 1e-9
    max_steps: int = 10_000_000

    def __post_init__(self):
        for name in ("dt0", "t_end", "output_interval", "blowup_umax_factor",
                     "blowup_energy_factor", "cfl", "dt_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"time control {name} must be positive")


def run(u0: ScalarField, params: ModelParams, controls: TimeControls,
        odi_constants: tuple[float, float] | None = None) -> Trajectory:
    """Integrate from ``u0`` until ``t_end``, detected blow-up, or step underflow.

    Rows are recorded at every multiple of ``output_interval`` (steps are
    shortened to land on them) and, on blow-up, at the triggering step.
    """
    c = controls
    state = initial_state(u0, params, c.dt0)
    traj = Trajectory(params)
    first = _record(state, c.dt0)
    traj.records.append(first)
    mass0, umax0, E0 = first.mass, first.u_max, first.E
    umax_limit = c.blowup_umax_factor * umax0
    E_limit = c.blowup_energy_factor * E0

    dt = c.dt0
    accepted_since_change = 0
    n_out = 1
    eps_t = 1e-12 * max(1.0, c.t_end)
    while state.t < c.t_end - eps_t:
        if traj.steps >= c.max_steps:
            traj.status = "step_underflow"
            traj.message = f"step budget {c.max_steps} exhausted at t={state.t:.6g}"
            break
        t_next = min(n_out * c.output_interval, c.t_end)
        dt_try = min(dt, t_next - state.t)
        try:
            new = step(state, params, dt_try, c.cfl)
        except CFLViolation:
            dt = dt_try / 2
            traj.cfl_halvings += 1
            accepted_since_change = 0
            log.info("t=%.6g: CFL violation, halving dt to %.3e", state.t, dt)
            if dt < c.dt_min:
                traj.status = "step_underflow"
                traj.message = f"dt fell below dt_min={c.dt_min:.1e} at t={state.t:.6g}"
                break
            continue

        state = new
        traj.steps += 1
        accepted_since_change += 1
        if accepted_since_change >= c.grow_after and dt < c.dt0:
            dt = min(2 * dt, c.dt0)
            accepted_since_change = 0

        u = state.u.values
        mass = integrate(state.u)
        if abs(mass - mass0) > c.mass_rtol * abs(mass0):
            traj.records.append(_record(state, dt_try))
            traj.status = "invariant_violation"
            traj.message = f"mass drift {abs(mass - mass0) / mass0:.3e} at t={state.t:.6g}"
            break
        if u.min() < -negativity_tolerance(u):
            traj.records.append(_record(state, dt_try))
            traj.status = "invariant_violation"
            traj.message = f"negative density {u.min():.3e} at t={state.t:.6g}"
            break

        u_hit = u.max() > umax_limit
        E_hit = float(np.sum(u * u) * state.u.grid.cell_area) > E_limit
        if u_hit or E_hit:
            traj.records.append(_record(state, dt_try))
            traj.status = "blowup_detected"
            traj.blowup_indicator = "+".join(n for n, hit in (("u_max", u_hit), ("E", E_hit)) if hit)
            traj.message = f"blow-up declared at t={state.t:.9g}"
            break

        if state.t >= t_next - eps_t:
            traj.records.append(_record(state, dt_try))
            n_out += 1

    if odi_constants is None:
        traj.fill_derivatives()
    else:
        traj.fill_derivatives(*odi_constants)
    return traj


