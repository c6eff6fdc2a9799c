"""Command line front end.

Exit codes: 0 success, 1 check failure, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import BoundReport, bound_report, check_odi, energy_return_time
from .bench import estimate_ctilde, run_bench
from .config import ConfigError, ExperimentConfig
from .fields import SolverError
from .geometry import Rectangle, compute_geometry_constants
from .simulator import Trajectory, run

log = logging.getLogger("chemobound")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _header(cfg: ExperimentConfig, command: str) -> str:
    return f"chemobound {__version__} {command} config_sha256={cfg.sha256()}"


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text)


def _comment(header: str, body: str) -> str:
    return f"# {header}\n{body}"


def _initial_energy(cfg: ExperimentConfig, domain) -> tuple[float, object]:
    """E(0) and the sampled initial field (None when evaluated in closed form)."""
    if cfg.initial_kind() == "constant" and not (isinstance(domain.shape, Rectangle)
                                                 and cfg.has("grid")):
        c = float(cfg.block("initial")["c"])
        return c * c * domain.area, None
    grid = cfg.grid(domain)
    u0 = cfg.initial(grid)
    return float(np.sum(u0.values**2) * grid.cell_area), u0


def _ctilde(cfg: ExperimentConfig, domain, params) -> tuple[float, str, dict]:
    b = cfg.ctilde_block()
    if b["mode"] == "user":
        return float(b["value"]), "user", {}
    seed = int(b.get("seed", 0))
    grid_n = int(b.get("grid_n", cfg.block("grid")["nx"] if cfg.has("grid") else 128))
    try:
        est = estimate_ctilde(domain, params, b["n_trials"], seed, grid_n=grid_n,
                              safety_factor=float(b.get("safety_factor", 2.0)))
    except ValueError as exc:
        raise ConfigError(f"ctilde: {exc}") from exc
    meta = {"ctilde_seed": seed, "ctilde_n_trials": est.n_trials, "ctilde_raw_max": est.raw_max,
            "ctilde_safety_factor": est.safety_factor, "ctilde_grid_n": est.grid_n,
            "ctilde_argmax": est.argmax_description}
    return est.value, "estimated", meta


def _bound(cfg: ExperimentConfig) -> tuple[BoundReport, object]:
    domain = cfg.domain()
    geom = compute_geometry_constants(domain)
    params = cfg.params()
    E0, u0 = _initial_energy(cfg, domain)
    ctilde, prov, meta = _ctilde(cfg, domain, params)
    try:
        rep = bound_report(params, geom, ctilde, E0, ctilde_provenance=prov, extra=meta)
    except ValueError as exc:
        raise ConfigError(f"bound: {exc}") from exc
    return rep, u0


def cmd_geometry(cfg: ExperimentConfig, out: Path | None) -> int:
    geom = compute_geometry_constants(cfg.domain())
    text = "".join(f"{k}={v!r}\n" for k, v in geom.as_dict().items())
    print(text, end="")
    _write(out, "geometry.txt", _comment(_header(cfg, "geometry"), text))
    return EXIT_OK


def cmd_bound(cfg: ExperimentConfig, out: Path | None) -> int:
    rep, _ = _bound(cfg)
    text = rep.to_keyvalue()
    if rep.out_of_regime:
        text += "out_of_regime: chi*alpha - xi*gamma <= 0, the bound framework does not apply\n"
    print(text, end="")
    hdr = _header(cfg, "bound")
    _write(out, "bound.txt", _comment(hdr, text))
    _write(out, "bound.csv", _comment(hdr, rep.to_csv()))
    return EXIT_OK


def _simulate(cfg: ExperimentConfig) -> tuple[Trajectory, BoundReport | None]:
    domain = cfg.domain()
    grid = cfg.grid(domain)
    params = cfg.params()
    controls = cfg.time_controls()
    rep = None
    if cfg.has("ctilde"):
        rep, u0 = _bound(cfg)
    else:
        u0 = cfg.initial(grid)
    odi = (rep.A, rep.B) if rep is not None else None
    traj = run(u0, params, controls, odi_constants=odi)
    if traj.cfl_halvings:
        log.info("dt was halved %d times to satisfy the CFL condition", traj.cfl_halvings)
    return traj, rep


def cmd_simulate(cfg: ExperimentConfig, out: Path | None) -> int:
    traj, _ = _simulate(cfg)
    _write(out, "trajectory.csv", traj.to_csv(_header(cfg, "simulate")))
    print(f"status={traj.status} t_final={traj.t_final!r} steps={traj.steps} "
          f"cfl_halvings={traj.cfl_halvings}")
    if traj.message:
        print(f"message={traj.message}")
    if traj.status == "step_underflow":
        return EXIT_NUMERIC
    if traj.status == "invariant_violation":
        return EXIT_CHECK
    return EXIT_OK


def cmd_bench(cfg: ExperimentConfig, out: Path | None) -> int:
    domain = cfg.domain()
    geom = compute_geometry_constants(domain)
    params = cfg.params()
    b = cfg.block("bench")
    c1_values = tuple(float(c) for c in b.get("c1_values", (0.1, 1.0, 10.0)))
    try:
        rep = run_bench(domain, geom, params, b["n_trials"], int(b.get("seed", 0)),
                        grid_n=int(b.get("grid_n", 256)), c1_values=c1_values,
                        heldout=bool(b.get("heldout", True)))
    except ValueError as exc:
        raise ConfigError(f"bench: {exc}") from exc
    _write(out, "bench.csv", rep.to_csv(_header(cfg, "bench")))
    bad = rep.violations()
    for check in sorted({r.check for r in rep.rows}):
        rows = [r for r in rep.rows if r.check == check]
        print(f"{check}: rows={len(rows)} min_margin={min(r.margin for r in rows):.6e} "
              f"flagged={sum(r.flagged for r in rows)} confirmed={sum(r.confirmed for r in rows)}")
    print(f"ctilde={rep.ctilde.value!r}" if rep.ctilde else "")
    if bad:
        first = bad[0]
        print(f"first violation: trial {first.trial_id} ({first.family}) check {first.check} "
              f"margin {first.margin:.6e}")
        return EXIT_CHECK
    return EXIT_OK


def cmd_estimate_ctilde(cfg: ExperimentConfig, out: Path | None) -> int:
    domain = cfg.domain()
    params = cfg.params()
    b = cfg.block("ctilde")
    n = b.get("n_trials", 1)
    grid_n = int(b.get("grid_n", cfg.block("grid")["nx"] if cfg.has("grid") else 128))
    try:
        est = estimate_ctilde(domain, params, int(n), int(b.get("seed", 0)), grid_n=grid_n,
                              safety_factor=float(b.get("safety_factor", 2.0)))
    except ValueError as exc:
        raise ConfigError(f"ctilde: {exc}") from exc
    text = est.to_keyvalue()
    print(text, end="")
    _write(out, "ctilde.txt", _comment(_header(cfg, "estimate-ctilde"), text))
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path | None) -> int:
    if not cfg.has("ctilde"):
        raise ConfigError("missing block 'ctilde'")
    traj, rep = _simulate(cfg)
    assert rep is not None
    tol = cfg.odi_tolerance()
    mass = traj.column("mass")
    drift = float(np.max(np.abs(mass - mass[0])) / mass[0])
    lines = [f"status={traj.status}", f"t_final={traj.t_final!r}", f"steps={traj.steps}",
             f"cfl_halvings={traj.cfl_halvings}", f"mass_drift={drift!r}"]
    failures = []
    if traj.status == "invariant_violation" or drift > cfg.time_controls().mass_rtol:
        failures.append(f"mass/positivity: {traj.message or f'drift {drift:.3e}'}")
    if len(traj.records) >= 3:
        odi = check_odi(traj, rep.A, rep.B, tol)
        lines += [f"odi_checked={odi.n_checked}", f"odi_violations={odi.n_violations}",
                  f"odi_min_relative_margin={odi.min_relative_margin!r}"]
        if not odi.ok:
            failures.append(f"ODI violated first at t={odi.first_violation_time!r}")
    else:
        lines.append("odi_checked=0 (fewer than 3 records)")
    lines += [f"A={rep.A!r}", f"B={rep.B!r}", f"A_theorem_variant={rep.A_theorem_variant!r}",
              f"t_lower_explicit={rep.t_lower_explicit!r}",
              f"t_lower_implicit={rep.t_lower_implicit!r}",
              f"ctilde={rep.ctilde!r} ({rep.ctilde_provenance})"]
    if traj.status == "blowup_detected":
        t1 = energy_return_time(traj)
        ok = traj.t_final >= rep.t_lower_implicit
        lines += [f"blowup_indicator={traj.blowup_indicator}", f"t1={t1!r}",
                  f"t_lower_from_t1={t1 + rep.t_lower_implicit!r}",
                  f"exceeds_t_lower_explicit={traj.t_final >= rep.t_lower_explicit} (informational)",
                  f"bound_consistency={'ok' if ok else 'FAILED'}: numeric blow-up time "
                  f"{traj.t_final!r} vs t_lower_implicit {rep.t_lower_implicit!r}"]
        if not ok:
            which = "estimated ctilde" if rep.ctilde_provenance == "estimated" else "user ctilde"
            failures.append(f"numeric blow-up time below the implicit bound "
                            f"(inputs: {which}; or solver error)")
    lines += [f"FAIL {f}" for f in failures]
    text = "\n".join(lines) + "\n"
    print(text, end="")
    hdr = _header(cfg, "verify")
    _write(out, "trajectory.csv", traj.to_csv(hdr))
    _write(out, "verify.txt", _comment(hdr, text))
    if traj.status == "step_underflow":
        return EXIT_NUMERIC
    return EXIT_CHECK if failures else EXIT_OK


COMMANDS = {
    "geometry": cmd_geometry,
    "bound": cmd_bound,
    "simulate": cmd_simulate,
    "bench": cmd_bench,
    "estimate-ctilde": cmd_estimate_ctilde,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemobound",
                                description="Blow-up time bounds for attraction-repulsion chemotaxis")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, type=Path, help="experiment JSON file")
    p.add_argument("--out", type=Path, help="output directory (overrides outputs.dir)")
    p.add_argument("--seed", type=int, help="override ctilde/bench seeds")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.override_seed(args.seed)
        out = args.out
        if out is None and "dir" in cfg.raw.get("outputs", {}):
            out = Path(cfg.raw["outputs"]["dir"])
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
