"""Command-line drivers: ``pksfil {profile,estimates,dichotomy,filament}``.

Every run writes ``<out>/<experiment>/manifest.json`` before any work,
then streams JSON-lines records to ``<out>/<experiment>/records.jsonl``
(the first record repeats the manifest).  Floats are written with 17
significant digits, keys sorted, so identical configurations produce
byte-identical record files.  Re-running into a directory whose manifest
has a different configuration hash is refused unless ``--force`` is given.

Exit codes: 0 all checks passed, 1 runtime error, 2 precondition
violation, 3 tolerance failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import traceback
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_hash, load_config

__all__ = ["main", "dumps", "Sink"]

EXIT_OK, EXIT_RUNTIME, EXIT_PRECONDITION, EXIT_TOLERANCE = 0, 1, 2, 3
EIGHT_PI = 8.0 * math.pi


class PreconditionError(ValueError):
    """Input outside the domain of the requested experiment (exit code 2)."""


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------


def _encode(obj: Any) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ",".join(f"{json.dumps(str(k))}:{_encode(v)}" for k, v in sorted(obj.items())) + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        return "[" + ",".join(_encode(v) for v in (obj.tolist() if isinstance(obj, np.ndarray) else obj)) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any) -> str:
    """Compact JSON with sorted keys, 17-significant-digit floats and ``null`` for non-finite values."""
    return _encode(obj)


class Sink:
    """Single serialized writer for the records of one run."""

    def __init__(self, path: Path, echo: bool = True):
        self.path = path
        self.echo = echo
        self._fh = open(path, "w", encoding="utf-8")

    def emit(self, record: dict) -> None:
        line = dumps(record)
        self._fh.write(line + "\n")
        self._fh.flush()
        if self.echo:
            print(line)

    def close(self) -> None:
        self._fh.close()


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([format(float(v), ".17g") if isinstance(v, (float, np.floating)) else v for v in row])


def _prepare_run(cfg: RunConfig, argv: Sequence[str], force: bool) -> tuple[Path, dict]:
    run_dir = Path(cfg.out) / cfg.experiment
    run_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    path = run_dir / "manifest.json"
    if path.exists() and not force:
        try:
            old = json.loads(path.read_text())
        except json.JSONDecodeError:
            old = {}
        if old.get("config_sha256") != digest:
            raise PreconditionError(f"{path} belongs to a different configuration; use --force or another --out")
    manifest = {"record": "manifest", "experiment": cfg.experiment, "version": __version__,
                "config": cfg.as_dict(), "config_sha256": digest}
    path.write_text(dumps(manifest) + "\n")
    return run_dir, manifest


# --------------------------------------------------------------------------
# experiments
# --------------------------------------------------------------------------


def _radial_grid(cfg: RunConfig, default_nodes: int):
    from .profile import make_radial_grid

    return make_radial_grid(cfg.radial_domain, cfg.radial_nodes or default_nodes)


def cmd_profile(cfg: RunConfig, run_dir: Path, sink: Sink) -> int:
    from .profile import check_asymptotics, export_profile_csv, save_profile, solve_profile

    for a in cfg.alphas:
        if not 0 < a < EIGHT_PI:
            raise PreconditionError(
                f"mass {a:.17g}: radial self-similar profiles exist only for masses in (0, 8*pi)")
    failed = False
    for a in cfg.alphas:
        p = solve_profile(a, _radial_grid(cfg, 2048), allow_near_critical=True)
        tag = format(a, ".6f")
        save_profile(p, run_dir / f"profile_{tag}.bin")
        export_profile_csv(p, run_dir / f"profile_{tag}.csv")
        mass_err = abs(p.quadrature_mass() - a) / a
        slope = check_asymptotics(p)
        expected = -a / (2 * math.pi)
        gauss = a / (4 * math.pi) * np.exp(-p.r**2 / 4)
        gauss_dev = float(np.max(np.abs(p.g - gauss)) / np.max(gauss))
        # the relative exponent tolerance degenerates as alpha -> 0; keep an absolute floor
        exp_tol = max(cfg.exponent_tol * abs(expected), 0.01)
        ok = mass_err < cfg.mass_tol and abs(slope - expected) <= exp_tol
        failed |= not ok
        sink.emit({"record": "profile", "alpha": a, "center_value": p.center_value, "mass": p.quadrature_mass(),
                   "mass_error": mass_err, "tail_exponent": slope, "expected_exponent": expected,
                   "exponent_tolerance": exp_tol, "gaussian_deviation": gauss_dev,
                   "gaussian_regime": bool(a < 1.0), "passed": ok})
    return EXIT_TOLERANCE if failed else EXIT_OK


def cmd_estimates(cfg: RunConfig, run_dir: Path, sink: Sink) -> int:
    from .estimates import SUITES, run_suite

    if cfg.suite not in SUITES:
        raise PreconditionError(f"unknown suite {cfg.suite!r}; expected one of {', '.join(SUITES)}")
    alpha = cfg.alphas[0]
    if not 0 < alpha < EIGHT_PI:
        raise PreconditionError("estimates need a profile mass in (0, 8*pi)")
    records = run_suite(cfg.suite, workers=cfg.workers, alpha=alpha, ps=cfg.p or None, seed=cfg.seed)
    for r in records:
        sink.emit({"record": "estimate", "suite": cfg.suite, **r.as_dict()})
    n_pass = sum(r.passed for r in records)
    sink.emit({"record": "summary", "suite": cfg.suite, "passed": n_pass, "total": len(records)})
    return EXIT_OK if n_pass == len(records) else EXIT_TOLERANCE


def _dichotomy_global(cfg: RunConfig, mass: float, run_dir: Path, sink: Sink) -> bool:
    from .grid import Grid2D, WeightSpec
    from .profile import solve_profile
    from .solver import PKSStepper, attractor_distance, gaussian_data, solve_pks_2d

    grid = Grid2D(cfg.domain or 12.0, cfg.grid or 256)
    prof = solve_profile(mass, _radial_grid(cfg, 2048), allow_near_critical=True)
    stops = np.arange(0.5, cfg.tau_end, 0.5)
    traj = solve_pks_2d(gaussian_data(grid, mass), cfg.tau_end, PKSStepper(frame="self_similar", dt_max=0.05),
                        record_times=stops)
    taus, dist = attractor_distance(traj, prof, WeightSpec(cfg.weight, 2.0))
    for t, d in zip(taus, dist):
        sink.emit({"record": "attractor_distance", "mass": mass, "tau": t, "distance": d})
    _write_csv(run_dir / f"distance_{mass:.6f}.csv", ["tau", "distance"], zip(taus, dist))
    ok = (not traj.blowup) and dist[-1] < 0.05
    sink.emit({"record": "verdict", "mass": mass, "verdict": "BLOWUP" if traj.blowup else "GLOBAL",
               "frame": "self_similar", "tau_end": cfg.tau_end, "final_distance": dist[-1],
               "blowup_reason": traj.blowup_reason, "R": grid.R, "N": grid.N, "passed": ok})
    return ok


def _dichotomy_physical(cfg: RunConfig, mass: float, run_dir: Path, sink: Sink) -> bool:
    from .grid import Grid2D
    from .solver import PKSStepper, gaussian_data, solve_pks_2d, virial_bound

    grid = Grid2D(cfg.domain or 8.0, cfg.grid or 256)
    u0 = gaussian_data(grid, mass)
    m2 = float(np.sum(u0.values * grid.r2) * grid.cell_area)
    bound = virial_bound(mass, m2)
    t_end = 1.5 * bound if math.isfinite(bound) else 2.0
    traj = solve_pks_2d(u0, t_end, PKSStepper(dt_max=5e-3))
    d = traj.diagnostics
    step = max(1, len(d["time"]) // 100)
    rows = list(zip(d["time"], d["mass"], d["second_moment"], d["max_density"]))
    for t, ms, sm, mx in rows[::step]:
        sink.emit({"record": "diagnostics", "mass": mass, "t": t, "total_mass": ms, "second_moment": sm,
                   "max_density": mx})
    _write_csv(run_dir / f"diagnostics_{mass:.6f}.csv", ["t", "mass", "second_moment", "max_density"], rows)
    slope_expected = 4 * mass - mass**2 / (2 * math.pi)
    if traj.blowup and traj.last_valid_time <= t_end:
        verdict = "BLOWUP" if mass > EIGHT_PI else "UNDECIDED"
    else:
        verdict = "UNDECIDED"
    if abs(mass - EIGHT_PI) <= 1e-9 * EIGHT_PI:
        verdict = "UNDECIDED"
    ok = verdict == "BLOWUP" or abs(mass - EIGHT_PI) <= 1e-9 * EIGHT_PI
    sink.emit({"record": "verdict", "mass": mass, "verdict": verdict, "frame": "physical",
               "virial_bound": bound, "flag_time": traj.last_valid_time if traj.blowup else None,
               "blowup_reason": traj.blowup_reason, "virial_slope_expected": slope_expected,
               "R": grid.R, "N": grid.N, "passed": ok})
    return ok


def cmd_dichotomy(cfg: RunConfig, run_dir: Path, sink: Sink) -> int:
    ok = True
    for mass in cfg.alphas:
        if not mass > 0:
            raise PreconditionError("masses must be positive")
        near_critical = abs(mass - EIGHT_PI) <= 1e-9 * EIGHT_PI
        if mass < EIGHT_PI and not near_critical:
            ok &= _dichotomy_global(cfg, mass, run_dir, sink)
        else:
            ok &= _dichotomy_physical(cfg, mass, run_dir, sink)
    return EXIT_OK if ok else EXIT_TOLERANCE


def _mild_tests():
    from .filament import TestFunction

    return [TestFunction(), TestFunction(a=1, x0=(0.2, 0.0)), TestFunction(c=1, sz=0.7),
            TestFunction(sigma=0.5, x0=(0.3, -0.2), z0=0.5)]


def cmd_filament(cfg: RunConfig, run_dir: Path, sink: Sink) -> int:
    from .filament import (
        FilamentConstants,
        FilamentDivergenceError,
        FilamentSetup,
        data_norm,
        duhamel_fixed_point,
        gaussian_filament_data,
        lipschitz_ratio,
        verify_mild,
        x_norm,
    )
    from .grid import Grid2D
    from .operators import make_context
    from .profile import solve_profile

    alpha = cfg.alphas[0]
    if not 0 < alpha < EIGHT_PI:
        raise PreconditionError("the filament mass must lie in (0, 8*pi)")
    try:
        constants = FilamentConstants(cfg.const_M, cfg.const_D, cfg.beta, cfg.eps0)
        setup = FilamentSetup(grid=Grid2D(cfg.domain or 16.0, cfg.grid or 128), zeta_max=cfg.zeta_max,
                              dzeta=cfg.zeta_step, horizon=cfg.horizon, weight_m=cfg.weight)
    except ValueError as exc:
        raise PreconditionError(str(exc)) from exc
    if cfg.eps > constants.eps0:
        raise PreconditionError(f"eps = {cfg.eps:g} exceeds eps0 = {constants.eps0:g}")
    prof = solve_profile(alpha, _radial_grid(cfg, 32768))
    ctx = make_context(prof, setup.grid, validate=True)
    src = Grid2D(1.0, 128)
    mu = gaussian_filament_data(src, setup.zetas, setup.dzeta, cfg.eps)
    sink.emit({"record": "setup", "alpha": alpha, "eps": cfg.eps, "R": setup.grid.R, "N": setup.grid.N,
               "slices": len(setup.zetas), "zeta_max": setup.zeta_max, "dzeta": setup.dzeta,
               "horizon": setup.horizon, "t_min": float(setup.times[0]), "nodes": setup.n_nodes,
               "M": constants.M, "D": constants.D, "beta": constants.beta, "eps0": constants.eps0,
               "datum_norm": data_norm(mu)})
    try:
        state, log = duhamel_fixed_point(mu, prof, cfg.eps, setup, constants, ctx)
    except FilamentDivergenceError as exc:
        sink.emit({"record": "divergence", "message": str(exc), "ratios": list(exc.ratios)})
        return EXIT_TOLERANCE
    for r in log:
        sink.emit({"record": "contraction", "iteration": r.iteration, "x_norm": r.x_norm,
                   "difference": r.difference, "ratio": r.ratio})
    _write_csv(run_dir / "contraction.csv", ["iteration", "x_norm", "difference", "ratio"],
               [(r.iteration, r.x_norm, r.difference, r.ratio) for r in log])
    np.savez(run_dir / "state.npz", core=state.core, background=state.background, taus=state.taus,
             zetas=setup.half_zetas)
    xn = x_norm(state, constants, cfg.eps)
    sink.emit({"record": "x_norm", **xn.as_dict()})
    late = [r.ratio for r in log if r.iteration >= 3 and math.isfinite(r.ratio)]
    ok = xn.within_ball and all(q < 0.5 for q in late)

    times = [t for t in (0.1, 0.01, 0.001) if t <= setup.horizon and np.any(np.isclose(setup.times, t))]
    if len(times) >= 2:
        rep = verify_mild(state, prof, mu, _mild_tests(), times, ctx=ctx)
        for q, t in enumerate(times):
            sink.emit({"record": "mild", "t": t, "duhamel": rep.relative_duhamel[:, q].tolist(),
                       "trace": rep.relative_trace[:, q].tolist()})
        mono = rep.monotone("duhamel")
        sink.emit({"record": "mild_summary", "duhamel_monotone": mono, "trace_monotone": rep.monotone("trace")})
        if cfg.eps > 0:
            ok &= mono
    if cfg.lipschitz_delta > 0 and cfg.eps > 0:
        bump = gaussian_filament_data(src, setup.zetas, setup.dzeta, 1.0, center=(0.02, -0.01), z_center=0.5)
        mu2 = type(mu)(mu.grid, mu.zetas, mu.slices + cfg.lipschitz_delta * bump.slices, True,
                       *((setup.dzeta,) if len(setup.zetas) == 1 else ()))
        lip = lipschitz_ratio(mu, mu2, prof, setup, constants, ctx, state1=None)
        sink.emit({"record": "lipschitz", **lip})
    sink.emit({"record": "verdict", "passed": ok})
    return EXIT_OK if ok else EXIT_TOLERANCE


COMMANDS = {"profile": cmd_profile, "estimates": cmd_estimates, "dichotomy": cmd_dichotomy,
            "filament": cmd_filament}


# --------------------------------------------------------------------------
# argument handling
# --------------------------------------------------------------------------


def _floats(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _seed(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="sectioned key-value configuration file")
    common.add_argument("--alpha", type=_floats, metavar="F[,F...]", help="profile masses (dichotomy: initial masses)")
    common.add_argument("--grid", type=int, metavar="N", help="grid points per side")
    common.add_argument("--domain", type=float, metavar="R", help="half-width of the square domain")
    common.add_argument("--weight", type=float, metavar="M", help="polynomial weight exponent m")
    common.add_argument("--zeta-max", type=float, metavar="F")
    common.add_argument("--zeta-step", type=float, metavar="F")
    common.add_argument("--eps", type=float, metavar="F", help="background data size")
    common.add_argument("--horizon", type=float, metavar="F", help="final physical time of filament runs")
    common.add_argument("--out", metavar="DIR", help="output directory (PKS_OUT overrides)")
    common.add_argument("--seed", type=_seed, metavar="U64")
    common.add_argument("--workers", type=int, metavar="K")
    common.add_argument("--force", action="store_true", help="overwrite a run directory with another configuration")
    common.add_argument("--quiet", action="store_true", help="do not echo records to stdout")

    parser = argparse.ArgumentParser(prog="pksfil", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("profile", parents=[common], help="solve and cache radial profiles")
    est = sub.add_parser("estimates", parents=[common], help="measured-constant sweeps")
    est.add_argument("--suite", help="fokker-planck | core | background | resolvent | short-time")
    est.add_argument("--p", type=_floats, metavar="F[,F...]", help="Lebesgue exponents for the suite")
    sub.add_parser("dichotomy", parents=[common], help="global existence versus blow-up runs")
    fil = sub.add_parser("filament", parents=[common], help="near-filament fixed point and mild check")
    fil.add_argument("--lipschitz", type=float, metavar="DELTA", help="also solve for data perturbed by DELTA")
    return parser


_FLAG_FIELDS = {"alpha": "alphas", "grid": "grid", "domain": "domain", "weight": "weight", "zeta_max": "zeta_max",
                "zeta_step": "zeta_step", "eps": "eps", "horizon": "horizon", "out": "out", "seed": "seed",
                "workers": "workers", "suite": "suite", "p": "p", "lipschitz": "lipschitz_delta"}


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    """Defaults, then the config file, then flags, then ``PKS_OUT``."""
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {"experiment": args.command}
    for flag, name in _FLAG_FIELDS.items():
        value = getattr(args, flag, None)
        if value is not None:
            changes[name] = value
    if environ.get("PKS_OUT"):
        changes["out"] = environ["PKS_OUT"]
    return cfg.replace(**changes)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        run_dir, manifest = _prepare_run(cfg, argv, args.force)
    except (ConfigError, PreconditionError, OSError) as exc:
        print(f"pksfil: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    sink = Sink(run_dir / "records.jsonl", echo=not args.quiet)
    try:
        sink.emit(manifest)
        return COMMANDS[cfg.experiment](cfg, run_dir, sink)
    except PreconditionError as exc:
        sink.emit({"record": "error", "kind": "precondition", "message": str(exc)})
        print(f"pksfil: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        sink.emit({"record": "error", "kind": "runtime", "message": f"{type(exc).__name__}: {exc}"})
        traceback.print_exc()
        return EXIT_RUNTIME
    finally:
        sink.close()


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
