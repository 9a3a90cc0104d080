"""Command line scenario runner.

Each subcommand reads the merged configuration, writes CSV (and PGM) artifacts
into the output directory and finishes with ``manifest.json``. Exit codes:
0 on success, 2 for configuration errors, 1 for failures inside a module.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod, control, elastica, jacobian, magnetics, pathfollow, vision
from .config import ConfigError

OUT_ENV = "MSCRSIM_OUT"


class Run:
    """Output directory bookkeeping for one invocation."""

    def __init__(self, out: Path, subcommand: str, cfg: dict, digest: str, source):
        self.out = out
        self.subcommand = subcommand
        self.cfg = cfg
        self.digest = digest
        self.source = source
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def path(self, name: str) -> Path:
        p = self.out / name
        p.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return p

    def write_rows(self, name: str, header, rows) -> Path:
        p = self.path(name)
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        return p

    def manifest(self) -> Path:
        body = {
            "subcommand": self.subcommand,
            "version": __version__,
            "config_file": str(self.source) if self.source else None,
            "config_hash": self.digest,
            "resolved_config_hash": cfgmod.config_hash(self.cfg),
            "resolved_config": self.cfg,
            "wall_clock_s": round(time.perf_counter() - self.t0, 6),
            "files": [{"name": f, "sha256": hashlib.sha256((self.out / f).read_bytes()).hexdigest()}
                      for f in self.files],
        }
        target = self.out / "manifest.json"
        fd, tmp = tempfile.mkstemp(dir=self.out, prefix=".manifest-", suffix=".json")
        with os.fdopen(fd, "w") as fh:
            json.dump(body, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, target)
        return target


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.10g}"
    return v


# subcommands ----------------------------------------------------------------

def cmd_calibrate(run: Run, cfg: dict) -> None:
    sec = cfg["calibrate"]
    rng = magnetics.WorkingRange(cfgmod._num(sec, "d_min", "calibrate", True),
                                 cfgmod._num(sec, "d_max", "calibrate", True))
    if sec["synthetic_noise"] is not None:
        noise = cfgmod._num(sec, "synthetic_noise", "calibrate")
        samples = magnetics.synthetic_samples(cfg["magnet"]["moment"], noise, cfg["sim"]["seed"])
        magnetics.write_samples(run.path("samples.csv"), samples)
    else:
        src = sec["samples"] or magnetics.fixture_path()
        samples = magnetics.read_samples(src)
    M = magnetics.calibrate_moment(samples, rng)
    used = sum(1 for s in samples if s.d in rng)
    res = magnetics.calibration_residual(samples, M, rng)
    run.write_rows("calibration.csv", ["moment_Am2", "residual_T2", "n_used", "d_min_m", "d_max_m"],
                   [(M, res, used, rng.d_min, rng.d_max)])
    print(f"calibrated moment: {M:.6g} A m^2 from {used} samples")


def cmd_fieldmap(run: Run, cfg: dict) -> None:
    sec = cfg["fieldmap"]
    n = cfgmod._int(sec, "n", "fieldmap", 1)
    d = np.linspace(cfgmod._num(sec, "d_min", "fieldmap", True), cfgmod._num(sec, "d_max", "fieldmap", True), n)
    axes = sec["axes"]
    if not isinstance(axes, list) or not axes or any(a not in ("x", "y", "z") for a in axes):
        raise ConfigError("fieldmap.axes must be a non-empty list drawn from x, y, z")
    psi = cfgmod._num(sec, "psi", "fieldmap")
    moment = cfg["magnet"]["moment"]
    for axis in axes:
        rows = magnetics.field_map(axis, d, psi, moment)
        run.write_rows(f"fieldmap_{axis}.csv", ["d_m", "b_norm_T", "dbx_dx_Tpm", "dby_dy_Tpm", "dbx_dy_Tpm"], rows)
    print(f"field maps along {', '.join(axes)} ({n} points each)")


def cmd_sweep(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    grid = cfgmod.psi_grid(cfg)
    heights = cfgmod._heights(cfg["sweep"], "sweep")
    phi = cfg["magnet"]["phi"]
    full = grid.size >= 3 and grid[-1] - grid[0] >= 2 * math.pi - 1e-9
    heat, summary = [], []
    for H in heights:
        act = cfgmod.build_actuation(cfg, params, H)
        _require_feasible(params, act, phi)
        res = elastica.workspace_sweep(params, act, grid, phi) if full else elastica.sweep_psi(params, act, grid, phi)
        if not full:
            imin, imax = int(np.argmin(res.theta_L)), int(np.argmax(res.theta_L))
            res.psi_min, res.theta_min = grid[imin], res.theta_L[imin]
            res.psi_max, res.theta_max = grid[imax], res.theta_L[imax]
        heat.extend((H, p, t, i) for p, t, i in zip(res.psi, res.theta_L, res.iterations))
        summary.append((H, res.theta_min, res.theta_max, res.psi_min, res.psi_max, res.width,
                        float(np.mean(res.iterations))))
        print(f"H={H:.4g} m: workspace [{res.theta_min:.4f}, {res.theta_max:.4f}] rad, "
              f"mean shots {np.mean(res.iterations):.2f}")
    run.write_rows("sweep.csv", ["H_m", "psi_rad", "theta_L_rad", "iterations"], heat)
    run.write_rows("workspace.csv", ["H_m", "theta_min_rad", "theta_max_rad", "psi_min_rad", "psi_max_rad",
                                     "width_rad", "mean_iterations"], summary)


def cmd_jacobian_map(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    sec = cfg["jacobian_map"]
    heights = cfgmod._heights(sec, "jacobian_map")
    n = cfgmod._int(sec, "n_psi", "jacobian_map", 1)
    dpsi = cfgmod._num(sec, "dpsi", "jacobian_map", True)
    phi = cfg["magnet"]["phi"]
    for H in heights:
        _require_feasible(params, cfgmod.build_actuation(cfg, params, H), phi)
    grid = np.linspace(-math.pi, math.pi, n, endpoint=False)
    rows = jacobian.jacobian_map(params, heights, grid, phi, cfg["magnet"]["moment"], dpsi)
    jacobian.write_jacobian_map(run.path("jacobian_map.csv"), rows)
    for H in heights:
        sel = [r for r in rows if r.H == H]
        err = np.array([r.J_analytic - r.J_numeric for r in sel])
        print(f"H={H:.4g} m: RMSE(analytic - numeric) = {np.sqrt(np.mean(err**2)):.4g} rad/rad")


def cmd_singularities(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    sec = cfg["singularities"]
    heights = cfgmod._heights(sec, "singularities")
    n = cfgmod._int(sec, "n_psi", "singularities", 4)
    phi = cfg["magnet"]["phi"]
    for H in heights:
        _require_feasible(params, cfgmod.build_actuation(cfg, params, H), phi)
    rows = jacobian.singularity_table(params, heights, phi, n, cfg["magnet"]["moment"])
    jacobian.write_singularities(run.path("singularities.csv"), rows)
    for r in rows:
        print(f"H={r.H:.4g} m: psi_min={r.psi_min:.4f} psi_max={r.psi_max:.4f} rad")


def cmd_feasibility(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    act = cfgmod.build_actuation(cfg, params)
    phi = cfg["magnet"]["phi"]
    rep = elastica.feasibility_check(params, act, phi=phi)
    lip = jacobian.lipschitz_K(params, act, None, phi)
    rows = [("clearance_threshold_m", rep.threshold), ("min_distance_m", rep.min_distance),
            ("grid_cell_m", rep.grid_cell), ("no_contact", rep.no_contact),
            ("clearance_ok", rep.clearance_ok), ("K_field_per_m2", lip.K_field),
            ("K_full_per_m2", lip.K), ("K_bound_per_m2", lip.bound)]
    run.write_rows("feasibility.csv", ["quantity", "value"], rows)
    print(f"clearance threshold: {rep.threshold:.4f} m; magnet distance {rep.min_distance:.4f} m; "
          f"{'feasible' if rep.ok else 'NOT feasible'}")


def cmd_simulate(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    act = cfgmod.build_actuation(cfg, params)
    ctrl = cfgmod.build_controller(cfg)
    ref = cfgmod.build_reference(cfg)
    dist = cfgmod.build_disturbance(cfg)
    sim = cfg["sim"]
    dt, T = cfgmod._num(sim, "dt", "sim", True), cfgmod._num(sim, "T", "sim", True)
    if dt > 0.02:
        raise ConfigError("sim.dt must not exceed 0.02 s")
    seed = cfgmod._int(sim, "seed", "sim")
    noise = cfgmod._num(sim, "noise", "sim")
    phi = cfg["magnet"]["phi"]
    _require_feasible(params, act, phi)
    try:
        trace = control.simulate_closed_loop(params, act, ctrl, ref, dist, dt, T, seed, noise, phi)
    except control.PlantFailure as exc:
        if exc.trace is not None:
            exc.trace.write_csv(run.path("trace_partial.csv"))
        raise
    trace.write_csv(run.path("trace.csv"))
    m = control.trace_metrics(trace)
    run.write_rows("metrics.csv", ["overshoot_pct", "steady_state_error_rad", "rmse_rad", "control_energy",
                                   "sign_flips", "limit_hit"],
                   [(m.overshoot, m.steady_state_error, m.rmse, m.energy, m.sign_flips, trace.limit_hit)])
    print(f"{ctrl.variant}: overshoot {m.overshoot:.2f}%, steady-state error {m.steady_state_error:.4g} rad, "
          f"sign flips {m.sign_flips}, joint limit {'hit' if trace.limit_hit else 'not hit'}")


def _render_frames(run: Run, cfg: dict, sec: dict) -> Path:
    params = cfgmod.build_robot(cfg)
    act = cfgmod.build_actuation(cfg, params)
    phi = cfg["magnet"]["phi"]
    _require_feasible(params, act, phi)
    n = cfgmod._int(sec, "synthetic_frames", "vision", 1)
    pitch = cfgmod._num(sec, "pitch", "vision", True)
    stroke = cfgmod._int(sec, "stroke", "vision", 1)
    grid = np.linspace(-math.pi, math.pi, n, endpoint=False)
    sweep = elastica.sweep_psi(params, act, grid, phi)
    truth = []
    for i, shape in enumerate(sweep.shapes):
        name = f"frames/frame_{i:04d}.pgm"
        vision.write_pgm(run.path(name), vision.rasterize(shape, pitch, stroke))
        truth.append((f"frame_{i:04d}.pgm", sweep.psi[i], shape.theta_L))
    run.write_rows("frames_truth.csv", ["frame", "psi_rad", "theta_L_rad"], truth)
    return run.out / "frames"


def cmd_track(run: Run, cfg: dict) -> None:
    sec = cfg["vision"]
    threshold = cfgmod._num(sec, "threshold", "vision", True)
    alpha_step = cfgmod._num(sec, "alpha_step", "vision", True)
    pix = cfgmod._int(sec, "pixel_threshold", "vision", 1)
    if sec["frames"] is None:
        folder = _render_frames(run, cfg, sec)
    else:
        folder = Path(sec["frames"])
        if not folder.is_dir():
            raise ConfigError(f"vision.frames: {folder} is not a directory")
    frames = sorted(p for p in folder.iterdir() if p.suffix.lower() in (".pgm", ".pbm"))
    if not frames:
        raise ConfigError(f"no .pgm/.pbm frames in {folder}")
    rows = []
    for p in frames:
        img = vision.read_image(p, pix)
        t0 = time.perf_counter()
        res = vision.measure(img, threshold, alpha_step)
        rows.append((p.name, res.theta_L, res.branch, 1e3 * (time.perf_counter() - t0)))
    run.write_rows("tracking.csv", ["frame", "theta_L_rad", "branch", "latency_ms"], rows)
    print(f"tracked {len(rows)} frames, median latency {np.median([r[3] for r in rows]):.2f} ms")


def cmd_follow_path(run: Run, cfg: dict) -> None:
    params = cfgmod.build_robot(cfg)
    act = cfgmod.build_actuation(cfg, params)
    sec = cfg["path"]
    phi = cfg["magnet"]["phi"]
    if sec["demo"] not in ("planar", "tilted"):
        raise ConfigError("path.demo must be 'planar' or 'tilted'")
    if sec["demo"] == "tilted" and phi == 0.0 and sec["waypoints"] is None:
        phi = math.pi / 4
        act = cfgmod.build_actuation({**cfg, "magnet": {**cfg["magnet"], "phi": phi}}, params)
    _require_feasible(params, act, phi)
    kw = dict(advance_threshold=cfgmod._num(sec, "advance_threshold", "path", True),
              window=cfgmod._int(sec, "window", "path", 1),
              error_floor=cfgmod._num(sec, "error_floor", "path", True))
    try:
        if sec["waypoints"] is not None:
            spec = pathfollow.PathSpec.read_csv(sec["waypoints"], **kw)
        else:
            spec = pathfollow.demo_path(params, act, sec["demo"], cfgmod._int(sec, "n", "path", 2), phi,
                                        cfgmod._num(sec, "span", "path", True))
            spec = pathfollow.PathSpec(spec.waypoints, **kw)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"path: {exc}") from exc
    spec.write_csv(run.path("waypoints.csv"))
    pc = pathfollow.PathConfig(cfgmod._num(sec, "k_x", "path", True), cfgmod._num(sec, "dt", "path", True),
                               cfgmod._num(sec, "base_rate", "path", True),
                               cfgmod._int(sec, "max_steps_per_waypoint", "path", 1), phi)
    try:
        result = pathfollow.follow_path(params, act, spec, pc)
    except pathfollow.WaypointTimeout as exc:
        if exc.result is not None:
            exc.result.write_csv(run.path("path_partial.csv"))
        raise
    result.write_csv(run.path("path.csv"))
    print(result.summary().lstrip("# "))


def _require_feasible(params, act, phi) -> None:
    rep = elastica.feasibility_check(params, act, phi=phi)
    if not rep.ok:
        raise ConfigError(f"magnet placement infeasible: distance {rep.min_distance:.4g} m, "
                          f"clearance threshold {rep.threshold:.4g} m")


COMMANDS = {
    "calibrate": (cmd_calibrate, "least-squares dipole moment from on-axis field samples"),
    "fieldmap": (cmd_fieldmap, "field magnitude and gradient along frame axes"),
    "sweep": (cmd_sweep, "tip angle over psi and magnet heights, with workspace limits"),
    "jacobian-map": (cmd_jacobian_map, "analytic and finite-difference J_psi over psi and heights"),
    "singularities": (cmd_singularities, "psi where J_psi changes sign, per height"),
    "feasibility": (cmd_feasibility, "clearance threshold and distance report"),
    "simulate": (cmd_simulate, "closed-loop tip-angle control scenario"),
    "track": (cmd_track, "tip angle from a directory of binary frames"),
    "follow-path": (cmd_follow_path, "task-space waypoint following with the sliding base"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON scenario file")
    common.add_argument("--out", type=Path, help=f"output directory (default: ${OUT_ENV}/<subcommand> or ./runs/<subcommand>)")
    common.add_argument("--seed", type=int, help="overrides sim.seed")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="dotted override, e.g. --set controller.variant=PD (repeatable)")
    parser = argparse.ArgumentParser(prog="mscrsim", description=__doc__.splitlines()[0],
                                     epilog="defaults:\n\n" + cfgmod.defaults_text(),
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=help_text, description=help_text)
    return parser


def output_dir(args, cfg: dict) -> Path:
    if args.out is not None:
        return args.out
    if cfg["output"]["dir"] is not None:
        return Path(cfg["output"]["dir"])
    return Path(os.environ.get(OUT_ENV, "runs")) / args.command


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    func = COMMANDS[args.command][0]
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"sim.seed={args.seed}")
        cfg, digest = cfgmod.load_config(args.config, overrides)
        out = output_dir(args, cfg)
        out.mkdir(parents=True, exist_ok=True)
        run = Run(out, args.command, cfg, digest, args.config)
        func(run, cfg)
    except ConfigError as exc:
        print(f"mscrsim {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ArithmeticError, RuntimeError, ValueError) as exc:
        print(f"mscrsim {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    run.manifest()
    return 0


if __name__ == "__main__":
    sys.exit(main())
