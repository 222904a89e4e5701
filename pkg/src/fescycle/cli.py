"""Command-line front end: simulate, certify, sweep and pattern."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .analysis import certify
from .config import RunConfig, SweepOptions, check_sweep, load_config, packaged_config
from .errors import ConfigError, FESCycleError, SimulationError
from .kinematics import dead_points, stimulation_regions, torque_transfer_ratio_array, Side
from .simulator import simulate

EXIT_OK, EXIT_CONFIG, EXIT_SIMULATION, EXIT_UNCERTIFIED = 0, 2, 3, 4
PATTERN_POINTS = 2048
GAIN_NAMES = ("alpha", "k1", "k2", "k3", "k4")
SWEEP_COLUMNS = ("index", "param", "value", "certified", "first_failure", "d", "q_dot_crit",
                 "controlled_measure", "max_z_steady", "final_cadence_rpm", "error")


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return "" if x is None else str(x)


def _load(args) -> RunConfig:
    rc = load_config(args.config) if args.config else packaged_config("default")
    steps = getattr(args, "steps", None)
    if steps is not None:
        if steps < 1:
            raise ConfigError("--steps must be >= 1")
        sc = rc.scenario
        rc = replace(rc, scenario=sc.with_(revolutions=None, duration=steps * sc.step_size))
    return rc


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- simulate

def cmd_simulate(config_path, out_dir, steps: int | None = None) -> int:
    """Run one scenario and write trace.csv, schedule.csv and summary.json into out_dir."""
    args = argparse.Namespace(config=config_path, steps=steps)
    try:
        rc = _load(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return _fail(EXIT_CONFIG, f"cannot create output directory {out}: {exc.strerror}")
    cert = certify(rc.scenario, rc.analysis)
    code = EXIT_OK
    try:
        trace = simulate(rc.scenario)
    except SimulationError as exc:
        trace = exc.trace
        code = EXIT_SIMULATION
        message = str(exc)
    summary = trace.summary() if trace is not None and len(trace.t) > 1 else {"status": "failed"}
    summary["certified"] = cert.certified
    summary["first_failed_condition"] = cert.first_failure
    if trace is not None:
        trace.write_csv(out / "trace.csv")
        trace.write_schedule_csv(out / "schedule.csv")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    # wall-clock data lives only in this sidecar
    (out / "run_meta.json").write_text(json.dumps(
        {"config": str(config_path or "default"), "created_unix": time.time(),
         "meta": rc.scenario.meta}, indent=2, sort_keys=True, default=str) + "\n")
    if code != EXIT_OK:
        return _fail(code, message)
    flag = "" if cert.certified else f" (gains not certified: {cert.first_failure})"
    print(f"revolutions={summary['revolutions']:.6g} cadence={summary['final_cadence_rpm']:.4f} rpm "
          f"error_band=[{summary['cadence_error_min_rad_s']:.4g}, "
          f"{summary['cadence_error_max_rad_s']:.4g}] rad/s "
          f"saturations={summary['saturation_count']}{flag}")
    return EXIT_OK


# ---------------------------------------------------------------- certify

def cmd_certify(config_path, stream=None) -> int:
    """Print the certificate; exit 0 only if every condition holds."""
    stream = stream or sys.stdout
    try:
        rc = _load(argparse.Namespace(config=config_path, steps=None))
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    cert = certify(rc.scenario, rc.analysis)
    stream.write(cert.report())
    if not cert.certified:
        return _fail(EXIT_UNCERTIFIED, f"first failed condition: {cert.first_failure}")
    return EXIT_OK


# ---------------------------------------------------------------- sweep

def _sweep_point(job):
    i, rc, param, gain, value, revs = job
    sc = rc.scenario
    row = dict(index=i, param=gain if param == "gain" else param, value=value)
    try:
        if param == "epsilon":
            sc = sc.with_(gains=sc.gains.with_(epsilon=value))
        elif param == "cadence":
            sc = sc.with_(trajectory=sc.trajectory.with_(cadence_target=value))
        else:
            sc = sc.with_(gains=sc.gains.with_(**{gain: value}))
        row["controlled_measure"] = sc.regions.controlled_measure
        cert = certify(sc, rc.analysis)
        row.update(certified=cert.certified, first_failure=cert.first_failure)
        if cert.constants is not None:
            row.update(d=cert.constants.d_radius, q_dot_crit=cert.constants.q_dot_crit)
        nominal = revs * 2 * math.pi / sc.trajectory.cadence_target
        trace = simulate(sc.with_(revolutions=revs, duration=None),
                         max_time=2.0 * nominal + 10.0 / sc.trajectory.ramp_rate + 10.0)
        tail = trace.t >= trace.t[0] + 0.5 * (trace.t[-1] - trace.t[0])
        row.update(max_z_steady=float(trace.z_norm[tail].max()),
                   final_cadence_rpm=trace.cadence_rpm(min(revs / 2, 10.0)))
    except (FESCycleError, ValueError) as exc:
        row["error"] = f"{type(exc).__name__}: {str(exc).splitlines()[0]}"
    return row


def run_sweep(rc: RunConfig, sweep: SweepOptions) -> list[dict]:
    """Rows in grid order; failures land in the error column."""
    jobs = [(i, rc, sweep.param, sweep.gain, float(v), sweep.revolutions)
            for i, v in enumerate(sweep.grid)]
    if sweep.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=sweep.workers) as pool:
            return list(pool.map(_sweep_point, jobs))
    return [_sweep_point(j) for j in jobs]


def write_rows(rows, columns, stream) -> None:
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])


def cmd_sweep(config_path, param=None, grid=None, out_dir=None, workers=None) -> int:
    try:
        rc = _load(argparse.Namespace(config=config_path, steps=None))
        sweep = rc.sweep
        if param is not None:
            if param in GAIN_NAMES:
                sweep = replace(sweep, param="gain", gain=param)
            else:
                sweep = replace(sweep, param=param)
        if grid is None and param is not None and sweep.param != rc.sweep.param:
            raise ConfigError(f"--grid is required when sweeping {param}")
        if grid is not None:
            try:
                values = tuple(float(x) for x in grid.split(",") if x.strip())
            except ValueError:
                raise ConfigError(f"--grid must be a comma-separated list of numbers, got {grid!r}")
            sweep = replace(sweep, grid=values)
        if workers is not None:
            sweep = replace(sweep, workers=workers)
        check_sweep(sweep)
        if not sweep.grid:
            raise ConfigError("sweep grid is empty")
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    rows = run_sweep(rc, sweep)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "sweep.csv").open("w", newline="") as fh:
            write_rows(rows, SWEEP_COLUMNS, fh)
    else:
        write_rows(rows, SWEEP_COLUMNS, sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------- pattern

PATTERN_COLUMNS = ("q", "B_R", "B_L", "tag", "point")


def pattern_rows(rc: RunConfig, n: int = PATTERN_POINTS) -> list[dict]:
    """B_k of both legs and the region tag on a uniform grid, with the dead points merged in."""
    geom = rc.scenario.geometry
    regions = stimulation_regions(geom, rc.scenario.gains.epsilon)
    grid = [(q, "grid") for q in np.linspace(0.0, 2 * math.pi, n, endpoint=False)]
    grid += [(q, "dead_point") for q in dead_points(geom)]
    grid.sort()
    qs = np.array([q for q, _ in grid])
    b_r = torque_transfer_ratio_array(geom, qs, Side.R)
    b_l = torque_transfer_ratio_array(geom, qs, Side.L)
    tags = regions.tag_code(qs)
    names = regions.TAGS
    return [dict(q=q, B_R=b_r[i], B_L=b_l[i], tag=names[int(tags[i])], point=kind)
            for i, (q, kind) in enumerate(grid)]


def cmd_pattern(config_path, out_dir=None) -> int:
    try:
        rc = _load(argparse.Namespace(config=config_path, steps=None))
        rows = pattern_rows(rc)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except FESCycleError as exc:
        return _fail(EXIT_CONFIG, f"geometry: {exc}")
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with (out / "pattern.csv").open("w", newline="") as fh:
            write_rows(rows, PATTERN_COLUMNS, fh)
    else:
        write_rows(rows, PATTERN_COLUMNS, sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------- entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fescycle", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", metavar="PATH", help="scenario YAML (default: shipped default)")

    p = sub.add_parser("simulate", help="run a scenario and write trace, schedule and summary")
    common(p)
    p.add_argument("--out", metavar="DIR", default="out")
    p.add_argument("--steps", metavar="N", type=int, help="integrate exactly N steps")
    p = sub.add_parser("certify", help="print the stability certificate")
    common(p)
    p = sub.add_parser("sweep", help="certify and simulate over a parameter grid")
    common(p)
    p.add_argument("--param", metavar="NAME", help="epsilon, cadence, gain, alpha or k1..k4")
    p.add_argument("--grid", metavar="CSVLIST", help="comma-separated values")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", metavar="DIR", help="write sweep.csv here instead of stdout")
    p = sub.add_parser("pattern", help="torque transfer ratios and region tags over the cycle")
    common(p)
    p.add_argument("--out", metavar="DIR", help="write pattern.csv here instead of stdout")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except BrokenPipeError:
        # output piped into a reader that closed early (e.g. head)
        sys.stderr.close()
        return EXIT_OK


def _dispatch(args) -> int:
    if args.command == "simulate":
        return cmd_simulate(args.config, args.out, args.steps)
    if args.command == "certify":
        return cmd_certify(args.config)
    if args.command == "sweep":
        return cmd_sweep(args.config, args.param, args.grid, args.out, args.workers)
    return cmd_pattern(args.config, args.out)


if __name__ == "__main__":
    sys.exit(main())
