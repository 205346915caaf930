"""Command-line entry point: ``tetherrisk <subcommand> ...``.

Exit codes: 0 success, 1 validation or usage error, 2 domain or planning
error, 3 anything else.  Results go to stdout or ``--out``; diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .errors import DomainError, PlanningError, ValidationError
from .grid import GraphConfig, dumps_lines, inflate, load_map, map_to_dict, read_json, save_map
from .planner import (
    Limits,
    RewardConfig,
    plan_additive_baseline,
    plan_exact,
    plan_risk_aware,
    select_max_utility,
)
from .risk import RiskConfig, default_graph, path_risk
from .servo import ServoGains, ServoPose, simulate_servo
from .sim import ControllerGains, Plan6D, SimConfig, cross_track_error, execute_plan, smoothness
from .tether import LOCALIZE_MODES, CatenaryParams, localize, plan_contacts, ray_cast_reduce

CONFIG_SECTIONS = {"version", "risk", "graph", "reward", "limits", "sim", "gains"}
PATH_FIELDS = {"version", "path", "element_risks"}
PLAN_FIELDS = {"mode", "risk", "reward", "utility", "unit_risk", "ensemble", "stats"}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# config and input readers ------------------------------------------------------

def _section(data: dict, name: str, allowed: set[str]) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ValidationError(f"config section {name!r} must be an object")
    unknown = set(sec) - allowed
    if unknown:
        raise ValidationError(f"config section {name!r}: unknown fields {sorted(unknown)}")
    return sec


def load_config(path: str | None) -> dict:
    if path is None:
        return {"version": 1}
    data = read_json(path)
    if not isinstance(data, dict) or data.get("version") != 1:
        raise ValidationError(f"{path}: config must be an object with version 1")
    unknown = set(data) - CONFIG_SECTIONS
    if unknown:
        raise ValidationError(f"{path}: unknown config sections {sorted(unknown)}")
    return data


def risk_config(conf: dict) -> RiskConfig:
    return RiskConfig.from_dict(conf.get("risk", {}))


def graph_config(conf: dict, m) -> GraphConfig:
    sec = _section(conf, "graph", {"connectivity", "r_c"})
    return GraphConfig(**sec) if sec else default_graph(m)


def read_path(path: str) -> tuple[list[tuple[int, ...]], list[dict] | None]:
    data = read_json(path)
    if not isinstance(data, dict) or data.get("version") != 1 or "path" not in data:
        raise ValidationError(f"{path}: path file must be an object with version 1 and a path")
    unknown = set(data) - PATH_FIELDS - PLAN_FIELDS
    if unknown:
        raise ValidationError(f"{path}: unknown fields {sorted(unknown)}")
    cells = [tuple(int(v) for v in s) for s in data["path"]]
    return cells, data.get("element_risks")


def _floats(text: str, n: int, name: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ValidationError(f"{name}: expected {n} comma-separated numbers, got {text!r}") from exc
    if len(vals) != n:
        raise ValidationError(f"{name}: expected {n} values, got {len(vals)}")
    return vals


def _digest(paths: Sequence[str | None]) -> str:
    h = hashlib.sha256()
    for p in paths:
        if p is not None:
            h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


def _clean(obj):
    """JSON-friendly copy with sorted keys and no wall-clock fields."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in sorted(obj.items(), key=lambda kv: str(kv[0])) if not str(k).startswith("wall_time")}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _emit(args, result: dict, text: str) -> None:
    payload = json.dumps(_clean(result), sort_keys=True, indent=2) + "\n"
    out = getattr(args, "out", None)
    if out:
        Path(out).write_text(payload)
    if args.json:
        sys.stdout.write(payload)
    else:
        sys.stdout.write(text.rstrip("\n") + "\n")


# subcommands ----------------------------------------------------------------

def cmd_map(args) -> dict:
    m = load_map(args.map)
    if args.action == "validate":
        result = {"valid": True, "dims": list(m.dims), "free": len(m.free_cells), "occupied": len(m.occupied)}
        _emit(args, result, f"valid map {m.dims}, {len(m.free_cells)} free, {len(m.occupied)} occupied")
        return result
    if args.out is None:
        raise ValidationError("map inflate needs --out")
    m2 = inflate(m, args.radius)
    save_map(m2, args.out)
    result = {"out": args.out, "occupied": len(m2.occupied)}
    if args.json:
        sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
    else:
        print(f"wrote {args.out} with {len(m2.occupied)} occupied cells")
    return result


def cmd_risk(args) -> dict:
    m = load_map(args.map)
    conf = load_config(args.config)
    cfg = risk_config(conf)
    cells, table = read_path(args.path)
    bd = path_risk(m, cells, cfg, gcfg=graph_config(conf, m), element_table=table)
    result = {"path": [list(s) for s in bd.path], "states": bd.as_rows(), "risk": bd.risk}
    cols = sorted({k for el in bd.elements for k in el})
    buf = io.StringIO()
    buf.write("idx  state          " + " ".join(f"{c:>13}" for c in cols) + "   P(finish)  cumulative\n")
    for row in bd.as_rows():
        vals = " ".join(f"{row['elements'].get(c, 0.0):13.4f}" for c in cols)
        buf.write(f"{row['index']:3d}  {str(tuple(row['state'])):14} {vals}   {row['finish']:9.4f}  {row['cumulative']:10.4f}\n")
    buf.write(f"path risk: {bd.risk:.4f}\n")
    _emit(args, result, buf.getvalue())
    return result


def cmd_plan(args) -> dict:
    m = load_map(args.map)
    conf = load_config(args.config)
    cfg = risk_config(conf)
    gcfg = graph_config(conf, m)
    reward = dict(_section(conf, "reward", {"gamma"}))
    if args.gamma is not None:
        reward["gamma"] = args.gamma
    rcfg = RewardConfig(**reward)
    if args.mode == "exact":
        res = plan_exact(m, cfg, gcfg, rcfg, Limits(**_section(conf, "limits", {"max_vertices", "max_paths"})))
    elif args.mode == "approx":
        res = select_max_utility(plan_risk_aware(m, cfg, gcfg, args.lookback), m, rcfg)
    else:
        res = select_max_utility(plan_additive_baseline(m, cfg, gcfg), m, rcfg)
    chosen = res.chosen
    ensemble = [
        {"vertex": list(s), "path": [list(c) for c in v.path], "risk": v.risk, "reward": v.reward, "utility": v.utility}
        | ({"cost": v.cost} if v.cost is not None else {})
        for s, v in sorted(res.per_vertex.items())
        if v.reachable
    ]
    stats = {k: v for k, v in res.stats.items() if k != "closing_risks"}
    result = {
        "version": 1,
        "mode": args.mode,
        "path": [list(c) for c in chosen.path],
        "risk": chosen.risk,
        "reward": chosen.reward,
        "utility": chosen.utility,
        "unit_risk": res.unit_risk,
        "ensemble": ensemble,
        "stats": stats,
    }
    text = (
        f"mode {args.mode}: path {' '.join(str(tuple(c)) for c in chosen.path)}\n"
        f"risk {chosen.risk:.4f}  reward {chosen.reward:.4f}  utility {chosen.utility:.4f}"
    )
    _emit(args, result, text)
    return result


def cmd_tether(args) -> dict:
    if args.action == "reduce":
        m = load_map(args.map)
        if args.out is None:
            raise ValidationError("tether reduce needs --out")
        m2 = ray_cast_reduce(m)
        save_map(m2, args.out)
        result = {"out": args.out, "free_before": len(m.free_cells), "free_after": len(m2.free_cells)}
        if args.json:
            sys.stdout.write(json.dumps(result, sort_keys=True) + "\n")
        else:
            print(f"reachable free cells: {len(m2.free_cells)} of {len(m.free_cells)}; wrote {args.out}")
        return result
    if args.action == "contacts":
        m = load_map(args.map)
        cells, _ = read_path(args.path)
        wps = plan_contacts(m, cells)
        plan = Plan6D(tuple(float(v) for v in m.tether_origin), wps)
        doc = plan.to_dict()
        if args.out:
            Path(args.out).write_text(dumps_lines(doc))
        if args.json:
            sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        else:
            for i, w in enumerate(wps):
                tag = f" ({w.event})" if w.event else ""
                print(f"{i:3d} {tuple(round(v, 3) for v in w.position)} contacts={w.n_contacts}{tag}")
        return doc
    # localize
    params = CatenaryParams(rho=args.rho, G=args.weight)
    th, ph, be = (math.radians(v) for v in (args.elev_deg, args.azim_deg, args.lean_deg))
    corrected = localize(args.length, th, ph, be, params, args.mode)
    prelim = localize(args.length, th, ph, be, params, "preliminary")
    result = {"mode": args.mode, "corrected": corrected.tolist(), "preliminary": prelim.tolist()}
    text = (
        f"corrected ({args.mode}): x={corrected[0]:.4f} y={corrected[1]:.4f} z={corrected[2]:.4f}\n"
        f"preliminary:        x={prelim[0]:.4f} y={prelim[1]:.4f} z={prelim[2]:.4f}"
    )
    _emit(args, result, text)
    return result


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def cmd_simulate(args) -> dict:
    plan = Plan6D.from_dict(read_json(args.plan))
    conf = load_config(args.config)
    sim_sec = dict(_section(conf, "sim", {"dt", "max_steps", "limits", "theta_guard_deg", "hysteresis_deg", "kappa_max"}))
    for k in ("limits",):
        if k in sim_sec:
            sim_sec[k] = tuple(sim_sec[k])
    if args.noise:
        sim_sec["noise"] = _floats(args.noise, 3, "--noise")
    gains_sec = {k: tuple(v) if isinstance(v, list) else v for k, v in _section(conf, "gains", {"kp", "kd", "alpha", "r_acc"}).items()}
    m = load_map(args.map) if args.map else None
    trace = execute_plan(plan, args.controller, ControllerGains(**gains_sec), SimConfig(**sim_sec), m, args.seed)
    if args.trace:
        cols = ["t", "x", "y", "z", "L", "theta", "phi", "contact_count", "wp_index"]
        _write_csv(args.trace, cols, ([r[c] for c in cols] for r in trace.rows()))
    ct = cross_track_error(trace, plan)
    try:
        smooth = smoothness(trace, args.window)
    except ValueError:
        smooth = None
    result = {
        "status": trace.status,
        "steps": len(trace.t) - 1,
        "duration_s": trace.t[-1] if trace.t else 0.0,
        "reached": len(trace.reached),
        "waypoints": len(plan.waypoints),
        "cross_track": {"mean": ct.mean, "rms": ct.rms, "max": ct.max},
        "smoothness_rad": smooth,
    }
    text = (
        f"status {trace.status}: {len(trace.reached)}/{len(plan.waypoints)} waypoints in {result['duration_s']:.2f} s\n"
        f"cross-track mean {ct.mean:.4f} rms {ct.rms:.4f} max {ct.max:.4f} m"
        + (f"\nsmoothness {smooth:.4f} rad" if smooth is not None else "")
    )
    _emit(args, result, text)
    return result


def _pose_list(data, name: str) -> list[ServoPose]:
    try:
        return [ServoPose.from_array(p) for p in data]
    except TypeError as exc:
        raise ValidationError(f"{name}: poses must be lists of 6 numbers") from exc


def cmd_servo(args) -> dict:
    traj = read_json(args.target_traj)
    if set(traj) - {"version", "dt", "poses", "start"} or traj.get("version") != 1:
        raise ValidationError(f"{args.target_traj}: expected version 1 with fields dt, poses, start")
    view = read_json(args.desired_view)
    if set(view) - {"version", "pose"} or view.get("version") != 1:
        raise ValidationError(f"{args.desired_view}: expected version 1 with a pose")
    gains_doc = read_json(args.gains) if args.gains else {"version": 1}
    if set(gains_doc) - {"version", "kp", "kd", "exact"}:
        raise ValidationError(f"{args.gains}: unknown fields {sorted(set(gains_doc) - {'version', 'kp', 'kd', 'exact'})}")
    gains = ServoGains(**{k: tuple(gains_doc[k]) for k in ("kp", "kd") if k in gains_doc})
    poses = _pose_list(traj["poses"], args.target_traj)
    start = ServoPose.from_array(traj["start"]) if "start" in traj else None
    star = ServoPose.from_array(view["pose"]).to_transform()
    run = simulate_servo(poses, star, start, gains, float(traj.get("dt", 0.05)), bool(gains_doc.get("exact", False)))
    if args.trace:
        axes = ("x", "y", "z", "yaw", "pitch", "roll")
        header = ["t"] + [f"desired_{a}" for a in axes] + [f"actual_{a}" for a in axes] + [f"error_{a}" for a in axes]
        err = run.desired - run.actual
        err[:, 3:] = (err[:, 3:] + math.pi) % (2 * math.pi) - math.pi
        _write_csv(args.trace, header, (np.concatenate([[t], d, a, e]) for t, d, a, e in zip(run.t, run.desired, run.actual, err)))
    stats = run.error_stats()
    result = {"steps": len(run.t), "errors": stats, "max_view_error": float(run.view_error.max()),
              "max_roll_command": float(np.abs(run.commands[:, 5]).max())}
    lines = ["axis      mean       rms       max        sd"]
    for a, s in stats.items():
        lines.append(f"{a:6} {s['mean']:9.4f} {s['rms']:9.4f} {s['max']:9.4f} {s['sd']:9.4f}")
    _emit(args, result, "\n".join(lines))
    return result


# wiring ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--verbose", action="store_true", help="print a run manifest to stderr")
    common.add_argument("--manifest", help="write the run manifest to this file")

    p = Parser(prog="tetherrisk", description="Risk-aware planning and tethered UAV tools")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    mp = sub.add_parser("map", parents=[common], help="validate or inflate a map")
    mp.add_argument("action", choices=("validate", "inflate"))
    mp.add_argument("--map", required=True)
    mp.add_argument("--radius", type=int, default=1)
    mp.add_argument("--out")
    mp.set_defaults(func=cmd_map, inputs=("map",))

    rp = sub.add_parser("risk", parents=[common], help="per-state risk table of a path")
    rp.add_argument("--map", required=True)
    rp.add_argument("--path", required=True)
    rp.add_argument("--config")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_risk, inputs=("map", "path", "config"))

    pp = sub.add_parser("plan", parents=[common], help="plan a max-utility path")
    pp.add_argument("--map", required=True)
    pp.add_argument("--config")
    pp.add_argument("--mode", choices=("exact", "approx", "baseline"), default="approx")
    pp.add_argument("--gamma", type=float)
    pp.add_argument("--lookback", type=int, default=2)
    pp.add_argument("--out")
    pp.set_defaults(func=cmd_plan, inputs=("map", "config"))

    tp = sub.add_parser("tether", parents=[common], help="reachable space, contacts and localization")
    tp.add_argument("action", choices=("reduce", "contacts", "localize"))
    tp.add_argument("--map")
    tp.add_argument("--path")
    tp.add_argument("--out")
    tp.add_argument("--length", type=float)
    tp.add_argument("--elev-deg", type=float)
    tp.add_argument("--azim-deg", type=float, default=0.0)
    tp.add_argument("--lean-deg", type=float)
    tp.add_argument("--mode", choices=tuple(m for m in LOCALIZE_MODES if m != "preliminary"), default="tension")
    tp.add_argument("--rho", type=float, default=CatenaryParams.rho)
    tp.add_argument("--weight", type=float, default=CatenaryParams.G)
    tp.set_defaults(func=cmd_tether, inputs=("map", "path"))

    sp = sub.add_parser("simulate", parents=[common], help="execute a contact plan")
    sp.add_argument("--plan", required=True)
    sp.add_argument("--controller", choices=("position", "velocity", "composite"), default="position")
    sp.add_argument("--noise", help="sensor noise std as sL,stheta,sphi")
    sp.add_argument("--map")
    sp.add_argument("--config")
    sp.add_argument("--window", type=int, default=1)
    sp.add_argument("--trace")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_simulate, inputs=("plan", "map", "config"))

    vp = sub.add_parser("servo", parents=[common], help="visual servoing against a scripted target")
    vp.add_argument("--target-traj", required=True)
    vp.add_argument("--desired-view", required=True)
    vp.add_argument("--gains")
    vp.add_argument("--trace")
    vp.add_argument("--out")
    vp.set_defaults(func=cmd_servo, inputs=("target_traj", "desired_view", "gains"))
    return p


def _check_tether_args(args) -> None:
    if args.command != "tether":
        return
    need = {"reduce": ("map",), "contacts": ("map", "path"), "localize": ("length", "elev_deg", "lean_deg")}[args.action]
    missing = [n for n in need if getattr(args, n) is None]
    if missing:
        raise UsageError(f"tether {args.action}: missing --{', --'.join(n.replace('_', '-') for n in missing)}")


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    t0 = time.perf_counter()
    try:
        args = parser.parse_args(argv)
        _check_tether_args(args)
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DomainError, PlanningError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    if args.verbose or args.manifest:
        inputs = [getattr(args, n, None) for n in args.inputs]
        manifest = {
            "subcommand": args.command,
            "inputs": [p for p in inputs if p],
            "digest": _digest(inputs),
            "seed": args.seed,
            "version": __version__,
            "wall_time_s": round(time.perf_counter() - t0, 6),
        }
        text = json.dumps(manifest, sort_keys=True)
        if args.manifest:
            Path(args.manifest).write_text(text + "\n")
        if args.verbose:
            print(text, file=sys.stderr)
    return 0


def main() -> None:
    sys.exit(dispatch())
