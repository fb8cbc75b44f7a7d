"""Command-line front end: ``ehresmann-lab <subcommand> --scenario NAME ...``."""
from __future__ import annotations

import argparse
import json
import math
import sys
from typing import Optional

import numpy as np

from .atlas import Box, BundlePoint
from .construct import build_complete_connection, check_disconnecting
from .errors import ConfigError, NumericalFailure, ValidationError
from .example3 import c_length
from .fibered import build_complete_fibered_metric
from .geodesic import exp_trivialization, geodesic
from .lift import BaseCurve, completeness_probe, horizontal_lift, parallel_transport
from .metrics import FiberedMetric
from .scenarios import build as build_scenario
from .scenarios import registry

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3

COMMON = {"scenario": None, "params": {}, "seed": 0, "out": None}

# per-command options and their defaults; None means "scenario decides"
COMMANDS = {
    "lift": {"connection": None, "b0": None, "y0": None, "t0": 0.0, "t1": 1.0, "velocity": None, "chart": None},
    "transport": {"connection": None, "b0": None, "b1": None, "fibers": [0.0], "chart": None},
    "construct": {"rounds": None, "samples": 10_000},
    "probe": {"connection": None, "trials": 20, "horizon": 10.0, "speed": 1.0, "workers": None},
    "geodesic": {"metric": None, "b0": None, "y0": None, "velocity": None, "horizon": 1.0, "chart": None,
                 "unit_speed": True},
    "length": {"metric": None, "tol": 1e-3, "levels": 8},
    "metric-construct": {"rounds": None, "samples": 10_000},
    "check-lemma": {"connection": None, "sections": None, "window": 10.0, "grid": 200, "tol": 1e-12},
    "exp-triv": {"metric": None, "b0": None, "radius": 0.5, "grid": 7, "chart": None},
}


def jsonable(obj):
    """Plain-Python copy of ``obj`` with numpy values converted and non-finite floats as None."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def load_config(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1:1: config must be a JSON object")
    return doc


def _floats(v, name):
    if v is None:
        return None
    if isinstance(v, (int, float)):
        v = [v]
    try:
        return np.asarray([float(x) for x in v], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected numbers, got {v!r}") from exc


def _param_pair(text: str):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    k, v = text.split("=", 1)
    try:
        val = json.loads(v)
    except json.JSONDecodeError:
        val = v
    return k, val


def resolve(command: str, args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags; unknown config keys are rejected."""
    allowed = {**COMMON, **COMMANDS[command]}
    cfg = {k: (dict(v) if isinstance(v, dict) else v) for k, v in allowed.items()}
    if args.config:
        doc = load_config(args.config)
        unknown = sorted(set(doc) - set(allowed))
        if unknown:
            raise ConfigError(f"{args.config}: unknown keys {unknown} for {command!r}")
        cfg.update(doc)
    for k in allowed:
        v = getattr(args, k, None)
        if k == "params":
            if v:
                cfg["params"] = {**(cfg["params"] or {}), **dict(v)}
        elif v is not None:
            cfg[k] = v
    if not cfg["scenario"]:
        raise ConfigError("a scenario is required (--scenario or the config key 'scenario')")
    if not isinstance(cfg["params"], dict):
        raise ConfigError("'params' must be an object")
    return cfg


def _base_start(built, b0):
    b = _floats(b0, "b0")
    if b is None:
        box = built.atlas.base.box
        return 0.5 * (box.lo + box.hi)
    if b.size != built.atlas.n:
        raise ConfigError(f"b0 needs {built.atlas.n} numbers")
    return b


def _fiber_start(built, y0):
    f = _floats(y0, "y0")
    if f is None:
        return np.zeros(built.atlas.m)
    if f.size != built.atlas.m:
        raise ConfigError(f"y0 needs {built.atlas.m} numbers")
    return f


def _emit(text: str, out: Optional[str], stream) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        stream.write(text)


def _with_scenario(payload: dict, cfg: dict, built) -> dict:
    payload = dict(payload)
    payload.setdefault("schema_version", "1")
    payload["scenario"] = built.name
    payload["params"] = built.params
    payload["seed"] = cfg["seed"]
    return payload


# ------------------------------------------------------------------ commands

def cmd_lift(cfg, built):
    conn = built.connection(cfg["connection"])
    b0 = _base_start(built, cfg["b0"])
    v = _floats(cfg["velocity"], "velocity")
    v = np.ones(built.atlas.n) if v is None else v
    t0, t1 = float(cfg["t0"]), float(cfg["t1"])
    if not t1 > t0:
        raise ConfigError("t1 must exceed t0")
    curve = BaseCurve.line(b0, v, t0, t1)
    start = built.atlas.point(b0, _fiber_start(built, cfg["y0"]), cfg["chart"])
    return horizontal_lift(conn, curve, start).to_csv()


def cmd_transport(cfg, built):
    conn = built.connection(cfg["connection"])
    b0 = _base_start(built, cfg["b0"])
    b1 = _floats(cfg["b1"], "b1")
    if b1 is None:
        raise ConfigError("transport needs b1")
    fibers = [np.atleast_1d(np.asarray(f, dtype=float)) for f in cfg["fibers"]]
    chart = cfg["chart"] if cfg["chart"] is not None else built.atlas.best_chart(b0)
    if chart is None:
        raise ConfigError(f"b0={b0.tolist()} lies in no chart")
    pts = [BundlePoint(chart, b0, f) for f in fibers]
    res = parallel_transport(conn, BaseCurve.segment(b0, b1), pts)
    payload = {"connection": conn.name, "b0": b0, "b1": b1, "results": [r.to_json() for r in res]}
    return dump_json(_with_scenario(payload, cfg, built))


def _rounds(cfg, built):
    if cfg["rounds"] is not None:
        return int(cfg["rounds"])
    return int(built.params.get("rounds", 4))


def cmd_construct(cfg, built):
    _, record = build_complete_connection(built.atlas, _rounds(cfg, built), samples=int(cfg["samples"]))
    return dump_json(_with_scenario(record.to_json(), cfg, built))


def cmd_probe(cfg, built):
    conn = built.connection(cfg["connection"])
    window = None
    record = built.extras.get("record")
    if record is not None:
        window = record.fiber_window()
    rep = completeness_probe(conn, int(cfg["trials"]), float(cfg["horizon"]), float(cfg["speed"]),
                             seed=int(cfg["seed"]), fiber_window=window, workers=cfg["workers"])
    payload = rep.to_json()
    payload["connection"] = conn.name
    return dump_json(_with_scenario(payload, cfg, built))


def cmd_geodesic(cfg, built):
    metric = built.metric(cfg["metric"])
    v = _floats(cfg["velocity"], "velocity")
    if isinstance(metric, FiberedMetric):
        b0 = _base_start(built, cfg["b0"])
        start = built.atlas.point(b0, _fiber_start(built, cfg["y0"]), cfg["chart"])
        dim = built.atlas.n + built.atlas.m
    else:
        dim = metric.dim
        b0 = _floats(cfg["b0"], "b0")
        y0 = _floats(cfg["y0"], "y0")
        start = np.concatenate([x for x in (b0, y0) if x is not None]) if (b0 is not None or y0 is not None) \
            else 0.5 * (metric.domain.lo + metric.domain.hi)
        if start.size != dim:
            raise ConfigError(f"start needs {dim} coordinates (b0 followed by y0)")
    if v is None:
        v = np.zeros(dim)
        v[0] = 1.0
    if v.size != dim:
        raise ConfigError(f"velocity needs {dim} numbers")
    tr = geodesic(metric, start, v, float(cfg["horizon"]), unit_speed=bool(cfg["unit_speed"]))
    return tr.to_csv()


def cmd_length(cfg, built):
    ex = built.extras.get("example")
    if ex is None:
        raise ConfigError(f"scenario {built.name!r} has no test curve; use example3")
    metric = built.metric(cfg["metric"])
    rep = c_length(metric, tol=float(cfg["tol"]), levels=int(cfg["levels"]))
    payload = rep.to_json()
    payload.update({"metric": metric.name, "curve": "t -> (t, c(t)) on (-5, 0)", "k_max": ex.k_max})
    return dump_json(_with_scenario(payload, cfg, built))


def cmd_metric_construct(cfg, built):
    _, record = build_complete_fibered_metric(built.atlas, _rounds(cfg, built), samples=int(cfg["samples"]))
    return dump_json(_with_scenario(record.to_json(), cfg, built))


def cmd_check_lemma(cfg, built):
    conn = built.connection(cfg["connection"])
    fam = built.section_family(cfg["sections"])
    verdict = check_disconnecting(conn, fam, tol_h=float(cfg["tol"]), window=float(cfg["window"]),
                                  grid=int(cfg["grid"]))
    payload = verdict.to_json()
    payload.update({"connection": conn.name, "verdict": verdict.verdict, "sections": [float(np.ravel(x)[0])
                    for x in fam.labels]})
    return dump_json(_with_scenario(payload, cfg, built))


def cmd_exp_triv(cfg, built):
    metric = built.metric(cfg["metric"])
    if not isinstance(metric, FiberedMetric):
        raise ConfigError("exp-triv needs a fibered metric")
    b0 = _base_start(built, cfg["b0"])
    res = exp_trivialization(metric, b0, float(cfg["radius"]), chart=cfg["chart"], grid=int(cfg["grid"]))
    return dump_json(_with_scenario(res.to_json(), cfg, built))


HANDLERS = {
    "lift": cmd_lift, "transport": cmd_transport, "construct": cmd_construct, "probe": cmd_probe,
    "geodesic": cmd_geodesic, "length": cmd_length, "metric-construct": cmd_metric_construct,
    "check-lemma": cmd_check_lemma, "exp-triv": cmd_exp_triv,
}


def build_parser() -> argparse.ArgumentParser:
    names = ", ".join(s.name for s in registry())
    parser = argparse.ArgumentParser(prog="ehresmann-lab",
                                     description="Horizontal lifts, complete connections and fibered metrics.")
    sub = parser.add_subparsers(dest="command", required=True)
    floats = dict(type=float, nargs="+")
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--scenario", help=f"one of: {names}")
        p.add_argument("--config", help="JSON config; flags override its fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output path (default stdout)")
        p.add_argument("--param", dest="params", action="append", type=_param_pair, metavar="KEY=VALUE",
                       help="scenario parameter override")
        opts = COMMANDS[name]
        if "connection" in opts:
            p.add_argument("--connection")
        if "metric" in opts:
            p.add_argument("--metric")
        if "b0" in opts:
            p.add_argument("--b0", **floats)
        if "y0" in opts:
            p.add_argument("--y0", "--f0", dest="y0", **floats)
        if "chart" in opts:
            p.add_argument("--chart", type=int)
        if "velocity" in opts:
            p.add_argument("--velocity", **floats)
        if name == "lift":
            p.add_argument("--t0", type=float)
            p.add_argument("--t1", type=float)
        if name == "transport":
            p.add_argument("--b1", **floats)
            p.add_argument("--fibers", type=float, nargs="+")
        if name in ("construct", "metric-construct"):
            p.add_argument("--rounds", type=int)
            p.add_argument("--samples", type=int)
        if name == "probe":
            p.add_argument("--trials", type=int)
            p.add_argument("--horizon", type=float)
            p.add_argument("--speed", type=float)
            p.add_argument("--workers", type=int)
        if name == "geodesic":
            p.add_argument("--horizon", type=float)
            p.add_argument("--no-unit-speed", dest="unit_speed", action="store_false", default=None)
        if name == "length":
            p.add_argument("--tol", type=float)
            p.add_argument("--levels", type=int)
        if name == "check-lemma":
            p.add_argument("--sections")
            p.add_argument("--window", type=float)
            p.add_argument("--grid", type=int)
            p.add_argument("--tol", type=float)
        if name == "exp-triv":
            p.add_argument("--radius", type=float)
            p.add_argument("--grid", type=int)
    return parser


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_VALIDATION
    try:
        cfg = resolve(args.command, args)
        built = build_scenario(cfg["scenario"], cfg["params"])
        text = HANDLERS[args.command](cfg, built)
        _emit(text, cfg["out"], stdout)
    except ValidationError as exc:
        print(f"error: {exc}", file=stderr)
        return EXIT_VALIDATION
    except NumericalFailure as exc:
        print(f"numerical failure ({type(exc).__name__}): {exc}", file=stderr)
        witness = getattr(exc, "witness", None)
        if witness is not None:
            print(dump_json({"witness": witness}), file=stderr, end="")
        return EXIT_NUMERICAL
    return EXIT_OK


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
