"""Command-line driver: flows, verification suite, index tables, moment checks, reports."""
import argparse
import csv
import json
import sys
import time

import numpy as np
import yaml
from jsonschema import Draft202012Validator

SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ESCAPE, EXIT_NONCONV = 0, 1, 2, 3, 4

_GRID = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 4},
        "length": {"type": "number", "exclusiveMinimum": 0},
        "half_width": {"type": "number", "exclusiveMinimum": 0},
        "width": {"type": "integer", "minimum": 1},
        "scheme": {"enum": ["centered", "centered4", "spectral"]},
    },
}

_PERTURBATION = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "amplitude": {"type": "number", "minimum": 0},
        "shells": {"type": "integer", "minimum": 1},
        "radius": {"type": "number", "exclusiveMinimum": 0},
    },
}

_FLOW = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "mode": {"enum": ["plain", "adjusted", "stabilized"]},
        "variant": {"enum": ["trQ2", "trQ"]},
        "tol": {"type": "number", "exclusiveMinimum": 0},
        "target": {"type": "number", "exclusiveMinimum": 0},
        "max_steps": {"type": "integer", "minimum": 0},
        "c": {"type": "number", "exclusiveMinimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "rtol": {"type": "number", "exclusiveMinimum": 0},
        "maxiter": {"type": "integer", "minimum": 1},
    },
}

_OUTPUT = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "csv": {"type": "string"},
        "snapshot": {"type": "string"},
        "json": {"type": "string"},
    },
}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["kind", "seed"],
    "properties": {
        "kind": {"enum": ["triple-flow", "connection-flow", "verify", "index", "moment"]},
        "seed": {"type": "integer", "minimum": 0},
        "grid": _GRID,
        "perturbation": _PERTURBATION,
        "flow": _FLOW,
        "output": _OUTPUT,
        "chi": {"type": "integer"},
        "tau": {"type": "integer"},
    },
}

DEFAULTS = {
    "triple-flow": dict(grid=dict(n=12, length=1.0, scheme="centered"),
                        perturbation=dict(amplitude=0.05, shells=3),
                        flow=dict(variant="trQ2", tol=1e-6, max_steps=20000, c=0.2)),
    "connection-flow": dict(grid=dict(n=24, half_width=4.0, width=2, scheme="centered4"),
                            perturbation=dict(amplitude=0.02, radius=2.0),
                            flow=dict(mode="stabilized", max_steps=4, dt=4.0, c=0.2,
                                      rtol=1e-3, maxiter=8)),
}


class ConfigError(ValueError):
    pass


def validate_config(cfg):
    errors = sorted(Draft202012Validator(CONFIG_SCHEMA).iter_errors(cfg), key=lambda e: list(e.path))
    if errors:
        msg = "; ".join(f"{'/'.join(map(str, e.path)) or '<root>'}: {e.message}" for e in errors)
        raise ConfigError(msg)
    return cfg


def load_config(path):
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh)
    except (OSError, yaml.YAMLError) as e:
        raise ConfigError(str(e)) from e
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return validate_config(cfg)


def _merged(kind, cfg):
    out = {}
    for sec, vals in DEFAULTS.get(kind, {}).items():
        out[sec] = dict(vals, **cfg.get(sec, {}))
    for k, v in cfg.items():
        if k not in out:
            out[k] = v
    return out


def _config_from_args(kind, args):
    """Config dict from a --config file plus command-line overrides, validated."""
    cfg = load_config(args.config) if getattr(args, "config", None) else {"kind": kind}
    if cfg.get("kind", kind) != kind:
        raise ConfigError(f"config kind {cfg['kind']!r} does not match subcommand {kind!r}")
    cfg["kind"] = kind
    over = {
        ("grid", "n"): getattr(args, "grid", None),
        ("perturbation", "amplitude"): getattr(args, "amp", None),
        ("flow", "mode"): getattr(args, "mode", None),
        ("flow", "max_steps"): getattr(args, "steps", None),
        ("flow", "dt"): getattr(args, "dt", None),
        ("output", "csv"): getattr(args, "csv", None),
        ("output", "snapshot"): getattr(args, "snapshot", None),
        ("output", "json"): getattr(args, "json_out", None),
    }
    for (sec, key), v in over.items():
        if v is not None:
            cfg.setdefault(sec, {})[key] = v
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if "seed" not in cfg:
        raise ConfigError("a seed is required (--seed or 'seed' in the config)")
    return _merged(kind, validate_config(cfg))


# ------------------------------------------------------------------ writers

class CsvLog:
    def __init__(self, path, columns):
        self.columns = columns
        self.fh = open(path, "w", newline="") if path else None
        if self.fh:
            self.w = csv.DictWriter(self.fh, fieldnames=columns, extrasaction="ignore")
            self.w.writeheader()

    def __call__(self, row):
        if self.fh:
            self.w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                             for k, v in row.items()})
            self.fh.flush()

    def close(self):
        if self.fh:
            self.fh.close()


def _emit(obj, path=None, as_json=True):
    obj = dict(schema_version=SCHEMA_VERSION, **obj)
    text = json.dumps(obj, indent=2, sort_keys=True, default=_jsonable)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    if as_json:
        print(text)
    return obj


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


# -------------------------------------------------------------- subcommands

TRIPLE_COLUMNS = ["step", "t", "F", "vol", "sup_Q_dev", "min_eig_Q", "step_size", "ls_halvings"]
CONNECTION_COLUMNS = ["step", "t", "E", "sup_Q_dev", "min_eig_Q", "bianchi_res", "sign_flips",
                      "interior_volume", "step_size", "ls_halvings", "cg_iters"]


def cmd_triple_flow(args):
    from . import lattice, triple_lab as tl
    cfg = _config_from_args("triple-flow", args)
    g, p, f, o = cfg["grid"], cfg["perturbation"], cfg["flow"], cfg.get("output", {})
    grid = lattice.Grid.torus(g["n"], g["length"], g["scheme"])
    s = tl.perturbed_state(grid, cfg["seed"], p["amplitude"], p["shells"])
    log = CsvLog(o.get("csv"), TRIPLE_COLUMNS)
    t0 = time.time()
    try:
        s, rows, status = tl.run_flow_triples(s, tol=f["tol"], max_steps=f["max_steps"], c=f["c"],
                                              variant=f["variant"], log=log)
    except tl.EscapedError as e:
        print(f"escaped: {e}", file=sys.stderr)
        return EXIT_ESCAPE
    except tl.StepError as e:
        print(f"step failure: {e}", file=sys.stderr)
        return EXIT_NONCONV
    finally:
        log.close()
    if o.get("snapshot"):
        lattice.write_snapshot(o["snapshot"], grid, tl.omega(s), 2, dict(seed=cfg["seed"]))
    last = rows[-1]
    _emit(dict(kind="triple-flow", status=status, steps=last["step"], F=last["F"],
               sup_Q_dev=last["sup_Q_dev"], energy_gap=last["F"] - 3.0,
               seconds=round(time.time() - t0, 3)), o.get("json"), not args.quiet)
    return EXIT_OK if status == "converged" else EXIT_NONCONV


def cmd_connection_flow(args):
    from . import connection_lab as cl, lattice
    cfg = _config_from_args("connection-flow", args)
    g, p, f, o = cfg["grid"], cfg["perturbation"], cfg["flow"], cfg.get("output", {})
    grid = lattice.Grid.chart(g["n"], g["half_width"], g["width"], g["scheme"])
    s = cl.perturbed_state(grid, cfg["seed"], p["amplitude"], p["radius"])
    log = CsvLog(o.get("csv"), CONNECTION_COLUMNS)
    t0 = time.time()
    try:
        s, rows, status = cl.run_flow(s, f["mode"], max_steps=f["max_steps"], dt=f["dt"], c=f["c"],
                                      rtol=f["rtol"], maxiter=f["maxiter"], target=f.get("target"),
                                      log=log)
    except cl.EscapedError as e:
        print(f"escaped: {e}", file=sys.stderr)
        return EXIT_ESCAPE
    except cl.StepError as e:
        print(f"step failure: {e}", file=sys.stderr)
        return EXIT_NONCONV
    finally:
        log.close()
    if o.get("snapshot"):
        lattice.write_snapshot(o["snapshot"], grid, s.A, 1, dict(seed=cfg["seed"]))
    first, last = rows[0], rows[-1]
    _emit(dict(kind="connection-flow", status=status, steps=last["step"], E=last["E"],
               sup_Q_dev_start=first["sup_Q_dev"], sup_Q_dev=last["sup_Q_dev"],
               reduction=first["sup_Q_dev"] / max(last["sup_Q_dev"], 1e-300),
               seconds=round(time.time() - t0, 3)), o.get("json"), not args.quiet)
    if "target" in f and status != "target":
        return EXIT_NONCONV
    return EXIT_OK


def cmd_index(args):
    from . import topology
    rep = topology.index_report(topology.TopoData(args.chi, args.tau))
    if args.json:
        _emit(dict(kind="index", **rep))
    else:
        width = max(len(k) for k in rep)
        for k, v in rep.items():
            print(f"{k:<{width}}  {v}")
    return EXIT_OK


def cmd_moment(args):
    from . import moment_map as mm
    rng = np.random.default_rng(args.seed)
    quad = mm.SphereQuadrature.lebedev(args.degree)
    n = args.sites
    mu = rng.uniform(0.5, 2.0, size=n)
    Q = np.broadcast_to(np.eye(3), (n, 3, 3))
    perfect = mm.perfect_check(Q, mu, quad)
    f = mm.real_harmonic(2, 2, quad.nodes)
    svals = np.linspace(0.01, 0.1, 10)
    pairs = np.array([mm.moment_pair(np.diag([1 + s, 1 - s, 1.0]), 1.0, f, quad) for s in svals])
    slope, icpt = np.polyfit(svals, pairs, 1)
    resid = pairs - (slope * svals + icpt)
    r2 = 1 - np.sum(resid ** 2) / np.sum((pairs - pairs.mean()) ** 2)
    _emit(dict(kind="moment", perfect=perfect, diag_fit=dict(slope=slope, intercept=icpt, r2=r2)))
    return EXIT_OK if perfect["perfect"] and r2 > 0.999 else EXIT_FAIL


def read_trajectory(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as e:
        raise ConfigError(str(e)) from e
    if not rows:
        raise ConfigError(f"{path}: no rows")
    need = {"step", "t", "sup_Q_dev"}
    if not need <= set(rows[0]):
        raise ConfigError(f"{path}: missing columns {sorted(need - set(rows[0]))}")
    energy = "F" if "F" in rows[0] else "E" if "E" in rows[0] else None
    if energy is None:
        raise ConfigError(f"{path}: no energy column")
    try:
        out = {k: np.array([float(r[k]) for r in rows]) for k in rows[0] if rows[0][k] is not None}
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: {e}") from e
    return out, energy


def summarize(traj, energy):
    en = traj[energy]
    monotone = bool(np.all(np.diff(en) <= 0))
    t, dev = traj["t"], traj["sup_Q_dev"]
    keep = dev > 0
    rate = None
    if keep.sum() >= 2 and np.ptp(t[keep]) > 0:
        rate = float(-np.polyfit(t[keep], np.log(dev[keep]), 1)[0])
    if energy == "F":
        gap = float(en[-1] - 3.0)
    else:
        gap = float(en[-1] - 3.0 * traj["interior_volume"][-1]) if "interior_volume" in traj else None
    return dict(verdict="PASS" if monotone else "FAIL", monotone=monotone, decay_rate=rate,
                energy_gap=gap, final_sup_Q_dev=float(dev[-1]), steps=int(traj["step"][-1]))


def cmd_report(args):
    out = []
    for path in args.files:
        traj, energy = read_trajectory(path)
        out.append(dict(file=path, **summarize(traj, energy)))
    if args.json:
        _emit(dict(kind="report", runs=out))
    else:
        for r in out:
            rate = "n/a" if r["decay_rate"] is None else f"{r['decay_rate']:.4g}"
            gap = "n/a" if r["energy_gap"] is None else f"{r['energy_gap']:.3e}"
            print(f"{r['file']}: {r['verdict']}  decay rate {rate}  energy gap {gap}  "
                  f"final sup|Q-Id| {r['final_sup_Q_dev']:.3e}")
    return EXIT_OK if all(r["monotone"] for r in out) else EXIT_FAIL


def cmd_verify(args):
    from .verify import run_suite
    results = run_suite(seed=args.seed)
    width = max(len(r["check"]) for r in results)
    if args.json:
        _emit(dict(kind="verify", checks=results))
    else:
        for r in results:
            print(f"{'PASS' if r['ok'] else 'FAIL'}  {r['check']:<{width}}  [{r['anchor']}]  {r['detail']}")
    return EXIT_OK if all(r["ok"] for r in results) else EXIT_FAIL


# --------------------------------------------------------------------- main

def build_parser():
    ap = argparse.ArgumentParser(prog="asdlab")
    ap.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    sub = ap.add_subparsers(dest="command", required=True)

    def flow_args(p):
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--grid", type=int)
        p.add_argument("--amp", type=float)
        p.add_argument("--steps", type=int)
        p.add_argument("--csv")
        p.add_argument("--snapshot")
        p.add_argument("--json-out")
        p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("triple-flow")
    flow_args(p)
    p.set_defaults(func=cmd_triple_flow)

    p = sub.add_parser("connection-flow")
    flow_args(p)
    p.add_argument("--mode", choices=["plain", "adjusted", "stabilized"])
    p.add_argument("--dt", type=float)
    p.set_defaults(func=cmd_connection_flow)

    p = sub.add_parser("verify")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("index")
    p.add_argument("--chi", type=int, required=True)
    p.add_argument("--tau", type=int, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("moment")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--degree", type=int, default=9)
    p.add_argument("--sites", type=int, default=16)
    p.set_defaults(func=cmd_moment)

    p = sub.add_parser("report")
    p.add_argument("files", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
