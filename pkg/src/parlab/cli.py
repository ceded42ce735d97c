"""Command line: declarative runs of the solver and the regularity probes.

Exit status: 0 when every probe passes, 1 when some probe fails,
2 for an invalid config (nothing is written), 3 when a computation fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np
import yaml

from . import __version__, analytic, probe
from .analytic import FlatnessConfig, manufactured
from .errors import ComputeError, ConfigError, ParlabError
from .expr import Expr
from .lattice import GridSpec, dump_field, restrict
from .operators import DeviationParams, EquationParams
from .solver import ProblemSpec, solve

MANIFEST_FORMAT = "parlab-manifest/1"

_num = {"type": "number"}
_vec = {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}
_numlist = {"type": "array", "items": _num, "minItems": 1}


def _obj(props, required=()):
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


PROBES = {
    "flatness": _obj({"rho": _num, "delta": _num, "C2": _num, "C3": _num, "eps0": _num,
                      "kmax": {"type": "integer", "minimum": 0}}),
    "seminorms": _obj({"radius": _num, "lam": _num, "alphas": _numlist,
                       "max_pairs": {"type": "integer", "minimum": 1},
                       "min_time_exponent": _num, "min_r2": _num}),
    "certify": _obj({"mode": {"enum": ["holder", "lipschitz"]}, "beta": _num, "nu": _num,
                     "kappa0": _num, "s1": _num, "L1": _num, "L2": _num, "x0": _vec,
                     "y0": _vec, "t0": _num, "safety": _num,
                     "stride": {"type": "integer", "minimum": 1},
                     "tstride": {"type": "integer", "minimum": 1}}, ["mode"]),
    "sweep-q": _obj({"q": {"type": "array", "minItems": 1,
                           "items": {"anyOf": [_num, _vec]}},
                     "gamma": _num, "p": _num, "radius": _num}, ["q"]),
    "convergence": _obj({"kind": {"type": "string"}, "hs": _numlist, "t_depth": _num,
                         "min_order": _num}),
    "barrier": _obj({"t0": _num, "eta": _num}),
}

SCHEMA = _obj({
    "problem": _obj({
        "n": {"enum": [1, 2]}, "h": _num, "dt": _num, "t_depth": _num, "half_width": _num,
        "gamma": _num, "p": _num, "eps": {"type": ["number", "null"]}, "cfl_safety": _num,
        "q": _vec,
        "data": _obj({
            "kind": {"type": "string"}, "slope": _vec, "K": _num,
            "initial": {"type": ["string", "number"]},
            "boundary": {"type": ["string", "number"]},
            "source": {"type": ["string", "number"]},
            "fnorm": _num,
        }),
    }, ["n", "h", "dt", "t_depth", "gamma", "p", "data"]),
    "probes": {"type": "array", "items": {
        "type": "object", "required": ["type"],
        "properties": {"type": {"enum": sorted(PROBES)}}}},
    "output_dir": {"type": "string"},
    "seed": {"type": "integer"},
    "write_field": {"type": "boolean"},
}, ["problem"])


# -- config -----------------------------------------------------------------

def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if isinstance(cfg, dict) and cfg.get("format") == MANIFEST_FORMAT:
        cfg = cfg["config"]
    return validate(cfg)


def validate(cfg):
    try:
        jsonschema.validate(cfg, SCHEMA)
        for pr in cfg.get("probes", []):
            body = {k: v for k, v in pr.items() if k != "type"}
            jsonschema.validate(body, PROBES[pr["type"]])
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("probes", [])
    cfg.setdefault("output_dir", "parlab-out")
    cfg.setdefault("seed", 0)
    cfg.setdefault("write_field", True)
    pb = cfg["problem"]
    pb.setdefault("eps", None)
    pb.setdefault("cfl_safety", 0.5)
    pb.setdefault("half_width", 1.0)
    data = pb["data"]
    if "kind" in data and ("initial" in data or "boundary" in data or "source" in data):
        raise ConfigError("data takes either a manufactured kind or expressions, not both")
    if "kind" not in data and "initial" not in data:
        raise ConfigError("data needs a manufactured kind or an initial expression")
    if "kind" in data and data["kind"] not in analytic.KINDS:
        raise ConfigError(f"unknown manufactured kind {data['kind']!r}")
    for pr in cfg["probes"]:
        if pr["type"] == "convergence" and "kind" not in pr and "kind" not in data:
            raise ConfigError("convergence probe needs a manufactured kind")
    try:
        build_problem(cfg)
    except (ValueError, ParlabError) as exc:
        raise ConfigError(f"invalid problem: {exc}") from None
    return cfg


def _expr(v, n):
    return Expr(str(v), n)


def build_problem(cfg):
    """``(ProblemSpec, data description)`` from the ``problem`` block."""
    pb = cfg["problem"]
    n = pb["n"]
    grid = GridSpec(n, pb["h"], pb["dt"], pb["t_depth"], half_width=pb["half_width"])
    eps = pb["h"] if pb["eps"] is None else pb["eps"]
    eq = EquationParams(pb["gamma"], pb["p"], n, eps=eps)
    data = pb["data"]
    if "kind" in data:
        u, f = manufactured(data["kind"], eq, q=data.get("slope"), K=data.get("K", 1.0))
        t0 = -grid.t_depth
        initial = lambda x: u(x, t0)  # noqa: E731
        boundary, src, src_text = u, f, f"manufactured:{data['kind']}"
    else:
        ini = _expr(data["initial"], n)
        initial = lambda x: ini(x, -grid.t_depth)  # noqa: E731
        boundary = _expr(data["boundary"], n) if "boundary" in data else ini
        src = _expr(data["source"], n) if "source" in data else None
        src_text = None if src is None else src.text
    if "fnorm" in data:
        fnorm = float(data["fnorm"])
    elif src is None:
        fnorm = 0.0
    else:
        x = grid.coords()
        fnorm = max(float(np.max(np.abs(np.broadcast_to(src(x, t), grid.shape))))
                    for t in grid.times())
    if "q" in pb:
        params = DeviationParams(eq, pb["q"], fbar=src, fbar_norm=fnorm, fbar_expr=src_text)
    else:
        params = eq.with_(source=src, fnorm=fnorm, source_expr=src_text)
    return ProblemSpec(params, initial, boundary, grid, pb["cfl_safety"])


# -- probes -------------------------------------------------------------------

def _workers():
    try:
        return max(1, int(os.environ.get("PARLAB_THREADS", "1")))
    except ValueError:
        return 1


def _probe_flatness(fld, spec, pr, cfg):
    fc = FlatnessConfig(**{k: pr[k] for k in ("rho", "delta", "C2", "C3", "eps0", "kmax") if k in pr})
    rep = probe.flatness_iteration(fld, fc, spec.params.gamma)
    rows = [[lv.k, lv.r, lv.lam, *lv.l, lv.osc, int(lv.slope_ok), int(lv.osc_ok)] for lv in rep.levels]
    head = ["k", "r", "lam"] + [f"l{i + 1}" for i in range(fld.spec.n)] + ["osc", "slope_ok", "osc_ok"]
    return rep, {"levels": (head, rows)}


def _probe_seminorms(fld, spec, pr, cfg):
    cyl = probe.origin_cylinder(fld, pr.get("radius", 0.5), pr.get("lam", 1.0), spec.params.gamma)
    rep = probe.seminorms(fld, cyl, tuple(pr.get("alphas", [0.5])),
                          pr.get("max_pairs", probe.MAX_PAIRS), cfg["seed"])
    if "min_time_exponent" in pr:
        ok = np.isfinite(rep.time_exponent) and rep.time_exponent >= pr["min_time_exponent"]
        ok = ok and rep.time_r2 >= pr.get("min_r2", 0.95)
        rep.passed = bool(rep.passed and ok)
    return rep, {}


def _probe_certify(fld, spec, pr, cfg):
    sub = restrict(fld, pr.get("stride", 1), pr.get("tstride", 1))
    mode = pr["mode"]
    kw = {k: pr[k] for k in ("beta", "nu", "kappa0", "s1") if k in pr}
    if "L2" in pr:
        L2 = pr["L2"]
        arg = None
    else:
        L2, _, arg = probe.calibrate_L2(sub, mode, spec.params.source_norm, spec.params.gamma,
                                        pr.get("safety", 1.25), **kw)
    x0 = pr.get("x0", arg[0].tolist() if arg else [0.0] * sub.spec.n)
    y0 = pr.get("y0", arg[1].tolist() if arg else [0.0] * sub.spec.n)
    t0 = pr.get("t0", arg[2] if arg else sub.t_final)
    L1 = pr["L1"] if "L1" in pr else probe.localization_L1(sub, np.array(x0), np.array(y0), t0, mode)
    rep = probe.doubling_certificate(sub, mode, L1, L2, x0, y0, t0, **kw)
    return rep, {}


def _probe_sweep(fld, spec, pr, cfg):
    rep = probe.q_sweep(spec, pr["q"], pr.get("gamma"), pr.get("p"), pr.get("radius", 0.5),
                        workers=_workers())
    head = ["q_norm"] + [f"q{i + 1}" for i in range(spec.grid.n)] + ["lip_w", "lip_u", "error"]
    rows = [[r.q_norm, *r.q, r.lip_w, r.lip_u, r.error or ""] for r in rep.rows]
    return rep, {"table": (head, rows)}


def _probe_convergence(fld, spec, pr, cfg):
    pb = cfg["problem"]
    kind = pr.get("kind", pb["data"].get("kind"))
    params = EquationParams(pb["gamma"], pb["p"], pb["n"], eps=pb["h"])
    h = pb["h"]
    rep = probe.convergence_study(kind, params, pr.get("hs", [h, h / 2, h / 4]),
                                  pr.get("t_depth", pb["dt"]), pr.get("min_order", 1.5),
                                  pb["cfl_safety"])
    rows = [[h, e] for h, e in zip(rep.hs, rep.errors)]
    return rep, {"table": (["h", "error"], rows)}


def _probe_barrier(fld, spec, pr, cfg):
    p = spec.params
    t0 = pr.get("t0", fld.t_start)
    eta = pr.get("eta", 0.5)
    rep = probe.barrier_domination(fld, p.source_norm, p.gamma, p.p, t0, eta)
    b = analytic.BarrierSpec(t0, eta, 0.0, 0.0, fld.sup_norm(), p.source_norm, p.gamma, p.p, p.n)
    rep.min_residual = probe.barrier_residual(b, fld.spec.h)
    rep.passed = bool(rep.passed and rep.min_residual >= -1e-8)
    return rep, {}


RUNNERS = {"flatness": _probe_flatness, "seminorms": _probe_seminorms,
           "certify": _probe_certify, "sweep-q": _probe_sweep,
           "convergence": _probe_convergence, "barrier": _probe_barrier}


# -- output -----------------------------------------------------------------

def _dump_json(obj, path):
    Path(path).write_text(json.dumps(probe._jsonable(obj), indent=2, sort_keys=True) + "\n")


def _dump_csv(head, rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(head)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def execute(cfg, out=None):
    """Run a validated config; returns the exit status."""
    out = out or sys.stdout
    spec = build_problem(cfg)
    outdir = Path(cfg["output_dir"])
    try:
        fld = solve(spec)
    except ParlabError as exc:
        raise ComputeError("solve", exc) from exc
    outdir.mkdir(parents=True, exist_ok=True)
    hist = fld.history
    _dump_csv(["step", "t", "dt", "margin"],
              [[i, t, d, m] for i, (t, d, m) in enumerate(zip(hist.times, hist.dts, hist.margins))],
              outdir / "dt_history.csv")
    if cfg["write_field"]:
        dump_field(fld, outdir / "field.csv", params=spec.params)
    summary = []
    for i, pr in enumerate(cfg["probes"]):
        name = f"{i:02d}_{pr['type']}"
        try:
            rep, tables = RUNNERS[pr["type"]](fld, spec, pr, cfg)
        except (ParlabError, ValueError) as exc:
            raise ComputeError(f"probe {name}", exc) from exc
        _dump_json(rep.to_dict(), outdir / f"{name}.json")
        for tag, (head, rows) in tables.items():
            _dump_csv(head, rows, outdir / f"{name}_{tag}.csv")
        summary.append({"probe": name, "passed": bool(rep.passed)})
        print(f"{name}: {'pass' if rep.passed else 'FAIL'}", file=out)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "config": cfg,
        "params": spec.params.to_dict(),
        "grid": spec.grid.to_dict(),
        "history": hist.summary(),
        "probes": summary,
    }
    _dump_json(manifest, outdir / "manifest.json")
    return 0 if all(s["passed"] for s in summary) else 1


def run(path, out=None, err=None):
    out, err = out or sys.stdout, err or sys.stderr
    try:
        cfg = load_config(path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return 2
    return _guarded(cfg, out, err)


def _guarded(cfg, out, err):
    try:
        return execute(cfg, out)
    except ComputeError as exc:
        print(f"compute error in {exc.stage}: {exc.cause}", file=err)
        return 3


# -- presets --------------------------------------------------------------------

DEFAULT_PROBLEM = {
    "n": 2, "h": 0.05, "dt": 0.05, "t_depth": 1.0, "gamma": 1.0, "p": 3.0,
    "data": {"initial": "0.3*abs(x1 - 0.1) - 0.2*x2^2"},
}


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _common(sp):
    sp.add_argument("--config", help="base config (YAML or JSON) whose problem block is used")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--seed", type=int, help="seed for deterministic subsampling")
    g = sp.add_argument_group("problem")
    g.add_argument("--n", type=int, choices=(1, 2), help="spatial dimension")
    g.add_argument("--h", type=float, help="spatial spacing")
    g.add_argument("--dt", type=float, help="spacing of stored time slices")
    g.add_argument("--t-depth", type=float, help="backward time extent")
    g.add_argument("--gamma", type=float, help="degeneracy exponent, > -1")
    g.add_argument("--p", type=float, help="p > 1")
    g.add_argument("--eps", type=float, help="gradient regularization (default h)")
    g.add_argument("--cfl", type=float, help="cfl safety factor in (0, 1]")
    g.add_argument("--kind", help="manufactured data kind: " + ", ".join(analytic.KINDS))
    g.add_argument("--initial", help="initial data expression in x1, x2, t, r")
    g.add_argument("--boundary", help="boundary data expression (default: initial)")
    g.add_argument("--source", help="source expression")
    g.add_argument("--slope", type=_floats, help="plane slope for manufactured kinds, e.g. 1,0")


def _problem_from_args(args):
    if args.config:
        try:
            base = yaml.safe_load(Path(args.config).read_text())
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot load {args.config}: {exc}") from None
        if isinstance(base, dict) and base.get("format") == MANIFEST_FORMAT:
            base = base["config"]
        if not isinstance(base, dict) or "problem" not in base:
            raise ConfigError("base config has no problem block")
        pb = copy.deepcopy(base["problem"])
    else:
        pb = copy.deepcopy(DEFAULT_PROBLEM)
    for key, attr in (("n", "n"), ("h", "h"), ("dt", "dt"), ("t_depth", "t_depth"),
                      ("gamma", "gamma"), ("p", "p"), ("eps", "eps"), ("cfl_safety", "cfl")):
        v = getattr(args, attr)
        if v is not None:
            pb[key] = v
    data = {}
    if args.kind:
        data["kind"] = args.kind
        if args.slope:
            data["slope"] = args.slope
    for key in ("initial", "boundary", "source"):
        if getattr(args, key):
            data[key] = getattr(args, key)
    if data:
        pb["data"] = data
    return pb


def _preset(args, probes):
    pb = _problem_from_args(args)
    cfg = {"problem": pb, "probes": probes}
    if args.out:
        cfg["output_dir"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    return validate(cfg)


def _drop_none(d):
    return {k: v for k, v in d.items() if v is not None}


def build_parser():
    ap = argparse.ArgumentParser(prog="parlab", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("run", help="run a config file (or a manifest)")
    sp.add_argument("config", help="YAML or JSON config")

    sp = sub.add_parser("solve", help="solve only and write the field and manifest")
    _common(sp)

    sp = sub.add_parser("probe", help="seminorms of the solved field")
    _common(sp)
    sp.add_argument("--radius", type=float, help="radius of the probed cylinder (default 0.5)")
    sp.add_argument("--alphas", type=_floats, help="Holder exponents, e.g. 0.25,0.5")

    sp = sub.add_parser("flatness", help="flatness iteration at the origin")
    _common(sp)
    sp.add_argument("--rho", type=float, help="radius ratio rho")
    sp.add_argument("--delta", type=float, help="scale decay delta")
    sp.add_argument("--c2", type=float, help="slope cap constant C2")
    sp.add_argument("--c3", type=float, help="slope increment constant C3")
    sp.add_argument("--kmax", type=int, help="last level")

    sp = sub.add_parser("certify", help="doubling-of-variables certificate")
    _common(sp)
    sp.add_argument("--mode", choices=("holder", "lipschitz"), required=True, help="modulus type")
    sp.add_argument("--beta", type=float, help="Holder exponent of phi(s) = s^beta")
    sp.add_argument("--nu", type=float, help="exponent of phi(s) = s - kappa0 s^nu")
    sp.add_argument("--kappa0", type=float, help="coefficient kappa0")
    sp.add_argument("--s1", type=float, help="clipping point of phi (default (1/(4 nu kappa0))^(1/(nu-1)))")
    sp.add_argument("--L1", type=float, help="localization constant (default 140 osc / d^2)")
    sp.add_argument("--L2", type=float, help="modulus constant (default: calibrated)")
    sp.add_argument("--safety", type=float, help="inflation of the calibrated L2 (default 1.25)")
    sp.add_argument("--stride", type=int, help="spatial subsampling onto the probe grid")
    sp.add_argument("--tstride", type=int, help="time subsampling onto the probe grid")

    sp = sub.add_parser("sweep-q", help="Lipschitz constant of w = u - q.x across slopes")
    _common(sp)
    sp.add_argument("--q", type=_floats, required=True, help="slope magnitudes along e1, e.g. 4,8,16,32")
    sp.add_argument("--radius", type=float, help="radius of the probed cylinder (default 0.5)")

    sp = sub.add_parser("convergence", help="manufactured-solution convergence order")
    _common(sp)
    sp.add_argument("--hs", type=_floats, help="spacings, e.g. 0.04,0.02,0.01")
    sp.add_argument("--min-order", type=float, help="required fitted order (default 1.5)")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "run":
        return run(args.config)
    try:
        if args.cmd == "solve":
            cfg = _preset(args, [])
        elif args.cmd == "probe":
            cfg = _preset(args, [_drop_none({"type": "seminorms", "radius": args.radius,
                                             "alphas": args.alphas})])
        elif args.cmd == "flatness":
            cfg = _preset(args, [_drop_none({"type": "flatness", "rho": args.rho, "delta": args.delta,
                                             "C2": args.c2, "C3": args.c3, "kmax": args.kmax})])
        elif args.cmd == "certify":
            cfg = _preset(args, [_drop_none({
                "type": "certify", "mode": args.mode, "beta": args.beta, "nu": args.nu,
                "kappa0": args.kappa0, "s1": args.s1, "L1": args.L1, "L2": args.L2,
                "safety": args.safety, "stride": args.stride, "tstride": args.tstride})])
        elif args.cmd == "sweep-q":
            cfg = _preset(args, [_drop_none({"type": "sweep-q", "q": args.q, "radius": args.radius})])
        else:
            cfg = _preset(args, [_drop_none({"type": "convergence", "hs": args.hs,
                                             "min_order": args.min_order})])
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    return _guarded(cfg, sys.stdout, sys.stderr)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
