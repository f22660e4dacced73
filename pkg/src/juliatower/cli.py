"""Command-line front end.

Every run is driven by a mapping of settings: an optional YAML config file
overlaid by command-line flags.  Outputs are CSV files with ``#`` header
lines or JSON reports; both are deterministic for a fixed config and seed.

Exit status: 0 on success, 2 on invalid input, 3 on numerical failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import scipy
import yaml

from . import __version__
from .errors import JuliaTowerError, NumericalFailure, ValidationError
from .family import lambda_hyperbolic_check, solve_critical_relation, spec_from_config
from .motion import build_preimage_tree, holder_estimate, transport_tree
from .pressure import (base_independence, bowen_dimension, default_base, default_depth,
                       joint_pressure, pressure_estimate)
from .tower import build_tower, kappa_bound, validate_chi_star
from .transfer import assemble_operator, check_gap_condition, leading_eigendata, pressure_from_eta
from .wpmetric import metric_field, wp_distance

COMMANDS = ("dimension", "pressure", "joint-pressure", "tower-spectrum", "metric-field",
            "distance", "diagnostics")

DEFAULTS = {
    "family": {"name": "quadratic"},
    "lambda": None,
    "t": [1.0],
    "t2": 0.0,
    "depth": None,
    "kmax": 18,
    "chi_star": None,
    "mesh": 256,
    "kappa": 0.5,
    "grid": [-0.04, 0.04, -0.04, 0.04, 9, 9],
    "h": 1e-3,
    "seed": 0,
    "threads": 1,
    "out": ".",
}


# -- parsing ------------------------------------------------------------------

def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _complex_list(value) -> list:
    """``"re,im;re,im"`` or nested lists ``[[re, im], ...]``/numbers."""
    if value is None:
        return None
    if isinstance(value, str):
        out = []
        for part in value.split(";"):
            nums = _floats(part)
            if len(nums) not in (1, 2):
                raise ValidationError(f"bad complex value {part!r}")
            out.append(complex(nums[0], nums[1] if len(nums) == 2 else 0.0))
        return out
    if isinstance(value, (int, float)):
        return [complex(value)]
    out = []
    for v in value:
        if isinstance(v, (list, tuple)):
            out.append(complex(v[0], v[1] if len(v) > 1 else 0.0))
        else:
            out.append(complex(v))
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="juliatower",
                                description="Dimension, pressure, tower spectra and metric fields "
                                            "for polynomial Misiurewicz families.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="YAML config; flags override its entries")
    p.add_argument("--out", help="output directory")
    p.add_argument("--threads", type=int, help="worker cap (runs are single-threaded)")
    p.add_argument("--seed", type=int, help="seed for probe randomness")
    p.add_argument("--family", help="builtin family name")
    p.add_argument("--lambda", dest="lambda_", help='parameter as "re,im;re,im"')
    p.add_argument("--lambda1", help="first transported parameter (joint pressure)")
    p.add_argument("--lambda2", help="second transported parameter (joint pressure)")
    p.add_argument("--t", help="comma-separated t values")
    p.add_argument("--t2", type=float, help="second exponent")
    p.add_argument("--depth", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--chi-star", dest="chi_star", type=float)
    p.add_argument("--mesh", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--h", type=float, help="finite-difference step")
    p.add_argument("--grid", help='"re0,re1,im0,im1,nx,ny" offsets around lambda')
    p.add_argument("--from", dest="from_", help='grid node "i,j"')
    p.add_argument("--to", help='grid node "i,j"')
    return p


def load_config(args) -> dict:
    cfg = json.loads(json.dumps(DEFAULTS))
    if args.config is not None:
        try:
            text = args.config.read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read config: {exc}") from exc
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ValidationError(f"config is not valid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ValidationError("config must be a mapping")
        cfg.update(data)
    over = {
        "out": args.out, "threads": args.threads, "seed": args.seed, "lambda": args.lambda_,
        "lambda1": args.lambda1, "lambda2": args.lambda2, "t2": args.t2, "depth": args.depth,
        "kmax": args.kmax, "chi_star": args.chi_star, "mesh": args.mesh, "kappa": args.kappa,
        "h": args.h, "from": args.from_, "to": args.to,
    }
    for k, v in over.items():
        if v is not None:
            cfg[k] = v
    if args.family is not None:
        cfg["family"] = {**(cfg.get("family") or {}), "name": args.family}
    if args.t is not None:
        cfg["t"] = _floats(args.t)
    if args.grid is not None:
        cfg["grid"] = _floats(args.grid)
    cfg["command"] = args.command
    return validate(cfg)


def validate(cfg: dict) -> dict:
    if isinstance(cfg["t"], (int, float)):
        cfg["t"] = [float(cfg["t"])]
    if cfg["lambda"] is None:
        raise ValidationError("a parameter (--lambda or config 'lambda') is required")
    cfg["lambda"] = _complex_list(cfg["lambda"])
    for key in ("lambda1", "lambda2"):
        if cfg.get(key) is not None:
            cfg[key] = _complex_list(cfg[key])
    if cfg["depth"] is not None and cfg["depth"] < 1:
        raise ValidationError("depth must be >= 1")
    if cfg["kmax"] < 2:
        raise ValidationError("kmax must be >= 2")
    if cfg["mesh"] < 4:
        raise ValidationError("mesh must be >= 4")
    if not 0 < cfg["kappa"] <= 1:
        raise ValidationError("kappa must lie in (0, 1]")
    if cfg["h"] <= 0:
        raise ValidationError("h must be positive")
    if cfg["threads"] < 1:
        raise ValidationError("threads must be >= 1")
    g = cfg["grid"]
    if len(g) != 6 or int(g[4]) < 1 or int(g[5]) < 1:
        raise ValidationError("grid must be re0,re1,im0,im1,nx,ny with nx, ny >= 1")
    return cfg


# -- output -----------------------------------------------------------------

def _echo(cfg: dict) -> dict:
    def enc(v):
        if isinstance(v, complex):
            return [v.real, v.imag]
        if isinstance(v, list):
            return [enc(x) for x in v]
        if isinstance(v, dict):
            return {k: enc(x) for k, x in v.items()}
        return v
    return {k: enc(v) for k, v in cfg.items() if k not in ("out", "threads")}


def _header(cfg: dict, measured: dict) -> list:
    lines = [f"juliatower {__version__} numpy {np.__version__} scipy {scipy.__version__}",
             f"seed {cfg['seed']}",
             "config " + json.dumps(_echo(cfg), sort_keys=True)]
    for k in sorted(measured):
        lines.append(f"{k} {measured[k]!r}")
    return lines


def write_csv(path: Path, cfg: dict, measured: dict, columns: list, rows: list):
    with open(path, "w") as fh:
        for line in _header(cfg, measured):
            fh.write(f"# {line}\n")
        fh.write(",".join(columns) + "\n")
        for r in rows:
            fh.write(",".join(repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)
                              for x in r) + "\n")


def write_json(path: Path, cfg: dict, measured: dict, report: dict):
    body = {"provenance": {"header": _header(cfg, {}), "measured": measured}, **report}
    with open(path, "w") as fh:
        json.dump(body, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _lam_cols(lam, prefix="lambda"):
    if len(lam) == 1:
        return [f"{prefix}_re", f"{prefix}_im"]
    return [c for i in range(len(lam)) for c in (f"{prefix}{i}_re", f"{prefix}{i}_im")]


def _lam_vals(lam):
    return [v for z in lam for v in (z.real, z.imag)]


def _pair(z: complex) -> list:
    return [z.real, z.imag]


# -- commands ---------------------------------------------------------------

def _solved(cfg):
    spec = spec_from_config(cfg["family"])
    return spec, solve_critical_relation(spec, cfg["lambda"])


def cmd_dimension(cfg, out: Path) -> Path:
    spec = spec_from_config(cfg["family"])
    f = spec.poly(cfg["lambda"])
    res = bowen_dimension(f, depth=cfg["depth"])
    path = out / "dimension.csv"
    write_csv(path, cfg, {"depth": res.depth},
              _lam_cols(cfg["lambda"]) + ["delta", "residual", "uncertainty"],
              [_lam_vals(cfg["lambda"]) + [res.delta, res.residual, res.uncertainty]])
    return path


def cmd_pressure(cfg, out: Path) -> Path:
    spec = spec_from_config(cfg["family"])
    f = spec.poly(cfg["lambda"])
    depth = default_depth(f.degree) if cfg["depth"] is None else cfg["depth"]
    tree = build_preimage_tree(f, default_base(f), depth)
    rows = []
    for t in cfg["t"]:
        est = pressure_estimate(f, t, tree=tree)
        rows.append(_lam_vals(cfg["lambda"]) + [t, est.value, est.uncertainty])
    path = out / "pressure.csv"
    write_csv(path, cfg, {"depth": depth}, _lam_cols(cfg["lambda"]) + ["t", "pressure", "uncertainty"],
              rows)
    return path


def cmd_joint_pressure(cfg, out: Path) -> Path:
    spec = spec_from_config(cfg["family"])
    lam0 = cfg["lambda"]
    lam1 = cfg.get("lambda1") or lam0
    lam2 = cfg.get("lambda2") or lam0
    f0 = spec.poly(lam0)
    depth = default_depth(f0.degree) if cfg["depth"] is None else cfg["depth"]
    tree = build_preimage_tree(f0, default_base(f0), depth)
    m1 = transport_tree(spec, tree, lam0, lam1)
    m2 = transport_tree(spec, tree, lam0, lam2)
    t1 = cfg["t"][0]
    est = joint_pressure(m1, m2, t1, cfg["t2"])
    report = {"t1": t1, "t2": cfg["t2"], "lambda1": [_pair(z) for z in lam1],
              "lambda2": [_pair(z) for z in lam2], **est.to_dict()}
    path = out / "joint_pressure.json"
    write_json(path, cfg, {"depth": depth}, report)
    return path


def cmd_tower_spectrum(cfg, out: Path) -> Path:
    spec, param = _solved(cfg)
    if cfg["chi_star"] is not None:
        validate_chi_star(cfg["chi_star"], param.chi_hat)
    model = build_tower(param, cfg["chi_star"], cfg["kmax"])
    t1, t2 = cfg["t"][0], cfg["t2"]
    op = assemble_operator(model, t1, t2, mesh_density=cfg["mesh"], kappa=cfg["kappa"])
    ed = leading_eigendata(op)
    P = pressure_from_eta(ed)
    lam = [_pair(complex(z)) for z in param.lam]
    report = {"t1": t1, "t2": t2, "lambda1": lam, "lambda2": lam, "eta": ed.eta, "gap": ed.gap,
              "pressure": P, "gap_condition": check_gap_condition(model.chi_hat, t1, t2, P),
              "mesh_density": cfg["mesh"], "K_max": model.K_max,
              "tail_bound": model.tail_bound(t1 + t2), "power_iters": ed.power_iters}
    (out / "tower_geometry.csv").write_text(model.geometry_csv())
    path = out / "tower_spectrum.json"
    write_json(path, cfg, {"chi_hat": model.chi_hat, "chi_star": model.chi_star,
                           "kappa": cfg["kappa"]}, report)
    return path


def _grid(cfg):
    spec, param = _solved(cfg)
    g = cfg["grid"]
    grid = metric_field(spec, param, g[:4], (int(g[4]), int(g[5])), cfg["h"], cfg["depth"])
    return spec, param, grid


def cmd_metric_field(cfg, out: Path) -> Path:
    _, param, grid = _grid(cfg)
    path = out / "metric_field.csv"
    write_csv(path, cfg, {"chi_hat": param.chi_hat},
              ["offset_re", "offset_im", "h_xx", "h_xy", "h_yx", "h_yy", "eig_min", "eig_max"],
              grid.to_csv_rows())
    return path


def _node(text, default):
    if text is None:
        return default
    vals = [int(v) for v in str(text).split(",")]
    if len(vals) != 2:
        raise ValidationError(f"grid node must be 'i,j', got {text!r}")
    return tuple(vals)


def cmd_distance(cfg, out: Path) -> Path:
    _, param, grid = _grid(cfg)
    nx, ny = grid.shape
    a = _node(cfg.get("from"), (0, 0))
    b = _node(cfg.get("to"), (nx - 1, ny - 1))
    res = wp_distance(grid, a, b)
    path = out / "distance.json"
    write_json(path, cfg, {"chi_hat": param.chi_hat},
               {"from": list(a), "to": list(b), "distance": res["distance"], "path": res["path"]})
    return path


def cmd_diagnostics(cfg, out: Path) -> Path:
    spec, param = _solved(cfg)
    f = param.poly
    report = {"param": param.to_dict(), "chi_hat": param.chi_hat,
              "hyperbolic": lambda_hyperbolic_check(param),
              "base_independence": base_independence(f, cfg["t"][0], cfg["depth"])}
    # Hoelder exponent of the motion to a nearby parameter in the first free coordinate
    lam1 = np.asarray(param.lam, dtype=complex).copy()
    lam1[spec.free[0]] += cfg["h"] * 10
    try:
        p1 = solve_critical_relation(spec, lam1)
        tree = build_preimage_tree(f, default_base(f), min(default_depth(f.degree), 10))
        gamma = holder_estimate(transport_tree(spec, tree, param.lam, p1.lam))
        chi_star = math.sqrt(math.sqrt(param.chi_hat)) if cfg["chi_star"] is None else cfg["chi_star"]
        report["gamma"] = gamma
        report["kappa_bound"] = kappa_bound(gamma, chi_star, param.chi_hat)
    except JuliaTowerError as exc:
        report["gamma"] = None
        report["gamma_error"] = f"{type(exc).__name__}: {exc}"
    path = out / "diagnostics.json"
    write_json(path, cfg, {"chi_hat": param.chi_hat}, report)
    return path


HANDLERS = {
    "dimension": cmd_dimension, "pressure": cmd_pressure, "joint-pressure": cmd_joint_pressure,
    "tower-spectrum": cmd_tower_spectrum, "metric-field": cmd_metric_field,
    "distance": cmd_distance, "diagnostics": cmd_diagnostics,
}


def execute(cfg: dict) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return HANDLERS[cfg["command"]](cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        with np.errstate(all="ignore"):
            path = execute(cfg)
    except ValidationError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (NumericalFailure, JuliaTowerError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
