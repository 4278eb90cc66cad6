"""Command-line driver: verify, converge, flow and info subcommands.

Exit codes: 0 when every requested check passes, 1 on a check failure,
2 on a configuration error.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import os
import sys

import numpy as np

from . import flow as flowmod
from .fields import ConfigurationError, PeriodicGrid
from .identities import REGISTRY, REGISTRY_VERSION, build_structure, convergence_study, run_all
from .structure import EXACT, FD, validate

DEFAULTS = {
    "grid": {"dim": 4, "resolutions": None, "fd_order": None},
    "family": {"name": "family", "eps": 0.1, "generator": None, "axis": 0, "harmonic": 1},
    "backend": FD,
    "identities": {"ids": None, "tol": None, "resolutions": [32, 64, 128]},
    "flow": {"dt": 1e-3, "steps": 10, "drift_tol": 1e-8, "retraction": "off", "cadence": 1,
             "checks": [], "check_resolution": 128, "check_fd_order": 8},
    "output": {"report": None, "csv": None},
}
DEFAULT_RESOLUTION = 64
FLOW_RESOLUTION = 32
FLOW_FD_ORDER = 8
RATIO_TOL = 3.5


class ConfigError(ConfigurationError):
    pass


# configuration -------------------------------------------------------------------

def _load_file(path):
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if path.endswith(".json"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}") from e
    else:
        import yaml
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
            raise ConfigError(f"{path}: {where}{getattr(e, 'problem', e)}") from e
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _merge(base, extra, prefix=""):
    for k, v in extra.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key '{key}'")
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key '{key}' must be a mapping")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def _check_type(cfg):
    def need(cond, key, what):
        if not cond:
            raise ConfigError(f"config key '{key}' must be {what}")

    def is_int(x):
        return isinstance(x, int) and not isinstance(x, bool)

    def is_num(x):
        return isinstance(x, (int, float)) and not isinstance(x, bool)

    g, f, i, fl = cfg["grid"], cfg["family"], cfg["identities"], cfg["flow"]
    if fl["retraction"] is False:  # YAML 1.1 reads a bare off as false
        fl["retraction"] = "off"
    need(is_int(g["dim"]), "grid.dim", "an integer")
    need(g["resolutions"] is None or (isinstance(g["resolutions"], list)
                                      and all(is_int(x) for x in g["resolutions"])),
         "grid.resolutions", "a list of integers")
    need(is_int(g["fd_order"]), "grid.fd_order", "an integer")
    need(f["name"] in ("flat", "family"), "family.name", "'flat' or 'family'")
    need(is_num(f["eps"]), "family.eps", "a number")
    need(is_int(f["axis"]), "family.axis", "an integer")
    need(0 <= f["axis"] < g["dim"], "family.axis", f"an axis below dimension {g['dim']}")
    need(is_int(f["harmonic"]) and f["harmonic"] >= 1, "family.harmonic", "a positive integer")
    need(f["generator"] is None or isinstance(f["generator"], list), "family.generator",
         "null or a square matrix")
    need(cfg["backend"] in (FD, EXACT), "backend", "'fd' or 'exact'")
    need(i["ids"] is None or (isinstance(i["ids"], list)
                              and all(isinstance(x, str) for x in i["ids"])),
         "identities.ids", "a list of identity ids")
    if i["ids"] is not None:
        unknown = sorted(set(i["ids"]) - set(REGISTRY))
        need(not unknown, "identities.ids", f"registered ids (unknown: {', '.join(unknown)})")
    need(i["tol"] is None or is_num(i["tol"]), "identities.tol", "a number")
    need(isinstance(i["resolutions"], list) and all(is_int(x) for x in i["resolutions"]),
         "identities.resolutions", "a list of integers")
    for k in ("dt", "drift_tol"):
        need(is_num(fl[k]), f"flow.{k}", "a number")
    for k in ("steps", "cadence", "check_resolution", "check_fd_order"):
        need(is_int(fl[k]), f"flow.{k}", "an integer")
    need(fl["retraction"] in ("off", "renormalize"), "flow.retraction", "'off' or 'renormalize'")
    need(isinstance(fl["checks"], list) and all(c in flowmod.CHECKS for c in fl["checks"]),
         "flow.checks", f"a list drawn from {', '.join(flowmod.CHECKS)}")


def _csv_list(text, conv, flag):
    try:
        return [conv(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"{flag}: cannot parse {text!r}") from e


def resolve_config(args):
    cfg = copy.deepcopy(DEFAULTS)
    if args.config:
        _merge(cfg, _load_file(args.config))
    overrides = {
        ("family", "name"): args.example,
        ("family", "eps"): args.eps,
        ("family", "axis"): args.axis,
        ("family", "harmonic"): args.harmonic,
        ("grid", "dim"): args.dim,
        ("grid", "fd_order"): args.fd_order,
        ("backend",): args.backend,
        ("output", "report"): args.out,
    }
    if args.generator is not None:
        try:
            overrides[("family", "generator")] = json.loads(args.generator)
        except json.JSONDecodeError as e:
            raise ConfigError(f"--generator: not a JSON matrix: {e.msg}") from e
    if args.grid is not None:
        overrides[("grid", "resolutions")] = _csv_list(args.grid, int, "--grid")
    if getattr(args, "ids", None):
        overrides[("identities", "ids")] = _csv_list(args.ids, str, "--ids")
    if getattr(args, "tol", None) is not None:
        overrides[("identities", "tol")] = args.tol
    if getattr(args, "res", None):
        overrides[("identities", "resolutions")] = _csv_list(args.res, int, "--res")
    if args.command == "flow":
        for key in ("dt", "steps", "drift_tol", "retraction", "cadence", "check_resolution",
                    "check_fd_order"):
            overrides[("flow", key)] = getattr(args, key)
        if args.check:
            overrides[("flow", "checks")] = _csv_list(",".join(args.check), str, "--check")
        overrides[("output", "csv")] = args.csv
    if args.command == "flow":
        # the flow needs the accurate stencil; identity work defaults to fd4
        cfg["grid"]["resolutions"] = cfg["grid"]["resolutions"] or [FLOW_RESOLUTION]
    for path, v in overrides.items():
        if v is None:
            continue
        node = cfg
        for p in path[:-1]:
            node = node[p]
        node[path[-1]] = v
    if cfg["grid"]["resolutions"] is None:
        cfg["grid"]["resolutions"] = [DEFAULT_RESOLUTION]
    if cfg["grid"]["fd_order"] is None:
        cfg["grid"]["fd_order"] = FLOW_FD_ORDER if args.command == "flow" else 4
    _check_type(cfg)
    return cfg


def run_settings(cfg):
    """The config minus output paths, which do not affect results."""
    return {k: v for k, v in cfg.items() if k != "output"}


def config_hash(cfg):
    text = json.dumps(run_settings(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def make_grid(cfg):
    g = cfg["grid"]
    dim, res = g["dim"], g["resolutions"]
    if len(res) == 1:
        # a single resolution refines the profile axis; the family is constant elsewhere
        full = [1] * dim
        full[cfg["family"]["axis"]] = res[0]
        res = full
    if len(res) != dim:
        raise ConfigError(f"grid.resolutions needs 1 or {dim} entries, got {len(res)}")
    return PeriodicGrid(dim, tuple(res), g["fd_order"])


def make_structure(cfg, grid, backend=None):
    f = cfg["family"]
    A = None if f["generator"] is None else np.asarray(f["generator"], dtype=float)
    return build_structure(f["name"], grid, eps=f["eps"], A=A, axis=f["axis"],
                           harmonic=f["harmonic"], backend=backend or cfg["backend"])


# subcommands ------------------------------------------------------------------------

def _grid_info(grid):
    return {"dim": grid.dim, "resolutions": list(grid.resolutions), "fd_order": grid.fd_order}


def _header(cfg, grid, backend):
    return {"config_hash": config_hash(cfg), "registry_version": REGISTRY_VERSION,
            "backend": backend, "grid": _grid_info(grid), "config": run_settings(cfg)}


def cmd_verify(cfg):
    grid = make_grid(cfg)
    s = make_structure(cfg, grid)
    ids = cfg["identities"]["ids"]
    rep = run_all(s, cfg["backend"], selection=ids, tol=cfg["identities"]["tol"],
                  workers=_threads())
    out = _header(cfg, grid, cfg["backend"])
    out.update(rep.as_dict())
    return out, rep.passed


def cmd_converge(cfg):
    if cfg["backend"] != FD:
        raise ConfigError("convergence studies use the fd backend")
    grid = make_grid(cfg)
    f = cfg["family"]
    params = {"example": f["name"], "dim": cfg["grid"]["dim"]}
    if f["name"] == "family":
        params.update(eps=f["eps"], harmonic=f["harmonic"])
        if f["generator"] is not None:
            params["A"] = np.asarray(f["generator"], dtype=float)
    ids = cfg["identities"]["ids"] or sorted(REGISTRY)
    try:
        results = convergence_study(params, ids, cfg["identities"]["resolutions"],
                                    fd_order=cfg["grid"]["fd_order"], axis=f["axis"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    ok = all(r.status in ("converging", "at-machine-precision", "skipped") for r in results)
    out = _header(cfg, grid, FD)
    out.update({"passed": ok, "expected_order": cfg["grid"]["fd_order"] - 1,
                "results": [r.as_dict() for r in results]})
    return out, ok


def cmd_flow(cfg):
    fl = cfg["flow"]
    grid = make_grid(cfg)
    s = make_structure(cfg, grid, FD)
    fc = flowmod.FlowConfig(dt=fl["dt"], steps=fl["steps"], drift_tol=fl["drift_tol"],
                            retraction=fl["retraction"], cadence=fl["cadence"])
    out = _header(cfg, grid, FD)
    ok = True
    try:
        traj = flowmod.run(flowmod.FlowState.from_structure(s), fc)
        out["trajectory"] = {"states": len(traj.states), "t_final": traj.states[-1].t,
                             "final": traj.states[-1].diagnostics}
    except flowmod.StepRejected as e:
        traj = None
        ok = False
        out["trajectory"] = {"rejected": str(e), "drift": e.drift, "location": list(e.location)}
    checks = []
    if fl["checks"]:
        cgrid_res = [1] * grid.dim
        cgrid_res[cfg["family"]["axis"]] = fl["check_resolution"]
        cgrid = PeriodicGrid(grid.dim, tuple(cgrid_res), fl["check_fd_order"])
        fam = {}
        if cfg["family"]["name"] == "family":
            fam = {"axis": cfg["family"]["axis"], "harmonic": cfg["family"]["harmonic"]}
            if cfg["family"]["generator"] is not None:
                fam["A"] = np.asarray(cfg["family"]["generator"], dtype=float)
            eps = cfg["family"]["eps"]
        else:
            eps = 0.0
        for which in fl["checks"]:
            res, ratios = flowmod.evolution_study(cgrid, which, [fl["dt"], fl["dt"] / 2],
                                                  eps=eps, **fam)
            _, _, hfac = flowmod.h_refinement(cgrid, which, fl["dt"] / 2, eps=eps, **fam)
            floor = all(r.max_abs <= 1e-12 for r in res)
            passed = floor or ratios[0] >= RATIO_TOL
            ok = ok and passed
            checks.append({"which": which, "grid": _grid_info(cgrid),
                           "residuals": [r.as_dict() for r in res],
                           "dt_refinement_factor": ratios[0], "h_refinement_factor": hfac,
                           "passed": passed})
    out["checks"] = checks
    out["passed"] = ok
    rows = traj.rows() if traj is not None else []
    return out, ok, rows


def cmd_info(cfg):
    grid = make_grid(cfg)
    s = make_structure(cfg, grid)
    from .curvature import GeometryCache
    G = GeometryCache(s)
    v = validate(s)

    def summary(f):
        a = f.values
        return {"min": float(a.min()), "max": float(a.max()), "mean": float(a.mean())}

    st = flowmod.static_check(G)
    out = _header(cfg, grid, s.backend)
    out.update({"validation": {"residuals": v.residuals, "min_eigenvalue": v.min_eigenvalue,
                               "passed": v.passed},
                "chern_scalar": summary(G.rho), "riemann_scalar": summary(G.scal),
                "tau_norm2": summary(G.tau_norm2), "static_lambda0": st.as_dict(),
                "passed": v.passed})
    return out, v.passed


# plumbing ---------------------------------------------------------------------------

def _threads():
    raw = os.environ.get("AKFLOW_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError as e:
        raise ConfigError(f"AKFLOW_THREADS must be a positive integer, got {raw!r}") from e
    if n < 1:
        raise ConfigError(f"AKFLOW_THREADS must be a positive integer, got {raw!r}")
    return n


def _write(path, text):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


CSV_COLUMNS = ["t", "rho_mean", "tau2_max", "tau2_l2", "j2_drift", "compat_drift", "scalR_mean"]


def dump_csv(rows):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(float(r[k])) for k in CSV_COLUMNS})
    return buf.getvalue()


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML or JSON run configuration")
    common.add_argument("--example", choices=["flat", "family"])
    common.add_argument("--eps", type=float, help="family amplitude")
    common.add_argument("--dim", type=int, help="real dimension (even)")
    common.add_argument("--grid", help="resolution N (profile axis) or N1,...,Nd")
    common.add_argument("--fd-order", type=int, choices=[2, 4, 6, 8])
    common.add_argument("--backend", choices=[FD, EXACT])
    common.add_argument("--axis", type=int, help="profile axis of the family")
    common.add_argument("--harmonic", type=int, help="profile harmonic of the family")
    common.add_argument("--generator", help="sp(2n) generator as a JSON matrix")
    common.add_argument("--out", help="report path (default stdout)")

    p = argparse.ArgumentParser(prog="akflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", parents=[common], help="evaluate identity residuals")
    v.add_argument("--ids", help="comma-separated identity ids")
    v.add_argument("--tol", type=float, help="relative pass tolerance")
    c = sub.add_parser("converge", parents=[common], help="grid-refinement study")
    c.add_argument("--ids", help="comma-separated identity ids")
    c.add_argument("--res", help="comma-separated doubling resolutions")
    f = sub.add_parser("flow", parents=[common], help="integrate the flow and check evolutions")
    f.add_argument("--dt", type=float)
    f.add_argument("--steps", type=int)
    f.add_argument("--check", action="append", help=f"one of {', '.join(flowmod.CHECKS)}")
    f.add_argument("--drift-tol", type=float)
    f.add_argument("--retraction", choices=["off", "renormalize"])
    f.add_argument("--cadence", type=int)
    f.add_argument("--check-resolution", type=int)
    f.add_argument("--check-fd-order", type=int, choices=[2, 4, 6, 8])
    f.add_argument("--csv", help="time-series CSV path")
    sub.add_parser("info", parents=[common], help="structure diagnostics")
    sub.add_parser("list", help="list registered identities")
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "list":
        for i, chk in sorted(REGISTRY.items()):
            sys.stdout.write(f"{i}\t{chk.jet_class}\t{chk.formula}\n")
        return 0
    try:
        cfg = resolve_config(args)
        if args.command == "verify":
            out, ok = cmd_verify(cfg)
        elif args.command == "converge":
            out, ok = cmd_converge(cfg)
        elif args.command == "flow":
            out, ok, rows = cmd_flow(cfg)
            csv_path = cfg["output"]["csv"]
            if csv_path is None and cfg["output"]["report"]:
                csv_path = os.path.splitext(cfg["output"]["report"])[0] + ".csv"
            if csv_path is not None:
                _write(csv_path, dump_csv(rows))
        else:
            out, ok = cmd_info(cfg)
    except ConfigurationError as e:
        sys.stderr.write(f"akflow: configuration error: {e}\n")
        return 2
    _write(cfg["output"]["report"], dump_json(out))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
