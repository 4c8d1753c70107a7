"""
Command line runner: ``dhmlab {check,solve,bubble,conserve}``.

Exit codes:

    0  success
    1  a check failed
    2  configuration, snapshot or input-data error
    3  solver divergence
    4  operation unsupported on this topology
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from dhmlab import __version__
from dhmlab.bubbles import (
    BUBBLE_ENERGY,
    BubbleSpec,
    ConcentrationFamily,
    concentration_family,
    detect_blowup_set,
    elliptic_bubble,
    energy_identity_experiment,
    epsilon_regularity_probe,
    multi_bubble,
    stereographic_bubble,
)
from dhmlab.checks import format_table, run_checks
from dhmlab.clifford import DEFAULT_BASIS, CliffordBasis, use_basis
from dhmlab.conservation import (
    coefficient_matrices,
    divergence_residual,
    frobenius_potential,
    potential_defect,
    wente_residual,
)
from dhmlab.errors import DHMError, SolverDivergence, UnsupportedTopology
from dhmlab.grid import make_grid
from dhmlab.snapshot import read_snapshot, write_snapshot
from dhmlab.solver import (
    SolverParams,
    random_initial_pair,
    relax_coupled,
    relax_harmonic,
    vanishing_probe,
)
from dhmlab.sphere import MapField, SpinorAlongMap, energies, zero_spinor

log = logging.getLogger("dhmlab")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_TOPOLOGY = 0, 1, 2, 3, 4
CONFIG_VERSION = 1

_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}

GRID_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["topology", "Lx", "Ly", "nx", "ny"],
    "properties": {
        "topology": {"enum": ["torus", "rectangle"]},
        "Lx": _POS, "Ly": _POS,
        "nx": {"type": "integer", "minimum": 8},
        "ny": {"type": "integer", "minimum": 8},
        "origin": _POINT,
    },
}

SOLVER_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "step": _POS,
        "cfl": _POS,
        "max_iters": {"type": "integer", "minimum": 0},
        "tol": _POS,
        "psi_norm_target": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "eps0": _POS,
    },
}

SOLVE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "grid", "mode"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "grid": GRID_SCHEMA,
        "n": {"type": "integer", "minimum": 1},
        "mode": {"enum": ["harmonic", "coupled", "vanishing"]},
        "init": {
            "type": "object",
            "additionalProperties": False,
            "required": ["type"],
            "properties": {
                "type": {"enum": ["bubble", "elliptic", "random", "constant", "snapshot"]},
                "center": _POINT,
                "scale": _POS,
                "energy": {"type": "number", "minimum": 0},
                "spinor_share": {"type": "number", "minimum": 0, "maximum": 1},
                "path": {"type": "string"},
            },
        },
        "solver": SOLVER_SCHEMA,
        "vanishing": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "budget": {"type": "number", "minimum": 0},
                "trials": {"type": "integer", "minimum": 1},
                "init": {"enum": ["random", "bubble"]},
                "kmax": {"type": "integer", "minimum": 1},
            },
        },
    },
}

BUBBLE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["version", "grid"],
    "properties": {
        "version": {"const": CONFIG_VERSION},
        "grid": GRID_SCHEMA,
        "family": {
            "type": "object",
            "additionalProperties": False,
            "required": ["lambdas"],
            "properties": {
                "lambdas": {"type": "array", "items": _POS, "minItems": 1},
                "center": _POINT,
                "with_spinor": {"type": "boolean"},
            },
        },
        "bubbles": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["center", "scale"],
                "properties": {"center": _POINT, "scale": _POS},
            },
        },
        "identity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"delta": _POS, "R": _POS},
        },
        "blowup": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"eps0": _POS, "r": _POS, "tail": {"type": "integer", "minimum": 1}},
        },
        "regularity": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "margin": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "eps0": _POS,
                "radius_factor": _POS,
            },
        },
    },
    "oneOf": [{"required": ["family"]}, {"required": ["bubbles"]}],
}


class ConfigError(Exception):
    pass


def _error_path(err: jsonschema.ValidationError) -> str:
    parts = [str(p) for p in err.absolute_path]
    if err.validator == "additionalProperties" and isinstance(err.instance, dict):
        allowed = set(err.schema.get("properties", {}))
        extra = sorted(k for k in err.instance if k not in allowed)
        if extra:
            parts.append(extra[0])
    elif err.validator == "required" and isinstance(err.instance, dict):
        missing = [k for k in err.validator_value if k not in err.instance]
        if missing:
            parts.append(missing[0])
    return ".".join(parts) or "<root>"


def load_config(path, schema: dict) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        err = errors[0]
        raise ConfigError(f"config error at {_error_path(err)}: {err.message}")
    return cfg


def _grid(spec: dict):
    origin = spec.get("origin")
    return make_grid(spec["topology"], spec["Lx"], spec["Ly"], spec["nx"], spec["ny"],
                     origin=None if origin is None else tuple(origin))


def _solver_params(spec: dict, grid, seed_override) -> SolverParams:
    spec = dict(spec)
    if "step" in spec and "cfl" in spec:
        raise ConfigError("config error at solver: give either step or cfl, not both")
    cfl = spec.pop("cfl", 0.2)
    if seed_override is not None:
        spec["seed"] = seed_override
    if "step" not in spec:
        spec["step"] = cfl * grid.h * grid.h
    return SolverParams(**spec)


def _out_dir(arg) -> Path:
    out = Path(arg)
    if not out.exists():
        out.mkdir(parents=True)
        log.info("created output directory %s", out)
    return out


def _emit(payload: dict, as_json: bool, text: str) -> None:
    if as_json:
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(text)


# --- check --------------------------------------------------------------------


FAULTS = ("g2-sign",)


def cmd_check(args) -> int:
    if args.inject_fault == "g2-sign":
        g2 = DEFAULT_BASIS.g2.copy()
        g2[1, 0] = -g2[1, 0]
        ctx = use_basis(CliffordBasis(DEFAULT_BASIS.g1, g2))
    else:
        ctx = use_basis(DEFAULT_BASIS)
    with ctx:
        results = run_checks(seed=0 if args.seed is None else args.seed)
    failed = [r.name for r in results if not r.passed]
    payload = {"passed": not failed, "failed": failed,
               "results": [r.to_dict() for r in results]}
    text = format_table(results)
    if failed:
        text += "\nFAILED: " + ", ".join(failed)
    _emit(payload, args.json, text)
    return EXIT_CHECK if failed else EXIT_OK


# --- solve --------------------------------------------------------------------


def _initial_pair(cfg: dict, grid, params: SolverParams):
    n = cfg.get("n", 2)
    init = cfg.get("init", {"type": "constant"})
    kind = init["type"]
    center = tuple(init.get("center", (0.0, 0.0)))
    if kind == "bubble":
        phi = stereographic_bubble(BubbleSpec(center, init.get("scale", 1.0)), grid, n=n)
        return phi, zero_spinor(phi)
    if kind == "elliptic":
        phi = elliptic_bubble(grid, init.get("scale", 0.35 * min(grid.lx, grid.ly)),
                              center=center, n=n)
        return phi, zero_spinor(phi)
    if kind == "random":
        rng = np.random.default_rng(params.seed)
        return random_initial_pair(grid, n, init.get("energy", 0.05), rng,
                                   spinor_share=init.get("spinor_share", 0.5))
    if kind == "snapshot":
        if "path" not in init:
            raise ConfigError("config error at init.path: required for a snapshot start")
        snap = read_snapshot(init["path"])
        if snap.phi is None:
            raise ConfigError(f"config error at init.path: {init['path']} holds no map")
        phi = MapField(snap.grid, snap.phi)
        psi = zero_spinor(phi) if snap.psi is None else SpinorAlongMap(snap.grid, snap.psi)
        return phi, psi
    values = np.zeros(grid.shape + (n + 1,))
    values[..., -1] = 1.0
    phi = MapField(grid, values)
    return phi, zero_spinor(phi)


def cmd_solve(args) -> int:
    cfg = load_config(args.config, SOLVE_SCHEMA)
    grid = _grid(cfg["grid"])
    params = _solver_params(cfg.get("solver", {}), grid, args.seed)
    out = _out_dir(args.out)
    mode = cfg["mode"]

    if mode == "vanishing":
        v = cfg.get("vanishing", {})
        report = vanishing_probe(v.get("budget", 0.05), v.get("trials", 8), params, grid=grid,
                                 n=cfg.get("n", 2), init=v.get("init", "random"),
                                 kmax=v.get("kmax", 4))
        (out / "vanishing.csv").write_text(report.to_csv())
        (out / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True,
                                                    indent=2) + "\n")
        _emit(report.to_dict(), args.json,
              f"vanishing probe, budget {report.energy_budget}: {report.summary()}")
        return EXIT_OK

    phi0, psi0 = _initial_pair(cfg, grid, params)
    t0 = time.perf_counter()
    if mode == "harmonic":
        phi, trace = relax_harmonic(phi0, params)
        psi = zero_spinor(phi)
    else:
        phi, psi, trace = relax_coupled(phi0, psi0, params)
    elapsed = time.perf_counter() - t0
    trace.write_csv(out / "trace.csv")
    write_snapshot(out / "final.dhms", grid, phi=phi.values,
                   psi=None if mode == "harmonic" else psi.values)
    rep = energies(phi, psi)
    summary = {
        "mode": mode,
        "converged": trace.converged,
        "stop_reason": trace.stop_reason,
        "iterations": trace.iterations,
        "flags": trace.flags,
        "final": trace.final,
        "energies": rep.to_dict(),
        "seconds": elapsed,
        "exploratory": bool(params.psi_norm_target > 0),
    }
    (out / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    f = trace.final
    state = "residual-converged" if trace.converged else f"not converged ({trace.stop_reason})"
    _emit(summary, args.json,
          f"{mode}: {state} after {trace.iterations} iterations; "
          f"e_map={f['e_map']:.6g} e_spinor={f['e_spinor']:.6g} "
          f"residual_map={f['residual_map']:.3e} residual_spinor={f['residual_spinor']:.3e}")
    return EXIT_OK


# --- bubble -------------------------------------------------------------------


def cmd_bubble(args) -> int:
    cfg = load_config(args.config, BUBBLE_SCHEMA)
    grid = _grid(cfg["grid"])
    out = _out_dir(args.out)
    summary: dict = {"grid": grid.to_dict()}

    if "family" in cfg:
        fam_cfg = cfg["family"]
        family = concentration_family(fam_cfg["lambdas"], grid,
                                      with_spinor=fam_cfg.get("with_spinor", False),
                                      center=tuple(fam_cfg.get("center", (0.0, 0.0))))
        ident = cfg.get("identity", {})
        table = energy_identity_experiment(family, ident.get("delta", 0.5), ident.get("R", 10.0))
        table.write_csv(out / "identity.csv")
        summary["identity"] = {
            "spinor": table.spinor_label,
            "e_disk_over_8pi": [r.e_disk / BUBBLE_ENERGY for r in table.rows],
            "neck_empty": [r.neck_empty for r in table.rows],
        }
    else:
        specs = [BubbleSpec(tuple(b["center"]), b["scale"]) for b in cfg["bubbles"]]
        phi = multi_bubble(specs, grid)
        family = ConcentrationFamily(grid, (0.0, 0.0), [min(s.scale for s in specs)],
                                     [phi], [zero_spinor(phi)])

    bcfg = cfg.get("blowup", {})
    points = detect_blowup_set(family, bcfg.get("eps0", 1.0), bcfg.get("r", 0.25),
                               bcfg.get("tail", 1))
    blow = {"eps0": bcfg.get("eps0", 1.0), "r": bcfg.get("r", 0.25),
            "points": [list(p) for p in points]}
    (out / "blowup.json").write_text(json.dumps(blow, sort_keys=True, indent=2) + "\n")
    summary["blowup"] = blow

    if "regularity" in cfg:
        rcfg = cfg["regularity"]
        reports = []
        for lam, phi, psi in zip(family.lambdas, family.maps, family.spinors):
            disk = None
            if "radius_factor" in rcfg:
                disk = (family.center, rcfg["radius_factor"] * lam)
            rep = epsilon_regularity_probe(phi, psi, rcfg.get("margin", 0.5),
                                           rcfg.get("eps0", 1.0), disk=disk)
            d = {k: (None if isinstance(v, float) and math.isnan(v) else v)
                 for k, v in rep.__dict__.items()}
            reports.append({"lambda": lam, **d})
        (out / "regularity.json").write_text(json.dumps(reports, sort_keys=True, indent=2) + "\n")
        summary["regularity"] = reports

    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    lines = []
    if "identity" in summary:
        ratios = ", ".join(f"{x:.4f}" for x in summary["identity"]["e_disk_over_8pi"])
        lines.append(f"E_disk/8pi: {ratios}")
    lines.append(f"blow-up clusters: {len(points)} "
                 + " ".join(f"({x:.4g}, {y:.4g})" for x, y in points))
    _emit(summary, args.json, "\n".join(lines))
    return EXIT_OK


# --- conserve -----------------------------------------------------------------


def _ratio(a, b):
    return a / b if b > 0 else float("nan")


def cmd_conserve(args) -> int:
    rows = []
    for path in args.snapshots:
        snap = read_snapshot(path)
        if snap.phi is None:
            raise ConfigError(f"snapshot {path} holds no map")
        phi = MapField(snap.grid, snap.phi)
        psi = zero_spinor(phi) if snap.psi is None else SpinorAlongMap(snap.grid, snap.psi)
        coeffs = coefficient_matrices(phi, psi)
        _, div = divergence_residual(coeffs)
        row = {"path": str(path), "nx": snap.grid.nx, "h": snap.grid.h, "divergence": div,
               "antisymmetry": coeffs.antisymmetry_defect()}
        if args.potential:
            if not snap.grid.periodic:
                raise UnsupportedTopology(
                    f"{path}: potential reconstruction needs a torus snapshot, "
                    f"got {snap.grid.topology}"
                )
            pot = frobenius_potential(coeffs)
            row["potential_defect"] = potential_defect(pot, coeffs)
            row["wente"] = wente_residual(phi, pot)
        rows.append(row)

    rows.sort(key=lambda r: r["nx"])
    cols = ["nx", "h", "divergence", "ratio_divergence"]
    if args.potential:
        cols += ["potential_defect", "wente", "ratio_wente"]
    for prev, cur in zip([None] + rows[:-1], rows):
        cur["ratio_divergence"] = float("nan") if prev is None else \
            _ratio(prev["divergence"], cur["divergence"])
        if args.potential:
            cur["ratio_wente"] = float("nan") if prev is None else \
                _ratio(prev["wente"], cur["wente"])

    lines = [",".join(cols)]
    for r in rows:
        lines.append(",".join(str(r[c]) if c == "nx" else repr(float(r[c])) for c in cols))
    csv_text = "\n".join(lines) + "\n"
    if args.out is not None:
        out = _out_dir(args.out)
        (out / "conserve.csv").write_text(csv_text)
    clean = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()}
             for r in rows]
    _emit({"rows": clean}, args.json, csv_text.rstrip("\n"))
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable output")
    common.add_argument("--seed", type=int, default=None, help="override the configured seed")

    parser = argparse.ArgumentParser(prog="dhmlab",
                                     description="Dirac-harmonic map laboratory on flat grids.")
    parser.add_argument("--version", action="version", version=f"dhmlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", parents=[common], help="run the invariant suite")
    p.add_argument("--inject-fault", choices=FAULTS, default=None,
                   help="test hook: corrupt the Clifford basis before checking")
    p.set_defaults(func=cmd_check)

    for name, func, helptext in (("solve", cmd_solve, "relaxation runs and the vanishing probe"),
                                 ("bubble", cmd_bubble, "energy identity and blow-up studies")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=".", help="output directory (created if missing)")
        p.set_defaults(func=func)

    p = sub.add_parser("conserve", parents=[common], help="conservation-law chain on snapshots")
    p.add_argument("snapshots", nargs="+", help="field snapshot files")
    p.add_argument("--potential", action="store_true",
                   help="also reconstruct the potential and the Wente residual (torus only)")
    p.add_argument("--out", default=None, help="directory for conserve.csv")
    p.add_argument("--config", default=None, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_conserve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    try:
        return _dispatch(args)
    finally:
        log.removeHandler(handler)


def _dispatch(args) -> int:
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except SolverDivergence as exc:
        print(f"solver diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except UnsupportedTopology as exc:
        print(f"unsupported topology: {exc}", file=sys.stderr)
        return EXIT_TOPOLOGY
    except (DHMError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
