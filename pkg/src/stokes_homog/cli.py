"""Command-line entry point: ``stokes-homog <command> --config PATH``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fem
from .cell import EffectiveTensor, effective_tensor, solve_cell_problems
from .coeff import check_hypotheses
from .config import ConfigError, RunConfig, load_config
from .expr import EvalError
from .geometry import GeometryError, as_scale, hole_lattice
from .macro import IndefiniteTensorError, solve_macro
from .mesh import MeshingError, PointLocationError, mesh_perforated, mesh_rectangle, mesh_unit_cell, write_mesh
from .micro import extend_into_holes, solve_micro
from .twoscale import StageError, TwoScaleTest, convergence_sweep, surface_limit, surface_pairing, volume_pairing
from .vtk import write_vtk

log = logging.getLogger("stokes_homog")

EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
NUMERICAL_ERRORS = (
    fem.SolverError, fem.SingularSystemError, fem.BoundaryConditionError, MeshingError,
    PointLocationError, GeometryError, IndefiniteTensorError, EvalError, StageError,
    FloatingPointError, ArithmeticError,
)


class HypothesisFailure(RuntimeError):
    pass


def worker_count() -> int:
    """Worker cap from STOKES_HOMOG_THREADS (0 or unset = number of CPUs)."""
    raw = os.environ.get("STOKES_HOMOG_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def _stamp(cfg: RunConfig) -> str:
    return f"stokes_homog {__version__} config-sha256={cfg.digest}"


def _write_json(path: Path, cfg: RunConfig, payload: dict) -> None:
    doc = {"tool": "stokes_homog", "version": __version__, "config_sha256": cfg.digest}
    doc.update(payload)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(args, cfg: RunConfig) -> Path:
    d = Path(args.out if args.out else cfg.output["directory"])
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_check(args, cfg: RunConfig) -> int:
    rep = check_hypotheses(cfg.coeffs, seed=cfg.seed)
    print(rep.summary())
    for w in rep.warnings:
        log.warning(w)
    if not rep.passed:
        raise HypothesisFailure("coefficient hypotheses not satisfied")
    return 0


def cmd_mesh(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    cell = mesh_unit_cell(cfg.cell, cfg.h_cell)
    write_mesh(cell, out / "cell.mesh")
    write_mesh(mesh_rectangle(cfg.domain, cfg.h_macro), out / "macro.mesh")
    for e in cfg.sweep:
        m = mesh_perforated(cfg.domain, cfg.cell, e, float(as_scale(e)) * cfg.h_micro_factor)
        write_mesh(m, out / f"micro_eps_{e:g}.mesh")
        log.info("eps=%g: %d nodes, %d triangles", e, m.n_nodes, m.n_triangles)
    return 0


def _require_hypotheses(cfg: RunConfig) -> None:
    rep = check_hypotheses(cfg.coeffs, seed=cfg.seed)
    for w in rep.warnings:
        log.warning(w)
    if not rep.passed:
        raise HypothesisFailure(rep.summary())


def _tensor(cfg: RunConfig):
    sol = solve_cell_problems(cfg.cell, cfg.coeffs, cfg.h_cell)
    return sol, effective_tensor(sol)


def cmd_cell(args, cfg: RunConfig) -> int:
    _require_hypotheses(cfg)
    out = _out_dir(args, cfg)
    sol, tensor = _tensor(cfg)
    _write_json(out / "effective.json", cfg, tensor.to_dict())
    if cfg.output.get("vtk", True):
        vecs = {f"chi_{i + 1}{k + 1}": sol.chi[i, k] for i in range(2) for k in range(2)}
        write_vtk(out / "cell_correctors.vtk", sol.space, vecs, title=_stamp(cfg))
    print(json.dumps(tensor.to_dict(), sort_keys=True))
    return 0


def cmd_micro(args, cfg: RunConfig) -> int:
    if args.eps is None:
        raise ConfigError("/--eps", "micro requires --eps")
    _require_hypotheses(cfg)
    out = _out_dir(args, cfg)
    e = as_scale(args.eps)
    sol = solve_micro(cfg.domain, cfg.cell, cfg.coeffs, e, float(e) * cfg.h_micro_factor,
                      hole_bc=cfg.hole_condition)
    ext = extend_into_holes(sol)
    diag = dict(sol.diagnostics)
    diag.update(epsilon=float(e), holes=len(sol.lattice.members), fluid_area=sol.fluid_area,
                extension_gradient_constant=ext.gradient_constant())
    _write_json(out / f"micro_eps_{args.eps:g}.json", cfg, {"diagnostics": diag})
    if cfg.output.get("vtk", True):
        write_vtk(out / f"micro_eps_{args.eps:g}.vtk", sol.space, {"velocity": sol.u},
                  {"pressure": sol.p}, title=_stamp(cfg))
    print(json.dumps(diag, sort_keys=True))
    return 0


def cmd_macro(args, cfg: RunConfig) -> int:
    out = _out_dir(args, cfg)
    path = out / "effective.json"
    tensor = None
    if path.exists():
        doc = json.loads(path.read_text())
        if doc.get("config_sha256") == cfg.digest:
            tensor = EffectiveTensor.from_dict(doc)
    if tensor is None:
        _require_hypotheses(cfg)
        _, tensor = _tensor(cfg)
        _write_json(path, cfg, tensor.to_dict())
    sol = solve_macro(tensor, cfg.domain, cfg.h_macro)
    u = fem.field_norms(sol.space, sol.u)
    p = fem.field_norms(sol.space, sol.p)
    summary = {"u0_l2": u.l2, "u0_grad": u.h1_semi, "p0_l2": p.l2, "h": cfg.h_macro}
    _write_json(out / "macro.json", cfg, summary)
    if cfg.output.get("vtk", True):
        write_vtk(out / "macro.vtk", sol.space, {"velocity": sol.u}, {"pressure": sol.p}, title=_stamp(cfg))
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_sweep(args, cfg: RunConfig) -> int:
    _require_hypotheses(cfg)
    out = _out_dir(args, cfg)
    rep = convergence_sweep(cfg.sweep_config(), workers=worker_count())
    text = rep.to_csv(header_comment=_stamp(cfg))
    if cfg.output.get("csv", True):
        (out / "report.csv").write_text(text)
    if cfg.output.get("json", True):
        _write_json(out / "effective.json", cfg, rep.tensor.to_dict())
        _write_json(out / "report.json", cfg, {"rows": rep.rows, "limit": rep.limit})
    if not args.quiet:
        sys.stdout.write(text)
    return 0


def cmd_verify_twoscale(args, cfg: RunConfig) -> int:
    """Pairing tables for the built-in analytic cases."""
    out = _out_dir(args, cfg)
    one = TwoScaleTest.parse("1")
    cy = TwoScaleTest.parse("cos(2*pi*y1)")
    rows = []
    for e in cfg.sweep:
        ef = float(as_scale(e))
        m = mesh_rectangle(cfg.domain, ef / 8)
        osc = lambda x, ef=ef: np.cos(2 * np.pi * x[..., 0] / ef)
        pm = mesh_perforated(cfg.domain, cfg.cell, e, ef * cfg.h_micro_factor) if cfg.cell.has_obstacle else None
        unit = lambda x: np.ones(x.shape[:-1])
        rows.append({
            "epsilon": ef,
            "osc_vs_1": volume_pairing(osc, one, e, m),
            "osc_vs_cos_y1": volume_pairing(osc, cy, e, m),
            "surface_measure": surface_pairing(unit, one, e, pm) if pm is not None else 0.0,
            "surface_exact": float(2 * len(hole_lattice(cfg.domain, cfg.cell, e).members)
                                   * ef * ef * cfg.cell.perimeter / 2) if pm is not None else 0.0,
        })
    mc = mesh_rectangle(cfg.domain, cfg.h_macro)
    limit = {
        "osc_vs_1": 0.0,
        "osc_vs_cos_y1": 0.5 * float(cfg.domain.area),
        "surface_measure": surface_limit(lambda x: np.ones(x.shape[:-1]), one, cfg.cell, mc) if cfg.cell.has_obstacle else 0.0,
    }
    cols = ["epsilon", "osc_vs_1", "osc_vs_cos_y1", "surface_measure", "surface_exact"]
    lines = [f"# {_stamp(cfg)}", ",".join(cols)]
    lines += [",".join(repr(float(r[c])) for c in cols) for r in rows]
    lines.append("limit," + ",".join(repr(float(limit[c])) for c in cols[1:4]) + ",")
    text = "\n".join(lines) + "\n"
    (out / "twoscale.csv").write_text(text)
    if not args.quiet:
        sys.stdout.write(text)
    return 0


COMMANDS = {
    "check": cmd_check,
    "mesh": cmd_mesh,
    "cell": cmd_cell,
    "micro": cmd_micro,
    "macro": cmd_macro,
    "sweep": cmd_sweep,
    "verify-twoscale": cmd_verify_twoscale,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stokes-homog", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="JSON configuration file")
        s.add_argument("--out", help="output directory (overrides output.directory)")
        s.add_argument("--quiet", action="store_true", help="only warnings and errors")
        if name == "micro":
            s.add_argument("--eps", type=float, required=True, help="scale parameter")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    stage = args.command
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"[config] invalid configuration at {exc.pointer}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"[config] cannot read configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[stage](args, cfg)
    except ConfigError as exc:
        print(f"[config] invalid configuration at {exc.pointer}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except HypothesisFailure as exc:
        print(f"[{stage}] {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NUMERICAL_ERRORS as exc:
        tag = exc.stage if isinstance(exc, StageError) else stage
        print(f"[{tag}] numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
