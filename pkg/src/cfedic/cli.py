"""Command-line front end.

    cfedic run REF DEF --out DIR [--config cfg.toml] [--element cfe --h 20 ...]
    cfedic synth PRESET --out DIR [--seed 0]
    cfedic metrics SOLUTION_DIR --truth truth.json [--line row]
    cfedic shapes --p 2 --s 2 --a 8 --out curves.csv
    cfedic mesh --zoi 0,0,400,400 --h 20 --out DIR

Failures print a JSON error object on stderr and exit nonzero
(2 io, 3 config, 4 invalid input, 5 solver, 1 anything else).
Set ``CFEDIC_LOG=DEBUG`` (or INFO, WARNING) for progress logging.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .dic import DicConfig, DicError, load_solution, run_dic, save_solution
from .grayscale import load_image, save_image
from .mesh import ZoneOfInterest, build_connectivity, build_mesh, export_mesh_csv
from .metrics import evaluate_solution, markdown_table, measurement_resolution, mei, report_json, spatial_resolution
from .postprocess import compute_strain, export_field, line_cut, pixel_grid, sample_displacement
from .shapes import CfeParams, shape_curves_1d
from .synth import field_from_params, preset, render_pair, write_truth

log = logging.getLogger("cfedic")

CONFIG_SCHEMA = 1
_DIC_KEYS = {f.name for f in dataclasses.fields(DicConfig)}
_OUTPUT_KEYS = {"png", "strain", "step"}
EXIT = {"io": 2, "config": 3, "input": 4, "solver": 5, "internal": 1}


class ConfigError(ValueError):
    pass


class CliError(Exception):
    def __init__(self, kind: str, message: str, **detail):
        super().__init__(message)
        self.kind = kind
        self.detail = detail


# ---------------------------------------------------------------- config


def read_config(path) -> dict:
    """Parse a versioned TOML config; unknown tables or keys are errors."""
    with open(path, "rb") as fh:
        try:
            doc = tomli.load(fh)
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    schema = doc.pop("schema", None)
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"{path}: expected 'schema = {CONFIG_SCHEMA}', got {schema!r}")
    allowed = {"dic": _DIC_KEYS, "zoi": {"x0", "y0", "width", "height"}, "output": _OUTPUT_KEYS}
    for table, body in doc.items():
        if table not in allowed:
            raise ConfigError(f"{path}: unknown table [{table}]")
        if not isinstance(body, dict):
            raise ConfigError(f"{path}: '{table}' must be a table")
        bad = sorted(set(body) - allowed[table])
        if bad:
            raise ConfigError(f"{path}: unknown key(s) in [{table}]: {', '.join(bad)}")
    return doc


def _parse_zoi(text: str) -> ZoneOfInterest:
    try:
        vals = [int(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"--zoi expects four integers x0,y0,width,height, got {text!r}") from None
    if len(vals) != 4:
        raise ConfigError(f"--zoi expects four integers x0,y0,width,height, got {text!r}")
    return ZoneOfInterest(*vals)


_FLAG_TO_KEY = {
    "element": "element",
    "h": "element_size",
    "p": "order",
    "s": "patch_size",
    "a": "dilation",
    "tol": "solver_tol",
    "iters": "max_solver_iters",
    "quad": "quad_points",
    "refine": "refinement_iters",
    "threads": "threads",
    "seed": "seed",
    "grayscale": "grayscale",
}


def merged_config(args) -> tuple[DicConfig, ZoneOfInterest | None, dict]:
    """Defaults < config file < command-line flags."""
    doc = read_config(args.config) if getattr(args, "config", None) else {}
    values = dict(doc.get("dic", {}))
    for flag, key in _FLAG_TO_KEY.items():
        val = getattr(args, flag, None)
        if val is not None:
            values[key] = val
    try:
        config = DicConfig(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    zoi = None
    if getattr(args, "zoi", None):
        zoi = _parse_zoi(args.zoi)
    elif "zoi" in doc:
        try:
            zoi = ZoneOfInterest(**doc["zoi"])
        except TypeError as exc:
            raise ConfigError(f"[zoi] needs x0, y0, width, height: {exc}") from exc
    return config, zoi, dict(doc.get("output", {}))


def default_zoi(shape, h: int, margin: int = 10) -> ZoneOfInterest:
    """Largest centred ZoI that is a multiple of ``h`` and keeps ``margin`` px clear."""
    rows, cols = shape
    w = ((cols - 1 - 2 * margin) // h) * h
    hh = ((rows - 1 - 2 * margin) // h) * h
    if w <= 0 or hh <= 0:
        raise CliError("input", f"image {cols}x{rows} too small for element size {h}")
    return ZoneOfInterest.centered(shape, w, hh)


# ---------------------------------------------------------------- helpers


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_atomic(path, text: str):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _load(path) -> np.ndarray:
    try:
        return load_image(path)
    except FileNotFoundError as exc:
        raise CliError("io", f"no such file: {path}", path=str(path)) from exc
    except OSError as exc:
        raise CliError("io", f"cannot read image {path}: {exc}", path=str(path)) from exc


def _read_truth(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise CliError("io", f"no such file: {path}", path=str(path)) from exc
    except json.JSONDecodeError as exc:
        raise CliError("input", f"truth file {path} is not valid JSON: {exc}") from exc
    if "deformation" not in doc:
        raise CliError("input", f"truth file {path} has no 'deformation' entry")
    return doc


def _error_rows(solution, truth: dict) -> list[dict]:
    ev = evaluate_solution(solution, field_from_params(truth["deformation"]))
    return [
        {
            "method": solution.conn.label,
            "element_size": solution.mesh.element_size,
            "rmse_u": ev["u"].rmse,
            "l2_u": ev["u"].l2_relative,
            "rmse_exx": ev["exx"].rmse,
            "l2_exx": ev["exx"].l2_relative,
            "rmse_v": ev["v"].rmse,
            "l2_v": ev["v"].l2_relative,
        }
    ]


# ---------------------------------------------------------------- commands


def cmd_run(args) -> int:
    config, zoi, output = merged_config(args)
    ref = _load(args.ref)
    deformed = _load(args.deformed)
    truth = _read_truth(args.truth) if args.truth else None
    if zoi is None and truth and "zoi" in truth:
        zoi = ZoneOfInterest(*truth["zoi"])
    if zoi is None:
        zoi = default_zoi(ref.shape, config.element_size)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    solution = run_dic(ref, deformed, zoi, config)
    step = float(output.get("step", args.step))
    pts, shape = pixel_grid(zoi, step)
    written = []
    save_solution(solution, out / "solution.npz")
    written.append(out / "solution.npz")
    disp = sample_displacement(solution, pts, shape)
    written += export_field(disp, "csv", out / "displacement.csv")
    fields = [("displacement", disp)]
    if output.get("strain", True):
        strain = compute_strain(solution, pts, shape)
        written += export_field(strain, "csv", out / "strain.csv")
        fields.append(("strain", strain))
    if output.get("png", not args.no_png):
        for name, fld in fields:
            written += export_field(fld, "png", out / f"{name}.png")

    manifest = {
        "tool": "cfedic",
        "version": __version__,
        "command": "run",
        "config": config.to_dict(),
        "zoi": dataclasses.asdict(zoi),
        "inputs": {str(p): sha256(p) for p in (args.ref, args.deformed)},
        "timings": solution.timings,
        "pcg_iterations": solution.iterations,
        "relative_residual": solution.residual,
    }
    if truth:
        rows = _error_rows(solution, truth)
        manifest["metrics"] = rows[0]
        write_atomic(out / "metrics.md", markdown_table(rows))
        written.append(out / "metrics.md")
    manifest["outputs"] = sorted(str(Path(p).name) for p in written)
    write_atomic(out / "manifest.json", json.dumps(manifest, indent=2))
    print(json.dumps({"status": "ok", "out": str(out), "iterations": solution.iterations}))
    return 0


def cmd_synth(args) -> int:
    try:
        p = preset(args.preset)
    except ValueError as exc:
        raise CliError("input", str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, ref, deformed = render_pair(p, args.seed)
    save_image(out / "ref.png", ref, args.bits)
    save_image(out / "def.png", deformed, args.bits)
    write_truth(out / "truth.json", p, args.seed, {"bits": args.bits, "element_size": p.element_size})
    print(json.dumps({"status": "ok", "out": str(out), "preset": p.name}))
    return 0


def cmd_metrics(args) -> int:
    sol_path = Path(args.solution)
    if sol_path.is_dir():
        sol_path = sol_path / "solution.npz"
    if not sol_path.exists():
        raise CliError("io", f"no such file: {sol_path}", path=str(sol_path))
    solution = load_solution(sol_path)
    truth = _read_truth(args.truth)
    deformation = field_from_params(truth["deformation"])
    report = {"errors": _error_rows(solution, truth)[0]}

    if args.line:
        comp = args.component
        cut = line_cut(lambda q: sample_displacement(solution, q).component(comp), solution.mesh.zoi, args.line, args.offset)
        tu, tv = deformation.displacement(cut.coords[:, 0], cut.coords[:, 1])
        true = tu if comp == "u" else tv
        sr = spatial_resolution(cut.positions, cut.values, true, args.fit_degree)
        report["spatial_resolution"] = dataclasses.asdict(sr)
        if args.noise_floor:
            floor = load_solution(Path(args.noise_floor) / "solution.npz" if Path(args.noise_floor).is_dir() else args.noise_floor)
            ncut = line_cut(
                lambda q: sample_displacement(floor, q).component(comp), floor.mesh.zoi, args.line, args.offset
            )
            mr = measurement_resolution(ncut.values)
            report["measurement_resolution"] = mr
            report["mei"] = mei(sr.position, mr) if sr.found else None

    out = Path(args.out) if args.out else sol_path.parent
    out.mkdir(parents=True, exist_ok=True)
    report_json(out / "metrics.json", report)
    md = markdown_table([report["errors"]])
    if "spatial_resolution" in report:
        sr = report["spatial_resolution"]
        md += f"\nSpatial resolution: {sr['position'] if sr['found'] else sr['message']}\n"
    if "measurement_resolution" in report:
        md += f"Measurement resolution: {report['measurement_resolution']:.4g}\nMEI: {report['mei']}\n"
    write_atomic(out / "metrics.md", md)
    print(json.dumps({"status": "ok", "out": str(out)}))
    return 0


def cmd_shapes(args) -> int:
    if args.element == "q4":
        kind = "q4"
        s = 0
    elif args.element == "cfe":
        try:
            kind = CfeParams(args.p, args.s, args.a)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        s = args.s
    else:
        raise ConfigError("1D shape curves are available for q4 and cfe only")
    xi = np.linspace(-(2 * s + 1), 2 * s + 1, args.samples)
    nodes, vals = shape_curves_1d(kind, xi)
    lines = ["xi," + ",".join(f"N[{n:g}]" for n in nodes)]
    lines += [",".join(repr(float(v)) for v in (x, *row)) for x, row in zip(xi, vals)]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_atomic(out, "\n".join(lines) + "\n")
    print(json.dumps({"status": "ok", "out": str(out), "curves": len(nodes)}))
    return 0


def cmd_mesh(args) -> int:
    config, zoi, _ = merged_config(args)
    if zoi is None:
        raise ConfigError("mesh export needs --zoi or a [zoi] table")
    try:
        conn = build_connectivity(build_mesh(zoi, config.element_size), config.element_kind)
    except ValueError as exc:
        raise CliError("input", str(exc)) from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    export_mesh_csv(conn, out / "nodes.csv", out / "elements.csv")
    print(json.dumps({"status": "ok", "out": str(out), "nodes": conn.n_nodes}))
    return 0


# ---------------------------------------------------------------- parser


def _dic_flags(p):
    g = p.add_argument_group("discretization (override the config file)")
    g.add_argument("--config", help="TOML config file (schema = 1)")
    g.add_argument("--element", choices=["q4", "q8", "cfe"])
    g.add_argument("--h", type=int, help="element size in pixels")
    g.add_argument("--p", type=int, help="C-FE polynomial order")
    g.add_argument("--s", type=int, help="C-FE patch size")
    g.add_argument("--a", type=float, help="C-FE dilation")
    g.add_argument("--tol", type=float, help="PCG relative residual tolerance")
    g.add_argument("--iters", type=int, help="maximum PCG iterations")
    g.add_argument("--quad", type=int, help="quadrature points per element axis")
    g.add_argument("--refine", type=int, help="linearization passes (1 = single solve)")
    g.add_argument("--grayscale", choices=["spline", "cfe"])
    g.add_argument("--zoi", help="x0,y0,width,height in pixels")
    g.add_argument("--threads", type=int, help="assembly threads (0 = all cores)")
    g.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cfedic", description="Convolution finite element global DIC")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="measure displacement and strain between two images")
    p.add_argument("ref")
    p.add_argument("deformed")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", help="truth JSON from 'synth' (adds an error table)")
    p.add_argument("--step", type=float, default=1.0, help="output sampling step in pixels")
    p.add_argument("--no-png", action="store_true")
    _dic_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("synth", help="render a synthetic benchmark pair")
    p.add_argument("preset", help="example1, example2, star-like or translation")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bits", type=int, choices=[8, 16], default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("metrics", help="score a solution against a truth sidecar")
    p.add_argument("solution", help="run output directory or solution.npz")
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.add_argument("--line", choices=["row", "column"], help="line cut for spatial resolution")
    p.add_argument("--offset", type=float, default=0.0, help="cut offset from the ZoI centre (px)")
    p.add_argument("--component", choices=["u", "v"], default="v")
    p.add_argument("--fit-degree", type=int, default=8)
    p.add_argument("--noise-floor", help="solution of a reference vs noise-floor run (for MR and MEI)")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("shapes", help="dump 1D shape-function curves as CSV")
    p.add_argument("--element", choices=["q4", "cfe"], default="cfe")
    p.add_argument("--p", type=int, default=2)
    p.add_argument("--s", type=int, default=2)
    p.add_argument("--a", type=float, default=8.0)
    p.add_argument("--samples", type=int, default=401)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_shapes)

    p = sub.add_parser("mesh", help="export mesh nodes and element patches as CSV")
    p.add_argument("--out", required=True)
    _dic_flags(p)
    p.set_defaults(func=cmd_mesh)
    return ap


def _fail(kind: str, message: str, **detail) -> int:
    sys.stderr.write(json.dumps({"kind": kind, "message": message, **detail}) + "\n")
    return EXIT[kind]


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("CFEDIC_LOG", "WARNING").upper(), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc), **exc.detail)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except FileNotFoundError as exc:
        return _fail("io", str(exc), path=str(exc.filename))
    except DicError as exc:
        return _fail("solver", str(exc))
    except ValueError as exc:
        return _fail("input", str(exc))
    except OSError as exc:
        return _fail("io", str(exc))
    except Exception as exc:  # pragma: no cover - last-resort report
        log.exception("unexpected failure")
        return _fail("internal", f"{type(exc).__name__}: {exc}")


if __name__ == "__main__":
    sys.exit(main())
