"""Command-line front end: ``deqmap flatten|texture|remesh|metrics``.

Exit status: 0 on success (for ``flatten``: the iteration converged), 1 on
input or usage errors, 2 when ``flatten`` stopped without converging (the
last accepted iterate is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import applications as apps
from .density import population_from_spec
from .driver import SolverConfig, metrics_report, run_deq, run_ldeq
from .mesh import LandmarkSet, MeshError, TriangleMesh, as_complex, load_obj, save_obj

log = logging.getLogger("deqmap")

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
METRIC_COLUMNS = ("faces", "time", "variance", "mean_mu", "flips")


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- inputs

def load_landmarks(path) -> LandmarkSet:
    """Read ``[{"vertex": i, "target": [x, y]}, ...]``."""
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list):
        raise UsageError(f"{path}: landmark file must hold a JSON array")
    try:
        vertices = [int(item["vertex"]) for item in data]
        targets = [complex(float(item["target"][0]), float(item["target"][1])) for item in data]
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise UsageError(f"{path}: each landmark needs an integer 'vertex' and a 'target' [x, y]") from exc
    return LandmarkSet(vertices, targets)


def solver_config(args) -> SolverConfig:
    values = {}
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        known = {f.name for f in fields(SolverConfig)}
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown solver settings in {args.config}: {sorted(unknown)}")
        values.update(raw)
    overrides = {
        "alpha": args.alpha, "beta": args.beta, "eta": args.eta, "dt": args.dt, "eps": args.eps,
        "delta": args.delta, "max_iterations": args.max_iter,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    if args.shape_preserving:
        values["shape_preserving"] = True
    try:
        return SolverConfig(**values).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid solver settings: {exc}") from exc


def read_result(mesh: TriangleMesh, path) -> np.ndarray:
    """Planar coordinates from a flattened OBJ written by ``flatten``."""
    result = load_obj(path)
    if result.n_faces != mesh.n_faces or result.n_vertices != mesh.n_vertices or not np.array_equal(result.faces, mesh.faces):
        raise UsageError(f"{path} does not match the input mesh (different vertices or faces)")
    if result.uv is not None:
        return as_complex(result.uv)
    return as_complex(result.vertices[:, :2])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _population(args, mesh):
    spec = args.population if args.population is not None else {"mode": "area3d"}
    try:
        return population_from_spec(spec, mesh)
    except json.JSONDecodeError as exc:
        raise UsageError(f"population is neither a JSON file nor JSON text: {args.population}") from exc


# ---------------------------------------------------------------- commands

def cmd_flatten(args) -> int:
    mesh = load_obj(args.input)
    cfg = solver_config(args)
    pop = _population(args, mesh)
    landmarks = load_landmarks(args.landmarks) if args.landmarks else None
    t0 = time.perf_counter()
    if landmarks is not None and len(landmarks):
        z, domain, report = run_ldeq(mesh, pop, landmarks, cfg, keep_histograms=True)
    else:
        z, domain, report = run_deq(mesh, pop, cfg, keep_histograms=True)
    seconds = time.perf_counter() - t0

    out = _out_dir(args)
    planar = np.column_stack([z.real, z.imag, np.zeros(len(z))])
    save_obj(mesh, out / "flattened.obj", embedding=z, vertices=planar)
    metrics = metrics_report(mesh, z, pop, seconds)
    payload = {
        "input": str(args.input),
        "population": args.population if args.population is not None else {"mode": "area3d"},
        "landmarks": str(args.landmarks) if args.landmarks else None,
        "config": asdict(cfg),
        "domain": {"centers": [[c.real, c.imag] for c in domain.centers], "radii": domain.radii.tolist()},
        "metrics": metrics,
        "report": report.to_dict(),
    }
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    _write_histograms(out / "histograms.csv", report.histograms)
    print(_metrics_table(metrics))
    if not report.converged:
        log.warning("did not converge after %d iterations; last accepted iterate written to %s", report.iterations, out)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _write_histograms(path, histograms):
    its = sorted(histograms)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["face"] + [f"{name}_iter{it}" for it in its for name in ("density", "abs_mu")])
        if not its:
            return
        n = len(histograms[its[0]][0])
        cols = [histograms[it][k] for it in its for k in (0, 1)]
        for i in range(n):
            w.writerow([i] + [repr(float(c[i])) for c in cols])


def cmd_texture(args) -> int:
    mesh = load_obj(args.input)
    z = read_result(mesh, args.flattened)
    apps.require_flip_free(z, mesh.faces)
    uv = apps.texture_coordinates(z)
    out = _out_dir(args)
    textured = TriangleMesh(mesh.vertices, mesh.faces, uv)
    save_obj(textured, out / "textured.obj", embedding=uv)
    stats = apps.texture_statistics(mesh, uv, args.grid)
    keys = list(stats)
    with open(out / "texture_stats.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in zip(*(stats[k] for k in keys)):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v) for v in row])
    print(f"texture density variance {np.var(stats['texture_density']):.6g}")
    return EXIT_OK


def cmd_remesh(args) -> int:
    mesh = load_obj(args.input)
    z = read_result(mesh, args.flattened)
    new = apps.remesh(mesh, z, args.rings)
    out = _out_dir(args)
    save_obj(new, out / "remeshed.obj")
    print(f"remeshed: {new.n_vertices} vertices, {new.n_faces} faces, area variation {apps.area_variation(new):.4g}")
    return EXIT_OK


def cmd_metrics(args) -> int:
    mesh = load_obj(args.input)
    z = read_result(mesh, args.flattened)
    pop = _population(args, mesh)
    seconds = None
    if args.report:
        seconds = json.loads(Path(args.report).read_text()).get("metrics", {}).get("time")
    metrics = metrics_report(mesh, z, pop, seconds)
    table = _metrics_table(metrics)
    print(table)
    if args.out:
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.suffix == ".json":
            path.write_text(json.dumps({k: metrics[k] for k in METRIC_COLUMNS}, indent=2))
        else:
            path.write_text(table + "\n")
    return EXIT_OK


def _metrics_table(metrics) -> str:
    def fmt(v):
        if v is None:
            return "-"
        return str(v) if isinstance(v, int) else f"{v:.6g}"

    return "\t".join(METRIC_COLUMNS) + "\n" + "\t".join(fmt(metrics[k]) for k in METRIC_COLUMNS)


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="deqmap", description="Density-equalizing quasiconformal flattening of triangle meshes.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeat for debug)")
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("flatten", help="flatten a mesh onto a circular domain")
    f.add_argument("--input", required=True, help="triangle mesh (OBJ)")
    f.add_argument("--population", help="JSON file or text: per-face values or a directive such as {\"mode\": \"area3d\"}")
    f.add_argument("--landmarks", help="JSON file [{\"vertex\": i, \"target\": [x, y]}, ...]")
    f.add_argument("--config", help="JSON file with solver settings")
    for name, kind in (("alpha", float), ("beta", float), ("eta", float), ("dt", float), ("eps", float), ("delta", float)):
        f.add_argument(f"--{name}", type=kind)
    f.add_argument("--max-iter", type=int, dest="max_iter")
    f.add_argument("--shape-preserving", action="store_true", help="keep the holes of the initial circular domain fixed")
    f.add_argument("--out", default="out", help="output directory")
    f.set_defaults(func=cmd_flatten)

    t = sub.add_parser("texture", help="UV coordinates and texture distortion data from a flattening")
    t.add_argument("--input", required=True, help="original mesh (OBJ)")
    t.add_argument("--flattened", required=True, help="flattened.obj written by flatten")
    t.add_argument("--grid", type=int, default=8, help="checkerboard cells per side")
    t.add_argument("--out", default="out")
    t.set_defaults(func=cmd_texture)

    r = sub.add_parser("remesh", help="regular remeshing through the inverse of a flattening")
    r.add_argument("--input", required=True)
    r.add_argument("--flattened", required=True)
    r.add_argument("--rings", type=int, default=20, help="number of concentric sample rings")
    r.add_argument("--out", default="out")
    r.set_defaults(func=cmd_remesh)

    m = sub.add_parser("metrics", help="summary row for a flattening")
    m.add_argument("--input", required=True)
    m.add_argument("--flattened", required=True)
    m.add_argument("--population")
    m.add_argument("--report", help="report.json to take the run time from")
    m.add_argument("--out", help="write the row to this file (.json or text)")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits with 2 on usage errors
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)], format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, UsageError, MeshError, ValueError, FloatingPointError) as exc:
        print(f"deqmap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
