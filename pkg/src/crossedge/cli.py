"""Command-line interface: data ingestion, PCA and the test / power / efficiency runners."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .depth import DepthModel, depth_kind
from .efficiency import efficiency, make_family
from .geomgraph import build_graph
from .numerics import symmetric_eigen
from .simulate import PowerExperimentConfig, run_power_experiment
from .twosample import DIRECTIONS, run_test

EXIT_OK, EXIT_INPUT, EXIT_DEGENERATE = 0, 1, 2

METHODS = {
    "mst": "mst", "knn": "knn", "nbm": "nbm", "runs": "path1d",
    "depth-hd": "depth-hd", "depth-md": "depth-md", "depth-cdf": "depth-cdf",
}


class InputError(Exception):
    pass


@dataclass
class Dataset:
    source: str
    points: np.ndarray
    columns: Optional[list] = None
    explained_variance_ratio: Optional[float] = None
    labels: Optional[list] = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    @property
    def d(self) -> int:
        return int(self.points.shape[1])


def _parse_rows(path: str, has_header: bool):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from None
    header = None
    if has_header:
        if not rows:
            raise InputError(f"{path}: header expected but file is empty")
        header, rows = [c.strip() for c in rows[0]], rows[1:]
    if not rows:
        raise InputError(f"{path}: no data rows")
    return header, rows


def _cell(text: str, path: str, row: int, col: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"{path}: row {row}, column {col}: {text.strip()!r} is not a number") from None
    if not math.isfinite(v):
        raise InputError(f"{path}: row {row}, column {col}: {text.strip()!r} is not a finite number")
    return v


def ingest_csv(path: str, has_header: bool = False) -> Dataset:
    """Read a comma-separated numeric table (rows are points)."""
    header, rows = _parse_rows(path, has_header)
    width = len(header) if header else len(rows[0])
    first = 2 if has_header else 1
    data = []
    for i, r in enumerate(rows):
        if len(r) != width:
            raise InputError(f"{path}: row {i + first} has {len(r)} cells, expected {width}")
        data.append([_cell(c, path, i + first, j + 1) for j, c in enumerate(r)])
    return Dataset(path, np.asarray(data, dtype=float), header)


def ingest_labeled(path: str, label_col: str) -> tuple[Dataset, Dataset]:
    """Split a headed CSV on a two-valued label column; the first value seen is sample 1."""
    header, rows = _parse_rows(path, True)
    if label_col not in header:
        raise InputError(f"{path}: no column named {label_col!r} (--label-col)")
    li = header.index(label_col)
    keep = [j for j in range(len(header)) if j != li]
    groups: dict[str, list] = {}
    for i, r in enumerate(rows):
        if len(r) != len(header):
            raise InputError(f"{path}: row {i + 2} has {len(r)} cells, expected {len(header)}")
        groups.setdefault(r[li].strip(), []).append([_cell(r[j], path, i + 2, j + 1) for j in keep])
    if len(groups) != 2:
        raise InputError(f"{path}: label column {label_col!r} must take exactly two values, found {len(groups)}")
    cols = [header[j] for j in keep]
    (a, xa), (b, xb) = groups.items()
    return (Dataset(f"{path}[{label_col}={a}]", np.asarray(xa), cols),
            Dataset(f"{path}[{label_col}={b}]", np.asarray(xb), cols))


def pca_fit(points: np.ndarray, k: int):
    """Mean, loading matrix (d, k) and explained-variance ratio of the top k components."""
    x = np.asarray(points, dtype=float)
    d = x.shape[1]
    if not 1 <= k <= d:
        raise InputError(f"--pca must lie in [1, {d}], got {k}")
    mu = x.mean(axis=0)
    c = x - mu
    cov = c.T @ c / max(len(x) - 1, 1)
    vals, vecs = symmetric_eigen(0.5 * (cov + cov.T))
    w = vecs[:, :k].copy()
    for j in range(k):
        i = int(np.argmax(np.abs(w[:, j])))
        if w[i, j] < 0:
            w[:, j] = -w[:, j]
    total = float(np.sum(np.clip(vals, 0, None)))
    ratio = float(np.sum(np.clip(vals[:k], 0, None)) / total) if total > 0 else 1.0
    return mu, w, ratio


def pca_project(data: Dataset, k: int) -> Dataset:
    mu, w, ratio = pca_fit(data.points, k)
    cols = [f"PC{j + 1}" for j in range(k)]
    return Dataset(data.source, (data.points - mu) @ w, cols, ratio)


# ----------------------------------------------------------------- manifest

def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(path: str, subcommand: str, argv: Sequence[str], args: argparse.Namespace,
                   inputs: Sequence[str]) -> None:
    flags = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": subcommand,
        "argv": list(argv),
        "flags": flags,
        "seed": flags.get("seed"),
        "version": __version__,
        "inputs": {p: _sha256(p) for p in inputs if p},
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# ---------------------------------------------------------------- commands

def _emit(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj, indent=2) + "\n")


def _load_samples(args):
    if args.labeled:
        if not args.label_col:
            raise InputError("--labeled needs --label-col")
        if args.x or args.y:
            raise InputError("use either --labeled or --x/--y, not both")
        x, y = ingest_labeled(args.labeled, args.label_col)
        inputs = [args.labeled]
    else:
        if not (args.x and args.y):
            raise InputError("both --x and --y are required (or --labeled with --label-col)")
        x, y = ingest_csv(args.x, args.header), ingest_csv(args.y, args.header)
        inputs = [args.x, args.y]
    if x.d != y.d:
        raise InputError(f"--x has {x.d} columns but --y has {y.d}")
    return x, y, inputs


def cmd_test(args, argv) -> int:
    x, y, inputs = _load_samples(args)
    px, py = x.points, y.points
    notes = []
    if args.pca:
        mu, w, ratio = pca_fit(np.vstack([px, py]), args.pca)
        px, py = (px - mu) @ w, (py - mu) @ w
        notes.append(f"projected on {args.pca} principal components ({ratio:.4f} of variance)")
    method = METHODS[args.method]
    if method == "path1d" and px.shape[1] != 1:
        raise InputError(f"--method runs needs one-dimensional data, got d={px.shape[1]} (try --pca 1)")
    if method == "depth-cdf" and px.shape[1] != 1:
        raise InputError(f"--method depth-cdf needs one-dimensional data, got d={px.shape[1]} (try --pca 1)")
    if method == "knn":
        method = f"knn({args.k})"
    res = run_test(px, py, method, direction=args.direction, permutations=args.permutations,
                   seed=args.seed, k=args.k, workers=args.threads, n_projections=args.projections)
    res.warnings.extend(notes)
    if args.manifest:
        write_manifest(args.manifest, "test", argv, args, inputs)
    if args.json:
        _emit(res.to_dict())
    else:
        z = "n/a" if res.z is None else f"{res.z:.4f}"
        pa = "n/a" if res.p_asymptotic is None else f"{res.p_asymptotic:.4g}"
        print(f"{res.functional}: n1={res.n1} n2={res.n2} T={res.t:.6f} mean={res.null_mean:.6f} "
              f"z={z} p={pa}" + (f" p_perm={res.p_permutation:.4g}" if res.p_permutation is not None else ""))
        for w in res.warnings:
            print(f"warning: {w}")
    return EXIT_DEGENERATE if res.degenerate else EXIT_OK


def _parse_tests(text: str):
    tests, directions = [], {}
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        name, _, direction = tok.partition(":")
        name = METHODS.get(name, name)
        if direction:
            if direction not in DIRECTIONS:
                raise InputError(f"--tests: unknown direction {direction!r} for {name}")
            directions[name] = direction
        tests.append(name)
    if not tests:
        raise InputError("--tests is empty")
    return tests, directions


def cmd_power(args, argv) -> int:
    if not 0 < args.alpha < 1:
        raise InputError("--alpha must lie in (0, 1)")
    tests, directions = _parse_tests(args.tests)
    deltas = np.linspace(0.0, args.delta_max, args.grid).tolist() if args.grid > 1 else [args.delta_max]
    try:
        cfg = PowerExperimentConfig(family=args.family, dim=args.dim, deltas=deltas, n1=args.n1, n2=args.n2,
                                    reps=args.reps, alpha=args.alpha, tests=tests, seed=args.seed,
                                    directions=directions, permutations=args.permutations, k=args.k,
                                    n_projections=args.projections)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    curve = run_power_experiment(cfg, workers=args.threads)
    out = Path(args.out)
    out.write_text(curve.to_csv(), encoding="utf-8")
    Path(str(out) + ".json").write_text(curve.sidecar() + "\n", encoding="utf-8")
    write_manifest(args.manifest or str(out) + ".manifest.json", "power", argv, args, [])
    return EXIT_OK


def _floats(text: Optional[str]):
    if text is None:
        return None
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InputError(f"expected a comma-separated list of numbers, got {text!r}") from None


def cmd_efficiency(args, argv) -> int:
    try:
        fam = make_family(args.family, args.dim)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    theta = _floats(args.theta)
    if theta is None:
        theta = [1.0] if args.family == "normal-scale" else [0.0] * fam.theta_dim
    h = _floats(args.h) or [1.0] * fam.theta_dim
    if len(h) == 1 and fam.theta_dim > 1:
        h = h * fam.theta_dim
    method = METHODS.get(args.method, args.method)
    if method == "depth-cdf" and fam.dim != 1:
        raise InputError("--method depth-cdf needs --dim 1")
    try:
        rep = efficiency(method, fam, theta, h, args.p, mode=args.mode, n=args.n, reps=args.reps,
                         seed=args.seed, k=args.k, workers=args.threads)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    out = rep.to_dict()
    out = {"method": args.method, "family": args.family, "dim": args.dim, "theta": theta, "mode": args.mode, **out}
    if args.manifest:
        write_manifest(args.manifest, "efficiency", argv, args, [])
    _emit(out)
    if rep.degenerate:
        print(f"degenerate: {rep.explanation}", file=sys.stderr)
        return EXIT_DEGENERATE
    return EXIT_OK


def cmd_depth(args, argv) -> int:
    ref = ingest_csv(args.reference, args.header)
    pts = ingest_csv(args.points, args.header) if args.points else ref
    try:
        model = DepthModel(depth_kind(args.kind), ref.points, n_projections=args.projections, seed=args.seed)
        vals = model.depth(pts.points)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    if args.manifest:
        write_manifest(args.manifest, "depth", argv, args, [args.reference, args.points])
    _emit({"kind": model.kind, "n_reference": model.n_ref, "depth": [float(v) for v in vals]})
    return EXIT_OK


def cmd_graph(args, argv) -> int:
    data = ingest_csv(args.x, args.header)
    method = METHODS.get(args.method, args.method)
    try:
        g = build_graph(data.points, method, k=args.k, seed=args.seed)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    sys.stdout.write(g.to_text())
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    try:
        manifest = json.loads(Path(args.manifest_file).read_text(encoding="utf-8"))
        old = manifest["argv"]
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot read manifest {args.manifest_file}: {exc}") from None
    return main(old)


# ------------------------------------------------------------------ parser

def _positive(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _common(p, seed=True):
    if seed:
        p.add_argument("--seed", type=int, default=0, help="the only source of randomness")
    p.add_argument("--threads", type=_positive, default=1, help="worker processes (results do not depend on it)")
    p.add_argument("--manifest", help="write a run manifest (JSON) to this path")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="crossedge", description="Graph-based two-sample tests and their local power.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="run a two-sample test")
    t.add_argument("--x", help="CSV file with the first sample")
    t.add_argument("--y", help="CSV file with the second sample")
    t.add_argument("--labeled", help="one headed CSV holding both samples")
    t.add_argument("--label-col", help="name of the two-valued label column in --labeled")
    t.add_argument("--header", action="store_true", help="--x/--y files start with a header row")
    t.add_argument("--method", choices=sorted(METHODS), default="mst")
    t.add_argument("--k", type=int, default=3, help="neighbours for --method knn")
    t.add_argument("--permutations", type=int, default=0)
    t.add_argument("--direction", choices=DIRECTIONS, help="default: lower for graphs, two-sided for depth")
    t.add_argument("--pca", type=int, default=0, help="project pooled data on this many principal components")
    t.add_argument("--projections", type=int, default=500, help="random directions for halfspace depth, d >= 3")
    t.add_argument("--json", action="store_true", help="print the full result as JSON")
    _common(t)
    t.set_defaults(func=cmd_test)

    p = sub.add_parser("power", help="Monte Carlo power curve under local alternatives")
    p.add_argument("--family", choices=["normal-location", "normal-scale"], default="normal-location")
    p.add_argument("--dim", type=_positive, default=4)
    p.add_argument("--n1", type=_positive, default=1125)
    p.add_argument("--n2", type=_positive, default=375)
    p.add_argument("--delta-max", type=float, default=3.0)
    p.add_argument("--grid", type=_positive, default=20)
    p.add_argument("--reps", type=_positive, default=1000)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--tests", default="mst", help="comma list, e.g. mst,depth-hd,hotelling or depth-cdf:upper")
    p.add_argument("--permutations", type=int, default=0)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--projections", type=int, default=500)
    p.add_argument("--out", required=True, help="CSV output; a .json sidecar is written next to it")
    _common(p)
    p.set_defaults(func=cmd_power)

    e = sub.add_parser("efficiency", help="asymptotic efficiency of a test")
    e.add_argument("--family", default="normal-location")
    e.add_argument("--dim", type=_positive, default=1)
    e.add_argument("--theta", help="comma list; default 0 (location) or 1 (scale)")
    e.add_argument("--h", help="comma list; default all ones")
    e.add_argument("--p", type=float, default=0.5, help="share of the first sample")
    e.add_argument("--method", default="mst", help="mst, knn, nbm, runs, depth-hd, depth-md, depth-cdf")
    e.add_argument("--mode", choices=["closed-form", "empirical"], default="closed-form")
    e.add_argument("--n", type=int, default=500)
    e.add_argument("--reps", type=int, default=20)
    e.add_argument("--k", type=int, default=3)
    _common(e)
    e.set_defaults(func=cmd_efficiency)

    d = sub.add_parser("depth", help="depth of points against a reference sample")
    d.add_argument("--reference", required=True)
    d.add_argument("--points", help="default: the reference itself")
    d.add_argument("--kind", default="mahalanobis", help="mahalanobis, halfspace or univariate-cdf")
    d.add_argument("--header", action="store_true")
    d.add_argument("--projections", type=int, default=500)
    _common(d)
    d.set_defaults(func=cmd_depth)

    g = sub.add_parser("graph", help="export a geometric graph as an edge list")
    g.add_argument("--x", required=True)
    g.add_argument("--method", default="mst", help="mst, knn, nbm or runs")
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--header", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_graph)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest_file")
    r.set_defaults(func=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except InputError as exc:
        print(f"crossedge: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
