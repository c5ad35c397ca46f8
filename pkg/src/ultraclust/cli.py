"""Command line: solve, exact, baseline, compare, synth, check.

Exit codes: 0 success, 2 validation failure, 3 degeneracy flagged, 4 input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import FlatClustering, PointSet, best_pruning, classification_error, kmeans, linkage, ward
from .core import (
    HierTree,
    InvalidInput,
    SimilarityMatrix,
    check_nontrivial,
    induced_ultrametric,
    normalized_cost,
    scaler,
    tree_cost_f,
)
from .io import (
    read_labels,
    read_points,
    read_similarity,
    read_solution,
    read_tree,
    read_ultrametric,
    load_table,
    sniff,
    table_to_csv,
    tree_to_json,
    tree_to_newick,
    write_labels,
    write_points,
)
from .kernels import KernelSpec, build_similarity, two_blobs
from .lp import RelaxationError, separate_monotone, separate_spreading, separate_triangle, trace_lines
from .oracle import EXACT_CAP, exact_optimum
from .pipeline import PhaseError, RunConfig, run_pipeline
from .rounding import check_interlayer

log = logging.getLogger("ultraclust")

EXIT_OK, EXIT_INVALID, EXIT_DEGENERATE, EXIT_INPUT = 0, 2, 3, 4
ENV_OUT_DIR = "ULTRACLUST_OUT_DIR"
ENV_THREADS = "ULTRACLUST_THREADS"
F_KINDS = ("linear", "quadratic", "log1p", "expm1")
LINKAGES = ("single", "average", "complete")
DEFAULTS = {
    "f": "linear",
    "kernel": "gaussian",
    "sigma": 1.0,
    "epsilon": "auto",
    "tol": 1e-7,
    "seed": 0,
    "trace": False,
    "out_dir": "out",
    "allow_degenerate": False,
    "backend": "auto",
    "threads": 4,
    "k": 2,
    "size": None,
    "label_column": -1,
}


class ValidationFailure(Exception):
    pass


class Degenerate(Exception):
    pass


# -- configuration --------------------------------------------------------------


def _load_toml(path: str) -> dict:
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise InvalidInput(f"cannot read config {path}: {exc.strerror or exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InvalidInput(f"{path}: {exc}") from exc
    out = {}
    for key, val in raw.items():
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise InvalidInput(f"{path}: unknown setting {key!r}")
        out[key] = val
    return out


def resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags: command line, then environment, then config file, then defaults."""
    conf = _load_toml(args.config) if getattr(args, "config", None) else {}
    env = {}
    if os.environ.get(ENV_OUT_DIR):
        env["out_dir"] = os.environ[ENV_OUT_DIR]
    if os.environ.get(ENV_THREADS):
        try:
            env["threads"] = int(os.environ[ENV_THREADS])
        except ValueError:
            raise InvalidInput(f"{ENV_THREADS} must be an integer, got {os.environ[ENV_THREADS]!r}") from None
    for key, default in DEFAULTS.items():
        if getattr(args, key, None) is None:
            setattr(args, key, env.get(key, conf.get(key, default)))
    if args.epsilon != "auto":
        try:
            args.epsilon = float(args.epsilon)
        except ValueError:
            raise InvalidInput(f"epsilon must be a number in (0, 1) or 'auto', got {args.epsilon!r}") from None
    if args.threads < 1:
        raise InvalidInput("thread count must be at least 1")
    return args


# -- inputs ---------------------------------------------------------------------


def _kernel(args) -> KernelSpec:
    return KernelSpec(args.kernel, float(args.sigma))


def load_instance(args) -> tuple[SimilarityMatrix, PointSet | None, FlatClustering | None, dict]:
    """Similarity matrix file, point file, or a raw feature table with a label column."""
    path = args.input
    meta = {"path": str(path)}
    try:
        kind = sniff(path)
    except InvalidInput:
        kind = "table"
    if kind == "matrix":
        return read_similarity(path), None, None, meta
    if kind == "points":
        points, truth = read_points(path), None
    else:
        points, truth, keep = load_table(path, args.label_column, args.size, args.seed)
        meta["rows"] = [int(i) for i in keep]
    if getattr(args, "labels", None):
        truth = read_labels(args.labels)
        if truth.n != points.n:
            raise InvalidInput(f"{args.labels} labels {truth.n} points, {path} has {points.n}")
    spec = _kernel(args)
    meta.update(kernel=spec.kind, sigma=spec.sigma)
    return build_similarity(points, spec), points, truth, meta


def _out(args) -> Path:
    p = Path(args.out_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_tree(tree: HierTree, out: Path, stem: str = "tree"):
    (out / f"{stem}.json").write_text(tree_to_json(tree))
    (out / f"{stem}.nwk").write_text(tree_to_newick(tree))


# -- subcommands ----------------------------------------------------------------


def _config(args) -> RunConfig:
    return RunConfig(
        f=args.f,
        epsilon=args.epsilon,
        tol=float(args.tol),
        seed=int(args.seed),
        backend=args.backend,
        allow_degenerate=bool(args.allow_degenerate),
    )


def _layer_rows(report: dict) -> str:
    lines = ["t,cost,gamma,ratio,bound,parts,largest_part"]
    for a in report["layers"]:
        ratio = "" if a["ratio"] is None else repr(a["ratio"])
        sizes = [len(p) for p in a["parts"]]
        lines.append(f"{a['t']},{a['cost']!r},{a['gamma']!r},{ratio},{a['bound']!r},{len(sizes)},{max(sizes)}")
    return "\n".join(lines) + "\n"


def cmd_solve(args) -> int:
    sim, _, _, meta = load_instance(args)
    cfg = _config(args)
    res = run_pipeline(sim, cfg, meta)
    out = _out(args)
    _dump(res.report, out / "report.json")
    _dump({k: round(v, 6) for k, v in res.timings.items()}, out / "timings.json")
    (out / "layers.csv").write_text(_layer_rows(res.report))
    _write_tree(res.tree, out)
    if args.trace:
        (out / "trace.jsonl").write_text(trace_lines(res.relaxation))
    print(
        f"cost {res.report['tree']['cost']:.6g}  lp {res.report['lp']['opt_value']:.6g}  "
        f"epsilon {res.report['epsilon']:g}  -> {out}"
    )
    if res.degenerate and not cfg.allow_degenerate:
        kinds = sorted({fl["kind"] for fl in res.report["flags"]})
        raise Degenerate(f"degeneracy flagged: {', '.join(kinds) or 'no usable epsilon'}")
    return EXIT_OK


def cmd_exact(args) -> int:
    sim, _, _, meta = load_instance(args)
    f = scaler(args.f)
    tree, cost = exact_optimum(sim, f, n_cap=args.n_cap)
    out = _out(args)
    report = {
        "n": sim.n,
        "f": f.name,
        "cost": cost,
        "normalized_cost": normalized_cost(tree, sim, f) if sim.total() > 0 else None,
        "newick": tree_to_newick(tree).strip(),
        "input": meta,
    }
    _dump(report, out / "exact.json")
    _write_tree(tree, out, "exact_tree")
    print(f"exact cost {cost:.6g}  -> {out}")
    return EXIT_OK


def _baseline_tree(method: str, sim: SimilarityMatrix, points: PointSet | None) -> HierTree:
    if method == "ward":
        if points is None:
            raise InvalidInput("ward needs point coordinates, not a similarity matrix")
        return ward(points)
    return linkage(sim, method)


def cmd_baseline(args) -> int:
    sim, points, truth, meta = load_instance(args)
    out = _out(args)
    report = {"method": args.method, "input": meta}
    if args.method == "kmeans":
        if points is None:
            raise InvalidInput("kmeans needs point coordinates, not a similarity matrix")
        km = kmeans(points, args.k, seed=args.seed)
        write_labels(km.clustering, out / "kmeans_labels.csv")
        report.update(k=args.k, inertia=km.inertia)
        if truth is not None:
            report["err"] = classification_error(km.clustering, truth)
    else:
        tree = _baseline_tree(args.method, sim, points)
        _write_tree(tree, out, f"{args.method}_tree")
        f = scaler(args.f)
        report.update(f=f.name, cost=tree_cost_f(tree, sim, f))
        if truth is not None:
            pr = best_pruning(tree, args.k, truth)
            report.update(k=args.k, err=pr.err)
            write_labels(pr.clustering, out / f"{args.method}_labels.csv")
    _dump(report, out / f"{args.method}.json")
    print(" ".join(f"{k}={v}" for k, v in report.items() if k in ("method", "cost", "err", "inertia")))
    return EXIT_OK


def _compare_cell(algorithm: str, sim, points, truth, args, cfg: RunConfig) -> dict:
    if algorithm == "pipeline":
        res = run_pipeline(sim, cfg)
        err = best_pruning(res.tree, args.k, truth).err
        return {"err": err, "degenerate": res.degenerate}
    if algorithm == "kmeans":
        return {"err": classification_error(kmeans(points, args.k, seed=args.seed).clustering, truth)}
    tree = _baseline_tree(algorithm, sim, points)
    return {"err": best_pruning(tree, args.k, truth).err}


def cmd_compare(args) -> int:
    sim, points, truth, meta = load_instance(args)
    if points is None:
        raise InvalidInput("compare needs point coordinates (ward and kmeans work on points)")
    if truth is None:
        raise InvalidInput("compare needs ground-truth labels: a label column or --labels")
    cfg = _config(args)
    algorithms = ["pipeline", *LINKAGES, "ward", "kmeans"]
    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        futures = [pool.submit(_compare_cell, a, sim, points, truth, args, cfg) for a in algorithms]
        cells = [fu.result() for fu in futures]
    dataset = args.name or Path(args.input).stem
    f = scaler(args.f).name
    rows = [
        {"dataset": dataset, "algorithm": a, "kernel": meta["kernel"], "f": f if a == "pipeline" else "", "err": c["err"]}
        for a, c in zip(algorithms, cells)
    ]
    out = _out(args)
    (out / "compare.csv").write_text(table_to_csv(rows))
    for row in rows:
        print(f"{row['algorithm']:>9}  err {row['err']:.4f}")
    if cells[0].get("degenerate") and not cfg.allow_degenerate:
        raise Degenerate("degeneracy flagged in the pipeline cell")
    return EXIT_OK


def cmd_synth(args) -> int:
    points, truth = two_blobs(args.n, args.separation, args.dims, args.seed)
    out = _out(args)
    write_points(points, out / "points.csv")
    write_labels(truth, out / "labels.csv")
    print(f"{points.n} points in {points.dims} dimensions -> {out}")
    return EXIT_OK


def _check_solution(path) -> list[str]:
    sol = read_solution(path)
    problems = []
    x = sol.x
    if np.any(x < -1e-9) or np.any(x > 1 + 1e-9):
        problems.append("values outside [0, 1]")
    for name, sep in (("triangle", separate_triangle), ("spreading", separate_spreading), ("monotone", separate_monotone)):
        cuts = sep(sol, 1e-7, None)
        if cuts:
            problems.append(f"{len(cuts)} {name} rows violated, worst by {max(c.violation for c in cuts):.3g}")
    if sol.mode == "binary":
        bad = check_interlayer(sol)
        if bad is not None:
            problems.append(f"inter-layer: {bad}")
    return problems


def check_file(path: str, f: str = "linear") -> list[str]:
    """Invariant violations found in one artifact file (empty when it is valid)."""
    kind = sniff(path)
    if kind == "tree":
        tree = read_tree(path)
        bad = check_nontrivial(induced_ultrametric(tree))
        return [] if bad is None else [f"induced ultrametric: {bad}"]
    if kind == "matrix":
        d = read_ultrametric(path)
        bad = check_nontrivial(d, f if f != "linear" else None)
        return [] if bad is None else [str(bad)]
    if kind == "solution":
        return _check_solution(path)
    if kind == "labels":
        read_labels(path)
        return []
    if kind == "points":
        read_points(path)
        return []
    raise InvalidInput(f"{path}: nothing to check for a {kind} file")


def cmd_check(args) -> int:
    failed = False
    for path in args.files:
        problems = check_file(path, args.f)
        status = "ok" if not problems else "FAIL"
        print(f"{path}: {sniff(path)} {status}")
        for p in problems:
            print(f"  {p}")
        failed |= bool(problems)
    if failed:
        raise ValidationFailure("one or more files failed validation")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ultraclust", description="Hierarchical clustering by ultrametric LP rounding.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file with default values for any flag")
    common.add_argument("--out-dir", dest="out_dir", help=f"output directory (env {ENV_OUT_DIR})")
    common.add_argument("--seed", type=int)
    common.add_argument("--f", choices=F_KINDS, help="cost scaling function")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("input", help="similarity matrix (n=...), point file (dims=...) or a feature table")
    data.add_argument("--kernel", choices=("cosine", "gaussian"))
    data.add_argument("--sigma", type=float)
    data.add_argument("--labels", help="ground-truth labels file (point,label)")
    data.add_argument("--label-column", dest="label_column", type=int, help="label column of a feature table")
    data.add_argument("--size", type=int, help="subsample a feature table to this many rows")

    run = argparse.ArgumentParser(add_help=False)
    run.add_argument("--epsilon", help="rounding parameter in (0, 1), or 'auto' for the halving schedule")
    run.add_argument("--tol", type=float, help="separation tolerance")
    run.add_argument("--backend", choices=("auto", "native", "highs"))
    run.add_argument("--allow-degenerate", dest="allow_degenerate", action="store_true", default=None)

    sub = p.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", parents=[common, data, run], help="relax, round and build the hierarchy")
    s.add_argument("--trace", action="store_true", default=None, help="write per-round cutting-plane log")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("exact", parents=[common, data], help="exhaustive optimum for small n")
    s.add_argument("--n-cap", dest="n_cap", type=int, default=EXACT_CAP)
    s.set_defaults(func=cmd_exact)

    s = sub.add_parser("baseline", parents=[common, data], help="one baseline method")
    s.add_argument("--method", choices=(*LINKAGES, "ward", "kmeans"), default="average")
    s.add_argument("--k", type=int)
    s.set_defaults(func=cmd_baseline)

    s = sub.add_parser("compare", parents=[common, data, run], help="pipeline against all baselines")
    s.add_argument("--k", type=int)
    s.add_argument("--name", help="dataset name for the table (defaults to the file stem)")
    s.add_argument("--threads", type=int, help=f"worker threads (env {ENV_THREADS})")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("synth", parents=[common], help="two-component Gaussian mixture")
    s.add_argument("--n", type=int, default=40)
    s.add_argument("--separation", type=float, default=6.0)
    s.add_argument("--dims", type=int, default=2)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("check", parents=[common], help="validate ultrametric, tree or solution files")
    s.add_argument("files", nargs="+")
    s.set_defaults(func=cmd_check)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    phase = args.command
    try:
        resolve(args)
        return args.func(args)
    except ValidationFailure as exc:
        print(f"{phase}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Degenerate as exc:
        print(f"{phase}: {exc} (pass --allow-degenerate to accept)", file=sys.stderr)
        return EXIT_DEGENERATE
    except PhaseError as exc:
        print(f"{phase}: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc.cause, InvalidInput) else EXIT_INVALID
    except (InvalidInput, RelaxationError) as exc:
        print(f"{phase}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT if isinstance(exc, InvalidInput) else EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
