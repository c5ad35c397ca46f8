"""End-to-end run: relaxation, rounding, assembly, hierarchy, and the audit report."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from .core import (
    CostScaler,
    HierTree,
    InvalidInput,
    SimilarityMatrix,
    check_nontrivial,
    normalized_cost,
    scaler,
    tree_cost_f,
    ultrametric_cost,
)
from .io import tree_to_newick
from .lp import RelaxationResult, solve_relaxation
from .rounding import (
    Assembly,
    DegeneracyError,
    Rounding,
    assemble_layers,
    check_epsilon,
    epsilon_schedule,
    layer_bound,
    round_layers,
    total_bound,
)

BOUND_RTOL = 1e-6


class PhaseError(RuntimeError):
    """A module error tagged with the pipeline phase it came from."""

    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"{phase}: {type(cause).__name__}: {cause}")
        self.phase = phase
        self.cause = cause


class _phase:
    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, kind, exc, tb):
        self.timings[self.name] = time.perf_counter() - self.t0
        if exc is not None and not isinstance(exc, PhaseError) and isinstance(exc, Exception):
            raise PhaseError(self.name, exc) from exc
        return False


@dataclass
class RunConfig:
    f: str = "linear"
    epsilon: float | str = "auto"
    tol: float = 1e-7
    seed: int = 0
    backend: str = "auto"
    allow_degenerate: bool = False
    random_centers: bool = False

    def __post_init__(self):
        if self.epsilon != "auto":
            self.epsilon = check_epsilon(float(self.epsilon))
        if not self.tol > 0:
            raise InvalidInput(f"tolerance must be positive, got {self.tol!r}")
        scaler(self.f)


@dataclass
class PipelineResult:
    tree: HierTree
    report: dict[str, Any]
    timings: dict[str, float]
    relaxation: RelaxationResult
    rounding: Rounding
    assembly: Assembly
    degenerate: bool = False


def _rounding(relax: RelaxationResult, sim: SimilarityMatrix, f: CostScaler, cfg: RunConfig):
    seed = cfg.seed if cfg.random_centers else None

    def rng():
        return np.random.default_rng(seed) if seed is not None else None

    if cfg.epsilon != "auto":
        r = round_layers(relax.solution, cfg.epsilon, sim, f, rng=rng())
        return r, [cfg.epsilon], r.flagged
    try:
        choice = epsilon_schedule(relax.solution, sim, f, seed=seed)
        return choice.rounding, choice.tried, False
    except DegeneracyError:
        # nothing helps; round at the starting value and let the caller decide
        return round_layers(relax.solution, 0.5, sim, f, rng=rng()), [0.5], True


def _clean(x):
    """JSON-friendly copy with finite floats and plain ints."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def run_pipeline(sim: SimilarityMatrix, cfg: RunConfig | None = None, meta: dict | None = None) -> PipelineResult:
    """Relax, round, assemble and build the hierarchy; the report is deterministic for a fixed config."""
    cfg = cfg or RunConfig()
    f = scaler(cfg.f)
    n = sim.n
    timings: dict[str, float] = {}
    with _phase("relaxation", timings):
        relax = solve_relaxation(sim, f, cfg.tol, backend=cfg.backend)
    with _phase("rounding", timings):
        rounding, tried, degenerate = _rounding(relax, sim, f, cfg)
    with _phase("assembly", timings):
        assembly = assemble_layers(rounding.layers, rounding.eps, f)
    with _phase("tree", timings):
        tree = assembly.tree
        bad = check_nontrivial(assembly.d, f)
        if bad is not None:  # pragma: no cover - assembly guarantees this
            raise RuntimeError(f"assembled ultrametric is not an f-image of a hierarchy: {bad}")
        cost = tree_cost_f(tree, sim, f)

    eps = rounding.eps
    C = layer_bound(n, eps)
    opt = relax.opt_value
    raw_cost = ultrametric_cost(assembly.raw, sim)
    final_cost = ultrametric_cost(assembly.d, sim)
    layer_ok = all(a["ratio"] is None or a["ratio"] <= C * (1 + BOUND_RTOL) for a in rounding.audit)
    tb = total_bound(n, eps, opt)
    report = {
        "n": n,
        "f": f.name,
        "epsilon": eps,
        "epsilon_tried": tried,
        "tol": cfg.tol,
        "seed": cfg.seed,
        "lp": {
            "opt_value": opt,
            "gamma": relax.gamma.tolist(),
            "rounds": relax.rounds,
            "cuts": relax.cuts,
            "backend": relax.backend,
        },
        "layers": [{k: a[k] for k in ("t", "cost", "gamma", "ratio", "bound", "parts")} for a in rounding.audit],
        "bounds": {
            "layer_constant": C,
            "layer_ok": layer_ok,
            "total_bound": tb,
            "assembled_cost": raw_cost,
            "total_ok": raw_cost <= tb * (1 + BOUND_RTOL) + 1e-12,
            "additive_term": f.max_increment(n),
        },
        "assembly": {"repaired": assembly.repaired, "ultrametric_cost": final_cost},
        "flags": rounding.flags,
        "degenerate": bool(degenerate or rounding.flagged),
        "tree": {
            "cost": cost,
            "normalized_cost": normalized_cost(tree, sim, f) if sim.total() > 0 else None,
            "newick": tree_to_newick(tree).strip(),
        },
    }
    if meta:
        report["input"] = dict(meta)
    return PipelineResult(
        tree, _clean(report), timings, relax, rounding, assembly, degenerate=report["degenerate"]
    )


def config_dict(cfg: RunConfig) -> dict:
    return asdict(cfg)
