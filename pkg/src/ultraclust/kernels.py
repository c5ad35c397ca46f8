"""Similarity kernels and seeded synthetic data."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .baselines import FlatClustering, PointSet
from .core import InvalidInput, SimilarityMatrix

KERNELS = ("cosine", "gaussian")


@dataclass(frozen=True)
class KernelSpec:
    kind: str = "gaussian"
    sigma: float = 1.0

    def __post_init__(self):
        kind = {"cosine_shifted": "cosine"}.get(self.kind, self.kind)
        if kind not in KERNELS:
            raise InvalidInput(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if not self.sigma > 0:
            raise InvalidInput(f"sigma must be positive, got {self.sigma!r}")
        object.__setattr__(self, "kind", kind)


def build_similarity(points: PointSet, spec: KernelSpec = KernelSpec()) -> SimilarityMatrix:
    """``1 + cos(x, y)`` (kept nonnegative by the shift) or ``exp(-|x - y|^2 / (2 sigma^2))``."""
    X = points.X
    if points.n < 2:
        raise InvalidInput("a similarity needs at least two points")
    if spec.kind == "cosine":
        norms = np.linalg.norm(X, axis=1)
        if np.any(norms == 0):
            raise InvalidInput(f"cosine similarity undefined for zero vector at row {int(np.flatnonzero(norms == 0)[0])}")
        U = X / norms[:, None]
        W = 1.0 + np.clip(U @ U.T, -1.0, 1.0)
    else:
        sq = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
        W = np.exp(-sq / (2 * spec.sigma**2))
    W = (W + W.T) / 2
    np.fill_diagonal(W, 0.0)
    return SimilarityMatrix(W)


@dataclass(frozen=True)
class Component:
    mean: tuple
    scale: float
    count: int


def synth_mixture(
    dims: int, components: Sequence[Component | tuple], seed: int = 0
) -> tuple[PointSet, FlatClustering]:
    """Isotropic Gaussian mixture; ground-truth labels are the component ids, in order."""
    rng = np.random.default_rng(seed)
    blocks, labels = [], []
    for cid, comp in enumerate(components, 1):
        comp = comp if isinstance(comp, Component) else Component(*comp)
        mean = np.asarray(comp.mean, dtype=float)
        if mean.shape != (dims,):
            raise InvalidInput(f"component {cid} mean has {mean.size} coordinates, expected {dims}")
        if comp.count < 1:
            raise InvalidInput(f"component {cid} needs a positive count")
        blocks.append(mean + comp.scale * rng.standard_normal((comp.count, dims)))
        labels += [cid] * comp.count
    return PointSet(np.vstack(blocks)), FlatClustering(np.array(labels))


def two_blobs(n: int = 40, separation: float = 6.0, dims: int = 2, seed: int = 0) -> tuple[PointSet, FlatClustering]:
    """Two unit-variance components whose means are ``separation`` apart along the first axis."""
    a = np.zeros(dims)
    b = np.zeros(dims)
    b[0] = separation
    return synth_mixture(dims, [Component(tuple(a), 1.0, n // 2), Component(tuple(b), 1.0, n - n // 2)], seed)


def subsample(n: int, size: int | None, seed: int = 0) -> np.ndarray:
    """Sorted uniform sample of ``size`` row indices (all rows when ``size`` is None or large)."""
    if size is None or size >= n:
        return np.arange(n)
    if size < 2:
        raise InvalidInput("subsample size must be at least 2")
    return np.sort(np.random.default_rng(seed).choice(n, size=size, replace=False))
