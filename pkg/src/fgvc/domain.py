"""Domain similarity between datasets from Earth Mover's Distance over class centroids."""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (EmptyDomainError, IngestionError, InvalidInputError,
                     InvalidShapeError, UnbalancedDomainError)
from .io import read_tdf, write_tdf
from .transport import BALANCE_TOL, solve_transport

DEFAULT_GAMMA = 0.01


@dataclass
class DomainProfile:
    """Per-class feature centroids and class masses for one domain."""

    name: str
    centroids: np.ndarray
    weights: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.centroids = np.atleast_2d(np.asarray(self.centroids, dtype=np.float64))
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        m = self.centroids.shape[0]
        if m < 1:
            raise EmptyDomainError(f"profile {self.name!r} has no classes")
        if self.weights.shape != (m,) or len(self.class_names) != m:
            raise InvalidShapeError(
                f"profile {self.name!r}: {m} centroids, {self.weights.size} weights, "
                f"{len(self.class_names)} names"
            )
        if not np.all(np.isfinite(self.centroids)):
            raise InvalidInputError(f"profile {self.name!r} has non-finite centroids")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise InvalidInputError(f"profile {self.name!r} weights must be >= 0 and sum to 1")

    @property
    def n_classes(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


@dataclass
class FlowPlan:
    flow: np.ndarray
    cost: float
    dist: np.ndarray


def build_profile(features, labels, name: str = "domain", class_names=None) -> DomainProfile:
    """Class centroids (mean feature) and class masses (sample fraction).

    Unused label values are dropped and the remaining classes renumbered in
    ascending label order, with a warning.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDomainError(f"domain {name!r} has no samples")
    if y.shape != (X.shape[0],):
        raise InvalidShapeError(f"{len(y)} labels for {X.shape[0]} feature rows")
    present, inverse, counts = np.unique(y, return_inverse=True, return_counts=True)
    if len(present) and (present[0] != 0 or present[-1] != len(present) - 1):
        warnings.warn(f"domain {name!r}: label values {present.tolist()} compacted to 0..{len(present) - 1}",
                      stacklevel=2)
    if class_names is None:
        names = [str(v) for v in present]
    else:
        names = [class_names[int(v)] for v in present]
    centroids = np.zeros((len(present), X.shape[1]))
    np.add.at(centroids, inverse, X)
    centroids /= counts[:, None]
    return DomainProfile(name, centroids, counts / X.shape[0], names)


def distance_matrix(source: DomainProfile, target: DomainProfile) -> np.ndarray:
    """Euclidean distances between every source and target centroid."""
    if source.dim != target.dim:
        raise InvalidShapeError(f"feature dims differ: {source.dim} vs {target.dim}")
    diff = source.centroids[:, None, :] - target.centroids[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def emd(source: DomainProfile, target: DomainProfile) -> FlowPlan:
    """Exact Earth Mover's Distance between two profiles, normalised by total flow."""
    d = distance_matrix(source, target)
    if abs(source.weights.sum() - target.weights.sum()) > BALANCE_TOL:
        raise UnbalancedDomainError("source and target masses differ")
    flow, work = solve_transport(source.weights, target.weights, d)
    return FlowPlan(flow, work / flow.sum(), d)


def similarity(cost: float, gamma: float = DEFAULT_GAMMA) -> float:
    """``exp(-gamma * cost)``."""
    if cost < 0 or not math.isfinite(cost):
        raise InvalidInputError(f"cost must be finite and non-negative, got {cost}")
    return math.exp(-gamma * cost)


def domain_similarity(source: DomainProfile, target: DomainProfile, gamma: float = DEFAULT_GAMMA):
    plan = emd(source, target)
    return plan.cost, similarity(plan.cost, gamma)


def rank_sources(sources, target: DomainProfile, gamma: float = DEFAULT_GAMMA):
    """Sources ordered by descending similarity to ``target`` (ties by name)."""
    rows = []
    for src in sources:
        cost, sim = domain_similarity(src, target, gamma)
        rows.append((src.name, cost, sim))
    rows.sort(key=lambda r: (-r[2], r[0]))
    return rows


def top_k_categories(source: DomainProfile, target: DomainProfile, k: int,
                     gamma: float = DEFAULT_GAMMA) -> list[int]:
    """Indices of the ``k`` source classes closest to any target class.

    A class scores ``exp(-gamma * min_j d_ij)``; ties go to the lower index.
    """
    m = source.n_classes
    if not 1 <= k <= m:
        raise InvalidInputError(f"k must lie in [1, {m}], got {k}")
    scores = np.exp(-gamma * distance_matrix(source, target).min(axis=1))
    order = sorted(range(m), key=lambda i: (-scores[i], i))
    return order[:k]


def save_profile(directory, profile: DomainProfile) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    with open(d / "manifest.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class_name", "weight"])
        for name, weight in zip(profile.class_names, profile.weights):
            w.writerow([name, repr(float(weight))])
    write_tdf(d / "centroids.tdf", profile.centroids)


def load_profile(directory, name: str | None = None) -> DomainProfile:
    d = Path(directory)
    try:
        with open(d / "manifest.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise IngestionError(f"cannot read profile manifest in {d}: {exc}") from exc
    try:
        names = [r["class_name"] for r in rows]
        weights = np.array([float(r["weight"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise IngestionError(f"{d}/manifest.csv: malformed row: {exc}") from exc
    centroids = read_tdf(d / "centroids.tdf")
    if centroids.ndim != 2 or centroids.shape[0] != len(names):
        raise IngestionError(f"{d}: centroids shape {centroids.shape} does not match {len(names)} classes")
    # manifest weights may carry rounding from text; renormalise
    if weights.sum() > 0:
        weights = weights / weights.sum()
    return DomainProfile(name or d.name, centroids, weights, names)
