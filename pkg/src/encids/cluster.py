"""Lloyd's k-means with uniform random seeding, and confusion-matrix scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_MAX_ITER = 300
DEFAULT_SEEDS = tuple(range(10))


class InertiaIncreased(AssertionError):
    pass


@dataclass(frozen=True)
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    iterations: int
    seed: int
    history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.k).tolist()


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    # direct differences, not the |x|^2 - 2xc + |c|^2 expansion: no cancellation
    d = np.empty((len(x), len(c)))
    for j, cj in enumerate(c):
        diff = x - cj
        d[:, j] = np.einsum("ij,ij->i", diff, diff)
    return d


def _means(x: np.ndarray, a: np.ndarray, k: int) -> np.ndarray:
    sizes = np.bincount(a, minlength=k).astype(np.float64)
    return np.stack([np.bincount(a, weights=x[:, j], minlength=k) for j in range(x.shape[1])],
                    axis=1) / sizes[:, None]


def kmeans(points: np.ndarray, k: int, seed: int = 0, max_iter: int = DEFAULT_MAX_ITER) -> ClusterResult:
    """Single Lloyd run.

    Initial centroids are k distinct points drawn uniformly without
    replacement. Stops when assignments stop changing or after ``max_iter``
    update steps. Raises :class:`InertiaIncreased` if the objective ever grows.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    return _lloyd(x, np.unique(x, axis=0), k, seed, max_iter)


def _lloyd(x: np.ndarray, distinct: np.ndarray, k: int, seed: int, max_iter: int) -> ClusterResult:
    if len(distinct) < k:
        raise ValueError(f"only {len(distinct)} distinct points for k={k}")
    rng = np.random.default_rng(seed)
    rows = np.arange(len(x))
    centroids = distinct[np.sort(rng.choice(len(distinct), size=k, replace=False))].copy()
    d = _sq_dists(x, centroids)
    assign = np.argmin(d, axis=1)  # first minimum: ties go to the lower index
    assign = _repair_empty(x, centroids, assign, d, k)
    # objective after every half step (update, then assignment)
    history = [float(d[rows, assign].sum())]
    converged = False
    it = 0
    while it < max_iter and not converged:
        it += 1
        centroids = _means(x, assign, k)
        d = _sq_dists(x, centroids)
        history.append(float(d[rows, assign].sum()))
        new_assign = _repair_empty(x, centroids, np.argmin(d, axis=1), d, k)
        history.append(float(d[rows, new_assign].sum()))
        _check_monotone(history[-3], history[-2])
        _check_monotone(history[-2], history[-1])
        converged = np.array_equal(new_assign, assign)
        assign = new_assign
    return ClusterResult(assign, centroids, history[-1], it, seed, tuple(history))


def _check_monotone(prev: float, cur: float):
    if cur > prev + 1e-9 * max(1.0, abs(prev)):
        raise InertiaIncreased(f"inertia rose from {prev!r} to {cur!r}")


def _repair_empty(x: np.ndarray, centroids: np.ndarray, assign: np.ndarray, d: np.ndarray,
                  k: int) -> np.ndarray:
    """Move the point farthest from its centroid into each empty cluster.

    ``centroids`` and the distance matrix ``d`` are updated in place.
    """
    sizes = np.bincount(assign, minlength=k)
    if sizes.min() > 0:
        return assign
    assign = assign.copy()
    rows = np.arange(len(x))
    for j in np.flatnonzero(sizes == 0):
        own = d[rows, assign].copy()
        sizes = np.bincount(assign, minlength=k)
        own[sizes[assign] <= 1] = -1.0  # never empty another cluster
        far = int(np.argmax(own))
        assign[far] = j
        centroids[j] = x[far]
        diff = x - centroids[j]
        d[:, j] = np.einsum("ij,ij->i", diff, diff)
    return assign


def kmeans_restarts(points: np.ndarray, k: int, seeds: Sequence[int] = DEFAULT_SEEDS,
                    max_iter: int = DEFAULT_MAX_ITER) -> ClusterResult:
    """Best (lowest inertia) of several seeded runs; ties keep the earlier seed."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if k < 1 or max_iter < 1:
        raise ValueError("k and max_iter must be >= 1")
    distinct = np.unique(x, axis=0)
    best = None
    for s in seeds:
        r = _lloyd(x, distinct, k, s, max_iter)
        if best is None or r.inertia < best.inertia:
            best = r
    if best is None:
        raise ValueError("no seeds given")
    return best


def map_clusters_to_classes(assignments: Sequence[int], truth: Sequence[bool]) -> dict[int, bool]:
    """Cluster -> is_attack for k=2, picking the more accurate of the two bijections.

    Ties go to mapping the smaller cluster to Attack. When the truth holds a
    single class, both clusters map to it.
    """
    a = np.asarray(assignments)
    y = np.asarray(truth, dtype=bool)
    if a.size and (a.min() < 0 or a.max() > 1):
        raise ValueError("expected cluster indices 0 and 1")
    if y.size and y.all():
        return {0: True, 1: True}
    if not y.any():
        return {0: False, 1: False}
    # option A: cluster 0 is Attack; option B: cluster 1 is Attack
    correct_a = int(np.sum((a == 0) & y) + np.sum((a == 1) & ~y))
    correct_b = len(a) - correct_a
    if correct_a != correct_b:
        attack = 0 if correct_a > correct_b else 1
    else:
        sizes = np.bincount(a, minlength=2)
        attack = 0 if sizes[0] <= sizes[1] else 1
    return {attack: True, 1 - attack: False}


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def rates(self) -> dict[str, float]:
        n = self.total
        return {k: (getattr(self, k) / n if n else 0.0) for k in ("tp", "fp", "tn", "fn")}

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total if self.total else 0.0

    @property
    def recall(self) -> float:
        p = self.tp + self.fn
        return self.tp / p if p else 0.0

    def to_dict(self) -> dict:
        return {"counts": {"tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn},
                "rates": self.rates(), "total": self.total}

    def table(self) -> str:
        r = self.rates()
        rows = [("True Positive", r["tp"]), ("False Positive", r["fp"]),
                ("True Negative", r["tn"]), ("False Negative", r["fn"])]
        return "\n".join(f"{name:<15} {100 * v:6.2f}%" for name, v in rows)


def evaluate(predicted: Sequence[bool], truth: Sequence[bool]) -> ConfusionMatrix:
    p = np.asarray(predicted, dtype=bool)
    y = np.asarray(truth, dtype=bool)
    if p.shape != y.shape:
        raise ValueError(f"length mismatch: {p.size} predictions, {y.size} truth labels")
    return ConfusionMatrix(tp=int(np.sum(p & y)), fp=int(np.sum(p & ~y)),
                           tn=int(np.sum(~p & ~y)), fn=int(np.sum(~p & y)))
