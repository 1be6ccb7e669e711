"""Diffusion-map embedding of per-packet header features.

Pipeline: (time, src, dst, len) features -> Gaussian kernel W -> row-stochastic
P = D^-1 W -> eigenpairs via the symmetric conjugate D^-1/2 W D^-1/2 ->
coordinates lambda_k^t psi_k(i) for k = 2..m+1.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .ingest import PacketRecord

log = logging.getLogger(__name__)

FEATURE_NAMES = ("time", "src", "dest", "len")
DEFAULT_CAP = 10_000


class Normalization(str, enum.Enum):
    NONE = "none"
    ZSCORE = "zscore"
    MINMAX = "minmax"


class KernelSizeError(ValueError):
    pass


class SpectralError(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    epsilon: float | None = None  # None: median heuristic
    t: int = 1
    m: int = 3
    normalization: Normalization = Normalization.ZSCORE
    cap: int = DEFAULT_CAP

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.t < 1:
            raise ValueError("t must be >= 1")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        object.__setattr__(self, "normalization", Normalization(self.normalization))


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenpairs of the Markov matrix, ordered by descending |lambda|.

    ``eigenvectors[:, k]`` is the right eigenvector psi_{k+1}, scaled so that
    sum_i pi_i psi(i)^2 = 1; psi_1 is then the all-ones vector.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    stationary: np.ndarray

    @property
    def n(self) -> int:
        return len(self.stationary)


@dataclass(frozen=True)
class Embedding:
    coordinates: np.ndarray
    t: int
    m: int
    eigenvalues: np.ndarray


def build_features(records: Sequence[PacketRecord],
                   normalization: Normalization | str = Normalization.ZSCORE,
                   include_ttl: bool = False) -> np.ndarray:
    """Stack (time, src, dest, len) per record into an (n, 4) array.

    Normalization is per column over the batch. A constant column cannot be
    z-scored (or min-max scaled) and is set to 0. ``include_ttl`` appends TTL
    as a fifth column; it is off by default because the analysis is meant to
    rest on addresses, lengths and timing alone.
    """
    normalization = Normalization(normalization)
    if len(records) < 2:
        raise ValueError("need at least two records")
    n = len(records)
    cols = [
        np.fromiter((r.ts for r in records), np.float64, n),
        np.fromiter((float(r.src) for r in records), np.float64, n),
        np.fromiter((float(r.dst) for r in records), np.float64, n),
        np.fromiter((r.length for r in records), np.float64, n),
    ]
    if include_ttl:
        cols.append(np.fromiter((r.ttl for r in records), np.float64, n))
    return normalize_columns(np.stack(cols, axis=1), normalization)


def normalize_columns(x: np.ndarray, normalization: Normalization | str) -> np.ndarray:
    normalization = Normalization(normalization)
    if normalization is Normalization.NONE:
        return x
    x = x.copy()
    for j in range(x.shape[1]):
        col = x[:, j]
        if normalization is Normalization.ZSCORE:
            mu, sd = col.mean(), col.std()
            if sd == 0:
                log.warning("feature %s has zero variance; mapped to 0", _name(j))
                x[:, j] = 0.0
            else:
                x[:, j] = (col - mu) / sd
        else:
            lo, hi = col.min(), col.max()
            if hi == lo:
                log.warning("feature %s is constant; mapped to 0", _name(j))
                x[:, j] = 0.0
            else:
                x[:, j] = (col - lo) / (hi - lo)
    return x


def _name(j: int) -> str:
    return (FEATURE_NAMES + ("ttl",))[j] if j < 5 else str(j)


def choose_epsilon(features: np.ndarray) -> float:
    """Median of the pairwise squared Euclidean distances."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if len(x) < 2:
        raise ValueError("need at least two points")
    d2 = pdist(x, "sqeuclidean")
    if not np.any(d2 > 0):
        raise ValueError("all points identical; epsilon undefined")
    return float(np.median(d2))


def stride_subsample(n: int, cap: int) -> tuple[np.ndarray, int]:
    """Every k-th index with the smallest k keeping the count <= cap."""
    stride = max(1, -(-n // cap))
    return np.arange(0, n, stride), stride


def kernel_matrix(features: np.ndarray, epsilon: float, cap: int = DEFAULT_CAP) -> np.ndarray:
    """Gaussian weights exp(-||x_i - x_j||^2 / epsilon); symmetric, unit diagonal."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    x = np.asarray(features, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n > cap:
        raise KernelSizeError(
            f"{n} points exceed the dense kernel cap of {cap}; "
            f"subsample first (stride_subsample) or raise the cap")
    w = squareform(np.exp(-pdist(x, "sqeuclidean") / epsilon))
    np.fill_diagonal(w, 1.0)
    return w


def markov_normalize(w: np.ndarray) -> np.ndarray:
    return w / w.sum(axis=1, keepdims=True)


def spectral_decompose(w: np.ndarray, n_components: int | None = None) -> SpectralDecomposition:
    """Eigenpairs of P = D^-1 W from the symmetric matrix D^-1/2 W D^-1/2.

    With ``n_components`` set only the leading pairs are computed (iterative
    solver); otherwise the full dense spectrum.
    """
    w = np.asarray(w, dtype=np.float64)
    n = len(w)
    d = w.sum(axis=1)
    vol = d.sum()
    inv_sqrt = 1.0 / np.sqrt(d)
    s = w * inv_sqrt[:, None] * inv_sqrt[None, :]
    s = (s + s.T) / 2
    try:
        if n_components is None or n_components >= n - 1:
            vals, vecs = np.linalg.eigh(s)
        else:
            from scipy.sparse.linalg import eigsh
            vals, vecs = eigsh(s, k=n_components, which="LA", v0=np.sqrt(d / vol))
    except (np.linalg.LinAlgError, ArithmeticError) as exc:
        raise SpectralError(
            f"eigensolver failed on {n}x{n} kernel "
            f"(degree range {d.min():.3g}..{d.max():.3g}): {exc}") from exc
    except Exception as exc:  # ArpackNoConvergence and friends
        raise SpectralError(f"eigensolver failed on {n}x{n} kernel: {exc}") from exc

    order = np.argsort(-np.abs(vals), kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    psi = vecs * inv_sqrt[:, None] * np.sqrt(vol)
    idx = np.argmax(np.abs(psi), axis=0)
    signs = np.sign(psi[idx, np.arange(psi.shape[1])])
    signs[signs == 0] = 1.0
    psi = psi * signs
    return SpectralDecomposition(vals, psi, d / vol)


def diffusion_embed(decomp: SpectralDecomposition, t: int = 1, m: int = 3) -> Embedding:
    """Coordinates (lambda_k^t psi_k(i)) for k = 2 .. m+1; psi_1 is dropped."""
    if t < 1:
        raise ValueError("t must be >= 1")
    available = decomp.eigenvectors.shape[1] - 1
    if not 1 <= m <= available:
        raise ValueError(f"m must lie in [1, {available}]")
    lam = decomp.eigenvalues[1:m + 1]
    coords = decomp.eigenvectors[:, 1:m + 1] * lam ** t
    return Embedding(coords, t, m, decomp.eigenvalues)


@dataclass(frozen=True)
class DiffusionResult:
    embedding: Embedding
    epsilon: float
    indices: np.ndarray
    stride: int
    config: KernelConfig

    def metadata(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "t": self.config.t,
            "m": self.embedding.m,
            "normalization": self.config.normalization.value,
            "n": int(len(self.indices)),
            "stride": self.stride,
            "eigenvalues": [float(v) for v in self.embedding.eigenvalues],
        }


def diffusion_map(features: np.ndarray, config: KernelConfig = KernelConfig(),
                  max_points: int | None = None) -> DiffusionResult:
    """Subsample by stride if needed, then kernel -> decomposition -> embedding.

    ``features`` must already be normalized. ``max_points`` defaults to the
    kernel cap.
    """
    features = np.asarray(features, dtype=np.float64)
    limit = min(config.cap, max_points or config.cap)
    idx, stride = stride_subsample(len(features), limit)
    x = features[idx]
    eps = config.epsilon if config.epsilon is not None else choose_epsilon(x)
    w = kernel_matrix(x, eps, cap=config.cap)
    m = min(config.m, len(x) - 1)
    k = None if len(x) <= 500 else m + 1
    decomp = spectral_decompose(w, n_components=k)
    emb = diffusion_embed(decomp, config.t, m)
    return DiffusionResult(emb, eps, idx, stride, config)
