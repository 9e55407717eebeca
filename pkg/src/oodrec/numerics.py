"""Shared dense linear algebra and statistics utilities.

Everything here operates on plain float64 numpy arrays and is deterministic
given its inputs (and an explicit RNG where sampling is involved).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

# Taylor order / scaling threshold for the matrix exponential. With
# ||X||_1 <= 0.5 the series remainder after 20 terms is below 1e-25,
# far under the 1e-12 truncation budget.
_EXPM_THETA = 0.5
_EXPM_ORDER = 20


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array with finite entries."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def expm(m) -> np.ndarray:
    """Matrix exponential via scaling-and-squaring of a truncated series."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"expm requires a square matrix, got {m.shape}")
    norm = np.abs(m).sum(axis=0).max() if m.size else 0.0
    squarings = 0
    if norm > _EXPM_THETA:
        squarings = int(np.ceil(np.log2(norm / _EXPM_THETA)))
    x = m / (2.0**squarings)
    acc = np.eye(m.shape[0])
    term = np.eye(m.shape[0])
    for i in range(1, _EXPM_ORDER + 1):
        term = term @ x / i
        acc = acc + term
    for _ in range(squarings):
        acc = acc @ acc
    return acc


def expm_trace(m) -> float:
    """Trace of the matrix exponential, Tr(e^M)."""
    return float(np.trace(expm(m)))


def acyclicity(a) -> float:
    """DAG-ness penalty h(A) = Tr(e^{A o A}) - d; zero iff A is acyclic."""
    a = as_matrix(a, "adjacency")
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"acyclicity requires a square matrix, got {a.shape}")
    return expm_trace(a * a) - a.shape[0]


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple
    analytic: float
    numeric: float


def grad_check(
    f: Callable[[np.ndarray], float],
    grad_f: Callable[[np.ndarray], np.ndarray],
    x,
    eps: float = 1e-5,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    Relative error per coordinate uses denominator max(|a|, |n|, 1e-8).
    """
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(grad_f(x), dtype=np.float64)
    if analytic.shape != x.shape:
        raise ValueError(f"gradient shape {analytic.shape} != input shape {x.shape}")
    numeric = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xp[idx] += eps
        fp = float(f(xp))
        xm = x.copy()
        xm[idx] -= eps
        fm = float(f(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError(f"non-finite function value near index {idx}")
        numeric[idx] = (fp - fm) / (2.0 * eps)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    rel = np.abs(analytic - numeric) / denom
    worst = np.unravel_index(int(np.argmax(rel)), rel.shape) if rel.size else ()
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        worst_index=tuple(int(i) for i in worst),
        analytic=float(analytic[worst]) if rel.size else 0.0,
        numeric=float(numeric[worst]) if rel.size else 0.0,
    )


@dataclass
class PcaResult:
    components: np.ndarray  # (k, D), rows ordered by decreasing variance
    mean: np.ndarray  # (D,)
    explained_variance: np.ndarray  # (k,)
    rank_deficient: bool = False

    def transform(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        return (x - self.mean) @ self.components.T


def pca(x, k: int) -> PcaResult:
    """Principal components of the rows of x, via SVD of the centered data.

    If k exceeds the numerical rank, the trailing components are zero rows
    and the result is flagged rank_deficient.
    """
    x = as_matrix(x, "data")
    n, d = x.shape
    if n < 2:
        raise ValueError("pca requires at least 2 rows")
    if k < 1 or k > min(n, d):
        raise ValueError(f"k={k} out of range for data of shape {x.shape}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = s.max() * max(n, d) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    components = np.zeros((k, d))
    take = min(k, rank)
    components[:take] = vt[:take]
    variance = np.zeros(k)
    variance[:take] = (s[:take] ** 2) / (n - 1)
    return PcaResult(
        components=components,
        mean=mean,
        explained_variance=variance,
        rank_deficient=(k > rank),
    )


@dataclass
class KMeansResult:
    centroids: np.ndarray  # (J, D)
    assignments: np.ndarray  # (n,) int
    inertia: float
    n_iter: int
    inertia_history: list = field(default_factory=list)


def _kmeanspp_seed(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((n_clusters, x.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = x[first]
    dist2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, n_clusters):
        total = dist2.sum()
        if total <= 0.0:
            # all remaining points coincide with a chosen centroid
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=dist2 / total))
        centroids[j] = x[idx]
        dist2 = np.minimum(dist2, ((x - centroids[j]) ** 2).sum(axis=1))
    return centroids


def kmeans(x, n_clusters: int, rng_seed, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Runs until the assignment vector reaches a fixpoint or max_iter;
    empty clusters keep their previous centroid so inertia never increases.
    """
    x = as_matrix(x, "points")
    n = x.shape[0]
    if n_clusters < 1:
        raise ValueError("n_clusters must be >= 1")
    if n < n_clusters:
        raise ValueError(f"kmeans needs n >= n_clusters, got n={n}, J={n_clusters}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    centroids = _kmeanspp_seed(x, n_clusters, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list = []
    it = 0
    for it in range(1, max_iter + 1):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), new_assign].sum()))
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
        for j in range(n_clusters):
            mask = assignments == j
            if mask.any():
                centroids[j] = x[mask].mean(axis=0)
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    inertia = float(d2[np.arange(n), assignments].sum())
    return KMeansResult(centroids, assignments, inertia, it, history)


def conditional_entropy(y, z) -> float:
    """Empirical conditional entropy H(Y|Z) in bits for binary Y.

    z is an (n, d) array of discrete columns (d may be zero, giving the
    marginal entropy H(Y)).
    """
    y = np.asarray(y)
    if y.size == 0:
        raise ValueError("conditional_entropy requires non-empty input")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("y must be binary 0/1")
    z = np.asarray(z)
    if z.ndim == 1:
        z = z[:, None]
    if z.shape[1] and z.shape[0] != y.shape[0]:
        raise ValueError("y and z row counts differ")
    n = y.shape[0]
    if z.shape[1] == 0:
        groups = np.zeros(n, dtype=np.int64)
    else:
        if not np.isin(z, (-1, 0, 1)).all():
            raise ValueError("z entries must lie in {-1, 0, 1}")
        _, groups = np.unique(z, axis=0, return_inverse=True)
    total = 0.0
    for g in np.unique(groups):
        mask = groups == g
        cnt = mask.sum()
        p1 = y[mask].mean()
        h = 0.0
        for p in (p1, 1.0 - p1):
            if p > 0.0:
                h -= p * np.log2(p)
        total += (cnt / n) * h
    return float(total)
