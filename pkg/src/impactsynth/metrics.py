"""Evaluation metrics over externally supplied classifier outputs:
Frechet distance and kernel MMD between embedding sets, paired KL
divergence, and recognition accuracy.

Embeddings are features taken before a classifier's output layer; this
package does not train that classifier, it only consumes its tensors.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError

_KL_EPS = 1e-10


def _as_embeddings(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name}: embeddings must be a 2-D (n, d) matrix")
    if arr.shape[0] < 2:
        raise DataError(f"{name}: need at least two embedding rows")
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name}: embeddings contain non-finite entries")
    return arr


def _as_probs(x, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise DataError(f"{name}: probabilities must be a 2-D (n, c) matrix")
    if np.any(arr < 0):
        raise DataError(f"{name}: probabilities must be non-negative")
    sums = arr.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        worst = int(np.argmax(np.abs(sums - 1.0)))
        raise DataError(f"{name}: row {worst} sums to {sums[worst]:.8f}, not 1")
    return arr


def _sqrt_trace_of_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """tr((cov_a cov_b)^1/2) via eigendecomposition of the symmetrized
    product sqrt(A) B sqrt(A)."""
    eig_a, vec_a = np.linalg.eigh((cov_a + cov_a.T) / 2.0)
    root_a = (vec_a * np.sqrt(np.maximum(eig_a, 0.0))) @ vec_a.T
    sym = root_a @ cov_b @ root_a
    eigs = np.linalg.eigvalsh((sym + sym.T) / 2.0)
    scale = max(float(np.max(np.abs(eigs))), 1.0)
    if np.any(eigs < -1e-6 * scale):
        raise DataError(
            f"covariance product is not PSD (eigenvalue {eigs.min():.3e})"
        )
    return float(np.sqrt(np.maximum(eigs, 0.0)).sum())


def fid(real, fake) -> float:
    """Frechet distance between Gaussian fits of two embedding sets:
    ||m1-m2||^2 + tr(C1 + C2 - 2(C1 C2)^(1/2))."""
    a = _as_embeddings(real, "real")
    b = _as_embeddings(fake, "fake")
    if a.shape[1] != b.shape[1]:
        raise DataError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < a.shape[1] or b.shape[0] < b.shape[1]:
        import warnings

        warnings.warn("fewer embeddings than dimensions; covariance is rank "
                      "deficient and the estimate unstable", stacklevel=2)
    mean_a, mean_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False).reshape(a.shape[1], a.shape[1])
    cov_b = np.cov(b, rowvar=False).reshape(b.shape[1], b.shape[1])
    value = (float(np.sum((mean_a - mean_b) ** 2))
             + float(np.trace(cov_a) + np.trace(cov_b))
             - 2.0 * _sqrt_trace_of_product(cov_a, cov_b))
    return max(value, 0.0)


def _poly_kernel(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return (x @ y.T / x.shape[1] + 1.0) ** 3


def kid(real, fake, num_subsets: int = 100, subset_size: int = 50,
        rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Unbiased kernel MMD^2 with the cubic polynomial kernel, averaged over
    random subsets. Returns (mean, std); std is NaN for a single subset."""
    a = _as_embeddings(real, "real")
    b = _as_embeddings(fake, "fake")
    if a.shape[1] != b.shape[1]:
        raise DataError(f"embedding dims differ: {a.shape[1]} vs {b.shape[1]}")
    m = subset_size
    if m > min(a.shape[0], b.shape[0]):
        raise DataError(
            f"subset_size {m} exceeds set sizes ({a.shape[0]}, {b.shape[0]})"
        )
    if num_subsets < 1:
        raise ValueError("num_subsets must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)

    values = np.empty(num_subsets)
    for i in range(num_subsets):
        xs = a[rng.choice(a.shape[0], m, replace=False)]
        ys = b[rng.choice(b.shape[0], m, replace=False)]
        k_xx = _poly_kernel(xs, xs)
        k_yy = _poly_kernel(ys, ys)
        k_xy = _poly_kernel(xs, ys)
        sum_off_xx = k_xx.sum() - np.trace(k_xx)
        sum_off_yy = k_yy.sum() - np.trace(k_yy)
        values[i] = (sum_off_xx / (m * (m - 1)) + sum_off_yy / (m * (m - 1))
                     - 2.0 * k_xy.mean())
    std = float(np.std(values, ddof=1)) if num_subsets > 1 else float("nan")
    return float(values.mean()), std


def kl_divergence(p, q) -> float:
    """Mean over paired rows of sum_i p_i log(p_i / q_i), with 1e-10
    smoothing applied to q where it vanishes."""
    p_arr = _as_probs(p, "p")
    q_arr = _as_probs(q, "q")
    if p_arr.shape != q_arr.shape:
        raise DataError(f"paired shape mismatch: {p_arr.shape} vs {q_arr.shape}")
    q_safe = np.maximum(q_arr, _KL_EPS)
    terms = np.where(p_arr > 0, p_arr * (np.log(np.maximum(p_arr, _KL_EPS))
                                         - np.log(q_safe)), 0.0)
    return float(terms.sum(axis=1).mean())


def recognition_accuracy(probs, labels) -> float:
    """Fraction of rows whose argmax matches the label; argmax ties break
    toward the lowest class index."""
    p = _as_probs(probs, "probs")
    y = np.asarray(labels, dtype=np.int64).ravel()
    if y.size != p.shape[0]:
        raise DataError(f"{y.size} labels for {p.shape[0]} probability rows")
    if np.any((y < 0) | (y >= p.shape[1])):
        bad = int(y[np.argmax((y < 0) | (y >= p.shape[1]))])
        raise DataError(f"label {bad} out of range for {p.shape[1]} classes")
    return float(np.mean(np.argmax(p, axis=1) == y))
