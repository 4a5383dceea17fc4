"""Dense float64 matrix helpers with explicit backward maps.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 and ndim 2.
Gradients are composed by hand: every differentiable op returns its output
together with a closure mapping the upstream gradient to the input gradient.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DivergenceError, ShapeError

DEFAULT_EPS = 1e-12

Backward = Callable[[np.ndarray], np.ndarray]


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {a.shape}")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Return ``a @ b`` for two 2-D float64 matrices."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimension mismatch: {a.shape[0]}x{a.shape[1]} @ "
            f"{b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def l2_normalize_rows(
    x: np.ndarray, eps: float = DEFAULT_EPS
) -> tuple[np.ndarray, Backward]:
    """Scale each row to unit Euclidean norm.

    Rows with norm below ``eps`` are divided by ``eps`` instead, which keeps
    the map finite at the origin.

    Returns:
        The normalized matrix and a backward map taking ``dL/dY`` to ``dL/dX``.
    """
    x = as_matrix(x)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    denom = np.maximum(norms, eps)
    y = x / denom[:, None]
    clamped = norms < eps

    def backward(dy: np.ndarray) -> np.ndarray:
        dy = as_matrix(dy)
        # (I/|x| - x x^T/|x|^3) dy  ==  (dy - y (y.dy)) / |x|
        proj = np.einsum("ij,ij->i", y, dy)
        dx = (dy - y * proj[:, None]) / denom[:, None]
        if clamped.any():
            dx[clamped] = dy[clamped] / eps
        return dx

    return y, backward


def logsumexp_rows(x: np.ndarray) -> np.ndarray:
    """Numerically stable ``log(sum(exp(row)))`` for every row."""
    x = as_matrix(x)
    m = x.max(axis=1)
    return m + np.log(np.exp(x - m[:, None]).sum(axis=1))


def masked_logsumexp_rows(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row logsumexp over entries where ``mask`` is true.

    Every row must have at least one selected entry.
    """
    x = as_matrix(x)
    big = np.where(mask, x, -np.inf)
    m = big.max(axis=1)
    e = np.where(mask, np.exp(x - m[:, None]), 0.0)
    return m + np.log(e.sum(axis=1))


def masked_softmax_rows(x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    lse = masked_logsumexp_rows(x, mask)
    return np.where(mask, np.exp(x - lse[:, None]), 0.0)


def gradcheck(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x: np.ndarray,
    h: float = 1e-6,
    analytic: np.ndarray | None = None,
) -> float:
    """Compare an analytic gradient against central finite differences.

    ``f`` maps a matrix to ``(value, gradient)``, or to a bare value when
    ``analytic`` is given. Perturbations and differences are carried out in
    the dtype of ``x``, so passing ``np.longdouble`` inputs to an
    extended-precision ``f`` shrinks the roundoff of the numeric side.
    Returns the maximum over entries of
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-12)``.
    """
    if not 1e-7 <= h <= 1e-4:
        raise ValueError(f"step h={h} outside [1e-7, 1e-4]")
    x = np.array(x, copy=True)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    step = x.dtype.type(h)

    bare = analytic is not None

    def value(v):
        out = f(v)
        return out if bare else out[0]

    if analytic is None:
        base, analytic = f(x.copy())
    else:
        base = f(x.copy())
    if not np.isfinite(base):
        raise DivergenceError(f"non-finite function value {base} at base point")
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    numeric = np.empty(x.shape, dtype=np.float64)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = value(x.copy())
        flat[idx] = orig - step
        fm = value(x.copy())
        flat[idx] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise DivergenceError(f"non-finite function value near entry {idx}")
        num_flat[idx] = float((fp - fm) / (2 * step))
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-12)
    return float(np.max(np.abs(analytic - numeric) / scale))
