"""Contrastive objectives on projected embeddings.

Both losses take raw (unnormalized) embeddings and return the mean loss and
its gradient with respect to those embeddings. Similarities are cosine
similarities scaled by ``1/tau``; the anchor's self-similarity is removed by
masking, never by a sentinel value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, DegenerateBatchError, EmptySupervisionError, ShapeError
from .tensor import as_matrix, l2_normalize_rows, masked_logsumexp_rows, masked_softmax_rows

TAU_SMALL_IMAGES = 0.5
TAU_LARGE_IMAGES = 0.1


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ValueError(f"temperature must be > 0, got {tau}")


def cosine_sim_matrix(z: np.ndarray) -> np.ndarray:
    u, _ = l2_normalize_rows(z)
    s = u @ u.T
    np.fill_diagonal(s, 1.0)
    return s


def _scaled_similarities(z: np.ndarray, tau: float):
    u, norm_backward = l2_normalize_rows(z)
    return u, norm_backward, (u @ u.T) / tau


def _grad_from_logit_grad(u, norm_backward, ds: np.ndarray, tau: float) -> np.ndarray:
    # s = u u^T / tau  =>  du = (ds + ds^T) u / tau
    du = (ds + ds.T) @ u / tau
    return norm_backward(du)


def _check_partner(partner: np.ndarray, m: int) -> np.ndarray:
    partner = np.asarray(partner, dtype=np.int64)
    if partner.shape != (m,):
        raise ShapeError(f"partner map has shape {partner.shape}, expected ({m},)")
    idx = np.arange(m)
    if (partner < 0).any() or (partner >= m).any():
        raise DegenerateBatchError("partner index out of range")
    if (partner == idx).any() or (partner[partner] != idx).any():
        raise DegenerateBatchError("partner map must be a fixed-point-free involution")
    return partner


def ntxent_per_anchor(z: np.ndarray, partner: np.ndarray, tau: float) -> np.ndarray:
    return _ntxent(z, partner, tau, need_grad=False)[0]


def ntxent(z: np.ndarray, partner: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Normalized temperature-scaled cross entropy averaged over all anchors.

    Row ``i`` is an anchor whose positive is ``partner[i]``; the denominator
    runs over every other row, positive included.
    """
    per, grad = _ntxent(z, partner, tau, need_grad=True)
    return float(per.mean()), grad


def _ntxent(z, partner, tau, need_grad):
    _check_tau(tau)
    z = as_matrix(z)
    m = z.shape[0]
    if m < 2 or m % 2:
        raise DegenerateBatchError(f"contrastive batch needs an even number >= 2 of rows, got {m}")
    partner = _check_partner(partner, m)
    u, norm_backward, s = _scaled_similarities(z, tau)
    others = ~np.eye(m, dtype=bool)
    rows = np.arange(m)
    per = masked_logsumexp_rows(s, others) - s[rows, partner]
    if not need_grad:
        return per, None
    ds = masked_softmax_rows(s, others)
    ds[rows, partner] -= 1.0
    ds /= m
    return per, _grad_from_logit_grad(u, norm_backward, ds, tau)


def _check_labels(y: np.ndarray, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.shape != (m,):
        raise ShapeError(f"labels have shape {y.shape}, expected ({m},)")
    return y


def suncet_per_anchor(z: np.ndarray, y: np.ndarray, tau: float) -> np.ndarray:
    return _suncet(z, y, tau, need_grad=False)[0]


def suncet(z: np.ndarray, y: np.ndarray, tau: float) -> tuple[float, np.ndarray]:
    """Supervised noise-contrastive loss averaged over every labeled anchor.

    For anchor ``i`` the numerator sums over the other rows of its class and
    the denominator over every other row; the anchor is excluded from both.
    """
    per, grad = _suncet(z, y, tau, need_grad=True)
    return float(per.mean()), grad


def _suncet(z, y, tau, need_grad):
    _check_tau(tau)
    z = as_matrix(z)
    m = z.shape[0]
    y = _check_labels(y, m)
    others = ~np.eye(m, dtype=bool)
    same = (y[:, None] == y[None, :]) & others
    lonely = ~same.any(axis=1)
    if lonely.any():
        cls = sorted(set(y[lonely].tolist()))
        raise EmptySupervisionError(f"classes with a single row have an empty numerator: {cls}")
    u, norm_backward, s = _scaled_similarities(z, tau)
    per = masked_logsumexp_rows(s, others) - masked_logsumexp_rows(s, same)
    if not need_grad:
        return per, None
    ds = (masked_softmax_rows(s, others) - masked_softmax_rows(s, same)) / m
    return per, _grad_from_logit_grad(u, norm_backward, ds, tau)


def neighbor_class_posterior(
    z: np.ndarray,
    y: np.ndarray,
    query,
    tau: float,
    n_classes: int | None = None,
) -> np.ndarray:
    """Class probabilities of a stochastic cosine-similarity neighbor classifier.

    ``query`` is either an integer row index of ``z`` (that row is then left
    out of the candidate neighbors) or an external embedding vector (all rows
    are candidates). Classes absent from the batch get probability 0.
    """
    _check_tau(tau)
    z = as_matrix(z)
    m = z.shape[0]
    y = _check_labels(y, m)
    if m == 0:
        raise EmptySupervisionError("empty labeled batch")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if isinstance(query, (int, np.integer)):
        if not 0 <= query < m:
            raise IndexError(f"anchor index {query} out of range")
        if m == 1:
            raise EmptySupervisionError("query is the only row; no neighbor to select")
        cand = np.arange(m) != query
        q = z[query]
    else:
        cand = np.ones(m, dtype=bool)
        q = np.asarray(query, dtype=np.float64).reshape(-1)
    u, _ = l2_normalize_rows(np.vstack([q, z]))
    d = (u[1:] @ u[0]) / tau
    d = d[cand]
    w = np.exp(d - d.max())
    probs = np.zeros(n_classes)
    np.add.at(probs, y[cand], w)
    return probs / w.sum()


def combined_loss(inst, sup=None):
    """Unweighted sum of the instance term and the optional supervised term.

    Each term is ``(value, grad)``. The gradients act on disjoint embedding
    batches, so they are returned side by side rather than summed.
    """
    inst_value, inst_grad = inst
    if sup is None:
        return float(inst_value), (inst_grad, None)
    sup_value, sup_grad = sup
    return float(inst_value) + float(sup_value), (inst_grad, sup_grad)


def softmax_cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross entropy and its gradient with respect to the logits."""
    logits = as_matrix(logits)
    m, k = logits.shape
    y = _check_labels(y, m)
    if (y < 0).any() or (y >= k).any():
        raise DataError("label outside logit range")
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    tot = e.sum(axis=1, keepdims=True)
    logp = logits - mx - np.log(tot)
    rows = np.arange(m)
    loss = -logp[rows, y].mean()
    g = e / tot
    g[rows, y] -= 1.0
    return float(loss), g / m
