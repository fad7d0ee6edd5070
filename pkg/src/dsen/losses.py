"""Training objectives: correlation loss between the two subjects' feature
views, cosine triplet loss, cross-entropy, and their weighted combination."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, logsumexp, nuclear_norm, sym_inv_sqrt
from .errors import ConfigError, DegenerateDataError, InsufficientDataError, LabelError


@dataclass
class CcaConfig:
    """regularization_eps is added to both covariance diagonals so the
    whitening inverse square roots exist for rank-deficient batches."""

    regularization_eps: float = 1e-4

    def __post_init__(self):
        if self.regularization_eps <= 0:
            raise ConfigError("regularization_eps must be positive")


@dataclass
class TripletConfig:
    margin: float = 0.3

    def __post_init__(self):
        if not 0 < self.margin < 2:
            raise ConfigError("margin must lie in (0, 2)")


@dataclass
class CombinedConfig:
    """Weights of the classification and correlation terms."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or (self.alpha == 0 and self.beta == 0):
            raise ConfigError("alpha/beta must be >= 0 and not both zero")


def cca_loss(h_x: Tensor, h_y: Tensor, cfg: CcaConfig | None = None) -> Tensor:
    """Negative sum of singular values of the whitened cross-covariance.

    Both views are mean-centered; covariances use the B-1 normalization plus
    ``regularization_eps`` on the diagonal; the whitening inverse square
    roots come from symmetric eigendecomposition. The result lies in
    [-D, 0] and is smaller (more negative) the more correlated the views.
    """
    cfg = cfg or CcaConfig()
    h_x, h_y = Tensor.lift(h_x), Tensor.lift(h_y)
    if h_x.ndim != 2 or h_y.ndim != 2 or h_x.shape[0] != h_y.shape[0]:
        raise InsufficientDataError("cca_loss expects [B, D] views with equal B")
    b, d = h_x.shape
    if b < 2:
        raise InsufficientDataError(f"cca_loss needs a batch of >= 2, got {b}")
    if b - 1 < max(d, h_y.shape[1]):
        warnings.warn(
            f"batch {b} cannot support full-rank {d}-dim covariances; "
            "whitening relies on the diagonal regularization",
            stacklevel=2,
        )

    xc = h_x - h_x.mean(axis=0, keepdims=True)
    yc = h_y - h_y.mean(axis=0, keepdims=True)
    scale = 1.0 / (b - 1)
    eye_x = np.eye(d) * cfg.regularization_eps
    eye_y = np.eye(h_y.shape[1]) * cfg.regularization_eps
    r_x = (xc.T @ xc) * scale + Tensor(eye_x)
    r_y = (yc.T @ yc) * scale + Tensor(eye_y)
    r_xy = (xc.T @ yc) * scale
    e = sym_inv_sqrt(r_x, clamp_eps=cfg.regularization_eps * 1e-6) @ r_xy @ sym_inv_sqrt(
        r_y, clamp_eps=cfg.regularization_eps * 1e-6
    )
    return -nuclear_norm(e)


def _cosine_distance(u: Tensor, v: Tensor) -> Tensor:
    """1 - cosine similarity along the last axis (batched or single)."""
    dot = (u * v).sum(axis=-1)
    nu = (u * u).sum(axis=-1).sqrt()
    nv = (v * v).sum(axis=-1).sqrt()
    if np.any(nu.data < 1e-12) or np.any(nv.data < 1e-12):
        raise DegenerateDataError("cosine distance of a zero-norm vector")
    return 1.0 - dot / (nu * nv)


def triplet_loss(
    anchor: Tensor, positive: Tensor, negative: Tensor, cfg: TripletConfig | None = None
) -> Tensor:
    """Hinge on cosine distances: max(0, d(a,p) - d(a,n) + margin).

    Batched inputs ([B, D]) return the batch mean.
    """
    cfg = cfg or TripletConfig()
    anchor = Tensor.lift(anchor)
    positive = Tensor.lift(positive)
    negative = Tensor.lift(negative)
    dist_p = _cosine_distance(anchor, positive)
    dist_n = _cosine_distance(anchor, negative)
    hinge = (dist_p - dist_n + cfg.margin).relu()
    return hinge.mean() if hinge.ndim > 0 and hinge.size > 1 else hinge.reshape(())


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the true class, stabilized by max
    subtraction. Labels must be 0 (stranger) or 1 (friend)."""
    logits = Tensor.lift(logits)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise LabelError("cross_entropy expects [B, n_classes] logits")
    if labels.shape != (logits.shape[0],):
        raise LabelError("labels must be one integer per row of logits")
    if not np.all(np.isin(labels, [0, 1])):
        raise LabelError(f"labels outside {{0, 1}}: {np.unique(labels)}")
    onehot = np.zeros(logits.shape)
    onehot[np.arange(labels.size), labels.astype(int)] = 1.0
    true_logit = (logits * Tensor(onehot)).sum(axis=1)
    return (logsumexp(logits, axis=1) - true_logit).mean()


def combined_loss(
    logits: Tensor,
    labels: np.ndarray,
    h_x: Tensor,
    h_y: Tensor,
    cfg: CombinedConfig | None = None,
    cca_cfg: CcaConfig | None = None,
) -> Tensor:
    """alpha * cross-entropy + beta * correlation loss.

    A zero weight skips its term entirely, so the degenerate cases equal the
    surviving component exactly.
    """
    cfg = cfg or CombinedConfig()
    if cfg.beta == 0.0:
        return cross_entropy(logits, labels) * cfg.alpha if cfg.alpha != 1.0 else cross_entropy(logits, labels)
    if cfg.alpha == 0.0:
        loss = cca_loss(h_x, h_y, cca_cfg)
        return loss * cfg.beta if cfg.beta != 1.0 else loss
    return cfg.alpha * cross_entropy(logits, labels) + cfg.beta * cca_loss(h_x, h_y, cca_cfg)
