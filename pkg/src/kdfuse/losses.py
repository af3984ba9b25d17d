"""Scalar objectives of the total training loss and their analytic gradients.

All functions accept either a single vector (shape K / D) or a batch
(shape N x K / N x D); batch values are arithmetic means over samples with a
fixed reduction order. Probabilities are clamped at 1e-12 inside logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, LabelOutOfRange, ShapeMismatch, ZeroNormFeature
from .fusion import FusionConfig

PROB_FLOOR = 1e-12


@dataclass
class LossBreakdown:
    ce: float
    logit_kl: float
    feat: float
    total: float


def _as_batch(z: np.ndarray) -> np.ndarray:
    return z[None, :] if z.ndim == 1 else z


def softmax_t(z: np.ndarray, t: float) -> np.ndarray:
    """Temperature softmax with max-subtraction for stability."""
    if not t > 0:
        raise DomainError("temperature must be > 0")
    scaled = np.asarray(z) / t
    shifted = scaled - scaled.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def kl_div(p: np.ndarray, q: np.ndarray) -> float:
    """KL(p || q) with the 0 * ln 0 = 0 convention; mean over the batch."""
    p, q = _as_batch(np.asarray(p)), _as_batch(np.asarray(q))
    if p.shape != q.shape:
        raise ShapeMismatch(f"{p.shape} vs {q.shape}")
    if np.any((q <= 0) & (p > 0)):
        raise DomainError("q has a zero where p is positive")
    pc = np.clip(p, PROB_FLOOR, None)
    qc = np.clip(q, PROB_FLOOR, None)
    terms = np.where(p > 0, p * (np.log(pc) - np.log(qc)), 0.0)
    return float(terms.sum(axis=-1).mean())


def logit_loss(z_f: np.ndarray, z_s: np.ndarray, t_temp: float) -> float:
    """KL between temperature-softened target and student distributions."""
    z_f, z_s = np.asarray(z_f), np.asarray(z_s)
    if z_f.shape != z_s.shape:
        raise ShapeMismatch(f"{z_f.shape} vs {z_s.shape}")
    return kl_div(softmax_t(z_f, t_temp), softmax_t(z_s, t_temp))


def logit_loss_grad(z_f: np.ndarray, z_s: np.ndarray, t_temp: float) -> np.ndarray:
    """Per-sample gradient wrt z_s: (1/T) (softmax(z_s/T) - softmax(z_f/T)).

    No T^2 compensation factor is applied; the loss is differentiated as
    written and the logit-loss weight absorbs scale.
    """
    return (softmax_t(z_s, t_temp) - softmax_t(z_f, t_temp)) / t_temp


def cross_entropy(z_s: np.ndarray, y) -> float:
    """Mean negative log-likelihood of the true class under softmax(z_s)."""
    z = _as_batch(np.asarray(z_s))
    y = np.atleast_1d(np.asarray(y))
    k = z.shape[-1]
    if y.min() < 0 or y.max() >= k:
        raise LabelOutOfRange(f"label outside [0, {k})")
    p = softmax_t(z, 1.0)
    picked = p[np.arange(len(y)), y]
    return float(-np.log(np.clip(picked, PROB_FLOOR, None)).mean())


def cross_entropy_grad(z_s: np.ndarray, y) -> np.ndarray:
    """Per-sample gradient wrt z_s: softmax(z_s) - onehot(y)."""
    z = _as_batch(np.asarray(z_s))
    y = np.atleast_1d(np.asarray(y))
    g = softmax_t(z, 1.0)
    g[np.arange(len(y)), y] -= 1.0
    return g.reshape(np.asarray(z_s).shape)


def feature_loss(f_s: np.ndarray, f_f: np.ndarray) -> float:
    """Cosine distance 1 - cos(f_s, f_f) in [0, 2]; mean over the batch."""
    fs, ff = _as_batch(np.asarray(f_s)), _as_batch(np.asarray(f_f))
    if fs.shape != ff.shape:
        raise ShapeMismatch(f"{fs.shape} vs {ff.shape}")
    ns = np.linalg.norm(fs, axis=-1)
    nf = np.linalg.norm(ff, axis=-1)
    if np.any(ns == 0) or np.any(nf == 0):
        raise ZeroNormFeature("zero-norm feature vector")
    cos = (fs * ff).sum(axis=-1) / (ns * nf)
    return float((1.0 - cos).mean())


def feature_loss_grads(f_s: np.ndarray, f_f: np.ndarray):
    """Per-sample gradients of the cosine distance wrt f_s and f_f."""
    fs, ff = _as_batch(np.asarray(f_s)), _as_batch(np.asarray(f_f))
    ns = np.linalg.norm(fs, axis=-1, keepdims=True)
    nf = np.linalg.norm(ff, axis=-1, keepdims=True)
    if np.any(ns == 0) or np.any(nf == 0):
        raise ZeroNormFeature("zero-norm feature vector")
    cos = (fs * ff).sum(axis=-1, keepdims=True) / (ns * nf)
    g_fs = cos * fs / ns**2 - ff / (ns * nf)
    g_ff = cos * ff / nf**2 - fs / (ns * nf)
    shape_s, shape_f = np.asarray(f_s).shape, np.asarray(f_f).shape
    return g_fs.reshape(shape_s), g_ff.reshape(shape_f)


def feature_loss_with_grads_safe(f_s: np.ndarray, f_f: np.ndarray):
    """Training-path variant tolerating zero-norm student rows.

    A ReLU tap can emit an exactly-zero row mid-training; such rows get the
    maximum-uninformative loss value 1 and a zero subgradient instead of an
    error. Target rows are still required to be nonzero.
    """
    fs, ff = _as_batch(np.asarray(f_s)), _as_batch(np.asarray(f_f))
    ns = np.linalg.norm(fs, axis=-1, keepdims=True)
    nf = np.linalg.norm(ff, axis=-1, keepdims=True)
    if np.any(nf == 0):
        raise ZeroNormFeature("zero-norm feature target")
    dead = ns == 0
    ns_safe = np.where(dead, 1.0, ns)
    cos = (fs * ff).sum(axis=-1, keepdims=True) / (ns_safe * nf)
    cos = np.where(dead, 0.0, cos)
    loss = float((1.0 - cos[:, 0]).mean())
    g_fs = np.where(dead, 0.0, cos * fs / ns_safe**2 - ff / (ns_safe * nf))
    g_ff = np.where(dead, 0.0, cos * ff / nf**2 - fs / (ns_safe * nf))
    return loss, g_fs.reshape(np.asarray(f_s).shape), g_ff.reshape(np.asarray(f_f).shape)


def total_loss(z_s, z_f, f_s, f_f, y, cfg: FusionConfig) -> LossBreakdown:
    """Cross-entropy plus weighted logit and feature distillation terms."""
    cfg.validate()
    ce = cross_entropy(z_s, y)
    kl = logit_loss(z_f, z_s, cfg.t_temp)
    feat = feature_loss(f_s, f_f)
    return LossBreakdown(
        ce=ce,
        logit_kl=kl,
        feat=feat,
        total=ce + cfg.beta * kl + cfg.gamma * feat,
    )
