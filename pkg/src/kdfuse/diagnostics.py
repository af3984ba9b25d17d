"""Desk-scale analyses: confidence quadrants, ensemble bias-variance
statistics, inter-class correlations, input corruptions, and gradient-sign
attacks on the trained student.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    InsufficientSamples,
    LabelOutOfRange,
    ShapeMismatch,
    TotalMismatch,
    UnknownKind,
)
from .losses import softmax_t
from .student import StudentNet, input_grad_ce

QUADRANTS = (
    "certain_correct",
    "certain_incorrect",
    "uncertain_correct",
    "uncertain_incorrect",
)


@dataclass
class QuadrantCounts:
    certain_correct: int
    certain_incorrect: int
    uncertain_correct: int
    uncertain_incorrect: int

    @property
    def total(self) -> int:
        return (self.certain_correct + self.certain_incorrect
                + self.uncertain_correct + self.uncertain_incorrect)

    def as_tuple(self):
        return (self.certain_correct, self.certain_incorrect,
                self.uncertain_correct, self.uncertain_incorrect)


def quadrant_codes(logits: np.ndarray, labels: np.ndarray,
                   threshold: float) -> np.ndarray:
    """Per-sample quadrant index (order as in QUADRANTS).

    A sample is "certain" when its max softmax probability (temperature 1)
    reaches the threshold; "correct" when argmax equals the label.
    """
    labels = np.asarray(labels)
    k = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"label outside [0, {k})")
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold outside (0,1]")
    p = softmax_t(logits, 1.0)
    certain = p.max(axis=1) >= threshold
    correct = logits.argmax(axis=1) == labels
    return np.select(
        [certain & correct, certain & ~correct, ~certain & correct],
        [0, 1, 2],
        default=3,
    )


def quadrant_counts(logits: np.ndarray, labels, threshold: float) -> QuadrantCounts:
    codes = quadrant_codes(logits, labels, threshold)
    counts = np.bincount(codes, minlength=4)
    return QuadrantCounts(*(int(c) for c in counts))


def quadrant_delta(before: QuadrantCounts, after: QuadrantCounts):
    """Signed per-quadrant change as a percentage of the sample count."""
    if before.total != after.total:
        raise TotalMismatch(f"{before.total} vs {after.total}")
    n = before.total
    return tuple(
        (a - b) / n * 100.0 for b, a in zip(before.as_tuple(), after.as_tuple())
    )


def interclass_correlation(logits: np.ndarray) -> np.ndarray:
    """Pearson correlation between raw class-logit columns.

    Zero-variance columns get 0 off-diagonal; the diagonal is exactly 1.
    """
    z = np.asarray(logits, dtype=np.float64)
    if z.shape[0] < 2:
        raise InsufficientSamples("need N >= 2")
    centered = z - z.mean(axis=0)
    std = centered.std(axis=0)
    safe = np.where(std > 0, std, 1.0)
    normed = centered / safe
    corr = normed.T @ normed / z.shape[0]
    corr[std == 0, :] = 0.0
    corr[:, std == 0] = 0.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def fused_variance_closed_form(var_t: float, var_c: float, cov_tc: float,
                               alpha: float) -> float:
    """Variance of the convex combination of two correlated predictors."""
    return (alpha**2 * var_t + (1.0 - alpha)**2 * var_c
            + 2.0 * alpha * (1.0 - alpha) * cov_tc)


def ensemble_error(bias_f: float, var_f: float, sigma_sq: float) -> float:
    """Bias-variance-noise decomposition of the squared prediction error."""
    return bias_f**2 + var_f + sigma_sq


@dataclass
class EnsembleStats:
    bias_t: np.ndarray
    bias_c: np.ndarray
    bias_f: np.ndarray
    var_t: np.ndarray
    var_c: np.ndarray
    var_f: np.ndarray
    cov_tc: np.ndarray
    error_f: float
    sigma_sq: float


def ensemble_stats(z_t: np.ndarray, z_c: np.ndarray, labels, alpha: float,
                   target_scale: float | None = None,
                   sigma_sq: float = 0.0) -> EnsembleStats:
    """Per-class bias/variance/covariance of two logit matrices over a shared
    sample set, plus the fused-branch statistics at the given mixing weight.

    Bias is measured against onehot(labels) * target_scale in logit space;
    the default scale is the mean max teacher logit. The identity
    bias_f = alpha * bias_t + (1 - alpha) * bias_c holds exactly because the
    fusion is linear and the sample set is shared.
    """
    if z_t.shape != z_c.shape:
        raise ShapeMismatch(f"{z_t.shape} vs {z_c.shape}")
    z_t = np.asarray(z_t, dtype=np.float64)
    z_c = np.asarray(z_c, dtype=np.float64)
    labels = np.asarray(labels)
    n, k = z_t.shape
    if target_scale is None:
        target_scale = float(z_t.max(axis=1).mean())
    target = np.zeros((n, k))
    target[np.arange(n), labels] = target_scale

    res_t = z_t - target
    res_c = z_c - target
    bias_t = res_t.mean(axis=0)
    bias_c = res_c.mean(axis=0)
    bias_f = alpha * bias_t + (1.0 - alpha) * bias_c
    var_t = res_t.var(axis=0)
    var_c = res_c.var(axis=0)
    cov = ((res_t - bias_t) * (res_c - bias_c)).mean(axis=0)
    var_f = fused_variance_closed_form(var_t, var_c, cov, alpha)
    error_f = float(np.mean(bias_f**2 + var_f) + sigma_sq)
    return EnsembleStats(bias_t, bias_c, bias_f, var_t, var_c, var_f, cov,
                         error_f, sigma_sq)


# Per-severity parameters for the five corruption analogues (severity 1..5).
GAUSSIAN_NOISE_STD = (0.04, 0.06, 0.08, 0.10, 0.15)
MOTION_BLUR_KERNEL = (3, 5, 7, 9, 11)
JPEG_QUANT_LEVELS = (32, 16, 12, 8, 6)
SALTPEPPER_FRACTION = (0.01, 0.03, 0.05, 0.07, 0.10)
SNOW_STREAK_FRACTION = (0.02, 0.04, 0.06, 0.08, 0.12)
SNOW_STREAK_BRIGHTEN = (0.3, 0.4, 0.5, 0.6, 0.8)

CORRUPTION_KINDS = (
    "gaussian_noise",
    "motion_blur_1d",
    "jpeg_like_quantize",
    "spatter_like_saltpepper",
    "snow_like_brighten_streaks",
)


def corrupt(images: np.ndarray, kind: str, severity: int, seed: int) -> np.ndarray:
    """Apply a deterministic corruption to flat images with pixels in [0, 1].

    Severity 0 is the identity; output is clipped back to [0, 1].
    """
    if kind not in CORRUPTION_KINDS:
        raise UnknownKind(kind)
    if not 0 <= severity <= 5:
        raise ValueError(f"severity {severity} outside 0..5")
    if severity == 0:
        return images.copy()
    x = np.asarray(images, dtype=np.float64)
    rng = np.random.default_rng(seed)
    s = severity - 1
    if kind == "gaussian_noise":
        out = x + rng.normal(0.0, GAUSSIAN_NOISE_STD[s], size=x.shape)
    elif kind == "motion_blur_1d":
        ksz = MOTION_BLUR_KERNEL[s]
        kernel = np.ones(ksz) / ksz
        pad = ksz // 2
        padded = np.pad(x, ((0, 0), (pad, pad)), mode="edge")
        out = np.stack(
            [np.convolve(row, kernel, mode="valid") for row in padded]
        )
    elif kind == "jpeg_like_quantize":
        levels = JPEG_QUANT_LEVELS[s]
        out = np.round(x * (levels - 1)) / (levels - 1)
    elif kind == "spatter_like_saltpepper":
        frac = SALTPEPPER_FRACTION[s]
        mask = rng.random(x.shape) < frac
        salt = rng.random(x.shape) < 0.5
        out = np.where(mask, np.where(salt, 1.0, 0.0), x)
    else:  # snow_like_brighten_streaks
        frac = SNOW_STREAK_FRACTION[s]
        gain = SNOW_STREAK_BRIGHTEN[s]
        n, d = x.shape
        streak_len = max(2, d // 16)
        n_streaks = max(1, int(round(frac * d / streak_len)))
        out = x.copy()
        starts = rng.integers(0, max(1, d - streak_len), size=(n, n_streaks))
        for i in range(n):
            for st in starts[i]:
                out[i, st:st + streak_len] += gain
    return np.clip(out, 0.0, 1.0).astype(images.dtype)


def fgsm_attack(net: StudentNet, x: np.ndarray, y, eps: float) -> np.ndarray:
    """One signed-gradient step on the cross-entropy loss, clipped to [0, 1]."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    g = input_grad_ce(net, x, np.asarray(y))
    return np.clip(x + eps * np.sign(g), 0.0, 1.0)


def pgd_attack(net: StudentNet, x: np.ndarray, y, eps: float, step: float,
               iters: int) -> np.ndarray:
    """Iterated projected signed-gradient steps inside the eps ball.

    No random start, so iters=1 with step=eps reproduces the single-step
    attack bit-exactly.
    """
    if step <= 0 or iters < 1:
        raise ValueError("need step > 0 and iters >= 1")
    y = np.asarray(y)
    x_adv = x
    for _ in range(iters):
        g = input_grad_ce(net, x_adv, y)
        x_adv = x_adv + step * np.sign(g)
        x_adv = np.clip(x_adv, x - eps, x + eps)
        x_adv = np.clip(x_adv, 0.0, 1.0)
    return x_adv


@dataclass
class RobustnessRow:
    kind: str
    param: float
    top1: float
    top5: float
