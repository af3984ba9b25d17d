"""Fused supervision signal: prompt averaging, logit/feature fusion,
and the perturbation decomposition of the fused logits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeMismatch


@dataclass
class FusionConfig:
    """Scalar knobs of the fusion method (defaults follow the tuned values)."""

    alpha: float = 0.7
    lam: float = 0.7
    beta: float = 3.0
    gamma: float = 0.8
    t_temp: float = 3.0
    certainty_threshold: float = 0.5
    logit_norm: str = "raw"  # raw | per_sample_standardize

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha {self.alpha} outside [0,1]")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam {self.lam} outside [0,1]")
        if self.beta < 0 or self.gamma < 0:
            raise ConfigError("beta and gamma must be >= 0")
        if not self.t_temp > 0:
            raise ConfigError("t_temp must be > 0")
        if not 0.0 < self.certainty_threshold <= 1.0:
            raise ConfigError("certainty_threshold outside (0,1]")
        if self.logit_norm not in ("raw", "per_sample_standardize"):
            raise ConfigError(f"unknown logit_norm {self.logit_norm!r}")


def average_prompt_logits(p: np.ndarray) -> np.ndarray:
    """Mean over the prompt axis of an M x N x K per-prompt logit tensor."""
    if p.ndim != 3:
        raise ShapeMismatch(f"expected M x N x K tensor, got shape {p.shape}")
    if p.shape[0] < 1:
        raise ShapeMismatch("prompt axis must have M >= 1")
    return p.mean(axis=0, dtype=np.float64).astype(p.dtype)


def standardize_rows(z: np.ndarray) -> np.ndarray:
    """Per-row zero mean, unit std; zero-variance rows are mean-shifted only."""
    mean = z.mean(axis=-1, keepdims=True)
    std = z.std(axis=-1, keepdims=True)
    shifted = z - mean
    return np.where(std > 0, shifted / np.where(std > 0, std, 1.0), shifted)


def fuse_logits(z_t: np.ndarray, z_c: np.ndarray, alpha: float,
                norm: str = "raw") -> np.ndarray:
    """Convex combination alpha * z_T + (1 - alpha) * z_C.

    With ``norm='per_sample_standardize'`` each row of each input is
    standardized before combining.
    """
    if z_t.shape != z_c.shape:
        raise ShapeMismatch(f"{z_t.shape} vs {z_c.shape}")
    if norm == "per_sample_standardize":
        z_t = standardize_rows(z_t)
        z_c = standardize_rows(z_c)
    elif norm != "raw":
        raise ConfigError(f"unknown logit_norm {norm!r}")
    return alpha * z_t + (1.0 - alpha) * z_c


def perturbation(z_t: np.ndarray, z_c: np.ndarray, alpha: float) -> np.ndarray:
    """The shift the second branch injects: (1 - alpha) * (z_C - z_T)."""
    if z_t.shape != z_c.shape:
        raise ShapeMismatch(f"{z_t.shape} vs {z_c.shape}")
    return (1.0 - alpha) * (z_c - z_t)


@dataclass
class FeatureProjection:
    """Trainable affine map that lifts features into the teacher's dimension.

    Its parameters receive gradient only from the feature loss, so it is
    trained jointly with the student.
    """

    weight: np.ndarray  # D_in x D_out
    bias: np.ndarray    # D_out

    @classmethod
    def init(cls, d_in: int, d_out: int, seed: int,
             dtype=np.float64) -> "FeatureProjection":
        rng = np.random.default_rng(seed)
        bound = np.sqrt(1.0 / d_in)
        w = rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype)
        b = np.zeros(d_out, dtype=dtype)
        return cls(weight=w, bias=b)

    @classmethod
    def identity(cls, d: int, dtype=np.float64) -> "FeatureProjection":
        return cls(weight=np.eye(d, dtype=dtype), bias=np.zeros(d, dtype=dtype))

    def astype(self, dtype) -> "FeatureProjection":
        return FeatureProjection(self.weight.astype(dtype), self.bias.astype(dtype))


def project_features(f: np.ndarray, proj: FeatureProjection) -> np.ndarray:
    """Row-wise affine map f @ W + b."""
    if f.shape[-1] != proj.weight.shape[0]:
        raise ShapeMismatch(
            f"features dim {f.shape[-1]} vs projection in-dim {proj.weight.shape[0]}"
        )
    return f @ proj.weight + proj.bias


def fuse_features(f_t: np.ndarray, f_c_proj: np.ndarray, lam: float) -> np.ndarray:
    """Convex combination lam * f_T + (1 - lam) * f_C_proj in a common dimension."""
    if f_t.shape != f_c_proj.shape:
        raise ShapeMismatch(f"{f_t.shape} vs {f_c_proj.shape}")
    return lam * f_t + (1.0 - lam) * f_c_proj
