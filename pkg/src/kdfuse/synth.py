"""Synthetic complementary-teacher bundle generator.

Every sample is planned into a (teacher quadrant, auxiliary-branch quadrant)
cell before any logits exist; amplitudes are chosen in closed form so the
realized quadrants match the plan exactly, and the plan is saved next to the
bundle so diagnostics can be checked against construction.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import cache_io
from .cache_io import BundleManifest, CacheTensor
from .diagnostics import quadrant_codes
from .errors import UnrealizableSpec

# Quadrant indices: 0 certain_correct, 1 certain_incorrect,
# 2 uncertain_correct, 3 uncertain_incorrect.
CC, CI, UC, UI = 0, 1, 2, 3

# Cell fill order for the non-complementary remainder. The two cells where a
# confidently-correct branch gets overridden by the other branch's confident
# error are filled last, so they stay empty unless the quotas force them.
_FILL_ORDER = [
    (CC, CC), (CC, UC), (UC, CC), (UC, UC), (CI, CI), (UI, UI),
    (UI, UC), (UC, UI), (UI, CI), (CI, UI), (CI, UC), (UC, CI),
    (CC, UI), (UI, CC), (CI, CC), (CC, CI),
]

PLANNED_NAME = "planned_quadrants.json"


@dataclass
class SynthSpec:
    n: int = 10_000
    k: int = 10
    m: int = 4
    d_t: int = 16
    d_c: int = 24
    d_in: int = 32
    teacher_profile: tuple = (0.60, 0.15, 0.05, 0.20)
    clip_profile: tuple = (0.55, 0.10, 0.10, 0.25)
    complementarity: float = 0.2
    seed: int = 0
    certain_prob: float = 0.9
    uncertain_prob: float = 0.35
    dark_scale: float = 1.2
    logit_noise: float = 0.03
    signal_scale: float = 2.2
    input_noise: float = 0.7
    feature_noise: float = 0.3
    certainty_threshold: float = 0.5

    def validate(self) -> None:
        for name, prof in [("teacher", self.teacher_profile),
                           ("clip", self.clip_profile)]:
            if len(prof) != 4 or any(f < 0 for f in prof):
                raise UnrealizableSpec(f"{name} profile must be 4 fractions >= 0")
            if abs(sum(prof) - 1.0) > 1e-9:
                raise UnrealizableSpec(f"{name} profile must sum to 1")
        if not 0.0 <= self.complementarity <= 1.0:
            raise UnrealizableSpec("complementarity outside [0,1]")
        if self.k < 3:
            raise UnrealizableSpec("need K >= 3 so uncertain rows are realizable")
        if not 1.0 / self.k < self.uncertain_prob < self.certainty_threshold:
            raise UnrealizableSpec("uncertain_prob must lie in (1/K, threshold)")
        if not self.certainty_threshold <= self.certain_prob < 1.0:
            raise UnrealizableSpec("certain_prob must lie in [threshold, 1)")
        if self.m < 1 or self.n < 1:
            raise UnrealizableSpec("need M >= 1 and N >= 1")


def _quotas(n: int, fractions) -> np.ndarray:
    """Largest-remainder rounding of n * fractions to integers summing to n."""
    raw = np.asarray(fractions, dtype=np.float64) * n
    base = np.floor(raw).astype(int)
    short = n - base.sum()
    order = np.argsort(-(raw - base), kind="stable")
    base[order[:short]] += 1
    return base


def _allocate_cells(spec: SynthSpec) -> np.ndarray:
    """4x4 joint count matrix honoring both marginals and the complementary mass."""
    qt = _quotas(spec.n, spec.teacher_profile)
    qc = _quotas(spec.n, spec.clip_profile)
    joint = np.zeros((4, 4), dtype=int)

    n_comp = int(round(spec.complementarity * spec.n))
    comp_clip_side = (n_comp + 1) // 2  # auxiliary branch confidently correct
    comp_teacher_side = n_comp // 2     # teacher confidently correct

    take = min(qt[CI], comp_clip_side)
    joint[CI, CC] += take
    rest = comp_clip_side - take
    if rest > qt[UI] or comp_clip_side > qc[CC]:
        raise UnrealizableSpec("not enough quota for the complementary mass")
    joint[UI, CC] += rest
    if comp_teacher_side > min(qt[CC], qc[UI]):
        raise UnrealizableSpec("not enough quota for the complementary mass")
    joint[CC, UI] += comp_teacher_side

    rt = qt - joint.sum(axis=1)
    rc = qc - joint.sum(axis=0)
    if rt.min() < 0 or rc.min() < 0:
        raise UnrealizableSpec("profiles cannot carry the complementary mass")
    for (i, j) in _FILL_ORDER:
        take = min(rt[i], rc[j])
        joint[i, j] += take
        rt[i] -= take
        rc[j] -= take
    if rt.sum() or rc.sum():
        raise UnrealizableSpec("cell allocation did not converge")
    return joint


def _amplitudes(spec: SynthSpec):
    k = spec.k
    a_cert = np.log(spec.certain_prob / (1 - spec.certain_prob) * (k - 1))
    a_unc = np.log(spec.uncertain_prob / (1 - spec.uncertain_prob) * (k - 1))
    # Auxiliary-branch confident logits are scaled so that the default 0.7/0.3
    # fusion flips the teacher's confident errors wherever this branch is
    # confidently correct.
    a_aux_cert = 2.5 * a_cert + 2.0
    return a_cert, a_unc, a_aux_cert


def _unit_rows(rng, rows: int, dim: int) -> np.ndarray:
    v = rng.normal(size=(rows, dim))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _build_logits(codes, labels, wrong, sim, a_cert, a_unc, dark_scale, noise, k,
                  rng):
    """Logit rows realizing the planned quadrant of each sample.

    Non-target entries carry bounded similarity bumps keyed on the true class
    so the soft targets encode the input geometry (dark knowledge). Bumps are
    capped strictly below the smallest target amplitude so the planned argmax
    can never flip regardless of K or the class geometry.
    """
    n = len(labels)
    target = np.where((codes == CC) | (codes == UC), labels, wrong)
    amp = np.where((codes == CC) | (codes == CI), a_cert, a_unc)
    cap = max(0.0, min(a_cert, a_unc) - 2.0 * noise - 0.1)
    dark = np.clip(dark_scale * np.clip(sim[labels], 0.0, None), None, cap)
    z = dark + rng.uniform(-noise, noise, size=(n, k))
    z[np.arange(n), target] = amp
    return z, target


def gen_synth(spec: SynthSpec, directory) -> BundleManifest:
    """Write a complete synthetic bundle plus planned-quadrant metadata."""
    spec.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(spec.seed)
    joint = _allocate_cells(spec)

    pairs = np.array(
        [(i, j) for i in range(4) for j in range(4) for _ in range(joint[i, j])],
        dtype=int,
    )
    rng.shuffle(pairs)
    codes_t, codes_c = pairs[:, 0], pairs[:, 1]

    labels = rng.integers(0, spec.k, size=spec.n)

    # Input prototypes with sibling structure so classes are confusable in
    # pairs; feature prototypes are independent unit vectors.
    parents = _unit_rows(rng, (spec.k + 1) // 2, spec.d_in)
    mu = parents[np.arange(spec.k) // 2] + 0.5 * rng.normal(size=(spec.k, spec.d_in))
    mu /= np.linalg.norm(mu, axis=1, keepdims=True)
    sim = mu @ mu.T
    np.fill_diagonal(sim, 0.0)
    proto_t = _unit_rows(rng, spec.k, spec.d_t)
    proto_c = _unit_rows(rng, spec.k, spec.d_c)

    a_cert, a_unc, a_aux_cert = _amplitudes(spec)
    tau = a_aux_cert + 1.0

    # Each branch picks one wrong class per sample; when both branches are
    # planned incorrect they share it and the input is drawn from that class,
    # so jointly-missed samples are genuinely ambiguous rather than arbitrary.
    wrong_t = (labels + rng.integers(1, spec.k, size=spec.n)) % spec.k
    wrong_c = (labels + rng.integers(1, spec.k, size=spec.n)) % spec.k
    both_wrong = ((codes_t == CI) | (codes_t == UI)) & \
                 ((codes_c == CI) | (codes_c == UI))
    wrong_c = np.where(both_wrong, wrong_t, wrong_c)

    z_t, pred_t = _build_logits(codes_t, labels, wrong_t, sim, a_cert, a_unc,
                                spec.dark_scale, spec.logit_noise, spec.k, rng)
    z_c, pred_c = _build_logits(codes_c, labels, wrong_c, sim, a_aux_cert,
                                a_unc, spec.dark_scale, spec.logit_noise,
                                spec.k, rng)

    jitter = rng.normal(0.0, 0.05, size=(spec.m, spec.n, spec.k))
    jitter -= jitter.mean(axis=0, keepdims=True)
    prompt_logits = (z_c[None] + jitter).astype(np.float32)
    assert np.abs(prompt_logits).max() <= tau

    src = np.where(both_wrong, wrong_t, labels)
    raw = spec.signal_scale * mu[src] + spec.input_noise * rng.normal(
        size=(spec.n, spec.d_in))
    images = np.clip(0.5 + 0.22 * raw, 0.0, 1.0).astype(np.float32)

    # Branch features follow each branch's predicted class prototype.
    f_t = (proto_t[pred_t]
           + spec.feature_noise * rng.normal(size=(spec.n, spec.d_t)))
    f_c = (proto_c[pred_c]
           + spec.feature_noise * rng.normal(size=(spec.n, spec.d_c)))

    # The construction is only valid if the realized quadrants equal the plan.
    z_t32 = z_t.astype(np.float32)
    z_c_avg = prompt_logits.mean(axis=0, dtype=np.float64).astype(np.float32)
    got_t = quadrant_codes(z_t32, labels, spec.certainty_threshold)
    got_c = quadrant_codes(z_c_avg, labels, spec.certainty_threshold)
    if not (np.array_equal(got_t, codes_t) and np.array_equal(got_c, codes_c)):
        raise UnrealizableSpec("margins too small for the planned quadrants")

    tensors = {
        "teacher_logits": CacheTensor("teacher_logits", z_t32),
        "clip_prompt_logits": CacheTensor("clip_prompt_logits", prompt_logits),
        "teacher_features": CacheTensor("teacher_features", f_t.astype(np.float32)),
        "clip_features": CacheTensor("clip_features", f_c.astype(np.float32)),
        "images": CacheTensor("images", images),
        "labels": CacheTensor("labels", labels.astype(np.int64)),
    }
    checksums = {}
    for role, t in tensors.items():
        path = directory / f"{role}.rkdc"
        cache_io.write_tensor(t, path)
        checksums[path.name] = cache_io.sha256_file(path)

    manifest = BundleManifest(
        sample_count=spec.n,
        class_count=spec.k,
        prompt_count=spec.m,
        teacher_feature_dim=spec.d_t,
        clip_feature_dim=spec.d_c,
        input_dim=spec.d_in,
        clip_temperature=float(tau),
        class_names=[f"class_{i:02d}" for i in range(spec.k)],
        checksums=checksums,
    )
    cache_io.write_manifest(manifest, directory)

    planned = {
        "teacher_counts": {q: int(c) for q, c in zip(
            ("certain_correct", "certain_incorrect",
             "uncertain_correct", "uncertain_incorrect"),
            np.bincount(codes_t, minlength=4))},
        "clip_counts": {q: int(c) for q, c in zip(
            ("certain_correct", "certain_incorrect",
             "uncertain_correct", "uncertain_incorrect"),
            np.bincount(codes_c, minlength=4))},
        "teacher_codes": codes_t.tolist(),
        "clip_codes": codes_c.tolist(),
        "joint": joint.tolist(),
        "complementarity": spec.complementarity,
    }
    (directory / PLANNED_NAME).write_text(
        json.dumps(planned, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )
    return manifest


def load_planned(directory) -> dict:
    return json.loads((Path(directory) / PLANNED_NAME).read_text(encoding="utf-8"))
