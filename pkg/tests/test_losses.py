"""Analytic values, invariances, and finite-difference gradient checks for
the loss components."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kdfuse.errors import (
    DomainError,
    LabelOutOfRange,
    ShapeMismatch,
    ZeroNormFeature,
)
from kdfuse.fusion import FusionConfig
from kdfuse.losses import (
    cross_entropy,
    cross_entropy_grad,
    feature_loss,
    feature_loss_grads,
    feature_loss_with_grads_safe,
    kl_div,
    logit_loss,
    logit_loss_grad,
    softmax_t,
    total_loss,
)

FD_STEP = 1e-4


def central_diff(f, x, step=FD_STEP):
    """Central finite differences of a scalar function over a flat array."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        hi, lo = x.copy(), x.copy()
        hi[idx] += step
        lo[idx] -= step
        g[idx] = (f(hi) - f(lo)) / (2 * step)
    return g


def rel_err(a, b):
    denom = max(np.abs(a).max(), np.abs(b).max(), 1e-8)
    return np.abs(a - b).max() / denom


# ---------------------------------------------------------------------------
# softmax


def test_softmax_symmetry():
    np.testing.assert_allclose(softmax_t(np.array([0.0, 0.0]), 2.0), [0.5, 0.5])


def test_softmax_analytic():
    np.testing.assert_allclose(
        softmax_t(np.array([math.log(2.0), 0.0]), 1.0), [2 / 3, 1 / 3],
        rtol=1e-12)


def test_softmax_high_temperature_flattens():
    p = softmax_t(np.array([1.0, 0.0]), 100.0)
    np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-2)


def test_softmax_rejects_bad_temperature():
    with pytest.raises(DomainError):
        softmax_t(np.zeros(3), 0.0)


def test_softmax_stable_at_large_logits():
    p = softmax_t(np.array([1000.0, 0.0]), 1.0)
    assert np.isfinite(p).all()
    np.testing.assert_allclose(p.sum(), 1.0, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), c=st.floats(-50, 50), t=st.floats(0.1, 20))
def test_softmax_shift_invariance(seed, c, t):
    z = np.random.default_rng(seed).normal(size=6)
    np.testing.assert_allclose(softmax_t(z + c, t), softmax_t(z, t), atol=1e-6)


# ---------------------------------------------------------------------------
# KL divergence


def test_kl_zero_on_equal(rng):
    p = softmax_t(rng.normal(size=5), 1.0)
    assert kl_div(p, p) == pytest.approx(0.0, abs=1e-12)


def test_kl_analytic_ln2():
    assert kl_div(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == \
        pytest.approx(math.log(2.0), rel=1e-12)


def test_kl_domain_error():
    with pytest.raises(DomainError):
        kl_div(np.array([0.5, 0.5]), np.array([1.0, 0.0]))


def test_kl_matches_high_precision_oracle(rng):
    for _ in range(50):
        p = softmax_t(rng.normal(size=8), 1.0)
        q = softmax_t(rng.normal(size=8), 1.0)
        want = math.fsum(
            float(pi) * (math.log(pi) - math.log(qi)) for pi, qi in zip(p, q))
        assert kl_div(p, q) == pytest.approx(want, rel=1e-6)


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_kl_nonnegative_and_discriminating(seed):
    r = np.random.default_rng(seed)
    p = softmax_t(r.normal(size=5), 1.0)
    q = softmax_t(r.normal(size=5), 1.0)
    v = kl_div(p, q)
    assert v >= 0.0
    if v < 1e-9:
        np.testing.assert_allclose(p, q, atol=1e-4)


def test_kl_batch_is_mean_of_rows(rng):
    p = softmax_t(rng.normal(size=(6, 4)), 1.0)
    q = softmax_t(rng.normal(size=(6, 4)), 1.0)
    rows = [kl_div(p[i], q[i]) for i in range(6)]
    assert kl_div(p, q) == pytest.approx(np.mean(rows), rel=1e-12)


# ---------------------------------------------------------------------------
# logit loss


def test_logit_loss_zero_at_match(rng):
    z = rng.normal(size=(4, 5))
    assert logit_loss(z, z, 3.0) == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(
        logit_loss_grad(z, z, 3.0), np.zeros_like(z), atol=1e-12)


def test_logit_loss_matches_composition_oracle(rng):
    z_f = rng.normal(size=(10, 6))
    z_s = rng.normal(size=(10, 6))
    want = kl_div(softmax_t(z_f, 3.0), softmax_t(z_s, 3.0))
    assert logit_loss(z_f, z_s, 3.0) == pytest.approx(want, rel=1e-6)


def test_logit_loss_shift_invariance(rng):
    z_f = rng.normal(size=(5, 4))
    z_s = rng.normal(size=(5, 4))
    base = logit_loss(z_f, z_s, 3.0)
    assert logit_loss(z_f + 7.3, z_s, 3.0) == pytest.approx(base, abs=1e-6)
    assert logit_loss(z_f, z_s - 2.1, 3.0) == pytest.approx(base, abs=1e-6)


def test_logit_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        logit_loss(np.zeros((2, 3)), np.zeros((2, 4)), 3.0)


# ---------------------------------------------------------------------------
# cross-entropy


def test_cross_entropy_uniform_is_log_k():
    for k in (2, 5, 10):
        assert cross_entropy(np.zeros(k), 0) == pytest.approx(math.log(k),
                                                              rel=1e-12)


def test_cross_entropy_saturated():
    z = np.zeros(4)
    z[2] = 30.0
    assert cross_entropy(z, 2) < 1e-9


def test_cross_entropy_label_out_of_range():
    with pytest.raises(LabelOutOfRange):
        cross_entropy(np.zeros(3), 3)


def test_cross_entropy_matches_oracle(rng):
    z = rng.normal(size=9)
    y = 4
    want = -math.log(float(softmax_t(z.astype(np.float64), 1.0)[y]))
    assert cross_entropy(z, y) == pytest.approx(want, rel=1e-6)


# ---------------------------------------------------------------------------
# feature loss


def test_feature_loss_parallel_orthogonal_antiparallel():
    v = np.array([1.0, 2.0, 0.0])
    assert feature_loss(v, v) == pytest.approx(0.0, abs=1e-12)
    assert feature_loss(np.array([1.0, 0.0]), np.array([0.0, 3.0])) == \
        pytest.approx(1.0, abs=1e-12)
    assert feature_loss(v, -v) == pytest.approx(2.0, abs=1e-12)


def test_feature_loss_zero_norm_error():
    with pytest.raises(ZeroNormFeature):
        feature_loss(np.zeros(3), np.ones(3))


def test_feature_loss_scale_invariance(rng):
    a = rng.normal(size=6)
    b = rng.normal(size=6)
    assert feature_loss(3.0 * a, 0.5 * b) == pytest.approx(
        feature_loss(a, b), rel=1e-9)


def test_feature_loss_safe_variant_handles_dead_rows():
    f_s = np.array([[0.0, 0.0], [1.0, 0.0]])
    f_f = np.array([[1.0, 1.0], [1.0, 0.0]])
    loss, g_fs, g_ff = feature_loss_with_grads_safe(f_s, f_f)
    assert loss == pytest.approx(0.5)  # (1 + 0) / 2
    assert np.array_equal(g_fs[0], [0.0, 0.0])
    with pytest.raises(ZeroNormFeature):
        feature_loss_with_grads_safe(f_f, f_s)  # zero-norm *target* still fatal


# ---------------------------------------------------------------------------
# total loss


def test_total_loss_degenerate_weights(rng):
    cfg = FusionConfig(beta=0.0, gamma=0.0)
    z_s = rng.normal(size=(3, 4))
    bd = total_loss(z_s, rng.normal(size=(3, 4)),
                    rng.normal(size=(3, 5)), rng.normal(size=(3, 5)),
                    np.array([0, 1, 2]), cfg)
    assert bd.total == pytest.approx(bd.ce, rel=1e-12)


def test_total_loss_weighted_sum(rng):
    cfg = FusionConfig()  # beta=3, gamma=0.8
    z_s = rng.normal(size=(6, 5))
    z_f = rng.normal(size=(6, 5))
    f_s = rng.normal(size=(6, 4))
    f_f = rng.normal(size=(6, 4))
    y = rng.integers(0, 5, size=6)
    bd = total_loss(z_s, z_f, f_s, f_f, y, cfg)
    assert bd.total == pytest.approx(bd.ce + 3.0 * bd.logit_kl + 0.8 * bd.feat,
                                     abs=1e-6)
    assert all(v >= 0 and np.isfinite(v)
               for v in (bd.ce, bd.logit_kl, bd.feat, bd.total))


def test_weighted_sum_arithmetic():
    # components (0.5, 0.2, 0.1) with beta=3, gamma=0.8 -> 1.18
    assert 0.5 + 3.0 * 0.2 + 0.8 * 0.1 == pytest.approx(1.18)


# ---------------------------------------------------------------------------
# gradient checks (the decisive numerical tests)


def test_cross_entropy_grad_finite_difference(rng):
    for _ in range(40):
        z = rng.normal(size=7)
        y = int(rng.integers(0, 7))
        got = cross_entropy_grad(z, y)
        want = central_diff(lambda v: cross_entropy(v, y), z)
        assert rel_err(got, want) <= 1e-5


def test_logit_loss_grad_finite_difference(rng):
    for _ in range(40):
        z_f = rng.normal(size=6)
        z_s = rng.normal(size=6)
        got = logit_loss_grad(z_f, z_s, 3.0)
        want = central_diff(lambda v: logit_loss(z_f, v, 3.0), z_s)
        assert rel_err(got, want) <= 1e-5


def test_feature_loss_grads_finite_difference(rng):
    for _ in range(40):
        f_s = rng.normal(size=5)
        f_f = rng.normal(size=5)
        g_fs, g_ff = feature_loss_grads(f_s, f_f)
        want_s = central_diff(lambda v: feature_loss(v, f_f), f_s)
        want_f = central_diff(lambda v: feature_loss(f_s, v), f_f)
        assert rel_err(g_fs, want_s) <= 1e-5
        assert rel_err(g_ff, want_f) <= 1e-5


def test_total_loss_grads_finite_difference(rng):
    """Analytic gradient of the combined objective wrt student logits and
    student features, against central differences, on >= 100 instances in
    total across the gradient tests."""
    cfg = FusionConfig()
    for _ in range(30):
        z_s = rng.normal(size=(4, 5))
        z_f = rng.normal(size=(4, 5))
        f_s = rng.normal(size=(4, 3))
        f_f = rng.normal(size=(4, 3))
        y = rng.integers(0, 5, size=4)

        got_z = (cross_entropy_grad(z_s, y)
                 + cfg.beta * logit_loss_grad(z_f, z_s, cfg.t_temp)) / 4
        want_z = central_diff(
            lambda v: total_loss(v, z_f, f_s, f_f, y, cfg).total, z_s)
        assert rel_err(got_z, want_z) <= 1e-5

        g_fs, _ = feature_loss_grads(f_s, f_f)
        got_f = cfg.gamma * g_fs / 4
        want_f = central_diff(
            lambda v: total_loss(z_s, z_f, v, f_f, y, cfg).total, f_s)
        assert rel_err(got_f, want_f) <= 1e-5
