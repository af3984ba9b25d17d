"""Feed-forward student with a penultimate-feature tap, trained by SGD with
momentum against the combined objective, entirely with hand-derived gradients.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import cache_io
from .errors import (
    DivergenceDetected,
    InvalidArchitecture,
    LabelOutOfRange,
    ShapeMismatch,
)
from .fusion import (
    FeatureProjection,
    FusionConfig,
    average_prompt_logits,
    fuse_features,
    fuse_logits,
    project_features,
)
from .losses import (
    LossBreakdown,
    cross_entropy,
    cross_entropy_grad,
    feature_loss_with_grads_safe,
    kl_div,
    logit_loss_grad,
    softmax_t,
)


@dataclass
class StudentNet:
    """MLP with ReLU hidden layers and identity output.

    The feature tap is the post-activation of the final hidden layer; its
    width should match the fused-feature dimension.
    """

    sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def feature_dim(self) -> int:
        return self.sizes[-2]

    @property
    def num_classes(self) -> int:
        return self.sizes[-1]

    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def astype(self, dtype) -> "StudentNet":
        return StudentNet(
            sizes=list(self.sizes),
            weights=[w.astype(dtype) for w in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
        )


def init_student(sizes, seed: int, dtype=np.float32) -> StudentNet:
    """Deterministic uniform(+-sqrt(1/fan_in)) initialization."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 3:
        raise InvalidArchitecture("need at least one hidden layer")
    if any(s < 1 for s in sizes):
        raise InvalidArchitecture(f"non-positive layer size in {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for d_in, d_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(1.0 / d_in)
        weights.append(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype))
        biases.append(rng.uniform(-bound, bound, size=d_out).astype(dtype))
    return StudentNet(sizes=sizes, weights=weights, biases=biases)


def _forward_trace(net: StudentNet, x: np.ndarray):
    """Forward pass keeping pre-activations and activations for backprop."""
    if x.shape[-1] != net.sizes[0]:
        raise ShapeMismatch(f"input dim {x.shape[-1]} vs {net.sizes[0]}")
    acts = [x]
    pres = []
    a = x
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        s = a @ w + b
        pres.append(s)
        a = s if i == last else np.maximum(s, 0.0)
        acts.append(a)
    return pres, acts


def forward(net: StudentNet, x: np.ndarray):
    """Returns (f_s, z_s): tap features and output logits."""
    single = x.ndim == 1
    xb = x[None, :] if single else x
    _, acts = _forward_trace(net, xb)
    f_s, z_s = acts[-2], acts[-1]
    if single:
        return f_s[0], z_s[0]
    return f_s, z_s


def zero_grads(net: StudentNet, proj: FeatureProjection | None):
    g = {
        "w": [np.zeros_like(w) for w in net.weights],
        "b": [np.zeros_like(b) for b in net.biases],
    }
    if proj is not None:
        g["pw"] = np.zeros_like(proj.weight)
        g["pb"] = np.zeros_like(proj.bias)
    return g


def backward(net: StudentNet, x, y, z_f, f_t, f_c, proj: FeatureProjection | None,
             cfg: FusionConfig):
    """Analytic gradients of the total objective, mean-reduced over the batch.

    Returns (LossBreakdown, grads) where grads holds per-layer dW/db and, when
    a projection is given, its dW/db under keys 'pw'/'pb'. The fused feature
    target is recomputed from the live projection so its gradient flows.
    """
    n = x.shape[0]
    pres, acts = _forward_trace(net, x)
    f_s, z_s = acts[-2], acts[-1]

    use_feat = cfg.gamma > 0 or f_t is not None
    if use_feat:
        f_c_proj = project_features(f_c, proj) if proj is not None else f_c
        f_f = fuse_features(f_t, f_c_proj, cfg.lam)
        feat, g_fs, g_ff = feature_loss_with_grads_safe(f_s, f_f)
    else:
        feat, g_fs, g_ff = 0.0, None, None

    ce = cross_entropy(z_s, y)
    kl = kl_div(softmax_t(z_f, cfg.t_temp), softmax_t(z_s, cfg.t_temp))
    breakdown = LossBreakdown(
        ce=ce, logit_kl=kl, feat=feat,
        total=ce + cfg.beta * kl + cfg.gamma * feat,
    )

    grads = zero_grads(net, proj)
    d_z = (cross_entropy_grad(z_s, y)
           + cfg.beta * logit_loss_grad(z_f, z_s, cfg.t_temp)) / n

    last = len(net.weights) - 1
    grads["w"][last] = acts[last].T @ d_z
    grads["b"][last] = d_z.sum(axis=0)
    d_a = d_z @ net.weights[last].T
    if use_feat:
        d_a = d_a + cfg.gamma * g_fs / n
    for i in range(last - 1, -1, -1):
        d_s = d_a * (pres[i] > 0)
        grads["w"][i] = acts[i].T @ d_s
        grads["b"][i] = d_s.sum(axis=0)
        if i > 0:
            d_a = d_s @ net.weights[i].T

    if use_feat and proj is not None:
        d_proj_out = (cfg.gamma * (1.0 - cfg.lam) / n) * g_ff
        grads["pw"] = f_c.T @ d_proj_out
        grads["pb"] = d_proj_out.sum(axis=0)
    return breakdown, grads


def input_grad_ce(net: StudentNet, x: np.ndarray, y) -> np.ndarray:
    """Per-sample gradient of the cross-entropy loss wrt the input pixels."""
    pres, acts = _forward_trace(net, x)
    d = cross_entropy_grad(acts[-1], y)
    for i in range(len(net.weights) - 1, 0, -1):
        d = d @ net.weights[i].T
        d = d * (pres[i - 1] > 0)
    return d @ net.weights[0].T


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    learning_rate: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 0.0
    lr_decay_epochs: list[int] | None = None  # default: 50% and 75% of epochs
    lr_decay_factor: float = 0.1
    seed: int = 0
    precision: int = 32
    hidden_sizes: list[int] = field(default_factory=lambda: [64])
    val_fraction: float = 0.2
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def validate(self) -> None:
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad training scalars")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        self.fusion.validate()

    @property
    def dtype(self):
        return np.float64 if self.precision == 64 else np.float32

    def decay_epochs(self) -> list[int]:
        if self.lr_decay_epochs is not None:
            return self.lr_decay_epochs
        return [self.epochs // 2, (3 * self.epochs) // 4]


@dataclass
class TrainReport:
    epoch_losses: list[LossBreakdown]
    val_top1_per_epoch: list[float]
    final_top1: float
    final_top5: float
    wall_seconds: float


def evaluate(net: StudentNet, x: np.ndarray, labels: np.ndarray):
    """Top-1/top-5 accuracy in percent; ties broken by lower class index."""
    labels = np.asarray(labels)
    k = net.num_classes
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelOutOfRange(f"label outside [0, {k})")
    _, z = forward(net, x)
    return topk_accuracy(z, labels)


def topk_accuracy(z: np.ndarray, labels: np.ndarray):
    order = np.argsort(-z, axis=1, kind="stable")
    top1 = float((order[:, 0] == labels).mean() * 100.0)
    kk = min(5, z.shape[1])
    top5 = float((order[:, :kk] == labels[:, None]).any(axis=1).mean() * 100.0)
    return top1, top5


def split_train_val(n: int, val_fraction: float, seed: int):
    rng = np.random.default_rng(seed + 1)
    perm = rng.permutation(n)
    n_val = int(round(n * val_fraction))
    return perm[n_val:], perm[:n_val]


def train(manifest, arrays, cfg: TrainConfig):
    """SGD with momentum and step decay against the fused targets.

    Fused logits are computed once (both teacher branches are frozen); fused
    features are recomputed per step because the projection is trainable.
    Deterministic for a fixed seed.
    """
    cfg.validate()
    dtype = cfg.dtype
    t0 = time.perf_counter()

    x = arrays["images"].astype(dtype)
    y = arrays["labels"].astype(np.int64)
    z_t = arrays["teacher_logits"].astype(dtype)
    z_c = average_prompt_logits(arrays["clip_prompt_logits"]).astype(dtype)
    f_t = arrays["teacher_features"].astype(dtype)
    f_c = arrays["clip_features"].astype(dtype)
    fus = cfg.fusion
    z_f = fuse_logits(z_t, z_c, fus.alpha, fus.logit_norm)

    d_in, d_t = x.shape[1], f_t.shape[1]
    k = z_t.shape[1]
    sizes = [d_in, *cfg.hidden_sizes, d_t, k]
    net = init_student(sizes, cfg.seed, dtype=dtype)
    proj = FeatureProjection.init(f_c.shape[1], d_t, cfg.seed + 2, dtype=dtype)

    tr_idx, va_idx = split_train_val(len(x), cfg.val_fraction, cfg.seed)
    rng = np.random.default_rng(cfg.seed + 3)

    vel = zero_grads(net, proj)
    lr = cfg.learning_rate
    epoch_losses, val_hist = [], []
    for epoch in range(cfg.epochs):
        if epoch in cfg.decay_epochs() and epoch > 0:
            lr *= cfg.lr_decay_factor
        order = rng.permutation(tr_idx)
        sums = np.zeros(4, dtype=np.float64)
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            bd, grads = backward(
                net, x[idx], y[idx], z_f[idx], f_t[idx], f_c[idx], proj, fus
            )
            if not np.isfinite(bd.total):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}")
            sums += np.array([bd.ce, bd.logit_kl, bd.feat, bd.total]) * len(idx)
            seen += len(idx)
            _sgd_step(net, proj, grads, vel, lr, cfg.momentum, cfg.weight_decay)
        m = sums / max(seen, 1)
        epoch_losses.append(LossBreakdown(*m))
        if len(va_idx):
            t1, _ = evaluate(net, x[va_idx], y[va_idx])
        else:
            t1 = float("nan")
        val_hist.append(t1)

    if len(va_idx):
        top1, top5 = evaluate(net, x[va_idx], y[va_idx])
    else:
        top1 = top5 = float("nan")
    report = TrainReport(
        epoch_losses=epoch_losses,
        val_top1_per_epoch=val_hist,
        final_top1=top1,
        final_top5=top5,
        wall_seconds=time.perf_counter() - t0,
    )
    return net, proj, report


def _sgd_step(net, proj, grads, vel, lr, momentum, weight_decay):
    for i in range(len(net.weights)):
        g = grads["w"][i] + weight_decay * net.weights[i]
        vel["w"][i] = momentum * vel["w"][i] - lr * g
        net.weights[i] += vel["w"][i]
        gb = grads["b"][i]
        vel["b"][i] = momentum * vel["b"][i] - lr * gb
        net.biases[i] += vel["b"][i]
    if proj is not None and "pw" in grads:
        vel["pw"] = momentum * vel["pw"] - lr * grads["pw"]
        proj.weight += vel["pw"]
        vel["pb"] = momentum * vel["pb"] - lr * grads["pb"]
        proj.bias += vel["pb"]


def save_student(net: StudentNet, directory) -> None:
    """Serialize parameters as cache tensors plus a small architecture manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pairs = {
        "sizes": ",".join(str(s) for s in net.sizes),
        "layers": str(len(net.weights)),
    }
    (directory / "student.txt").write_text(cache_io.format_kv(pairs), encoding="utf-8")
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        cache_io.write_tensor(
            cache_io.CacheTensor(f"student_w{i}", w.astype(np.float32)),
            directory / f"student_w{i}.rkdc",
        )
        cache_io.write_tensor(
            cache_io.CacheTensor(f"student_b{i}", b.astype(np.float32)),
            directory / f"student_b{i}.rkdc",
        )


def load_student(directory, dtype=np.float32) -> StudentNet:
    directory = Path(directory)
    pairs = cache_io.parse_kv((directory / "student.txt").read_text(encoding="utf-8"))
    sizes = [int(s) for s in pairs["sizes"].split(",")]
    layers = int(pairs["layers"])
    weights, biases = [], []
    for i in range(layers):
        weights.append(
            cache_io.read_tensor(directory / f"student_w{i}.rkdc").data.astype(dtype)
        )
        biases.append(
            cache_io.read_tensor(directory / f"student_b{i}.rkdc").data.astype(dtype)
        )
    return StudentNet(sizes=sizes, weights=weights, biases=biases)
