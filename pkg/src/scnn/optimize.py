"""Parameter initialization, optimizers, the training loop, and evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scnn import ops
from scnn.autograd import backward, cross_entropy
from scnn.network import (
    NetworkSpec,
    Parameters,
    ShortcutIndicator,
    fcl_size,
    forward,
    validate_spec,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    batch_size: int = 100
    max_iterations: int = 1000
    base_lr: float = 0.001
    bias_lr_multiplier: float = 2.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    optimizer: str = "sgd_momentum"
    init: str = "xavier"
    rng_seed: int = 0
    deterministic: bool = True
    snapshot_interval: int = 0  # 0 disables periodic snapshots

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError("momentum must lie in [0, 1)")
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.init not in ("xavier", "msra"):
            raise ValueError(f"unknown init {self.init!r}")


@dataclass
class OptimizerState:
    """Per-parameter buffers mirroring the Parameters layout.

    sgd_momentum keeps one velocity buffer per array; adam keeps first
    and second moment buffers plus the shared step counter ``t``.
    """

    kind: str
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: Parameters, kind: str) -> "OptimizerState":
        state = cls(kind=kind)
        for name, arr in params.named_arrays():
            if kind == "sgd_momentum":
                state.velocity[name] = np.zeros_like(arr)
            elif kind == "adam":
                state.m[name] = np.zeros_like(arr)
                state.v[name] = np.zeros_like(arr)
            else:
                raise ValueError(f"unknown optimizer {kind!r}")
        return state


def init_params(
    spec: NetworkSpec, si: ShortcutIndicator, method: str = "xavier", seed: int = 0
) -> Parameters:
    """Seeded weight initialization; biases start at zero.

    xavier draws uniformly on (-a, a) with a = sqrt(3 / fan_in); msra
    draws from a zero-mean normal with std sqrt(2 / fan_in).  fan_in is
    in_channels * kh * kw for conv kernels and the FCL length for the
    output layer.
    """
    validate_spec(spec, si)
    if method not in ("xavier", "msra"):
        raise ValueError(f"unknown init {method!r}")
    rng = np.random.default_rng(seed)
    dtype = ops.default_dtype()

    def draw(shape, fan_in):
        if method == "xavier":
            bound = np.sqrt(3.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)
        return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

    conv_w, conv_b = [], []
    in_c = spec.input_shape[0]
    for conv, _ in spec.pairs:
        kh, kw = conv.kernel
        conv_w.append(draw((conv.out_channels, in_c, kh, kw), in_c * kh * kw))
        conv_b.append(np.zeros(conv.out_channels, dtype=dtype))
        in_c = conv.out_channels
    f = fcl_size(spec, si)
    return Parameters(
        conv_w,
        conv_b,
        draw((spec.num_classes, f), f),
        np.zeros(spec.num_classes, dtype=dtype),
    )


def _is_bias(name: str) -> bool:
    return name.endswith(".bias")


def sgd_step(
    params: Parameters, grads: Parameters, state: OptimizerState, cfg: TrainConfig
) -> None:
    """Momentum update in place: v <- mu*v - lr*(g + lambda*theta); theta += v.

    Weight decay applies to weights only; biases use the bias learning
    rate multiplier and no decay.
    """
    grad_map = dict(grads.named_arrays())
    for name, p in params.named_arrays():
        g = grad_map[name]
        if p.shape != g.shape:
            raise ops.ShapeError(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
        lr = cfg.base_lr * (cfg.bias_lr_multiplier if _is_bias(name) else 1.0)
        decay = 0.0 if _is_bias(name) else cfg.weight_decay
        v = state.velocity[name]
        v *= cfg.momentum
        v -= lr * (g + decay * p)
        p += v


def adam_step(
    params: Parameters, grads: Parameters, state: OptimizerState, cfg: TrainConfig
) -> None:
    """Bias-corrected first/second-moment update in place.

    Weight decay is added to the gradient before the moment updates,
    weights only.
    """
    state.t += 1
    grad_map = dict(grads.named_arrays())
    for name, p in params.named_arrays():
        g = grad_map[name]
        if p.shape != g.shape:
            raise ops.ShapeError(f"{name}: gradient shape {g.shape} != parameter {p.shape}")
        if not _is_bias(name) and cfg.weight_decay:
            g = g + cfg.weight_decay * p
        lr = cfg.base_lr * (cfg.bias_lr_multiplier if _is_bias(name) else 1.0)
        m = state.m[name]
        v = state.v[name]
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        m_hat = m / (1.0 - ADAM_BETA1 ** state.t)
        v_hat = v / (1.0 - ADAM_BETA2 ** state.t)
        p -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


_STEP_FNS = {"sgd_momentum": sgd_step, "adam": adam_step}


@dataclass
class HistoryRecord:
    iteration: int
    mean_loss: float
    test_accuracy: float | None = None


def train(
    spec: NetworkSpec,
    si: ShortcutIndicator,
    dataset,
    cfg: TrainConfig,
    eval_dataset=None,
    eval_interval: int = 0,
    callbacks: tuple = (),
    initial_params: Parameters | None = None,
) -> tuple[Parameters, list[HistoryRecord]]:
    """Mini-batch training loop.

    The training set is reshuffled at every epoch boundary with a
    generator seeded from ``cfg.rng_seed``, so the whole trajectory is a
    deterministic function of the config.  Each iteration draws the next
    mini-batch, runs forward and backward, and applies one optimizer
    step.  ``callbacks`` are called as cb(iteration, params, record) on
    every iteration (snapshot hooks live in the CLI).
    """
    validate_spec(spec, si)
    n = dataset.images.shape[0]
    if n == 0:
        raise ValueError("dataset is empty")
    if dataset.images.shape[1:] != spec.input_shape:
        raise ops.ShapeError(
            f"dataset images {dataset.images.shape[1:]} do not match network input {spec.input_shape}"
        )
    params = initial_params.copy() if initial_params is not None else init_params(
        spec, si, cfg.init, cfg.rng_seed
    )
    state = OptimizerState.for_params(params, cfg.optimizer)
    step_fn = _STEP_FNS[cfg.optimizer]
    rng = np.random.default_rng(cfg.rng_seed)
    dtype = ops.default_dtype()
    eye = np.eye(spec.num_classes, dtype=dtype)

    history: list[HistoryRecord] = []
    it = 0
    perm = rng.permutation(n)
    pos = 0
    while it < cfg.max_iterations:
        if pos >= n:
            perm = rng.permutation(n)
            pos = 0
        idx = perm[pos : pos + cfg.batch_size]
        pos += cfg.batch_size
        x = dataset.images[idx].astype(dtype, copy=False)
        y = eye[dataset.labels[idx]]
        cache = forward(spec, params, si, x)
        loss = cross_entropy(cache.probs, y)
        _, grads = backward(spec, params, si, cache, y)
        step_fn(params, grads, state, cfg)
        it += 1
        record = HistoryRecord(iteration=it, mean_loss=loss)
        if eval_dataset is not None and eval_interval and it % eval_interval == 0:
            record.test_accuracy, _ = evaluate(spec, si, params, eval_dataset)
        history.append(record)
        for cb in callbacks:
            cb(it, params, record)
    return params, history


def evaluate(
    spec: NetworkSpec,
    si: ShortcutIndicator,
    params: Parameters,
    dataset,
    batch_size: int = 256,
) -> tuple[float, np.ndarray]:
    """Accuracy and per-class confusion counts on a labelled dataset.

    Predictions are the argmax of the softmax output, ties broken toward
    the lower class index.  confusion[true, predicted] sums to N.
    """
    n = dataset.images.shape[0]
    c = spec.num_classes
    confusion = np.zeros((c, c), dtype=np.int64)
    dtype = ops.default_dtype()
    correct = 0
    for start in range(0, n, batch_size):
        x = dataset.images[start : start + batch_size].astype(dtype, copy=False)
        labels = dataset.labels[start : start + batch_size]
        cache = forward(spec, params, si, x)
        preds = cache.probs.argmax(axis=1)
        correct += int((preds == labels).sum())
        np.add.at(confusion, (labels, preds), 1)
    return correct / n, confusion
