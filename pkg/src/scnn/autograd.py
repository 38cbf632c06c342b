"""Loss, layer sensitivities, parameter derivatives, and their verifier.

The backward pass is hand-derived for the alternating conv/pool
architecture with a concatenated fully-connected layer:

* output sensitivity: delta = probs - targets (softmax and cross-entropy
  fold into one term, so no extra softmax derivative is applied to the
  FCL sensitivity);
* the FCL sensitivity splits back into one slice per concatenated layer;
* a pooling layer's sensitivity is the correlation-adjoint of the next
  conv layer plus its own FCL slice (LRN backward interposed when LRN is
  enabled);
* a conv layer's sensitivity multiplies the activation derivative into
  the sum of the unpooled term and its own FCL slice, since the FCL
  stores post-activation values.

Every formula here is checked against central finite differences by
``grad_check`` and the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from scnn import ops
from scnn.network import (
    ForwardCache,
    Gradients,
    NetworkSpec,
    Parameters,
    ShortcutIndicator,
    activation_deriv,
    fcl_layout,
    forward,
    included_layers,
    lrn_backward,
)

LOG_CLAMP = 1e-12


@dataclass
class Sensitivities:
    """Backpropagated errors for every layer of one batch.

    ``layers[k-1]`` is the sensitivity of hidden layer k (1-based): the
    pre-activation delta for conv layers and the post-LRN delta for
    pooling layers, each shaped like the layer's activation.
    """

    output: np.ndarray
    fcl: np.ndarray
    layers: list[np.ndarray]
    fc_slices: dict[int, np.ndarray]


def cross_entropy(o: np.ndarray, y: np.ndarray) -> float:
    """Cross-entropy of predicted distributions against one-hot targets.

    Probabilities are clamped at 1e-12 before the log so saturated
    float32 outputs cannot produce infinities.  Batches report the mean
    over samples.
    """
    o = np.asarray(o)
    y = np.asarray(y)
    if o.shape != y.shape:
        raise ops.ShapeError(f"prediction/target length mismatch: {o.shape} vs {y.shape}")
    per_sample = -(y * np.log(np.maximum(o, LOG_CLAMP))).sum(axis=-1)
    return float(per_sample.mean()) if per_sample.ndim else float(per_sample)


def output_delta(o: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Sensitivity of the softmax/cross-entropy head: o - y."""
    o = np.asarray(o)
    y = np.asarray(y)
    if o.shape != y.shape:
        raise ops.ShapeError(f"prediction/target length mismatch: {o.shape} vs {y.shape}")
    return o - y


def split_fcl_delta(
    delta_fcl: np.ndarray, spec: NetworkSpec, si: ShortcutIndicator
) -> dict[int, np.ndarray]:
    """Split an FCL sensitivity back into per-layer slices.

    Returns {layer index: flat slice} for every concatenated layer, in
    the same order and flattening as the forward concatenation.  Layers
    without a shortcut get no entry (their slice is implicitly zero).
    """
    delta_fcl = np.asarray(delta_fcl)
    layout = fcl_layout(spec, si)
    total = sum(size for _, _, size in layout)
    if delta_fcl.shape[-1] != total:
        raise ops.ShapeError(
            f"FCL delta length {delta_fcl.shape[-1]} does not match layout total {total}"
        )
    slices: dict[int, np.ndarray] = {}
    offset = 0
    for layer, _, size in layout:
        slices[layer] = delta_fcl[..., offset : offset + size]
        offset += size
    return slices


def backward(
    spec: NetworkSpec,
    params: Parameters,
    si: ShortcutIndicator,
    cache: ForwardCache,
    y_batch: np.ndarray,
) -> tuple[Sensitivities, Gradients]:
    """Sensitivities of every layer and mean parameter gradients.

    ``cache`` must come from ``forward`` on the same (spec, params, si).
    ``y_batch`` is either one-hot (N, C) or integer labels (N,).
    Gradients are averaged over the batch.
    """
    n = cache.x.shape[0]
    y = np.asarray(y_batch)
    if y.ndim == 1:
        eye = np.eye(spec.num_classes, dtype=cache.probs.dtype)
        y = eye[y]
    if y.shape != cache.probs.shape:
        raise ops.ShapeError(f"target shape {y.shape} does not match output {cache.probs.shape}")

    d_out = output_delta(cache.probs, y)
    g_out_w = d_out.T @ cache.fcl / n
    g_out_b = d_out.sum(axis=0) / n
    d_fcl = d_out @ params.output_weight
    slices = split_fcl_delta(d_fcl, spec, si)

    r = spec.r
    deltas: list[np.ndarray | None] = [None] * (2 * r)
    g_conv_w: list[np.ndarray | None] = [None] * r
    g_conv_b: list[np.ndarray | None] = [None] * r

    def slice_as(layer: int, like: np.ndarray) -> np.ndarray:
        return slices[layer].reshape(like.shape)

    d_post = slice_as(2 * r, cache.pool_act[-1])
    for k in range(r, 0, -1):
        conv, pool = spec.pairs[k - 1]
        deltas[2 * k - 1] = d_post
        if pool.lrn is not None:
            d_pre = lrn_backward(d_post, cache.pool_raw[k - 1], cache.lrn_scales[k - 1], pool.lrn)
        else:
            d_pre = d_post
        act_hw = cache.conv_act[k - 1].shape[-2:]
        d_act = ops.pool_backward(
            d_pre, cache.pool_routes[k - 1], act_hw, pool.window, pool.stride, pool.mode
        )
        if si.bits[2 * k - 2] == 1:
            d_act = d_act + slice_as(2 * k - 1, d_act)
        d_u = ops.hadamard(activation_deriv(cache.conv_pre[k - 1], conv.activation), d_act)
        deltas[2 * k - 2] = d_u
        x_in = cache.pool_act[k - 2] if k > 1 else cache.x
        d_x, d_w, d_b = ops.conv_backward(
            x_in, params.conv_weights[k - 1], d_u, conv.pad, conv.stride, need_input_grad=k > 1
        )
        g_conv_w[k - 1] = d_w / n
        g_conv_b[k - 1] = d_b / n
        if k > 1:
            d_post = d_x
            if si.bits[2 * (k - 1) - 1] == 1:
                d_post = d_post + slice_as(2 * (k - 1), d_post)

    sens = Sensitivities(output=d_out, fcl=d_fcl, layers=deltas, fc_slices=slices)
    grads = Gradients(g_conv_w, g_conv_b, g_out_w, g_out_b)
    return sens, grads


@dataclass
class GradCheckGroup:
    name: str
    max_rel_err: float
    mean_rel_err: float
    n_params: int
    n_dead: int


@dataclass
class GradCheckReport:
    """Per-parameter-group comparison of analytic vs numerical gradients."""

    groups: list[GradCheckGroup]
    epsilon: float
    batch_size: int
    seed: int

    @property
    def max_rel_err(self) -> float:
        return max((g.max_rel_err for g in self.groups), default=0.0)

    def passed(self, threshold: float = 1e-5) -> bool:
        return self.max_rel_err <= threshold

    def as_text(self, threshold: float | None = None) -> str:
        lines = [
            f"{'group':<16} {'max_rel_err':>12} {'mean_rel_err':>13} {'params':>7} {'dead':>5}"
        ]
        for g in self.groups:
            lines.append(
                f"{g.name:<16} {g.max_rel_err:>12.3e} {g.mean_rel_err:>13.3e}"
                f" {g.n_params:>7d} {g.n_dead:>5d}"
            )
        lines.append(f"overall max relative error: {self.max_rel_err:.3e}")
        if threshold is not None:
            verdict = "PASS" if self.passed(threshold) else "FAIL"
            lines.append(f"threshold {threshold:.1e}: {verdict}")
        return "\n".join(lines)


def _count_params(params: Parameters) -> int:
    return sum(arr.size for _, arr in params.named_arrays())


def grad_check(
    spec: NetworkSpec,
    si: ShortcutIndicator,
    seed: int = 0,
    epsilon: float = 1e-5,
    batch_size: int = 4,
    params: Parameters | None = None,
    max_reseeds: int = 20,
) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    Perturbs every scalar parameter of a seeded random network on a fixed
    random batch, always in float64.  Relative error per scalar is
    |a - n| / max(|a|, |n|, 1e-8).  Entries where both sides vanish (e.g.
    an all-dead relu region) are counted as dead, not failed.

    Inputs are re-drawn if any relu pre-activation sits within 1e-6 of
    its kink, where finite differences are meaningless.
    """
    from scnn.optimize import init_params  # local import to avoid a cycle

    rng = np.random.default_rng(seed)
    if params is None:
        params = init_params(spec, si, "xavier", seed=rng.integers(2**31))
    params = params.astype(np.float64)

    c, h, w = spec.input_shape
    labels = rng.integers(0, spec.num_classes, size=batch_size)
    y = np.eye(spec.num_classes)[labels]
    has_relu = any(conv.activation == "relu" for conv, _ in spec.pairs)
    for _ in range(max_reseeds):
        x = rng.standard_normal((batch_size, c, h, w))
        cache = forward(spec, params, si, x)
        if not has_relu:
            break
        margins = [
            np.abs(u).min()
            for u, (conv, _) in zip(cache.conv_pre, spec.pairs)
            if conv.activation == "relu"
        ]
        if min(margins) > 1e-6:
            break

    _, grads = backward(spec, params, si, cache, y)

    def loss() -> float:
        return cross_entropy(forward(spec, params, si, x).probs, y)

    groups: list[GradCheckGroup] = []
    analytic = dict(grads.named_arrays())
    for name, arr in params.named_arrays():
        a_flat = analytic[name].ravel()
        flat = arr.ravel()
        rel = np.zeros(flat.size)
        dead = 0
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            plus = loss()
            flat[i] = orig - epsilon
            minus = loss()
            flat[i] = orig
            numeric = (plus - minus) / (2 * epsilon)
            a = a_flat[i]
            if abs(a) < 1e-12 and abs(numeric) < 1e-12:
                dead += 1
                continue
            rel[i] = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        groups.append(
            GradCheckGroup(
                name=name,
                max_rel_err=float(rel.max(initial=0.0)),
                mean_rel_err=float(rel.mean()) if flat.size else 0.0,
                n_params=flat.size,
                n_dead=dead,
            )
        )
    return GradCheckReport(groups=groups, epsilon=epsilon, batch_size=batch_size, seed=seed)
