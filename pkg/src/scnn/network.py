"""Architecture description, shortcut indicators, and the forward pass.

A network is r conv/pool pairs followed by one fully-connected layer and
a softmax output.  The fully-connected layer is the concatenation of the
flattened activations of a subset of the 2r conv/pool layers: layer k
(1-based, odd = conv, even = pool) is included when bit k of the shortcut
indicator is 1, and the last pooling layer (index 2r, which has no bit)
is always included.  Within a layer, flattening is channel-major, then
row-major.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from scnn import ops


class SpecError(ValueError):
    """Raised when an architecture or shortcut indicator is inconsistent."""


@dataclass(frozen=True)
class ShortcutIndicator:
    """Bitstring selecting which of the first 2r-1 layers feed the FCL."""

    bits: tuple[int, ...]

    def __post_init__(self):
        if any(b not in (0, 1) for b in self.bits):
            raise SpecError(f"shortcut indicator bits must be 0/1, got {self.bits}")

    @classmethod
    def from_string(cls, s: str) -> "ShortcutIndicator":
        if not s or any(ch not in "01" for ch in s):
            raise SpecError(f"shortcut indicator must be a nonempty 0/1 string, got {s!r}")
        return cls(tuple(int(ch) for ch in s))

    @classmethod
    def zeros(cls, r: int) -> "ShortcutIndicator":
        return cls((0,) * (2 * r - 1))

    @classmethod
    def all_styles(cls, r: int):
        """All 2^(2r-1) indicators in canonical binary order."""
        n = 2 * r - 1
        for value in range(2 ** n):
            yield cls.from_string(format(value, f"0{n}b"))

    def __str__(self) -> str:
        return "".join(str(b) for b in self.bits)

    def __len__(self) -> int:
        return len(self.bits)


@dataclass(frozen=True)
class LrnConfig:
    """Cross-channel divisive normalization constants."""

    local_size: int = 5
    alpha: float = 1e-4
    beta: float = 0.75
    k: float = 1.0

    def __post_init__(self):
        if self.local_size < 1 or self.local_size % 2 == 0:
            raise SpecError(f"lrn local_size must be odd and positive, got {self.local_size}")
        if self.beta <= 0:
            raise SpecError("lrn beta must be > 0")


@dataclass(frozen=True)
class ConvSpec:
    out_channels: int
    kernel: tuple[int, int]
    stride: int = 1
    pad: tuple[int, int, int, int] = (0, 0, 0, 0)  # top, bottom, left, right
    activation: str = "relu"

    def __post_init__(self):
        if self.out_channels < 1:
            raise SpecError("conv out_channels must be >= 1")
        if self.stride < 1:
            raise SpecError("conv stride must be >= 1")
        if self.activation not in ("relu", "sigmoid"):
            raise SpecError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class PoolSpec:
    window: int
    stride: int
    mode: str = "max"
    ceil_mode: bool = False
    lrn: LrnConfig | None = None

    def __post_init__(self):
        if self.window < 1 or self.stride < 1:
            raise SpecError("pool window and stride must be >= 1")
        if self.mode not in ("max", "avg"):
            raise SpecError(f"unknown pooling mode {self.mode!r}")


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative architecture: input shape, conv/pool pairs, class count."""

    input_shape: tuple[int, int, int]  # channels, height, width
    num_classes: int
    pairs: tuple[tuple[ConvSpec, PoolSpec], ...]

    def __post_init__(self):
        if self.num_classes < 2:
            raise SpecError("num_classes must be >= 2")
        if not self.pairs:
            raise SpecError("network needs at least one conv/pool pair")

    @property
    def r(self) -> int:
        return len(self.pairs)


@dataclass
class Parameters:
    """Trainable arrays: one kernel bank and bias per conv layer, plus the
    output layer's weight matrix and bias.  ``Gradients`` share this layout."""

    conv_weights: list[np.ndarray]
    conv_biases: list[np.ndarray]
    output_weight: np.ndarray
    output_bias: np.ndarray

    def named_arrays(self):
        """(name, array) pairs in a fixed order; names are stable across
        optimizers, gradient checks, and checkpoints."""
        for k, (w, b) in enumerate(zip(self.conv_weights, self.conv_biases), start=1):
            yield f"conv{k}.weight", w
            yield f"conv{k}.bias", b
        yield "output.weight", self.output_weight
        yield "output.bias", self.output_bias

    def copy(self) -> "Parameters":
        return Parameters(
            [w.copy() for w in self.conv_weights],
            [b.copy() for b in self.conv_biases],
            self.output_weight.copy(),
            self.output_bias.copy(),
        )

    def astype(self, dtype) -> "Parameters":
        return Parameters(
            [w.astype(dtype) for w in self.conv_weights],
            [b.astype(dtype) for b in self.conv_biases],
            self.output_weight.astype(dtype),
            self.output_bias.astype(dtype),
        )

    def zeros_like(self) -> "Parameters":
        return Parameters(
            [np.zeros_like(w) for w in self.conv_weights],
            [np.zeros_like(b) for b in self.conv_biases],
            np.zeros_like(self.output_weight),
            np.zeros_like(self.output_bias),
        )


Gradients = Parameters


@dataclass
class ForwardCache:
    """Everything the backward pass needs from one forward pass.

    Lists are indexed by conv/pool pair (0-based).  ``pool_act`` holds the
    values that actually flow upward and into the FCL (post-LRN when LRN
    is enabled); ``pool_raw`` holds the pre-LRN pooled values.
    """

    x: np.ndarray
    conv_pre: list[np.ndarray] = field(default_factory=list)
    conv_act: list[np.ndarray] = field(default_factory=list)
    pool_raw: list[np.ndarray] = field(default_factory=list)
    pool_routes: list[ops.PoolingRouteMap] = field(default_factory=list)
    pool_act: list[np.ndarray] = field(default_factory=list)
    lrn_scales: list[np.ndarray | None] = field(default_factory=list)
    fcl: np.ndarray | None = None
    logits: np.ndarray | None = None
    probs: np.ndarray | None = None

    def layer_value(self, layer: int) -> np.ndarray:
        """Activation of hidden layer ``layer`` (1-based; odd conv, even pool)."""
        pair = (layer - 1) // 2
        return self.conv_act[pair] if layer % 2 == 1 else self.pool_act[pair]


def conv_output_hw(h: int, w: int, conv: ConvSpec) -> tuple[int, int]:
    pt, pb, pl, pr = conv.pad
    kh, kw = conv.kernel
    oh = (h + pt + pb - kh) // conv.stride + 1
    ow = (w + pl + pr - kw) // conv.stride + 1
    return oh, ow


def validate_spec(spec: NetworkSpec, si: ShortcutIndicator) -> list[tuple[int, int, int]]:
    """Check spec/indicator consistency and return the layer shape chain.

    The result lists (channels, height, width) for hidden layers 1..2r.
    Raises SpecError on an indicator of the wrong length or any layer
    whose computed output shape is not positive.
    """
    if len(si) != 2 * spec.r - 1:
        raise SpecError(
            f"shortcut indicator length {len(si)} does not match network "
            f"(expected {2 * spec.r - 1} for r={spec.r})"
        )
    chain: list[tuple[int, int, int]] = []
    c, h, w = spec.input_shape
    if min(spec.input_shape) < 1:
        raise SpecError(f"input shape must be positive, got {spec.input_shape}")
    for idx, (conv, pool) in enumerate(spec.pairs, start=1):
        oh, ow = conv_output_hw(h, w, conv)
        if oh < 1 or ow < 1:
            raise SpecError(f"conv layer {2 * idx - 1} produces empty output {oh}x{ow}")
        c, h, w = conv.out_channels, oh, ow
        chain.append((c, h, w))
        try:
            ph = ops.pool_output_dim(h, pool.window, pool.stride, pool.ceil_mode)
            pw = ops.pool_output_dim(w, pool.window, pool.stride, pool.ceil_mode)
        except ops.ShapeError as e:
            raise SpecError(f"pool layer {2 * idx}: {e}") from e
        if ph < 1 or pw < 1:
            raise SpecError(f"pool layer {2 * idx} produces empty output {ph}x{pw}")
        h, w = ph, pw
        chain.append((c, h, w))
    return chain


def included_layers(spec: NetworkSpec, si: ShortcutIndicator) -> list[int]:
    """Hidden-layer indices concatenated into the FCL, in layer order.

    Layer 2r is always included; layers 1..2r-1 when their bit is set.
    """
    selected = [k for k in range(1, 2 * spec.r) if si.bits[k - 1] == 1]
    return selected + [2 * spec.r]


def fcl_layout(
    spec: NetworkSpec, si: ShortcutIndicator
) -> list[tuple[int, tuple[int, int, int], int]]:
    """(layer index, layer shape, flattened size) per FCL segment."""
    chain = validate_spec(spec, si)
    layout = []
    for layer in included_layers(spec, si):
        shape = chain[layer - 1]
        layout.append((layer, shape, int(np.prod(shape))))
    return layout


def fcl_size(spec: NetworkSpec, si: ShortcutIndicator) -> int:
    """Length of the concatenated fully-connected layer."""
    return sum(size for _, _, size in fcl_layout(spec, si))


def activation(u: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(u, 0)
    if kind == "sigmoid":
        with np.errstate(over="ignore"):
            return 1.0 / (1.0 + np.exp(-u))
    raise SpecError(f"unknown activation {kind!r}")


def activation_deriv(u: np.ndarray, kind: str) -> np.ndarray:
    """Derivative evaluated at the pre-activation; relu'(0) is 0 by convention."""
    if kind == "relu":
        return (u > 0).astype(u.dtype)
    if kind == "sigmoid":
        s = activation(u, "sigmoid")
        return s * (1.0 - s)
    raise SpecError(f"unknown activation {kind!r}")


def _box_sum_channels(x: np.ndarray, size: int) -> np.ndarray:
    """Sliding sum over a channel window of ``size`` centered per channel,
    truncated at the channel boundaries.  Channel axis is -3."""
    radius = size // 2
    c = x.shape[-3]
    cs = np.cumsum(x, axis=-3)
    zero = np.zeros_like(np.take(cs, [0], axis=-3))
    cs0 = np.concatenate([zero, cs], axis=-3)  # cs0[c] = sum of first c entries
    hi = np.minimum(np.arange(c) + radius, c - 1) + 1
    lo = np.maximum(np.arange(c) - radius, 0)
    return np.take(cs0, hi, axis=-3) - np.take(cs0, lo, axis=-3)


def lrn_forward(h: np.ndarray, cfg: LrnConfig) -> tuple[np.ndarray, np.ndarray]:
    """Cross-channel response normalization.

    out_c = h_c / (k + (alpha/local_size) * sum_{c' in window(c)} h_{c'}^2)^beta

    with the channel window truncated at the boundaries.  Returns the
    normalized values and the un-exponentiated scale (cached for backward).
    """
    h = np.asarray(h)
    if h.ndim < 3:
        raise ops.ShapeError("lrn_forward expects (..., channels, H, W)")
    scale = cfg.k + (cfg.alpha / cfg.local_size) * _box_sum_channels(h * h, cfg.local_size)
    return h * scale ** (-cfg.beta), scale


def lrn_backward(
    g: np.ndarray, h: np.ndarray, scale: np.ndarray, cfg: LrnConfig
) -> np.ndarray:
    """Exact gradient of lrn_forward given its cached input and scale."""
    p = scale ** (-cfg.beta)
    q = g * h * scale ** (-cfg.beta - 1.0)
    coupling = _box_sum_channels(q, cfg.local_size)
    return g * p - (2.0 * cfg.alpha * cfg.beta / cfg.local_size) * h * coupling


def softmax(u: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted by the row max so large logits cannot overflow."""
    u = np.asarray(u)
    e = np.exp(u - u.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _flatten_maps(a: np.ndarray) -> np.ndarray:
    """(N, C, H, W) -> (N, C*H*W), channel-major then row-major."""
    return a.reshape(a.shape[0], -1)


def forward(
    spec: NetworkSpec,
    params: Parameters,
    si: ShortcutIndicator,
    x_batch: np.ndarray,
) -> ForwardCache:
    """Run the full network on a batch and cache every intermediate.

    x_batch: (N, channels, H, W) matching ``spec.input_shape``.
    The cache holds per-layer pre-activations and activations, pooling
    routes, LRN intermediates, the concatenated FCL, logits and softmax
    probabilities.
    """
    x_batch = np.asarray(x_batch)
    if x_batch.ndim != 4 or x_batch.shape[1:] != spec.input_shape:
        raise ops.ShapeError(
            f"batch shape {x_batch.shape} does not match network input {spec.input_shape}"
        )
    validate_spec(spec, si)
    cache = ForwardCache(x=x_batch)
    h = x_batch
    for k, (conv, pool) in enumerate(spec.pairs):
        u = ops.conv_forward(h, params.conv_weights[k], params.conv_biases[k], conv.pad, conv.stride)
        a = activation(u, conv.activation)
        pooled, route = ops.pool_forward(a, pool.window, pool.stride, pool.mode, pool.ceil_mode)
        if pool.lrn is not None:
            post, scale = lrn_forward(pooled, pool.lrn)
        else:
            post, scale = pooled, None
        cache.conv_pre.append(u)
        cache.conv_act.append(a)
        cache.pool_raw.append(pooled)
        cache.pool_routes.append(route)
        cache.pool_act.append(post)
        cache.lrn_scales.append(scale)
        h = post
    segments = [_flatten_maps(cache.layer_value(layer)) for layer in included_layers(spec, si)]
    cache.fcl = np.concatenate(segments, axis=1)
    cache.logits = cache.fcl @ params.output_weight.T + params.output_bias
    cache.probs = softmax(cache.logits)
    return cache


def spec_to_dict(spec: NetworkSpec) -> dict:
    """JSON-friendly form of a NetworkSpec (inverse of ``spec_from_dict``)."""
    return {
        "input_shape": list(spec.input_shape),
        "num_classes": spec.num_classes,
        "pairs": [
            {
                "conv": {
                    "out_channels": conv.out_channels,
                    "kernel": list(conv.kernel),
                    "stride": conv.stride,
                    "pad": list(conv.pad),
                    "activation": conv.activation,
                },
                "pool": {
                    "window": pool.window,
                    "stride": pool.stride,
                    "mode": pool.mode,
                    "ceil_mode": pool.ceil_mode,
                    "lrn": None
                    if pool.lrn is None
                    else {
                        "local_size": pool.lrn.local_size,
                        "alpha": pool.lrn.alpha,
                        "beta": pool.lrn.beta,
                        "k": pool.lrn.k,
                    },
                },
            }
            for conv, pool in spec.pairs
        ],
    }


def _require(d: dict, key: str, context: str):
    if key not in d:
        raise SpecError(f"{context}.{key}: missing required field")
    return d[key]


def spec_from_dict(d: dict, context: str = "network") -> NetworkSpec:
    """Parse a NetworkSpec from its dict form with field-naming errors."""
    try:
        input_shape = tuple(int(v) for v in _require(d, "input_shape", context))
        if len(input_shape) != 3:
            raise SpecError(f"{context}.input_shape: expected [channels, height, width]")
        num_classes = int(_require(d, "num_classes", context))
        pairs = []
        for i, pair in enumerate(_require(d, "pairs", context)):
            pctx = f"{context}.pairs[{i}]"
            cd = _require(pair, "conv", pctx)
            pd = _require(pair, "pool", pctx)
            kernel = tuple(int(v) for v in _require(cd, "kernel", f"{pctx}.conv"))
            if len(kernel) != 2:
                raise SpecError(f"{pctx}.conv.kernel: expected [kh, kw]")
            pad = tuple(int(v) for v in cd.get("pad", (0, 0, 0, 0)))
            if len(pad) != 4:
                raise SpecError(f"{pctx}.conv.pad: expected [top, bottom, left, right]")
            conv = ConvSpec(
                out_channels=int(_require(cd, "out_channels", f"{pctx}.conv")),
                kernel=kernel,
                stride=int(cd.get("stride", 1)),
                pad=pad,
                activation=str(cd.get("activation", "relu")),
            )
            lrn_d = pd.get("lrn")
            lrn = (
                None
                if lrn_d is None
                else LrnConfig(
                    local_size=int(lrn_d.get("local_size", 5)),
                    alpha=float(lrn_d.get("alpha", 1e-4)),
                    beta=float(lrn_d.get("beta", 0.75)),
                    k=float(lrn_d.get("k", 1.0)),
                )
            )
            pool = PoolSpec(
                window=int(_require(pd, "window", f"{pctx}.pool")),
                stride=int(_require(pd, "stride", f"{pctx}.pool")),
                mode=str(pd.get("mode", "max")),
                ceil_mode=bool(pd.get("ceil_mode", False)),
                lrn=lrn,
            )
            pairs.append((conv, pool))
        return NetworkSpec(input_shape=input_shape, num_classes=num_classes, pairs=tuple(pairs))
    except (TypeError, ValueError) as e:
        if isinstance(e, SpecError):
            raise
        raise SpecError(f"{context}: {e}") from e


def with_lrn(spec: NetworkSpec, cfg: LrnConfig | None, pair_indices=None) -> NetworkSpec:
    """Copy of ``spec`` with LRN set on the given pairs (all when None)."""
    indices = set(range(spec.r)) if pair_indices is None else set(pair_indices)
    pairs = tuple(
        (conv, replace(pool, lrn=cfg)) if i in indices else (conv, pool)
        for i, (conv, pool) in enumerate(spec.pairs)
    )
    return replace(spec, pairs=pairs)
