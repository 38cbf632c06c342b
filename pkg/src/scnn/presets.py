"""Ready-made architectures used by the CLI, the tests, and the examples."""

from __future__ import annotations

from scnn.network import ConvSpec, LrnConfig, NetworkSpec, PoolSpec


def small_gray32(num_classes: int = 2) -> NetworkSpec:
    """Three conv/pool pairs for 32x32 grayscale inputs; FCL is 64 at the
    all-zeros shortcut style.  Shape chain: 28x28x6, 14x14x6, 10x10x12,
    5x5x12, 4x4x16, 2x2x16."""
    return NetworkSpec(
        input_shape=(1, 32, 32),
        num_classes=num_classes,
        pairs=(
            (ConvSpec(6, (5, 5)), PoolSpec(2, 2, "max")),
            (ConvSpec(12, (5, 5)), PoolSpec(2, 2, "max")),
            (ConvSpec(16, (2, 2)), PoolSpec(2, 2, "max")),
        ),
    )


def mnist_lenet() -> NetworkSpec:
    """LeNet-style digit classifier: 20 then 50 kernels of 5x5, 2x2/2 max
    pooling, FCL = flattened last pool (800) at the all-zeros style."""
    return NetworkSpec(
        input_shape=(1, 28, 28),
        num_classes=10,
        pairs=(
            (ConvSpec(20, (5, 5)), PoolSpec(2, 2, "max")),
            (ConvSpec(50, (5, 5)), PoolSpec(2, 2, "max")),
        ),
    )


def cifar10_net(lrn: bool = True) -> NetworkSpec:
    """Three conv/pool pairs for 32x32 color images with overlapping
    3x3/stride-2 ceil-mode pooling, optionally LRN after every pool.

    The last pair uses a 2x2 conv with 16 output channels and one-sided
    (top/left) padding so the chain closes at 4x4x16 and an FCL of 256.
    """
    cfg = LrnConfig() if lrn else None
    return NetworkSpec(
        input_shape=(3, 32, 32),
        num_classes=10,
        pairs=(
            (ConvSpec(32, (5, 5), pad=(2, 2, 2, 2)), PoolSpec(3, 2, "max", ceil_mode=True, lrn=cfg)),
            (ConvSpec(32, (5, 5), pad=(2, 2, 2, 2)), PoolSpec(3, 2, "max", ceil_mode=True, lrn=cfg)),
            (ConvSpec(16, (2, 2), pad=(1, 0, 1, 0)), PoolSpec(3, 2, "max", ceil_mode=True, lrn=cfg)),
        ),
    )


def tiny_gradcheck_net(
    activation: str = "relu",
    pool_mode: str = "max",
    lrn_last: bool = False,
    num_classes: int = 3,
) -> NetworkSpec:
    """Two-pair net on 1x6x6 inputs, small enough for exhaustive
    finite-difference verification (a few hundred parameters)."""
    lrn = LrnConfig() if lrn_last else None
    return NetworkSpec(
        input_shape=(1, 6, 6),
        num_classes=num_classes,
        pairs=(
            (ConvSpec(2, (3, 3), activation=activation), PoolSpec(2, 2, pool_mode, ceil_mode=True)),
            (ConvSpec(3, (2, 2), activation=activation), PoolSpec(2, 2, pool_mode, ceil_mode=True, lrn=lrn)),
        ),
    )
