"""Shortcut convolutional neural networks.

A small numpy library for image classifiers whose fully-connected layer
concatenates an arbitrary subset of conv/pool layers, selected by a
binary shortcut indicator, with a hand-derived backward pass verified
against finite differences.
"""

__version__ = "0.1.0"

from scnn.ops import default_dtype, set_default_dtype
from scnn.network import (
    ConvSpec,
    ForwardCache,
    Gradients,
    LrnConfig,
    NetworkSpec,
    Parameters,
    PoolSpec,
    ShortcutIndicator,
    SpecError,
    fcl_size,
    forward,
    softmax,
    validate_spec,
)
from scnn.autograd import (
    GradCheckReport,
    Sensitivities,
    backward,
    cross_entropy,
    grad_check,
    output_delta,
    split_fcl_delta,
)
from scnn.optimize import (
    OptimizerState,
    TrainConfig,
    adam_step,
    evaluate,
    init_params,
    sgd_step,
    train,
)
from scnn.data import (
    DataFormatError,
    Dataset,
    load_cifar10,
    load_mnist,
    make_synthetic,
    one_hot,
)
from scnn.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from scnn.estimator import ShortcutCNNClassifier

__all__ = [
    "__version__",
    "default_dtype",
    "set_default_dtype",
    "ConvSpec",
    "ForwardCache",
    "Gradients",
    "LrnConfig",
    "NetworkSpec",
    "Parameters",
    "PoolSpec",
    "ShortcutIndicator",
    "SpecError",
    "fcl_size",
    "forward",
    "softmax",
    "validate_spec",
    "GradCheckReport",
    "Sensitivities",
    "backward",
    "cross_entropy",
    "grad_check",
    "output_delta",
    "split_fcl_delta",
    "OptimizerState",
    "TrainConfig",
    "adam_step",
    "evaluate",
    "init_params",
    "sgd_step",
    "train",
    "DataFormatError",
    "Dataset",
    "load_cifar10",
    "load_mnist",
    "make_synthetic",
    "one_hot",
    "CheckpointError",
    "load_checkpoint",
    "save_checkpoint",
    "ShortcutCNNClassifier",
]
