"""Selective style normalization for small convolutional networks.

The package implements three normalization layers over NCHW feature maps:
batch normalization, instance normalization, and a gated blend of the two
in which a per-channel gate in [0, 1] learns whether a channel's summary
statistics (its "style") should be preserved or removed. Around the layers
sit a minimal reference network, an SGD trainer with the gate-specific
update rule, a central finite-difference gradient checker, a synthetic
shape/style dataset generator, and a CLI, so the whole behavior is
verifiable end to end on a laptop.
"""

from .data import LabeledImages, apply_style, make_dataset, render_shape
from .errors import (
    BinnormError,
    ConfigError,
    GateRangeError,
    InvalidShapeError,
    OracleError,
)
from .estimator import NormNetClassifier
from .gradcheck import (
    GradCheckReport,
    central_diff,
    check_layer_gradients,
    check_network_gradients,
    numeric_gradient,
)
from .layers import (
    GradBundle,
    NormCache,
    NormParams,
    batch_normalize,
    bin_backward,
    bin_forward,
    bn_backward,
    bn_forward,
    clip_gate_update,
    in_backward,
    in_forward,
    instance_normalize,
    update_running_stats,
)
from .net import Network, Norm2d, build_toy_net, softmax_cross_entropy, write_gate_csv
from .seeding import derive_rng
from .tensor import (
    channel_mean_var,
    instance_mean_var,
    load_tensor,
    new_tensor,
    save_tensor,
    tensor_from_json,
    tensor_to_json,
)
from .training import SGD, TrainConfig, evaluate, train_classifier

__version__ = "0.1.0"

__all__ = [
    "BinnormError",
    "ConfigError",
    "GateRangeError",
    "GradBundle",
    "GradCheckReport",
    "InvalidShapeError",
    "LabeledImages",
    "Network",
    "Norm2d",
    "NormCache",
    "NormNetClassifier",
    "NormParams",
    "OracleError",
    "SGD",
    "TrainConfig",
    "apply_style",
    "batch_normalize",
    "bin_backward",
    "bin_forward",
    "bn_backward",
    "bn_forward",
    "build_toy_net",
    "central_diff",
    "channel_mean_var",
    "check_layer_gradients",
    "check_network_gradients",
    "clip_gate_update",
    "derive_rng",
    "evaluate",
    "in_backward",
    "in_forward",
    "instance_mean_var",
    "instance_normalize",
    "load_tensor",
    "make_dataset",
    "new_tensor",
    "numeric_gradient",
    "render_shape",
    "save_tensor",
    "softmax_cross_entropy",
    "tensor_from_json",
    "tensor_to_json",
    "train_classifier",
    "update_running_stats",
    "write_gate_csv",
]
