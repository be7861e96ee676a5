"""Node-level signal-to-noise figures of merit for small trained networks.

The package trains fully connected and convolutional classifiers from
scratch under a menu of regularization regimes, then scores every node by
how well its weights align with the covariance-optimal direction
(fitness), how much they improve on the best single-input alternative
(gain), and aggregates those scores per layer and per network so sweeps
can correlate them with test accuracy.
"""

from .tensor import RngState, matmul, column_covariance, gaussian_noise
from .datasets import (
    LabeledDataset,
    SplitSpec,
    load_mnist_idx,
    load_cifar10_bin,
    synthetic_correlated,
    synthetic_glyphs,
    augment,
)
from .nn import (
    LayerSpec,
    LayerWeights,
    Network,
    ForwardTrace,
    build_mnist_net,
    build_cifar_net,
    forward,
    backward,
    im2col_view,
    save_network,
    load_network,
)
from .train import TrainConfig, TrainResult, train, evaluate, apply_dropout_mask
from .metrics import (
    MetricConfig,
    NodeMerit,
    LayerMerit,
    activation_rates,
    max_scale,
    filter_low_inputs,
    covariance_vector,
    snr_fitness,
    snr_reference,
    snr_gain,
    layer_merit,
    conv_layer_merit,
    softmax_center,
    analyze_network,
    network_merit,
    empirical_node_snr,
    empirical_snr,
    linearized_snr,
    prune_weak_inputs,
)
from .experiment import (
    SweepSpec,
    RunRecord,
    CorrelationSummary,
    run_sweep,
    spearman,
    r_squared,
    flag_outliers,
    summarize,
    emit_report,
)

__version__ = "0.1.0"
