"""Node-level SNR figures of merit.

For a node with weights w over inputs x_j, the covariance vector
c_j = cov(x_j, sum_j w_j x_j) / a_j (a_j = fraction of samples where
input j is strictly positive) points in the direction of SNR-optimal
weights. Three figures follow:

  fitness   S  = <w, c> / (|w| |c|)          cosine to the optimal direction
  reference S' = max_j |c_j| / |c|           fitness of the best single-input node
  gain      G  = S / S'                      improvement over that reference

Per-layer values average node gains (optionally weighted by each node's
output activity); the network figure sums layer means over a layer range.

Two practical adjustments are applied before computing c: inputs are
scaled by their batch maxima (weights compensated so the analyzed sum is
unchanged) to make the equal-noise-variance assumption plausible, and
inputs whose batch maximum never exceeds a threshold are dropped from the
analysis. Final-layer weights feeding softmax are mean-centered per input
first, since softmax is invariant under such shifts and uncentered
offsets inflate the figures artificially.
"""

import math
from dataclasses import dataclass

import numpy as np

from .nn import CONV, DENSE, LayerSpec, LayerWeights, Network, forward, im2col_view
from .tensor import RngState, column_covariance


@dataclass(frozen=True)
class MetricConfig:
    low_input_threshold: float = 0.01
    apply_max_scaling: bool = True
    apply_softmax_centering: bool = True
    weighted_mean: bool = True

    def __post_init__(self):
        if self.low_input_threshold < 0:
            raise ValueError("low_input_threshold must be >= 0")


@dataclass
class NodeMerit:
    node_index: int
    c: np.ndarray          # covariance-over-rate vector on the active inputs
    a: np.ndarray          # activation rates of the active inputs
    active: np.ndarray     # active input indices (shared across the layer)
    s_fitness: float
    s_reference: float
    g_gain: float
    activity_weight: float
    defined: bool = True
    reason: str = ""

    def to_dict(self):
        return {
            "node_index": self.node_index,
            "s_fitness": self.s_fitness,
            "s_reference": self.s_reference,
            "g_gain": self.g_gain,
            "activity_weight": self.activity_weight,
            "defined": self.defined,
            "reason": self.reason,
        }


@dataclass
class LayerMerit:
    layer_index: int       # 1-based over the weighted layers
    mean_s: float
    mean_g: float
    nodes: list
    active: np.ndarray
    defined: bool = True
    reason: str = ""

    def to_dict(self):
        return {
            "layer_index": self.layer_index,
            "mean_s": self.mean_s,
            "mean_g": self.mean_g,
            "defined": self.defined,
            "reason": self.reason,
            "active_inputs": int(self.active.size),
            "nodes": [n.to_dict() for n in self.nodes],
        }


def activation_rates(inputs):
    """Per column, the fraction of samples strictly greater than zero."""
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"need a non-empty 2-D batch, got shape {x.shape}")
    return np.mean(x > 0, axis=0)


def max_scale(inputs):
    """Divide each column by its batch maximum; all-zero columns stay.

    Inputs are post-activation values and must be non-negative. Every
    nonzero column of the result has maximum exactly 1, which makes the
    operation idempotent.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.size and x.min() < 0:
        raise ValueError("max_scale expects non-negative (post-ReLU) inputs")
    m = x.max(axis=0)
    return x / np.where(m > 0, m, 1.0)


def filter_low_inputs(inputs, threshold):
    """Indices of columns whose batch maximum exceeds `threshold`."""
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    x = np.asarray(inputs, dtype=np.float64)
    return np.flatnonzero(x.max(axis=0) > threshold)


def covariance_vector(inputs, weights, rates):
    """c_j = cov(x_j, x @ w) / a_j over the given input batch.

    The caller is expected to have restricted inputs/weights/rates to the
    active set; a zero rate inside it is a contract violation.
    """
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    a = np.asarray(rates, dtype=np.float64).ravel()
    if x.shape[1] != w.size or x.shape[1] != a.size:
        raise ValueError(
            f"inputs have {x.shape[1]} columns but {w.size} weights / {a.size} rates"
        )
    if np.any(a <= 0):
        raise ValueError("activation rate of zero inside the active set")
    return column_covariance(x, x @ w) / a


def snr_fitness(weights, c):
    """Cosine between the weight vector and the optimal direction c."""
    w = np.asarray(weights, dtype=np.float64).ravel()
    cv = np.asarray(c, dtype=np.float64).ravel()
    nw, nc = np.linalg.norm(w), np.linalg.norm(cv)
    if nw == 0 or nc == 0:
        raise ValueError("snr_fitness undefined for zero-norm vectors")
    return float(np.clip(np.dot(w, cv) / (nw * nc), -1.0, 1.0))


def snr_reference(c):
    """Fitness of the best signed single-input weight vector."""
    cv = np.asarray(c, dtype=np.float64).ravel()
    nc = np.linalg.norm(cv)
    if nc == 0:
        raise ValueError("snr_reference undefined for a zero covariance vector")
    return float(min(np.max(np.abs(cv)) / nc, 1.0))


def snr_gain(weights, c):
    """Fitness relative to the single-input reference: S / S'."""
    return snr_fitness(weights, c) / snr_reference(c)


def softmax_center(lw: LayerWeights):
    """Remove the per-input mean over output nodes from softmax weights.

    Softmax is invariant under adding a constant per input across all
    output nodes, but such offsets inflate the merit figures. The bias is
    centered the same way, so the layer's softmax outputs are unchanged.
    """
    w = lw.weights - lw.weights.mean(axis=1, keepdims=True)
    b = lw.bias - lw.bias.mean()
    return LayerWeights(w, b)


class _MeritAccumulator:
    """Streaming two-pass merit statistics for one layer.

    Rows are samples of the layer's input (images x positions for conv).
    Pass 1 collects column maxima, positivity counts and sums; pass 2
    accumulates centered cross-products against the analyzed weighted sum.
    """

    def __init__(self, fan_in, cfg: MetricConfig):
        self.cfg = cfg
        self.n = 0
        self.sum_x = np.zeros(fan_in)
        self.max_x = np.full(fan_in, -np.inf)
        self.pos_x = np.zeros(fan_in)
        self.ready = False

    def pass1_add(self, x):
        if x.size == 0:
            return
        if x.min() < 0:
            raise ValueError("merit analysis expects non-negative inputs")
        self.n += x.shape[0]
        self.sum_x += x.sum(axis=0)
        np.maximum(self.max_x, x.max(axis=0), out=self.max_x)
        self.pos_x += (x > 0).sum(axis=0)

    def finalize_pass1(self, weight_matrix):
        self.active = np.flatnonzero(self.max_x > self.cfg.low_input_threshold)
        self.ready = True
        if self.active.size == 0 or self.n < 2:
            self.degenerate = True
            return
        self.degenerate = False
        self.rates = self.pos_x[self.active] / self.n
        self.scale = (
            self.max_x[self.active] if self.cfg.apply_max_scaling
            else np.ones(self.active.size)
        )
        # compensation keeps the analyzed weighted sum unchanged
        self.w_eff = weight_matrix[self.active, :] * self.scale[:, None]
        self.mean_xs = (self.sum_x[self.active] / self.n) / self.scale
        k = weight_matrix.shape[1]
        self.s1 = np.zeros((self.active.size, k))
        self.s_y = np.zeros(k)
        self.s_xc = np.zeros(self.active.size)

    def pass2_add(self, x):
        if self.degenerate or x.size == 0:
            return
        xs = x[:, self.active] / self.scale
        y = xs @ self.w_eff
        xc = xs - self.mean_xs
        self.s1 += xc.T @ y
        self.s_y += y.sum(axis=0)
        self.s_xc += xc.sum(axis=0)

    def result(self, layer_index, node_activity):
        if self.degenerate:
            reason = "no active inputs" if self.active.size == 0 else "fewer than 2 samples"
            return LayerMerit(
                layer_index, math.nan, math.nan, [], self.active, False, reason
            )
        sxy = self.s1 - np.outer(self.s_xc, self.s_y / self.n)
        cmat = (sxy / (self.n - 1)) / self.rates[:, None]
        k = cmat.shape[1]
        activity = np.asarray(node_activity, dtype=np.float64).ravel()
        nodes = []
        for i in range(k):
            w_i = self.w_eff[:, i]
            c_i = cmat[:, i]
            nw = np.linalg.norm(w_i)
            nc = np.linalg.norm(c_i)
            if nw == 0 or nc == 0:
                nodes.append(
                    NodeMerit(
                        i, c_i, self.rates, self.active,
                        math.nan, math.nan, math.nan, float(activity[i]),
                        defined=False,
                        reason="zero weight vector" if nw == 0 else "zero covariance vector",
                    )
                )
                continue
            s = float(np.clip(np.dot(w_i, c_i) / (nw * nc), -1.0, 1.0))
            s_ref = float(min(np.max(np.abs(c_i)) / nc, 1.0))
            nodes.append(
                NodeMerit(
                    i, c_i, self.rates, self.active,
                    s, s_ref, s / s_ref, float(activity[i]),
                )
            )
        good = [nd for nd in nodes if nd.defined]
        if not good:
            return LayerMerit(
                layer_index, math.nan, math.nan, nodes, self.active, False,
                "all node merits undefined",
            )
        mean_s = float(np.mean([nd.s_fitness for nd in good]))
        if self.cfg.weighted_mean:
            wsum = float(sum(nd.activity_weight for nd in good))
            if wsum == 0:
                return LayerMerit(
                    layer_index, mean_s, math.nan, nodes, self.active, False,
                    "all defined nodes inactive",
                )
            mean_g = float(
                sum(nd.activity_weight * nd.g_gain for nd in good) / wsum
            )
        else:
            mean_g = float(np.mean([nd.g_gain for nd in good]))
        return LayerMerit(layer_index, mean_s, mean_g, nodes, self.active)


def _as_weight_matrix(weights):
    if isinstance(weights, LayerWeights):
        return weights.weights, weights.bias
    w = np.asarray(weights, dtype=np.float64)
    return w, np.zeros(w.shape[1])


def layer_merit(inputs, weights, cfg: MetricConfig, node_activity=None, layer_index=1):
    """Merit figures for one dense layer given its input batch.

    `node_activity` is each node's own output activation rate over the
    batch; when omitted it is derived from the layer's (ReLU)
    pre-activations.
    """
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"inputs must be 2-D, got shape {x.shape}")
    wmat, bias = _as_weight_matrix(weights)
    if x.shape[1] != wmat.shape[0]:
        raise ValueError(
            f"inputs have {x.shape[1]} columns, weights expect {wmat.shape[0]}"
        )
    if node_activity is None:
        node_activity = activation_rates(x @ wmat + bias)
    acc = _MeritAccumulator(x.shape[1], cfg)
    acc.pass1_add(x)
    acc.finalize_pass1(wmat)
    acc.pass2_add(x)
    return acc.result(layer_index, node_activity)


def conv_layer_merit(
    spec: LayerSpec, weights, inputs, cfg: MetricConfig,
    node_activity=None, layer_index=1, chunk=64,
):
    """Merit figures for a conv layer, treating each filter as a node.

    Every (sample, spatial position) receptive field is one row, so the
    statistics run over samples x positions. Streams over image chunks to
    bound memory.
    """
    if spec.kind != CONV:
        raise ValueError("conv_layer_merit needs a conv layer spec")
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x.reshape(-1, *spec.input_shape)
    wmat, bias = _as_weight_matrix(weights)
    acc = _MeritAccumulator(wmat.shape[0], cfg)
    need_activity = node_activity is None
    pos = np.zeros(wmat.shape[1])
    rows = 0
    for start in range(0, x.shape[0], chunk):
        cols = im2col_view(spec, x[start : start + chunk])
        acc.pass1_add(cols)
        if need_activity:
            pre = cols @ wmat + bias
            pos += (pre > 0).sum(axis=0)
            rows += pre.shape[0]
    if need_activity:
        node_activity = pos / rows if rows else np.zeros(wmat.shape[1])
    acc.finalize_pass1(wmat)
    for start in range(0, x.shape[0], chunk):
        acc.pass2_add(im2col_view(spec, x[start : start + chunk]))
    return acc.result(layer_index, node_activity)


def _layer_rows(net, trace, li):
    """The 2-D row view of layer li's input (im2col rows for conv)."""
    spec = net.specs[li]
    x = trace.layer_input(li)
    if spec.kind == CONV:
        return im2col_view(spec, x)
    return x.reshape(x.shape[0], -1)


def _post_rows(net, trace, li):
    spec = net.specs[li]
    p = trace.post[li]
    if spec.kind == CONV:
        return p.transpose(0, 2, 3, 1).reshape(-1, spec.filter_count)
    return p


def analyze_network(net: Network, batch, cfg: MetricConfig, chunk=128):
    """LayerMerit for every weighted layer of the network.

    Runs chunked forward passes over the evaluation batch; the final
    layer's weights are softmax-centered first when configured.
    """
    x = np.asarray(batch, dtype=np.float64)
    widx = net.weighted_indices()
    weight_mats = {}
    for pos, li in enumerate(widx):
        lw = net.weights[li]
        if (
            cfg.apply_softmax_centering
            and li == len(net.specs) - 1
            and net.specs[li].activation == "softmax"
        ):
            lw = softmax_center(lw)
        weight_mats[li] = lw.weights
    accs = {li: _MeritAccumulator(weight_mats[li].shape[0], cfg) for li in widx}
    pos_counts = {li: np.zeros(weight_mats[li].shape[1]) for li in widx}
    row_counts = {li: 0 for li in widx}
    for start in range(0, x.shape[0], chunk):
        trace = forward(net, x[start : start + chunk])
        for li in widx:
            accs[li].pass1_add(_layer_rows(net, trace, li))
            post = _post_rows(net, trace, li)
            pos_counts[li] += (post > 0).sum(axis=0)
            row_counts[li] += post.shape[0]
    for li in widx:
        accs[li].finalize_pass1(weight_mats[li])
    for start in range(0, x.shape[0], chunk):
        trace = forward(net, x[start : start + chunk])
        for li in widx:
            accs[li].pass2_add(_layer_rows(net, trace, li))
    merits = []
    for pos, li in enumerate(widx):
        activity = pos_counts[li] / row_counts[li] if row_counts[li] else pos_counts[li]
        merits.append(accs[li].result(pos + 1, activity))
    return merits


def network_merit(net: Network, batch, cfg: MetricConfig, layer_range=None, chunk=128):
    """Sum of layer-mean gains over a 1-based inclusive layer range.

    Defaults to layers 1..L-1, leaving out the softmax layer, whose
    figures are noisier. Returns NaN if any layer in range is undefined.
    """
    merits = analyze_network(net, batch, cfg, chunk=chunk)
    count = len(merits)
    if layer_range is None:
        layer_range = (1, count - 1) if count > 1 else (1, 1)
    m, n = layer_range
    if not (1 <= m <= n <= count):
        raise ValueError(f"layer range {layer_range} invalid for {count} layers")
    picked = merits[m - 1 : n]
    if any(not lm.defined for lm in picked):
        return math.nan
    return float(sum(lm.mean_g for lm in picked))


def empirical_node_snr(inputs, weights, sigma, trials, rng: RngState, max_elems=8_000_000):
    """Monte-Carlo signal-to-noise ratio of nodes over an input batch.

    Signal variance is the batch variance of the clean weighted sum.
    Noise variance is the variance, over trials and samples, of the
    perturbation produced by adding zero-mean Gaussian noise of standard
    deviation `sigma` to every input that is strictly positive in that
    sample (inactive inputs carry no noise). Intended as a ground-truth
    oracle at toy scale.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if trials < 2:
        raise ValueError("need at least 2 trials")
    x = np.asarray(inputs, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    single = w.ndim == 1
    wmat = w.reshape(-1, 1) if single else w
    if x.shape[1] != wmat.shape[0]:
        raise ValueError(f"{x.shape[1]} inputs vs {wmat.shape[0]} weight rows")
    s, j = x.shape
    k = wmat.shape[1]
    signal = np.var(x @ wmat, axis=0, ddof=1)
    mask = x > 0

    total = 0
    acc_sum = np.zeros(k)
    acc_sq = np.zeros(k)
    tc = max(1, int(max_elems // (s * j)))
    gen = rng.generator
    done = 0
    while done < trials:
        t = min(tc, trials - done)
        noise = gen.normal(0.0, sigma, size=(t, s, j)) * mask
        delta = noise.reshape(t * s, j) @ wmat
        acc_sum += delta.sum(axis=0)
        acc_sq += np.sum(delta * delta, axis=0)
        total += t * s
        done += t
    mean = acc_sum / total
    noise_var = (acc_sq - total * mean * mean) / (total - 1)
    snr = np.where(noise_var > 0, signal / np.where(noise_var > 0, noise_var, 1.0), np.nan)
    return float(snr[0]) if single else snr


def empirical_snr(net: Network, layer_index, batch, sigma, trials, rng: RngState):
    """Monte-Carlo SNR of every node in one weighted layer (1-based)."""
    widx = net.weighted_indices()
    if not (1 <= layer_index <= len(widx)):
        raise ValueError(f"layer index {layer_index} out of range 1..{len(widx)}")
    li = widx[layer_index - 1]
    trace = forward(net, np.asarray(batch, dtype=np.float64))
    rows = _layer_rows(net, trace, li)
    return empirical_node_snr(rows, net.weights[li].weights, sigma, trials, rng)


_ACTIVATION_FNS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(np.float64)),
    "identity": (lambda z: z, lambda z: np.ones_like(z)),
    "tanh": (lambda z: np.tanh(z), lambda z: 1.0 - np.tanh(z) ** 2),
}


def linearized_snr(activation, pre_batch, weights, sigma):
    """Small-noise SNR for a general activation on the layer inputs.

    Noise of variance sigma^2 on the pre-activations propagates through
    g as g'(z) * noise, so the noise power per input is the batch mean of
    g'(z)^2 times w^2 sigma^2. For identity this is exactly the plain
    weighted-sum form; for ReLU the mean of g'^2 is the activation rate.
    """
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if activation not in _ACTIVATION_FNS:
        raise ValueError(f"unknown activation {activation!r}")
    g, gprime = _ACTIVATION_FNS[activation]
    z = np.asarray(pre_batch, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if z.ndim != 2 or z.shape[1] != w.size:
        raise ValueError(f"pre-activation batch {z.shape} vs {w.size} weights")
    num = float(np.var(g(z) @ w, ddof=1))
    gp2 = np.mean(gprime(z) ** 2, axis=0)
    den = sigma**2 * float(np.sum(w * w * gp2))
    if den == 0:
        raise ValueError("noise power is zero; SNR undefined")
    return num / den


def prune_weak_inputs(merit: NodeMerit, weights, keep_fraction):
    """Zero the weights of the active inputs ranked lowest by |c|.

    Keeps the top ceil(keep_fraction * active_count) inputs, ties broken
    toward the lower input index. keep_fraction = 1 is an exact identity.
    Inputs outside the node's active set are left untouched.
    """
    if not (0.0 < keep_fraction <= 1.0):
        raise ValueError("keep_fraction must be in (0, 1]")
    w = np.array(weights, dtype=np.float64)
    if keep_fraction == 1.0:
        return w
    if not merit.defined:
        raise ValueError("cannot prune from an undefined node merit")
    n = merit.active.size
    order = np.lexsort((merit.active, -np.abs(merit.c)))
    keep = int(np.ceil(keep_fraction * n - 1e-9))
    keep = max(1, min(keep, n))
    w[merit.active[order[keep:]]] = 0.0
    return w
