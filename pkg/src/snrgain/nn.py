"""Feed-forward networks: dense, valid convolution, 2x2 max pooling.

Forward passes capture every layer's pre- and post-activation values so
the analysis code can treat any layer's input as a sample batch. Backward
produces exact gradients of the batch loss (mean cross-entropy for a
softmax head, mean squared error for a linear head).
"""

import io
import json
from dataclasses import dataclass, field

import numpy as np

from .tensor import RngState, ShapeError, matmul

DENSE, CONV, MAXPOOL = "dense", "conv", "maxpool"
ACTIVATIONS = ("relu", "softmax", "none")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_shape: tuple
    output_shape: tuple
    activation: str = "none"
    kernel_size: int = 0
    filter_count: int = 0
    stride: int = 1
    pool_size: int = 2

    def __post_init__(self):
        if self.kind not in (DENSE, CONV, MAXPOOL):
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def fan_in(self):
        return int(np.prod(self.input_shape))

    @property
    def fan_out(self):
        return int(np.prod(self.output_shape))

    @property
    def weight_shape(self):
        """Stored weight matrix shape; None for weightless layers."""
        if self.kind == DENSE:
            return (self.fan_in, self.fan_out)
        if self.kind == CONV:
            c = self.input_shape[0]
            return (c * self.kernel_size * self.kernel_size, self.filter_count)
        return None


def dense_spec(fan_in, fan_out, activation):
    return LayerSpec(DENSE, (fan_in,), (fan_out,), activation)


def conv_spec(input_shape, filter_count, kernel_size, activation="relu"):
    c, h, w = input_shape
    out_h = h - kernel_size + 1
    out_w = w - kernel_size + 1
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"kernel {kernel_size} too large for input {input_shape}")
    return LayerSpec(
        CONV,
        tuple(input_shape),
        (filter_count, out_h, out_w),
        activation,
        kernel_size=kernel_size,
        filter_count=filter_count,
    )


def maxpool_spec(input_shape, pool_size=2):
    c, h, w = input_shape
    if h % pool_size or w % pool_size:
        raise ValueError(f"pool {pool_size} does not divide input {input_shape}")
    return LayerSpec(
        MAXPOOL, tuple(input_shape), (c, h // pool_size, w // pool_size), "none",
        pool_size=pool_size,
    )


@dataclass
class LayerWeights:
    weights: np.ndarray  # fan-in x fan-out (conv kernels flattened per filter)
    bias: np.ndarray

    def __post_init__(self):
        self.weights = np.ascontiguousarray(self.weights, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if not (np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer weights must be finite")

    def copy(self):
        return LayerWeights(self.weights.copy(), self.bias.copy())


@dataclass
class Network:
    specs: list
    weights: list  # parallel to specs; None for weightless layers

    def __post_init__(self):
        if not self.specs:
            raise ValueError("network needs at least one layer")
        for i, spec in enumerate(self.specs[:-1]):
            if spec.activation == "softmax":
                raise ValueError("softmax is only allowed on the final layer")
            nxt = self.specs[i + 1]
            if int(np.prod(spec.output_shape)) != nxt.fan_in:
                raise ValueError(
                    f"layer {i} output {spec.output_shape} does not feed "
                    f"layer {i + 1} input {nxt.input_shape}"
                )
        for spec, lw in zip(self.specs, self.weights):
            ws = spec.weight_shape
            if ws is None:
                if lw is not None:
                    raise ValueError(f"{spec.kind} layer must not carry weights")
            else:
                if lw is None or lw.weights.shape != ws or lw.bias.shape != (ws[1],):
                    raise ValueError(f"weights do not match spec {spec}")

    @property
    def input_features(self):
        return self.specs[0].fan_in

    def weighted_indices(self):
        """Absolute positions of the weighted (dense/conv) layers.

        These are the layers the per-layer figures are indexed over;
        pooling carries no weights and is skipped.
        """
        return [i for i, s in enumerate(self.specs) if s.kind != MAXPOOL]

    def copy(self):
        return Network(
            list(self.specs), [lw.copy() if lw else None for lw in self.weights]
        )


def init_weights(spec: LayerSpec, rng: RngState):
    """Uniform Glorot initialization; biases start at zero."""
    if spec.kind == DENSE:
        fan_in, fan_out = spec.fan_in, spec.fan_out
    else:
        k2 = spec.kernel_size * spec.kernel_size
        fan_in = spec.input_shape[0] * k2
        fan_out = spec.filter_count * k2
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    w = rng.generator.uniform(-limit, limit, size=spec.weight_shape)
    return LayerWeights(w, np.zeros(spec.weight_shape[1]))


def make_network(specs, rng: RngState):
    return Network(
        list(specs),
        [init_weights(s, rng.derive(i)) if s.weight_shape else None
         for i, s in enumerate(specs)],
    )


def build_mnist_net(variant="full", rng=None):
    """Three fully connected layers; ReLU hidden, softmax output.

    "full" is 784-1024-1000-10; "desk" is a reduced 784-256-128-10 used
    for quick sweeps.
    """
    widths = {"full": (1024, 1000), "desk": (256, 128)}
    if variant not in widths:
        raise ValueError(f"unknown variant {variant!r}")
    h1, h2 = widths[variant]
    specs = [
        dense_spec(784, h1, "relu"),
        dense_spec(h1, h2, "relu"),
        dense_spec(h2, 10, "softmax"),
    ]
    return make_network(specs, rng or RngState(0))


def build_cifar_net(rng=None):
    """Two 64-filter 5x5 conv layers with 2x2 max pooling, then
    1000-500-10 dense layers. Valid convolution, stride 1."""
    c1 = conv_spec((3, 32, 32), 64, 5)
    p1 = maxpool_spec(c1.output_shape)
    c2 = conv_spec(p1.output_shape, 64, 5)
    p2 = maxpool_spec(c2.output_shape)
    flat = int(np.prod(p2.output_shape))
    specs = [
        c1, p1, c2, p2,
        dense_spec(flat, 1000, "relu"),
        dense_spec(1000, 500, "relu"),
        dense_spec(500, 10, "softmax"),
    ]
    return make_network(specs, rng or RngState(0))


def relu(z):
    return np.maximum(z, 0.0)


def softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def im2col_view(spec: LayerSpec, batch):
    """Receptive-field matrix: one row per (sample, output position).

    Column order matches the flattened kernel layout (channel, then
    kernel row, then kernel column), so conv forward is exactly
    ``im2col_view(...) @ weights``.
    """
    if spec.kind != CONV:
        raise ValueError("im2col_view needs a conv layer spec")
    c, h, w = spec.input_shape
    k = spec.kernel_size
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 2:
        x = x.reshape(-1, c, h, w)
    if x.shape[1:] != (c, h, w):
        raise ShapeError(f"batch shape {x.shape} does not match input {spec.input_shape}")
    windows = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    # (n, c, oh, ow, k, k) -> (n, oh, ow, c, k, k) -> rows x (c*k*k)
    cols = windows.transpose(0, 2, 3, 1, 4, 5)
    n, oh, ow = cols.shape[:3]
    return np.ascontiguousarray(cols).reshape(n * oh * ow, c * k * k)


def _col2im(dcols, spec: LayerSpec, n):
    """Scatter-add transpose of im2col_view."""
    c, h, w = spec.input_shape
    k = spec.kernel_size
    _, oh, ow = spec.output_shape
    d = dcols.reshape(n, oh, ow, c, k, k)
    dx = np.zeros((n, c, h, w))
    for ky in range(k):
        for kx in range(k):
            dx[:, :, ky : ky + oh, kx : kx + ow] += d[:, :, :, :, ky, kx].transpose(
                0, 3, 1, 2
            )
    return dx


def _pool_forward(spec, x):
    p = spec.pool_size
    n, c, h, w = x.shape
    oh, ow = h // p, w // p
    blocks = x.reshape(n, c, oh, p, ow, p).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, oh, ow, p * p
    )
    idx = blocks.argmax(axis=-1)  # ties resolve to the first position
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(spec, dout, idx, input_shape):
    p = spec.pool_size
    n = dout.shape[0]
    c, h, w = input_shape
    oh, ow = h // p, w // p
    dblocks = np.zeros((n, c, oh, ow, p * p))
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    return (
        dblocks.reshape(n, c, oh, ow, p, p)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


@dataclass
class ForwardTrace:
    """Per-layer pre- and post-activation values for one batch."""

    inputs: np.ndarray
    pre: list
    post: list
    pool_idx: list = field(default_factory=list)
    masks: list | None = None

    def layer_input(self, i):
        """The value consumed by layer i, in that layer's native shape."""
        return self.inputs if i == 0 else self.post[i - 1]


def _apply_activation(spec, z):
    if spec.activation == "relu":
        return relu(z)
    if spec.activation == "softmax":
        return softmax(z)
    return z


def forward(net: Network, batch, dropout_masks=None):
    """Run the network, recording every layer's pre/post activations.

    dropout_masks, when given, is a per-layer list applied
    multiplicatively to post-activation values (None entries skip a
    layer); masks carry their own inverted scaling.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.input_features:
        raise ShapeError(
            f"batch shape {x.shape} does not match network input "
            f"({net.input_features} features)"
        )
    pre_list, post_list, pool_idx = [], [], []
    cur = x
    for i, (spec, lw) in enumerate(zip(net.specs, net.weights)):
        if spec.kind == DENSE:
            if cur.ndim > 2:
                cur = cur.reshape(cur.shape[0], -1)
            z = matmul(cur, lw.weights) + lw.bias
            out = _apply_activation(spec, z)
            pool_idx.append(None)
        elif spec.kind == CONV:
            cols = im2col_view(spec, cur)
            f, oh, ow = spec.output_shape
            z = (matmul(cols, lw.weights) + lw.bias).reshape(x.shape[0], oh, ow, f)
            z = z.transpose(0, 3, 1, 2)
            out = _apply_activation(spec, z)
            pool_idx.append(None)
        else:
            if cur.ndim == 2:
                cur = cur.reshape(cur.shape[0], *spec.input_shape)
            z = None
            out, idx = _pool_forward(spec, cur)
            pool_idx.append(idx)
        if dropout_masks is not None and dropout_masks[i] is not None:
            out = out * dropout_masks[i].reshape(out.shape)
        pre_list.append(z)
        post_list.append(out)
        cur = out
    return ForwardTrace(x, pre_list, post_list, pool_idx, dropout_masks)


def _loss_gradient(net, trace, labels):
    """d(loss)/d(final pre-activation); also returns the loss value."""
    final = net.specs[-1]
    out = trace.post[-1]
    n = out.shape[0]
    labels = np.asarray(labels)
    if final.activation == "softmax":
        if labels.min() < 0 or labels.max() >= out.shape[1]:
            raise ValueError("label out of range for output layer")
        picked = out[np.arange(n), labels]
        loss = float(-np.mean(np.log(np.maximum(picked, 1e-300))))
        dz = out.copy()
        dz[np.arange(n), labels] -= 1.0
        return dz / n, loss
    # linear head: squared error against the label value (one output) or
    # a one-hot target (several outputs)
    if out.shape[1] == 1:
        target = labels.astype(np.float64).reshape(-1, 1)
    else:
        target = np.zeros_like(out)
        target[np.arange(n), labels] = 1.0
    diff = out - target
    loss = float(0.5 * np.mean(np.sum(diff**2, axis=1)))
    return diff / n, loss


def backward(net: Network, trace: ForwardTrace, labels):
    """Exact gradients of the batch loss for every weight and bias.

    Returns (grads, loss) where grads is a per-layer list of
    (dW, dbias) tuples, None for weightless layers.
    """
    grads = [None] * len(net.specs)
    dpost, loss = None, None
    dz, loss = _loss_gradient(net, trace, labels)
    dcur = dz  # gradient wrt pre-activation of the final layer
    for i in range(len(net.specs) - 1, -1, -1):
        spec, lw = net.specs[i], net.weights[i]
        if i < len(net.specs) - 1:
            # dcur currently holds gradient wrt this layer's post-activation
            if trace.masks is not None and trace.masks[i] is not None:
                dcur = dcur * trace.masks[i].reshape(dcur.shape)
            if spec.activation == "relu":
                dcur = dcur * (trace.pre[i] > 0)
            elif spec.activation == "softmax":
                raise ValueError("softmax below the final layer is unsupported")
        layer_in = trace.layer_input(i)
        if spec.kind == DENSE:
            flat_in = layer_in.reshape(layer_in.shape[0], -1)
            if dcur.ndim > 2:
                dcur = dcur.reshape(dcur.shape[0], -1)
            grads[i] = (flat_in.T @ dcur, dcur.sum(axis=0))
            dprev = dcur @ lw.weights.T
            prev_shape = net.specs[i - 1].output_shape if i else None
            if i and len(prev_shape) > 1:
                dprev = dprev.reshape(dprev.shape[0], *prev_shape)
        elif spec.kind == CONV:
            n = layer_in.shape[0]
            cols = im2col_view(spec, layer_in)
            f, oh, ow = spec.output_shape
            dz_rows = dcur.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
            grads[i] = (cols.T @ dz_rows, dz_rows.sum(axis=0))
            dprev = _col2im(dz_rows @ lw.weights.T, spec, n)
        else:
            if dcur.ndim == 2:
                dcur = dcur.reshape(dcur.shape[0], *spec.output_shape)
            dprev = _pool_backward(spec, dcur, trace.pool_idx[i], spec.input_shape)
        dcur = dprev
    return grads, loss


# --- serialization -----------------------------------------------------

_MAGIC = "SNRGAIN-NET 1"


def _spec_to_dict(spec: LayerSpec):
    return {
        "kind": spec.kind,
        "input_shape": list(spec.input_shape),
        "output_shape": list(spec.output_shape),
        "activation": spec.activation,
        "kernel_size": spec.kernel_size,
        "filter_count": spec.filter_count,
        "stride": spec.stride,
        "pool_size": spec.pool_size,
    }


def _spec_from_dict(d):
    return LayerSpec(
        d["kind"],
        tuple(d["input_shape"]),
        tuple(d["output_shape"]),
        d["activation"],
        kernel_size=d["kernel_size"],
        filter_count=d["filter_count"],
        stride=d["stride"],
        pool_size=d["pool_size"],
    )


def save_network(net: Network, path):
    """Write the container: text header with layer specs, then raw
    little-endian float64 weights and biases in layer order."""
    header = json.dumps({"layers": [_spec_to_dict(s) for s in net.specs]})
    with open(path, "wb") as f:
        f.write(f"{_MAGIC}\n{header}\n\n".encode())
        for lw in net.weights:
            if lw is not None:
                f.write(np.ascontiguousarray(lw.weights, dtype="<f8").tobytes())
                f.write(np.ascontiguousarray(lw.bias, dtype="<f8").tobytes())


def load_network(path):
    with open(path, "rb") as f:
        raw = f.read()
    head, sep, payload = raw.partition(b"\n\n")
    lines = head.decode().split("\n")
    if not sep or len(lines) != 2 or lines[0] != _MAGIC:
        raise ValueError(f"{path}: not a {_MAGIC} container")
    specs = [_spec_from_dict(d) for d in json.loads(lines[1])["layers"]]
    weights = []
    buf = io.BytesIO(payload)
    for spec in specs:
        ws = spec.weight_shape
        if ws is None:
            weights.append(None)
            continue
        n_w, n_b = ws[0] * ws[1], ws[1]
        data = np.frombuffer(buf.read(8 * (n_w + n_b)), dtype="<f8")
        if data.size != n_w + n_b:
            raise ValueError(f"{path}: truncated weight payload")
        weights.append(LayerWeights(data[:n_w].reshape(ws).copy(), data[n_w:].copy()))
    if buf.read(1):
        raise ValueError(f"{path}: trailing bytes after weight payload")
    return Network(specs, weights)
