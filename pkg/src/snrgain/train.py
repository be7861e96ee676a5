"""Fixed-step SGD with the regularization menu: none, L2, dropout,
input noise, plus optional augmentation.

Updates are plain w <- w - lr * (dL/dw + 2*lambda*w); no momentum, no
schedules, no adaptive optimizers. Everything is deterministic given the
config seed.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import AugmentSpec, LabeledDataset, augment
from .nn import DENSE, Network, backward, forward
from .tensor import RngState, gaussian_noise

REGULARIZERS = ("none", "l2", "dropout", "input_noise")


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    regularizer: str = "none"
    l2_lambda: float = 0.0
    dropout_rate: float | tuple = 0.0  # scalar, or one rate per hidden dense layer
    input_noise_sigma: float = 0.0
    augmentation: AugmentSpec = field(default_factory=AugmentSpec)
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.regularizer not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.regularizer!r}")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("bad epoch/batch configuration")
        if self.l2_lambda < 0 or self.input_noise_sigma < 0:
            raise ValueError("l2_lambda and input_noise_sigma must be >= 0")
        for r in np.atleast_1d(self.dropout_rate):
            if not (0.0 <= r < 1.0):
                raise ValueError(f"dropout rate {r} outside [0, 1)")

    @property
    def label(self):
        if self.name:
            return self.name
        if self.regularizer == "l2":
            return f"l2_{self.l2_lambda:g}"
        if self.regularizer == "dropout":
            rates = np.atleast_1d(self.dropout_rate)
            return "dropout_" + "_".join(f"{r:g}" for r in rates)
        if self.regularizer == "input_noise":
            return f"noise_{self.input_noise_sigma:g}"
        return "plain"

    def to_dict(self):
        d = {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "regularizer": self.regularizer,
            "seed": self.seed,
        }
        if self.regularizer == "l2":
            d["l2_lambda"] = self.l2_lambda
        if self.regularizer == "dropout":
            d["dropout_rate"] = (
                list(self.dropout_rate)
                if isinstance(self.dropout_rate, (tuple, list))
                else self.dropout_rate
            )
        if self.regularizer == "input_noise":
            d["input_noise_sigma"] = self.input_noise_sigma
        if not self.augmentation.is_identity:
            d["augmentation"] = {
                "shift_pixels": self.augmentation.shift_pixels,
                "flip_horizontal": self.augmentation.flip_horizontal,
                "noise_sigma": self.augmentation.noise_sigma,
            }
        if self.name:
            d["name"] = self.name
        return d

    @classmethod
    def from_dict(cls, d):
        aug = d.get("augmentation", {})
        dr = d.get("dropout_rate", 0.0)
        return cls(
            epochs=d["epochs"],
            batch_size=d["batch_size"],
            learning_rate=d["learning_rate"],
            regularizer=d.get("regularizer", "none"),
            l2_lambda=d.get("l2_lambda", 0.0),
            dropout_rate=tuple(dr) if isinstance(dr, list) else dr,
            input_noise_sigma=d.get("input_noise_sigma", 0.0),
            augmentation=AugmentSpec(
                shift_pixels=aug.get("shift_pixels", 0),
                flip_horizontal=bool(aug.get("flip_horizontal", False)),
                noise_sigma=aug.get("noise_sigma", 0.0),
            ),
            seed=d.get("seed", 0),
            name=d.get("name", ""),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass
class TrainResult:
    network: Network
    train_accuracy: float
    test_accuracy: float
    epochs_completed: int
    config: TrainConfig


def make_dropout_mask(shape, rate, rng: RngState):
    """Inverted-dropout mask: zeros with probability rate, survivors
    scaled by 1/(1-rate) so expected sums are unchanged."""
    if not (0.0 <= rate < 1.0):
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.generator.random(shape) >= rate
    return keep / (1.0 - rate)


def apply_dropout_mask(activations, rate, rng: RngState):
    activations = np.asarray(activations, dtype=np.float64)
    return activations * make_dropout_mask(activations.shape, rate, rng)


def _hidden_dense_indices(net: Network):
    return [
        i
        for i, s in enumerate(net.specs[:-1])
        if s.kind == DENSE and s.activation == "relu"
    ]


def _dropout_rates(net, cfg):
    """Resolve the configured rate(s) onto the hidden dense layers."""
    hidden = _hidden_dense_indices(net)
    rates = cfg.dropout_rate
    if isinstance(rates, (tuple, list)):
        if len(rates) != len(hidden):
            raise ValueError(
                f"{len(rates)} dropout rates given for {len(hidden)} hidden dense layers"
            )
        return dict(zip(hidden, rates))
    return {i: float(rates) for i in hidden}


def evaluate(net: Network, data: LabeledDataset, batch_size=512):
    """Fraction of samples whose argmax output matches the label.

    Ties resolve toward the lowest class index.
    """
    hits = 0
    for start in range(0, data.sample_count, batch_size):
        x = data.inputs[start : start + batch_size]
        y = data.labels[start : start + batch_size]
        out = forward(net, x).post[-1]
        hits += int(np.sum(np.argmax(out, axis=1) == y))
    return hits / data.sample_count if data.sample_count else 0.0


def train(net: Network, data: LabeledDataset, cfg: TrainConfig, test_data: LabeledDataset):
    """SGD-train a copy of `net`; the passed network is left untouched."""
    if data.sample_count == 0:
        raise ValueError("training data is empty")
    net = net.copy()
    root = RngState(cfg.seed)
    shuffle_rng = root.derive(1)
    noise_rng = root.derive(2)
    dropout_rng = root.derive(3)
    augment_rng = root.derive(4)

    rates = _dropout_rates(net, cfg) if cfg.regularizer == "dropout" else {}
    lam = cfg.l2_lambda if cfg.regularizer == "l2" else 0.0
    sigma = cfg.input_noise_sigma if cfg.regularizer == "input_noise" else 0.0
    aug = cfg.augmentation

    n = data.sample_count
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.generator.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            x = data.inputs[idx]
            y = data.labels[idx]
            if not aug.is_identity:
                batch = LabeledDataset(x, y, data.class_count, data.image_shape)
                x = augment(batch, aug, augment_rng.derive(step)).inputs
            if sigma > 0:
                x = x + gaussian_noise(x.shape, sigma, noise_rng)
            masks = None
            if rates:
                masks = [None] * len(net.specs)
                for li, rate in rates.items():
                    masks[li] = make_dropout_mask(
                        (x.shape[0], net.specs[li].fan_out), rate, dropout_rng
                    )
            trace = forward(net, x, dropout_masks=masks)
            grads, loss = backward(net, trace, y)
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"loss became non-finite at epoch {epoch}, step {step} "
                    f"(config {cfg.label!r})"
                )
            if cfg.learning_rate != 0.0:
                for li, g in enumerate(grads):
                    if g is None:
                        continue
                    dw, db = g
                    lw = net.weights[li]
                    if lam:
                        dw = dw + 2.0 * lam * lw.weights
                    lw.weights -= cfg.learning_rate * dw
                    lw.bias -= cfg.learning_rate * db
            step += 1
    return TrainResult(
        network=net,
        train_accuracy=evaluate(net, data),
        test_accuracy=evaluate(net, test_data),
        epochs_completed=cfg.epochs,
        config=cfg,
    )
