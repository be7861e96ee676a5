"""Dataset loading and generation.

Covers the two canonical binary formats (MNIST IDX, CIFAR-10 bin), a
synthetic correlated-input generator used as the ground-truth scenario in
oracle tests, a deterministic glyph-image generator for self-contained
pipeline experiments, train/test splitting, and simple augmentation.

All pixel features are scaled by 1/255 into [0, 1]; no mean-centering is
applied because the downstream analysis assumes non-negative inputs.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .tensor import RngState, gaussian_noise

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


class FormatError(ValueError):
    """Input file does not conform to its binary format."""


@dataclass
class LabeledDataset:
    """Feature matrix (samples x features, values in [0,1]) plus labels."""

    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    # (channels, height, width) when samples are images, else None
    image_shape: tuple | None = None

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError(f"inputs must be 2-D, got shape {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"labels length {self.labels.shape} does not match "
                f"{self.inputs.shape[0]} samples"
            )
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ValueError("label out of range for class_count")
        if self.inputs.size and (self.inputs.min() < 0.0 or self.inputs.max() > 1.0):
            raise ValueError("inputs must lie within [0, 1]")
        if self.image_shape is not None:
            c, h, w = self.image_shape
            if c * h * w != self.inputs.shape[1]:
                raise ValueError("image_shape does not match feature count")

    @property
    def sample_count(self):
        return self.inputs.shape[0]

    @property
    def feature_count(self):
        return self.inputs.shape[1]

    def subset(self, idx):
        return LabeledDataset(
            self.inputs[idx], self.labels[idx], self.class_count, self.image_shape
        )


@dataclass(frozen=True)
class SplitSpec:
    train_count: int
    test_count: int
    seed: int


def split(data: LabeledDataset, spec: SplitSpec):
    """Deterministic disjoint train/test subsets drawn by seeded permutation."""
    total = spec.train_count + spec.test_count
    if total > data.sample_count:
        raise ValueError(
            f"split needs {total} samples, dataset has {data.sample_count}"
        )
    perm = RngState(spec.seed).generator.permutation(data.sample_count)
    return data.subset(perm[: spec.train_count]), data.subset(
        perm[spec.train_count : total]
    )


def _read_be32(buf, offset, path):
    if offset + 4 > len(buf):
        raise FormatError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_mnist_idx(images_path, labels_path):
    """Load an MNIST-style IDX image/label file pair.

    Images are flattened row-wise (28x28 -> 784 for MNIST) and scaled by
    1/255. The two files must agree on the sample count.
    """
    with open(images_path, "rb") as f:
        raw = f.read()
    magic = _read_be32(raw, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise FormatError(
            f"{images_path}: bad images magic 0x{magic:08x}, expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    count = _read_be32(raw, 4, images_path)
    rows = _read_be32(raw, 8, images_path)
    cols = _read_be32(raw, 12, images_path)
    expected = 16 + count * rows * cols
    if len(raw) != expected:
        raise FormatError(
            f"{images_path}: payload is {len(raw)} bytes, header implies {expected}"
        )
    pixels = np.frombuffer(raw, dtype=np.uint8, offset=16).reshape(count, rows * cols)

    with open(labels_path, "rb") as f:
        raw_l = f.read()
    magic_l = _read_be32(raw_l, 0, labels_path)
    if magic_l != IDX_LABELS_MAGIC:
        raise FormatError(
            f"{labels_path}: bad labels magic 0x{magic_l:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    count_l = _read_be32(raw_l, 4, labels_path)
    if len(raw_l) != 8 + count_l:
        raise FormatError(
            f"{labels_path}: payload is {len(raw_l)} bytes, header implies {8 + count_l}"
        )
    if count_l != count:
        raise FormatError(
            f"image file has {count} samples but label file has {count_l}"
        )
    labels = np.frombuffer(raw_l, dtype=np.uint8, offset=8)

    return LabeledDataset(
        pixels.astype(np.float64) / 255.0,
        labels.astype(np.int64),
        class_count=10,
        image_shape=(1, rows, cols),
    )


def load_cifar10_bin(batch_paths):
    """Load CIFAR-10 binary (version 1) batch files.

    Each record is 3073 bytes: one label byte then 3072 pixel bytes in
    channel-planar order (R plane, G plane, B plane), preserved as-is.
    """
    if isinstance(batch_paths, (str, bytes)):
        batch_paths = [batch_paths]
    chunks = []
    labels = []
    for path in batch_paths:
        with open(path, "rb") as f:
            raw = f.read()
        if len(raw) == 0 or len(raw) % CIFAR_RECORD_BYTES != 0:
            raise FormatError(
                f"{path}: length {len(raw)} is not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        if rec[:, 0].max() > 9:
            bad = int(rec[:, 0].max())
            raise FormatError(f"{path}: label byte {bad} out of range 0-9")
        labels.append(rec[:, 0])
        chunks.append(rec[:, 1:])
    pixels = np.concatenate(chunks, axis=0)
    labels = np.concatenate(labels, axis=0)
    return LabeledDataset(
        pixels.astype(np.float64) / 255.0,
        labels.astype(np.int64),
        class_count=10,
        image_shape=(3, 32, 32),
    )


def synthetic_correlated(groups, group_size, samples, noise_sigma, rng: RngState):
    """Groups of features sharing one latent driver plus independent noise.

    Each sample draws one latent value per group (arcsine-distributed in
    [0,1], which keeps within-group correlation high relative to the
    noise); every feature in a group is that latent plus Gaussian noise,
    clipped to [0,1]. The label is the argmax over latent drivers, so
    optimal weights are known by construction.
    """
    if groups < 1 or group_size < 1 or samples < 1:
        raise ValueError("groups, group_size and samples must all be >= 1")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be non-negative, got {noise_sigma}")
    gen = rng.generator
    drivers = gen.beta(0.5, 0.5, size=(samples, groups))
    feats = np.repeat(drivers, group_size, axis=1)
    if noise_sigma > 0:
        feats = feats + gen.normal(0.0, noise_sigma, size=feats.shape)
        feats = np.clip(feats, 0.0, 1.0)
    labels = np.argmax(drivers, axis=1)
    return LabeledDataset(feats, labels, class_count=groups)


def _upsample_smooth(grid, h, w):
    """Blocky upsample of a coarse grid followed by two box blurs."""
    gh, gw = grid.shape
    img = np.repeat(np.repeat(grid, -(-h // gh), axis=0), -(-w // gw), axis=1)[:h, :w]
    for _ in range(2):
        padded = np.pad(img, 1, mode="edge")
        img = (
            padded[:-2, :-2] + padded[:-2, 1:-1] + padded[:-2, 2:]
            + padded[1:-1, :-2] + padded[1:-1, 1:-1] + padded[1:-1, 2:]
            + padded[2:, :-2] + padded[2:, 1:-1] + padded[2:, 2:]
        ) / 9.0
    return img


def synthetic_glyphs(
    classes,
    samples,
    rng: RngState,
    image_shape=(1, 28, 28),
    shift=4,
    noise_sigma=0.3,
    grid=7,
    parts=6,
):
    """Deterministic image-classification stand-in dataset.

    Class prototypes are sparse mixtures drawn from a shared pool of
    smooth random blobs, so classes share structure and are confusable
    the way real glyphs are; samples are randomly shifted,
    intensity-jittered, noisy copies. The pixels of a blob stay strongly
    correlated across samples of a class, which gives the data the same
    correlated-input structure real image data has. Useful when the
    canonical MNIST/CIFAR binaries are not on disk; defaults put a plain
    SGD desk-scale run in the same accuracy band as MNIST.
    """
    c, h, w = image_shape
    gen = rng.generator
    pool = np.stack(
        [
            np.clip(
                (np.stack([_upsample_smooth(gen.uniform(0, 1, (grid, grid)), h, w)
                           for _ in range(c)]) - 0.45) * 3.0,
                0.0, 1.0,
            )
            for _ in range(parts)
        ]
    )  # parts x c x h x w
    protos = []
    for _ in range(classes):
        for _attempt in range(60):
            mix = gen.dirichlet(np.full(parts, 1.0 / 3.0))
            img = np.einsum("p,pchw->chw", mix, pool)
            peak = img.max()
            if peak < 1e-6:
                continue
            img = img / peak
            # keep classes distinguishable in principle
            if all(np.mean((img - p) ** 2) > 0.01 for p in protos):
                break
        protos.append(img)
    protos = np.stack(protos)  # classes x c x h x w

    labels = gen.integers(0, classes, size=samples)
    dx = gen.integers(-shift, shift + 1, size=samples)
    dy = gen.integers(-shift, shift + 1, size=samples)
    gain = gen.uniform(0.6, 1.0, size=samples)
    noise = gen.normal(0.0, noise_sigma, size=(samples, c, h, w))

    out = np.zeros((samples, c, h, w))
    for i in range(samples):
        base = protos[labels[i]]
        shifted = np.zeros_like(base)
        sy, sx = int(dy[i]), int(dx[i])
        ys0, ys1 = max(0, sy), min(h, h + sy)
        xs0, xs1 = max(0, sx), min(w, w + sx)
        shifted[:, ys0:ys1, xs0:xs1] = base[:, ys0 - sy : ys1 - sy, xs0 - sx : xs1 - sx]
        out[i] = shifted * gain[i] + noise[i]
    out = np.clip(out, 0.0, 1.0)
    return LabeledDataset(
        out.reshape(samples, -1), labels, class_count=classes, image_shape=image_shape
    )


@dataclass(frozen=True)
class AugmentSpec:
    shift_pixels: int = 0
    flip_horizontal: bool = False
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.shift_pixels < 0 or self.noise_sigma < 0:
            raise ValueError("augmentation fields must be non-negative")

    @property
    def is_identity(self):
        return self.shift_pixels == 0 and not self.flip_horizontal and self.noise_sigma == 0.0


def augment(data: LabeledDataset, spec: AugmentSpec, rng: RngState):
    """Transformed copy of a dataset: random shift, mirror, pixel noise.

    Shifts are drawn per sample within +-shift_pixels and zero-padded.
    flip_horizontal mirrors every image (applying it twice restores the
    original). Output values are clamped to [0, 1].
    """
    if spec.is_identity:
        return data
    if (spec.shift_pixels > 0 or spec.flip_horizontal) and data.image_shape is None:
        raise ValueError("shift/flip augmentation requires image-shaped data")
    x = data.inputs
    if data.image_shape is not None:
        c, h, w = data.image_shape
        if spec.shift_pixels >= min(h, w):
            raise ValueError(
                f"shift {spec.shift_pixels} exceeds image dimension {min(h, w)}"
            )
        imgs = x.reshape(-1, c, h, w)
        if spec.shift_pixels > 0:
            gen = rng.generator
            n = imgs.shape[0]
            dx = gen.integers(-spec.shift_pixels, spec.shift_pixels + 1, size=n)
            dy = gen.integers(-spec.shift_pixels, spec.shift_pixels + 1, size=n)
            shifted = np.zeros_like(imgs)
            for i in range(n):
                sy, sx = int(dy[i]), int(dx[i])
                ys0, ys1 = max(0, sy), min(h, h + sy)
                xs0, xs1 = max(0, sx), min(w, w + sx)
                shifted[i, :, ys0:ys1, xs0:xs1] = imgs[
                    i, :, ys0 - sy : ys1 - sy, xs0 - sx : xs1 - sx
                ]
            imgs = shifted
        if spec.flip_horizontal:
            imgs = imgs[:, :, :, ::-1]
        x = imgs.reshape(x.shape[0], -1)
    if spec.noise_sigma > 0:
        x = x + gaussian_noise(x.shape, spec.noise_sigma, rng)
    x = np.clip(x, 0.0, 1.0)
    return LabeledDataset(x, data.labels, data.class_count, data.image_shape)


def save_dataset(data: LabeledDataset, path):
    """Write the little-endian container: header, labels, features.

    Layout: u32 feature count, u32 sample count, then one u8 label per
    sample, then row-major float64 features. class_count is recovered on
    load as max(label) + 1.
    """
    if data.class_count > 256:
        raise ValueError("container stores labels as u8; class_count > 256")
    with open(path, "wb") as f:
        f.write(struct.pack("<II", data.feature_count, data.sample_count))
        f.write(data.labels.astype(np.uint8).tobytes())
        f.write(np.ascontiguousarray(data.inputs, dtype="<f8").tobytes())


def load_dataset(path):
    """Read a container written by save_dataset."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header")
    features, samples = struct.unpack_from("<II", raw, 0)
    expected = 8 + samples + samples * features * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: length {len(raw)}, header implies {expected}")
    labels = np.frombuffer(raw, dtype=np.uint8, count=samples, offset=8)
    feats = np.frombuffer(raw, dtype="<f8", offset=8 + samples).reshape(samples, features)
    class_count = int(labels.max()) + 1 if samples else 0
    return LabeledDataset(feats, labels.astype(np.int64), class_count)
