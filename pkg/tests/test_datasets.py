import numpy as np
import pytest

from snrgain.datasets import (
    AugmentSpec,
    FormatError,
    LabeledDataset,
    SplitSpec,
    augment,
    load_cifar10_bin,
    load_dataset,
    load_mnist_idx,
    save_dataset,
    split,
    synthetic_correlated,
    synthetic_glyphs,
)
from snrgain.tensor import RngState

import oracles


def _fake_mnist(tmp_path, n=6, seed=0):
    gen = RngState(seed).generator
    images = gen.integers(0, 256, size=(n, 28, 28), dtype=np.uint8)
    labels = gen.integers(0, 10, size=n, dtype=np.uint8)
    paths = oracles.write_mnist_pair(tmp_path, images, labels)
    return images, labels, paths


class TestMnistIdx:
    def test_roundtrip_values_bit_exact(self, tmp_path):
        images, labels, (ip, lp) = _fake_mnist(tmp_path)
        data = load_mnist_idx(ip, lp)
        assert data.inputs.shape == (6, 784)
        # integers recovered exactly before scaling
        assert np.array_equal(
            np.round(data.inputs * 255).astype(np.uint8), images.reshape(6, -1)
        )
        assert np.array_equal(data.labels, labels)
        assert data.image_shape == (1, 28, 28)

    def test_accepts_only_canonical_magics(self, tmp_path):
        images, labels, (ip, lp) = _fake_mnist(tmp_path)
        bad_i = tmp_path / "bad-images"
        bad_i.write_bytes(oracles.idx_images_bytes(images, magic=0x00000804))
        with pytest.raises(FormatError, match="magic"):
            load_mnist_idx(str(bad_i), lp)
        bad_l = tmp_path / "bad-labels"
        bad_l.write_bytes(oracles.idx_labels_bytes(labels, magic=0x00000802))
        with pytest.raises(FormatError, match="magic"):
            load_mnist_idx(ip, str(bad_l))

    def test_empty_file_is_truncation_error(self, tmp_path):
        _, _, (ip, lp) = _fake_mnist(tmp_path)
        empty = tmp_path / "empty"
        empty.write_bytes(b"")
        with pytest.raises(FormatError, match="truncated"):
            load_mnist_idx(str(empty), lp)

    def test_truncated_payload_rejected(self, tmp_path):
        images, labels, (ip, lp) = _fake_mnist(tmp_path)
        raw = open(ip, "rb").read()
        cut = tmp_path / "cut"
        cut.write_bytes(raw[:-10])
        with pytest.raises(FormatError, match="payload"):
            load_mnist_idx(str(cut), lp)

    def test_count_mismatch_between_files(self, tmp_path):
        images, labels, (ip, lp) = _fake_mnist(tmp_path)
        short = tmp_path / "short-labels"
        short.write_bytes(oracles.idx_labels_bytes(labels[:-1]))
        with pytest.raises(FormatError, match="samples"):
            load_mnist_idx(ip, str(short))

    def test_all_zero_image(self, tmp_path):
        images = np.zeros((1, 28, 28), dtype=np.uint8)
        ip, lp = oracles.write_mnist_pair(tmp_path, images, np.array([3]))
        data = load_mnist_idx(ip, lp)
        assert np.array_equal(data.inputs[0], np.zeros(784))


class TestCifarBin:
    def test_single_record_file(self, tmp_path):
        img = np.arange(3072, dtype=np.uint8) % 251
        p = tmp_path / "b.bin"
        p.write_bytes(oracles.cifar_batch_bytes([7], [img]))
        data = load_cifar10_bin(str(p))
        assert data.sample_count == 1
        assert data.labels[0] == 7

    def test_label9_all_255(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(oracles.cifar_batch_bytes([9], [np.full(3072, 255, np.uint8)]))
        data = load_cifar10_bin(str(p))
        assert data.labels[0] == 9
        assert np.all(data.inputs[0] == 1.0)

    def test_two_records_match_byte_decoder(self, tmp_path):
        gen = RngState(3).generator
        imgs = gen.integers(0, 256, size=(2, 3072), dtype=np.uint8)
        p = tmp_path / "b.bin"
        p.write_bytes(oracles.cifar_batch_bytes([1, 4], imgs))
        data = load_cifar10_bin(str(p))
        # definitional decode: byte value / 255 in file order
        for i in range(2):
            assert np.array_equal(data.inputs[i], imgs[i].astype(np.float64) / 255.0)
        assert list(data.labels) == [1, 4]

    def test_bad_length_rejected(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(b"\x00" * 3072)
        with pytest.raises(FormatError, match="multiple"):
            load_cifar10_bin(str(p))

    def test_label_out_of_range(self, tmp_path):
        p = tmp_path / "b.bin"
        p.write_bytes(oracles.cifar_batch_bytes([11], [np.zeros(3072, np.uint8)]))
        with pytest.raises(FormatError, match="label"):
            load_cifar10_bin(str(p))


class TestSyntheticCorrelated:
    def test_zero_noise_gives_identical_group_columns(self):
        data = synthetic_correlated(3, 4, 50, 0.0, RngState(1))
        x = data.inputs
        for g in range(3):
            block = x[:, g * 4 : (g + 1) * 4]
            assert np.all(block == block[:, [0]])

    def test_within_group_correlation_high(self):
        data = synthetic_correlated(2, 3, 10_000, 0.1, RngState(2))
        cc = np.corrcoef(data.inputs[:, :3].T)
        assert cc[0, 1] > 0.9 and cc[0, 2] > 0.9 and cc[1, 2] > 0.9

    def test_labels_balanced(self):
        data = synthetic_correlated(4, 2, 10_000, 0.05, RngState(3))
        frac = np.bincount(data.labels, minlength=4) / 10_000
        assert np.all(np.abs(frac - 0.25) < 0.05 * 1.0)

    def test_label_is_argmax_of_drivers(self):
        data = synthetic_correlated(5, 2, 300, 0.0, RngState(4))
        drivers = data.inputs[:, ::2]  # first feature of each group = driver
        assert np.array_equal(np.argmax(drivers, axis=1), data.labels)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            synthetic_correlated(0, 2, 5, 0.1, RngState(0))


class TestAugment:
    def _image_data(self, seed=0, n=40):
        gen = RngState(seed).generator
        x = gen.random((n, 36)) * 0.5 + 0.25
        return LabeledDataset(x, gen.integers(0, 3, n), 3, image_shape=(1, 6, 6))

    def test_identity_spec(self):
        data = self._image_data()
        out = augment(data, AugmentSpec(), RngState(1))
        assert np.array_equal(out.inputs, data.inputs)

    def test_flip_twice_restores(self):
        data = self._image_data()
        spec = AugmentSpec(flip_horizontal=True)
        once = augment(data, spec, RngState(1))
        twice = augment(once, spec, RngState(2))
        assert np.array_equal(twice.inputs, data.inputs)
        assert not np.array_equal(once.inputs, data.inputs)

    def test_noise_std_in_range(self):
        gen = RngState(5).generator
        x = np.full((2000, 64), 0.5) + gen.random((2000, 64)) * 0.01
        data = LabeledDataset(x, np.zeros(2000, int), 1, image_shape=(1, 8, 8))
        out = augment(data, AugmentSpec(noise_sigma=0.1), RngState(6))
        dev = (out.inputs - data.inputs).ravel()
        assert abs(np.std(dev) - 0.1) < 0.01  # mid-range pixels, no clipping bias

    def test_output_stays_in_unit_interval(self):
        data = self._image_data(7)
        out = augment(data, AugmentSpec(shift_pixels=2, noise_sigma=0.5), RngState(8))
        assert out.inputs.min() >= 0.0 and out.inputs.max() <= 1.0

    def test_excessive_shift_rejected(self):
        data = self._image_data()
        with pytest.raises(ValueError, match="shift"):
            augment(data, AugmentSpec(shift_pixels=6), RngState(0))

    def test_flip_needs_image_shape(self):
        flat = LabeledDataset(np.ones((4, 5)) * 0.5, np.zeros(4, int), 1)
        with pytest.raises(ValueError, match="image"):
            augment(flat, AugmentSpec(flip_horizontal=True), RngState(0))


class TestSplitAndContainer:
    def test_split_deterministic(self):
        data = synthetic_correlated(3, 2, 100, 0.1, RngState(9))
        s = SplitSpec(60, 20, seed=5)
        a_train, a_test = split(data, s)
        b_train, b_test = split(data, s)
        assert np.array_equal(a_train.inputs, b_train.inputs)
        assert np.array_equal(a_test.labels, b_test.labels)

    def test_split_disjoint_and_sized(self):
        data = synthetic_correlated(2, 2, 50, 0.0, RngState(10))
        tr, te = split(data, SplitSpec(30, 20, seed=1))
        assert tr.sample_count == 30 and te.sample_count == 20

    def test_split_rejects_oversubscription(self):
        data = synthetic_correlated(2, 2, 10, 0.0, RngState(0))
        with pytest.raises(ValueError, match="split"):
            split(data, SplitSpec(8, 4, seed=0))

    def test_container_roundtrip_bit_exact(self, tmp_path):
        data = synthetic_correlated(4, 3, 25, 0.2, RngState(11))
        path = tmp_path / "data.bin"
        save_dataset(data, path)
        back = load_dataset(path)
        assert np.array_equal(back.inputs, data.inputs)
        assert np.array_equal(back.labels, data.labels)
        assert back.class_count == data.class_count

    def test_container_layout_documented(self, tmp_path):
        # header: u32 features, u32 samples; then u8 labels; then f64 LE rows
        data = LabeledDataset(np.array([[0.5, 1.0], [0.0, 0.25]]), [1, 0], 2)
        path = tmp_path / "tiny.bin"
        save_dataset(data, path)
        raw = path.read_bytes()
        assert raw[:8] == (2).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert raw[8:10] == bytes([1, 0])
        assert np.frombuffer(raw[10:], dtype="<f8").tolist() == [0.5, 1.0, 0.0, 0.25]


class TestGlyphs:
    def test_deterministic(self):
        a = synthetic_glyphs(4, 30, RngState(1), image_shape=(1, 12, 12))
        b = synthetic_glyphs(4, 30, RngState(1), image_shape=(1, 12, 12))
        assert np.array_equal(a.inputs, b.inputs)
        assert np.array_equal(a.labels, b.labels)

    def test_range_and_shapes(self):
        data = synthetic_glyphs(3, 20, RngState(2), image_shape=(1, 10, 10))
        assert data.inputs.shape == (20, 100)
        assert data.inputs.min() >= 0 and data.inputs.max() <= 1.0
        assert data.class_count == 3
