"""Independent definitional implementations used as test oracles.

Everything here is written as plain loops over the defining formulas, on
purpose: these must stay independent of the library code they check.
"""

import math
import struct

import numpy as np


def matmul_loops(a, b):
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def covariance_two_pass(x, y):
    """Sample covariance of two sequences, 1/(N-1)."""
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    return sum((x[i] - mx) * (y[i] - my) for i in range(n)) / (n - 1)


def column_covariance_loops(samples, reference):
    return np.array(
        [covariance_two_pass(samples[:, j], reference) for j in range(samples.shape[1])]
    )


def cosine_loops(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def node_merit_loops(inputs, w, threshold, scale_inputs, bias=None):
    """End-to-end composition: filtering, scaling with weight
    compensation, covariance vector, fitness, reference, gain.

    Returns (s, s_ref, g, active_indices) or None when undefined.
    """
    x = np.asarray(inputs, dtype=float)
    w = np.asarray(w, dtype=float)
    n, j = x.shape
    maxima = [max(x[:, col]) for col in range(j)]
    active = [col for col in range(j) if maxima[col] > threshold]
    if not active:
        return None
    if scale_inputs:
        xs = np.column_stack([x[:, col] / maxima[col] for col in active])
        ws = np.array([w[col] * maxima[col] for col in active])
    else:
        xs = x[:, active]
        ws = w[active]
    rates = np.array([np.mean(xs[:, k] > 0) for k in range(len(active))])
    y = np.array([sum(xs[i, k] * ws[k] for k in range(len(active))) for i in range(n)])
    c = np.array(
        [covariance_two_pass(xs[:, k], y) / rates[k] for k in range(len(active))]
    )
    if math.sqrt(sum(v * v for v in c)) == 0 or math.sqrt(sum(v * v for v in ws)) == 0:
        return None
    s = cosine_loops(ws, c)
    s_ref = max(abs(v) for v in c) / math.sqrt(sum(v * v for v in c))
    return s, s_ref, s / s_ref, active


def conv_direct(images, kernels, bias):
    """Valid convolution by direct sliding windows.

    images: (n, c, h, w); kernels: (f, c, k, k); returns (n, f, oh, ow).
    """
    n, c, h, w = images.shape
    f, _, k, _ = kernels.shape
    oh, ow = h - k + 1, w - k + 1
    out = np.zeros((n, f, oh, ow))
    for s in range(n):
        for fi in range(f):
            for y in range(oh):
                for x in range(ow):
                    acc = bias[fi]
                    for ci in range(c):
                        for ky in range(k):
                            for kx in range(k):
                                acc += images[s, ci, y + ky, x + kx] * kernels[fi, ci, ky, kx]
                    out[s, fi, y, x] = acc
    return out


def ranks_with_ties(values):
    """Average ranks, 1-based, computed by exhaustive comparison."""
    values = list(values)
    n = len(values)
    ranks = []
    for v in values:
        less = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks.append(less + (equal + 1) / 2.0)
    return np.array(ranks)


def spearman_loops(x, y):
    rx, ry = ranks_with_ties(x), ranks_with_ties(y)
    return pearson_loops(rx, ry)


def pearson_loops(x, y):
    n = len(x)
    mx, my = sum(x) / n, sum(y) / n
    num = sum((x[i] - mx) * (y[i] - my) for i in range(n))
    dx = math.sqrt(sum((v - mx) ** 2 for v in x))
    dy = math.sqrt(sum((v - my) ** 2 for v in y))
    return num / (dx * dy)


# --- binary format fabrication -------------------------------------------

def idx_images_bytes(images, magic=0x00000803):
    """images: uint8 array (n, rows, cols)."""
    n, rows, cols = images.shape
    return struct.pack(">IIII", magic, n, rows, cols) + images.astype(np.uint8).tobytes()


def idx_labels_bytes(labels, magic=0x00000801):
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", magic, labels.size) + labels.tobytes()


def cifar_batch_bytes(labels, images):
    """labels: (n,), images: uint8 (n, 3072) in planar RGB order."""
    out = bytearray()
    for lab, img in zip(labels, images):
        out.append(int(lab))
        out.extend(np.asarray(img, dtype=np.uint8).tobytes())
    return bytes(out)


def write_mnist_pair(tmpdir, images, labels, prefix="train"):
    ipath = tmpdir / f"{prefix}-images-idx3-ubyte"
    lpath = tmpdir / f"{prefix}-labels-idx1-ubyte"
    ipath.write_bytes(idx_images_bytes(images))
    lpath.write_bytes(idx_labels_bytes(labels))
    return str(ipath), str(lpath)
