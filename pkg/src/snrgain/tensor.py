"""Dense numerical kernel: float64 matrices, covariance, seeded RNG.

Everything is double precision. The covariance ratios downstream are
sensitive to cancellation, so float32 is never used. Matrices are plain
C-contiguous numpy arrays; the helpers here add the shape/validity checks
the rest of the package relies on.
"""

import numpy as np


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class RngState:
    """Deterministic, splittable random stream.

    Backed by the Philox counter-based generator, so the same seed gives
    the same sequence on every platform and run. Independent substreams
    for parallel work come from ``derive``, which folds an index path into
    the key instead of advancing shared state.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.Philox(ss))

    def derive(self, *path):
        """Child stream independent of this one and of other siblings."""
        return RngState(self.seed, _path=self.path + tuple(path))

    def __repr__(self):
        return f"RngState(seed={self.seed}, path={self.path})"


def as_matrix(a, name="matrix"):
    """Coerce to a 2-D float64 array, rejecting non-finite entries."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def matmul(a, b):
    """Matrix product with an explicit shape report on mismatch."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul shape mismatch: ({a.shape[0]}x{a.shape[1]}) @ ({b.shape[0]}x{b.shape[1]})"
        )
    return a @ b


def column_covariance(samples, reference):
    """Sample covariance of each column of `samples` against `reference`.

    Uses the two-pass definition with 1/(N-1) normalization. The fitness
    and gain figures are homogeneous in the covariances, so the choice of
    normalization cancels there; it is fixed here so oracles agree.
    """
    x = np.asarray(samples, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64).ravel()
    if x.ndim != 2:
        raise ShapeError(f"samples must be 2-D, got shape {x.shape}")
    if r.shape[0] != x.shape[0]:
        raise ShapeError(
            f"reference length {r.shape[0]} != sample count {x.shape[0]}"
        )
    n = x.shape[0]
    if n < 2:
        raise ValueError(f"covariance needs at least 2 samples, got {n}")
    xc = x - x.mean(axis=0)
    rc = r - r.mean()
    return xc.T @ rc / (n - 1)


def gaussian_noise(shape, sigma, rng):
    """I.i.d. zero-mean Gaussian matrix with standard deviation `sigma`."""
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.zeros(shape, dtype=np.float64)
    return rng.generator.normal(0.0, sigma, size=shape)


def norm(v):
    """Euclidean norm of a 1-D vector."""
    return float(np.linalg.norm(np.asarray(v, dtype=np.float64)))
