"""SVD, bulk-edge estimation, noise-spectrum imputation and the empirical D-transform.

All edge and imputation formulas work on the eigenvalue scale
``lambda_i = sigma_i**2`` of ``S~ S~^T``.
"""

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

EDGE_FACTOR = 1.0 / (2.0 ** (2.0 / 3.0) - 1.0)
MIN_PILOT = 3
EVAL_GUARD = 1e-6


class SpectrumError(ValueError):
    """Raised when a spectrum cannot support the requested estimate."""


class NonFiniteError(ValueError, ArithmeticError):
    """Input data contains NaN or infinity."""


@dataclass(frozen=True)
class SpectralDecomposition:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    n: int
    d: int

    @property
    def eigenvalues(self):
        return self.singular_values ** 2

    @property
    def size(self):
        return len(self.singular_values)


@dataclass(frozen=True)
class BulkEdgeEstimate:
    lambda_plus_hat: float
    k: int
    r_plus_hat: int
    margin: float

    @property
    def threshold(self):
        """Eigenvalue an outlier has to exceed strictly."""
        return self.lambda_plus_hat * (1.0 + self.margin)


@dataclass(frozen=True)
class NoiseSpectrumEstimate:
    eigenvalues: np.ndarray
    n: int
    d: int


@dataclass(frozen=True)
class DTransformPoint:
    z: float
    m1: float
    m2: float
    m1_prime: float
    m2_prime: float
    t_value: float
    t_prime: float


def decompose(block):
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2:
        raise ValueError("expected a 2-D block")
    if not np.all(np.isfinite(block)):
        raise NonFiniteError("block contains non-finite entries")
    u, s, vt = np.linalg.svd(block, full_matrices=False)
    n, d = block.shape
    return SpectralDecomposition(s, u, vt.T, n, d)


def pilot_k(d):
    """Pilot window ``floor(d**c)`` with ``c = min(1/2.01, 1/log(log(d)))``."""
    if d < 3:
        raise ValueError("pilot parameter needs d >= 3")
    c = min(1.0 / 2.01, 1.0 / math.log(math.log(d)))
    return int(math.floor(d ** c))


def count_outliers(eigenvalues, lambda_plus_hat, d):
    """Number of eigenvalues with ``lambda / lambda_plus_hat - 1 > d**(-1/3)`` (strict)."""
    margin = d ** (-1.0 / 3.0)
    return int(np.count_nonzero(np.asarray(eigenvalues) / lambda_plus_hat - 1.0 > margin))


def _edge_and_rank(lam, k, d):
    lp = lam[k] + EDGE_FACTOR * (lam[k] - lam[2 * k])
    if lp <= 0:
        raise SpectrumError("degenerate spectrum: estimated bulk edge is not positive")
    return lp, count_outliers(lam, lp, d), d ** (-1.0 / 3.0)


def estimate_bulk_edge(sd, k=None):
    """Estimate ``lambda_+`` and the number of outliers ``r+``.

    ``k`` defaults to :func:`pilot_k`.  If the imputation windows
    ``2k + r+ + 1`` do not fit into ``min(n, d)`` eigenvalues, ``k`` is
    reduced (with a warning) down to a floor of 3.
    """
    lam = sd.eigenvalues
    m = len(lam)
    k = pilot_k(sd.d) if k is None else int(k)
    requested = k
    while True:
        if k < MIN_PILOT:
            raise SpectrumError(
                f"too few singular values ({m}) for the pilot windows; "
                f"need at least {2 * MIN_PILOT + 1} plus the number of outliers")
        if 2 * k + 1 > m:
            k -= 1
            continue
        lp, rank, margin = _edge_and_rank(lam, k, sd.d)
        if 2 * k + rank + 1 <= m:
            break
        k -= 1
    if k != requested:
        logger.warning("pilot parameter reduced from %d to %d for a %dx%d block",
                       requested, k, sd.n, sd.d)
    return BulkEdgeEstimate(float(lp), k, rank, margin)


def impute_noise_spectrum(sd, edge):
    """Estimated noise eigenvalues (length ``min(n, d)``, descending).

    The ``r+`` outliers are dropped, the next ``k`` eigenvalues are replaced
    by the square-root edge profile, the rest are reused.  The ``r+`` slots
    freed at the bottom are filled with the smallest observed eigenvalue.
    """
    lam = sd.eigenvalues
    m = len(lam)
    k, r = edge.k, edge.r_plus_hat
    if 2 * k + r + 1 > m:
        raise SpectrumError(
            f"imputation needs index {2 * k + r + 1} but only {m} eigenvalues exist; use a smaller k")
    top = lam[k + r]
    low = lam[2 * k + r]
    j = np.arange(1, k + 1)
    imputed = top + (1.0 - (j / k) ** (2.0 / 3.0)) * EDGE_FACTOR * (top - low)
    kept = lam[k + r:]
    pad = np.full(r, lam[-1])
    values = np.sort(np.concatenate([imputed, kept, pad]))[::-1]
    return NoiseSpectrumEstimate(np.maximum(values, 0.0), sd.n, sd.d)


def d_transform_at(noise, z):
    """Empirical Stieltjes transforms, D-transform and analytic derivatives at ``z``.

    ``m1`` averages over ``n`` points and ``m2`` over ``d`` points; the
    ``|n - d|`` missing eigenvalues of the larger Gram matrix are zeros.
    """
    lam = noise.eigenvalues
    top = lam[0] if len(lam) else 0.0
    if not z >= top * (1.0 + EVAL_GUARD) or z <= 0:
        raise SpectrumError(f"z = {z!r} is not above the noise bulk (top eigenvalue {top!r})")
    n, d = noise.n, noise.d
    m = len(lam)
    inv = 1.0 / (lam - z)
    s1 = inv.sum()
    s2 = (inv * inv).sum()
    m1 = (s1 - (n - m) / z) / n
    m2 = (s1 - (d - m) / z) / d
    m1p = (s2 + (n - m) / z ** 2) / n
    m2p = (s2 + (d - m) / z ** 2) / d
    t = z * m1 * m2
    tp = m1 * m2 + z * m1p * m2 + z * m1 * m2p
    return DTransformPoint(float(z), float(m1), float(m2), float(m1p), float(m2p), float(t), float(tp))


def ks_distance(a, b):
    """Two-sample Kolmogorov-Smirnov distance between empirical CDFs."""
    a = np.sort(np.asarray(a, dtype=np.float64))
    b = np.sort(np.asarray(b, dtype=np.float64))
    grid = np.concatenate([a, b])
    fa = np.searchsorted(a, grid, side="right") / len(a)
    fb = np.searchsorted(b, grid, side="right") / len(b)
    return float(np.max(np.abs(fa - fb)))


def write_spectrum_csv(path, sd, edge):
    """Write singular values with outlier flags; the first line carries the edge estimate."""
    lam = sd.eigenvalues
    with open(path, "w", newline="") as fh:
        fh.write(f"# lambda_plus_hat={edge.lambda_plus_hat!r},k={edge.k},"
                 f"r_plus_hat={edge.r_plus_hat}\n")
        writer = csv.writer(fh)
        writer.writerow(["index", "singular_value", "eigenvalue", "is_outlier"])
        for i, (s, l) in enumerate(zip(sd.singular_values, lam), start=1):
            writer.writerow([i, repr(float(s)), repr(float(l)), int(i <= edge.r_plus_hat)])


def read_spectrum_csv(path):
    """Inverse of :func:`write_spectrum_csv`: ``(header dict, rows)``."""
    with open(path, newline="") as fh:
        first = fh.readline().lstrip("# ").strip()
        header = {}
        for item in first.split(","):
            key, value = item.split("=")
            header[key] = float(value) if key == "lambda_plus_hat" else int(value)
        rows = list(csv.DictReader(fh))
    return header, rows
