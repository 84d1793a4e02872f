"""Per-vector scalar quantization: norm separation, Haar rotation, Lloyd-Max codes.

``TQ_MSE`` stores ``r = |x|`` and the Lloyd-Max indices of the rotated unit
vector ``Pi x / r``; the codebook targets ``N(0, 1/d)``, the marginal of a
uniformly random unit vector after rotation.  ``TQ_prod`` adds a QJL sidecar,
``|x - x_mse|`` plus ``sign(Phi (x - x_mse))``, giving an unbiased inner
product estimate at one extra bit per coordinate.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtr
from scipy.stats import norm

from .seeding import MASK64, generator

MAX_BITS = 8
QJL_SCALE = math.sqrt(math.pi / 2.0)


class CodebookError(RuntimeError):
    pass


@dataclass(frozen=True)
class LloydMaxCodebook:
    bits: int
    levels: np.ndarray
    thresholds: np.ndarray
    target_variance: float
    distortion: float
    iterations: int = 0

    def quantize(self, values):
        """Index of the nearest level for every entry of ``values``."""
        return np.searchsorted(self.thresholds, values).astype(np.uint8)

    def dequantize(self, codes):
        return self.levels[codes]


def _pdf(x):
    return np.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def _cells(levels):
    t = 0.5 * (levels[1:] + levels[:-1])
    lo = np.concatenate([[-np.inf], t])
    hi = np.concatenate([t, [np.inf]])
    return lo, hi


def _lloyd_map(levels):
    """Centroid update for N(0, 1) and its derivatives w.r.t. the cell ends."""
    lo, hi = _cells(levels)
    mass = ndtr(hi) - ndtr(lo)
    f_lo, f_hi = _pdf(lo), _pdf(hi)
    centroids = (f_lo - f_hi) / mass
    with np.errstate(invalid="ignore"):
        d_lo = np.where(np.isfinite(lo), f_lo * (centroids - lo) / mass, 0.0)
        d_hi = np.where(np.isfinite(hi), f_hi * (hi - centroids) / mass, 0.0)
    return centroids, d_lo, d_hi


def gaussian_distortion(levels):
    """Exact MSE of nearest-level quantization of N(0, 1) with the given levels."""
    lo, hi = _cells(levels)
    mass = ndtr(hi) - ndtr(lo)
    first = _pdf(lo) - _pdf(hi)
    lo_f = np.where(np.isfinite(lo), lo, 0.0)
    hi_f = np.where(np.isfinite(hi), hi, 0.0)
    lo_term = lo_f * _pdf(lo_f) * np.isfinite(lo)
    hi_term = hi_f * _pdf(hi_f) * np.isfinite(hi)
    second = mass + lo_term - hi_term
    return float(np.sum(second - 2.0 * levels * first + levels ** 2 * mass))


@lru_cache(maxsize=None)
def _unit_codebook(bits, tol=1e-9, max_iter=10_000):
    size = 1 << bits
    # companding start: optimal high-rate point density ~ pdf**(1/3)
    levels = norm.ppf((np.arange(size) + 0.5) / size) * math.sqrt(3.0)
    for it in range(max_iter):
        centroids, d_lo, d_hi = _lloyd_map(levels)
        residual = centroids - levels
        if np.max(np.abs(residual)) < tol:
            break
        # Newton step on the Lloyd fixed point; the Jacobian is tridiagonal
        band = np.zeros((3, size))
        band[0, 1:] = 0.5 * d_hi[:-1]
        band[1] = 0.5 * (d_lo + d_hi) - 1.0
        band[2, :-1] = 0.5 * d_lo[1:]
        step = solve_banded((1, 1), band, -residual)
        scale = 1.0
        while not np.all(np.diff(levels + scale * step) > 0):
            scale *= 0.5
        levels = levels + scale * step
    else:
        raise CodebookError(f"Lloyd-Max iteration did not converge for b={bits}")
    levels = 0.5 * (levels - levels[::-1])
    return levels, gaussian_distortion(levels), it


def build_codebook(bits, variance=1.0):
    """Lloyd-Max codebook for N(0, variance) at ``bits`` bits per sample."""
    if not 1 <= bits <= MAX_BITS:
        raise ValueError(f"bits must be in [1, {MAX_BITS}], got {bits}")
    if variance <= 0:
        raise ValueError("variance must be positive")
    unit, dist, iters = _unit_codebook(int(bits))
    levels = unit * math.sqrt(variance)
    levels.setflags(write=False)
    thresholds = 0.5 * (levels[1:] + levels[:-1])
    thresholds.setflags(write=False)
    return LloydMaxCodebook(int(bits), levels, thresholds, float(variance), dist * variance, iters)


@lru_cache(maxsize=None)
def codebook_for(bits, d):
    """Shared codebook for rotated unit vectors in dimension ``d``."""
    return build_codebook(bits, 1.0 / d)


def _check_seed(seed):
    if seed is None or not 0 <= int(seed) <= MASK64:
        raise ValueError(f"unresolvable seed {seed!r}")
    return int(seed)


@lru_cache(maxsize=64)
def haar_rotation(d, seed):
    """Haar-distributed orthogonal ``d x d`` matrix (QR of a Gaussian, positive diag(R))."""
    if d < 2:
        raise ValueError("rotation dimension must be at least 2")
    rng = generator(_check_seed(seed))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    q.setflags(write=False)
    return q


@lru_cache(maxsize=16)
def qjl_projection(d, seed):
    """The ``d x d`` i.i.d. N(0, 1) sketch matrix for a projection seed."""
    phi = generator(_check_seed(seed)).standard_normal((d, d))
    phi.setflags(write=False)
    return phi


@dataclass(frozen=True)
class QuantizedVector:
    norm: float
    codes: np.ndarray
    rotation_seed: int
    is_zero: bool = False


@dataclass(frozen=True)
class QjlSidecar:
    residual_norm: float
    sign_bits: np.ndarray
    projection_seed: int


# --- row-batched kernels -------------------------------------------------

def encode_rows(x, bits, rotation_seed):
    """TQ_MSE codes for every row of ``x``: ``(norms, codes, zero_mask)``."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[1]
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    zero = norms == 0
    safe = np.where(zero, 1.0, norms)
    z = (x / safe[:, None]) @ haar_rotation(d, rotation_seed).T
    codes = codebook_for(bits, d).quantize(z)
    codes[zero] = 0
    return norms, codes, zero


def decode_rows(norms, codes, zero_mask, bits, rotation_seed):
    """Reconstruct rows ``r * Pi^T z_hat``; zero-flagged rows decode to 0."""
    codes = np.asarray(codes)
    d = codes.shape[1]
    z_hat = codebook_for(bits, d).dequantize(codes)
    out = (z_hat @ haar_rotation(d, rotation_seed)) * np.asarray(norms, dtype=np.float64)[:, None]
    out[np.asarray(zero_mask, dtype=bool)] = 0.0
    return out


def qjl_encode_rows(x, x_hat, projection_seed):
    """Residual norms and sign bits of ``Phi (x - x_hat)`` for every row."""
    resid = np.asarray(x, dtype=np.float64) - np.asarray(x_hat, dtype=np.float64)
    d = resid.shape[1]
    norms = np.sqrt(np.einsum("ij,ij->i", resid, resid))
    signs = resid @ qjl_projection(d, projection_seed).T >= 0
    return norms, signs


def qjl_corrections(queries, residual_norms, signs, projection_seed):
    """QJL estimates of ``<q, r_x>``; shape ``(rows, queries)``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    d = queries.shape[1]
    sketched = qjl_projection(d, projection_seed) @ queries.T
    pm = np.where(signs, 1.0, -1.0)
    return (pm @ sketched) * (np.asarray(residual_norms)[:, None] * QJL_SCALE / d)


# --- single-vector API ----------------------------------------------------

def tq_mse_encode(x, bits, rotation_seed, codebook=None):
    x = np.asarray(x, dtype=np.float64)
    if codebook is not None and not math.isclose(codebook.target_variance, 1.0 / len(x)):
        raise ValueError("codebook must target variance 1/d")
    norms, codes, zero = encode_rows(x[None, :], bits, _check_seed(rotation_seed))
    return QuantizedVector(float(norms[0]), codes[0], int(rotation_seed), bool(zero[0]))


def tq_mse_decode(qv, codebook=None):
    bits = codebook.bits if codebook is not None else None
    if bits is None:
        raise ValueError("a codebook is required to decode")
    return decode_rows([qv.norm], qv.codes[None, :], [qv.is_zero], bits,
                       _check_seed(qv.rotation_seed))[0]


def qjl_encode(x, x_hat_mse, projection_seed):
    x = np.asarray(x, dtype=np.float64)
    x_hat_mse = np.asarray(x_hat_mse, dtype=np.float64)
    if x.shape != x_hat_mse.shape:
        raise ValueError("shape mismatch between x and its reconstruction")
    norms, signs = qjl_encode_rows(x[None, :], x_hat_mse[None, :], _check_seed(projection_seed))
    return QjlSidecar(float(norms[0]), signs[0], int(projection_seed))


def ip_estimate(q, qv, codebook, sidecar=None):
    """Estimate ``<q, x>`` from TQ_MSE codes, optionally QJL-corrected."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != qv.codes.shape:
        raise ValueError(f"query dimension {q.shape} does not match codes {qv.codes.shape}")
    value = float(q @ tq_mse_decode(qv, codebook))
    if sidecar is not None:
        value += float(qjl_corrections(q, [sidecar.residual_norm], sidecar.sign_bits[None, :],
                                       sidecar.projection_seed)[0, 0])
    return value
