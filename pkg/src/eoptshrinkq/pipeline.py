"""Block compression: shrinkage + residual quantization, and the baselines.

Methods
-------
``tq_mse`` / ``tq_prod``
    TurboQuant on the raw rows (``tq_prod`` adds the one-bit QJL sidecar).
``svd1_tq``
    Rank-1 truncated SVD (unshrunken top singular value) then ``tq_mse`` on
    the residual.
``eoptshrinkq_mse`` / ``eoptshrinkq_prod``
    Optimal shrinkage with data-driven rank, then TurboQuant on the
    residual.  Blocks without outliers skip the SVD storage entirely.
``kivi``
    Group-wise asymmetric uniform quantization (per channel for ``axis=0``,
    per token for ``axis=1``).

The low-rank part is stored as Lloyd-Max quantized factors and the residual
is taken against the *dequantized* low-rank part, so factor quantization
error is absorbed by the residual quantizer rather than added on top.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .seeding import derive_seed
from .shrinkage import LOSSES, shrink
from .spectral import NonFiniteError, decompose
from .turboquant import decode_rows, encode_rows, qjl_corrections, qjl_encode_rows, QuantizedVector, QjlSidecar

METHODS = ("tq_mse", "tq_prod", "svd1_tq", "eoptshrinkq_mse", "eoptshrinkq_prod", "kivi")
SHRINK_METHODS = ("eoptshrinkq_mse", "eoptshrinkq_prod")
PROD_METHODS = ("tq_prod", "eoptshrinkq_prod")

NORM_BITS = 16
SIGMA_BITS = 16
KIVI_GROUP_BITS = 32


@dataclass(frozen=True)
class CompressionConfig:
    method: str = "eoptshrinkq_mse"
    residual_bits: int = 2
    factor_bits: int = 4
    loss: str = "frobenius"
    block_rows: int = 128
    kivi_group: int = 64
    kivi_axis: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not 1 <= self.residual_bits <= 8:
            raise ValueError("residual_bits must be in [1, 8]")
        if not 2 <= self.factor_bits <= 8:
            raise ValueError("factor_bits must be in [2, 8]")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.block_rows < 1 or self.kivi_group < 1:
            raise ValueError("block_rows and kivi_group must be positive")
        if self.kivi_axis not in (0, 1):
            raise ValueError("kivi_axis must be 0 (per channel) or 1 (per token)")


@dataclass(frozen=True)
class BitAccounting:
    """Bits per entry.  Norm and sigma overheads are reported but not in ``total``."""

    residual_bits_per_entry: int
    factor_overhead: Fraction
    norm_overhead: Fraction
    sigma_overhead: Fraction
    qjl_overhead: int
    group_overhead: Fraction
    total: Fraction

    @classmethod
    def for_block(cls, method, n, d, bits, factor_bits, rank, kivi_groups=0):
        nd = n * d
        if method == "kivi":
            group = Fraction(KIVI_GROUP_BITS * kivi_groups, nd)
            return cls(bits, Fraction(0), Fraction(0), Fraction(0), 0, group, bits + group)
        factor = Fraction(rank * (n + d) * factor_bits, nd)
        qjl = 1 if method in PROD_METHODS else 0
        return cls(bits, factor, Fraction(NORM_BITS, d), Fraction(SIGMA_BITS * rank, nd), qjl,
                   Fraction(0), bits + qjl + factor)

    def as_floats(self):
        return tuple(float(v) for v in (self.residual_bits_per_entry, self.factor_overhead,
                                        self.norm_overhead, self.sigma_overhead, self.qjl_overhead,
                                        self.group_overhead, self.total))


@dataclass(frozen=True)
class FactorPayload:
    bits: int
    u_levels: np.ndarray
    u_codes: np.ndarray
    v_levels: np.ndarray
    v_codes: np.ndarray
    values: np.ndarray

    @property
    def rank(self):
        return self.u_codes.shape[1]

    def left(self):
        return self.u_levels.astype(np.float64)[self.u_codes]

    def right(self):
        return self.v_levels.astype(np.float64)[self.v_codes]

    def low_rank(self):
        return (self.left() * self.values.astype(np.float64)) @ self.right().T


@dataclass(frozen=True)
class KiviPayload:
    axis: int
    group: int
    mins: np.ndarray
    scales: np.ndarray
    codes: np.ndarray  # laid out with the grouped axis last


@dataclass(frozen=True)
class CompressedBlock:
    n: int
    d: int
    method: str
    bits: int
    rank: int
    bit_report: BitAccounting
    rotation_seed: int = 0
    projection_seed: int = 0
    factors: FactorPayload = None
    norms: np.ndarray = None
    zero_mask: np.ndarray = None
    codes: np.ndarray = None
    qjl_norms: np.ndarray = None
    qjl_signs: np.ndarray = None
    kivi: KiviPayload = None

    @property
    def row_payload(self):
        if self.codes is None:
            return []
        return [QuantizedVector(float(r), c, self.rotation_seed, bool(z))
                for r, c, z in zip(self.norms, self.codes, self.zero_mask)]

    @property
    def qjl_payload(self):
        if self.qjl_signs is None:
            return None
        return [QjlSidecar(float(r), s, self.projection_seed)
                for r, s in zip(self.qjl_norms, self.qjl_signs)]


def adaptive_levels(values, bits, tol=1e-12, max_iter=1000):
    """Lloyd iteration (1-D k-means) on the empirical distribution of ``values``."""
    x = np.sort(np.asarray(values, dtype=np.float64).ravel())
    size = 1 << bits
    uniq = np.unique(x)
    if len(uniq) <= size:
        return uniq
    levels = np.quantile(x, (np.arange(size) + 0.5) / size)
    scale = max(np.abs(x).max(), 1e-300)
    for _ in range(max_iter):
        idx = np.searchsorted(0.5 * (levels[1:] + levels[:-1]), x)
        counts = np.bincount(idx, minlength=size)
        sums = np.bincount(idx, weights=x, minlength=size)
        new = np.where(counts > 0, sums / np.maximum(counts, 1), levels)
        moved = np.max(np.abs(new - levels))
        levels = new
        if moved <= tol * scale:
            break
    return np.unique(levels)


def _quantize_matrix(m, bits):
    levels = adaptive_levels(m, bits).astype(np.float32)
    levels = np.unique(levels)
    mids = 0.5 * (levels[1:].astype(np.float64) + levels[:-1].astype(np.float64))
    codes = np.searchsorted(mids, m).astype(np.uint8)
    return levels, codes


def quantize_svd_factors(u, v, bits, values=None):
    """Quantize factor matrices with one data-adaptive Lloyd-Max codebook each."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if values is None:
        values = np.ones(u.shape[1])
    u_levels, u_codes = _quantize_matrix(u, bits)
    v_levels, v_codes = _quantize_matrix(v, bits)
    return FactorPayload(bits, u_levels, u_codes, v_levels, v_codes,
                         np.asarray(values, dtype=np.float32))


def _group_starts(length, group):
    return np.arange(0, length, group)


def kivi_compress(block, bits, axis=0, group=64):
    """Asymmetric min/max quantization in groups of ``group`` along ``axis``."""
    block = np.asarray(block, dtype=np.float64)
    n, d = block.shape
    m = block.T if axis == 0 else block
    starts = _group_starts(m.shape[1], group)
    lo = np.minimum.reduceat(m, starts, axis=1).astype(np.float32)
    hi = np.maximum.reduceat(m, starts, axis=1).astype(np.float32)
    scale = ((hi.astype(np.float64) - lo) / ((1 << bits) - 1)).astype(np.float32)
    widths = np.diff(np.append(starts, m.shape[1]))
    lo_full = np.repeat(lo.astype(np.float64), widths, axis=1)
    sc_full = np.repeat(scale.astype(np.float64), widths, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(sc_full > 0, np.rint((m - lo_full) / sc_full), 0.0)
    codes = np.clip(q, 0, (1 << bits) - 1).astype(np.uint8)
    payload = KiviPayload(axis, group, lo.ravel(), scale.ravel(), codes)
    report = BitAccounting.for_block("kivi", n, d, bits, 0, 0, kivi_groups=lo.size)
    return CompressedBlock(n, d, "kivi", bits, 0, report, kivi=payload)


def kivi_decompress(cb):
    k = cb.kivi
    rows = cb.d if k.axis == 0 else cb.n
    cols = cb.n if k.axis == 0 else cb.d
    starts = _group_starts(cols, k.group)
    widths = np.diff(np.append(starts, cols))
    lo = np.repeat(k.mins.astype(np.float64).reshape(rows, -1), widths, axis=1)
    sc = np.repeat(k.scales.astype(np.float64).reshape(rows, -1), widths, axis=1)
    m = lo + k.codes * sc
    return m.T if k.axis == 0 else m


def compress_block(block, cfg, block_index=0):
    """Compress one ``block_rows x d`` block according to ``cfg``."""
    block = np.asarray(block, dtype=np.float64)
    if block.ndim != 2 or block.shape[0] != cfg.block_rows:
        raise ValueError(f"block shape {block.shape} does not match block_rows={cfg.block_rows}")
    if not np.all(np.isfinite(block)):
        raise NonFiniteError("block contains non-finite entries")
    n, d = block.shape
    if cfg.method == "kivi":
        return kivi_compress(block, cfg.residual_bits, cfg.kivi_axis, cfg.kivi_group)

    rot_seed = derive_seed(cfg.seed, block_index, "rotation")
    qjl_seed = derive_seed(cfg.seed, block_index, "qjl")
    factors = None
    residual = block
    if cfg.method in SHRINK_METHODS:
        result, _ = shrink(block, cfg.loss)
        if result.rank:
            factors = quantize_svd_factors(result.left, result.right, cfg.factor_bits, result.values)
    elif cfg.method == "svd1_tq":
        sd = decompose(block)
        factors = quantize_svd_factors(sd.left_vectors[:, :1], sd.right_vectors[:, :1],
                                       cfg.factor_bits, sd.singular_values[:1])
    if factors is not None:
        residual = block - factors.low_rank()
    rank = factors.rank if factors is not None else 0

    norms, codes, zero = encode_rows(residual, cfg.residual_bits, rot_seed)
    norms = norms.astype(np.float32)
    zero = zero | (norms == 0)
    codes[zero] = 0
    qjl_norms = qjl_signs = None
    if cfg.method in PROD_METHODS:
        approx = decode_rows(norms, codes, zero, cfg.residual_bits, rot_seed)
        qn, qjl_signs = qjl_encode_rows(residual, approx, qjl_seed)
        qjl_norms = qn.astype(np.float32)

    report = BitAccounting.for_block(cfg.method, n, d, cfg.residual_bits, cfg.factor_bits, rank)
    return CompressedBlock(n, d, cfg.method, cfg.residual_bits, rank, report, rot_seed, qjl_seed,
                           factors, norms, zero, codes, qjl_norms, qjl_signs)


def decompress_block(cb, cfg=None):
    """Reconstruct the block (the QJL sidecar does not enter the reconstruction)."""
    if cb.method == "kivi":
        return kivi_decompress(cb)
    out = decode_rows(cb.norms, cb.codes, cb.zero_mask, cb.bits, cb.rotation_seed)
    if cb.factors is not None and cb.rank:
        out += cb.factors.low_rank()
    return out


def block_inner_products(cb, queries):
    """Estimated ``<q, x_t>`` for all rows ``t`` and queries; shape ``(n, n_queries)``."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    est = decompress_block(cb) @ queries.T
    if cb.qjl_signs is not None:
        est += qjl_corrections(queries, cb.qjl_norms, cb.qjl_signs, cb.projection_seed)
    return est


def compress_blocks(blocks, cfg, workers=1):
    """Compress a sequence of blocks; output order is the input order for any worker count."""
    blocks = list(blocks)
    if workers <= 1:
        return [compress_block(b, cfg, i) for i, b in enumerate(blocks)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda ib: compress_block(ib[1], cfg, ib[0]), enumerate(blocks)))
