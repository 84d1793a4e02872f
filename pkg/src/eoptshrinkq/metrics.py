"""Reconstruction and inner-product fidelity, residual property checks, comparison tables."""

import csv
import json
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .pipeline import (SHRINK_METHODS, CompressionConfig, block_inner_products,
                       compress_block, compress_blocks, decompress_block)
from .seeding import derive_seed, generator
from .shrinkage import shrink
from .spectral import ks_distance
from .spiked_synth import sample_block
from .turboquant import decode_rows, encode_rows

DELOC_C = 4.0
TABLE_COLUMNS = ("method", "bits", "l2_pct", "ip_bias", "ip_std", "mean_rank", "n_blocks")
LOSSLESS = "lossless"


@dataclass(frozen=True)
class FidelityReport:
    method: str
    bits_total: float
    rel_l2_percent: float
    ip_bias: float
    ip_std: float
    mean_rank: float
    n_blocks: int

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ValueError("a report needs at least one block")
        if not self.rel_l2_percent >= 0:
            raise ValueError("relative error must be nonnegative")

    def row(self):
        return {"method": self.method, "bits": self.bits_total, "l2_pct": self.rel_l2_percent,
                "ip_bias": self.ip_bias, "ip_std": self.ip_std, "mean_rank": self.mean_rank,
                "n_blocks": self.n_blocks}


@dataclass(frozen=True)
class DelocalizationStats:
    ratios: np.ndarray
    max_ratio: float
    p99_ratio: float
    excluded_rows: int
    violations: int
    threshold: float

    @property
    def fraction_below(self):
        return float(np.mean(self.ratios < self.threshold)) if len(self.ratios) else 1.0


@dataclass(frozen=True)
class PropertyReport:
    residual_frobenius_gap: float
    spectrum_ks_distance: float
    deloc_max_ratio: float
    snr_bias_curve: tuple
    deloc_block_max_mean: float = float("nan")
    deloc_fraction_below: float = float("nan")
    n_blocks: int = 0

    def as_dict(self):
        out = asdict(self)
        out["snr_bias_curve"] = [list(p) for p in self.snr_bias_curve]
        return out


def relative_l2(original, reconstructed):
    """``100 * |X_hat - X|_F / |X|_F``."""
    original = np.asarray(original, dtype=np.float64)
    reconstructed = np.asarray(reconstructed, dtype=np.float64)
    if original.shape != reconstructed.shape:
        raise ValueError(f"shape mismatch {original.shape} vs {reconstructed.shape}")
    ref = np.linalg.norm(original)
    if ref == 0:
        raise ValueError("relative error undefined for a zero original")
    return float(100.0 * np.linalg.norm(reconstructed - original) / ref)


def unit_rows(block):
    block = np.asarray(block, dtype=np.float64)
    norms = np.linalg.norm(block, axis=1, keepdims=True)
    return block / np.where(norms > 0, norms, 1.0)


def sphere_queries(count, d, seed):
    q = generator(seed).standard_normal((count, d))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _ip_moments(blocks, estimate, query_count, seed):
    count = total = total_sq = 0.0
    for i, block in enumerate(blocks):
        x = unit_rows(block)
        q = sphere_queries(query_count, x.shape[1], derive_seed(seed, i, "queries"))
        err = estimate(x, q, i) - x @ q.T
        count += err.size
        total += err.sum()
        total_sq += np.square(err).sum()
    mean = total / count
    return mean, math.sqrt(max(total_sq / count - mean * mean, 0.0))


def ip_fidelity(blocks, cfg, query_count=4096, seed=0):
    """Pooled inner-product error ``(bias, std)`` over rows and queries.

    Rows are normalized to unit length before compression; queries are
    uniform on the sphere and depend only on ``(seed, block index)`` so
    different methods see the same queries.  ``cfg=None`` is lossless.
    """
    if query_count < 1000:
        raise ValueError("query_count must be at least 1000")
    if cfg is None:
        return _ip_moments(blocks, lambda x, q, i: x @ q.T, query_count, seed)

    def estimate(x, q, i):
        return block_inner_products(compress_block(x, cfg, i), q)

    return _ip_moments(blocks, estimate, query_count, seed)


def delocalization_check(residual, C=DELOC_C):
    """Per-row ``(|r|_inf / |r|_2) * sqrt(d / log d)``; zero rows are excluded and counted."""
    r = np.asarray(residual, dtype=np.float64)
    d = r.shape[1]
    l2 = np.linalg.norm(r, axis=1)
    keep = l2 > 0
    ratios = np.abs(r[keep]).max(axis=1) / l2[keep] * math.sqrt(d / math.log(d))
    if len(ratios) == 0:
        return DelocalizationStats(ratios, float("nan"), float("nan"), int((~keep).sum()), 0, C)
    return DelocalizationStats(ratios, float(ratios.max()), float(np.percentile(ratios, 99)),
                               int((~keep).sum()), int((ratios > C).sum()), C)


def self_ip_bias(v, bits, rotation_seeds):
    """Per-row ``E_Pi <v, Q(v)> - |v|^2`` averaged over the given rotation seeds."""
    v = np.asarray(v, dtype=np.float64)
    acc = np.zeros(len(v))
    for s in rotation_seeds:
        norms, codes, zero = encode_rows(v, bits, s)
        acc += np.einsum("ij,ij->i", v, decode_rows(norms, codes, zero, bits, s))
    return acc / len(rotation_seeds) - np.einsum("ij,ij->i", v, v)


@dataclass(frozen=True)
class BlockProperties:
    frobenius_gap: float
    ks: float
    deloc: DelocalizationStats
    snr: np.ndarray
    bias_ratio: np.ndarray
    rank: int


def block_properties(block, signal, noise, cfg, rotation_seeds):
    """Residual property statistics for one block with known signal and noise."""
    if signal is None or noise is None:
        raise ValueError("property checks need the ground-truth signal and noise")
    block = np.asarray(block, dtype=np.float64)
    result, resid = shrink(block, cfg.loss)
    n, d = block.shape
    gap = abs(np.sum(resid ** 2) - np.sum(noise ** 2)) / (n * d)
    ks = ks_distance(np.linalg.eigvalsh(resid @ resid.T), np.linalg.eigvalsh(noise @ noise.T))
    snr = np.einsum("ij,ij->i", signal, signal) / np.einsum("ij,ij->i", noise, noise)
    direct = self_ip_bias(block, cfg.residual_bits, rotation_seeds)
    residual = self_ip_bias(resid, cfg.residual_bits, rotation_seeds)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(residual) / np.abs(direct)
    return BlockProperties(float(gap), ks, delocalization_check(resid), snr, ratio, result.rank)


def snr_decile_curve(snr, ratio, deciles=10):
    """``(median SNR, mean ratio)`` within each SNR decile."""
    snr = np.asarray(snr)
    ratio = np.asarray(ratio)
    ok = np.isfinite(ratio)
    snr, ratio = snr[ok], ratio[ok]
    order = np.argsort(snr, kind="stable")
    return tuple((float(np.median(snr[part])), float(np.mean(ratio[part])))
                 for part in np.array_split(order, deciles) if len(part))


def property_report(samples, cfg, n_rotations=16):
    """Aggregate residual properties over ``(key, block, signal, noise)`` samples.

    ``key`` seeds the rotations used for the bias Monte Carlo of that block.
    """
    gaps, kss, block_max, snrs, ratios, deloc = [], [], [], [], [], []
    for key, block, signal, noise in samples:
        rot = [derive_seed(key, j, "rotation") for j in range(n_rotations)]
        props = block_properties(block, signal, noise, cfg, rot)
        gaps.append(props.frobenius_gap)
        kss.append(props.ks)
        block_max.append(props.deloc.max_ratio)
        deloc.append(props.deloc.ratios)
        snrs.append(props.snr)
        ratios.append(props.bias_ratio)
    if not gaps:
        raise ValueError("need at least one block")
    deloc = np.concatenate(deloc)
    return PropertyReport(float(np.mean(gaps)), float(np.mean(kss)), float(deloc.max()),
                          snr_decile_curve(np.concatenate(snrs), np.concatenate(ratios)),
                          float(np.mean(block_max)), float(np.mean(deloc < DELOC_C)), len(gaps))


def proposition_one_suite(spec, cfg, seeds, n_rotations=16):
    """Residual property statistics over synthetic blocks drawn at ``seeds``."""
    def samples():
        for s in seeds:
            block, truth = sample_block(replace(spec, seed=s))
            yield s, block, truth.signal, truth.noise

    return property_report(samples(), cfg, n_rotations)


def gaussian_deloc_calibration(n, d, seeds):
    """Mean per-block max delocalization ratio of i.i.d. Gaussian ``n x d`` blocks."""
    return float(np.mean([delocalization_check(
        generator(derive_seed(s, "noise")).standard_normal((n, d))).max_ratio for s in seeds]))


def evaluate_method(blocks, cfg, query_count=4096, seed=0, workers=1):
    """One :class:`FidelityReport` for ``cfg`` over ``blocks``."""
    blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
    if not blocks:
        raise ValueError("no blocks to evaluate")
    if cfg is None:
        bias, std = ip_fidelity(blocks, None, query_count, seed)
        return FidelityReport(LOSSLESS, 32.0, 0.0, bias, std, 0.0, len(blocks))
    compressed = compress_blocks(blocks, cfg, workers)
    l2 = [relative_l2(b, decompress_block(c)) for b, c in zip(blocks, compressed)]
    bits = float(np.mean([float(c.bit_report.total) for c in compressed]))
    ranks = [c.rank for c in compressed]
    mean_rank = float(np.mean(ranks)) if cfg.method in SHRINK_METHODS or cfg.method == "svd1_tq" \
        else 0.0
    bias, std = ip_fidelity(blocks, cfg, query_count, seed)
    return FidelityReport(cfg.method, bits, float(np.mean(l2)), float(bias), float(std),
                          mean_rank, len(blocks))


def comparison_table(blocks, methods, bit_widths, cfg=None, query_count=4096, seed=0, workers=1):
    """Reports for every ``(method, b)``; ``"lossless"`` gives a single reference row."""
    blocks = list(blocks)
    methods = list(methods)
    bit_widths = list(bit_widths)
    if not blocks or not methods or not bit_widths:
        raise ValueError("comparison needs blocks, methods and bit widths")
    base = cfg or CompressionConfig(block_rows=np.asarray(blocks[0]).shape[0])
    reports = []
    for method in methods:
        if method == LOSSLESS:
            reports.append(evaluate_method(blocks, None, query_count, seed))
            continue
        for b in bit_widths:
            run = replace(base, method=method, residual_bits=b)
            reports.append(evaluate_method(blocks, run, query_count, seed, workers))
    return reports


def write_table_csv(path, reports):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for r in reports:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.row().items()})


def table_json(reports):
    return json.dumps([r.row() for r in reports], indent=2)
