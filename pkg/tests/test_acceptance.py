"""Acceptance criteria, each at its stated tolerance with one PASS/FAIL line."""

import math

import numpy as np
import pytest

from eoptshrinkq.blockstore import CompressedFile, encode_compressed_file
from eoptshrinkq.metrics import (gaussian_deloc_calibration, ip_fidelity, proposition_one_suite,
                                 relative_l2, unit_rows)
from eoptshrinkq.pipeline import (METHODS, CompressionConfig, block_inner_products,
                                  compress_block, compress_blocks, decompress_block)
from eoptshrinkq.seeding import derive_seed, generator
from eoptshrinkq.spectral import decompose, estimate_bulk_edge, pilot_k
from eoptshrinkq.spiked_synth import SpikedModelSpec, sample_block, white_noise_alpha
from eoptshrinkq.turboquant import build_codebook

ALPHA = white_noise_alpha(1.0)


def unit_gaussian_blocks(count, root):
    return [unit_rows(generator(derive_seed(root, i, "noise")).standard_normal((128, 128)))
            for i in range(count)]


def test_01_pilot_parameter(verdict):
    k = pilot_k(128)
    verdict("1 pilot k at d=128", k == 11, f"k={k}")


def test_02_white_noise_edge(verdict):
    edges = [estimate_bulk_edge(decompose(sample_block(SpikedModelSpec(128, 128, seed=s))[0]))
             .lambda_plus_hat for s in range(100)]
    mean = float(np.mean(edges))
    verdict("2 mean bulk edge, 100 pure-noise seeds", 3.75 <= mean <= 4.25,
            f"mean lambda+_hat={mean:.4f} (range [3.75, 4.25])")


@pytest.mark.parametrize("factor,rank", [(2.0, 1), (0.5, 0)])
def test_03_bbp_detection(verdict, factor, rank):
    hits = 0
    for s in range(200):
        block, _ = sample_block(SpikedModelSpec(128, 128, (factor * ALPHA,), seed=s))
        hits += estimate_bulk_edge(decompose(block)).r_plus_hat == rank
    verdict(f"3 detection at {factor} alpha", hits / 200 >= 0.95,
            f"P[r+={rank}]={hits / 200:.3f} (>= 0.95)")


def test_04_one_bit_codebook(verdict):
    cb = build_codebook(1)
    ok = (np.all(np.abs(np.abs(cb.levels) - 0.79788) <= 1e-4)
          and abs(cb.distortion - 0.36338) <= 1e-4)
    verdict("4 one-bit Lloyd-Max", ok, f"levels={cb.levels}, distortion={cb.distortion:.6f}")


@pytest.fixture(scope="module")
def anchor_blocks():
    return unit_gaussian_blocks(20, 5)


@pytest.mark.parametrize("bits,target", [(2, 34.1), (3, 18.5), (4, 9.7)])
def test_05_tq_relative_error(verdict, anchor_blocks, bits, target):
    cfg = CompressionConfig("tq_mse", bits)
    l2 = np.mean([relative_l2(b, decompress_block(c))
                  for b, c in zip(anchor_blocks, compress_blocks(anchor_blocks, cfg))])
    verdict(f"5 TQ_MSE rel L2 at b={bits}", abs(l2 - target) <= 1.0,
            f"{l2:.2f}% (target {target} +- 1.0)")


@pytest.fixture(scope="module")
def anchor_ip(anchor_blocks):
    return ip_fidelity(anchor_blocks, CompressionConfig("tq_mse", 2), 4096, seed=1)


def test_05_tq_ip_bias(verdict, anchor_ip):
    bias = anchor_ip[0]
    verdict("5 TQ_MSE IP bias at b=2", abs(bias + 0.028) <= 0.005,
            f"bias={bias:+.5f} (target -0.028 +- 0.005)")


def test_05_tq_ip_std(verdict, anchor_ip):
    std = anchor_ip[1]
    verdict("5 TQ_MSE IP std at b=2", abs(std - 0.027) <= 0.005,
            f"std={std:.5f} (target 0.027 +- 0.005)")


def paired_errors(method, bits, pairs=10_000, root=77):
    """One independent (row, query) pair per row; every block gets fresh seeds."""
    blocks = -(-pairs // 128)
    errs = []
    for i in range(blocks):
        x = unit_rows(generator(derive_seed(root, i, "noise")).standard_normal((128, 128)))
        q = unit_rows(generator(derive_seed(root, i, "queries")).standard_normal((128, 128)))
        cb = compress_block(x, CompressionConfig(method, bits, seed=root), i)
        est = block_inner_products(cb, q)
        errs.append(np.diagonal(est) - np.einsum("ij,ij->i", x, q))
    return np.concatenate(errs)[:pairs]


@pytest.mark.parametrize("bits", [1, 2, 3])
def test_06_qjl_unbiased(verdict, bits):
    prod = paired_errors("tq_prod", bits)
    mse = paired_errors("tq_mse", bits)
    se = prod.std(ddof=1) / math.sqrt(len(prod))
    ok = abs(prod.mean()) <= 3 * se and prod.std() > mse.std()
    verdict(f"6 QJL unbiased at b={bits}", ok,
            f"bias={prod.mean():+.2e} (3 SE={3 * se:.2e}), std prod={prod.std():.4f} "
            f"> mse={mse.std():.4f}")


@pytest.fixture(scope="module")
def two_alpha_report():
    spec = SpikedModelSpec(128, 128, (2 * ALPHA,))
    return proposition_one_suite(spec, CompressionConfig("eoptshrinkq_mse", 2), range(50))


def test_07_frobenius_gap(verdict, two_alpha_report):
    gap = two_alpha_report.residual_frobenius_gap
    verdict("7 residual Frobenius gap, 2 alpha, 50 seeds", gap < 0.02, f"gap={gap:.2e} (< 0.02)")


def test_08_snr_bias_ratio(verdict, two_alpha_report):
    rows = [(snr, ratio, 1 / (1 + snr) + 0.05) for snr, ratio in two_alpha_report.snr_bias_curve]
    ok = len(rows) == 10 and all(ratio <= bound for _, ratio, bound in rows)
    worst = max(rows, key=lambda r: r[1] - r[2])
    verdict("8 per-decile bias ratio <= 1/(1+SNR) + 0.05", ok,
            f"tightest decile SNR={worst[0]:.4f}: ratio {worst[1]:.4f} vs bound {worst[2]:.4f}")


def test_09_delocalization(verdict, two_alpha_report):
    calib = gaussian_deloc_calibration(128, 128, range(10_000, 10_050))
    stat = two_alpha_report.deloc_block_max_mean
    frac = two_alpha_report.deloc_fraction_below
    ok = abs(stat - calib) <= 0.10 * calib and frac >= 0.99
    verdict("9 residual delocalization", ok,
            f"mean block max {stat:.4f} vs Gaussian {calib:.4f}, rows below 4.0: {frac:.4f}")


@pytest.mark.parametrize("bits", [2, 3, 4])
def test_10_shrinkage_dominance(verdict, bits):
    hits, n = 0, 50
    for s in range(n):
        block, _ = sample_block(SpikedModelSpec(128, 128, (6.0, 5.0, 4.0, 3.0, 2.0),
                                                seed=9000 + s))
        errs = [relative_l2(block, decompress_block(compress_block(
            block, CompressionConfig(m, bits)))) for m in ("eoptshrinkq_mse", "svd1_tq", "tq_mse")]
        hits += errs[0] < errs[1] < errs[2]
    verdict(f"10 eopt < svd1 < tq at b={bits}", hits / n >= 0.9, f"{hits}/{n} paired seeds")


def test_11_bit_accounting(verdict):
    one, _ = sample_block(SpikedModelSpec(128, 128, (6.0,), seed=3))
    noise, _ = sample_block(SpikedModelSpec(128, 128, seed=3))
    cfg = CompressionConfig("eoptshrinkq_mse", 2, 4)
    a, b = compress_block(one, cfg), compress_block(noise, cfg)
    ok = a.rank == 1 and a.bit_report.total == 2.0625 and b.rank == 0 and b.bit_report.total == 2
    verdict("11 bit accounting", ok, f"r=1 total {a.bit_report.total}, "
                                     f"r=0 total {b.bit_report.total}")


def test_12_worker_determinism(verdict):
    blocks = [sample_block(SpikedModelSpec(128, 128, (5.0, 2.5), seed=s))[0] for s in range(8)]
    same = []
    for method in METHODS:
        cfg = CompressionConfig(method, 2, seed=123)
        one = encode_compressed_file(CompressedFile(cfg, 128, 128, compress_blocks(blocks, cfg, 1)))
        eight = encode_compressed_file(CompressedFile(cfg, 128, 128,
                                                      compress_blocks(blocks, cfg, 8)))
        same.append(one == eight)
    verdict("12 byte-identical output, 1 vs 8 workers", all(same),
            f"{sum(same)}/{len(same)} methods identical")
