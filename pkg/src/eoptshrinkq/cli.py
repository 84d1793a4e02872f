"""Command line: gen | compress | decompress | spectrum | eval | compare.

Exit codes: 0 success, 2 usage or bad input, 3 malformed container,
4 numeric failure.  Diagnostics go to stderr.
"""

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from numpy.linalg import LinAlgError

from . import blockstore as bs
from .metrics import (DELOC_C, comparison_table, property_report, relative_l2, sphere_queries,
                      write_table_csv)
from .pipeline import METHODS, SHRINK_METHODS, CompressionConfig, block_inner_products, \
    compress_blocks, decompress_block
from .seeding import derive_seed
from .shrinkage import LOSSES
from .spectral import (NonFiniteError, SpectrumError, decompose, estimate_bulk_edge,
                       write_spectrum_csv)
from .spiked_synth import CovarianceSpec, SpikedModelSpec, sample_block
from .turboquant import CodebookError

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERIC = 0, 2, 3, 4


def _floats(text):
    text = text.strip()
    return [float(t) for t in text.split(",") if t.strip()] if text else []


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _names(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def parse_covariance(text, dim):
    """``identity``, ``toeplitz:RHO`` or ``diagonal:LO:HI`` (values spaced linearly)."""
    kind, _, rest = text.partition(":")
    if kind == "identity":
        return CovarianceSpec.identity(dim)
    if kind == "toeplitz":
        return CovarianceSpec.toeplitz(dim, float(rest))
    if kind == "diagonal":
        lo, hi = (float(v) for v in rest.split(":"))
        return CovarianceSpec.diagonal(np.linspace(hi, lo, dim))
    raise ValueError(f"unknown covariance {text!r}")


def cmd_gen(args):
    strengths = sorted(_floats(args.strengths), reverse=True)
    blocks, truth = [], []
    for i in range(args.blocks):
        spec = SpikedModelSpec(args.n, args.d, tuple(strengths),
                               parse_covariance(args.cov_a, args.n),
                               parse_covariance(args.cov_b, args.d),
                               args.entry_dist, derive_seed(args.seed, i))
        block, t = sample_block(spec)
        blocks.append(block)
        truth.append(bs.GroundTruth(list(strengths), t.signal, t.noise))
    bs.write_block_file(args.out, bs.BlockFile(args.n, args.d, np.stack(blocks), truth))
    return EXIT_OK


def _config(args, n):
    return CompressionConfig(args.method, args.bits, args.factor_bits, args.loss, n,
                             args.kivi_group, args.kivi_axis, args.seed)


def cmd_compress(args):
    bf = bs.read_block_file(args.input)
    cfg = _config(args, bf.n)
    blocks = compress_blocks(bf.blocks, cfg, args.workers)
    bs.write_compressed_file(args.out, bs.CompressedFile(cfg, bf.n, bf.d, blocks))
    return EXIT_OK


def cmd_decompress(args):
    cf = bs.read_compressed_file(args.input)
    recon = np.stack([decompress_block(cb) for cb in cf.blocks]) if cf.blocks \
        else np.zeros((0, cf.n, cf.d))
    bs.write_block_file(args.out, bs.BlockFile(cf.n, cf.d, recon))
    return EXIT_OK


def cmd_spectrum(args):
    bf = bs.read_block_file(args.input)
    if not 0 <= args.block_index < bf.count:
        raise ValueError(f"block index {args.block_index} out of range (0..{bf.count - 1})")
    sd = decompose(bf.blocks[args.block_index])
    write_spectrum_csv(args.out, sd, estimate_bulk_edge(sd))
    return EXIT_OK


def _read_any(path):
    buf = Path(path).read_bytes()
    if bs.sniff(buf) == "compressed":
        return bs.decode_compressed_file(buf)
    return bs.decode_block_file(buf)


def evaluate_pair(original, recon, query_count=4096, seed=0):
    """Fidelity of a reconstruction against its original, as a report dict.

    Inner-product errors are ``<q, x_hat - x> / |x|`` with queries uniform
    on the sphere; a compressed input also contributes its bit total, rank
    and (for prod methods) the QJL correction.
    """
    method, bits, mean_rank = "external", float("nan"), float("nan")
    if isinstance(recon, bs.CompressedFile):
        cbs = recon.blocks
        dense = [decompress_block(cb) for cb in cbs]
        method = recon.config.method
        bits = float(np.mean([float(cb.bit_report.total) for cb in cbs]))
        mean_rank = float(np.mean([cb.rank for cb in cbs])) \
            if method in SHRINK_METHODS or method == "svd1_tq" else 0.0
    else:
        cbs = None
        dense = list(recon.blocks)
    if (recon.n, recon.d, len(dense)) != (original.n, original.d, original.count):
        raise ValueError("reconstruction does not match the original's shape")
    l2, count, total, total_sq = [], 0, 0.0, 0.0
    for i, (x, xh) in enumerate(zip(original.blocks, dense)):
        x = np.asarray(x, dtype=np.float64)
        l2.append(relative_l2(x, xh))
        q = sphere_queries(query_count, original.d, derive_seed(seed, i, "queries"))
        est = block_inner_products(cbs[i], q) if cbs is not None else np.asarray(xh) @ q.T
        norms = np.linalg.norm(x, axis=1)
        keep = norms > 0
        err = (est - x @ q.T)[keep] / norms[keep, None]
        count += err.size
        total += err.sum()
        total_sq += np.square(err).sum()
    bias = total / count
    return {"method": method, "bits": bits, "l2_pct": float(np.mean(l2)), "ip_bias": float(bias),
            "ip_std": math.sqrt(max(total_sq / count - bias * bias, 0.0)),
            "mean_rank": mean_rank, "n_blocks": original.count}


def cmd_eval(args):
    original = bs.read_block_file(args.input)
    recon = _read_any(args.recon)
    report = evaluate_pair(original, recon, args.queries, args.seed)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


def cmd_compare(args):
    bf = bs.read_block_file(args.input)
    methods = _names(args.methods)
    for m in methods:
        if m not in METHODS and m != "lossless":
            raise ValueError(f"unknown method {m!r}")
    base = CompressionConfig(factor_bits=args.factor_bits, loss=args.loss, block_rows=bf.n,
                             kivi_group=args.kivi_group, kivi_axis=args.kivi_axis, seed=args.seed)
    blocks = [np.asarray(b, dtype=np.float64) for b in bf.blocks]
    reports = comparison_table(blocks, methods, _ints(args.bits_list), base, args.queries,
                               args.seed, args.workers)
    write_table_csv(args.out, reports)
    if bf.has_truth:
        cfg = replace(base, residual_bits=min(_ints(args.bits_list)))
        samples = ((derive_seed(args.seed, i), b, t.signal.astype(np.float64),
                    t.noise.astype(np.float64)) for i, (b, t) in enumerate(zip(blocks, bf.truth)))
        props = property_report(samples, cfg, args.rotations)
        path = args.properties or str(Path(args.out).with_suffix(".properties.json"))
        out = props.as_dict()
        out["deloc_threshold"] = DELOC_C
        Path(path).write_text(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="eoptshrinkq",
                                description="Spectral shrinkage plus per-vector quantization "
                                            "of matrix blocks.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic spiked block file with ground truth")
    g.add_argument("--n", type=int, default=128)
    g.add_argument("--d", type=int, default=128)
    g.add_argument("--strengths", default="", help="comma-separated signal strengths")
    g.add_argument("--cov-a", default="identity", help="row covariance: identity, "
                   "toeplitz:RHO or diagonal:LO:HI")
    g.add_argument("--cov-b", default="identity", help="column covariance, same syntax")
    g.add_argument("--entry-dist", default="gaussian", choices=["gaussian", "rademacher_scaled"])
    g.add_argument("--blocks", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    def method_args(sp):
        sp.add_argument("--factor-bits", type=int, default=4)
        sp.add_argument("--loss", default="frobenius", choices=LOSSES)
        sp.add_argument("--kivi-group", type=int, default=64)
        sp.add_argument("--kivi-axis", type=int, default=0, choices=[0, 1])
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)

    c = sub.add_parser("compress", help="block file -> compressed file")
    c.add_argument("--in", dest="input", required=True)
    c.add_argument("--method", default="eoptshrinkq_mse", choices=METHODS)
    c.add_argument("--bits", type=int, default=2)
    method_args(c)
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decompress", help="compressed file -> block file")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decompress)

    s = sub.add_parser("spectrum", help="singular values and edge/rank estimates as CSV")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--block-index", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_spectrum)

    e = sub.add_parser("eval", help="fidelity report (JSON) for an original/reconstruction pair")
    e.add_argument("--in", dest="input", required=True, help="original block file")
    e.add_argument("--recon", required=True, help="reconstructed block file or compressed file")
    e.add_argument("--queries", type=int, default=4096)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", help="write JSON here instead of stdout")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("compare", help="comparison table over methods and bit widths")
    m.add_argument("--in", dest="input", required=True)
    m.add_argument("--methods", default="tq_mse,svd1_tq,eoptshrinkq_mse")
    m.add_argument("--bits-list", default="2,3,4")
    method_args(m)
    m.add_argument("--queries", type=int, default=4096)
    m.add_argument("--rotations", type=int, default=16)
    m.add_argument("--properties", help="property JSON path (default: next to --out)")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s: %(message)s",
                        level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except bs.FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (NonFiniteError, SpectrumError, CodebookError, LinAlgError, ArithmeticError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
