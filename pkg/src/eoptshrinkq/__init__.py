"""Optimal singular value shrinkage followed by per-vector quantization of matrix blocks."""

from .blockstore import (BlockFile, CompressedFile, FormatError, ingest_external,
                         read_block_file, read_compressed_file, write_block_file,
                         write_compressed_file)
from .metrics import (FidelityReport, PropertyReport, comparison_table, delocalization_check,
                      ip_fidelity, proposition_one_suite, relative_l2)
from .pipeline import (BitAccounting, CompressedBlock, CompressionConfig, compress_block,
                       compress_blocks, decompress_block, kivi_compress, quantize_svd_factors)
from .shrinkage import ShrinkageResult, shrink
from .spectral import (NonFiniteError, SpectrumError, decompose, estimate_bulk_edge,
                       impute_noise_spectrum, pilot_k)
from .spiked_synth import CovarianceSpec, SpikedModelSpec, sample_block, white_noise_alpha
from .turboquant import build_codebook, codebook_for, ip_estimate, tq_mse_decode, tq_mse_encode

__version__ = "0.1.0"
