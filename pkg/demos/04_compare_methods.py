# The full comparison table on a rank-5 spiked suite, plus the residual property checks.
import sys

from eoptshrinkq.metrics import comparison_table, proposition_one_suite, table_json
from eoptshrinkq.pipeline import CompressionConfig
from eoptshrinkq.spiked_synth import SpikedModelSpec, sample_block, white_noise_alpha

strengths = (6.0, 5.0, 4.0, 3.0, 2.0)
blocks = [sample_block(SpikedModelSpec(128, 128, strengths, seed=s))[0] for s in range(10)]
methods = ["tq_mse", "tq_prod", "svd1_tq", "eoptshrinkq_mse", "kivi"]
reports = comparison_table(blocks, methods, [2, 3, 4], query_count=1024, workers=4)

print("%-16s %7s %8s %9s %8s %5s" % ("method", "bits", "l2_pct", "ip_bias", "ip_std", "rank"))
for r in reports:
    print("%-16s %7.4f %8.2f %+9.5f %8.5f %5.2f" % (r.method, r.bits_total, r.rel_l2_percent,
                                                   r.ip_bias, r.ip_std, r.mean_rank))

alpha = white_noise_alpha(1.0)
rep = proposition_one_suite(SpikedModelSpec(128, 128, (2 * alpha,)), CompressionConfig(),
                            range(20))
print()
print("residual Frobenius gap %.2e, spectrum KS %.4f, max deloc ratio %.3f"
      % (rep.residual_frobenius_gap, rep.spectrum_ks_distance, rep.deloc_max_ratio))
for snr, ratio in rep.snr_bias_curve:
    print("  SNR %.4f  bias ratio %.4f  bound %.4f" % (snr, ratio, 1 / (1 + snr) + 0.05))

if "--json" in sys.argv:
    print(table_json(reports))
