# Per-vector quantization of unit rows: distortion, and what QJL buys for inner products.
import math

import numpy as np

from eoptshrinkq.metrics import ip_fidelity, relative_l2, unit_rows
from eoptshrinkq.pipeline import CompressionConfig, compress_block, decompress_block
from eoptshrinkq.seeding import generator
from eoptshrinkq.turboquant import build_codebook

for b in range(1, 5):
    cb = build_codebook(b)
    print("b=%d  levels %s  distortion %.5f" % (b, np.round(cb.levels[cb.levels >= 0], 4),
                                               cb.distortion))

blocks = [unit_rows(generator(s).standard_normal((128, 128))) for s in range(6)]
print()
print("method   b   relL2%   ip bias    ip std")
for b in (2, 3, 4):
    for method in ("tq_mse", "tq_prod"):
        cfg = CompressionConfig(method, b)
        l2 = np.mean([relative_l2(x, decompress_block(compress_block(x, cfg, i)))
                      for i, x in enumerate(blocks)])
        bias, std = ip_fidelity(blocks, cfg, 2048)
        print("%-8s %d  %6.2f  %+.5f  %.5f" % (method, b, l2, bias, std))
    # uniform queries: std of the MSE quantizer is sqrt(D/d)
    print("         sqrt(D/d) = %.5f" % math.sqrt(build_codebook(b).distortion / 128))
