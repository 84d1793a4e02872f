"""Little-endian bit packing of small unsigned codes.

Codes are packed ``bits`` at a time, least significant bit first, and every
row starts on a fresh byte.
"""

import numpy as np


def packed_row_bytes(cols, bits):
    return (cols * bits + 7) // 8


def pack_codes(codes, bits):
    """Pack a 2-D array of codes (< 2**bits) into bytes, rows padded to byte boundaries."""
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes[None, :]
    rows, cols = codes.shape
    if rows == 0 or cols == 0:
        return b""
    if codes.size and (codes.min() < 0 or codes.max() >= (1 << bits)):
        raise ValueError(f"codes do not fit into {bits} bits")
    shifts = np.arange(bits, dtype=np.uint16)
    plane = ((codes.astype(np.uint16)[..., None] >> shifts) & 1).astype(np.uint8)
    plane = plane.reshape(rows, cols * bits)
    pad = packed_row_bytes(cols, bits) * 8 - cols * bits
    if pad:
        plane = np.pad(plane, ((0, 0), (0, pad)))
    return np.packbits(plane, axis=1, bitorder="little").tobytes()


def unpack_codes(buf, rows, cols, bits):
    """Inverse of :func:`pack_codes`; returns a ``uint8`` array of shape ``(rows, cols)``."""
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols), dtype=np.uint8)
    width = packed_row_bytes(cols, bits)
    raw = np.frombuffer(buf, dtype=np.uint8, count=rows * width).reshape(rows, width)
    plane = np.unpackbits(raw, axis=1, bitorder="little")[:, :cols * bits]
    plane = plane.reshape(rows, cols, bits).astype(np.uint16)
    weights = (1 << np.arange(bits, dtype=np.uint16))
    return (plane * weights).sum(axis=2).astype(np.uint8)


def pack_bits(flags):
    """Pack a 2-D boolean array, 8 flags per byte, rows padded to byte boundaries."""
    return pack_codes(np.asarray(flags, dtype=np.uint8), 1)


def unpack_bits(buf, rows, cols):
    return unpack_codes(buf, rows, cols, 1).astype(bool)
