"""On-disk containers.

Block file (raw blocks, optional ground truth)::

    "EOSQ" | u16 version | u8 dtype (0 = f32) | u8 flags (bit 0: truth)
    u32 n | u32 d | u32 block_count
    block_count * n * d f32, row-major
    [truth] per block: u32 rank | rank f32 strengths | n*d f32 signal | n*d f32 noise

Compressed file::

    "EOSQ" 0x01 | u16 version
    u8 method | u8 b | u8 b_s | u8 loss | u8 kivi_axis | u8 reserved
    u32 kivi_group | u32 n | u32 d | u32 block_count | u64 seed
    block_count records, each u32 length + body

Everything is little-endian.  A record body holds the rank, both seeds, the
bit report, then the factor, residual, QJL and group sections that apply to
the method.  Packed codes use :mod:`eoptshrinkq.packing`.
"""

import io
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .packing import pack_bits, pack_codes, packed_row_bytes, unpack_bits, unpack_codes
from .pipeline import (METHODS, PROD_METHODS, BitAccounting, CompressedBlock, CompressionConfig,
                       FactorPayload, KiviPayload)
from .shrinkage import LOSSES
from .spectral import NonFiniteError

logger = logging.getLogger(__name__)

MAGIC = b"EOSQ"
COMPRESSED_MAGIC = MAGIC + b"\x01"
VERSION = 1
DTYPE_F32 = 0
FLAG_TRUTH = 1

_BLOCK_HEADER = struct.Struct("<4sHBBIII")
_COMP_HEADER = struct.Struct("<5sHBBBBBBIIIIQ")

_SEC_FACTORS = 1
_SEC_RESIDUAL = 2
_SEC_QJL = 4
_SEC_KIVI = 8


class FormatError(ValueError):
    """Malformed container; ``offset`` is the byte position where decoding failed."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at byte {offset})")
        self.offset = offset


@dataclass
class GroundTruth:
    strengths: list
    signal: np.ndarray
    noise: np.ndarray


@dataclass
class BlockFile:
    n: int
    d: int
    blocks: np.ndarray  # (count, n, d) float32
    truth: list = None

    @property
    def count(self):
        return len(self.blocks)

    @property
    def has_truth(self):
        return self.truth is not None


@dataclass
class CompressedFile:
    config: CompressionConfig
    n: int
    d: int
    blocks: list


class _Reader:
    def __init__(self, buf):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, size, what="data"):
        if size < 0 or self.pos + size > len(self.buf):
            raise FormatError(f"truncated {what}: need {size} bytes", self.pos)
        out = self.buf[self.pos:self.pos + size]
        self.pos += size
        return out

    def unpack(self, fmt, what="field"):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size, what))

    def array(self, count, dtype="<f4", what="array"):
        dt = np.dtype(dtype)
        return np.frombuffer(self.take(count * dt.itemsize, what), dtype=dt).copy()


# --- block files ----------------------------------------------------------

def encode_block_file(bf):
    blocks = np.ascontiguousarray(bf.blocks, dtype="<f4")
    if blocks.ndim != 3 or blocks.shape[1:] != (bf.n, bf.d):
        raise ValueError(f"blocks have shape {blocks.shape}, expected (count, {bf.n}, {bf.d})")
    out = io.BytesIO()
    flags = FLAG_TRUTH if bf.truth is not None else 0
    out.write(_BLOCK_HEADER.pack(MAGIC, VERSION, DTYPE_F32, flags, bf.n, bf.d, len(blocks)))
    out.write(blocks.tobytes())
    if bf.truth is not None:
        if len(bf.truth) != len(blocks):
            raise ValueError("one ground-truth entry per block required")
        for t in bf.truth:
            out.write(struct.pack("<I", len(t.strengths)))
            out.write(np.asarray(t.strengths, dtype="<f4").tobytes())
            out.write(np.ascontiguousarray(t.signal, dtype="<f4").tobytes())
            out.write(np.ascontiguousarray(t.noise, dtype="<f4").tobytes())
    return out.getvalue()


def decode_block_file(buf):
    r = _Reader(buf)
    magic, version, dtype, flags, n, d, count = _BLOCK_HEADER.unpack(
        r.take(_BLOCK_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError("not an EOSQ block file", 0)
    if version != VERSION:
        raise FormatError(f"unsupported block file version {version}", 4)
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}", 6)
    if flags & ~FLAG_TRUTH:
        raise FormatError(f"unknown flags 0x{flags:02x}", 7)
    size = n * d
    blocks = r.array(count * size, what="block payload").reshape(count, n, d)
    truth = None
    if flags & FLAG_TRUTH:
        truth = []
        for _ in range(count):
            (rank,) = r.unpack("I", "truth rank")
            strengths = r.array(rank, what="strengths").astype(float).tolist()
            signal = r.array(size, what="signal").reshape(n, d)
            noise = r.array(size, what="noise").reshape(n, d)
            truth.append(GroundTruth(strengths, signal, noise))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", r.pos)
    return BlockFile(n, d, blocks, truth)


# --- compressed files -----------------------------------------------------

def _encode_record(cb):
    out = io.BytesIO()
    sections = 0
    if cb.method == "kivi":
        sections |= _SEC_KIVI
    else:
        sections |= _SEC_RESIDUAL
        if cb.factors is not None and cb.rank:
            sections |= _SEC_FACTORS
        if cb.qjl_signs is not None:
            sections |= _SEC_QJL
    out.write(struct.pack("<HBBQQ", cb.rank, sections, cb.bits, cb.rotation_seed,
                          cb.projection_seed))
    out.write(struct.pack("<7d", *cb.bit_report.as_floats()))
    if sections & _SEC_FACTORS:
        f = cb.factors
        out.write(struct.pack("<B", f.bits))
        for levels, codes in ((f.u_levels, f.u_codes), (f.v_levels, f.v_codes)):
            out.write(struct.pack("<H", len(levels)))
            out.write(np.asarray(levels, dtype="<f4").tobytes())
            out.write(pack_codes(codes, f.bits))
        out.write(np.asarray(f.values, dtype="<f4").tobytes())
    if sections & _SEC_RESIDUAL:
        out.write(np.asarray(cb.norms, dtype="<f4").tobytes())
        out.write(pack_bits(np.asarray(cb.zero_mask)[None, :]))
        out.write(pack_codes(cb.codes, cb.bits))
    if sections & _SEC_QJL:
        out.write(np.asarray(cb.qjl_norms, dtype="<f4").tobytes())
        out.write(pack_bits(cb.qjl_signs))
    if sections & _SEC_KIVI:
        k = cb.kivi
        out.write(struct.pack("<BII", k.axis, k.group, len(k.mins)))
        out.write(np.asarray(k.mins, dtype="<f4").tobytes())
        out.write(np.asarray(k.scales, dtype="<f4").tobytes())
        out.write(pack_codes(k.codes, cb.bits))
    return out.getvalue()


def _decode_record(r, cfg, n, d, end):
    start = r.pos
    rank, sections, bits, rot_seed, proj_seed = r.unpack("HBBQQ", "record header")
    stored_report = r.unpack("7d", "bit report")
    method = cfg.method
    if bits != cfg.residual_bits:
        raise FormatError(f"record bit width {bits} disagrees with header", start)
    expected = _SEC_KIVI if method == "kivi" else _SEC_RESIDUAL
    if not sections & expected:
        raise FormatError(f"record sections 0x{sections:02x} do not match method {method}", start)
    factors = norms = zero = codes = qjl_norms = qjl_signs = kivi = None
    if sections & _SEC_FACTORS:
        (fb,) = r.unpack("B", "factor bits")
        parts = []
        for rows in (n, d):
            (nl,) = r.unpack("H", "level count")
            if nl == 0 or nl > (1 << fb):
                raise FormatError(f"invalid codebook size {nl}", r.pos - 2)
            levels = r.array(nl, what="factor levels").astype(np.float32)
            c = unpack_codes(r.take(rows * packed_row_bytes(rank, fb), "factor codes"),
                             rows, rank, fb)
            if c.size and c.max() >= nl:
                raise FormatError("factor code exceeds codebook", r.pos)
            parts += [levels, c]
        values = r.array(rank, what="shrunken values").astype(np.float32)
        factors = FactorPayload(fb, parts[0], parts[1], parts[2], parts[3], values)
    elif rank:
        raise FormatError("nonzero rank without factor section", start)
    if sections & _SEC_RESIDUAL:
        norms = r.array(n, what="row norms").astype(np.float32)
        zero = unpack_bits(r.take(packed_row_bytes(n, 1), "zero bitmap"), 1, n)[0]
        codes = unpack_codes(r.take(n * packed_row_bytes(d, bits), "residual codes"), n, d, bits)
    if sections & _SEC_QJL:
        qjl_norms = r.array(n, what="qjl norms").astype(np.float32)
        qjl_signs = unpack_bits(r.take(n * packed_row_bytes(d, 1), "qjl signs"), n, d)
    groups = 0
    if sections & _SEC_KIVI:
        axis, group, groups = r.unpack("BII", "group header")
        if axis not in (0, 1) or group == 0:
            raise FormatError("invalid group header", r.pos - 9)
        mins = r.array(groups, what="group minima").astype(np.float32)
        scales = r.array(groups, what="group scales").astype(np.float32)
        rows, cols = (d, n) if axis == 0 else (n, d)
        kc = unpack_codes(r.take(rows * packed_row_bytes(cols, bits), "group codes"),
                          rows, cols, bits)
        kivi = KiviPayload(axis, group, mins, scales, kc)
    if r.pos != end:
        raise FormatError(f"record length mismatch ({end - r.pos} bytes unaccounted)", r.pos)
    report = BitAccounting.for_block(method, n, d, bits, factors.bits if factors else
                                     cfg.factor_bits, rank, kivi_groups=groups)
    if report.as_floats() != tuple(stored_report):
        raise FormatError("stored bit report disagrees with record contents", start + 20)
    return CompressedBlock(n, d, method, bits, rank, report, rot_seed, proj_seed, factors,
                           norms, zero, codes, qjl_norms, qjl_signs, kivi)


def encode_compressed_file(cf):
    cfg = cf.config
    out = io.BytesIO()
    out.write(_COMP_HEADER.pack(COMPRESSED_MAGIC, VERSION, METHODS.index(cfg.method),
                                cfg.residual_bits, cfg.factor_bits, LOSSES.index(cfg.loss),
                                cfg.kivi_axis, 0, cfg.kivi_group, cf.n, cf.d, len(cf.blocks),
                                cfg.seed))
    for cb in cf.blocks:
        body = _encode_record(cb)
        out.write(struct.pack("<I", len(body)))
        out.write(body)
    return out.getvalue()


def decode_compressed_file(buf):
    r = _Reader(buf)
    head = r.take(_COMP_HEADER.size, "header")
    (magic, version, method, b, bs, loss, axis, _, group, n, d, count,
     seed) = _COMP_HEADER.unpack(head)
    if magic != COMPRESSED_MAGIC:
        raise FormatError("not an EOSQ compressed file", 0)
    if version != VERSION:
        raise FormatError(f"unsupported compressed file version {version}", 5)
    if method >= len(METHODS) or loss >= len(LOSSES):
        raise FormatError("unknown method or loss code", 7)
    try:
        cfg = CompressionConfig(METHODS[method], b, bs, LOSSES[loss], n, group, axis, seed)
    except ValueError as exc:
        raise FormatError(f"invalid config echo: {exc}", 7) from None
    blocks = []
    for _ in range(count):
        (length,) = r.unpack("I", "record length")
        end = r.pos + length
        if end > len(r.buf):
            raise FormatError(f"record length {length} runs past end of file", r.pos - 4)
        blocks.append(_decode_record(r, cfg, n, d, end))
    if r.pos != len(r.buf):
        raise FormatError(f"{len(r.buf) - r.pos} trailing bytes", r.pos)
    return CompressedFile(cfg, n, d, blocks)


def sniff(buf):
    """``"blocks"`` or ``"compressed"`` from the first bytes of a container."""
    head = bytes(buf[:6])
    if len(head) < 6 or head[:4] != MAGIC:
        raise FormatError("missing EOSQ magic", 0)
    # block files carry a u16 version at byte 4, compressed files a 0x01 tag
    return "compressed" if head[4] == 1 and head[5] != 0 else "blocks"


def read_block_file(path):
    with open(path, "rb") as fh:
        return decode_block_file(fh.read())


def write_block_file(path, bf):
    data = encode_block_file(bf)
    with open(path, "wb") as fh:
        fh.write(data)


def read_compressed_file(path):
    with open(path, "rb") as fh:
        return decode_compressed_file(fh.read())


def write_compressed_file(path, cf):
    data = encode_compressed_file(cf)
    with open(path, "wb") as fh:
        fh.write(data)


# --- external tensors -----------------------------------------------------

def _load_rows(path, d, layout):
    if layout == "raw":
        flat = np.fromfile(path, dtype="<f4")
        if flat.size % d:
            raise ValueError(f"{flat.size} values do not form rows of width {d}")
        return flat.reshape(-1, d)
    if layout == "csv":
        rows = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        if rows.size and rows.shape[1] != d:
            raise ValueError(f"CSV has {rows.shape[1]} columns, expected {d}")
        return rows.reshape(-1, d)
    raise ValueError(f"unknown layout {layout!r}; expected 'raw' or 'csv'")


def ingest_external(path, n, d, layout="raw"):
    """Partition a ``(rows, d)`` tensor into full ``n``-row blocks; the remainder is dropped."""
    rows = _load_rows(path, d, layout)
    bad = ~np.all(np.isfinite(rows), axis=1)
    if bad.any():
        raise NonFiniteError(f"non-finite value in row {int(np.argmax(bad))}")
    count, rest = divmod(len(rows), n)
    if rest:
        logger.warning("%d rows dropped (%d rows do not fill a block of %d)", rest, rest, n)
    if count == 0:
        raise ValueError(f"fewer than {n} rows; no complete block")
    blocks = rows[:count * n].astype(np.float32).reshape(count, n, d)
    return BlockFile(n, d, blocks)


def export_external(path, bf, layout="raw"):
    """Write the concatenated rows of ``bf`` as raw f32 or CSV."""
    rows = np.asarray(bf.blocks, dtype="<f4").reshape(-1, bf.d)
    if layout == "raw":
        rows.tofile(path)
    elif layout == "csv":
        np.savetxt(path, rows, delimiter=",", fmt="%.9g")
    else:
        raise ValueError(f"unknown layout {layout!r}; expected 'raw' or 'csv'")
