"""The .gicx container: a fixed little-endian header plus two entropy-coded
payloads (embedding, then guidance image).

The header carries everything decompression needs besides the model
checkpoint: image dimensions, schedule parameters, embedding shape and
quantizer, guidance quantizer and dimensions, the guidance scales, the
16-byte checkpoint id, and both payload lengths. Layout version 1 is frozen
by golden tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .coding import QuantizerSpec
from .errors import FormatError

MAGIC = b"GICX"
VERSION = 1
FILE_EXTENSION = ".gicx"

CODEC_IDS = {"identity": 0, "autoencoder": 1}
CODEC_NAMES = {v: k for k, v in CODEC_IDS.items()}
SCHEDULE_IDS = {"linear": 0}
SCHEDULE_NAMES = {v: k for k, v in SCHEDULE_IDS.items()}

# magic, version | H, W | codec id | schedule kind, steps, beta_start, beta_end
# | K, N | embedding quantizer | guidance quantizer | guidance dims
# | comp scale, cfg scale | checkpoint id | payload lengths
_HEADER = struct.Struct("<4sH II B BIdd HH ddH ddH II dd 16s QQ")
HEADER_SIZE = _HEADER.size


@dataclass
class BitstreamHeader:
    height: int
    width: int
    codec_mode: str
    schedule_kind: str
    schedule_steps: int
    beta_start: float
    beta_end: float
    embed_tokens: int
    embed_dim: int
    embed_quantizer: QuantizerSpec
    guidance_quantizer: QuantizerSpec
    guidance_height: int
    guidance_width: int
    comp_scale: float
    cfg_scale: float
    checkpoint_id: bytes
    embed_payload_len: int = 0
    guidance_payload_len: int = 0


@dataclass
class Bitstream:
    header: BitstreamHeader
    embed_payload: bytes = b""
    guidance_payload: bytes = b""


def pack_bitstream(stream: Bitstream) -> bytes:
    """Serialize; payload lengths in the header are set from the payloads."""
    h = stream.header
    if len(h.checkpoint_id) != 16:
        raise FormatError(f"checkpoint id must be 16 bytes, got {len(h.checkpoint_id)}")
    if h.codec_mode not in CODEC_IDS:
        raise FormatError(f"unknown latent codec mode {h.codec_mode!r}")
    if h.schedule_kind not in SCHEDULE_IDS:
        raise FormatError(f"unknown schedule kind {h.schedule_kind!r}")
    h.embed_payload_len = len(stream.embed_payload)
    h.guidance_payload_len = len(stream.guidance_payload)
    head = _HEADER.pack(
        MAGIC, VERSION,
        h.height, h.width,
        CODEC_IDS[h.codec_mode],
        SCHEDULE_IDS[h.schedule_kind], h.schedule_steps, h.beta_start, h.beta_end,
        h.embed_tokens, h.embed_dim,
        h.embed_quantizer.min_value, h.embed_quantizer.max_value, h.embed_quantizer.levels,
        h.guidance_quantizer.min_value, h.guidance_quantizer.max_value,
        h.guidance_quantizer.levels,
        h.guidance_height, h.guidance_width,
        h.comp_scale, h.cfg_scale,
        h.checkpoint_id,
        h.embed_payload_len, h.guidance_payload_len,
    )
    return head + stream.embed_payload + stream.guidance_payload


def unpack_bitstream(data: bytes) -> Bitstream:
    """Parse and validate a serialized stream; errors name the bad field."""
    if len(data) < HEADER_SIZE:
        raise FormatError(f"stream holds {len(data)} bytes, header needs {HEADER_SIZE}")
    (magic, version, height, width, codec_id, sched_id, sched_steps,
     beta_start, beta_end, tokens, dim, eq_min, eq_max, eq_levels,
     gq_min, gq_max, gq_levels, g_h, g_w, comp_scale, cfg_scale,
     ckpt_id, emb_len, guid_len) = _HEADER.unpack_from(data)

    if magic != MAGIC:
        raise FormatError(f"field 'magic': {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"field 'version': {version}, expected {VERSION}")
    if codec_id not in CODEC_NAMES:
        raise FormatError(f"field 'codec id': unknown value {codec_id}")
    if sched_id not in SCHEDULE_NAMES:
        raise FormatError(f"field 'schedule kind': unknown value {sched_id}")
    if sched_steps < 1:
        raise FormatError(f"field 'schedule steps': {sched_steps} < 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise FormatError(f"field 'beta range': [{beta_start}, {beta_end}]")
    if height < 4 or width < 4 or height % 4 or width % 4:
        raise FormatError(f"field 'image dims': {height}x{width} not a multiple of 4")
    if tokens < 1 or dim < 1:
        raise FormatError(f"field 'embedding shape': {tokens}x{dim}")
    if not eq_min < eq_max:
        raise FormatError(f"field 'embedding quantizer range': [{eq_min}, {eq_max}]")
    if eq_levels < 2:
        raise FormatError(f"field 'embedding quantizer levels': {eq_levels}")
    if not gq_min < gq_max:
        raise FormatError(f"field 'guidance quantizer range': [{gq_min}, {gq_max}]")
    if gq_levels < 2:
        raise FormatError(f"field 'guidance quantizer levels': {gq_levels}")
    if g_h * 4 != height or g_w * 4 != width:
        raise FormatError(
            f"field 'guidance dims': {g_h}x{g_w} does not match image {height}x{width}"
        )
    expected = HEADER_SIZE + emb_len + guid_len
    if len(data) != expected:
        raise FormatError(
            f"field 'payload lengths': header promises {expected} bytes total, "
            f"stream holds {len(data)}"
        )
    header = BitstreamHeader(
        height=height, width=width,
        codec_mode=CODEC_NAMES[codec_id],
        schedule_kind=SCHEDULE_NAMES[sched_id],
        schedule_steps=sched_steps, beta_start=beta_start, beta_end=beta_end,
        embed_tokens=tokens, embed_dim=dim,
        embed_quantizer=QuantizerSpec(eq_min, eq_max, eq_levels),
        guidance_quantizer=QuantizerSpec(gq_min, gq_max, gq_levels),
        guidance_height=g_h, guidance_width=g_w,
        comp_scale=comp_scale, cfg_scale=cfg_scale,
        checkpoint_id=ckpt_id,
        embed_payload_len=emb_len, guidance_payload_len=guid_len,
    )
    emb = data[HEADER_SIZE : HEADER_SIZE + emb_len]
    guid = data[HEADER_SIZE + emb_len :]
    return Bitstream(header=header, embed_payload=emb, guidance_payload=guid)


def bits_per_pixel(byte_count: int, height: int, width: int) -> float:
    return 8.0 * byte_count / (height * width)


@dataclass
class BitrateReport:
    """Per-stream bpp figures with corpus statistics."""

    rows: list = field(default_factory=list)  # (name, byte_count, bpp)

    def add(self, name: str, byte_count: int, height: int, width: int) -> None:
        self.rows.append((name, byte_count, bits_per_pixel(byte_count, height, width)))

    @property
    def bpp_values(self) -> np.ndarray:
        return np.array([r[2] for r in self.rows], dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(np.mean(self.bpp_values))

    @property
    def std(self) -> float:
        return float(np.std(self.bpp_values))

    @property
    def min(self) -> float:
        return float(np.min(self.bpp_values))

    @property
    def max(self) -> float:
        return float(np.max(self.bpp_values))


def bitrate_report(entries) -> BitrateReport:
    """Build a report from (name, byte_count, height, width) tuples."""
    report = BitrateReport()
    for name, nbytes, h, w in entries:
        report.add(name, nbytes, h, w)
    if not report.rows:
        raise FormatError("bitrate report needs at least one stream")
    return report


def bitrate_report_for_dir(directory) -> BitrateReport:
    """Report over every .gicx file in a directory (sorted by name)."""
    directory = Path(directory)
    entries = []
    for p in sorted(directory.glob(f"*{FILE_EXTENSION}")):
        data = p.read_bytes()
        stream = unpack_bitstream(data)
        entries.append((p.name, len(data), stream.header.height, stream.header.width))
    return bitrate_report(entries)
