"""Bitstream container: packing, validation, bitrate arithmetic."""

import numpy as np
import pytest

from gicx.coding import QuantizerSpec
from gicx.container import (FILE_EXTENSION, Bitstream, BitstreamHeader, MAGIC,
                            bitrate_report, bits_per_pixel, pack_bitstream,
                            unpack_bitstream)
from gicx.errors import FormatError


def sample_stream(**overrides):
    fields = dict(
        height=32, width=32, codec_mode="identity", schedule_kind="linear",
        schedule_steps=200, beta_start=1e-4, beta_end=0.02, embed_tokens=8,
        embed_dim=32, embed_quantizer=QuantizerSpec(-2.5, 3.1, 256),
        guidance_quantizer=QuantizerSpec(0.0, 1.0, 32), guidance_height=8,
        guidance_width=8, comp_scale=215.0, cfg_scale=0.95,
        checkpoint_id=bytes(range(16)),
    )
    fields.update(overrides)
    header = BitstreamHeader(**fields)
    return Bitstream(header, embed_payload=b"\x01\x02\x03\x04\x05",
                     guidance_payload=b"\xaa\xbb\xcc")


class TestPackUnpack:
    def test_round_trip_preserves_everything(self):
        stream = sample_stream()
        data = pack_bitstream(stream)
        assert data[:4] == MAGIC
        back = unpack_bitstream(data)
        assert back.embed_payload == stream.embed_payload
        assert back.guidance_payload == stream.guidance_payload
        h = back.header
        assert (h.height, h.width) == (32, 32)
        assert h.codec_mode == "identity"
        assert h.schedule_kind == "linear"
        assert h.schedule_steps == 200
        assert h.beta_start == pytest.approx(1e-4)
        assert (h.embed_tokens, h.embed_dim) == (8, 32)
        assert h.embed_quantizer == QuantizerSpec(-2.5, 3.1, 256)
        assert h.guidance_quantizer == QuantizerSpec(0.0, 1.0, 32)
        assert (h.guidance_height, h.guidance_width) == (8, 8)
        assert h.comp_scale == 215.0
        assert h.cfg_scale == 0.95
        assert h.checkpoint_id == bytes(range(16))

    def test_pack_unpack_pack_is_byte_identical(self):
        data = pack_bitstream(sample_stream())
        again = pack_bitstream(unpack_bitstream(data))
        assert again == data

    def test_extension_constant(self):
        assert FILE_EXTENSION == ".gicx"


class TestValidation:
    def test_bad_magic_names_field(self):
        data = bytearray(pack_bitstream(sample_stream()))
        data[:4] = b"JUNK"
        with pytest.raises(FormatError, match="magic"):
            unpack_bitstream(bytes(data))

    def test_truncated_header(self):
        data = pack_bitstream(sample_stream())
        with pytest.raises(FormatError):
            unpack_bitstream(data[:20])

    def test_payload_length_mismatch(self):
        data = pack_bitstream(sample_stream())
        with pytest.raises(FormatError):
            unpack_bitstream(data[:-1])
        with pytest.raises(FormatError):
            unpack_bitstream(data + b"\x00")

    def test_guidance_dims_must_match_image(self):
        with pytest.raises(FormatError, match="guidance"):
            unpack_bitstream(pack_bitstream(sample_stream(guidance_height=9)))

    def test_checkpoint_id_must_be_16_bytes(self):
        with pytest.raises(FormatError):
            pack_bitstream(sample_stream(checkpoint_id=b"short"))

    def test_unknown_codec_rejected_on_pack(self):
        with pytest.raises(FormatError):
            pack_bitstream(sample_stream(codec_mode="mystery"))

    def test_corrupt_codec_id_rejected_on_unpack(self):
        data = bytearray(pack_bitstream(sample_stream()))
        # codec id byte sits immediately after magic, version, and dims
        offset = 4 + 2 + 4 + 4
        data[offset] = 250
        with pytest.raises(FormatError, match="codec"):
            unpack_bitstream(bytes(data))


class TestBitrate:
    def test_bits_per_pixel_is_exact(self):
        assert bits_per_pixel(1024, 32, 32) == 8 * 1024 / (32 * 32)
        assert bits_per_pixel(633, 32, 32) == 8 * 633 / 1024.0

    def test_desk_scale_example(self):
        # a full-scale stream: 64x768 embedding indices around 2950 bytes
        # plus a 128x192 guidance payload around 492 bytes lands near 0.07
        # bits per pixel on a 512x768 image
        total = 2950 + 492
        assert bits_per_pixel(total, 512, 768) == pytest.approx(0.070, abs=0.008)

    def test_report_statistics(self):
        entries = [("a", 500, 32, 32), ("b", 520, 32, 32), ("c", 480, 32, 32)]
        report = bitrate_report(entries)
        values = np.array([8 * n / 1024 for _, n, _, _ in entries])
        assert report.mean == pytest.approx(values.mean())
        assert report.std == pytest.approx(values.std())
        assert report.min == pytest.approx(values.min())
        assert report.max == pytest.approx(values.max())

    def test_report_requires_entries(self):
        with pytest.raises(FormatError):
            bitrate_report([])
