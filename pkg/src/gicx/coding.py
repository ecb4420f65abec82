"""Scalar quantization and adaptive arithmetic coding.

The coder is a 32-bit renormalizing arithmetic coder over an adaptive
frequency model. Both endpoints start from a uniform table and apply the
same update after every symbol, so no side information beyond the symbol
count is needed. Frequencies grow by a fixed increment and are halved
(floor, clamped at 1) whenever the total reaches the rescale limit, which
keeps totals far below the coder's precision bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DecodeError, ParameterError


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform scalar quantizer over [min_value, max_value] with `levels` grid points."""

    min_value: float
    max_value: float
    levels: int

    def __post_init__(self):
        if not self.min_value < self.max_value:
            raise ParameterError(
                f"quantizer range is empty: [{self.min_value}, {self.max_value}]"
            )
        if self.levels < 2:
            raise ParameterError(f"quantizer needs at least 2 levels, got {self.levels}")

    @property
    def step(self) -> float:
        return (self.max_value - self.min_value) / (self.levels - 1)


def spec_for_range(vmin: float, vmax: float, levels: int) -> QuantizerSpec:
    """Quantizer spanning observed data; degenerate (constant) ranges are widened."""
    vmin = float(vmin)
    vmax = float(vmax)
    if not vmax > vmin:
        vmax = vmin + 1e-9
    return QuantizerSpec(vmin, vmax, levels)


def quantize(values: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    """Map values to grid indices: clamp to the range, then round half up."""
    v = np.clip(np.asarray(values, dtype=np.float64), spec.min_value, spec.max_value)
    idx = np.floor((v - spec.min_value) / spec.step + 0.5).astype(np.int64)
    return np.clip(idx, 0, spec.levels - 1)


def dequantize(indices: np.ndarray, spec: QuantizerSpec) -> np.ndarray:
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= spec.levels):
        raise ParameterError(
            f"quantizer index outside 0..{spec.levels - 1}: [{idx.min()}, {idx.max()}]"
        )
    return spec.min_value + idx.astype(np.float64) * spec.step


class RangeModel:
    """Adaptive symbol frequencies with O(log n) cumulative queries.

    A Fenwick tree carries the prefix sums; a flat list mirrors the
    individual frequencies so single-symbol lookups stay O(1).
    """

    INCREMENT = 32
    RESCALE_LIMIT = 1 << 16

    def __init__(self, symbols: int):
        symbols = int(symbols)
        if symbols < 2:
            raise ParameterError(f"alphabet needs at least 2 symbols, got {symbols}")
        self.symbols = symbols
        self._freq = [1] * symbols
        self.total = symbols
        top = 1
        while top * 2 <= symbols:
            top *= 2
        self._top = top
        self._rebuild()

    def _rebuild(self) -> None:
        n = self.symbols
        tree = [0] * (n + 1)
        for i in range(1, n + 1):
            tree[i] += self._freq[i - 1]
            j = i + (i & -i)
            if j <= n:
                tree[j] += tree[i]
        self._tree = tree

    def cum(self, s: int) -> int:
        """Total frequency of symbols 0..s-1."""
        r = 0
        tree = self._tree
        while s > 0:
            r += tree[s]
            s -= s & -s
        return r

    def interval(self, s: int) -> tuple[int, int]:
        """(low, high) cumulative bounds of symbol s."""
        lo = self.cum(s)
        return lo, lo + self._freq[s]

    def find(self, value: int) -> int:
        """Symbol whose cumulative interval contains `value`."""
        idx = 0
        rem = value
        bit = self._top
        tree = self._tree
        n = self.symbols
        while bit:
            nxt = idx + bit
            if nxt <= n and tree[nxt] <= rem:
                idx = nxt
                rem -= tree[nxt]
            bit >>= 1
        return idx

    def update(self, s: int) -> None:
        """Account one occurrence of symbol s."""
        inc = self.INCREMENT
        self._freq[s] += inc
        self.total += inc
        i = s + 1
        tree = self._tree
        n = self.symbols
        while i <= n:
            tree[i] += inc
            i += i & -i
        if self.total >= self.RESCALE_LIMIT:
            freq = self._freq
            for i, f in enumerate(freq):
                freq[i] = (f + 1) // 2
            self.total = sum(freq)
            self._rebuild()


# ---------------------------------------------------------------------------
# arithmetic coder core

_STATE_BITS = 32
_STATE_MASK = (1 << _STATE_BITS) - 1
_HALF = 1 << (_STATE_BITS - 1)
_QUARTER = 1 << (_STATE_BITS - 2)
_MIN_RANGE = _QUARTER + 2


class _BitWriter:
    def __init__(self):
        self._chunks = bytearray()
        self._acc = 0
        self._nbits = 0

    def write(self, bit: int) -> None:
        self._acc = (self._acc << 1) | bit
        self._nbits += 1
        if self._nbits == 8:
            self._chunks.append(self._acc)
            self._acc = 0
            self._nbits = 0

    def getvalue(self) -> bytes:
        if self._nbits:
            self._chunks.append(self._acc << (8 - self._nbits))
            self._acc = 0
            self._nbits = 0
        return bytes(self._chunks)


class _BitReader:
    """Reads bits MSB-first; allows a bounded run of implicit zero bits past
    the end (the coder's legitimate lookahead), then flags truncation."""

    def __init__(self, data: bytes, slack: int = _STATE_BITS):
        self._data = data
        self._pos = 0
        self._limit = len(data) * 8 + slack

    def read(self) -> int:
        if self._pos >= self._limit:
            raise DecodeError(
                f"payload truncated: needed bit {self._pos} but only "
                f"{len(self._data) * 8} bits are present"
            )
        byte_i = self._pos >> 3
        bit = 0
        if byte_i < len(self._data):
            bit = (self._data[byte_i] >> (7 - (self._pos & 7))) & 1
        self._pos += 1
        return bit


def _narrow(low: int, high: int, total: int, sym_lo: int, sym_hi: int) -> tuple[int, int]:
    span = high - low + 1
    new_low = low + sym_lo * span // total
    new_high = low + sym_hi * span // total - 1
    return new_low, new_high


def range_encode(symbols, model: RangeModel) -> bytes:
    """Entropy-code a symbol sequence, adapting `model` in place."""
    out = _BitWriter()
    low, high = 0, _STATE_MASK
    underflow = 0
    n = model.symbols
    for s in np.asarray(symbols, dtype=np.int64).ravel():
        s = int(s)
        if not 0 <= s < n:
            raise ParameterError(f"symbol {s} outside alphabet 0..{n - 1}")
        sym_lo, sym_hi = model.interval(s)
        low, high = _narrow(low, high, model.total, sym_lo, sym_hi)
        while ((low ^ high) & _HALF) == 0:
            bit = low >> (_STATE_BITS - 1)
            out.write(bit)
            inv = bit ^ 1
            while underflow:
                out.write(inv)
                underflow -= 1
            low = (low << 1) & _STATE_MASK
            high = ((high << 1) & _STATE_MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            underflow += 1
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        model.update(s)
    # one disambiguating bit, then pad to a byte
    out.write(1)
    while underflow:
        out.write(0)
        underflow -= 1
    return out.getvalue()


def range_decode(payload: bytes, count: int, model: RangeModel) -> np.ndarray:
    """Decode `count` symbols, adapting `model` exactly as the encoder did."""
    count = int(count)
    if count < 0:
        raise ParameterError(f"symbol count must be >= 0, got {count}")
    reader = _BitReader(payload)
    code = 0
    for _ in range(_STATE_BITS):
        code = (code << 1) | reader.read()
    low, high = 0, _STATE_MASK
    out = np.empty(count, dtype=np.int64)
    for i in range(count):
        total = model.total
        span = high - low + 1
        value = ((code - low + 1) * total - 1) // span
        s = model.find(value)
        sym_lo, sym_hi = model.interval(s)
        low, high = _narrow(low, high, total, sym_lo, sym_hi)
        if not low <= code <= high:
            raise DecodeError(f"payload corrupt near symbol {i}: code left the interval")
        while ((low ^ high) & _HALF) == 0:
            code = ((code << 1) & _STATE_MASK) | reader.read()
            low = (low << 1) & _STATE_MASK
            high = ((high << 1) & _STATE_MASK) | 1
        while (low & ~high & _QUARTER) != 0:
            code = (code & _HALF) | ((code << 1) & (_STATE_MASK >> 1)) | reader.read()
            low = (low << 1) ^ _HALF
            high = ((high ^ _HALF) << 1) | _HALF | 1
        out[i] = s
        model.update(s)
    return out


# ---------------------------------------------------------------------------
# guidance image coding

GUIDANCE_FACTOR = 4


def pool_guidance(image: np.ndarray, factor: int = GUIDANCE_FACTOR) -> np.ndarray:
    """Per-channel non-overlapping average pooling of a (C, H, W) image."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3:
        raise ParameterError(f"guidance image must be (C, H, W), got {img.shape}")
    c, h, w = img.shape
    if h % factor or w % factor:
        raise ParameterError(f"image {h}x{w} not divisible by pooling factor {factor}")
    return img.reshape(c, h // factor, factor, w // factor, factor).mean(axis=(2, 4))


def compress_guidance_image(image: np.ndarray, spec: QuantizerSpec,
                            factor: int = GUIDANCE_FACTOR) -> tuple[bytes, np.ndarray]:
    """Pool, quantize and entropy-code the guidance image.

    Returns the payload and the decoded reference the decompressor will see
    (so both ends guide against identical values). Symbols are emitted in
    channel-major C order.
    """
    pooled = pool_guidance(image, factor)
    idx = quantize(pooled, spec)
    payload = range_encode(idx.ravel(), RangeModel(spec.levels))
    return payload, dequantize(idx, spec)


def decompress_guidance_payload(payload: bytes, shape: tuple, spec: QuantizerSpec) -> np.ndarray:
    """Recover the decoded guidance reference from its payload."""
    c, h, w = shape
    idx = range_decode(payload, c * h * w, RangeModel(spec.levels))
    return dequantize(idx.reshape(c, h, w), spec)
