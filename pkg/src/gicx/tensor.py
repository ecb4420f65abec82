"""Reverse-mode automatic differentiation on float64 numpy arrays.

The engine is deliberately small: dense tensors, a define-by-run graph
(each result remembers its parents and a vector-Jacobian closure), and the
handful of primitives the compression pipeline needs. ``backward`` replays
the graph once in reverse topological order and then consumes it, so a
fresh forward pass is required per gradient.

Broadcasting is restricted to scalar-vs-tensor on the elementwise ops;
everything else demands exact shapes. All public operations keep data
finite for finite inputs.
"""

from __future__ import annotations

import struct
from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError, FormatError, NumericError, ParameterError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float64 array plus optional gradient bookkeeping.

    ``grad`` is populated by ``backward`` and holds an array of the same
    shape as ``data``. Results of operations on tensors that require
    gradients carry the recorded node links until ``backward`` consumes
    them.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def detach(self) -> "Tensor":
        """A view of the same data with no graph attached."""
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; the module-level functions are the canonical API.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __abs__(self):
        return absolute(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _node(data: np.ndarray, parents, vjp) -> Tensor:
    """Wrap an op result, recording graph links only when needed."""
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise DimensionError(
            f"{op}: shapes {a.data.shape} and {b.data.shape} differ "
            "(only scalar-vs-tensor broadcast is supported)"
        )


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data + c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "add")
    return _node(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data - c, (a,), lambda g: (g,))
    _check_same_shape(a, b, "sub")
    return _node(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        return _node(a.data * c, (a,), lambda g: (g * c,))
    _check_same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar."""
    return mul(a, float(c))


def absolute(a: Tensor) -> Tensor:
    ad = a.data
    # subgradient at 0 is taken as 0 (np.sign(0) == 0)
    return _node(np.abs(ad), (a,), lambda g: (g * np.sign(ad),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x), smooth everywhere (no finite-difference kinks)."""
    x = a.data
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    out = x * sig

    def vjp(g):
        return (g * (sig * (1.0 + x * (1.0 - sig))),)

    return _node(out, (a,), vjp)


def clamp01(a: Tensor) -> Tensor:
    """Clamp into [0, 1]; gradient passes only where the input is interior."""
    ad = a.data
    inside = ((ad > 0.0) & (ad < 1.0)).astype(np.float64)
    return _node(np.clip(ad, 0.0, 1.0), (a,), lambda g: (g * inside,))


def tensor_sum(a: Tensor) -> Tensor:
    """Sum all entries into a 1-element tensor."""
    ad = a.data
    return _node(np.array([ad.sum()]), (a,), lambda g: (np.full(ad.shape, g[0]),))


def tensor_mean(a: Tensor) -> Tensor:
    return scale(tensor_sum(a), 1.0 / a.data.size)


def straight_through(a: Tensor, values: np.ndarray) -> Tensor:
    """Forward emits ``values``; backward passes the gradient to ``a`` unchanged."""
    vals = np.asarray(values, dtype=np.float64)
    if vals.shape != a.data.shape:
        raise DimensionError(
            f"straight_through: replacement shape {vals.shape} != input shape {a.data.shape}"
        )
    return _node(vals.copy(), (a,), lambda g: (g,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2:
        raise DimensionError(f"matmul: expects 2-D operands, got {ad.shape} @ {bd.shape}")
    if ad.shape[1] != bd.shape[0]:
        raise DimensionError(f"matmul: inner dimensions differ ({ad.shape} @ {bd.shape})")

    def vjp(g):
        return (g @ bd.T, ad.T @ g)

    return _node(ad @ bd, (a, b), vjp)


def scale_shift(x: Tensor, s: Tensor, b: Tensor) -> Tensor:
    """Per-channel affine modulation of a (C, H, W) map: y = x * (1 + s) + b.

    ``s`` and ``b`` are (C,) or (1, C); the +1 makes zero parameters the
    identity, which keeps freshly initialized modulation branches neutral.
    """
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"scale_shift: expects (C, H, W) input, got {xd.shape}")
    c = xd.shape[0]
    for name, t in (("scale", s), ("shift", b)):
        if t.data.size != c:
            raise DimensionError(
                f"scale_shift: {name} has {t.data.size} entries for {c} channels"
            )
    sv = s.data.reshape(c, 1, 1)
    bv = b.data.reshape(c, 1, 1)
    out = xd * (1.0 + sv) + bv

    def vjp(g):
        gx = g * (1.0 + sv)
        gs = (g * xd).sum(axis=(1, 2)).reshape(s.data.shape)
        gb = g.sum(axis=(1, 2)).reshape(b.data.shape)
        return (gx, gs, gb)

    return _node(out, (x, s, b), vjp)


# ---------------------------------------------------------------------------
# convolution and resampling


def conv2d(x: Tensor, w: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation of a (C_in, H, W) map with (C_out, C_in, k, k) kernels."""
    xd, wd = x.data, w.data
    if xd.ndim != 3:
        raise DimensionError(f"conv2d: input must be (C, H, W), got {xd.shape}")
    if wd.ndim != 4 or wd.shape[2] != wd.shape[3]:
        raise DimensionError(f"conv2d: kernel must be (C_out, C_in, k, k), got {wd.shape}")
    c_out, c_in, k, _ = wd.shape
    if k % 2 != 1:
        raise ParameterError(f"conv2d: kernel size must be odd, got {k}")
    if xd.shape[0] != c_in:
        raise DimensionError(
            f"conv2d: input has {xd.shape[0]} channels, kernel expects {c_in}"
        )
    stride = int(stride)
    padding = int(padding)
    if stride < 1:
        raise ParameterError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise ParameterError(f"conv2d: padding must be >= 0, got {padding}")
    _, h, wdt = xd.shape
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (wdt + 2 * padding - k) // stride + 1
    if h_out < 1 or w_out < 1:
        raise DimensionError(
            f"conv2d: kernel {k} with padding {padding} does not fit input {h}x{wdt}"
        )

    xp = np.pad(xd, ((0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride]
    # (C_in, H', W', k, k) -> (H'*W', C_in*k*k), one row per output position
    cols = win.transpose(1, 2, 0, 3, 4).reshape(h_out * w_out, c_in * k * k)
    wmat = wd.reshape(c_out, c_in * k * k)
    out = (cols @ wmat.T).T.reshape(c_out, h_out, w_out)

    def vjp(g):
        gmat = g.reshape(c_out, h_out * w_out)
        gw = (gmat @ cols).reshape(wd.shape)
        gcols = gmat.T @ wmat
        gc = gcols.reshape(h_out, w_out, c_in, k, k).transpose(2, 0, 1, 3, 4)
        gxp = np.zeros_like(xp)
        for i in range(k):
            rows = slice(i, i + stride * (h_out - 1) + 1, stride)
            for j in range(k):
                gxp[:, rows, j : j + stride * (w_out - 1) + 1 : stride] += gc[:, :, :, i, j]
        gx = gxp[:, padding : padding + h, padding : padding + wdt]
        return (gx, gw)

    return _node(out, (x, w), vjp)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k x k average pooling of a (C, H, W) map."""
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"avg_pool2d: expects (C, H, W) input, got {xd.shape}")
    k = int(k)
    if k < 1:
        raise ParameterError(f"avg_pool2d: window must be >= 1, got {k}")
    c, h, w = xd.shape
    if h % k or w % k:
        raise DimensionError(f"avg_pool2d: {h}x{w} not divisible by window {k}")
    out = xd.reshape(c, h // k, k, w // k, k).mean(axis=(2, 4))

    def vjp(g):
        gx = np.repeat(np.repeat(g, k, axis=1), k, axis=2) / (k * k)
        return (gx,)

    return _node(out, (x,), vjp)


def upsample2x(x: Tensor) -> Tensor:
    """Nearest-neighbour 2x upsampling of a (C, H, W) map."""
    xd = x.data
    if xd.ndim != 3:
        raise DimensionError(f"upsample2x: expects (C, H, W) input, got {xd.shape}")
    c, h, w = xd.shape
    out = np.repeat(np.repeat(xd, 2, axis=1), 2, axis=2)

    def vjp(g):
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _node(out, (x,), vjp)


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Accumulate gradients of a scalar loss into every reachable tensor.

    The recorded graph is consumed: node links are cleared as they are
    visited, so each forward pass supports exactly one backward pass.
    A loss with no recorded graph is a silent no-op (all gradients zero).
    """
    if loss.data.size != 1:
        raise ContractError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return

    # reverse topological order via iterative post-order walk
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._vjp is None:
            continue
        gout = node.grad
        if gout is None:
            continue
        for parent, g in zip(node._parents, node._vjp(gout)):
            if g is None or not parent.requires_grad:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
        node._parents = ()
        node._vjp = None


def assert_finite(x, what: str = "tensor") -> None:
    """Raise NumericError if the array/tensor holds NaN or Inf."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains non-finite values")


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Adaptive-moment optimizer with bias correction.

    ``step`` consumes the gradients of every registered parameter (they are
    reset to None afterwards) and advances the shared step counter by one.
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        params = list(params)
        if not params:
            raise ParameterError("Adam: parameter list is empty")
        if lr <= 0:
            raise ParameterError(f"Adam: learning rate must be positive, got {lr}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ParameterError(f"Adam: decay coefficients must lie in [0, 1), got {beta1}, {beta2}")
        if eps <= 0:
            raise ParameterError(f"Adam: epsilon must be positive, got {eps}")
        self.params = params
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in params]
        self._v = [np.zeros_like(p.data) for p in params]

    def step(self) -> None:
        for p in self.params:
            if p.grad is None:
                raise ContractError("Adam.step: a parameter has no gradient populated")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


# ---------------------------------------------------------------------------
# tensor snapshots

SNAPSHOT_MAGIC = b"GTNS"
SNAPSHOT_VERSION = 1
_MAX_SNAPSHOT_RANK = 32


def snapshot_bytes(x) -> bytes:
    """Serialize an array (or Tensor) to the little-endian snapshot format."""
    arr = np.asarray(x.data if isinstance(x, Tensor) else x, dtype="<f8")
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    head = SNAPSHOT_MAGIC + struct.pack("<II", SNAPSHOT_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + dims + arr.tobytes(order="C")


def snapshot_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise FormatError("snapshot: truncated header")
    if buf[:4] != SNAPSHOT_MAGIC:
        raise FormatError(f"snapshot: bad magic {buf[:4]!r}, expected {SNAPSHOT_MAGIC!r}")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != SNAPSHOT_VERSION:
        raise FormatError(f"snapshot: unsupported version {version}")
    if rank > _MAX_SNAPSHOT_RANK:
        raise FormatError(f"snapshot: rank {rank} exceeds limit {_MAX_SNAPSHOT_RANK}")
    offset = 12
    if len(buf) < offset + 8 * rank:
        raise FormatError("snapshot: truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", buf, offset) if rank else ()
    offset += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = offset + 8 * count
    if len(buf) != expected:
        raise FormatError(
            f"snapshot: payload holds {len(buf) - offset} bytes, dims {dims} require {8 * count}"
        )
    data = np.frombuffer(buf, dtype="<f8", count=count, offset=offset)
    return data.reshape(dims).astype(np.float64, copy=True)


def write_snapshot(x, path) -> None:
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(x))


def read_snapshot(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return snapshot_from_bytes(fh.read())
