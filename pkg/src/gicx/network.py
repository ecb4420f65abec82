"""Conditional denoiser network, latent codec and their training loops.

The denoiser is a small three-level conv encoder-decoder. Conditioning
(timestep features plus a pooled embedding vector) enters through
per-level feature scale-and-shift. The unconditional branch adds a
reserved learned vector instead of the projected embedding; the embedding
projection itself is zero-initialized, so a network that never trains the
conditional branch is provably independent of any supplied embedding.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffusion import NoiseSchedule, make_schedule, q_sample
from .errors import ContractError, DimensionError, FormatError, ParameterError
from .tensor import (Adam, Tensor, add, backward, clamp01, conv2d, matmul, mul,
                     scale, scale_shift, silu, snapshot_bytes, snapshot_from_bytes,
                     sub, tensor_mean, upsample2x)


class NullCondition:
    """Sentinel for the unconditional branch. Use the NULL_CONDITION singleton."""

    def __repr__(self):
        return "NullCondition()"


NULL_CONDITION = NullCondition()


@dataclass(frozen=True)
class NetConfig:
    """Denoiser architecture hyperparameters."""

    latent_channels: int = 3
    widths: tuple = (32, 64, 128)
    cond_dim: int = 32
    time_dim: int = 32
    cond_hidden: int = 64
    steps: int = 200

    def __post_init__(self):
        if len(self.widths) != 3 or any(w < 1 for w in self.widths):
            raise ParameterError(f"widths must be three positive ints, got {self.widths}")
        if self.time_dim % 2:
            raise ParameterError(f"time_dim must be even, got {self.time_dim}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")


def _sinusoidal_table(steps: int, dim: int) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    angles = np.arange(1, steps + 1)[:, None] * freqs[None, :]
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


class DenoiserNet:
    """Noise predictor eps(z_t, t, condition)."""

    _FILM_SITES = 5

    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config.latent_channels
        w1, w2, w3 = config.widths
        p = {}

        def conv_param(name, c_out, c_in, k=3):
            std = np.sqrt(2.0 / (c_in * k * k))
            p[name] = Tensor(rng.normal(0.0, std, (c_out, c_in, k, k)), requires_grad=True)

        conv_param("stem", w1, c)
        conv_param("enc1", w1, w1)
        conv_param("down1", w2, w1)
        conv_param("enc2", w2, w2)
        conv_param("down2", w3, w2)
        conv_param("mid", w3, w3)
        conv_param("up2", w2, w3)
        conv_param("dec2", w2, w2)
        conv_param("up1", w1, w2)
        conv_param("dec1", w1, w1)
        conv_param("head", c, w1)

        hid = config.cond_hidden
        p["time_w"] = Tensor(rng.normal(0.0, np.sqrt(1.0 / config.time_dim),
                                        (config.time_dim, hid)), requires_grad=True)
        p["time_b"] = Tensor(np.zeros((1, hid)), requires_grad=True)
        # zero-initialized embedding projection: an untrained conditional
        # branch contributes exactly nothing, so outputs cannot depend on
        # the supplied embedding until conditional steps have trained it
        p["cond_w"] = Tensor(np.zeros((config.cond_dim, hid)), requires_grad=True)
        # reserved unconditional vector, trained on dropped-condition steps
        p["null_base"] = Tensor(np.zeros((1, hid)), requires_grad=True)
        for i, width in enumerate((w1, w2, w3, w2, w1), start=1):
            p[f"film{i}_sw"] = Tensor(np.zeros((hid, width)), requires_grad=True)
            p[f"film{i}_sb"] = Tensor(np.zeros((1, width)), requires_grad=True)
            p[f"film{i}_bw"] = Tensor(np.zeros((hid, width)), requires_grad=True)
            p[f"film{i}_bb"] = Tensor(np.zeros((1, width)), requires_grad=True)
        self.params = p
        self.time_table = _sinusoidal_table(config.steps, config.time_dim)

    def parameters(self) -> list:
        return list(self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for t in self.parameters():
            t.requires_grad = bool(flag)

    def forward(self, z: Tensor, t: int, cond_vec) -> Tensor:
        cfg = self.config
        if z.data.ndim != 3 or z.data.shape[0] != cfg.latent_channels:
            raise DimensionError(
                f"denoiser expects ({cfg.latent_channels}, H, W) input, got {z.data.shape}"
            )
        _, h, w = z.data.shape
        if h % 4 or w % 4 or h < 4 or w < 4:
            raise DimensionError(f"denoiser input dims must be multiples of 4, got {h}x{w}")
        t = int(t)
        if not 1 <= t <= cfg.steps:
            raise ParameterError(f"timestep {t} outside 1..{cfg.steps}")
        p = self.params

        tf = Tensor(self.time_table[t - 1 : t])
        pre = add(add(matmul(tf, p["time_w"]), p["time_b"]), p["null_base"])
        if cond_vec is not None:
            pre = add(pre, matmul(cond_vec, p["cond_w"]))
        hcond = silu(pre)

        def film(x, i):
            s = matmul(hcond, p[f"film{i}_sw"]) + p[f"film{i}_sb"]
            b = matmul(hcond, p[f"film{i}_bw"]) + p[f"film{i}_bb"]
            return scale_shift(x, s, b)

        x0 = conv2d(z, p["stem"], 1, 1)
        x1 = silu(film(conv2d(x0, p["enc1"], 1, 1), 1))
        d1 = conv2d(x1, p["down1"], 2, 1)
        x2 = silu(film(conv2d(d1, p["enc2"], 1, 1), 2))
        d2 = conv2d(x2, p["down2"], 2, 1)
        x3 = silu(film(conv2d(d2, p["mid"], 1, 1), 3))
        u2 = conv2d(upsample2x(x3), p["up2"], 1, 1)
        y2 = silu(film(conv2d(add(u2, x2), p["dec2"], 1, 1), 4))
        u1 = conv2d(upsample2x(y2), p["up1"], 1, 1)
        y1 = silu(film(conv2d(add(u1, x1), p["dec1"], 1, 1), 5))
        return conv2d(y1, p["head"], 1, 1)


def pool_condition(values: Tensor) -> Tensor:
    """Mean over embedding tokens: (K, N) -> (1, N), differentiable."""
    k = values.data.shape[0]
    return matmul(Tensor(np.full((1, k), 1.0 / k)), values)


def predict_noise(net: DenoiserNet, z_t: Tensor, t: int, condition) -> Tensor:
    """Evaluate the denoiser under an embedding or the null condition.

    ``condition`` may be the NULL_CONDITION sentinel (or None), a (K, N)
    tensor of embedding vectors, or any object carrying one as ``.values``.
    """
    if condition is None or isinstance(condition, NullCondition):
        return net.forward(z_t, t, None)
    values = getattr(condition, "values", condition)
    if not isinstance(values, Tensor):
        values = Tensor(values)
    if values.data.ndim != 2 or values.data.shape[1] != net.config.cond_dim:
        raise DimensionError(
            f"condition must be (K, {net.config.cond_dim}), got {values.data.shape}"
        )
    return net.forward(z_t, t, pool_condition(values))


# ---------------------------------------------------------------------------
# latent codec


class LatentCodec:
    """Image <-> latent transform: identity, or a small stride-2 autoencoder."""

    MODES = ("identity", "autoencoder")

    def __init__(self, mode: str = "identity", latent_channels: int = 8,
                 hidden: int = 16, seed: int = 0):
        if mode not in self.MODES:
            raise ParameterError(f"unknown codec mode {mode!r}, expected one of {self.MODES}")
        self.mode = mode
        self.hidden = int(hidden)
        self.params = {}
        if mode == "identity":
            self.latent_channels = 3
            return
        self.latent_channels = int(latent_channels)
        rng = np.random.default_rng(seed)
        p = self.params

        def conv_param(name, c_out, c_in):
            std = np.sqrt(2.0 / (c_in * 9))
            p[name] = Tensor(rng.normal(0.0, std, (c_out, c_in, 3, 3)), requires_grad=True)

        conv_param("enc1", self.hidden, 3)
        conv_param("enc2", self.latent_channels, self.hidden)
        conv_param("dec1", self.hidden, self.latent_channels)
        conv_param("dec2", self.hidden, self.hidden)
        conv_param("dec3", 3, self.hidden)

    def parameters(self) -> list:
        return list(self.params.values())

    def set_trainable(self, flag: bool) -> None:
        for t in self.parameters():
            t.requires_grad = bool(flag)

    def latent_shape(self, h: int, w: int) -> tuple:
        if self.mode == "identity":
            return (3, h, w)
        return (self.latent_channels, h // 4, w // 4)

    def encode(self, x: Tensor) -> Tensor:
        if self.mode == "identity":
            return x
        if x.data.ndim != 3 or x.data.shape[0] != 3:
            raise DimensionError(f"codec expects a (3, H, W) image, got {x.data.shape}")
        _, h, w = x.data.shape
        if h % 4 or w % 4:
            raise ParameterError(
                f"autoencoder mode needs H, W divisible by 4, got {h}x{w}"
            )
        p = self.params
        e = silu(conv2d(x, p["enc1"], 2, 1))
        return conv2d(e, p["enc2"], 2, 1)

    def decode_linear(self, z: Tensor) -> Tensor:
        """Decode without the output clamp (differentiable everywhere)."""
        if self.mode == "identity":
            return z
        p = self.params
        d = silu(conv2d(z, p["dec1"], 1, 1))
        d = silu(conv2d(upsample2x(d), p["dec2"], 1, 1))
        return conv2d(upsample2x(d), p["dec3"], 1, 1)

    def decode(self, z: Tensor) -> Tensor:
        if self.mode == "identity":
            return z
        return clamp01(self.decode_linear(z))


def encode_latent(codec: LatentCodec, x: Tensor) -> Tensor:
    return codec.encode(x)


def decode_latent(codec: LatentCodec, z: Tensor) -> Tensor:
    return codec.decode(z)


def train_autoencoder(codec: LatentCodec, images: np.ndarray, *, steps: int = 500,
                      lr: float = 2e-3, batch_size: int = 4, seed: int = 0) -> list:
    """Fit the autoencoder by reconstruction MSE; returns per-step losses."""
    if codec.mode != "autoencoder":
        raise ContractError("train_autoencoder requires a codec in autoencoder mode")
    rng = np.random.default_rng(seed)
    params = codec.parameters()
    opt = Adam(params, lr=lr)
    losses = []
    n = len(images)
    for _ in range(steps):
        idx = rng.integers(0, n, batch_size)
        total = None
        for i in idx:
            x = Tensor(images[i])
            recon = codec.decode_linear(codec.encode(x))
            diff = sub(recon, x)
            term = tensor_mean(mul(diff, diff))
            total = term if total is None else add(total, term)
        loss = scale(total, 1.0 / batch_size)
        backward(loss)
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()
        losses.append(float(loss.data[0]))
    return losses


# ---------------------------------------------------------------------------
# latent standardization


@dataclass
class LatentStats:
    """Per-channel moments used to whiten latents for the diffusion chain."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_latents(cls, latents) -> "LatentStats":
        stack = np.stack([np.asarray(z) for z in latents])
        mean = stack.mean(axis=(0, 2, 3))
        std = np.maximum(stack.std(axis=(0, 2, 3)), 1e-6)
        return cls(mean=mean, std=std)

    def standardize(self, z: np.ndarray) -> np.ndarray:
        return (z - self.mean[:, None, None]) / self.std[:, None, None]

    def unstandardize(self, z: np.ndarray) -> np.ndarray:
        return z * self.std[:, None, None] + self.mean[:, None, None]

    def unstandardize_t(self, z: Tensor) -> Tensor:
        # scale_shift computes x*(1+s)+b, so s = std-1 gives x*std+mean
        return scale_shift(z, Tensor(self.std - 1.0), Tensor(self.mean))


# ---------------------------------------------------------------------------
# denoiser training


def bernoulli(rng: np.random.Generator, p: float) -> bool:
    """One biased coin flip; factored out so its bias is directly testable."""
    return bool(rng.random() < p)


@dataclass
class TrainLog:
    header: dict
    losses: list = field(default_factory=list)


@dataclass
class TrainResult:
    log: TrainLog
    bank: list
    stats: LatentStats
    cond_input_std: float


def train_denoiser(net: DenoiserNet, codec: LatentCodec, images: np.ndarray,
                   schedule: NoiseSchedule, *, p_uncond: float = 0.1,
                   steps: int = 1500, batch_size: int = 4, lr: float = 2e-3,
                   embed_tokens: int = 8, seed: int = 0,
                   stats: LatentStats = None) -> TrainResult:
    """Denoising-MSE training with per-image learned embeddings.

    Each image owns a jointly trained (K, N) embedding; with probability
    ``p_uncond`` a step trains the unconditional branch instead. Gradients
    for parameters a step did not touch are filled with zeros before the
    optimizer update.
    """
    if not 0.0 <= p_uncond <= 1.0:
        raise ParameterError(f"p_uncond must lie in [0, 1], got {p_uncond}")
    if schedule.steps != net.config.steps:
        raise ContractError(
            f"schedule has {schedule.steps} steps but the net was built for {net.config.steps}"
        )
    rng = np.random.default_rng(seed)
    n = len(images)
    latents = [codec.encode(Tensor(img)).data for img in images]
    if stats is None:
        stats = LatentStats.from_latents(latents)
    z0s = [stats.standardize(z) for z in latents]

    k, ndim = int(embed_tokens), net.config.cond_dim
    bank = [Tensor(rng.normal(0.0, 1.0, (k, ndim)), requires_grad=True) for _ in range(n)]
    params = net.parameters() + bank
    opt = Adam(params, lr=lr)
    log = TrainLog(header={"p_uncond": p_uncond, "steps": steps, "lr": lr,
                           "batch_size": batch_size, "seed": seed,
                           "embed_tokens": k, "embed_dim": ndim})
    for _ in range(steps):
        idx = rng.integers(0, n, batch_size)
        total = None
        for i in idx:
            t = int(rng.integers(1, schedule.steps + 1))
            noise = rng.standard_normal(z0s[i].shape)
            z_t = q_sample(schedule, Tensor(z0s[i]), t, Tensor(noise))
            cond = None if bernoulli(rng, p_uncond) else bank[i]
            eps_hat = predict_noise(net, z_t, t, cond)
            diff = sub(eps_hat, Tensor(noise))
            term = tensor_mean(mul(diff, diff))
            total = term if total is None else add(total, term)
        loss = scale(total, 1.0 / batch_size)
        backward(loss)
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)
        opt.step()
        log.losses.append(float(loss.data[0]))
    cond_input_std = float(np.std(np.concatenate([b.data.ravel() for b in bank])))
    return TrainResult(log=log, bank=bank, stats=stats, cond_input_std=cond_input_std)


# ---------------------------------------------------------------------------
# checkpoints

CHECKPOINT_MAGIC = b"GCKP"
CHECKPOINT_VERSION = 1


@dataclass
class Checkpoint:
    """Everything decompression needs besides the bitstream itself."""

    net: DenoiserNet
    codec: LatentCodec
    schedule_kind: str
    beta_start: float
    beta_end: float
    stats: LatentStats
    cond_input_std: float

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.schedule_kind, self.net.config.steps,
                             self.beta_start, self.beta_end)

    def _config_json(self) -> bytes:
        cfg = {
            "net": {**asdict(self.net.config), "widths": list(self.net.config.widths)},
            "codec": {"mode": self.codec.mode, "hidden": self.codec.hidden,
                      "latent_channels": self.codec.latent_channels},
            "schedule": {"kind": self.schedule_kind, "beta_start": self.beta_start,
                         "beta_end": self.beta_end},
            "stats": {"mean": self.stats.mean.tolist(), "std": self.stats.std.tolist()},
            "cond_input_std": self.cond_input_std,
        }
        return json.dumps(cfg, sort_keys=True).encode("utf-8")

    def _tensor_table(self) -> list:
        named = [("net." + k, v) for k, v in self.net.params.items()]
        named += [("codec." + k, v) for k, v in self.codec.params.items()]
        return sorted(named, key=lambda kv: kv[0])

    def ident(self) -> bytes:
        """16-byte digest of the configuration and every parameter tensor."""
        h = hashlib.sha256(self._config_json())
        for name, t in self._tensor_table():
            h.update(name.encode("utf-8"))
            h.update(snapshot_bytes(t))
        return h.digest()[:16]

    def save(self, path) -> None:
        cfg = self._config_json()
        table = self._tensor_table()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(cfg)))
            fh.write(cfg)
            fh.write(struct.pack("<I", len(table)))
            for name, t in table:
                blob = snapshot_bytes(t)
                nb = name.encode("utf-8")
                fh.write(struct.pack("<H", len(nb)))
                fh.write(nb)
                fh.write(struct.pack("<Q", len(blob)))
                fh.write(blob)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != CHECKPOINT_MAGIC:
            raise FormatError(f"checkpoint: bad magic {data[:4]!r}")
        version, cfg_len = struct.unpack_from("<HI", data, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"checkpoint: unsupported version {version}")
        offset = 10
        try:
            cfg = json.loads(data[offset : offset + cfg_len])
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError("checkpoint: corrupt config block") from exc
        offset += cfg_len
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        tensors = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (blob_len,) = struct.unpack_from("<Q", data, offset)
            offset += 8
            tensors[name] = snapshot_from_bytes(data[offset : offset + blob_len])
            offset += blob_len

        net_cfg = dict(cfg["net"])
        net_cfg["widths"] = tuple(net_cfg["widths"])
        net = DenoiserNet(NetConfig(**net_cfg), seed=0)
        codec = LatentCodec(mode=cfg["codec"]["mode"],
                            latent_channels=cfg["codec"]["latent_channels"],
                            hidden=cfg["codec"]["hidden"], seed=0)
        for prefix, module in (("net.", net), ("codec.", codec)):
            for key, tensor in module.params.items():
                full = prefix + key
                if full not in tensors:
                    raise FormatError(f"checkpoint: missing tensor {full!r}")
                if tensors[full].shape != tensor.data.shape:
                    raise FormatError(
                        f"checkpoint: tensor {full!r} has shape {tensors[full].shape}, "
                        f"expected {tensor.data.shape}"
                    )
                tensor.data = tensors[full]
        stats = LatentStats(mean=np.asarray(cfg["stats"]["mean"], dtype=np.float64),
                            std=np.asarray(cfg["stats"]["std"], dtype=np.float64))
        return cls(net=net, codec=codec, schedule_kind=cfg["schedule"]["kind"],
                   beta_start=cfg["schedule"]["beta_start"],
                   beta_end=cfg["schedule"]["beta_end"], stats=stats,
                   cond_input_std=cfg["cond_input_std"])
