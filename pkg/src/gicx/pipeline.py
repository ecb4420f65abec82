"""End-to-end orchestration: train, compress to bytes, decompress to pixels.

The bitstream stores exactly two entropy-coded payloads per image: the
quantized embedding indices and the quantized low-resolution guidance
image. Everything else a decoder needs rides in the fixed-size header,
plus the checkpoint file whose identity the header pins.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coding import (GUIDANCE_FACTOR, QuantizerSpec, RangeModel,
                     compress_guidance_image, decompress_guidance_payload,
                     dequantize, range_decode, range_encode)
from .config import RunConfig, make_config
from .container import (Bitstream, BitstreamHeader, bits_per_pixel, pack_bitstream,
                        unpack_bitstream)
from .diffusion import SamplerConfig, make_schedule, sample_loop
from .errors import ContractError, DimensionError, FormatError, ParameterError
from .guidance import GuidanceConfig, GuidanceProxy, guided_denoise_fn
from .inversion import EmbeddingMatrix, InversionConfig, invert_embedding
from .network import (Checkpoint, DenoiserNet, LatentCodec, NetConfig,
                      train_autoencoder, train_denoiser)
from .tensor import Tensor, no_grad


def validate_image(image) -> np.ndarray:
    """Check an image is (3, H, W) float in [0, 1] with H, W multiples of 4."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"expected a (3, H, W) image, got shape {arr.shape}")
    h, w = arr.shape[1], arr.shape[2]
    if h % GUIDANCE_FACTOR or w % GUIDANCE_FACTOR:
        raise ParameterError(
            f"image dims must be multiples of {GUIDANCE_FACTOR}, got {h}x{w}"
        )
    if float(arr.min()) < -1e-9 or float(arr.max()) > 1.0 + 1e-9:
        raise ParameterError("pixel values must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# training


def train_checkpoint(config: RunConfig, images):
    """Train codec (if any) and denoiser; return (Checkpoint, TrainResult)."""
    images = np.stack([validate_image(img) for img in images])
    schedule = make_schedule(config.schedule_kind, config.schedule_steps,
                             config.beta_start, config.beta_end)
    if config.codec_mode == "autoencoder":
        codec = LatentCodec("autoencoder", latent_channels=config.latent_channels,
                            hidden=config.codec_hidden, seed=config.seed)
        train_autoencoder(codec, images, steps=config.autoencoder_steps,
                          lr=config.train_lr, batch_size=config.batch_size,
                          seed=config.seed)
        codec.set_trainable(False)
        net_channels = config.latent_channels
    else:
        codec = LatentCodec("identity")
        net_channels = 3
    net = DenoiserNet(NetConfig(latent_channels=net_channels, widths=config.widths,
                                cond_dim=config.cond_dim, time_dim=config.time_dim,
                                cond_hidden=config.cond_hidden,
                                steps=config.schedule_steps), seed=config.seed)
    result = train_denoiser(net, codec, images, schedule, p_uncond=config.p_uncond,
                            steps=config.train_steps, batch_size=config.batch_size,
                            lr=config.train_lr, embed_tokens=config.embed_tokens,
                            seed=config.seed)
    ckpt = Checkpoint(net=net, codec=codec, schedule_kind=config.schedule_kind,
                      beta_start=config.beta_start, beta_end=config.beta_end,
                      stats=result.stats, cond_input_std=result.cond_input_std)
    return ckpt, result


def inversion_from_config(config: RunConfig, seed: int = None) -> InversionConfig:
    return InversionConfig(steps=config.inversion_steps, lr=config.inversion_lr,
                           tokens=config.embed_tokens,
                           quantizer_levels=config.embed_levels,
                           seed=config.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# compression


@dataclass
class CompressResult:
    data: bytes
    header: BitstreamHeader
    embedding: EmbeddingMatrix
    x_g_hat: np.ndarray
    inversion_log: list
    breakdown: dict


def compress_image(ckpt: Checkpoint, image, *, inversion: InversionConfig,
                   guidance_levels: int = 32, comp_scale: float = 215.0,
                   cfg_scale: float = 0.95) -> CompressResult:
    """Invert an embedding, entropy-code it and the pooled guidance image."""
    image = validate_image(image)
    h, w = image.shape[1], image.shape[2]
    inv = invert_embedding(ckpt, image, inversion)

    embed_model = RangeModel(inversion.quantizer_levels)
    embed_payload = range_encode(inv.indices.ravel(), embed_model)
    guidance_spec = QuantizerSpec(0.0, 1.0, guidance_levels)
    guidance_payload, x_g_hat = compress_guidance_image(image, guidance_spec,
                                                        GUIDANCE_FACTOR)
    header = BitstreamHeader(
        height=h, width=w, codec_mode=ckpt.codec.mode,
        schedule_kind=ckpt.schedule_kind, schedule_steps=ckpt.net.config.steps,
        beta_start=ckpt.beta_start, beta_end=ckpt.beta_end,
        embed_tokens=inv.indices.shape[0], embed_dim=inv.indices.shape[1],
        embed_quantizer=inv.quantizer, guidance_quantizer=guidance_spec,
        guidance_height=h // GUIDANCE_FACTOR, guidance_width=w // GUIDANCE_FACTOR,
        comp_scale=comp_scale, cfg_scale=cfg_scale, checkpoint_id=ckpt.ident(),
    )
    data = pack_bitstream(Bitstream(header, embed_payload, guidance_payload))
    breakdown = {
        "embedding_symbols": int(inv.indices.size),
        "embedding_bytes": len(embed_payload),
        "guidance_symbols": int(x_g_hat.size),
        "guidance_bytes": len(guidance_payload),
        "container_bytes": len(data) - len(embed_payload) - len(guidance_payload),
        "total_bytes": len(data),
        "bpp": bits_per_pixel(len(data), h, w),
    }
    return CompressResult(data=data, header=header, embedding=inv.embedding,
                          x_g_hat=x_g_hat, inversion_log=inv.log,
                          breakdown=breakdown)


# ---------------------------------------------------------------------------
# decompression


@dataclass
class DecompressResult:
    images: list
    header: BitstreamHeader


def decompress_stream(ckpt: Checkpoint, data: bytes, *, samples: int = 1,
                      seed: int = 0, num_steps: int = 20, eta: float = 1.0,
                      comp_scale: float = None,
                      cfg_scale: float = None) -> DecompressResult:
    """Reconstruct one or more samples from a bitstream and its checkpoint.

    Guidance strengths default to the values recorded at compress time.
    Each sample k runs the sampler with seed + k, so draws are distinct but
    individually reproducible.
    """
    if samples < 1:
        raise ParameterError(f"samples must be >= 1, got {samples}")
    stream = unpack_bitstream(data)
    header = stream.header
    if header.checkpoint_id != ckpt.ident():
        raise FormatError(
            "field 'checkpoint id': bitstream was produced by a different checkpoint"
        )
    if header.embed_dim != ckpt.net.config.cond_dim:
        raise FormatError(
            f"field 'embed dim': stream carries {header.embed_dim}, "
            f"checkpoint expects {ckpt.net.config.cond_dim}"
        )

    embed_model = RangeModel(header.embed_quantizer.levels)
    count = header.embed_tokens * header.embed_dim
    indices = range_decode(stream.embed_payload, count, embed_model)
    indices = indices.reshape(header.embed_tokens, header.embed_dim)
    embedding = EmbeddingMatrix(Tensor(dequantize(indices, header.embed_quantizer)),
                                quantized=True)
    x_g_hat = decompress_guidance_payload(
        stream.guidance_payload,
        (3, header.guidance_height, header.guidance_width),
        header.guidance_quantizer,
    )

    schedule = ckpt.schedule()
    guidance = GuidanceConfig(
        cfg_scale=header.cfg_scale if cfg_scale is None else cfg_scale,
        comp_scale=header.comp_scale if comp_scale is None else comp_scale,
    )
    proxy = GuidanceProxy(ckpt.codec, ckpt.stats, GUIDANCE_FACTOR)
    denoise = guided_denoise_fn(ckpt.net, schedule, guidance, embedding, proxy,
                                x_g_hat)
    latent_shape = ckpt.codec.latent_shape(header.height, header.width)
    images = []
    for k in range(samples):
        sampler = SamplerConfig(num_steps=num_steps, eta=eta, seed=seed + k)
        z = sample_loop(schedule, denoise, sampler, latent_shape)
        with no_grad():
            x = ckpt.codec.decode(ckpt.stats.unstandardize_t(z))
        images.append(np.clip(x.data, 0.0, 1.0))
    return DecompressResult(images=images, header=header)


# ---------------------------------------------------------------------------
# estimator facade


class GenerativeImageCodec:
    """fit/transform face over the full pipeline.

    fit(X) trains on an (n, 3, H, W) image stack; transform(X) returns one
    bitstream (bytes) per image; inverse_transform(streams) reconstructs an
    image stack. Compatible with duck-typed estimator tooling via
    get_params/set_params.
    """

    def __init__(self, preset: str = "toy", seed: int = 0, overrides: dict = None):
        self.preset = preset
        self.seed = seed
        self.overrides = overrides

    def get_params(self, deep: bool = True) -> dict:
        return {"preset": self.preset, "seed": self.seed, "overrides": self.overrides}

    def set_params(self, **params) -> "GenerativeImageCodec":
        valid = self.get_params()
        for key, value in params.items():
            if key not in valid:
                raise ParameterError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def _config(self) -> RunConfig:
        overrides = dict(self.overrides or {})
        overrides["seed"] = self.seed
        return make_config(self.preset, **overrides)

    def fit(self, X, y=None) -> "GenerativeImageCodec":
        config = self._config()
        self.checkpoint_, self.train_result_ = train_checkpoint(config, X)
        self.config_ = config
        return self

    def _require_fitted(self) -> None:
        if not hasattr(self, "checkpoint_"):
            raise ContractError("codec is not fitted; call fit(X) first")

    def transform(self, X) -> list:
        self._require_fitted()
        c = self.config_
        streams = []
        for i, image in enumerate(X):
            inv = inversion_from_config(c, seed=c.seed + i)
            result = compress_image(self.checkpoint_, image, inversion=inv,
                                    guidance_levels=c.guidance_levels,
                                    comp_scale=c.comp_scale, cfg_scale=c.cfg_scale)
            streams.append(result.data)
        return streams

    def inverse_transform(self, streams) -> np.ndarray:
        self._require_fitted()
        c = self.config_
        images = []
        for data in streams:
            out = decompress_stream(self.checkpoint_, data, samples=1, seed=c.seed,
                                    num_steps=c.sampler_steps, eta=c.eta)
            images.append(out.images[0])
        return np.stack(images)

    def fit_transform(self, X, y=None) -> list:
        return self.fit(X).transform(X)
