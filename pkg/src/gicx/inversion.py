"""Per-image embedding inversion against a frozen checkpoint.

Compression stores no pixels for the fine structure; it stores a small
matrix of embedding vectors found by gradient descent on the denoising
objective, with the network held fixed. Quantization runs inside the loop
(straight-through) so the optimizer sees the same rounding the bitstream
will apply.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .coding import QuantizerSpec, dequantize, quantize, spec_for_range
from .diffusion import q_sample
from .errors import ParameterError
from .network import Checkpoint, predict_noise
from .tensor import (Adam, Tensor, backward, mul, no_grad, straight_through, sub,
                     tensor_mean)


@dataclass
class EmbeddingMatrix:
    """A (tokens, dim) stack of embedding vectors conditioning the denoiser."""

    values: Tensor
    quantized: bool = False

    @property
    def tokens(self) -> int:
        return self.values.data.shape[0]

    @property
    def dim(self) -> int:
        return self.values.data.shape[1]


@dataclass(frozen=True)
class InversionConfig:
    steps: int = 600
    lr: float = 1e-2
    tokens: int = 8
    quantize_in_loop: bool = True
    quantizer_levels: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.lr <= 0:
            raise ParameterError(f"lr must be positive, got {self.lr}")
        if self.tokens < 1:
            raise ParameterError(f"tokens must be >= 1, got {self.tokens}")
        if self.quantizer_levels < 2:
            raise ParameterError(
                f"quantizer_levels must be >= 2, got {self.quantizer_levels}"
            )


def straight_through_quantize(e: Tensor, spec: QuantizerSpec) -> Tensor:
    """Forward: rounded values. Backward: identity, so gradients reach e."""
    rounded = dequantize(quantize(e.data, spec), spec)
    return straight_through(e, rounded)


@dataclass
class InversionResult:
    embedding: EmbeddingMatrix
    indices: np.ndarray
    quantizer: QuantizerSpec
    log: list
    raw: np.ndarray


def invert_embedding(ckpt: Checkpoint, image: np.ndarray,
                     config: InversionConfig) -> InversionResult:
    """Fit an embedding for one image by denoising-MSE descent.

    Network and codec weights are frozen for the duration (and restored to
    their previous trainability afterwards); the embedding is the only
    optimized quantity.
    """
    net, codec = ckpt.net, ckpt.codec
    schedule = ckpt.schedule()
    frozen = net.parameters() + codec.parameters()
    prior_flags = [p.requires_grad for p in frozen]
    for p in frozen:
        p.requires_grad = False
    try:
        rng = np.random.default_rng(config.seed)
        with no_grad():
            z0 = ckpt.stats.standardize(codec.encode(Tensor(image)).data)
        init_std = ckpt.cond_input_std if ckpt.cond_input_std > 0 else 1.0
        e = Tensor(rng.normal(0.0, init_std, (config.tokens, net.config.cond_dim)),
                   requires_grad=True)
        opt = Adam([e], lr=config.lr)
        log = []
        for step in range(config.steps):
            t = int(rng.integers(1, schedule.steps + 1))
            noise = rng.standard_normal(z0.shape)
            z_t = q_sample(schedule, Tensor(z0), t, Tensor(noise))
            if config.quantize_in_loop:
                spec = spec_for_range(float(e.data.min()), float(e.data.max()),
                                      config.quantizer_levels)
                e_in = straight_through_quantize(e, spec)
            else:
                e_in = e
            eps_hat = predict_noise(net, z_t, t, e_in)
            diff = sub(eps_hat, Tensor(noise))
            loss = tensor_mean(mul(diff, diff))
            backward(loss)
            opt.step()
            log.append({"step": step, "t": t, "loss": float(loss.data[0])})

        spec = spec_for_range(float(e.data.min()), float(e.data.max()),
                              config.quantizer_levels)
        indices = quantize(e.data, spec)
        e_hat = dequantize(indices, spec)
        # log one evaluation of the final quantized embedding
        t = int(rng.integers(1, schedule.steps + 1))
        noise = rng.standard_normal(z0.shape)
        with no_grad():
            z_t = q_sample(schedule, Tensor(z0), t, Tensor(noise))
            eps_hat = predict_noise(net, z_t, t, Tensor(e_hat))
        final_loss = float(np.mean((eps_hat.data - noise) ** 2))
        log.append({"step": config.steps, "t": t, "loss": final_loss})
        embedding = EmbeddingMatrix(values=Tensor(e_hat), quantized=True)
        return InversionResult(embedding=embedding, indices=indices, quantizer=spec,
                               log=log, raw=e.data.copy())
    finally:
        for p, flag in zip(frozen, prior_flags):
            p.requires_grad = flag


def write_loss_log(path, log) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "t", "loss"])
        for row in log:
            writer.writerow([row["step"], row["t"], f"{row['loss']:.8f}"])


@dataclass
class UtilityReport:
    mean_a: float
    mean_b: float
    relative_gap: float
    passed: bool
    trials: int
    high_variance: bool


def embedding_utility_check(ckpt: Checkpoint, image: np.ndarray, embedding_a,
                            embedding_b, *, trials: int = 256, seed: int = 0,
                            threshold: float = 0.05) -> UtilityReport:
    """Paired Monte Carlo comparison of two embeddings on one image.

    Both embeddings are scored on identical (t, noise) draws, so the gap
    estimate is low-variance. ``relative_gap`` is how much embedding A
    improves on B, as a fraction of B's loss; ``passed`` means A wins by at
    least ``threshold``. Few trials set the high_variance flag.
    """
    if trials < 1:
        raise ParameterError(f"trials must be >= 1, got {trials}")
    net, codec = ckpt.net, ckpt.codec
    schedule = ckpt.schedule()
    rng = np.random.default_rng(seed)
    with no_grad():
        z0 = ckpt.stats.standardize(codec.encode(Tensor(image)).data)
        losses_a, losses_b = [], []
        for _ in range(trials):
            t = int(rng.integers(1, schedule.steps + 1))
            noise = rng.standard_normal(z0.shape)
            z_t = q_sample(schedule, Tensor(z0), t, Tensor(noise))
            for emb, sink in ((embedding_a, losses_a), (embedding_b, losses_b)):
                eps_hat = predict_noise(net, z_t, t, emb)
                sink.append(float(np.mean((eps_hat.data - noise) ** 2)))
    mean_a = float(np.mean(losses_a))
    mean_b = float(np.mean(losses_b))
    relative_gap = (mean_b - mean_a) / mean_b if mean_b else 0.0
    return UtilityReport(mean_a=mean_a, mean_b=mean_b, relative_gap=relative_gap,
                         passed=relative_gap >= threshold, trials=trials,
                         high_variance=trials < 128)
