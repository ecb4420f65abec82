"""Sampling-time guidance.

Two signals steer each denoising step: a classifier-free mix of the
conditional and unconditional noise predictions, and a compression term
that pulls the running estimate of the clean latent toward the stored
low-resolution guidance image. The compression term is computed as a true
gradient through the decode-and-pool proxy and then folded into the noise
prediction, which is algebraically identical to perturbing the posterior
mean directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffusion import NoiseSchedule, predict_x0
from .errors import ParameterError
from .network import NULL_CONDITION, DenoiserNet, LatentCodec, LatentStats, predict_noise
from .tensor import (Tensor, absolute, add, avg_pool2d, backward, no_grad, scale,
                     sub, tensor_sum)


@dataclass(frozen=True)
class GuidanceConfig:
    """Strengths of the two guidance signals."""

    cfg_scale: float = 0.95
    comp_scale: float = 0.0

    def __post_init__(self):
        if self.cfg_scale < 0:
            raise ParameterError(f"cfg_scale must be >= 0, got {self.cfg_scale}")
        if self.comp_scale < 0:
            raise ParameterError(f"comp_scale must be >= 0, got {self.comp_scale}")


class GuidanceProxy:
    """Differentiable map from a standardized latent to the guidance-image domain."""

    def __init__(self, codec: LatentCodec, stats: LatentStats, factor: int = 4):
        self.codec = codec
        self.stats = stats
        self.factor = int(factor)

    def __call__(self, x0: Tensor) -> Tensor:
        img = self.codec.decode_linear(self.stats.unstandardize_t(x0))
        return avg_pool2d(img, self.factor)


def _as_array(values) -> np.ndarray:
    return values.data if isinstance(values, Tensor) else np.asarray(values, dtype=float)


def cfg_combine(eps_uncond: Tensor, eps_cond: Tensor, cfg_scale: float) -> Tensor:
    """eps_u + s * (eps_c - eps_u); the endpoints return their input unchanged."""
    if cfg_scale == 0.0:
        return eps_uncond
    if cfg_scale == 1.0:
        return eps_cond
    return add(eps_uncond, scale(sub(eps_cond, eps_uncond), cfg_scale))


def guidance_loss(proxy: GuidanceProxy, x0, reference) -> float:
    """Sum of absolute deviations between proxied x0 and the reference."""
    with no_grad():
        x0_t = x0 if isinstance(x0, Tensor) else Tensor(x0)
        g = proxy(x0_t)
    return float(np.abs(g.data - _as_array(reference)).sum())


def compression_gradient(proxy: GuidanceProxy, schedule: NoiseSchedule, z_t, t: int,
                         eps_hat, reference, eps_fn=None) -> np.ndarray:
    """d/dz_t of the L1 gap between the proxied clean estimate and the reference.

    By default the noise prediction is held constant, so the gradient flows
    only through the closed-form clean-latent estimate. Passing ``eps_fn``
    (a callable (z, t) -> eps tensor) re-evaluates the predictor inside the
    graph and differentiates through it as well.
    """
    z_var = Tensor(_as_array(z_t).copy(), requires_grad=True)
    if eps_fn is None:
        eps = Tensor(_as_array(eps_hat))
    else:
        eps = eps_fn(z_var, t)
    x0 = predict_x0(schedule, z_var, t, eps)
    diff = sub(proxy(x0), Tensor(_as_array(reference)))
    backward(tensor_sum(absolute(diff)))
    return np.array(z_var.grad)


def perturb_mean(mu: Tensor, schedule: NoiseSchedule, t: int, grad: np.ndarray,
                 comp_scale: float) -> Tensor:
    """Shift a posterior mean downhill: mu - comp_scale * sigma_t^2 * grad."""
    if comp_scale == 0.0:
        return mu
    schedule.check_timestep(t)
    sigma2 = float(schedule.sigma[t - 1]) ** 2
    return sub(mu, scale(Tensor(_as_array(grad)), comp_scale * sigma2))


def fold_gradient_into_eps(eps: Tensor, schedule: NoiseSchedule, t: int,
                           grad: np.ndarray, comp_scale: float) -> Tensor:
    """Absorb the mean perturbation into the noise prediction.

    Substituting eps_eff into the posterior-mean formula reproduces
    mu - comp_scale * sigma_t^2 * grad exactly, so downstream samplers need
    no special casing.
    """
    if comp_scale == 0.0:
        return eps
    schedule.check_timestep(t)
    i = t - 1
    sigma2 = float(schedule.sigma[i]) ** 2
    coef = (comp_scale * sigma2 * np.sqrt(schedule.alpha[i])
            * np.sqrt(1.0 - schedule.alpha_bar[i]) / schedule.beta[i])
    return add(eps, scale(Tensor(_as_array(grad)), coef))


def guided_denoise_fn(net: DenoiserNet, schedule: NoiseSchedule,
                      guidance: GuidanceConfig, condition, proxy: GuidanceProxy,
                      reference, grad_through_denoiser: bool = False):
    """Build the denoise callback a sampling loop consumes.

    With comp_scale == 0 the returned function performs no compression-term
    work at all, so guided and unguided sampling are bit-identical there.
    """
    reference = _as_array(reference)

    def mixed_eps(z_t: Tensor, t: int) -> Tensor:
        if guidance.cfg_scale == 0.0:
            return predict_noise(net, z_t, t, NULL_CONDITION)
        if guidance.cfg_scale == 1.0:
            return predict_noise(net, z_t, t, condition)
        eps_u = predict_noise(net, z_t, t, NULL_CONDITION)
        eps_c = predict_noise(net, z_t, t, condition)
        return cfg_combine(eps_u, eps_c, guidance.cfg_scale)

    def denoise(z_t: Tensor, t: int) -> Tensor:
        with no_grad():
            eps = mixed_eps(z_t, t)
        if guidance.comp_scale == 0.0:
            return eps
        eps_fn = mixed_eps if grad_through_denoiser else None
        grad = compression_gradient(proxy, schedule, z_t, t, eps, reference,
                                    eps_fn=eps_fn)
        return fold_gradient_into_eps(eps, schedule, t, grad, guidance.comp_scale)

    return denoise
