"""Noise schedule and samplers for the denoising diffusion process.

Timesteps are 1-indexed: t runs over 1..steps, with t=0 denoting the clean
state (cumulative signal fraction 1). Array fields are indexed [t-1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .tensor import Tensor, add, assert_finite, scale, sub


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step noise fractions of a forward diffusion chain.

    ``sigma`` holds the ancestral sampling standard deviations: the square
    root of the posterior variance (1 - abar_{t-1}) / (1 - abar_t) * beta_t,
    with the first step pinned to sqrt(beta_1).
    """

    steps: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def check_timestep(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.steps:
            raise ParameterError(f"timestep {t} outside 1..{self.steps}")
        return t

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative signal fraction, with the t=0 convention abar_0 = 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[self.check_timestep(t) - 1])


def make_schedule(kind: str = "linear", steps: int = 1000,
                  beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a noise schedule; only the linear ramp is supported."""
    if kind != "linear":
        raise ParameterError(f"unknown schedule kind {kind!r}")
    steps = int(steps)
    if steps < 1:
        raise ParameterError(f"schedule needs at least 1 step, got {steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ParameterError(
            f"beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )
    beta = np.linspace(beta_start, beta_end, steps, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    # posterior variance of the reverse chain; the first entry has no
    # predecessor, so it falls back to beta_1
    prev = np.concatenate(([1.0], alpha_bar[:-1]))
    var = (1.0 - prev) / (1.0 - alpha_bar) * beta
    var[0] = beta[0]
    return NoiseSchedule(steps=steps, beta=beta, alpha=alpha,
                         alpha_bar=alpha_bar, sigma=np.sqrt(var))


@dataclass(frozen=True)
class SamplerConfig:
    """Knobs of the reverse-process sampler."""

    num_steps: int = 100
    eta: float = 1.0
    seed: int = 0


def q_sample(schedule: NoiseSchedule, z0: Tensor, t: int, eps: Tensor) -> Tensor:
    """Diffuse a clean latent to step t with the given unit noise."""
    abar = schedule.alpha_bar_at(schedule.check_timestep(t))
    return add(scale(z0, math.sqrt(abar)), scale(eps, math.sqrt(1.0 - abar)))


def predict_x0(schedule: NoiseSchedule, z_t: Tensor, t: int, eps_hat: Tensor) -> Tensor:
    """Recover the clean-latent estimate implied by a noise prediction."""
    abar = schedule.alpha_bar_at(schedule.check_timestep(t))
    return scale(sub(z_t, scale(eps_hat, math.sqrt(1.0 - abar))), 1.0 / math.sqrt(abar))


def ddpm_posterior_mean(schedule: NoiseSchedule, z_t: Tensor, t: int,
                        eps_hat: Tensor) -> Tensor:
    """Mean of the reverse-process transition at step t."""
    t = schedule.check_timestep(t)
    beta = float(schedule.beta[t - 1])
    alpha = float(schedule.alpha[t - 1])
    abar = float(schedule.alpha_bar[t - 1])
    coef = beta / math.sqrt(1.0 - abar)
    return scale(sub(z_t, scale(eps_hat, coef)), 1.0 / math.sqrt(alpha))


def ddim_sigma(schedule: NoiseSchedule, t: int, t_prev: int, eta: float) -> float:
    """Noise level of a (possibly coarse) reverse jump t -> t_prev."""
    abar_t = schedule.alpha_bar_at(t)
    abar_p = schedule.alpha_bar_at(t_prev)
    return eta * math.sqrt((1.0 - abar_p) / (1.0 - abar_t)) * math.sqrt(1.0 - abar_t / abar_p)


def ddim_step(schedule: NoiseSchedule, z_t: Tensor, t: int, t_prev: int,
              eps_hat: Tensor, eta: float, rng: np.random.Generator) -> Tensor:
    """One reverse jump from step t to t_prev (t_prev = 0 lands on the clean state).

    eta interpolates between the deterministic rule (0, no fresh noise is
    drawn) and ancestral-equivalent stochasticity (1).
    """
    t = schedule.check_timestep(t)
    t_prev = int(t_prev)
    if not 0 <= t_prev < t:
        raise ParameterError(f"ddim_step: t_prev {t_prev} must lie in 0..{t - 1}")
    if not 0.0 <= eta <= 1.0:
        raise ParameterError(f"ddim_step: eta {eta} outside [0, 1]")
    abar_p = schedule.alpha_bar_at(t_prev)
    sig = ddim_sigma(schedule, t, t_prev, eta)
    x0 = predict_x0(schedule, z_t, t, eps_hat)
    # guard tiny negative residue from float cancellation; algebraically
    # sigma^2 <= 1 - abar_prev whenever eta <= 1
    dir_coef = math.sqrt(max(1.0 - abar_p - sig * sig, 0.0))
    out = add(scale(x0, math.sqrt(abar_p)), scale(eps_hat, dir_coef))
    if sig > 0.0:
        out = add(out, Tensor(sig * rng.standard_normal(z_t.shape)))
    return out


def timestep_grid(steps: int, num_steps: int) -> list[int]:
    """Evenly spaced decreasing timesteps covering both ends of the chain."""
    if not 1 <= num_steps <= steps:
        raise ParameterError(f"num_steps {num_steps} outside 1..{steps}")
    grid = np.linspace(steps, 1, num_steps)
    return [int(round(v)) for v in grid]


def sample_loop(schedule: NoiseSchedule, denoise_fn, config: SamplerConfig,
                shape: tuple) -> Tensor:
    """Run the reverse process from seeded Gaussian noise to a clean latent.

    ``denoise_fn(z_t, t) -> eps_hat`` supplies the noise prediction; the
    same (config, seed, shape, callback) always reproduces the same output.
    """
    grid = timestep_grid(schedule.steps, config.num_steps)
    rng = np.random.default_rng(config.seed)
    z = Tensor(rng.standard_normal(shape))
    for i, t in enumerate(grid):
        t_prev = grid[i + 1] if i + 1 < len(grid) else 0
        eps_hat = denoise_fn(z, t)
        z = ddim_step(schedule, z, t, t_prev, eps_hat, config.eta, rng)
    assert_finite(z, "sample_loop output")
    return z
