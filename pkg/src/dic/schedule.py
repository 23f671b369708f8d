"""Noise schedule and the four core deterministic diffusion-step formulas.

The coefficient array holds the cumulative signal fraction abar_t for
t = 0..T with abar_0 = 1: a clean data sample at t=0 degrades to nearly
pure noise at t=T. Denoising walks t = T..1, inversion walks t = 1..T.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StepError
from .numerics import as_tensor, assert_finite


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Cumulative signal coefficients abar_t, t = 0..T."""

    alpha_bar: np.ndarray

    def __post_init__(self):
        ab = np.asarray(self.alpha_bar, dtype=np.float64)
        ab.flags.writeable = False
        object.__setattr__(self, "alpha_bar", ab)
        if ab.ndim != 1 or ab.size < 2:
            raise ConfigError(f"alpha_bar must be 1-d with at least T+1=2 entries, got shape {ab.shape}")
        if ab[0] < 0.999:
            raise ConfigError(f"alpha_bar[0] = {ab[0]} must be >= 0.999")
        if ab[-1] <= 0.0:
            raise ConfigError(f"alpha_bar[T] = {ab[-1]} must be positive")
        if not np.all(np.diff(ab) < 0.0):
            raise ConfigError("alpha_bar must be strictly decreasing in t")

    @property
    def T(self) -> int:
        return self.alpha_bar.size - 1


@dataclass(frozen=True)
class GuidanceConfig:
    """Guidance scales for the inversion pass and the editing forward pass."""

    omega_inverse: float = 1.0
    omega_forward: float = 5.0

    def __post_init__(self):
        if self.omega_inverse < 0.0 or self.omega_forward < 0.0:
            raise ConfigError(
                f"guidance scales must be >= 0, got inverse={self.omega_inverse} forward={self.omega_forward}"
            )


def make_schedule(T: int, beta_start: float = 0.0015, beta_end: float = 0.0195) -> NoiseSchedule:
    """Build abar_t = prod_{s<=t} (1 - beta_s) from T linearly spaced betas."""
    if T < 1:
        raise ConfigError(f"step count T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(f"need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])
    return NoiseSchedule(alpha_bar)


def make_matched_schedule(T: int, beta_start: float = 0.0015, beta_end: float = 0.0195,
                          reference_steps: int = 200) -> NoiseSchedule:
    """Schedule whose T steps discretize the same total corruption as the reference.

    The beta window is rescaled by reference_steps / T, so abar_T is (nearly)
    independent of T and step counts compare discretization error rather than
    noising depth.
    """
    scale = reference_steps / T
    return make_schedule(T, beta_start * scale, beta_end * scale)


def _step_coeffs(t: int, s: NoiseSchedule) -> tuple[float, float]:
    if not (1 <= t <= s.T):
        raise StepError(f"timestep {t} outside 1..{s.T}")
    return float(s.alpha_bar[t]), float(s.alpha_bar[t - 1])


def ddim_forward_step(z_t: np.ndarray, eps: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """One deterministic denoising step t -> t-1.

    z_{t-1} = sqrt(abar_{t-1}/abar_t) z_t
            + sqrt(abar_{t-1}) (sqrt(1/abar_{t-1} - 1) - sqrt(1/abar_t - 1)) eps
    """
    z_t, eps = as_tensor(z_t), as_tensor(eps)
    if z_t.shape != eps.shape:
        raise StepError(f"latent shape {z_t.shape} != noise shape {eps.shape}")
    ab_t, ab_prev = _step_coeffs(t, s)
    scale = np.sqrt(ab_prev / ab_t)
    drift = np.sqrt(ab_prev) * (np.sqrt(1.0 / ab_prev - 1.0) - np.sqrt(1.0 / ab_t - 1.0))
    return scale * z_t + drift * eps


def ddim_inversion_step(z_prev: np.ndarray, eps: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Exact algebraic inverse of ddim_forward_step for the same eps: t-1 -> t."""
    z_prev, eps = as_tensor(z_prev), as_tensor(eps)
    if z_prev.shape != eps.shape:
        raise StepError(f"latent shape {z_prev.shape} != noise shape {eps.shape}")
    ab_t, ab_prev = _step_coeffs(t, s)
    scale = np.sqrt(ab_t / ab_prev)
    drift = np.sqrt(ab_t) * (np.sqrt(1.0 / ab_t - 1.0) - np.sqrt(1.0 / ab_prev - 1.0))
    return scale * z_prev + drift * eps


def add_noise(z_0: np.ndarray, eps: np.ndarray, t: int, s: NoiseSchedule) -> np.ndarray:
    """Jump a clean sample straight to noise level t: sqrt(abar_t) z_0 + sqrt(1-abar_t) eps."""
    z_0, eps = as_tensor(z_0), as_tensor(eps)
    if z_0.shape != eps.shape:
        raise StepError(f"latent shape {z_0.shape} != noise shape {eps.shape}")
    if not (0 <= t <= s.T):
        raise StepError(f"timestep {t} outside 0..{s.T}")
    ab = float(s.alpha_bar[t])
    return np.sqrt(ab) * z_0 + np.sqrt(1.0 - ab) * eps


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, omega: float) -> np.ndarray:
    """Guided noise estimate omega * eps_cond + (1 - omega) * eps_uncond."""
    eps_cond, eps_uncond = as_tensor(eps_cond), as_tensor(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise StepError(f"conditional shape {eps_cond.shape} != unconditional shape {eps_uncond.shape}")
    out = omega * eps_cond + (1.0 - omega) * eps_uncond
    return assert_finite(out, "guided noise estimate")
