"""Noise schedule and the closed-form diffusion algebra used by training and sampling.

Timestep ``-1`` denotes the clean end of the chain (cumulative alpha exactly 1);
it is accepted wherever a *target* timestep of a sampler step is expected.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

F32 = np.float32


@dataclass
class NoiseSchedule:
    beta: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return len(self.beta)

    @classmethod
    def linear(cls, T: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02,
               eta: float = 0.0) -> "NoiseSchedule":
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        return cls.from_betas(beta, eta)

    @classmethod
    def from_betas(cls, beta, eta: float = 0.0) -> "NoiseSchedule":
        beta = np.asarray(beta, dtype=np.float64)
        if not ((beta > 0) & (beta < 1)).all():
            raise ValueError("every beta must lie strictly between 0 and 1")
        alpha_bar = np.cumprod(1.0 - beta)
        # DDIM sigma for a one-step jump t -> t-1, scaled by eta (0 = deterministic)
        prev = np.concatenate([[1.0], alpha_bar[:-1]])
        sigma = eta * np.sqrt((1 - prev) / (1 - alpha_bar) * (1 - alpha_bar / prev))
        return cls(beta.astype(F32), alpha_bar.astype(F32), sigma.astype(F32))

    def abar(self, t: int) -> float:
        """Cumulative alpha at ``t``; ``t == -1`` is the clean end (exactly 1)."""
        if t == -1:
            return 1.0
        if not 0 <= t < self.T:
            raise ValueError(f"timestep {t} out of range [0, {self.T})")
        return float(self.alpha_bar[t])

    def inference_timesteps(self, steps: int) -> list[int]:
        """``steps`` uniformly spaced timesteps, descending, ending at 0."""
        if not 1 <= steps <= self.T:
            raise ValueError(f"inference steps must be in [1, {self.T}], got {steps}")
        stride = self.T // steps
        return [int(t) for t in (np.arange(steps) * stride)[::-1]]


def _check_t(schedule: NoiseSchedule, t: int) -> None:
    if not 0 <= t < schedule.T:
        raise ValueError(f"timestep {t} out of range [0, {schedule.T})")


def _same_shape(op, a, b):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{op}: shapes {np.shape(a)} and {np.shape(b)} differ")


def add_noise(schedule: NoiseSchedule, z0, eps, t: int) -> np.ndarray:
    _check_t(schedule, t)
    _same_shape("add_noise", z0, eps)
    ab = schedule.alpha_bar[t]
    return (np.sqrt(ab) * z0 + np.sqrt(F32(1) - ab) * eps).astype(F32)


def noise_at(schedule: NoiseSchedule, z0, eps, t: int) -> np.ndarray:
    """``add_noise`` that also accepts the clean end ``t == -1`` (returns ``z0`` exactly)."""
    if t == -1:
        _same_shape("noise_at", z0, eps)
        return np.asarray(z0, dtype=F32).copy()
    return add_noise(schedule, z0, eps, t)


def diffusion_loss(eps_pred, eps) -> float:
    _same_shape("diffusion_loss", eps_pred, eps)
    d = np.asarray(eps, dtype=np.float64) - np.asarray(eps_pred, dtype=np.float64)
    return float((d * d).mean())


def predict_z0(schedule: NoiseSchedule, z_t, eps_pred, t: int) -> np.ndarray:
    _check_t(schedule, t)
    ab = schedule.alpha_bar[t]
    if ab <= 0:
        raise ZeroDivisionError(f"alpha_bar[{t}] is zero; z0 is not recoverable")
    return ((z_t - np.sqrt(F32(1) - ab) * eps_pred) / np.sqrt(ab)).astype(F32)


def invert_to_eps(schedule: NoiseSchedule, z_t, z0_hat, t: int) -> np.ndarray:
    _check_t(schedule, t)
    ab = schedule.alpha_bar[t]
    if ab >= 1:
        raise ZeroDivisionError(f"alpha_bar[{t}] is one; noise is not recoverable")
    return ((z_t - np.sqrt(ab) * z0_hat) / np.sqrt(F32(1) - ab)).astype(F32)


def ddim_step(schedule: NoiseSchedule, z_t, eps_pred, t: int, t_prev: int,
              noise=None, sigma: float | None = None) -> np.ndarray:
    """One reverse update from ``t`` to ``t_prev``.

    With ``sigma`` 0 (the default schedule) the update is deterministic;
    otherwise ``noise`` supplies the fresh Gaussian draw.
    """
    _check_t(schedule, t)
    if not -1 <= t_prev < t:
        raise ValueError(f"ddim_step: need -1 <= t_prev < t, got t={t}, t_prev={t_prev}")
    ab_prev = F32(schedule.abar(t_prev))
    s = F32(schedule.sigma[t] if sigma is None else sigma)
    z0 = predict_z0(schedule, z_t, eps_pred, t)
    out = np.sqrt(ab_prev) * z0 + np.sqrt(max(F32(1) - ab_prev - s * s, F32(0))) * eps_pred
    if s > 0:
        if noise is None:
            raise ValueError("ddim_step: stochastic step needs a noise draw")
        out = out + s * noise
    return out.astype(F32)


def cfg_epsilon(eps_cond, eps_uncond, scale: float) -> np.ndarray:
    return (eps_uncond + F32(scale) * (eps_cond - eps_uncond)).astype(F32)
