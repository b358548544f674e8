"""Noise schedules and the forward/reverse diffusion primitives.

Conventions:
- Timesteps are 1-based: t in {1..T}; array index t-1 holds the value
  for step t. alpha_bar[0] corresponds to t=1; the virtual alpha_bar at
  t=0 is 1 (clean data).
- Forward process:  z_t = sqrt(abar_t) z_0 + sqrt(1 - abar_t) eps.
- Clean-latent estimate inverts it given a noise prediction:
      x0_hat = z_t / sqrt(abar_t) - sqrt(1 - abar_t) eps_hat / sqrt(abar_t).
- Reverse step mean: mu = (z_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t),
  variance beta_tilde_t = (1 - abar_{t-1}) / (1 - abar_t) beta_t, which is
  exactly 0 at t=1, so the last step adds no noise.

Sampling with fewer steps than T re-indexes alpha_bar over the chosen
subsequence (``respace``), yielding a compact schedule the same step
formulas apply to.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep diffusion scalars (all float64, index t-1 for step t)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray
    inference_steps: tuple[int, ...]

    def __post_init__(self):
        validate_schedule(self)


def validate_schedule(s: NoiseSchedule) -> None:
    if s.T < 1:
        raise ValueError(f"schedule length must be >= 1, got {s.T}")
    for name in ("beta", "alpha", "alpha_bar", "posterior_var"):
        arr = getattr(s, name)
        if arr.shape != (s.T,):
            raise ValueError(f"{name} must have shape ({s.T},), got {arr.shape}")
    if not np.all((s.beta > 0.0) & (s.beta < 1.0)):
        raise ValueError("all beta values must lie in (0, 1)")
    if s.T > 1 and not np.all(np.diff(s.alpha_bar) < 0.0):
        raise ValueError("alpha_bar must be strictly decreasing")
    ref = np.cumprod(s.alpha)
    if not np.allclose(s.alpha_bar, ref, rtol=1e-12, atol=0.0):
        raise ValueError("alpha_bar inconsistent with cumulative product of alpha")
    if np.any(s.posterior_var < 0.0):
        raise ValueError("posterior variances must be non-negative")
    steps = np.asarray(s.inference_steps)
    if steps.ndim != 1 or len(steps) < 1:
        raise ValueError("inference_steps must be a non-empty sequence")
    if np.any(np.diff(steps) >= 0):
        raise ValueError("inference_steps must be strictly decreasing")
    if steps[0] > s.T or steps[-1] < 1:
        raise ValueError("inference_steps must be a subset of {1..T}")


def build_schedule(T: int, beta_start: float, beta_end: float,
                   inference_count: int) -> NoiseSchedule:
    """Linear beta schedule with evenly spaced inference steps.

    Defaults used across the package: T=1000, beta 1e-4 -> 0.02, 50
    inference steps.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if not (1 <= inference_count <= T):
        raise ValueError(f"inference_count must be in [1, {T}], got {inference_count}")
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate(([1.0], alpha_bar[:-1]))
    posterior_var = np.maximum((1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta, 0.0)
    steps = np.unique(np.round(np.linspace(1, T, inference_count)).astype(int))
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar,
                         posterior_var=posterior_var,
                         inference_steps=tuple(int(v) for v in steps[::-1]))


@dataclass(frozen=True)
class RespacedSchedule:
    """Compact schedule over the inference subsequence of a base schedule.

    ``schedule`` is a valid NoiseSchedule of length K with alpha_bar equal
    (up to division/re-multiplication rounding) to the base alpha_bar at
    the retained original steps; ``orig_steps[j]`` maps its step j+1 back
    to the base timestep (for the model's timestep embedding).
    """

    schedule: NoiseSchedule
    orig_steps: tuple[int, ...] = field(default=())


def respace(sched: NoiseSchedule) -> RespacedSchedule:
    steps_asc = np.array(sorted(sched.inference_steps))
    abar = sched.alpha_bar[steps_asc - 1]
    abar_prev = np.concatenate(([1.0], abar[:-1]))
    alpha = abar / abar_prev
    beta = 1.0 - alpha
    posterior_var = np.maximum((1.0 - abar_prev) / (1.0 - abar) * beta, 0.0)
    k = len(steps_asc)
    compact = NoiseSchedule(T=k, beta=beta, alpha=alpha, alpha_bar=abar,
                            posterior_var=posterior_var,
                            inference_steps=tuple(range(k, 0, -1)))
    return RespacedSchedule(schedule=compact,
                            orig_steps=tuple(int(v) for v in steps_asc))


@dataclass
class LatentState:
    """A latent array paired with its (1-based) timestep."""

    z: np.ndarray
    t: int

    def __post_init__(self):
        if not np.all(np.isfinite(self.z)):
            raise ValueError("latent contains non-finite values")
        if self.t < 0:
            raise ValueError(f"timestep must be >= 0, got {self.t}")


def _check_t(t: int, sched: NoiseSchedule) -> None:
    if not (1 <= t <= sched.T):
        raise ValueError(f"t must be in [1, {sched.T}], got {t}")


def forward_diffuse(z0: np.ndarray, t: int, eps: np.ndarray,
                    sched: NoiseSchedule) -> np.ndarray:
    """Noisy latent z_t from clean z0 and a noise draw, in closed form.

    Schedule coefficients are float64, so outputs follow numpy promotion
    (float32 inputs yield float64); callers pin dtype where they care.
    """
    _check_t(t, sched)
    if eps.shape != z0.shape:
        raise ValueError(f"eps shape {eps.shape} != z0 shape {z0.shape}")
    abar = sched.alpha_bar[t - 1]
    return np.sqrt(abar) * z0 + np.sqrt(1.0 - abar) * eps


def estimate_x0(z_t: np.ndarray, t: int, eps_pred: np.ndarray,
                sched: NoiseSchedule) -> np.ndarray:
    """Algebraic clean-latent estimate from z_t and predicted noise."""
    _check_t(t, sched)
    if eps_pred.shape != z_t.shape:
        raise ValueError(f"eps_pred shape {eps_pred.shape} != z_t shape {z_t.shape}")
    abar = sched.alpha_bar[t - 1]
    if abar == 0.0:
        raise ZeroDivisionError(f"alpha_bar at t={t} is zero")
    inv = 1.0 / np.sqrt(abar)
    return inv * z_t - (np.sqrt(1.0 - abar) * inv) * eps_pred


def posterior_mean(z_t: np.ndarray, t: int, eps_pred: np.ndarray,
                   sched: NoiseSchedule) -> np.ndarray:
    """Reverse-step mean mu(z_t, eps_hat)."""
    _check_t(t, sched)
    if eps_pred.shape != z_t.shape:
        raise ValueError(f"eps_pred shape {eps_pred.shape} != z_t shape {z_t.shape}")
    beta = sched.beta[t - 1]
    abar = sched.alpha_bar[t - 1]
    alpha = sched.alpha[t - 1]
    c_eps = beta / np.sqrt(1.0 - abar)
    return (1.0 / np.sqrt(alpha)) * (z_t - c_eps * eps_pred)


def posterior_step(z_t: np.ndarray, t: int, eps_pred: np.ndarray,
                   sched: NoiseSchedule, noise: np.ndarray) -> np.ndarray:
    """One reverse step: mu + sigma_t * noise (noise dropped where sigma=0)."""
    mu = posterior_mean(z_t, t, eps_pred, sched)
    var = sched.posterior_var[t - 1]
    if var == 0.0:
        return mu
    if noise.shape != z_t.shape:
        raise ValueError(f"noise shape {noise.shape} != z_t shape {z_t.shape}")
    return mu + np.sqrt(var) * noise


def sample_loop(shape: tuple, predict_fn, sched: NoiseSchedule,
                rng: np.random.Generator, dtype=np.float32,
                z_init: np.ndarray | None = None):
    """Plain (unguided) reverse sampler over the inference subsequence.

    ``predict_fn(z, t_orig)`` returns the predicted noise for base-schedule
    timestep t_orig. One standard-normal draw is consumed at
    initialization and one per step, whether used or not, so guided runs
    sharing the seed see the same stream. Returns (z_final, x0_final)
    where x0_final is the last step's clean-latent estimate.
    """
    rs = respace(sched)
    compact, orig = rs.schedule, rs.orig_steps
    if z_init is None:
        z = rng.standard_normal(shape).astype(dtype)
    else:
        z = z_init.astype(dtype, copy=True)
    x0 = None
    for j in range(compact.T, 0, -1):
        eps = predict_fn(z, orig[j - 1])
        noise = rng.standard_normal(shape).astype(dtype)
        x0 = estimate_x0(z, j, eps, compact).astype(dtype)
        z = posterior_step(z, j, eps, compact, noise).astype(dtype)
        if not np.all(np.isfinite(z)):
            raise ArithmeticError(f"non-finite latent at step t={orig[j - 1]}")
    return z, x0
