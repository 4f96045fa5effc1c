"""
Diffusion Service
Noise schedule, forward corruption and the reverse samplers for the
approximation band
"""
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np
from loguru import logger

from trifuse.core.exceptions import ArgumentError, ShapeError
from trifuse.models.schemas import CnmConfig, SamplerConfig
from trifuse.services.autodiff import no_grad
from trifuse.services.layers import ModelParams
from trifuse.services.trifuse_net import cnm_predict_noise

Timestep = Union[int, np.ndarray]


@dataclass(frozen=True)
class NoiseSchedule:
    """
    Variance schedule; arrays are indexed by t - 1 for t in 1..T

    ``sigma`` is the ancestral-step standard deviation √β_t.
    """
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def alpha_bar_at(self, t: Timestep) -> np.ndarray:
        """ᾱ_t with the convention ᾱ_0 = 1"""
        t = np.asarray(t)
        if np.any(t < 0) or np.any(t > self.T):
            raise ArgumentError(f"timestep out of range 0..{self.T}: {t}")
        padded = np.concatenate([[1.0], self.alpha_bar])
        return padded[t]


def make_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """
    Linear β schedule from beta_start to beta_end over T steps

    Args:
        T: Number of diffusion steps (>= 2)
        beta_start: β_1
        beta_end: β_T

    Returns:
        NoiseSchedule in float64
    """
    if T < 2:
        raise ArgumentError(f"a schedule needs T >= 2, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ArgumentError(f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")
    t = np.arange(1, T + 1, dtype=np.float64)
    beta = beta_start + (t - 1) / (T - 1) * (beta_end - beta_start)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    sigma = np.sqrt(beta)
    sigma.setflags(write=False)
    return NoiseSchedule(T=T, beta=beta, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma)


def _check_t(t: Timestep, sched: NoiseSchedule, lowest: int = 1) -> np.ndarray:
    t = np.asarray(t, dtype=np.int64)
    if np.any(t < lowest) or np.any(t > sched.T):
        raise ArgumentError(f"timestep must be in {lowest}..{sched.T}, got {t}")
    return t


def _per_batch(values: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Broadcast per-sample scalars over the trailing axes of x"""
    if values.ndim == 0:
        return values
    if values.shape != (x.shape[0],):
        raise ShapeError(f"{values.shape[0]} timesteps for a batch of {x.shape[0]}")
    return values.reshape((-1,) + (1,) * (x.ndim - 1))


def forward_sample(x0: np.ndarray, t: Timestep, eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """
    Closed-form marginal x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·eps

    Args:
        x0: Clean signal
        t: Timestep, scalar or one per batch item
        eps: Unit Gaussian draw, shape of x0
        sched: Noise schedule
    """
    x0, eps = np.asarray(x0), np.asarray(eps)
    if x0.shape != eps.shape:
        raise ShapeError(f"eps shape {eps.shape} does not match x0 shape {x0.shape}")
    ab = _per_batch(sched.alpha_bar_at(_check_t(t, sched)), x0)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def predict_x0(x_t: np.ndarray, t: Timestep, pred_eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """x̂0 = (x_t - √(1-ᾱ_t)·ε̂) / √ᾱ_t"""
    ab = _per_batch(sched.alpha_bar_at(_check_t(t, sched)), np.asarray(x_t))
    return (x_t - np.sqrt(1.0 - ab) * pred_eps) / np.sqrt(ab)


def implicit_step(
    x_t: np.ndarray,
    t: int,
    t_prev: int,
    pred_eps: np.ndarray,
    sched: NoiseSchedule,
    eta: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    One implicit (DDIM) update from t to t_prev

    Args:
        x_t: Current sample
        t: Current timestep
        t_prev: Target timestep, 0 <= t_prev < t; 0 returns x̂0
        pred_eps: Predicted noise
        sched: Noise schedule
        eta: 0 for deterministic sampling, 1 for the ancestral-variance limit
        rng: Source of fresh noise, required when eta > 0

    Returns:
        x_{t_prev}
    """
    x_t, pred_eps = np.asarray(x_t, dtype=np.float64), np.asarray(pred_eps, dtype=np.float64)
    if x_t.shape != pred_eps.shape:
        raise ShapeError(f"pred_eps shape {pred_eps.shape} does not match x_t shape {x_t.shape}")
    if not 0 <= t_prev < t:
        raise ArgumentError(f"need 0 <= t_prev < t, got t={t}, t_prev={t_prev}")
    if not 0.0 <= eta <= 1.0:
        raise ArgumentError(f"eta must be in [0, 1], got {eta}")
    x0_hat = predict_x0(x_t, t, pred_eps, sched)
    if t_prev == 0:
        return x0_hat

    ab_t = float(sched.alpha_bar_at(t))
    ab_prev = float(sched.alpha_bar_at(t_prev))
    # η-scaled posterior σ, not the ancestral √β_t of sched.sigma
    sigma = eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_t)) * np.sqrt(1.0 - ab_t / ab_prev)
    out = np.sqrt(ab_prev) * x0_hat + np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0)) * pred_eps
    if sigma > 0:
        if rng is None:
            raise ArgumentError("eta > 0 needs a random generator")
        out = out + sigma * rng.standard_normal(x_t.shape)
    return out


def ancestral_step(
    x_t: np.ndarray,
    t: int,
    pred_eps: np.ndarray,
    sched: NoiseSchedule,
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """
    One ancestral update from t to t - 1

    x_{t-1} = (x_t - β_t/√(1-ᾱ_t)·ε̂)/√α_t + σ_t·z, with no noise at t = 1.
    """
    x_t, pred_eps = np.asarray(x_t, dtype=np.float64), np.asarray(pred_eps, dtype=np.float64)
    if x_t.shape != pred_eps.shape:
        raise ShapeError(f"pred_eps shape {pred_eps.shape} does not match x_t shape {x_t.shape}")
    t = int(_check_t(t, sched))
    beta, alpha, ab = sched.beta[t - 1], sched.alpha[t - 1], sched.alpha_bar[t - 1]
    mean = (x_t - beta / np.sqrt(1.0 - ab) * pred_eps) / np.sqrt(alpha)
    if t == 1:
        return mean
    if rng is None:
        raise ArgumentError("ancestral sampling needs a random generator")
    return mean + sched.sigma[t - 1] * rng.standard_normal(x_t.shape)


def make_subsequence(T: int, S: int) -> List[int]:
    """Uniform-stride timesteps {T, T - ⌊T/S⌋, ...}, S entries, strictly decreasing"""
    if not 1 <= S <= T:
        raise ArgumentError(f"need 1 <= S <= T, got S={S}, T={T}")
    stride = T // S
    return [T - i * stride for i in range(S)]


def normalize_approx(approx: np.ndarray, levels: int) -> np.ndarray:
    """Map level-k approximation coefficients of a [0, 1] image from [0, 2^k] to [-0.5, 0.5]"""
    return approx / 2.0 ** levels - 0.5


def denormalize_approx(x: np.ndarray, levels: int) -> np.ndarray:
    return (x + 0.5) * 2.0 ** levels


def restore_approximation(
    condition: np.ndarray,
    params: ModelParams,
    cnm_cfg: CnmConfig,
    sched: NoiseSchedule,
    sampler: SamplerConfig,
    rng: np.random.Generator,
    method: str = "implicit",
) -> np.ndarray:
    """
    Sample a clean approximation band conditioned on the low-light one

    Args:
        condition: Normalized low-light approximation, (B, C, h, w)
        params: Model parameters
        cnm_cfg: CNM architecture
        sched: Noise schedule (its T must match the sampler's)
        sampler: Steps and eta for the implicit sampler
        rng: Seeded generator for the initial noise and any eta noise
        method: "implicit" over the timestep subsequence, or "ancestral"
            over the full chain

    Returns:
        x̂0 in the normalized domain, float64
    """
    if sched.T != sampler.timesteps:
        raise ArgumentError(f"schedule has T={sched.T} but sampler expects {sampler.timesteps}")
    condition = np.asarray(condition, dtype=np.float64)
    x = rng.standard_normal(condition.shape)

    def eps_at(x_cur: np.ndarray, t: int) -> np.ndarray:
        with no_grad():
            out = cnm_predict_noise(x_cur, t, condition, params, cnm_cfg)
        return out.data.astype(np.float64)

    if method == "implicit":
        seq = make_subsequence(sampler.timesteps, sampler.steps)
        for t, t_prev in zip(seq, seq[1:] + [0]):
            x = implicit_step(x, t, t_prev, eps_at(x, t), sched, sampler.eta, rng)
    elif method == "ancestral":
        for t in range(sched.T, 0, -1):
            x = ancestral_step(x, t, eps_at(x, t), sched, rng)
    else:
        raise ArgumentError(f"unknown sampling method {method!r}")
    logger.debug(f"Restored approximation {condition.shape} with {method} sampling")
    return x
