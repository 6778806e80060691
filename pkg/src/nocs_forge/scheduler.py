"""Noise schedules and samplers.

Training uses the discrete DDPM forward process over ``K`` steps. Inference
uses a second-order multistep DPM-Solver on the probability-flow ODE with a
noise-prediction model, integrating in half-log-SNR ``lambda = log(alpha / sigma)``.
Steps are placed quadratically in time by default (uniform in lambda on
request); the model may be queried at fractional step indices.

A ``denoiser`` here is any callable ``f(x, t) -> eps_hat``. ``x`` has shape
``(B, ...)`` and ``t`` is a float array of shape ``(B,)`` holding
(possibly fractional) step indices in ``[0, K-1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Denoiser = Callable[[np.ndarray, np.ndarray], np.ndarray]


def nocs_to_signal(x: np.ndarray) -> np.ndarray:
    """Map NOCS values from ``[0, 1]`` to the model's ``[-1, 1]`` range."""
    return 2.0 * np.asarray(x) - 1.0


def signal_to_nocs(x: np.ndarray) -> np.ndarray:
    return (np.clip(x, -1.0, 1.0) + 1.0) / 2.0


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("need at least two steps")
        if not (np.all(b > 0) and np.all(b < 1) and np.all(np.diff(b) > 0)):
            raise ValueError("betas must be strictly increasing within (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def linear(cls, steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, steps))

    @property
    def num_steps(self) -> int:
        return self.betas.size

    @property
    def alphas(self) -> np.ndarray:
        return 1.0 - self.betas

    @property
    def alphas_cumprod(self) -> np.ndarray:
        return np.cumprod(self.alphas)

    @property
    def lambdas(self) -> np.ndarray:
        ab = self.alphas_cumprod
        return 0.5 * (np.log(ab) - np.log1p(-ab))

    def lambda_at(self, t) -> np.ndarray:
        """Half-log-SNR at fractional step indices (linear interpolation)."""
        return np.interp(t, np.arange(self.num_steps), self.lambdas)

    def t_at(self, lam) -> np.ndarray:
        """Inverse of :meth:`lambda_at`; lambdas decrease with t."""
        return np.interp(-np.asarray(lam), -self.lambdas, np.arange(self.num_steps, dtype=np.float64))

    @staticmethod
    def alpha_sigma(lam) -> tuple[np.ndarray, np.ndarray]:
        lam = np.asarray(lam, dtype=np.float64)
        # alpha^2 = sigmoid(2 lam), sigma^2 = sigmoid(-2 lam)
        return np.sqrt(1.0 / (1.0 + np.exp(-2.0 * lam))), np.sqrt(1.0 / (1.0 + np.exp(2.0 * lam)))

    def marginal(self, k: int) -> tuple[float, float]:
        """Mean coefficient and variance of ``q(x_k | x_0)``."""
        self._check_step(k)
        ab = self.alphas_cumprod[k]
        return float(np.sqrt(ab)), float(1.0 - ab)

    def _check_step(self, k: int) -> None:
        if not 0 <= k < self.num_steps:
            raise IndexError(f"step {k} outside [0, {self.num_steps})")


def add_noise(x0: np.ndarray, eps: np.ndarray, k, schedule: NoiseSchedule) -> np.ndarray:
    """Forward-noise a signal already in ``[-1, 1]``.

    ``k`` may be a scalar or a per-sample ``(B,)`` array of integer steps.
    """
    x0 = np.asarray(x0)
    eps = np.asarray(eps)
    if x0.shape != eps.shape:
        raise ValueError(f"signal {x0.shape} and noise {eps.shape} disagree")
    k = np.asarray(k)
    if np.any(k < 0) or np.any(k >= schedule.num_steps):
        raise IndexError(f"step {k} outside [0, {schedule.num_steps})")
    ab = schedule.alphas_cumprod[k]
    if k.ndim == 1:
        ab = ab.reshape((-1,) + (1,) * (x0.ndim - 1))
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def add_noise_nocs(nocs: np.ndarray, eps: np.ndarray, k, schedule: NoiseSchedule) -> np.ndarray:
    return add_noise(nocs_to_signal(nocs), eps, k, schedule)


def ddpm_ancestral_step(
    x_k: np.ndarray,
    eps_hat: np.ndarray,
    k: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator | None,
) -> np.ndarray:
    """One reverse DDPM step ``x_k -> x_{k-1}``; no noise is added at ``k = 1``.

    ``rng=None`` suppresses the stochastic term.
    """
    if k < 1 or k >= schedule.num_steps:
        raise IndexError(f"ancestral step needs 1 <= k < {schedule.num_steps}, got {k}")
    a, b = schedule.alphas[k], schedule.betas[k]
    ab = schedule.alphas_cumprod
    mean = (x_k - b / np.sqrt(1.0 - ab[k]) * eps_hat) / np.sqrt(a)
    if k == 1 or rng is None:
        return mean
    var = b * (1.0 - ab[k - 1]) / (1.0 - ab[k])
    return mean + np.sqrt(var) * rng.standard_normal(x_k.shape)


def ddpm_sample(denoiser: Denoiser, shape, schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Full ancestral chain from ``x_{K-1} ~ N(0, I)`` down to ``x_0``."""
    x = rng.standard_normal(shape)
    for k in range(schedule.num_steps - 1, 0, -1):
        eps = denoiser(x, np.full(shape[0], float(k)))
        x = ddpm_ancestral_step(x, eps, k, schedule, rng)
    return x


SPACINGS = ("time_quadratic", "logsnr")


def dpm_solver_timesteps(
    schedule: NoiseSchedule, steps: int, spacing: str = "time_quadratic"
) -> tuple[np.ndarray, np.ndarray]:
    """``steps + 1`` (lambda, t) knots from the noisiest step ``K-1`` to step 0.

    ``time_quadratic`` spaces ``sqrt(t)`` uniformly; ``logsnr`` spaces lambda
    uniformly. At 10 steps the latter under-disperses Gaussian data by ~10%.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    last = schedule.num_steps - 1
    if spacing == "logsnr":
        t = schedule.t_at(np.linspace(schedule.lambdas[-1], schedule.lambdas[0], steps + 1))
    elif spacing == "time_quadratic":
        t = np.linspace(np.sqrt(last), 0.0, steps + 1) ** 2
    else:
        raise ValueError(f"unknown spacing {spacing!r}; expected one of {SPACINGS}")
    t[0], t[-1] = last, 0.0
    return schedule.lambda_at(t), t


def dpm_solver_trajectory(
    denoiser: Denoiser,
    x_init: np.ndarray,
    steps: int,
    schedule: NoiseSchedule,
    spacing: str = "time_quadratic",
) -> np.ndarray:
    """Integrate the probability-flow ODE from ``x_init`` at the noisiest step.

    Multistep second order, noise prediction; the first step is first order
    (the DDIM update). Returns the unclamped signal at step 0.
    """
    lam, t = dpm_solver_timesteps(schedule, steps, spacing)
    alpha, sigma = NoiseSchedule.alpha_sigma(lam)
    batch = x_init.shape[0]
    x = np.asarray(x_init, dtype=np.float64)
    prev_eps = None
    for i in range(steps):
        eps = np.asarray(denoiser(x, np.full(batch, t[i])), dtype=np.float64)
        h = lam[i + 1] - lam[i]
        phi = np.expm1(h)
        x_next = (alpha[i + 1] / alpha[i]) * x - sigma[i + 1] * phi * eps
        if prev_eps is not None:
            r = (lam[i] - lam[i - 1]) / h
            x_next -= 0.5 * sigma[i + 1] * phi * (eps - prev_eps) / r
        prev_eps = eps
        x = x_next
    return x


def dpm_solver_sample(
    denoiser: Denoiser,
    shape,
    steps: int,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
    spacing: str = "time_quadratic",
) -> np.ndarray:
    """Draw the initial noise from ``rng``, integrate, and return NOCS in ``[0, 1]``."""
    x = rng.standard_normal(shape)
    return signal_to_nocs(dpm_solver_trajectory(denoiser, x, steps, schedule, spacing))


class GaussianToyDenoiser:
    """Exact noise predictor when the data are i.i.d. ``N(mu, s0^2)`` per coordinate.

    With ``x_t = alpha x_0 + sigma eps`` the posterior mean of ``eps`` is
    ``sigma (x_t - alpha mu) / (alpha^2 s0^2 + sigma^2)``.
    """

    def __init__(self, mu: float, std: float, schedule: NoiseSchedule):
        self.mu, self.std, self.schedule = mu, std, schedule

    def __call__(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        alpha, sigma = NoiseSchedule.alpha_sigma(self.schedule.lambda_at(t))
        shape = (-1,) + (1,) * (x.ndim - 1)
        alpha, sigma = alpha.reshape(shape), sigma.reshape(shape)
        return sigma * (x - alpha * self.mu) / (alpha**2 * self.std**2 + sigma**2)

    def exact_flow(self, x_init: np.ndarray) -> np.ndarray:
        """Probability-flow ODE solution from the noisiest step down to step 0."""
        lam = self.schedule.lambdas
        a_t, s_t = NoiseSchedule.alpha_sigma(lam[-1])
        a_0, s_0 = NoiseSchedule.alpha_sigma(lam[0])
        z = (x_init - a_t * self.mu) / np.sqrt(a_t**2 * self.std**2 + s_t**2)
        return a_0 * self.mu + np.sqrt(a_0**2 * self.std**2 + s_0**2) * z
