"""Conditional DDPM core.

Schedule construction, the forward noising process, the exact Gaussian
posterior of one reverse step, the clean-image reparameterization of the
predicted noise, the training objective, and the ancestral sampler. All of
it is independent of how the noise predictor is implemented: any callable
(x_t, y, t) -> eps_hat works, tensors in, tensors out.

Schedule tables are float64 numpy arrays indexed 1..T with a t=0 sentinel
row (beta_0 = 0, gamma_0 = 1) so posterior coefficients at t=1 collapse
exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

GAMMA_FLOOR = 1.0e-5


@dataclass(frozen=True)
class DiffusionSchedule:
    """Noise schedule tables for t = 1..T (index 0 is the t=0 sentinel)."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray
    beta_tilde: np.ndarray
    sigma2: np.ndarray
    kind: str = "sigmoid"
    params: dict = field(default_factory=dict)

    def coeffs(self, t: int) -> tuple[float, float, float, float]:
        """(beta_t, alpha_t, gamma_t, gamma_{t-1}) as Python floats."""
        self._check_t(t)
        return (
            float(self.beta[t]),
            float(self.alpha[t]),
            float(self.gamma[t]),
            float(self.gamma[t - 1]),
        )

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.T:
            raise ValueError(f"step t={t} outside 1..{self.T}")

    def to_dict(self) -> dict:
        return {
            "T": self.T,
            "kind": self.kind,
            "params": self.params,
            "beta": self.beta[1:].tolist(),
            "sigma_mode": self.params.get("sigma_mode", "beta_tilde"),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DiffusionSchedule":
        return schedule_from_betas(
            np.asarray(d["beta"], dtype=np.float64),
            kind=d.get("kind", "sigmoid"),
            params=d.get("params", {}),
            sigma_mode=d.get("sigma_mode", "beta_tilde"),
        )


def schedule_from_betas(
    betas: np.ndarray,
    kind: str = "custom",
    params: dict | None = None,
    sigma_mode: str = "beta_tilde",
) -> DiffusionSchedule:
    """Assemble all tables from the per-step noising rates.

    gamma is accumulated as a running product of alpha so the identity
    gamma_t == alpha_t * gamma_{t-1} holds bit-exactly as stored.
    """
    betas = np.asarray(betas, dtype=np.float64)
    T = betas.size
    if T < 1:
        raise ValueError("schedule needs at least one step")
    if not ((betas > 0) & (betas < 1)).all():
        raise ValueError("every beta_t must lie strictly inside (0, 1)")
    beta = np.concatenate([[0.0], betas])
    alpha = 1.0 - beta
    gamma = np.empty(T + 1)
    gamma[0] = 1.0
    for t in range(1, T + 1):
        gamma[t] = alpha[t] * gamma[t - 1]
    beta_tilde = np.zeros(T + 1)
    beta_tilde[1:] = (1.0 - gamma[:-1]) / (1.0 - gamma[1:]) * beta[1:]
    if sigma_mode == "beta_tilde":
        sigma2 = beta_tilde.copy()
    elif sigma_mode == "beta":
        sigma2 = beta.copy()
    else:
        raise ValueError(f"unknown sigma mode {sigma_mode!r}")
    params = dict(params or {})
    params["sigma_mode"] = sigma_mode
    return DiffusionSchedule(T, beta, alpha, gamma, beta_tilde, sigma2, kind, params)


def make_schedule(
    T: int,
    kind: str = "sigmoid",
    tau: float = 3.0,
    sigma_mode: str = "beta_tilde",
) -> DiffusionSchedule:
    """Build the noising schedule; default is the sigmoid family.

    The cumulative signal fraction follows a logistic in normalized time,
    rescaled to run from 1 - 1e-5 down to 1e-5; per-step rates come from
    its ratios.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if kind != "sigmoid":
        raise ValueError(f"unknown schedule kind {kind!r}")
    u = np.arange(T + 1, dtype=np.float64) / T
    raw = 1.0 / (1.0 + np.exp(tau * (2.0 * u - 1.0)))
    hi, lo = 1.0 - GAMMA_FLOOR, GAMMA_FLOOR
    curve = lo + (raw - raw[-1]) * (hi - lo) / (raw[0] - raw[-1])
    betas = 1.0 - curve[1:] / curve[:-1]
    if not ((betas > 0) & (betas < 1)).all():
        raise ValueError(f"schedule kind={kind} T={T} produced rates outside (0, 1)")
    return schedule_from_betas(betas, kind=kind, params={"tau": tau}, sigma_mode=sigma_mode)


@dataclass
class DiffusionState:
    """One point of a reverse chain: noisy image, step index, condition."""

    x_t: torch.Tensor
    t: int
    y: torch.Tensor

    def __post_init__(self):
        if self.x_t.shape != self.y.shape:
            raise ValueError(f"x_t shape {tuple(self.x_t.shape)} != y shape {tuple(self.y.shape)}")
        if self.t < 0:
            raise ValueError("step index must be non-negative")


def _gather(table: np.ndarray, t: torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """Per-sample coefficients broadcast against an image batch."""
    vals = torch.as_tensor(table, dtype=like.dtype, device=like.device)[t]
    return vals.reshape(-1, *([1] * (like.ndim - 1)))


def q_sample(
    x0: torch.Tensor,
    t: int | torch.Tensor,
    eps: torch.Tensor,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """Forward process shortcut: sqrt(gamma_t) x0 + sqrt(1 - gamma_t) eps."""
    if eps.shape != x0.shape:
        raise ValueError("eps must match x0's shape")
    if isinstance(t, torch.Tensor) and t.ndim > 0:
        if not bool(((t >= 1) & (t <= schedule.T)).all()):
            raise ValueError(f"some steps outside 1..{schedule.T}")
        g = _gather(schedule.gamma, t, x0)
        return torch.sqrt(g) * x0 + torch.sqrt(1.0 - g) * eps
    t = int(t)
    schedule._check_t(t)
    g = float(schedule.gamma[t])
    return math.sqrt(g) * x0 + math.sqrt(1.0 - g) * eps


def posterior_params(
    x_t: torch.Tensor,
    x0: torch.Tensor,
    t: int,
    schedule: DiffusionSchedule,
) -> tuple[torch.Tensor, float]:
    """Mean and variance of the exact one-step posterior q(x_{t-1} | x_t, x0)."""
    if x_t.shape != x0.shape:
        raise ValueError("x_t and x0 must share a shape")
    if t == 0:
        raise ValueError("no posterior at t=0")
    schedule._check_t(t)
    beta_t, alpha_t, gamma_t, gamma_tm1 = schedule.coeffs(t)
    coef_x0 = math.sqrt(gamma_tm1) * beta_t / (1.0 - gamma_t)
    coef_xt = math.sqrt(alpha_t) * (1.0 - gamma_tm1) / (1.0 - gamma_t)
    return coef_x0 * x0 + coef_xt * x_t, float(schedule.beta_tilde[t])


def predict_x0(
    x_t: torch.Tensor,
    eps_hat: torch.Tensor,
    t: int,
    schedule: DiffusionSchedule,
    clamp: bool = False,
) -> torch.Tensor:
    """Invert the forward shortcut: (x_t - sqrt(1 - gamma_t) eps_hat) / sqrt(gamma_t)."""
    schedule._check_t(int(t))
    g = float(schedule.gamma[int(t)])
    x0 = (x_t - math.sqrt(1.0 - g) * eps_hat) / math.sqrt(g)
    return torch.clamp(x0, -1.0, 1.0) if clamp else x0


def training_loss(
    predictor,
    x0: torch.Tensor,
    y: torch.Tensor,
    t: int | torch.Tensor,
    eps: torch.Tensor,
    schedule: DiffusionSchedule,
) -> torch.Tensor:
    """Noise-matching objective: mean squared error of the predicted noise."""
    x_t = q_sample(x0, t, eps, schedule)
    eps_hat = predictor(x_t, y, t)
    return torch.mean((eps_hat - eps) ** 2)


def reverse_step(
    state: DiffusionState,
    predictor,
    schedule: DiffusionSchedule,
    generator: torch.Generator | None = None,
    clamp_x0: bool = False,
    sigma_scale: float = 1.0,
) -> torch.Tensor:
    """One ancestral step: posterior mean at the predicted clean image plus noise.

    No noise is added on the final step (t = 1), where the posterior collapses
    onto the predicted clean image.
    """
    if state.t < 1:
        raise ValueError("reverse step needs t >= 1")
    eps_hat = predictor(state.x_t, state.y, state.t)
    x0_hat = predict_x0(state.x_t, eps_hat, state.t, schedule, clamp=clamp_x0)
    mean, _ = posterior_params(state.x_t, x0_hat, state.t, schedule)
    if state.t == 1 or sigma_scale == 0.0:
        return mean
    sigma = math.sqrt(float(schedule.sigma2[state.t])) * sigma_scale
    z = torch.randn(state.x_t.shape, generator=generator, dtype=state.x_t.dtype)
    return mean + sigma * z


def sample(
    y: torch.Tensor,
    predictor,
    schedule: DiffusionSchedule,
    generator: torch.Generator | None = None,
    clamp_x0: bool = True,
) -> torch.Tensor:
    """Run the full reverse chain from pure noise, conditioned on y."""
    x = torch.randn(y.shape, generator=generator, dtype=y.dtype)
    for t in range(schedule.T, 0, -1):
        x = reverse_step(DiffusionState(x, t, y), predictor, schedule, generator, clamp_x0)
        if not torch.isfinite(x).all():
            raise RuntimeError(f"sampling diverged: non-finite values at step t={t}")
    return x
