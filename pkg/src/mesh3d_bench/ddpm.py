"""Denoising diffusion kernel: schedules, forward noising, reverse steps, loss.

Steps are 1-based: ``t`` runs from 1 to ``T`` and ``betas[t - 1]`` is the
variance added at step ``t``. Latent tensors are plain float64 arrays of any
shape.
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, Sequence, Union

import numpy as np

from .errors import InvalidRange, ShapeMismatch
from .geometry import make_rng

logger = logging.getLogger(__name__)

LatentTensor = np.ndarray


class NoisePredictor(Protocol):
    """Anything that maps ``(x_t, t)`` to a noise estimate of the same shape."""

    def __call__(self, x_t: LatentTensor, t: int) -> LatentTensor: ...


class SigmaMode(str, Enum):
    BETA = "beta"
    POSTERIOR = "posterior"
    ZERO = "zero"


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    betas: np.ndarray

    def __post_init__(self):
        betas = np.array(self.betas, dtype=np.float64).reshape(-1)
        if len(betas) == 0:
            raise InvalidRange("schedule needs at least one step")
        if not (np.all(betas > 0.0) and np.all(betas < 1.0)):
            raise InvalidRange("every beta must lie in (0, 1)")
        if np.any(np.diff(betas) <= 0.0):
            raise InvalidRange("betas must be strictly increasing")
        betas.setflags(write=False)
        object.__setattr__(self, "betas", betas)
        alphas = 1.0 - betas
        alpha_bars = np.cumprod(alphas)
        for arr in (alphas, alpha_bars):
            arr.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "alpha_bars", alpha_bars)

    @property
    def T(self) -> int:
        return len(self.betas)

    def _check(self, t: int) -> int:
        if not 1 <= t <= self.T:
            raise InvalidRange(f"step {t} outside [1, {self.T}]", details={"t": t, "T": self.T})
        return t - 1

    def beta(self, t: int) -> float:
        return float(self.betas[self._check(t)])

    def alpha(self, t: int) -> float:
        return float(self.alphas[self._check(t)])

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[self._check(t)])

    def sigma(self, t: int, mode: SigmaMode = SigmaMode.BETA) -> float:
        mode = SigmaMode(mode)
        if mode == SigmaMode.ZERO:
            return 0.0
        if mode == SigmaMode.BETA:
            return float(np.sqrt(self.beta(t)))
        previous = self.alpha_bar(t - 1) if t > 1 else 1.0
        return float(np.sqrt(self.beta(t) * (1.0 - previous) / (1.0 - self.alpha_bar(t))))


def linear_schedule(T: int = 1000, beta_1: float = 1e-4, beta_T: float = 0.02) -> NoiseSchedule:
    if T < 1:
        raise InvalidRange("T must be at least 1", details={"T": T})
    if not 0.0 < beta_1 < beta_T < 1.0:
        raise InvalidRange(
            "need 0 < beta_1 < beta_T < 1", details={"beta_1": beta_1, "beta_T": beta_T}
        )
    return NoiseSchedule(np.linspace(beta_1, beta_T, T))


def _same_shape(*tensors: np.ndarray) -> None:
    shapes = {np.shape(x) for x in tensors}
    if len(shapes) > 1:
        raise ShapeMismatch(
            f"tensor shapes differ: {sorted(shapes)}", details={"shapes": [list(s) for s in shapes]}
        )


def forward_sample(x0: LatentTensor, t: int, eps: LatentTensor, s: NoiseSchedule) -> LatentTensor:
    """``x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps``."""
    _same_shape(x0, eps)
    abar = s.alpha_bar(t)
    return np.sqrt(abar) * np.asarray(x0, dtype=np.float64) + np.sqrt(1.0 - abar) * np.asarray(eps)


def forward_step(x_prev: LatentTensor, t: int, eps: LatentTensor, s: NoiseSchedule) -> LatentTensor:
    """One transition ``x_t = sqrt(alpha_t) x_{t-1} + sqrt(beta_t) eps``."""
    _same_shape(x_prev, eps)
    return np.sqrt(s.alpha(t)) * np.asarray(x_prev, dtype=np.float64) + np.sqrt(s.beta(t)) * np.asarray(eps)


def reverse_step(
    x_t: LatentTensor,
    t: int,
    eps_hat: LatentTensor,
    z: LatentTensor,
    sigma_t: float,
    s: NoiseSchedule,
) -> LatentTensor:
    """``x_{t-1} = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t) + sigma_t z``."""
    _same_shape(x_t, eps_hat, z)
    if sigma_t < 0.0:
        raise InvalidRange("sigma_t must be non-negative", details={"sigma_t": sigma_t})
    coef = s.beta(t) / np.sqrt(1.0 - s.alpha_bar(t))
    mean = (np.asarray(x_t, dtype=np.float64) - coef * np.asarray(eps_hat)) / np.sqrt(s.alpha(t))
    return mean + sigma_t * np.asarray(z)


def _predict(predictor: NoisePredictor, x_t: LatentTensor, t: int) -> LatentTensor:
    eps_hat = np.asarray(predictor(x_t, t), dtype=np.float64)
    _same_shape(x_t, eps_hat)
    return eps_hat


def simplified_loss(
    x0: LatentTensor, t: int, eps: LatentTensor, predictor: NoisePredictor, s: NoiseSchedule
) -> float:
    """``||eps - eps_hat(x_t, t)||^2`` at the noised sample."""
    x_t = forward_sample(x0, t, eps, s)
    residual = np.asarray(eps) - _predict(predictor, x_t, t)
    return float(np.sum(residual**2))


def sample(
    predictor: NoisePredictor,
    s: NoiseSchedule,
    shape: Sequence[int],
    seed: int,
    sigma: Union[SigmaMode, str] = SigmaMode.BETA,
    stream: int = 0,
) -> LatentTensor:
    """Ancestral sampling from ``x_T ~ N(0, I)`` down to ``x_0``; no noise at the last step."""
    rng = make_rng(seed, stream)
    x = rng.standard_normal(tuple(shape))
    for t in range(s.T, 0, -1):
        eps_hat = _predict(predictor, x, t)
        if t > 1:
            z = rng.standard_normal(x.shape)
            sigma_t = s.sigma(t, sigma)
        else:
            z = np.zeros_like(x)
            sigma_t = 0.0
        x = reverse_step(x, t, eps_hat, z, sigma_t, s)
    if not np.all(np.isfinite(x)):
        logger.warning("sampler produced non-finite values")
    return x


class GaussianOptimalPredictor:
    """Exact noise posterior mean when ``x0 ~ N(0, c^2 I)``."""

    def __init__(self, c: float, schedule: NoiseSchedule):
        if c <= 0:
            raise InvalidRange("data scale must be positive", details={"c": c})
        self.c = float(c)
        self.schedule = schedule

    def __call__(self, x_t: LatentTensor, t: int) -> LatentTensor:
        abar = self.schedule.alpha_bar(t)
        return np.asarray(x_t) * np.sqrt(1.0 - abar) / (self.c**2 * abar + 1.0 - abar)


class OraclePredictor:
    """Returns a fixed noise tensor, typically the one used to noise the input."""

    def __init__(self, eps: LatentTensor):
        self.eps = np.asarray(eps, dtype=np.float64)

    def __call__(self, x_t: LatentTensor, t: int) -> LatentTensor:
        return self.eps


class LinearNoisePredictor:
    """``eps_hat = weight * x_t`` with a scalar or elementwise weight."""

    def __init__(self, weight: Union[float, np.ndarray]):
        self.weight = np.asarray(weight, dtype=np.float64)

    def __call__(self, x_t: LatentTensor, t: int) -> LatentTensor:
        return self.weight * np.asarray(x_t)

    def loss_gradient(
        self, x0: LatentTensor, t: int, eps: LatentTensor, s: NoiseSchedule
    ) -> np.ndarray:
        """Gradient of :func:`simplified_loss` with respect to ``weight``."""
        x_t = forward_sample(x0, t, eps, s)
        grad = -2.0 * (np.asarray(eps) - self.weight * x_t) * x_t
        if self.weight.ndim == 0:
            return np.asarray(grad.sum())
        return grad


def latent(values: Sequence[float], shape: Optional[Sequence[int]] = None) -> LatentTensor:
    """Validated latent tensor from flat values and an optional shape."""
    array = np.asarray(values, dtype=np.float64)
    if shape is not None:
        if int(np.prod(shape)) != array.size:
            raise ShapeMismatch(
                f"{array.size} values cannot fill shape {tuple(shape)}",
                details={"size": array.size, "shape": list(shape)},
            )
        array = array.reshape(tuple(shape))
    if not np.all(np.isfinite(array)):
        raise InvalidRange("latent values must be finite")
    return array
