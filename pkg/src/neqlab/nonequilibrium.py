"""Non-equilibrium pipeline: noise-conditioned denoising score matching over
trajectory snapshots, annealed Langevin sampling, and generic forward/reverse
SDE descriptors for the variance-exploding diffusion.

The score network takes (x, y, t/t_scale, standardized log sigma) and returns
the 2-D score of the noise-perturbed data distribution at that time and level.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import nn
from .exceptions import DivergenceError, MissingScoreError
from .rng import as_generator

SAMPLER_BOUND = 10.0


@dataclass(frozen=True)
class NoiseSchedule:
    """Geometric perturbation scales sigma_1 > ... > sigma_L."""

    sigma_max: float
    sigma_min: float
    levels: int

    def __post_init__(self):
        if not self.sigma_max > self.sigma_min > 0:
            raise ValueError("need sigma_max > sigma_min > 0")
        if self.levels < 2:
            raise ValueError("need at least two levels")
        ratios = self.sigmas[:-1] / self.sigmas[1:]
        if np.max(np.abs(ratios - ratios[0])) > 1e-12:
            raise ValueError("schedule is not geometric")

    @property
    def sigmas(self) -> np.ndarray:
        exp = np.arange(self.levels) / (self.levels - 1)
        return self.sigma_max * (self.sigma_min / self.sigma_max) ** exp

    @property
    def ratio(self) -> float:
        """Constant ratio sigma_i / sigma_{i+1} (> 1)."""
        return (self.sigma_max / self.sigma_min) ** (1.0 / (self.levels - 1))

    @property
    def log_sigma_moments(self) -> tuple[float, float]:
        logs = np.log(self.sigmas)
        return float(logs.mean()), float(logs.std())

    def to_dict(self) -> dict:
        return {
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "levels": self.levels,
        }


def make_schedule(sigma_max: float, sigma_min: float, levels: int) -> NoiseSchedule:
    return NoiseSchedule(sigma_max, sigma_min, levels)


@dataclass
class ScoreModel:
    """Noise-conditioned score field wrapping a DenseNet.

    The network predicts the noise-scaled score (the negative expected noise),
    so score(x, t, sigma) = net(x, y, t/t_scale, logsigma_std) / sigma. With
    the sigma^2 loss weighting this makes every noise level contribute
    gradients of the same magnitude."""

    net: nn.DenseNet
    schedule: NoiseSchedule
    t_scale: float

    def __post_init__(self):
        if self.net.layer_sizes[0] != 4 or self.net.layer_sizes[-1] != 2:
            raise ValueError("score net must map 4 inputs to 2 outputs")

    def _inputs(self, points, t_phys, sigma):
        pts = np.asarray(points, dtype=np.float64)
        n = len(pts)
        log_mu, log_sd = self.schedule.log_sigma_moments
        log_sd = log_sd if log_sd > 0 else 1.0
        t_col = np.broadcast_to(np.asarray(t_phys, dtype=np.float64), (n,))
        s_col = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (n,))
        return np.stack(
            [pts[:, 0], pts[:, 1], t_col / self.t_scale,
             (np.log(s_col) - log_mu) / log_sd],
            axis=-1,
        )

    def score(self, points, t_phys, sigma) -> np.ndarray:
        """Score at the given physical time(s) and noise level(s)."""
        pts = np.asarray(points, dtype=np.float64)
        out = nn.forward(self.net, self._inputs(pts, t_phys, sigma))
        s_col = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (len(pts),))
        return out / s_col[:, None]

    def score_fn(self, t_phys: float) -> Callable:
        """Freeze the physical time: callable (points, sigma) -> score."""
        return lambda points, sigma: self.score(points, t_phys, sigma)


def dsm_loss(model: ScoreModel, points, t_phys, rng):
    """Denoising score-matching loss and parameter gradients.

    Per item: draw a level i uniformly and z ~ N(0, I), perturb
    x_tilde = x + sigma_i * z, and accumulate
    sigma_i^2 * || model(x_tilde, t, sigma_i) + z / sigma_i ||^2
    (the sigma^2 weighting keeps per-level scales uniform). Returns
    (mean loss, Gradients)."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empty batch")
    n = len(pts)
    gen = as_generator(rng)
    sigmas = model.schedule.sigmas
    levels = gen.integers(0, len(sigmas), size=n)
    z = gen.standard_normal((n, 2))
    sig = sigmas[levels]
    perturbed = pts + sig[:, None] * z
    inputs = model._inputs(perturbed, t_phys, sig)
    out, cache = nn._forward_cache(model.net, inputs)
    resid = sig[:, None] * out + z  # sigma * score + z
    loss = float(np.mean(np.sum(resid**2, axis=1)))
    if not np.isfinite(loss):
        raise DivergenceError("non-finite DSM loss")
    cot = 2.0 * sig[:, None] * resid / n
    grads, _ = nn._backward_cache(model.net, cache, cot)
    return loss, grads


def train_score(train, model: ScoreModel, steps: int, rng,
                batch: int = 256, learning_rate: float = 1e-3):
    """Stochastic minimization of dsm_loss over uniformly drawn
    (trajectory, frame) snapshots. Returns (model, loss_history)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    gen = as_generator(rng)
    states = train.states
    times = train.times
    n_traj, n_frames, _ = states.shape
    state = nn.init_optimizer_state(model.net, learning_rate=learning_rate)
    history = np.empty(steps)
    for step in range(steps):
        ti = gen.integers(0, n_traj, size=batch)
        fi = gen.integers(0, n_frames, size=batch)
        loss, grads = dsm_loss(model, states[ti, fi], times[fi], gen)
        nn.optimizer_step(model.net, grads, state)
        history[step] = loss
    return model, history


def annealed_langevin(score_fn, x0, sigmas, eps: float, steps_per_level: int,
                      gen: np.random.Generator) -> np.ndarray:
    """Core annealed chain on arrays of shape (n, d) for any d.

    At level i the step size is alpha_i = eps * sigma_i^2 / sigma_L^2 and each
    of the K inner iterations applies
    x <- x + (alpha_i / 2) * score(x, sigma_i) + sqrt(alpha_i) * z."""
    x = np.asarray(x0, dtype=np.float64).copy()
    sigma_last = sigmas[-1]
    for sigma in sigmas:
        alpha = eps * sigma**2 / sigma_last**2
        root = math.sqrt(alpha)
        for _ in range(steps_per_level):
            z = gen.standard_normal(x.shape)
            x += 0.5 * alpha * score_fn(x, sigma) + root * z
            if np.any(np.abs(x) > SAMPLER_BOUND):
                raise DivergenceError("annealed chain diverged")
    return x


def annealed_langevin_sample(model: ScoreModel, t_phys: float, n: int,
                             eps: float = 2e-5, steps_per_level: int = 100,
                             rng=None) -> np.ndarray:
    """Sample n points at physical time t_phys by annealed Langevin dynamics,
    initialized from N(0, sigma_1^2 I)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    if steps_per_level < 1:
        raise ValueError("steps_per_level must be >= 1")
    gen = as_generator(rng)
    sigmas = model.schedule.sigmas
    x0 = gen.normal(0.0, sigmas[0], size=(n, 2))
    return annealed_langevin(
        model.score_fn(t_phys), x0, sigmas, eps, steps_per_level, gen
    )


def sample_at_times(model: ScoreModel, times, n_per_time: int,
                    eps: float = 2e-5, steps_per_level: int = 100,
                    rng=None) -> np.ndarray:
    """Annealed sampling for several physical times in one batched chain.

    Returns (len(times), n_per_time, 2); each row block is conditioned on its
    own time but all blocks share the level schedule and RNG stream."""
    times = np.asarray(times, dtype=np.float64)
    gen = as_generator(rng)
    t_col = np.repeat(times, n_per_time)
    sigmas = model.schedule.sigmas
    x0 = gen.normal(0.0, sigmas[0], size=(len(t_col), 2))
    out = annealed_langevin(
        lambda x, sigma: model.score(x, t_col, sigma),
        x0, sigmas, eps, steps_per_level, gen,
    )
    return out.reshape(len(times), n_per_time, 2)


@dataclass
class SdeDescriptor:
    """Coefficients of dx = drift(x, t) dt + diffusion(t) dW.

    Reverse-direction descriptors store the drift with the time-reversal sign
    folded in: integrate them with t running downward (the solvers in
    neqlab.fpe negate the drift and step t toward 0)."""

    drift: Callable[[np.ndarray, float], np.ndarray]
    diffusion: Callable[[float], float]
    direction: str = "forward"

    def __post_init__(self):
        if self.direction not in ("forward", "reverse"):
            raise ValueError("direction must be 'forward' or 'reverse'")


def ve_sigma_fn(schedule: NoiseSchedule) -> Callable[[float], float]:
    """Continuous interpolation of the schedule on diffusion time t in [0, 1]:
    sigma(0) = sigma_min, sigma(1) = sigma_max, geometric in between."""
    ratio = schedule.sigma_max / schedule.sigma_min

    def sigma(t: float) -> float:
        return schedule.sigma_min * ratio**t

    return sigma


def ve_accumulated_variance(schedule: NoiseSchedule, t: float) -> float:
    """Integral of sigma(u)^2 du from 0 to t for the interpolated schedule."""
    ratio = schedule.sigma_max / schedule.sigma_min
    lr = math.log(ratio)
    return schedule.sigma_min**2 * (ratio ** (2 * t) - 1.0) / (2 * lr)


def ve_horizon_for_variance(schedule: NoiseSchedule, variance: float) -> float:
    """Diffusion time at which the accumulated variance reaches the target."""
    ratio = schedule.sigma_max / schedule.sigma_min
    lr = math.log(ratio)
    return math.log(1.0 + 2.0 * variance * lr / schedule.sigma_min**2) / (2 * lr)


def make_ve_sde(schedule: NoiseSchedule, score=None,
                t_phys: float = 0.0) -> tuple[SdeDescriptor, SdeDescriptor]:
    """Forward/reverse descriptor pair for the variance-exploding diffusion.

    Forward: zero drift, diffusion sigma(t). Reverse: drift
    -sigma(t)^2 * score(x, sigma(t)), diffusion sigma(t). score may be a
    ScoreModel (conditioned at t_phys) or a callable (points, sigma) -> score;
    calling the reverse drift without one raises MissingScoreError."""
    sigma = ve_sigma_fn(schedule)

    def zero_drift(points, _t):
        return np.zeros_like(np.asarray(points, dtype=np.float64))

    if isinstance(score, ScoreModel):
        score_fn = score.score_fn(t_phys)
    else:
        score_fn = score

    def reverse_drift(points, t):
        if score_fn is None:
            raise MissingScoreError("reverse drift requires a score function")
        s = sigma(t)
        return -(s**2) * np.asarray(score_fn(points, s), dtype=np.float64)

    forward = SdeDescriptor(zero_drift, sigma, "forward")
    reverse = SdeDescriptor(reverse_drift, sigma, "reverse")
    return forward, reverse


def save_score_model(model: ScoreModel, path) -> None:
    nn.save_checkpoint(
        model.net, path,
        extra={"schedule": model.schedule.to_dict(), "t_scale": model.t_scale},
    )


def load_score_model(path) -> ScoreModel:
    net, _, doc = nn.load_checkpoint(path)
    sched = doc["schedule"]
    return ScoreModel(
        net,
        NoiseSchedule(sched["sigma_max"], sched["sigma_min"], sched["levels"]),
        doc["t_scale"],
    )
