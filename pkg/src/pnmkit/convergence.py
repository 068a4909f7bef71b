"""Empirical verification of the PNM convergence guarantee.

For an L-smooth lower-bounded objective with bounded gradients and
bounded-variance noise, running positive-negative momentum for T = t + 1
iterations with the normalized step min{1/(2L), C/sqrt(t+1)} bounds the
best expected squared gradient norm:

    min_k E||grad f(theta_k)||^2
        <= 2 (f(theta_0) - f*) / (t+1) * max{2L, sqrt(t+1)/C}
           + C1 / sqrt(t+1),

    C1 = C [L (beta + beta0 (1-beta))^2 (G^2 + sigma^2)
            + L (1-beta)^2 sigma^2] / (1-beta)^2,  beta = beta1^2.

Both terms are O(1/sqrt(t)) once sqrt(t+1)/C exceeds 2L, so the fitted
log-log slope of the empirical minimum against the horizon should sit
near -1/2. The expectation is approximated by averaging over seeds; each
horizon is re-run from theta_0 with its own constant step, exactly as the
step rule prescribes. The gradient-norm bound G is measured on the
visited iterates (a global bound does not exist for quadratics), which
keeps the bound comparison honest rather than assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import DivergenceError, GradientOracle, RngStream
from .optim import Pnm, pn_normalization


@dataclass
class ConvergenceBoundInputs:
    """Constants entering the horizon-T bound."""

    smoothness: float            # L
    grad_bound: float            # G
    sigma2: float                # noise variance bound
    step_constant: float         # C in the step rule
    loss_gap: float              # f(theta_0) - f*
    beta1: float = 0.9
    beta0: float = 1.0

    def __post_init__(self):
        if min(self.smoothness, self.step_constant) <= 0:
            raise ValueError("L and C must be > 0")
        if self.grad_bound < 0 or self.sigma2 < 0:
            raise ValueError("G and sigma2 must be >= 0")
        if self.loss_gap < 0:
            raise ValueError("f(theta_0) must be >= f*")

    @property
    def beta(self) -> float:
        return self.beta1 * self.beta1


def theorem1_bound(inputs: ConvergenceBoundInputs, t: int) -> float:
    """The bound after t + 1 iterations (see module docstring)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    L, C = inputs.smoothness, inputs.step_constant
    beta, beta0 = inputs.beta, inputs.beta0
    g2s2 = inputs.grad_bound ** 2 + inputs.sigma2
    c1 = C * (
        L * (beta + beta0 * (1.0 - beta)) ** 2 * g2s2
        + L * (1.0 - beta) ** 2 * inputs.sigma2
    ) / (1.0 - beta) ** 2
    sqrt_t1 = math.sqrt(t + 1.0)
    return (
        2.0 * inputs.loss_gap / (t + 1.0) * max(2.0 * L, sqrt_t1 / C)
        + c1 / sqrt_t1
    )


def theorem_step_size(L: float, C: float, horizon: int) -> float:
    """Normalized step eta0 = min{1/(2L), C/sqrt(T)} for a T-step run."""
    return min(1.0 / (2.0 * L), C / math.sqrt(horizon))


@dataclass
class RateEstimate:
    """Per-horizon min-of-mean gradient norms plus the fitted slope.

    The expectation is taken first (seed average per iterate index), then
    the minimum over iterates, matching the quantity the bound controls;
    taking per-seed minima first would deflate the value by an
    order-statistic effect the bound says nothing about.
    """

    horizons: list[int]
    mean_min_grad_sq: np.ndarray          # min_k over the seed-averaged curve
    slope: float
    measured_grad_bound: float            # max ||grad f|| over visited iterates
    step_sizes: list[float] = field(default_factory=list)

    def bound_values(self, inputs: ConvergenceBoundInputs) -> np.ndarray:
        return np.array([theorem1_bound(inputs, T - 1) for T in self.horizons])


def _run_grad_sq_curve(
    oracle: GradientOracle,
    theta0: np.ndarray,
    horizon: int,
    eta0: float,
    beta0: float,
    beta1: float,
    rng: RngStream,
) -> tuple[np.ndarray, float]:
    """One PNM run; returns ||grad f(theta_k)||^2 for k = 0..horizon-1 and
    the largest gradient norm seen."""
    lr = eta0 * pn_normalization(beta0)
    opt = Pnm(dim=theta0.shape[0], lr=lr, beta0=beta0, beta1=beta1)
    theta = theta0.copy()
    curve = np.empty(horizon)
    for k in range(horizon):
        _, full = oracle.full_gradient(theta)
        curve[k] = full @ full
        sample = oracle.stochastic_gradient(theta, rng)
        theta = opt.step(theta, sample)
        if not np.all(np.isfinite(theta)) or np.max(np.abs(theta)) > 1e8:
            raise DivergenceError(
                f"PNM diverged at step {k} (horizon {horizon}, eta0 {eta0:g})"
            )
    return curve, math.sqrt(float(curve.max()))


def empirical_rate(
    oracle: GradientOracle,
    theta0,
    horizons: Sequence[int],
    seeds: Sequence[int],
    smoothness: float,
    step_constant: float = 1.0,
    beta0: float = 1.0,
    beta1: float = 0.9,
) -> RateEstimate:
    """min_k of the seed-averaged squared gradient norm per horizon, and
    the slope of its log-log fit against the horizon.

    Each (horizon, seed) pair restarts from ``theta0`` with the constant
    step the rule assigns to that horizon and an independent noise stream.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    horizons = [int(T) for T in horizons]
    if len(horizons) < 2:
        raise ValueError("need at least two horizons to fit a slope")
    mins = np.empty(len(horizons))
    g_max = 0.0
    steps = []
    for i, T in enumerate(horizons):
        eta0 = theorem_step_size(smoothness, step_constant, T)
        steps.append(eta0)
        acc = np.zeros(T)
        for seed in seeds:
            stream = RngStream(seed).spawn(i)
            curve, g = _run_grad_sq_curve(oracle, theta0, T, eta0, beta0, beta1, stream)
            acc += curve
            g_max = max(g_max, g)
        mins[i] = acc.min() / len(seeds)
    slope = float(np.polyfit(np.log(horizons), np.log(mins), 1)[0])
    return RateEstimate(horizons, mins, slope, g_max, steps)
