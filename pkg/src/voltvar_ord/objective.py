"""Sample-average losses and voltage chance-constraint indicators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dynamics import BatchEquilibrium, solve_batch
from .grid_model import GridModel, approx_losses_batch, uncompensated_voltage_batch
from .rules import RuleSet


@dataclass(frozen=True)
class ChanceConfig:
    v_low: float = 0.97
    v_high: float = 1.03
    beta: float = 0.05
    gamma: float = 1e-4

    def __post_init__(self):
        if not self.v_low < self.v_high:
            raise ValueError(f"v_low ({self.v_low}) must be below v_high ({self.v_high})")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def v_ref(self) -> float:
        return 0.5 * (self.v_low + self.v_high)

    @property
    def radius(self) -> float:
        return 0.5 * (self.v_high - self.v_low)


def step(x):
    """Unit step with ``step(0) == 1``."""
    return np.where(np.asarray(x) >= 0, 1.0, 0.0)


def logistic(x, gamma: float):
    # expit branches on sign internally, so huge |x / gamma| saturates cleanly
    return expit(np.asarray(x, dtype=float) / gamma)


def logistic_derivative(x, gamma: float):
    u = logistic(x, gamma)
    return u * (1.0 - u) / gamma


def band_excess(v, cfg: ChanceConfig):
    """``(v - v_ref)^2 - radius^2``: nonnegative exactly outside the band."""
    return (np.asarray(v, dtype=float) - cfg.v_ref) ** 2 - cfg.radius**2


def g_n(v_n, cfg: ChanceConfig):
    return logistic(band_excess(v_n, cfg), cfg.gamma)


def hard_indicator(v, cfg: ChanceConfig):
    return step(band_excess(v, cfg))


@dataclass
class ScenarioBatch:
    """Loading conditions stacked as ``(S, N)`` arrays."""

    P: np.ndarray
    Q: np.ndarray

    @property
    def size(self) -> int:
        return self.P.shape[0]

    def v_tilde(self, model: GridModel) -> np.ndarray:
        return uncompensated_voltage_batch(model, self.P, self.Q)


def _as_batch(scenarios) -> ScenarioBatch:
    if isinstance(scenarios, ScenarioBatch):
        return scenarios
    if hasattr(scenarios, "batch"):
        return scenarios.batch()
    scenarios = list(scenarios)
    return ScenarioBatch(np.array([s.p_tilde for s in scenarios]), np.array([s.q_tilde for s in scenarios]))


def equilibria(ruleset: RuleSet, model: GridModel, scenarios, **opts) -> BatchEquilibrium:
    batch = _as_batch(scenarios)
    if batch.size < 1:
        raise ValueError("need at least one scenario")
    return solve_batch(ruleset, model, batch.v_tilde(model), **opts)


def violation_rates(v: np.ndarray, cfg: ChanceConfig, mode: str = "hard") -> np.ndarray:
    """Per-bus average over the rows of an ``(S, N)`` voltage array."""
    if mode == "hard":
        ind = hard_indicator(v, cfg)
    elif mode == "soft":
        ind = g_n(v, cfg)
    else:
        raise ValueError(f"mode must be 'hard' or 'soft', got {mode!r}")
    return ind.mean(axis=0)


def empirical_violation(ruleset: RuleSet, model: GridModel, scenarios, cfg: ChanceConfig, mode: str = "hard", **opts):
    eq = equilibria(ruleset, model, scenarios, **opts)
    return violation_rates(eq.v, cfg, mode)


def losses_at(eq: BatchEquilibrium, model: GridModel, scenarios) -> np.ndarray:
    batch = _as_batch(scenarios)
    return approx_losses_batch(model, eq.q_full(model), batch.P, batch.Q)


def average_loss(ruleset: RuleSet, model: GridModel, scenarios, **opts) -> float:
    eq = equilibria(ruleset, model, scenarios, **opts)
    return float(np.mean(losses_at(eq, model, scenarios)))
