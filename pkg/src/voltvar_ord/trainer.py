"""Primal-dual training of rule parameters for the sample-average design problem.

Each iteration takes a projected (Adam or plain) gradient step on the
Lagrangian in ``z``, re-solves the equilibria at the new rules, and takes a
projected ascent step on the multipliers using the logistic surrogate.
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tape, forward, lagrangian_with_gradient
from .dynamics import check_stability
from .grid_model import FeederModel, GridModel, build_sensitivities
from .objective import ChanceConfig, ScenarioBatch, _as_batch, g_n, hard_indicator, losses_at
from .projection import FeasibleSetSpec, project_z
from .rules import RuleSet, validate_1547

log = logging.getLogger(__name__)

METRICS_FORMAT = "voltvar-metrics/1"
METRICS_COLUMNS = ["k", "loss", "worst_hard", "worst_soft", "lambda_inf", "mu_z", "mu_lambda", "lagrangian"]


@dataclass(frozen=True)
class TrainerConfig:
    beta: float = 0.05
    gamma: float = 1e-4
    epsilon: float = 0.5
    v_low: float = 0.97
    v_high: float = 1.03
    K: int = 1000
    mu_z: float = 0.001
    mu_z_decay: float = 0.99
    mu_lambda: float = 0.0015
    mu_lambda_decay: float = 0.99
    z_init: tuple[float, float, float, float] = (1.0, 0.01, 0.03, 1.5)  # (v_bar, delta, sigma, alpha)
    optimizer: str = "adam"
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    eq_tol: float = 1e-7
    tol_z: float = 1e-6
    batch_size: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {self.beta}")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.mu_z < 0 or self.mu_lambda < 0:
            raise ValueError("step sizes must be nonnegative")
        if not (0.0 < self.mu_z_decay <= 1.0 and 0.0 < self.mu_lambda_decay <= 1.0):
            raise ValueError("step-size decay factors must lie in (0, 1]")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")
        if self.K < 0:
            raise ValueError("K must be nonnegative")

    @property
    def chance(self) -> ChanceConfig:
        return ChanceConfig(self.v_low, self.v_high, self.beta, self.gamma)

    def step_z(self, k: int) -> float:
        return self.mu_z * self.mu_z_decay**k

    def step_lambda(self, k: int) -> float:
        return self.mu_lambda * self.mu_lambda_decay**k

    def initial_rules(self, buses) -> RuleSet:
        v_bar, delta, sigma, alpha = self.z_init
        return RuleSet.uniform(buses, v_bar, delta, sigma, alpha)


class Adam:
    def __init__(self, size: int, betas=(0.9, 0.999), eps=1e-8):
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def direction(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad**2
        m_hat = self.m / (1 - self.b1**self.t)
        v_hat = self.v / (1 - self.b2**self.t)
        return m_hat / (np.sqrt(v_hat) + self.eps)


@dataclass
class IterationRecord:
    k: int
    loss: float
    hard: np.ndarray
    soft: np.ndarray
    lam: np.ndarray
    mu_z: float
    mu_lambda: float
    lagrangian: float

    def row(self) -> list:
        return [
            self.k, self.loss, float(self.hard.max()), float(self.soft.max()), float(np.max(self.lam, initial=0.0)),
            self.mu_z, self.mu_lambda, self.lagrangian,
        ]


@dataclass
class DesignResult:
    ruleset: RuleSet
    lam: np.ndarray
    history: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    error: str | None = None

    @property
    def lambda_trajectory(self) -> np.ndarray:
        return np.array([r.lam for r in self.history])

    @property
    def final(self) -> IterationRecord | None:
        return self.history[-1] if self.history else None

    def metrics_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {METRICS_FORMAT}\n")
        buf.write(",".join(METRICS_COLUMNS) + "\n")
        for rec in self.history:
            buf.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in rec.row()) + "\n")
        return buf.getvalue()


def primal_update(
    z: np.ndarray,
    grad: np.ndarray,
    mu: float,
    spec: FeasibleSetSpec,
    adam: Adam | None = None,
) -> np.ndarray:
    """Gradient step, reciprocal-slope transform, projection, transform back."""
    direction = grad if adam is None else adam.direction(grad)
    return project_z(z - mu * direction, spec)


def dual_update(lam: np.ndarray, soft_rates: np.ndarray, beta: float, mu: float) -> np.ndarray:
    return np.maximum(lam + mu * (soft_rates - beta), 0.0)


def run_ord(
    config: TrainerConfig,
    feeder: FeederModel | GridModel,
    scenarios,
    *,
    callback=None,
) -> DesignResult:
    model = build_sensitivities(feeder) if isinstance(feeder, FeederModel) else feeder
    batch = _as_batch(scenarios)
    if batch.size < 1:
        raise ValueError("need at least one scenario")
    cfg = config.chance
    spec = FeasibleSetSpec.from_model(model, config.epsilon)
    buses = model.der_buses
    n_s = batch.size
    rng = np.random.default_rng(config.seed)

    z = project_z(config.initial_rules(buses).to_vector(), spec)
    lam = np.zeros(model.n)
    adam = Adam(z.size, config.adam_betas, config.adam_eps) if config.optimizer == "adam" else None
    result = DesignResult(RuleSet.from_vector(buses, z), lam.copy())

    tape: Tape | None = forward(result.ruleset, model, batch, tol=config.eq_tol)
    try:
        for k in range(config.K):
            mu_z, mu_l = config.step_z(k), config.step_lambda(k)
            if config.batch_size and config.batch_size < n_s:
                rows = np.sort(rng.choice(n_s, config.batch_size, replace=False))
                mb = ScenarioBatch(batch.P[rows], batch.Q[rows])
                val = lagrangian_with_gradient(z, lam, model, mb, cfg, tol=config.eq_tol)
            else:
                val = lagrangian_with_gradient(z, lam, model, batch, cfg, tol=config.eq_tol, tape=tape)
            z_new = primal_update(z, val.gradient, mu_z, spec, adam)
            rules_new = RuleSet.from_vector(buses, z_new)

            tape = forward(rules_new, model, batch, tol=config.eq_tol)
            soft = g_n(tape.eq.v, cfg).mean(axis=0)
            hard = hard_indicator(tape.eq.v, cfg).mean(axis=0)
            loss = float(np.mean(losses_at(tape.eq, model, batch)))
            lam = dual_update(lam, soft, config.beta, mu_l)
            lagr = loss + float(lam @ (soft - config.beta))

            rec = IterationRecord(k, loss, hard, soft, lam.copy(), mu_z, mu_l, lagr)
            result.history.append(rec)
            stalled = float(np.max(np.abs(z_new - z))) < config.tol_z
            z = z_new
            result.ruleset, result.lam = rules_new, lam.copy()
            if callback is not None:
                callback(rec, rules_new)
            if stalled and hard.max() <= config.beta + 1.0 / n_s:
                result.converged = True
                log.info("converged at iteration %d", k)
                break
    except Exception as exc:  # keep partial results for the caller
        result.error = f"{type(exc).__name__}: {exc}"
        log.error("training aborted at iteration %d: %s", len(result.history), result.error)
        raise
    finally:
        problems = validate_1547(result.ruleset, model.q_hat)
        if problems:
            log.warning("final rules breach shape constraints: %s", "; ".join(map(str, problems)))
        if not check_stability(result.ruleset, model, config.epsilon).inner_ok:
            log.warning("final rules violate the inner stability condition")
    return result
