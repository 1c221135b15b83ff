"""Reverse-mode gradient of the sample-average Lagrangian through unrolled dynamics.

Forward: ``q^{t+1} = f(X_DD q^t + v_tilde_D; z)`` for ``t < T``, then
``v = X q^T + v_tilde``. The Lagrangian head is

    L = mean_s loss(q^T_s) + sum_n lam_n * (mean_s g_n(v_s) - beta)

and the sweep runs the recorded steps backwards. ReLU kinks use the
zero-derivative convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import BatchEquilibrium, solve_batch
from .errors import NonFiniteError
from .grid_model import GridModel
from .objective import ChanceConfig, ScenarioBatch, _as_batch, band_excess, g_n, logistic_derivative, losses_at
from .rules import RuleSet

GRADIENT_TOL = 1e-10


@dataclass
class Tape:
    v_der: list  # DER voltages fed to the rules at each step, each (S, D)
    eq: BatchEquilibrium

    @property
    def depth(self) -> int:
        return len(self.v_der)


@dataclass
class LagrangianValue:
    total: float
    loss_term: float
    constraint_terms: np.ndarray  # per-bus sample average of g_n
    beta: float
    lam: np.ndarray
    gradient: np.ndarray | None = None
    tape: Tape | None = field(default=None, repr=False)

    @property
    def slack(self) -> np.ndarray:
        """``mean_s g_n - beta``: the multipliers' ascent direction."""
        return self.constraint_terms - self.beta


def _ruleset(z, model: GridModel) -> RuleSet:
    if isinstance(z, RuleSet):
        return z
    return RuleSet.from_vector(model.der_buses, z)


def _check_lam(lam, model: GridModel) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (model.n,):
        raise ValueError(f"lambda must have length {model.n}, got {lam.shape}")
    if np.any(lam < 0):
        raise ValueError("lambda must be nonnegative")
    return lam


def forward(ruleset: RuleSet, model: GridModel, batch: ScenarioBatch, tol=GRADIENT_TOL, unroll_T=None) -> Tape:
    rec: list = []
    eq = solve_batch(ruleset, model, batch.v_tilde(model), tol=tol, record=rec, steps=unroll_T)
    return Tape(rec, eq)


def _value(tape: Tape, model: GridModel, batch: ScenarioBatch, lam: np.ndarray, cfg: ChanceConfig) -> LagrangianValue:
    loss = float(np.mean(losses_at(tape.eq, model, batch)))
    cons = g_n(tape.eq.v, cfg).mean(axis=0)
    total = loss + float(lam @ (cons - cfg.beta))
    return LagrangianValue(total, loss, cons, cfg.beta, lam, tape=tape)


def backward(ruleset: RuleSet, model: GridModel, batch: ScenarioBatch, lam, cfg: ChanceConfig, tape: Tape):
    """Gradient of the Lagrangian over ``z = [v_bar; alpha; delta; sigma]``."""
    idx = model.der_index
    n_s = batch.size
    eq = tape.eq
    q_full = eq.q_full(model)
    # loss head: d/dq of (q + q~)' R (q + q~) is 2 R (q + q~)
    q_bar = 2.0 * ((q_full + batch.Q) @ model.R)[:, idx] / n_s
    # constraint head through v = X q + v~
    x = band_excess(eq.v, cfg)
    v_adj = lam * logistic_derivative(x, cfg.gamma) * 2.0 * (eq.v - cfg.v_ref) / n_s
    q_bar = q_bar + v_adj @ model.X[:, idx]

    a, vb, d, s = ruleset.alpha, ruleset.v_bar, ruleset.delta, ruleset.sigma
    Xdd = model.X_der
    g_vbar = np.zeros_like(a)
    g_alpha = np.zeros_like(a)
    g_delta = np.zeros_like(a)
    g_sigma = np.zeros_like(a)
    for v_der in reversed(tape.v_der):
        r1 = v_der - vb - d
        r2 = v_der - vb - s
        r3 = vb - d - v_der
        r4 = vb - s - v_der
        m1, m2, m3, m4 = (r > 0 for r in (r1, r2, r3, r4))
        dq_dv = a * (-1.0 * m1 + m2 - m3 + m4)
        g_vbar -= np.sum(q_bar * dq_dv, axis=0)
        g_alpha += np.sum(q_bar * (-np.maximum(r1, 0) + np.maximum(r2, 0) + np.maximum(r3, 0) - np.maximum(r4, 0)), axis=0)
        g_delta += np.sum(q_bar * a * (1.0 * m1 - m3), axis=0)
        g_sigma += np.sum(q_bar * a * (1.0 * m4 - m2), axis=0)
        q_bar = (q_bar * dq_dv) @ Xdd
    grad = np.concatenate([g_vbar, g_alpha, g_delta, g_sigma])
    if not np.all(np.isfinite(grad)):
        bad = np.flatnonzero(~np.isfinite(grad))
        raise NonFiniteError(f"non-finite gradient entries at positions {bad.tolist()}")
    return grad


def lagrangian(z, lam, model: GridModel, scenarios, cfg: ChanceConfig, *, tol=GRADIENT_TOL, unroll_T=None) -> LagrangianValue:
    ruleset = _ruleset(z, model)
    lam = _check_lam(lam, model)
    batch = _as_batch(scenarios)
    tape = forward(ruleset, model, batch, tol=tol, unroll_T=unroll_T)
    return _value(tape, model, batch, lam, cfg)


def lagrangian_with_gradient(
    z, lam, model: GridModel, scenarios, cfg: ChanceConfig, *, tol=GRADIENT_TOL, unroll_T=None, tape: Tape | None = None
) -> LagrangianValue:
    """Value and gradient in one pass. ``tape`` reuses a forward pass at the same ``z``."""
    ruleset = _ruleset(z, model)
    lam = _check_lam(lam, model)
    batch = _as_batch(scenarios)
    if tape is None:
        tape = forward(ruleset, model, batch, tol=tol, unroll_T=unroll_T)
    val = _value(tape, model, batch, lam, cfg)
    if not np.isfinite(val.total):
        raise NonFiniteError(f"Lagrangian evaluated to {val.total}")
    val.gradient = backward(ruleset, model, batch, lam, cfg, tape)
    return val


def lagrangian_gradient(z, lam, model: GridModel, scenarios, cfg: ChanceConfig, unroll_T=None, *, tol=GRADIENT_TOL):
    return lagrangian_with_gradient(z, lam, model, scenarios, cfg, tol=tol, unroll_T=unroll_T).gradient
