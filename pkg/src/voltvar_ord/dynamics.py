"""Closed-loop Volt/VAR dynamics and their stability conditions.

The dynamics alternate ``v = X q + v_tilde`` and ``q_n = f_n(v_n)`` at DER
buses. Unrolling ``T`` such steps is the recurrent emulator that gradients are
propagated through in :mod:`voltvar_ord.autodiff`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceError
from .grid_model import GridModel, Scenario, uncompensated_voltage
from .rules import RuleSet

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
FALLBACK_MAX_T = 2000


@dataclass(frozen=True)
class Stability:
    spectral_ok: bool
    inner_ok: bool
    spectral_norm: float


def spectral_norm(alpha: np.ndarray, model: GridModel) -> float:
    return float(np.linalg.norm(alpha[:, None] * model.X_der, 2))


def inner_ok(alpha: np.ndarray, X_der: np.ndarray, epsilon: float, tol: float = 1e-12) -> bool:
    """Linear sufficient condition for ``||diag(alpha) X||_2 <= 1 - epsilon``.

    Uses the DER block of ``X``; only those entries couple the dynamics. Both
    induced norms of ``diag(alpha) X`` are bounded, hence also the 2-norm.
    """
    bound = 1.0 - epsilon
    col = X_der @ alpha <= bound + tol
    row = alpha * X_der.sum(axis=1) <= bound + tol
    return bool(np.all(col) and np.all(row))


def check_stability(ruleset: RuleSet, model: GridModel, epsilon: float) -> Stability:
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    norm = spectral_norm(ruleset.alpha, model)
    return Stability(
        spectral_ok=norm <= 1.0 - epsilon,
        inner_ok=inner_ok(ruleset.alpha, model.X_der, epsilon),
        spectral_norm=norm,
    )


def depth_bound(q_hat, epsilon: float, epsilon1: float) -> int:
    """Unroll depth guaranteeing the iterate is within ``epsilon1`` of the fixed point."""
    if not epsilon1 > 0:
        raise ValueError(f"epsilon1 must be positive, got {epsilon1}")
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    scale = 2.0 * float(np.linalg.norm(np.asarray(q_hat, dtype=float)))
    if scale <= epsilon1:
        return 0
    return max(0, math.ceil((math.log(scale) - math.log(epsilon1)) / -math.log1p(-epsilon)))


def default_max_t(ruleset: RuleSet, model: GridModel, tol: float) -> int:
    rate = spectral_norm(ruleset.alpha, model)
    if rate >= 1.0:
        return FALLBACK_MAX_T
    if rate == 0.0:
        return 2
    q_scale = np.maximum(np.abs(ruleset.q_bar), model.q_hat if model.q_hat.size else 0.0)
    return depth_bound(q_scale, 1.0 - rate, tol) + 5


@dataclass
class BatchEquilibrium:
    """Equilibria for a batch of loading conditions (rows are scenarios)."""

    q_der: np.ndarray  # (S, D)
    v: np.ndarray  # (S, N)
    v_tilde: np.ndarray  # (S, N)
    iterations: int
    residuals: list[float]  # max over scenarios of the step 2-norm, per iteration
    masks: np.ndarray  # (S, D, 4) active ramps at the final step

    def q_full(self, model: GridModel) -> np.ndarray:
        q = np.zeros_like(self.v)
        q[:, model.der_index] = self.q_der
        return q


@dataclass
class EquilibriumResult:
    q_star: np.ndarray  # (N,) zero at non-DER buses
    v_star: np.ndarray  # (N,)
    iterations: int
    residual: float
    masks: np.ndarray  # (D, 4)


def ramp_masks(ruleset: RuleSet, v_der: np.ndarray) -> np.ndarray:
    """Which of the four ramps are strictly active (kinks count as inactive)."""
    vb, d, s = ruleset.v_bar, ruleset.delta, ruleset.sigma
    return np.stack(
        [v_der - vb - d > 0, v_der - vb - s > 0, vb - d - v_der > 0, vb - s - v_der > 0], axis=-1
    )


def solve_batch(
    ruleset: RuleSet,
    model: GridModel,
    v_tilde: np.ndarray,
    *,
    tol: float = DEFAULT_TOL,
    max_t: int | None = None,
    q_init: np.ndarray | None = None,
    record: list | None = None,
    steps: int | None = None,
) -> BatchEquilibrium:
    """Iterate the dynamics for every row of ``v_tilde`` until all rows settle.

    Stops when the largest per-scenario step ``||q^{t+1} - q^t||_2`` drops
    below ``tol``; with ``steps`` given, runs exactly that many steps
    instead. When ``record`` is a list, the DER voltages fed to the rules
    at each step are appended to it (the tape for reverse-mode sweeps).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    v_tilde = np.atleast_2d(np.asarray(v_tilde, dtype=float))
    idx = model.der_index
    Xdn = model.X[idx, :]  # (D, N): DER columns of X, transposed by symmetry
    Xdd = model.X_der
    n_s = v_tilde.shape[0]
    if max_t is None:
        max_t = default_max_t(ruleset, model, tol)
    q = np.zeros((n_s, idx.size)) if q_init is None else np.broadcast_to(q_init, (n_s, idx.size)).astype(float)
    vt_der = v_tilde[:, idx]
    residuals: list[float] = []
    t = 0
    while True:
        v_der = q @ Xdd + vt_der
        if record is not None:
            record.append(v_der)
        q_next = ruleset.evaluate(v_der)
        step = float(np.max(np.linalg.norm(q_next - q, axis=1))) if n_s else 0.0
        residuals.append(step)
        q = q_next
        t += 1
        if steps is not None:
            if t >= steps:
                break
            continue
        if step < tol:
            break
        if not np.isfinite(step) or t >= max_t:
            raise DivergenceError(
                f"Volt/VAR iteration did not settle after {t} steps (last step {step:.3e}, tol {tol:.1e}); "
                f"spectral norm of diag(alpha)X is {spectral_norm(ruleset.alpha, model):.4f}",
                residuals,
            )
    v = v_tilde + q @ Xdn
    return BatchEquilibrium(
        q_der=q, v=v, v_tilde=v_tilde, iterations=t, residuals=residuals, masks=ramp_masks(ruleset, v[:, idx])
    )


def equilibrium(
    ruleset: RuleSet,
    model: GridModel,
    s: Scenario,
    *,
    tol: float = DEFAULT_TOL,
    max_t: int | None = None,
    q_init: np.ndarray | None = None,
    epsilon: float | None = None,
) -> EquilibriumResult:
    if epsilon is not None and not check_stability(ruleset, model, epsilon).inner_ok:
        log.warning("rule slopes violate the inner stability condition; equilibrium may not exist")
    if q_init is not None:
        q_init = np.asarray(q_init, dtype=float)
        if q_init.shape == (model.n,):
            q_init = q_init[model.der_index]
    res = solve_batch(ruleset, model, uncompensated_voltage(model, s)[None, :], tol=tol, max_t=max_t, q_init=q_init)
    return EquilibriumResult(
        q_star=res.q_full(model)[0],
        v_star=res.v[0],
        iterations=res.iterations,
        residual=res.residuals[-1],
        masks=res.masks[0],
    )
