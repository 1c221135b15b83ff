"""Exact AC power flow for radial feeders and closed-loop AC equilibria.

The linear model's voltage variable is the squared magnitude, so comparisons
here use ``|V|**2`` and the substation phasor is ``sqrt(v0)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import EquilibriumResult, ramp_masks
from .errors import DivergenceError, PowerFlowError
from .grid_model import FeederModel, Scenario, path_matrix
from .rules import RuleSet

MISMATCH_TOL = 1e-9
MAX_SWEEPS = 200
COLLAPSE_V = 0.5


@dataclass
class AcSolution:
    V: np.ndarray  # complex bus voltages, (N,) or (S, N), bus 0 excluded
    converged: bool
    iterations: int
    max_mismatch: float
    mismatches: list[float]

    @property
    def v_squared(self) -> np.ndarray:
        return np.abs(self.V) ** 2


class RadialNetwork:
    """Precomputed path structure for repeated sweeps on one feeder."""

    def __init__(self, feeder: FeederModel):
        feeder.validate()
        self.feeder = feeder
        self.T = path_matrix(feeder)
        self.z = np.array([complex(ln.r, ln.x) for ln in feeder.lines])
        self.V0 = complex(np.sqrt(feeder.v0))
        self.n = feeder.n
        self._Y = None

    @property
    def Y(self) -> np.ndarray:
        """Reduced bus admittance (slack eliminated), built from line admittances."""
        if self._Y is None:
            n = self.n
            Y = np.zeros((n + 1, n + 1), dtype=complex)
            for ln, z in zip(self.feeder.lines, self.z):
                y = 1.0 / z
                a, b = ln.from_bus, ln.to_bus
                Y[a, a] += y
                Y[b, b] += y
                Y[a, b] -= y
                Y[b, a] -= y
            self._Y = Y
        return self._Y

    def injections(self, V: np.ndarray) -> np.ndarray:
        """Complex power injected at buses 1..N for given voltages."""
        V = np.atleast_2d(V)
        full = np.hstack([np.full((V.shape[0], 1), self.V0), V])
        I = full @ self.Y.T
        return (full * np.conj(I))[:, 1:]

    def sweep(self, I: np.ndarray) -> np.ndarray:
        # backward: each line carries the injections of everything downstream
        J = I @ self.T
        # forward: accumulate drops from the substation down each path
        return self.V0 + (J * self.z) @ self.T.T

    def solve(self, p_inj, q_inj, *, tol: float = MISMATCH_TOL, max_sweeps: int = MAX_SWEEPS) -> AcSolution:
        p_inj = np.asarray(p_inj, dtype=float)
        q_inj = np.asarray(q_inj, dtype=float)
        single = p_inj.ndim == 1
        S = np.atleast_2d(p_inj + 1j * q_inj)
        if S.shape[1] != self.n:
            raise ValueError(f"injections have {S.shape[1]} buses, feeder has {self.n}")
        if not np.all(np.isfinite(S)):
            raise ValueError("injections must be finite")
        V = np.full(S.shape, self.V0)
        history: list[float] = []
        for it in range(1, max_sweeps + 1):
            I = np.conj(S / V)
            V = self.sweep(I)
            if np.min(np.abs(V)) < COLLAPSE_V:
                raise PowerFlowError(f"voltage collapse after {it} sweeps (|V| = {np.min(np.abs(V)):.3f} pu)", history)
            mismatch = float(np.max(np.abs(V * np.conj(I) - S)))
            history.append(mismatch)
            if mismatch < tol:
                break
        else:
            raise PowerFlowError(f"sweep did not converge in {max_sweeps} iterations (mismatch {history[-1]:.2e})", history)
        return AcSolution(V[0] if single else V, True, it, history[-1], history)


def ac_power_flow(feeder: FeederModel | RadialNetwork, p_inj, q_inj, **kw) -> AcSolution:
    net = feeder if isinstance(feeder, RadialNetwork) else RadialNetwork(feeder)
    return net.solve(p_inj, q_inj, **kw)


@dataclass
class AcBatchEquilibrium:
    q_der: np.ndarray
    v: np.ndarray  # squared magnitudes (S, N)
    iterations: int
    residuals: list[float]
    max_mismatch: float


def ac_equilibrium_batch(
    ruleset: RuleSet, feeder: FeederModel | RadialNetwork, P, Q, *, tol: float = 1e-7, max_iter: int = 1000
) -> AcBatchEquilibrium:
    """Iterate ``q = f(|V|^2)`` with exact AC voltages from ``q = 0``."""
    net = feeder if isinstance(feeder, RadialNetwork) else RadialNetwork(feeder)
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    idx = np.asarray(ruleset.buses) - 1
    q = np.zeros((P.shape[0], idx.size))
    residuals: list[float] = []
    worst_mismatch = 0.0
    for it in range(1, max_iter + 1):
        Qc = Q.copy()
        Qc[:, idx] += q
        sol = net.solve(P, Qc)
        worst_mismatch = max(worst_mismatch, sol.max_mismatch)
        v = np.abs(np.atleast_2d(sol.V)) ** 2
        q_next = ruleset.evaluate(v[:, idx])
        step = float(np.max(np.linalg.norm(q_next - q, axis=1)))
        residuals.append(step)
        q = q_next
        if step < tol:
            break
    else:
        raise DivergenceError(f"AC Volt/VAR iteration did not settle in {max_iter} steps", residuals)
    Qc = Q.copy()
    Qc[:, idx] += q
    sol = net.solve(P, Qc)
    v = np.abs(np.atleast_2d(sol.V)) ** 2
    return AcBatchEquilibrium(q, v, it, residuals, max(worst_mismatch, sol.max_mismatch))


def ac_equilibrium(ruleset: RuleSet, feeder: FeederModel | RadialNetwork, s: Scenario, **kw) -> EquilibriumResult:
    res = ac_equilibrium_batch(ruleset, feeder, s.p_tilde[None, :], s.q_tilde[None, :], **kw)
    q_full = np.zeros(s.n)
    idx = np.asarray(ruleset.buses) - 1
    q_full[idx] = res.q_der[0]
    return EquilibriumResult(q_full, res.v[0], res.iterations, res.residuals[-1], ramp_masks(ruleset, res.v[0, idx]))


def _voltages(x) -> np.ndarray:
    if hasattr(x, "v_star"):
        return np.asarray(x.v_star)
    if hasattr(x, "v"):
        return np.asarray(x.v)
    return np.asarray(x, dtype=float)


def model_error(lin, ac) -> dict[str, float]:
    """Mean and max of ``|v_lin - v_ac|`` over all buses and scenarios."""
    a, b = _voltages(lin), _voltages(ac)
    if a.shape != b.shape:
        raise ValueError(f"voltage arrays differ in shape: {a.shape} vs {b.shape}")
    err = np.abs(a - b)
    return {"mean_abs": float(err.mean()), "max_abs": float(err.max())}
