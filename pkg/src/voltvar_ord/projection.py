"""Euclidean projection of rule parameters onto the design-feasible set.

The feasible set is not convex in ``z = [v_bar; alpha; delta; sigma]`` but is
convex in ``[v_bar; c; delta; sigma]`` with ``c = 1 / alpha``. In those
coordinates the constraints read (per DER ``n``)::

    v_lo <= v_bar_n <= v_hi
    d_lo <= delta_n <= d_hi
    delta_n + gap <= sigma_n <= s_max
    sigma_n - delta_n <= q_hat_n * c_n                (q_bar <= q_hat)
    c_n >= sum_m X[n, m] / (1 - eps)                   (row-sum stability)
    sum_m X[n, m] / c_m <= 1 - eps                     (column-sum stability)

``v_bar`` separates and is clamped. The remaining ``(c, delta, sigma)`` block
is solved with a log-barrier Newton method; the last family is the only
nonlinear one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rules
from .errors import ProjectionInfeasible, RuleError
from .grid_model import GridModel

ALPHA_MIN = 1e-6


@dataclass(frozen=True)
class TransformedPoint:
    v_bar: np.ndarray
    c: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.v_bar, self.c, self.delta, self.sigma])

    @classmethod
    def from_vector(cls, y) -> TransformedPoint:
        y = np.asarray(y, dtype=float)
        d = y.size // 4
        return cls(y[:d], y[d : 2 * d], y[2 * d : 3 * d], y[3 * d :])


@dataclass(frozen=True)
class FeasibleSetSpec:
    X: np.ndarray  # DER block of the reactance sensitivities
    epsilon: float
    q_hat: np.ndarray
    v_bar_bounds: tuple[float, float] = (rules.V_BAR_MIN, rules.V_BAR_MAX)
    delta_bounds: tuple[float, float] = (rules.DELTA_MIN, rules.DELTA_MAX)
    sigma_gap: float = rules.SIGMA_GAP
    sigma_max: float = rules.SIGMA_MAX

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        q_hat = np.asarray(self.q_hat, dtype=float).reshape(-1)
        if X.ndim != 2 or X.shape[0] != X.shape[1] or X.shape[0] != q_hat.size:
            raise ValueError(f"X {X.shape} and q_hat ({q_hat.size}) dimensions disagree")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "q_hat", q_hat)

    @classmethod
    def from_model(cls, model: GridModel, epsilon: float, **bounds) -> FeasibleSetSpec:
        return cls(model.X_der, epsilon, model.q_hat, **bounds)

    @property
    def size(self) -> int:
        return self.q_hat.size

    @property
    def c_min(self) -> np.ndarray:
        return self.X.sum(axis=1) / (1.0 - self.epsilon)

    def check(self) -> None:
        """Raise ProjectionInfeasible when the set has no interior."""
        v_lo, v_hi = self.v_bar_bounds
        d_lo, d_hi = self.delta_bounds
        problems = []
        if not v_lo < v_hi:
            problems.append(f"v_bar bounds {self.v_bar_bounds} are empty")
        if not d_lo < d_hi:
            problems.append(f"delta bounds {self.delta_bounds} are empty")
        if not d_lo + self.sigma_gap < self.sigma_max:
            problems.append(f"sigma cannot satisfy delta + {self.sigma_gap} <= sigma <= {self.sigma_max}")
        if not np.all(self.q_hat > 0):
            bad = np.flatnonzero(~(self.q_hat > 0)).tolist()
            problems.append(f"q_hat must be positive for q_bar <= q_hat with sigma > delta (DER positions {bad})")
        if np.any(self.X.sum(axis=1) <= 0):
            problems.append("X rows must have positive sums")
        if problems:
            raise ProjectionInfeasible("; ".join(problems))


def to_transformed(z, clamp: bool = True, alpha_min: float = ALPHA_MIN) -> TransformedPoint:
    """Map ``[v_bar; alpha; delta; sigma]`` to ``[v_bar; 1/alpha; delta; sigma]``."""
    z = np.asarray(z, dtype=float)
    d = z.size // 4
    alpha = z[d : 2 * d]
    if np.any(alpha <= 0):
        if not clamp:
            raise RuleError(f"nonpositive slopes at positions {np.flatnonzero(alpha <= 0).tolist()}")
        alpha = np.maximum(alpha, alpha_min)
    return TransformedPoint(z[:d].copy(), 1.0 / alpha, z[2 * d : 3 * d].copy(), z[3 * d :].copy())


def from_transformed(p: TransformedPoint) -> np.ndarray:
    if np.any(p.c <= 0):
        raise RuleError("c must be positive")
    return np.concatenate([p.v_bar, 1.0 / p.c, p.delta, p.sigma])


# -- constraint evaluation --------------------------------------------------

def _linear_system(spec: FeasibleSetSpec):
    """Rows ``A w <= b`` over ``w = [c; delta; sigma]``."""
    d = spec.size
    eye = np.eye(d)
    zero = np.zeros((d, d))
    d_lo, d_hi = spec.delta_bounds
    A = np.vstack(
        [
            np.hstack([zero, -eye, zero]),  # delta >= d_lo
            np.hstack([zero, eye, zero]),  # delta <= d_hi
            np.hstack([zero, eye, -eye]),  # sigma >= delta + gap
            np.hstack([zero, zero, eye]),  # sigma <= s_max
            np.hstack([-np.diag(spec.q_hat), -eye, eye]),  # sigma - delta <= q_hat c
            np.hstack([-eye, zero, zero]),  # c >= c_min
        ]
    )
    b = np.concatenate(
        [
            np.full(d, -d_lo),
            np.full(d, d_hi),
            np.full(d, -spec.sigma_gap),
            np.full(d, spec.sigma_max),
            np.zeros(d),
            -spec.c_min,
        ]
    )
    return A, b


def constraint_residuals(p: TransformedPoint, spec: FeasibleSetSpec) -> dict[str, np.ndarray]:
    """Signed residuals per constraint family; feasible means all ``<= 0``."""
    v_lo, v_hi = spec.v_bar_bounds
    d_lo, d_hi = spec.delta_bounds
    with np.errstate(divide="ignore"):
        inv_c = np.where(p.c > 0, 1.0 / p.c, np.inf)
    return {
        "v_bar": np.maximum(v_lo - p.v_bar, p.v_bar - v_hi),
        "delta": np.maximum(d_lo - p.delta, p.delta - d_hi),
        "sigma": np.maximum(p.delta + spec.sigma_gap - p.sigma, p.sigma - spec.sigma_max),
        "q_bar": p.sigma - p.delta - spec.q_hat * p.c,
        "row_sum": spec.c_min - p.c,
        "col_sum": spec.X @ inv_c - (1.0 - spec.epsilon),
    }


def max_violation(p: TransformedPoint, spec: FeasibleSetSpec) -> float:
    return float(max(np.max(r) for r in constraint_residuals(p, spec).values()))


# -- barrier Newton -----------------------------------------------------------

def _interior_start(spec: FeasibleSetSpec) -> np.ndarray:
    d = spec.size
    d_lo, d_hi = spec.delta_bounds
    delta0 = d_lo + 0.5 * min(d_hi - d_lo, spec.sigma_max - spec.sigma_gap - d_lo)
    sigma0 = 0.5 * (delta0 + spec.sigma_gap + spec.sigma_max)
    row = spec.X.sum(axis=1)
    kappa = max(
        2.0 * float(np.max(spec.c_min)),
        2.0 * float(np.max(row)) / (1.0 - spec.epsilon),
        2.0 * (sigma0 - delta0) / float(np.min(spec.q_hat)),
    )
    return np.concatenate([np.full(d, kappa), np.full(d, delta0), np.full(d, sigma0)])


class _Barrier:
    def __init__(self, spec: FeasibleSetSpec, target: np.ndarray):
        self.spec = spec
        self.d = spec.size
        self.A, self.b = _linear_system(spec)
        self.target = target
        self.cap = 1.0 - spec.epsilon

    def slacks(self, w):
        c = w[: self.d]
        lin = self.b - self.A @ w
        if np.any(c <= 0):
            return lin, np.full(self.d, -1.0)
        return lin, self.cap - self.spec.X @ (1.0 / c)

    def value(self, w, t):
        lin, nl = self.slacks(w)
        if np.any(lin <= 0) or np.any(nl <= 0):
            return np.inf
        r = w - self.target
        return 0.5 * t * (r @ r) - np.sum(np.log(lin)) - np.sum(np.log(nl))

    def grad_hess(self, w, t):
        d = self.d
        lin, nl = self.slacks(w)
        c = w[:d]
        g = t * (w - self.target)
        H = t * np.eye(w.size)
        inv_lin = 1.0 / lin
        g += self.A.T @ inv_lin
        H += (self.A.T * inv_lin**2) @ self.A
        # h_n(c) = sum_m X[n, m] / c_m
        J = -self.spec.X / c**2  # (n, m): dh_n/dc_m
        inv_nl = 1.0 / nl
        g[:d] += J.T @ inv_nl
        H[:d, :d] += (J.T * inv_nl**2) @ J
        H[:d, :d] += np.diag((2.0 * self.spec.X / c**3).T @ inv_nl)
        return g, H


def _solve(H, g):
    try:
        return np.linalg.solve(H, g)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, g, rcond=None)[0]


def _newton(bar: _Barrier, w, t, tol=1e-10, max_iter=100):
    f = bar.value(w, t)
    for _ in range(max_iter):
        g, H = bar.grad_hess(w, t)
        step = -_solve(H, g)
        dec2 = -(g @ step)
        # decrement below rounding of f: no further progress is measurable
        if dec2 / 2.0 <= max(tol, 1e-14 * abs(f)):
            break
        s = 1.0
        while True:
            w_new = w + s * step
            f_new = bar.value(w_new, t)
            if f_new <= f - 0.25 * s * dec2:
                break
            s *= 0.5
            if s < 1e-12:
                return w
        w, f = w_new, f_new
    return w


def _kkt_solve(bar: _Barrier, w, act_lin, act_nl, nu_lin, nu_nl, max_iter=30):
    """Newton on the KKT equations with the given constraints held active."""
    d = bar.d
    A = bar.A[act_lin]
    b = bar.b[act_lin]
    Xa = bar.spec.X[act_nl]
    n_w, n_a = w.size, act_lin.size + act_nl.size
    y = w.copy()
    for _ in range(max_iter):
        c = y[:d]
        if np.any(c <= 0):
            return None
        J = np.zeros((act_nl.size, n_w))
        J[:, :d] = -Xa / c**2
        G = np.vstack([A, J])
        r_stat = y - bar.target + G.T @ np.concatenate([nu_lin, nu_nl])
        r_prim = np.concatenate([A @ y - b, Xa @ (1.0 / c) - bar.cap])
        if max(np.max(np.abs(r_stat), initial=0), np.max(np.abs(r_prim), initial=0)) < 1e-15:
            break
        K = np.zeros((n_w + n_a, n_w + n_a))
        K[:n_w, :n_w] = np.eye(n_w)
        K[:d, :d] += np.diag((2.0 * Xa / c**3).T @ nu_nl)
        K[:n_w, n_w:] = G.T
        K[n_w:, :n_w] = G
        step = -_solve(K, np.concatenate([r_stat, r_prim]))
        y = y + step[:n_w]
        nu_lin = nu_lin + step[n_w : n_w + act_lin.size]
        nu_nl = nu_nl + step[n_w + act_lin.size :]
    return y, nu_lin, nu_nl


def _polish(bar: _Barrier, w, t, feas_tol=1e-12, mult_tol=1e-12, max_rounds=20):
    """Active-set refinement of a barrier iterate to machine precision.

    The active set is guessed from small slacks, then corrected one
    constraint at a time (drop a negative multiplier, add a violated
    constraint). Returns None if no certified KKT point is found; the caller
    keeps the strictly feasible barrier iterate.
    """
    lin, nl = bar.slacks(w)
    thresh = 10.0 / np.sqrt(t)
    act_lin = set(np.flatnonzero(lin < thresh).tolist())
    act_nl = set(np.flatnonzero(nl < thresh).tolist())
    mult = {("l", k): 1.0 / (t * lin[k]) for k in act_lin} | {("n", k): 1.0 / (t * nl[k]) for k in act_nl}
    for _ in range(max_rounds):
        al = np.array(sorted(act_lin), dtype=int)
        an = np.array(sorted(act_nl), dtype=int)
        out = _kkt_solve(
            bar, w, al, an,
            np.array([mult.get(("l", k), 0.0) for k in al]),
            np.array([mult.get(("n", k), 0.0) for k in an]),
        )
        if out is None:
            return None
        y, nu_lin, nu_nl = out
        mult = {("l", k): v for k, v in zip(al, nu_lin)} | {("n", k): v for k, v in zip(an, nu_nl)}
        worst_key, worst_val = min(mult.items(), key=lambda kv: kv[1], default=(None, 0.0))
        if worst_val < -mult_tol:
            kind, k = worst_key
            (act_lin if kind == "l" else act_nl).discard(k)
            continue
        lin_y, nl_y = bar.slacks(y)
        if np.min(lin_y, initial=np.inf) < -feas_tol or np.min(nl_y, initial=np.inf) < -feas_tol:
            if np.min(lin_y, initial=np.inf) <= np.min(nl_y, initial=np.inf):
                act_lin.add(int(np.argmin(lin_y)))
            else:
                act_nl.add(int(np.argmin(nl_y)))
            continue
        return y
    return None


def project_feasible(
    p: TransformedPoint, spec: FeasibleSetSpec, *, t_final: float = 1e10, mu: float = 20.0
) -> TransformedPoint:
    """Closest point (2-norm, transformed coordinates) of the feasible set to ``p``."""
    spec.check()
    v_lo, v_hi = spec.v_bar_bounds
    v_bar = np.clip(p.v_bar, v_lo, v_hi)
    target = np.concatenate([p.c, p.delta, p.sigma])
    if not np.all(np.isfinite(target)):
        raise ValueError("point to project must be finite")
    bar = _Barrier(spec, target)
    scale = max(1.0, float(np.max(np.abs(target))))
    w = _interior_start(spec)
    t = 1.0 / scale**2
    while True:
        w = _newton(bar, w, t)
        if t >= t_final:
            break
        t = min(t * mu, t_final)
    polished = _polish(bar, w, t)
    if polished is not None:
        w = polished
    d = spec.size
    return TransformedPoint(v_bar, w[:d], w[d : 2 * d], w[2 * d :])


def project_z(z, spec: FeasibleSetSpec, alpha_min: float = ALPHA_MIN) -> np.ndarray:
    """Transform, project and transform back."""
    return from_transformed(project_feasible(to_transformed(z, clamp=True, alpha_min=alpha_min), spec))
