"""Independent reference implementations used by the tests."""

import warnings

import cvxpy as cp
import numpy as np

from voltvar_ord.projection import FeasibleSetSpec, TransformedPoint


def cvx_projection(p: TransformedPoint, spec: FeasibleSetSpec) -> TransformedPoint:
    """Projection onto the rule feasible set as a generic conic program."""
    d = spec.size
    vb, c, de, si = (cp.Variable(d) for _ in range(4))
    (v_lo, v_hi), (d_lo, d_hi) = spec.v_bar_bounds, spec.delta_bounds
    cons = [
        vb >= v_lo, vb <= v_hi,
        de >= d_lo, de <= d_hi,
        si >= de + spec.sigma_gap, si <= spec.sigma_max,
        si - de <= cp.multiply(spec.q_hat, c),
        c >= spec.X.sum(axis=1) / (1 - spec.epsilon),
        spec.X @ cp.inv_pos(c) <= 1 - spec.epsilon,
    ]
    obj = sum(cp.sum_squares(a - b) for a, b in ((vb, p.v_bar), (c, p.c), (de, p.delta), (si, p.sigma)))
    prob = cp.Problem(cp.Minimize(obj), cons)
    # at these tolerances Clarabel often stops one notch short and says so; the answer is still
    # far closer than a looser solve that reports success
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        prob.solve(solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    assert prob.status in ("optimal", "optimal_inaccurate"), prob.status
    return TransformedPoint(vb.value, c.value, de.value, si.value)


def feasibility_error(p: TransformedPoint, spec: FeasibleSetSpec) -> float:
    """Largest constraint violation, written out from the definitions in rule space."""
    alpha = 1.0 / p.c
    X, bound = spec.X, 1 - spec.epsilon
    q_bar = alpha * (p.sigma - p.delta)
    excess = [
        spec.v_bar_bounds[0] - p.v_bar, p.v_bar - spec.v_bar_bounds[1],
        spec.delta_bounds[0] - p.delta, p.delta - spec.delta_bounds[1],
        p.delta + spec.sigma_gap - p.sigma, p.sigma - spec.sigma_max,
        -q_bar, q_bar - spec.q_hat,
        X @ alpha - bound, alpha * X.sum(axis=1) - bound,
    ]
    return float(max(np.max(e) for e in excess))


def random_feasible(spec: FeasibleSetSpec, rng) -> TransformedPoint:
    """Sample the feasible set directly, without the projection."""
    d = spec.size
    v_bar = rng.uniform(*spec.v_bar_bounds, d)
    delta = rng.uniform(spec.delta_bounds[0], min(spec.delta_bounds[1], spec.sigma_max - spec.sigma_gap), d)
    sigma = rng.uniform(delta + spec.sigma_gap, spec.sigma_max)
    c = np.maximum(spec.X.sum(axis=1) / (1 - spec.epsilon), (sigma - delta) / spec.q_hat) * rng.uniform(1, 3, d)
    # growing c only relaxes the constraints that involve it
    c = c * max(1.0, float(np.max(spec.X @ (1 / c))) / (1 - spec.epsilon))
    return TransformedPoint(v_bar, c, delta, sigma)


def random_infeasible(d: int, rng) -> np.ndarray:
    """Random ``[v_bar; alpha; delta; sigma]`` violating several constraints."""
    return np.concatenate(
        [rng.uniform(0.9, 1.1, d), rng.uniform(0.05, 3.0, d), rng.uniform(-0.02, 0.06, d), rng.uniform(0.0, 0.25, d)]
    )
