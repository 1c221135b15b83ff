"""Acceptance criteria, one test per criterion.

Each test prints (and the terminal summary repeats) one PASS/FAIL line.
"""

import dataclasses
import time

import numpy as np
import pytest

from voltvar_ord import cli
from voltvar_ord.ac_validation import RadialNetwork, ac_equilibrium_batch, model_error
from voltvar_ord.autodiff import lagrangian, lagrangian_gradient
from voltvar_ord.config import load_config
from voltvar_ord.dynamics import check_stability, inner_ok, solve_batch
from voltvar_ord.objective import ChanceConfig
from voltvar_ord.projection import FeasibleSetSpec, project_feasible, project_z, to_transformed
from voltvar_ord.rules import RuleSet, eval_piecewise, eval_relu, validate_1547
from voltvar_ord.scenarios import generate_synthetic
from voltvar_ord.trainer import TrainerConfig, run_ord

from conftest import random_stable_z
from oracles import cvx_projection, feasibility_error, random_feasible, random_infeasible

EPSILON = 0.5
BETAS = (0.20, 0.15, 0.10, 0.05)


def test_1_gradient_fidelity(feeder, model, acceptance_report):
    rng = np.random.default_rng(2024)
    cfg = ChanceConfig()
    h, tol = 1e-6, 1e-10
    checked = skipped = 0
    worst = 0.0
    ok = True
    t0 = time.perf_counter()
    for _ in range(10):
        z = random_stable_z(model, rng, EPSILON)
        lam = rng.uniform(0.0, 0.1, model.n)
        theta = generate_synthetic(feeder, 8, int(rng.integers(1 << 31)), "high_solar")
        g = lagrangian_gradient(z, lam, model, theta, cfg, tol=tol)
        base = lagrangian(z, lam, model, theta, cfg, tol=tol).tape.eq.masks
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = h
            up = lagrangian(z + e, lam, model, theta, cfg, tol=tol)
            dn = lagrangian(z - e, lam, model, theta, cfg, tol=tol)
            if not (np.array_equal(up.tape.eq.masks, base) and np.array_equal(dn.tape.eq.masks, base)):
                skipped += 1
                continue
            fd = (up.total - dn.total) / (2 * h)
            err = abs(g[i] - fd)
            checked += 1
            ok = ok and (err <= 1e-4 * abs(fd) or err <= 1e-7)
            worst = max(worst, err / max(1e-4 * abs(fd), 1e-7))
    elapsed = time.perf_counter() - t0
    ok = ok and elapsed < 60 and checked >= (checked + skipped) // 2
    acceptance_report(
        1, "gradient fidelity", ok,
        f"10 instances, {checked} coordinates checked, {skipped} at kinks, worst error / tolerance {worst:.1e}, {elapsed:.1f}s",
    )
    assert ok


def test_2_equilibrium_correctness(model, benchmark, acceptance_report):
    v_tilde = benchmark.batch().v_tilde(model)
    rng = np.random.default_rng(7)
    spec = FeasibleSetSpec.from_model(model, EPSILON)
    rulesets = [
        RuleSet.from_vector(model.der_buses, project_z(TrainerConfig().initial_rules(model.der_buses).to_vector(), spec)),
        RuleSet.from_vector(model.der_buses, random_stable_z(model, rng, EPSILON)),
        RuleSet.from_vector(model.der_buses, random_stable_z(model, rng, EPSILON)),
        RuleSet.ieee_default(model.der_buses, model.q_hat),
    ]
    residual = agree = worst_ratio = 0.0
    ratio_ok = True
    n_spectral = 0
    t0 = time.perf_counter()
    for rs in rulesets:
        rec: list = []
        a = solve_batch(rs, model, v_tilde, record=rec)
        b = solve_batch(rs, model, v_tilde, q_init=model.q_hat)
        v_der = a.q_der @ model.X_der + v_tilde[:, model.der_index]
        residual = max(residual, float(np.max(np.abs(rs.evaluate(v_der) - a.q_der))))
        agree = max(agree, float(np.max(np.abs(a.q_der - b.q_der))))
        if check_stability(rs, model, EPSILON).spectral_ok:
            n_spectral += 1
            # q^0 = 0, q^{t+1} = f(v^t); compare successive step lengths per scenario
            q = np.stack([np.zeros_like(a.q_der)] + [rs.evaluate(v) for v in rec])
            steps = np.linalg.norm(np.diff(q, axis=0), axis=2)
            prev, nxt = steps[:-1], steps[1:]
            live = prev > 1e-12
            ratios = nxt[live] / prev[live]
            if ratios.size:
                worst_ratio = max(worst_ratio, float(ratios.max()))
            ratio_ok = ratio_ok and bool(np.all(ratios <= (1 - EPSILON) * (1 + 1e-9)))
    elapsed = time.perf_counter() - t0
    ok = residual <= 1e-6 and agree <= 1e-6 and ratio_ok and n_spectral >= 3 and elapsed < 10
    acceptance_report(
        2, "equilibrium correctness", ok,
        f"{len(rulesets)} rule sets x S=80, residual {residual:.1e}, start agreement {agree:.1e}, "
        f"worst contraction {worst_ratio:.3f} ({n_spectral} spectral-stable), {elapsed:.2f}s",
    )
    assert ok


def test_3_relu_piecewise_equivalence(acceptance_report):
    rng = np.random.default_rng(3)
    v = np.linspace(0.9, 1.1, 10_000)
    worst = 0.0
    for _ in range(100):
        vb, d = rng.uniform(0.95, 1.05), rng.uniform(0.0, 0.03)
        s = rng.uniform(d + 0.02, 0.18)
        a = rng.uniform(0.0, 50.0)
        worst = max(worst, float(np.max(np.abs(eval_relu(vb, d, s, a, v) - eval_piecewise(vb, d, s, a, v)))))
    ok = worst <= 1e-12
    acceptance_report(3, "ReLU/piecewise equivalence", ok, f"100 rules x 1e4 voltages, max deviation {worst:.1e}")
    assert ok


def test_4_projection(model, acceptance_report):
    spec = FeasibleSetSpec.from_model(model, EPSILON)
    rng = np.random.default_rng(4)
    ys = [random_feasible(spec, rng) for _ in range(100)]
    assert max(feasibility_error(y, spec) for y in ys) <= 0
    Y = np.array([y.to_vector() for y in ys])
    feas = idem = oracle = 0.0
    vi = -np.inf
    for _ in range(100):
        p = to_transformed(random_infeasible(spec.size, rng))
        x = project_feasible(p, spec)
        feas = max(feas, feasibility_error(x, spec))
        idem = max(idem, float(np.max(np.abs(project_feasible(x, spec).to_vector() - x.to_vector()))))
        xv = x.to_vector()
        vi = max(vi, float(np.max((Y - xv) @ (p.to_vector() - xv))))
        oracle = max(oracle, float(np.linalg.norm(xv - cvx_projection(p, spec).to_vector())))
    ok = feas <= 1e-8 and idem <= 1e-8 and vi <= 1e-6 and oracle <= 1e-6
    acceptance_report(
        4, "projection", ok,
        f"100 points: infeasibility {feas:.1e}, idempotence {idem:.1e}, variational inequality {vi:.1e}, oracle gap {oracle:.1e}",
    )
    assert ok


def test_5_inner_approximation(model, acceptance_report):
    rng = np.random.default_rng(5)
    X = model.X_der
    rows = X.sum(axis=1)
    bound = 1 - EPSILON
    worst = 0.0
    n_ok = 0
    for k in range(1000):
        d = X.shape[0]
        if k % 3 == 0:
            u = rng.uniform(0, 1, d)
        elif k % 3 == 1:
            u = rng.lognormal(0, 1.5, d)
        else:
            u = rng.uniform(0, 1, d) * (rng.uniform(size=d) < 0.3) + 1e-9  # mostly near-zero slopes
        alpha = u * bound / max(np.max(X @ u), np.max(u * rows))  # on the boundary of the linear conditions
        alpha *= 1.0 if k % 2 else rng.uniform(0, 1)
        assert inner_ok(alpha, X, EPSILON)
        norm = float(np.linalg.norm(alpha[:, None] * X, 2))
        worst = max(worst, norm)
        n_ok += norm <= bound + 1e-12
    ok = n_ok == 1000
    acceptance_report(5, "stability inner approximation", ok, f"1000 samples, largest ||diag(alpha)X|| = {worst:.6f} (bound {bound})")
    assert ok


@pytest.fixture(scope="module")
def beta_sweep(model, benchmark):
    base = load_config(None).trainer_config()
    t0 = time.perf_counter()
    results = {beta: run_ord(dataclasses.replace(base, beta=beta), model, benchmark) for beta in BETAS}
    return results, time.perf_counter() - t0


def test_6_end_to_end_trend(model, benchmark, beta_sweep, acceptance_report):
    results, elapsed = beta_sweep
    S = benchmark.size
    rows, ok_a, ok_c = [], True, True
    for beta, res in results.items():
        hard, loss = float(res.final.hard.max()), res.final.loss
        ok_a = ok_a and hard <= beta + 1.0 / S
        ok_c = ok_c and validate_1547(res.ruleset, model.q_hat) == [] and check_stability(res.ruleset, model, EPSILON).inner_ok
        rows.append(f"beta={beta:.2f}: {100 * hard:.2f}% / {loss:.4e} ({len(res.history)} it)")
    losses = [results[b].final.loss for b in BETAS]  # beta decreasing
    ok_b = all(a <= b for a, b in zip(losses, losses[1:]))
    ok = ok_a and ok_b and ok_c and elapsed < 15 * 60
    acceptance_report(6, "end-to-end trend", ok, "; ".join(rows) + f"; {elapsed:.0f}s")
    assert ok_a, "worst-case violation exceeds beta + 1/S"
    assert ok_b, f"losses not monotone in beta: {losses}"
    assert ok_c, "a designed rule set is infeasible"
    assert elapsed < 15 * 60


def test_7_ac_validation(feeder, model, benchmark, beta_sweep, acceptance_report):
    results, _ = beta_sweep
    net = RadialNetwork(feeder)
    rows, ok = [], True
    for beta, res in results.items():
        lin = solve_batch(res.ruleset, model, benchmark.batch().v_tilde(model))
        ac = ac_equilibrium_batch(res.ruleset, net, benchmark.P, benchmark.Q)
        err = model_error(lin.v, ac.v)
        ok = ok and err["mean_abs"] < 5e-3 and err["max_abs"] < 2e-2 and ac.max_mismatch <= 1e-9
        rows.append(f"beta={beta:.2f}: mean {err['mean_abs']:.1e} max {err['max_abs']:.1e} mismatch {ac.max_mismatch:.0e}")
    acceptance_report(7, "AC validation", ok, "; ".join(rows))
    assert ok


def test_ac_errors_insensitive_to_beta(feeder, model, benchmark, beta_sweep):
    results, _ = beta_sweep
    net = RadialNetwork(feeder)
    means = []
    for res in results.values():
        lin = solve_batch(res.ruleset, model, benchmark.batch().v_tilde(model))
        ac = ac_equilibrium_batch(res.ruleset, net, benchmark.P, benchmark.Q)
        err = model_error(lin.v, ac.v)
        assert err["mean_abs"] < err["max_abs"]
        means.append(err["mean_abs"])
    assert max(means) <= 2 * min(means)


def test_8_design_determinism(tmp_path, acceptance_report):
    outputs = []
    for run in ("a", "b"):
        assert cli.main(["design", "-o", str(tmp_path / run)]) == 0
        outputs.append(((tmp_path / run / "metrics.csv").read_bytes(), (tmp_path / run / "rules.csv").read_bytes()))
    ok = outputs[0][0] == outputs[1][0] and len(outputs[0][0]) > 0
    acceptance_report(8, "determinism", ok, f"metrics.csv {len(outputs[0][0])} bytes, rules identical: {outputs[0][1] == outputs[1][1]}")
    assert ok
