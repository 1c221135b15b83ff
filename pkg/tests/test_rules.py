import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voltvar_ord.errors import DimensionError, RuleError
from voltvar_ord.rules import (
    RuleParams,
    RuleSet,
    eval_piecewise,
    eval_relu,
    evaluate,
    load_ruleset,
    save_ruleset,
    slope_from,
    validate_1547,
)

valid_rule = st.tuples(
    st.floats(0.95, 1.05), st.floats(0.0, 0.03), st.floats(0.02, 0.15), st.floats(0.0, 50.0)
).map(lambda t: RuleParams(t[0], t[1], t[1] + t[2], t[3]))


def test_slope_examples():
    assert slope_from(0.44, 0.02, 0.08) == pytest.approx(7.333333333333333)
    assert slope_from(0.0, 0.01, 0.05) == 0.0
    with pytest.raises(RuleError):
        slope_from(0.1, 0.05, 0.05)
    with pytest.raises(RuleError):
        slope_from(-0.1, 0.0, 0.05)


def test_slope_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = rng.uniform(0, 0.03)
        s = d + rng.uniform(0.02, 0.15)
        q = rng.uniform(0, 1)
        assert RuleParams.from_q_bar(1.0, d, s, q).q_bar == pytest.approx(q, rel=1e-14, abs=1e-16)


def test_rule_shape_points():
    p = RuleParams.from_q_bar(1.0, 0.02, 0.08, 0.44)
    assert evaluate(p, p.v_bar) == 0.0
    assert evaluate(p, 1.08) == pytest.approx(-0.44)
    assert evaluate(p, 1.3) == pytest.approx(-0.44)
    assert evaluate(p, 0.92) == pytest.approx(0.44)
    assert evaluate(p, 0.5) == pytest.approx(0.44)
    assert evaluate(p, 1.0 + (0.02 + 0.08) / 2) == pytest.approx(-0.22)
    assert evaluate(p, 1.01) == 0.0
    assert evaluate(p, p.v_bar + p.sigma + 1) == pytest.approx(-p.q_bar)


@settings(max_examples=200, deadline=None)
@given(valid_rule, st.floats(0.8, 1.2))
def test_rule_is_odd_and_bounded(p, dv):
    v = p.v_bar + (dv - 1.0)
    up, down = evaluate(p, v), evaluate(p, 2 * p.v_bar - v)
    assert up == pytest.approx(-down, abs=1e-12)
    assert abs(up) <= p.q_bar + 1e-12


@settings(max_examples=100, deadline=None)
@given(valid_rule)
def test_rule_non_increasing(p):
    v = np.linspace(0.8, 1.2, 2001)
    q = evaluate(p, v)
    assert np.all(np.diff(q) <= 1e-12)


@settings(max_examples=100, deadline=None)
@given(valid_rule)
def test_relu_matches_piecewise(p):
    v = np.linspace(0.9, 1.1, 10_000)
    a = eval_relu(p.v_bar, p.delta, p.sigma, p.alpha, v)
    b = eval_piecewise(p.v_bar, p.delta, p.sigma, p.alpha, v)
    assert np.max(np.abs(a - b)) <= 1e-12 * max(1.0, p.q_bar)


def test_ruleset_vector_round_trip():
    rs = RuleSet([3, 5], [1.0, 1.01], [2.0, 3.0], [0.01, 0.02], [0.05, 0.06])
    again = RuleSet.from_vector(rs.buses, rs.to_vector())
    assert np.array_equal(again.to_vector(), rs.to_vector())
    assert list(rs.to_vector()) == [1.0, 1.01, 2.0, 3.0, 0.01, 0.02, 0.05, 0.06]
    with pytest.raises(DimensionError):
        RuleSet.from_vector([3, 5], np.zeros(7))
    with pytest.raises(DimensionError):
        RuleSet([3, 5], [1.0], [2.0, 3.0], [0.01, 0.02], [0.05, 0.06])


def test_ruleset_evaluate_broadcasts():
    rs = RuleSet.ieee_default([1, 2], [0.44, 0.2])
    V = np.array([[1.08, 0.92], [1.0, 1.05]])
    out = rs.evaluate(V)
    assert out.shape == (2, 2)
    assert np.allclose(out[0], [-0.44, 0.2])
    assert out[1, 0] == 0.0
    assert out[1, 1] == pytest.approx(-0.1)


def test_default_rules_pass_1547():
    rs = RuleSet.ieee_default([1, 2, 3], [0.44, 0.1, 0.3])
    assert np.allclose(rs.q_bar, [0.44, 0.1, 0.3])
    assert validate_1547(rs, [0.44, 0.1, 0.3]) == []
    assert validate_1547(RuleSet.zero([1, 2, 3]), [0.44, 0.1, 0.3]) == []


def test_1547_violations():
    rs = RuleSet.uniform([7], 1.0, 0.05, 0.09, 1.0)
    (v,) = validate_1547(rs, [1.0])
    assert v.bus == 7 and v.constraint.startswith("delta") and v.margin == pytest.approx(0.02)

    bad = validate_1547(RuleSet.uniform([7], 1.0, 0.02, 0.03, 1.0), [1.0])
    assert [b.constraint for b in bad] == ["sigma >= delta+0.02"]

    over = validate_1547(RuleSet.uniform([7], 1.0, 0.0, 0.1, 10.0), [0.5])
    assert [b.constraint for b in over] == ["q_bar <= q_hat"]
    assert over[0].margin == pytest.approx(0.5)


def test_csv_round_trip(tmp_path):
    rs = RuleSet([6, 18], [1.0131, 0.99], [0.1 / 3, 4.2], [0.0125, 0.0], [0.04, 0.02])
    path = tmp_path / "r.csv"
    save_ruleset(rs, path)
    again = load_ruleset(path)
    assert np.array_equal(again.to_vector(), rs.to_vector())
    assert np.array_equal(again.buses, rs.buses)
    assert path.read_text().splitlines()[0] == "bus,v_bar,delta,sigma,alpha,q_bar"


def test_csv_errors_name_the_line(tmp_path):
    path = tmp_path / "r.csv"
    path.write_text("bus,v_bar,delta,sigma,alpha,q_bar\n6,1.0,0.0,0.02,1.0\n")
    with pytest.raises(RuleError, match=":2:"):
        load_ruleset(path)
    path.write_text("bus,v_bar\n")
    with pytest.raises(RuleError, match="header"):
        load_ruleset(path)
