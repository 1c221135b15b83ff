"""IEEE 1547 Volt/VAR rules: odd-symmetric, non-increasing, piecewise linear.

A rule is fixed by its center ``v_bar``, deadband half-width ``delta``,
saturation half-width ``sigma`` and the slope magnitude ``alpha`` of its two
sloped segments. The saturation level ``q_bar = alpha * (sigma - delta)`` is
derived, never stored independently.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, RuleError

# shape constraints on rule parameters
V_BAR_MIN, V_BAR_MAX = 0.95, 1.05
DELTA_MIN, DELTA_MAX = 0.0, 0.03
SIGMA_GAP, SIGMA_MAX = 0.02, 0.18

CSV_HEADER = ["bus", "v_bar", "delta", "sigma", "alpha", "q_bar"]


def slope_from(q_bar: float, delta: float, sigma: float) -> float:
    if not sigma > delta:
        raise RuleError(f"sigma ({sigma}) must exceed delta ({delta})")
    if q_bar < 0:
        raise RuleError(f"q_bar must be nonnegative, got {q_bar}")
    return q_bar / (sigma - delta)


@dataclass(frozen=True)
class RuleParams:
    v_bar: float
    delta: float
    sigma: float
    alpha: float

    @property
    def q_bar(self) -> float:
        return self.alpha * (self.sigma - self.delta)

    @classmethod
    def from_q_bar(cls, v_bar: float, delta: float, sigma: float, q_bar: float) -> RuleParams:
        return cls(v_bar, delta, sigma, slope_from(q_bar, delta, sigma))


def relu(x):
    return np.maximum(x, 0.0)


def eval_piecewise(v_bar, delta, sigma, alpha, v):
    """Evaluate the rule segment by segment (deadband, slope, saturation)."""
    d = np.asarray(v, dtype=float) - v_bar
    q_bar = alpha * (sigma - delta)
    shifted = np.sign(d) * np.maximum(np.abs(d) - delta, 0.0)
    return np.clip(-alpha * shifted, -q_bar, q_bar)


def eval_relu(v_bar, delta, sigma, alpha, v):
    """Same rule written as a combination of four ramps."""
    v = np.asarray(v, dtype=float)
    return alpha * (
        -relu(v - v_bar - delta) + relu(v - v_bar - sigma) + relu(v_bar - delta - v) - relu(v_bar - sigma - v)
    )


def evaluate(params: RuleParams, v):
    return eval_relu(params.v_bar, params.delta, params.sigma, params.alpha, v)


@dataclass(frozen=True)
class RuleSet:
    """Per-DER rule parameters, ordered like the grid model's DER buses."""

    buses: np.ndarray
    v_bar: np.ndarray
    alpha: np.ndarray
    delta: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        arrs = {}
        for name in ("v_bar", "alpha", "delta", "sigma"):
            a = np.array(getattr(self, name), dtype=float).reshape(-1)
            arrs[name] = a
        buses = np.array(self.buses, dtype=int).reshape(-1)
        for name, a in arrs.items():
            if a.shape != buses.shape:
                raise DimensionError(f"{name} has {a.size} entries for {buses.size} DER buses")
            object.__setattr__(self, name, a)
        object.__setattr__(self, "buses", buses)

    @property
    def size(self) -> int:
        return self.buses.size

    @property
    def q_bar(self) -> np.ndarray:
        return self.alpha * (self.sigma - self.delta)

    def __getitem__(self, i: int) -> RuleParams:
        return RuleParams(self.v_bar[i], self.delta[i], self.sigma[i], self.alpha[i])

    def to_vector(self) -> np.ndarray:
        """Flatten as ``[v_bar; alpha; delta; sigma]``."""
        return np.concatenate([self.v_bar, self.alpha, self.delta, self.sigma])

    @classmethod
    def from_vector(cls, buses, z) -> RuleSet:
        buses = np.asarray(buses, dtype=int)
        z = np.asarray(z, dtype=float)
        d = buses.size
        if z.shape != (4 * d,):
            raise DimensionError(f"rule vector must have length {4 * d}, got {z.shape}")
        return cls(buses, z[:d], z[d : 2 * d], z[2 * d : 3 * d], z[3 * d :])

    @classmethod
    def uniform(cls, buses, v_bar: float, delta: float, sigma: float, alpha) -> RuleSet:
        d = len(buses)
        return cls(buses, np.full(d, v_bar), np.broadcast_to(alpha, (d,)), np.full(d, delta), np.full(d, sigma))

    @classmethod
    def ieee_default(cls, buses, q_hat) -> RuleSet:
        """Factory-default rule: v_bar=1, delta=0.02, sigma=0.08, q_bar=q_hat."""
        q_hat = np.asarray(q_hat, dtype=float)
        return cls.uniform(buses, 1.0, 0.02, 0.08, q_hat / (0.08 - 0.02))

    @classmethod
    def zero(cls, buses) -> RuleSet:
        """Flat rules: DERs never inject reactive power."""
        return cls.uniform(buses, 1.0, 0.02, 0.08, 0.0)

    def evaluate(self, v_der: np.ndarray) -> np.ndarray:
        """Evaluate every rule at its own bus voltage; broadcasts over leading axes."""
        return eval_relu(self.v_bar, self.delta, self.sigma, self.alpha, v_der)


@dataclass(frozen=True)
class Violation:
    bus: int
    constraint: str
    margin: float

    def __str__(self):
        return f"bus {self.bus}: {self.constraint} violated by {self.margin:.6g}"


def validate_1547(ruleset: RuleSet, q_hats, tol: float = 1e-9) -> list[Violation]:
    """List every per-bus breach of the standard's shape constraints.

    ``margin`` is the positive amount by which the constraint is exceeded.
    """
    q_hats = np.broadcast_to(np.asarray(q_hats, dtype=float), ruleset.buses.shape)
    out = []
    for i, bus in enumerate(ruleset.buses):
        p = ruleset[i]
        checks = [
            ("v_bar >= 0.95", V_BAR_MIN - p.v_bar),
            ("v_bar <= 1.05", p.v_bar - V_BAR_MAX),
            ("delta >= 0", DELTA_MIN - p.delta),
            ("delta <= 0.03", p.delta - DELTA_MAX),
            ("sigma >= delta+0.02", p.delta + SIGMA_GAP - p.sigma),
            ("sigma <= 0.18", p.sigma - SIGMA_MAX),
            ("q_bar >= 0", -p.q_bar),
            ("q_bar <= q_hat", p.q_bar - q_hats[i]),
        ]
        for name, excess in checks:
            if excess > tol:
                out.append(Violation(int(bus), name, float(excess)))
    return out


# -- CSV ---------------------------------------------------------------------

def ruleset_to_csv(ruleset: RuleSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for i, bus in enumerate(ruleset.buses):
        p = ruleset[i]
        w.writerow([int(bus)] + [repr(float(x)) for x in (p.v_bar, p.delta, p.sigma, p.alpha, p.q_bar)])
    return buf.getvalue()


def save_ruleset(ruleset: RuleSet, path: str | Path) -> None:
    Path(path).write_text(ruleset_to_csv(ruleset), encoding="utf-8")


def load_ruleset(path: str | Path) -> RuleSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_HEADER:
        raise RuleError(f"{path}: expected header {','.join(CSV_HEADER)}")
    cols: dict[str, list] = {k: [] for k in CSV_HEADER}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(CSV_HEADER):
            raise RuleError(f"{path}:{lineno}: expected {len(CSV_HEADER)} fields, got {len(row)}")
        try:
            cols["bus"].append(int(row[0]))
            for k, val in zip(CSV_HEADER[1:], row[1:]):
                cols[k].append(float(val))
        except ValueError as exc:
            raise RuleError(f"{path}:{lineno}: {exc}") from exc
    return RuleSet(cols["bus"], cols["v_bar"], cols["alpha"], cols["delta"], cols["sigma"])
