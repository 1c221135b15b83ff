"""Linearized single-phase feeder model.

Buses are numbered ``0..N`` with bus 0 the substation. Every vector in the
model (voltages, injections, rows/columns of ``R`` and ``X``) is indexed by
``bus - 1`` so that position ``i`` refers to bus ``i + 1``.

The sensitivity matrices use the LinDistFlow path-sum form::

    R[n, m] = 2 * sum(r_l for lines l shared by the paths 0->n and 0->m)

and likewise for ``X``. With the factor of two the linear voltage variable
tracks the *squared* voltage magnitude, which is what the AC comparisons in
:mod:`voltvar_ord.ac_validation` use.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DimensionError, FeederError

Q_HAT_FACTOR = 0.46  # sqrt(1.1**2 - 1), inverter kVA oversized by 10%


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    r: float
    x: float


@dataclass(frozen=True)
class Der:
    bus: int
    p_hat: float
    q_hat: float | None = None

    @property
    def q_cap(self) -> float:
        return Q_HAT_FACTOR * self.p_hat if self.q_hat is None else self.q_hat


@dataclass(frozen=True)
class Load:
    bus: int
    p_nom: float


@dataclass(frozen=True)
class FeederModel:
    buses: tuple[int, ...]
    lines: tuple[Line, ...]
    v0: float = 1.0
    ders: tuple[Der, ...] = ()
    loads: tuple[Load, ...] = ()
    name: str = ""

    @property
    def n(self) -> int:
        return len(self.buses) - 1

    @property
    def der_buses(self) -> np.ndarray:
        return np.array([d.bus for d in self.ders], dtype=int)

    @property
    def q_hat(self) -> np.ndarray:
        return np.array([d.q_cap for d in self.ders], dtype=float)

    @property
    def p_hat(self) -> np.ndarray:
        return np.array([d.p_hat for d in self.ders], dtype=float)

    def nominal_load(self) -> np.ndarray:
        """Nominal active load per bus, indexed ``bus - 1``."""
        p = np.zeros(self.n)
        for ld in self.loads:
            p[ld.bus - 1] += ld.p_nom
        return p

    def validate(self) -> None:
        n = self.n
        if n < 1:
            raise FeederError("feeder needs at least one bus besides the substation")
        if sorted(self.buses) != list(range(n + 1)):
            raise FeederError(f"bus ids must be exactly 0..{n}, got {sorted(self.buses)}")
        if len(self.lines) != n:
            raise FeederError(f"a radial feeder with {n + 1} buses needs {n} lines, got {len(self.lines)}")
        for k, ln in enumerate(self.lines):
            name = f"line {k} ({ln.from_bus}->{ln.to_bus})"
            if not (math.isfinite(ln.r) and ln.r > 0):
                raise FeederError(f"{name}: resistance must be positive, got {ln.r}")
            if not (math.isfinite(ln.x) and ln.x > 0):
                raise FeederError(f"{name}: reactance must be positive, got {ln.x}")
            if ln.from_bus == ln.to_bus:
                raise FeederError(f"{name}: self loop")
            for b in (ln.from_bus, ln.to_bus):
                if b < 0 or b > n:
                    raise FeederError(f"{name}: unknown bus {b}")
        # parent/child orientation is derived here, so lines may be listed either way
        _tree_order(self)
        seen = set()
        for d in self.ders:
            if not 1 <= d.bus <= n:
                raise FeederError(f"DER at bus {d.bus}: must sit on a non-substation bus")
            if d.bus in seen:
                raise FeederError(f"DER at bus {d.bus}: duplicate record")
            seen.add(d.bus)
            if not d.q_cap > 0:
                raise FeederError(f"DER at bus {d.bus}: q_hat must be positive, got {d.q_cap}")
        for ld in self.loads:
            if not 1 <= ld.bus <= n:
                raise FeederError(f"load at bus {ld.bus}: unknown bus")


def _tree_order(feeder: FeederModel) -> tuple[np.ndarray, np.ndarray]:
    """Return (parent bus, parent line index) per bus via BFS from bus 0.

    Raises FeederError naming the offending line for loops or islands.
    """
    n = feeder.n
    adj: dict[int, list[tuple[int, int]]] = {b: [] for b in range(n + 1)}
    for k, ln in enumerate(feeder.lines):
        adj[ln.from_bus].append((ln.to_bus, k))
        adj[ln.to_bus].append((ln.from_bus, k))
    parent = np.full(n + 1, -1, dtype=int)
    parent_line = np.full(n + 1, -1, dtype=int)
    visited = {0}
    queue = [0]
    while queue:
        b = queue.pop(0)
        for nb, k in adj[b]:
            if k == parent_line[b]:
                continue
            if nb in visited:
                ln = feeder.lines[k]
                raise FeederError(f"line {k} ({ln.from_bus}->{ln.to_bus}) closes a loop; feeder must be radial")
            visited.add(nb)
            parent[nb] = b
            parent_line[nb] = k
            queue.append(nb)
    if len(visited) != n + 1:
        missing = sorted(set(range(n + 1)) - visited)
        raise FeederError(f"buses {missing} are not connected to the substation")
    return parent, parent_line


def path_matrix(feeder: FeederModel) -> np.ndarray:
    """``T[i, k] = 1`` when line ``k`` lies on the path from bus 0 to bus ``i + 1``."""
    parent, parent_line = _tree_order(feeder)
    n = feeder.n
    T = np.zeros((n, n))
    for b in range(1, n + 1):
        node = b
        while node != 0:
            T[b - 1, parent_line[node]] = 1.0
            node = parent[node]
    return T


@dataclass(frozen=True)
class GridModel:
    R: np.ndarray
    X: np.ndarray
    v0: float
    der_buses: np.ndarray  # bus ids of DERs, order fixes the rule vector layout
    q_hat: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n(self) -> int:
        return self.R.shape[0]

    @property
    def der_index(self) -> np.ndarray:
        """Positions of DER buses in bus-indexed vectors."""
        return np.asarray(self.der_buses, dtype=int) - 1

    @property
    def X_der(self) -> np.ndarray:
        idx = self.der_index
        return self.X[np.ix_(idx, idx)]


@dataclass(frozen=True)
class Scenario:
    p_tilde: np.ndarray
    q_tilde: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_tilde, dtype=float)
        q = np.asarray(self.q_tilde, dtype=float)
        if p.ndim != 1 or p.shape != q.shape:
            raise DimensionError(f"p_tilde {p.shape} and q_tilde {q.shape} must be equal-length vectors")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise DimensionError("scenario entries must be finite")
        object.__setattr__(self, "p_tilde", p)
        object.__setattr__(self, "q_tilde", q)

    @property
    def n(self) -> int:
        return self.p_tilde.shape[0]


def build_sensitivities(feeder: FeederModel) -> GridModel:
    feeder.validate()
    T = path_matrix(feeder)
    r = np.array([ln.r for ln in feeder.lines])
    x = np.array([ln.x for ln in feeder.lines])
    R = 2.0 * (T * r) @ T.T
    X = 2.0 * (T * x) @ T.T
    # exact symmetry; the products above can differ in the last ulp
    R = 0.5 * (R + R.T)
    X = 0.5 * (X + X.T)
    return GridModel(R=R, X=X, v0=float(feeder.v0), der_buses=feeder.der_buses, q_hat=feeder.q_hat)


def _check_len(model: GridModel, name: str, vec: np.ndarray) -> None:
    if vec.shape[-1] != model.n:
        raise DimensionError(f"{name} has length {vec.shape[-1]}, model has {model.n} buses")


def uncompensated_voltage(model: GridModel, s: Scenario) -> np.ndarray:
    """Voltages with zero DER reactive injection: ``R p + X q + v0``."""
    _check_len(model, "p_tilde", s.p_tilde)
    return model.R @ s.p_tilde + model.X @ s.q_tilde + model.v0


def uncompensated_voltage_batch(model: GridModel, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Row-wise :func:`uncompensated_voltage` for ``(S, N)`` loading arrays."""
    P = np.atleast_2d(P)
    Q = np.atleast_2d(Q)
    _check_len(model, "p_tilde", P)
    _check_len(model, "q_tilde", Q)
    return P @ model.R + Q @ model.X + model.v0


def approx_losses(model: GridModel, q: np.ndarray, s: Scenario) -> float:
    q = np.asarray(q, dtype=float)
    _check_len(model, "q", q)
    _check_len(model, "p_tilde", s.p_tilde)
    w = q + s.q_tilde
    return float(w @ model.R @ w + s.p_tilde @ model.R @ s.p_tilde)


def approx_losses_batch(model: GridModel, Qc: np.ndarray, P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Per-scenario losses for ``(S, N)`` arrays of controlled/uncontrolled injections."""
    W = Qc + Q
    return np.einsum("si,ij,sj->s", W, model.R, W) + np.einsum("si,ij,sj->s", P, model.R, P)


# -- feeder files ----------------------------------------------------------

def feeder_from_dict(doc: dict) -> FeederModel:
    try:
        lines = tuple(Line(int(d["from"]), int(d["to"]), float(d["r"]), float(d["x"])) for d in doc["lines"])
        ders = tuple(
            Der(int(d["bus"]), float(d["p_hat"]), None if d.get("q_hat") is None else float(d["q_hat"]))
            for d in doc.get("ders", [])
        )
        loads = tuple(Load(int(d["bus"]), float(d["p_nom"])) for d in doc.get("loads", []))
        buses = tuple(int(b) for b in doc["buses"])
        feeder = FeederModel(
            buses=buses, lines=lines, v0=float(doc.get("v0", 1.0)), ders=ders, loads=loads,
            name=str(doc.get("name", "")),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"malformed feeder document: {exc!r}") from exc
    feeder.validate()
    return feeder


def feeder_to_dict(feeder: FeederModel) -> dict:
    return {
        "format": "voltvar-feeder/1",
        "name": feeder.name,
        "v0": feeder.v0,
        "buses": list(feeder.buses),
        "lines": [{"from": ln.from_bus, "to": ln.to_bus, "r": ln.r, "x": ln.x} for ln in feeder.lines],
        "ders": [{"bus": d.bus, "p_hat": d.p_hat, "q_hat": d.q_cap} for d in feeder.ders],
        "loads": [{"bus": ld.bus, "p_nom": ld.p_nom} for ld in feeder.loads],
    }


def load_feeder(path: str | Path) -> FeederModel:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return feeder_from_dict(doc)


def save_feeder(feeder: FeederModel, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(feeder_to_dict(feeder), fh, indent=2)
        fh.write("\n")


def ieee37() -> FeederModel:
    """Bundled single-phase equivalent of the IEEE 37-bus feeder."""
    text = resources.files("voltvar_ord.data").joinpath("ieee37.json").read_text(encoding="utf-8")
    return feeder_from_dict(json.loads(text))
