"""Synthetic loading scenarios and their CSV persistence.

Each scenario is one minute of a short window (80 minutes by default,
mimicking an afternoon high-solar period). Per bus, active load is the
nominal load scaled by a smooth random profile in ``[0.3, 1]``; reactive
load follows from a lagging power factor drawn from ``[0.9, 1]``. DER buses
add solar generation whose peak equals ``solar_ratio`` times the host's
nominal load. Injections are net: ``p = generation - load`` and
``q = -load * tan(acos(pf))``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioFormatError
from .grid_model import FeederModel, Scenario
from .objective import ScenarioBatch

FORMAT = "voltvar-scenarios/1"
LOAD_MIN, LOAD_MAX = 0.3, 1.0
PF_MIN, PF_MAX = 0.9, 1.0


@dataclass(frozen=True)
class ProfileParams:
    load_level: tuple[float, float]  # range of per-bus mean load factor
    solar_start: float  # clear-sky output at the first minute, fraction of peak
    solar_end: float  # and at the last minute
    cloud_depth: float = 0.15  # largest dip from passing clouds
    noise: float = 0.05  # AR(1) innovation scale for loads
    solar_ratio: float = 1.6  # DER peak output over host nominal load


PROFILES = {
    "high_solar": ProfileParams(load_level=(0.3, 0.45), solar_start=0.95, solar_end=0.7),
    "mixed": ProfileParams(load_level=(0.4, 0.7), solar_start=0.6, solar_end=0.3),
    "evening_peak": ProfileParams(load_level=(0.75, 0.95), solar_start=0.0, solar_end=0.0),
}


@dataclass
class ScenarioSet:
    P: np.ndarray  # (S, N) net active injections
    Q: np.ndarray  # (S, N) uncontrolled reactive injections
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        if self.P.shape != self.Q.shape:
            raise ScenarioFormatError(f"P {self.P.shape} and Q {self.Q.shape} shapes differ")
        if self.P.shape[0] < 1:
            raise ScenarioFormatError("a scenario set needs at least one scenario")

    @property
    def size(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[1]

    def __len__(self):
        return self.size

    def __getitem__(self, s: int) -> Scenario:
        return Scenario(self.P[s], self.Q[s])

    def __iter__(self):
        return (self[s] for s in range(self.size))

    def batch(self) -> ScenarioBatch:
        return ScenarioBatch(self.P, self.Q)

    def scaled(self, factor: float) -> ScenarioSet:
        return ScenarioSet(self.P * factor, self.Q * factor, dict(self.metadata, scaled=factor))

    def subset(self, rows) -> ScenarioSet:
        return ScenarioSet(self.P[rows], self.Q[rows], dict(self.metadata))


def _smooth(rng: np.random.Generator, n_steps: int, n_series: int, scale: float, rho: float = 0.9) -> np.ndarray:
    """Stationary AR(1) paths, one per column."""
    out = np.empty((n_steps, n_series))
    x = rng.normal(0.0, scale, n_series)
    innov = scale * np.sqrt(1.0 - rho**2)
    for t in range(n_steps):
        out[t] = x
        x = rho * x + rng.normal(0.0, innov, n_series)
    return out


def generate_synthetic(feeder: FeederModel, S: int, seed: int, profile: str = "high_solar") -> ScenarioSet:
    if S < 1:
        raise ValueError("S must be at least 1")
    try:
        prm = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}") from None
    rng = np.random.default_rng(seed)
    n = feeder.n
    p_nom = feeder.nominal_load()

    level = rng.uniform(*prm.load_level, size=n)
    u = np.clip(level + _smooth(rng, S, n, prm.noise), LOAD_MIN, LOAD_MAX)
    pf = rng.uniform(PF_MIN, PF_MAX, size=(S, n))
    p_load = u * p_nom
    q_load = p_load * np.tan(np.arccos(pf))

    clear = np.linspace(prm.solar_start, prm.solar_end, S)
    clouds = np.abs(_smooth(rng, S, 1, prm.cloud_depth, rho=0.95))[:, 0]
    per_der = _smooth(rng, S, len(feeder.ders), 0.03)
    gen = np.zeros((S, n))
    for k, der in enumerate(feeder.ders):
        host = p_nom[der.bus - 1]
        share = np.where(clear > 0, np.clip(clear - clouds + per_der[:, k], 0.0, 1.0), 0.0)
        gen[:, der.bus - 1] = prm.solar_ratio * host * share

    meta = {
        "format": FORMAT,
        "generator": "synthetic",
        "profile": profile,
        "seed": int(seed),
        "S": int(S),
        "N": int(n),
        "params": asdict(prm),
        "feeder": feeder.name,
    }
    return ScenarioSet(gen - p_load, -q_load, meta)


# -- persistence ----------------------------------------------------------------

def _header(n: int) -> list[str]:
    return [f"p_{i}" for i in range(1, n + 1)] + [f"q_{i}" for i in range(1, n + 1)]


def save(scenarios: ScenarioSet, path: str | Path) -> None:
    """Write ``path`` (CSV) and ``path.json`` (metadata)."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {FORMAT}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(scenarios.n))
        for s in range(scenarios.size):
            w.writerow([repr(float(x)) for x in np.concatenate([scenarios.P[s], scenarios.Q[s]])])
    meta = dict(scenarios.metadata, format=FORMAT, S=scenarios.size, N=scenarios.n)
    meta["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load(path: str | Path) -> ScenarioSet:
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().rstrip("\n")
        if first != f"# {FORMAT}":
            raise ScenarioFormatError(f"{path}:1: expected format line '# {FORMAT}', got {first!r}", row=1)
        rows = list(csv.reader(fh))
    if not rows:
        raise ScenarioFormatError(f"{path}: missing header row", row=2)
    header = rows[0]
    if len(header) % 2 or header != _header(len(header) // 2):
        raise ScenarioFormatError(f"{path}:2: header must be p_1..p_N,q_1..q_N", row=2, field="header")
    n = len(header) // 2
    data = []
    for lineno, row in enumerate(rows[1:], start=3):
        if len(row) != 2 * n:
            raise ScenarioFormatError(f"{path}:{lineno}: expected {2 * n} columns, got {len(row)}", row=lineno)
        vals = []
        for name, cell in zip(header, row):
            try:
                v = float(cell)
            except ValueError:
                raise ScenarioFormatError(f"{path}:{lineno}: field {name} is not a number: {cell!r}", row=lineno, field=name) from None
            if not np.isfinite(v):
                raise ScenarioFormatError(f"{path}:{lineno}: field {name} is not finite", row=lineno, field=name)
            vals.append(v)
        data.append(vals)
    if not data:
        raise ScenarioFormatError(f"{path}: no scenario rows", row=3)
    arr = np.array(data)
    meta_path = Path(str(path) + ".json")
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    meta.setdefault("source", str(path))
    return ScenarioSet(arr[:, :n], arr[:, n:], meta)
