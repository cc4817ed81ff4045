"""Network case model and DC shift-factor (PTDF) computation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

__all__ = [
    "CaseError",
    "Generator",
    "Line",
    "NetworkCase",
    "ShiftFactorMatrix",
    "load_case",
    "builtin_case",
    "with_load_buses",
    "compute_shift_factors",
    "dc_power_flow",
]


class CaseError(ValueError):
    """Raised when a case file fails to parse or violates an invariant."""


@dataclass(frozen=True)
class Generator:
    bus: int          # 1-based bus id
    cost: float       # $/MWh
    pmin: float       # MW
    pmax: float       # MW
    ramp_up: float    # MW/min
    ramp_down: float  # MW/min


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float  # per-unit, > 0
    rating: float       # MW, > 0


@dataclass(frozen=True)
class NetworkCase:
    """Immutable dispatch instance: buses, lines, generators, slack bus.

    Bus ids are 1-based everywhere in the public surface. ``load_buses``
    lists the buses that carry (possibly negative) load; load vectors are
    indexed in that order.
    """

    n_bus: int
    lines: tuple[Line, ...]
    generators: tuple[Generator, ...]
    slack: int
    load_buses: tuple[int, ...]
    name: str = ""

    @property
    def n_line(self) -> int:
        return len(self.lines)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @property
    def n_load(self) -> int:
        return len(self.load_buses)

    @property
    def cost(self) -> np.ndarray:
        return np.array([g.cost for g in self.generators])

    @property
    def pmin(self) -> np.ndarray:
        return np.array([g.pmin for g in self.generators])

    @property
    def pmax(self) -> np.ndarray:
        return np.array([g.pmax for g in self.generators])

    @property
    def ratings(self) -> np.ndarray:
        return np.array([ln.rating for ln in self.lines])

    def validate(self) -> None:
        if self.n_bus < 1:
            raise CaseError("case needs at least one bus")
        if not 1 <= self.slack <= self.n_bus:
            raise CaseError(f"slack bus {self.slack} outside 1..{self.n_bus}")
        for k, ln in enumerate(self.lines):
            for end in (ln.from_bus, ln.to_bus):
                if not 1 <= end <= self.n_bus:
                    raise CaseError(f"line {k + 1}: bus {end} outside 1..{self.n_bus}")
            if ln.from_bus == ln.to_bus:
                raise CaseError(f"line {k + 1}: from and to bus coincide")
            if ln.susceptance <= 0:
                raise CaseError(f"line {k + 1}: susceptance {ln.susceptance} must be > 0")
            if ln.rating <= 0:
                raise CaseError(f"line {k + 1}: rating {ln.rating} must be > 0")
        if not self.generators:
            raise CaseError("case needs at least one generator")
        for k, g in enumerate(self.generators):
            if not 1 <= g.bus <= self.n_bus:
                raise CaseError(f"generator {k + 1}: bus {g.bus} outside 1..{self.n_bus}")
            if g.pmin > g.pmax:
                raise CaseError(
                    f"generator {k + 1}: pmin {g.pmin} exceeds pmax {g.pmax}"
                )
            if g.ramp_up < 0 or g.ramp_down < 0:
                raise CaseError(f"generator {k + 1}: ramp rates must be >= 0")
        if not self.load_buses:
            raise CaseError("load_buses is empty")
        if len(set(self.load_buses)) != len(self.load_buses):
            raise CaseError("load_buses contains duplicates")
        for b in self.load_buses:
            if not 1 <= b <= self.n_bus:
                raise CaseError(f"load bus {b} outside 1..{self.n_bus}")
        if not self._connected():
            raise CaseError("network graph is not connected")

    def _connected(self) -> bool:
        if self.n_bus == 1:
            return True
        adj: dict[int, set[int]] = {b: set() for b in range(1, self.n_bus + 1)}
        for ln in self.lines:
            adj[ln.from_bus].add(ln.to_bus)
            adj[ln.to_bus].add(ln.from_bus)
        seen = {1}
        stack = [1]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == self.n_bus


@dataclass(frozen=True)
class ShiftFactorMatrix:
    """DC PTDF referenced to the slack bus: MW flow per MW injection.

    ``h[l, b]`` is the flow induced on line ``l`` (oriented from_bus ->
    to_bus) by 1 MW injected at bus ``b`` and withdrawn at the slack bus.
    The slack column is identically zero.
    """

    h: np.ndarray  # n_line x n_bus
    slack: int

    @property
    def n_line(self) -> int:
        return self.h.shape[0]

    @property
    def n_bus(self) -> int:
        return self.h.shape[1]


def _as_float(obj, field, ctx):
    try:
        return float(obj[field])
    except KeyError:
        raise CaseError(f"{ctx}: missing field '{field}'") from None
    except (TypeError, ValueError):
        raise CaseError(f"{ctx}: field '{field}' is not numeric") from None


def load_case(path) -> NetworkCase:
    """Load and validate a case JSON file.

    Schema: ``{"buses": n, "lines": [{"from","to","susceptance","rating"}],
    "generators": [{"bus","cost","pmin","pmax","ramp_up","ramp_down"}],
    "slack": bus, "load_buses": [bus, ...] (optional), "name": str (optional)}``.
    """
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CaseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return case_from_dict(raw, name_default=str(path))


def case_from_dict(raw: dict, name_default: str = "") -> NetworkCase:
    for key in ("buses", "lines", "generators", "slack"):
        if key not in raw:
            raise CaseError(f"missing top-level key '{key}'")
    n_bus = int(raw["buses"])
    lines = tuple(
        Line(
            from_bus=int(ln.get("from", 0)),
            to_bus=int(ln.get("to", 0)),
            susceptance=_as_float(ln, "susceptance", f"line {k + 1}"),
            rating=_as_float(ln, "rating", f"line {k + 1}"),
        )
        for k, ln in enumerate(raw["lines"])
    )
    gens = tuple(
        Generator(
            bus=int(g.get("bus", 0)),
            cost=_as_float(g, "cost", f"generator {k + 1}"),
            pmin=_as_float(g, "pmin", f"generator {k + 1}"),
            pmax=_as_float(g, "pmax", f"generator {k + 1}"),
            ramp_up=_as_float(g, "ramp_up", f"generator {k + 1}"),
            ramp_down=_as_float(g, "ramp_down", f"generator {k + 1}"),
        )
        for k, g in enumerate(raw["generators"])
    )
    load_buses = tuple(int(b) for b in raw.get("load_buses", range(1, n_bus + 1)))
    case = NetworkCase(
        n_bus=n_bus,
        lines=lines,
        generators=gens,
        slack=int(raw["slack"]),
        load_buses=load_buses,
        name=str(raw.get("name", name_default)),
    )
    case.validate()
    return case


def builtin_case(name: str) -> NetworkCase:
    """Load one of the packaged fixture cases ('fig1' or 'fig13')."""
    ref = resources.files("sprlab").joinpath(f"cases/{name}.json")
    if not ref.is_file():
        raise CaseError(f"no builtin case named '{name}'")
    return case_from_dict(json.loads(ref.read_text()), name_default=name)


def with_load_buses(case: NetworkCase, load_buses) -> NetworkCase:
    """Same network with a different set of load-carrying buses."""
    out = dataclasses.replace(case, load_buses=tuple(int(b) for b in load_buses))
    out.validate()
    return out


def compute_shift_factors(case: NetworkCase) -> ShiftFactorMatrix:
    """Shift factors from the reduced nodal susceptance matrix.

    The slack row/column are deleted before inversion and a zero slack
    column is reinserted, so a unit injection at the slack bus induces no
    modeled flow.
    """
    case.validate()
    n, s = case.n_bus, case.slack - 1
    b_bus = np.zeros((n, n))
    for ln in case.lines:
        i, j = ln.from_bus - 1, ln.to_bus - 1
        b_bus[i, i] += ln.susceptance
        b_bus[j, j] += ln.susceptance
        b_bus[i, j] -= ln.susceptance
        b_bus[j, i] -= ln.susceptance
    keep = [k for k in range(n) if k != s]
    reduced = b_bus[np.ix_(keep, keep)]
    try:
        x_red = np.linalg.inv(reduced)
    except np.linalg.LinAlgError:
        raise CaseError("reduced susceptance matrix is singular") from None
    # bus angles per unit injection, slack angle pinned to zero
    theta = np.zeros((n, n))
    theta[np.ix_(keep, keep)] = x_red
    h = np.zeros((case.n_line, n))
    for l, ln in enumerate(case.lines):
        i, j = ln.from_bus - 1, ln.to_bus - 1
        h[l] = ln.susceptance * (theta[i] - theta[j])
    h[:, s] = 0.0
    return ShiftFactorMatrix(h=h, slack=case.slack)


def dc_power_flow(case: NetworkCase, injection: np.ndarray) -> np.ndarray:
    """Line flows for a balanced injection vector via a full DC solve.

    Independent of :func:`compute_shift_factors`: solves the reduced nodal
    equations for angles, then applies the branch flow law. Used as an
    oracle for the PTDF construction.
    """
    injection = np.asarray(injection, dtype=float)
    if injection.shape != (case.n_bus,):
        raise ValueError(f"injection must have shape ({case.n_bus},)")
    n, s = case.n_bus, case.slack - 1
    b_bus = np.zeros((n, n))
    for ln in case.lines:
        i, j = ln.from_bus - 1, ln.to_bus - 1
        b_bus[i, i] += ln.susceptance
        b_bus[j, j] += ln.susceptance
        b_bus[i, j] -= ln.susceptance
        b_bus[j, i] -= ln.susceptance
    keep = [k for k in range(n) if k != s]
    theta = np.zeros(n)
    theta[keep] = np.linalg.solve(b_bus[np.ix_(keep, keep)], injection[keep])
    return np.array(
        [ln.susceptance * (theta[ln.from_bus - 1] - theta[ln.to_bus - 1]) for ln in case.lines]
    )
