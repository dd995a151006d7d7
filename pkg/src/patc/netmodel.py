"""Grid model: MATPOWER-subset case parsing, admittance assembly, contingencies.

All electrical quantities are stored per-unit on the system MVA base.
Networks are immutable after construction; `apply_contingency` returns an
independent copy with the outaged facility removed and emergency limits
activated.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BusKind",
    "Status",
    "Bus",
    "Branch",
    "Generator",
    "Network",
    "CaseSyntaxError",
    "CaseSemanticError",
    "IslandingError",
    "UnknownFacilityError",
    "parse_case",
    "serialize_case",
    "build_admittance",
    "apply_contingency",
]


class BusKind(enum.Enum):
    PQ = 1
    PV = 2
    SLACK = 3


class Status(enum.Enum):
    IN_SERVICE = 1
    OUTAGED = 0


class CaseSyntaxError(ValueError):
    """Malformed case text; message carries the 1-based line number."""


class CaseSemanticError(ValueError):
    """Structurally valid case text with inconsistent content."""


class IslandingError(RuntimeError):
    """An outage would disconnect the network."""


class UnknownFacilityError(KeyError):
    """Facility id does not resolve to an in-service generator or branch."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: BusKind
    voltage_magnitude: float = 1.0
    voltage_angle: float = 0.0
    p_load: float = 0.0
    q_load: float = 0.0
    v_min_normal: float = 0.95
    v_max_normal: float = 1.05
    v_min_emergency: float = 0.90
    v_max_emergency: float = 1.10
    shunt_g: float = 0.0
    shunt_b: float = 0.0
    area: int = 1
    base_kv: float = 0.0

    def __post_init__(self):
        if not self.v_min_normal <= self.v_max_normal:
            raise CaseSemanticError(f"bus {self.id}: v_min_normal > v_max_normal")
        if self.v_min_emergency > self.v_min_normal or self.v_max_emergency < self.v_max_normal:
            raise CaseSemanticError(f"bus {self.id}: emergency voltage band must contain the normal band")


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_charging: float = 0.0
    tap_ratio: float = 1.0
    phase_shift: float = 0.0
    s_max_normal: float = 0.0  # 0 means unlimited
    s_max_emergency: float = 0.0
    status: Status = Status.IN_SERVICE

    def __post_init__(self):
        if self.from_bus == self.to_bus:
            raise CaseSemanticError(f"branch {self.from_bus}-{self.to_bus}: from == to")
        if self.x == 0.0:
            raise CaseSemanticError(f"branch {self.from_bus}-{self.to_bus}: zero reactance")
        if self.s_max_normal > 0.0 and self.s_max_emergency < self.s_max_normal:
            raise CaseSemanticError(
                f"branch {self.from_bus}-{self.to_bus}: emergency rating below normal rating"
            )


@dataclass(frozen=True)
class Generator:
    bus: int
    p_gen: float = 0.0
    q_gen: float = 0.0
    p_min: float = 0.0
    p_max: float = 0.0
    q_min: float = 0.0
    q_max: float = 0.0
    v_setpoint: float = 1.0
    status: Status = Status.IN_SERVICE

    def __post_init__(self):
        if self.p_min > self.p_max:
            raise CaseSemanticError(f"generator at bus {self.bus}: p_min > p_max")
        if self.q_min > self.q_max:
            raise CaseSemanticError(f"generator at bus {self.bus}: q_min > q_max")


@dataclass(frozen=True)
class Network:
    """Validated grid model with the bus admittance matrix prebuilt.

    `emergency_limits` flags whether downstream limit checks should use the
    emergency (post-contingency) bands and ratings instead of the normal ones.
    """

    mva_base: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    emergency_limits: bool = False
    admittance: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        ids = [b.id for b in self.buses]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CaseSemanticError(f"duplicate bus id(s): {dup}")
        known = set(ids)
        for br in self.branches:
            for end in (br.from_bus, br.to_bus):
                if end not in known:
                    raise CaseSemanticError(
                        f"branch {br.from_bus}-{br.to_bus} references unknown bus {end}"
                    )
        for g in self.generators:
            if g.bus not in known:
                raise CaseSemanticError(f"generator references unknown bus {g.bus}")
        slacks = [b.id for b in self.buses if b.kind is BusKind.SLACK]
        if len(slacks) != 1:
            raise CaseSemanticError(f"expected exactly one slack bus, found {slacks}")
        if not _is_connected(self):
            raise IslandingError("network is not connected over in-service branches")
        if self.admittance is None:
            object.__setattr__(self, "admittance", build_admittance(self))

    # -- indexing helpers -------------------------------------------------

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def bus_index(self) -> dict[int, int]:
        return {b.id: k for k, b in enumerate(self.buses)}

    @property
    def slack_index(self) -> int:
        return next(k for k, b in enumerate(self.buses) if b.kind is BusKind.SLACK)

    def generators_at(self, bus_id: int, in_service_only: bool = True):
        return [
            g
            for g in self.generators
            if g.bus == bus_id and (not in_service_only or g.status is Status.IN_SERVICE)
        ]

    def voltage_band(self) -> tuple[np.ndarray, np.ndarray]:
        """Active (v_min, v_max) arrays over buses."""
        if self.emergency_limits:
            lo = np.array([b.v_min_emergency for b in self.buses])
            hi = np.array([b.v_max_emergency for b in self.buses])
        else:
            lo = np.array([b.v_min_normal for b in self.buses])
            hi = np.array([b.v_max_normal for b in self.buses])
        return lo, hi

    def thermal_ratings(self) -> np.ndarray:
        """Active MVA rating per branch (inf where unlimited or outaged)."""
        out = np.full(len(self.branches), np.inf)
        for k, br in enumerate(self.branches):
            if br.status is not Status.IN_SERVICE:
                continue
            rating = br.s_max_emergency if self.emergency_limits else br.s_max_normal
            if rating > 0.0:
                out[k] = rating
        return out

    # -- facility ids ------------------------------------------------------

    def branch_id(self, k: int) -> str:
        br = self.branches[k]
        circuit = 0
        for j, other in enumerate(self.branches[: k + 1]):
            if {other.from_bus, other.to_bus} == {br.from_bus, br.to_bus}:
                circuit += 1
        suffix = f"#{circuit}" if circuit > 1 else ""
        return f"L{br.from_bus}-{br.to_bus}{suffix}"

    def generator_id(self, k: int) -> str:
        g = self.generators[k]
        unit = sum(1 for other in self.generators[: k + 1] if other.bus == g.bus)
        return f"G{g.bus}#{unit}"

    def resolve_facility(self, facility: str) -> tuple[str, int]:
        """Map a facility id like 'G1#1', 'L2-4' or 'L89-90#2' to its record.

        Returns ("gen", index) or ("branch", index). The unnumbered branch form
        matches the first in-service circuit between the two buses.
        """
        m = re.fullmatch(r"G(\d+)#(\d+)", facility.strip())
        if m:
            bus, unit = int(m.group(1)), int(m.group(2))
            seen = 0
            for k, g in enumerate(self.generators):
                if g.bus == bus:
                    seen += 1
                    if seen == unit:
                        if g.status is not Status.IN_SERVICE:
                            raise UnknownFacilityError(f"{facility} is not in service")
                        return "gen", k
            raise UnknownFacilityError(f"no such generator: {facility}")
        m = re.fullmatch(r"L(\d+)-(\d+)(?:#(\d+))?", facility.strip())
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            want = int(m.group(3)) if m.group(3) else None
            seen = 0
            for k, br in enumerate(self.branches):
                if {br.from_bus, br.to_bus} == {a, b}:
                    seen += 1
                    if want is None:
                        if br.status is Status.IN_SERVICE:
                            return "branch", k
                    elif seen == want:
                        if br.status is not Status.IN_SERVICE:
                            raise UnknownFacilityError(f"{facility} is not in service")
                        return "branch", k
            raise UnknownFacilityError(f"no such branch: {facility}")
        raise UnknownFacilityError(f"unrecognized facility id: {facility!r}")


def _adjacency(net: Network) -> dict[int, set[int]]:
    adj: dict[int, set[int]] = {b.id: set() for b in net.buses}
    for br in net.branches:
        if br.status is Status.IN_SERVICE:
            adj[br.from_bus].add(br.to_bus)
            adj[br.to_bus].add(br.from_bus)
    return adj


def _is_connected(net: Network) -> bool:
    if not net.buses:
        return False
    adj = _adjacency(net)
    start = net.buses[0].id
    seen = {start}
    stack = [start]
    while stack:
        u = stack.pop()
        for v in adj[u]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(net.buses)


def build_admittance(net: Network) -> np.ndarray:
    """Assemble the complex bus admittance matrix from the standard pi-model.

    Off-nominal taps sit on the from side; outaged branches contribute
    nothing. Bus shunts add to the diagonal.
    """
    n = net.n_bus
    idx = net.bus_index
    Y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        if br.status is not Status.IN_SERVICE:
            continue
        f, t = idx[br.from_bus], idx[br.to_bus]
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        tap = br.tap_ratio if br.tap_ratio != 0.0 else 1.0
        shift = br.phase_shift
        tcplx = tap * np.exp(1j * shift)
        Y[f, f] += (ys + bc) / (tap * tap)
        Y[t, t] += ys + bc
        Y[f, t] += -ys / np.conj(tcplx)
        Y[t, f] += -ys / tcplx
    for b in net.buses:
        k = idx[b.id]
        Y[k, k] += complex(b.shunt_g, b.shunt_b)
    return Y


def apply_contingency(net: Network, facility: str) -> Network:
    """Return a copy with `facility` outaged, admittance rebuilt and
    emergency limits active. Raises IslandingError if the outage disconnects
    the grid."""
    kind, k = net.resolve_facility(facility)
    if kind == "gen":
        gens = list(net.generators)
        gens[k] = replace(gens[k], status=Status.OUTAGED)
        return Network(
            mva_base=net.mva_base,
            buses=net.buses,
            branches=net.branches,
            generators=tuple(gens),
            emergency_limits=True,
        )
    branches = list(net.branches)
    branches[k] = replace(branches[k], status=Status.OUTAGED)
    try:
        return Network(
            mva_base=net.mva_base,
            buses=net.buses,
            branches=tuple(branches),
            generators=net.generators,
            emergency_limits=True,
        )
    except IslandingError:
        raise IslandingError(f"outage of {facility} islands the network") from None


# ---------------------------------------------------------------------------
# MATPOWER-subset case format
# ---------------------------------------------------------------------------

_SECTION_RE = re.compile(r"mpc\.(baseMVA|bus|gen|branch)\s*=\s*(\[?)")

# column counts below are the minimum each table row must provide
_MIN_COLS = {"bus": 13, "gen": 10, "branch": 11}


def parse_case(
    text: str,
    emergency_rating_factor: float = 1.2,
    emergency_voltage_band: tuple[float, float] = (0.90, 1.10),
) -> Network:
    """Parse a MATPOWER-subset case listing into a validated Network.

    Recognized sections: mpc.baseMVA, mpc.bus, mpc.gen, mpc.branch; anything
    else is skipped. Branch RATE_C is taken as the emergency rating when
    given, otherwise `emergency_rating_factor` times the normal rating is
    used. Voltage emergency bands come from `emergency_voltage_band`, widened
    if needed so they contain each bus's normal band.
    """
    base_mva = None
    tables: dict[str, list[list[float]]] = {"bus": [], "gen": [], "branch": []}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("%")[0].strip()
        if not line:
            continue
        m = _SECTION_RE.match(line)
        if m:
            name = m.group(1)
            rest = line[m.end():].strip()
            if name == "baseMVA":
                value = line.split("=", 1)[1].strip().rstrip(";").strip()
                try:
                    base_mva = float(value)
                except ValueError:
                    raise CaseSyntaxError(f"line {lineno}: bad baseMVA {value!r}") from None
                continue
            section = name
            line = rest
            if not line:
                continue
        elif section is None:
            continue
        if line.startswith("]"):
            section = None
            continue
        closes = "]" in line
        row_text = line.split("]")[0].strip()
        if row_text:
            for chunk in filter(None, (c.strip() for c in row_text.split(";"))):
                try:
                    tables[section].append([float(tok) for tok in chunk.split()])
                except ValueError:
                    raise CaseSyntaxError(f"line {lineno}: bad numeric row {chunk!r}") from None
        if closes:
            section = None

    if base_mva is None or base_mva <= 0:
        raise CaseSyntaxError("missing or invalid mpc.baseMVA")
    if not tables["bus"]:
        raise CaseSyntaxError("missing mpc.bus table")
    if not tables["branch"]:
        raise CaseSyntaxError("missing mpc.branch table")
    for name, rows in tables.items():
        for row in rows:
            if len(row) < _MIN_COLS[name]:
                raise CaseSyntaxError(
                    f"mpc.{name} row with {len(row)} columns, need >= {_MIN_COLS[name]}"
                )

    ev_lo, ev_hi = emergency_voltage_band
    buses = []
    for row in tables["bus"]:
        kind_code = int(row[1])
        if kind_code == 4:
            raise CaseSemanticError(f"bus {int(row[0])}: isolated buses are not supported")
        kind = {1: BusKind.PQ, 2: BusKind.PV, 3: BusKind.SLACK}.get(kind_code)
        if kind is None:
            raise CaseSemanticError(f"bus {int(row[0])}: unknown bus type {kind_code}")
        buses.append(
            Bus(
                id=int(row[0]),
                kind=kind,
                p_load=row[2] / base_mva,
                q_load=row[3] / base_mva,
                shunt_g=row[4] / base_mva,
                shunt_b=row[5] / base_mva,
                area=int(row[6]),
                voltage_magnitude=row[7],
                voltage_angle=math.radians(row[8]),
                base_kv=row[9],
                v_max_normal=row[11],
                v_min_normal=row[12],
                v_max_emergency=max(ev_hi, row[11]),
                v_min_emergency=min(ev_lo, row[12]),
            )
        )

    gens = []
    for row in tables["gen"]:
        gens.append(
            Generator(
                bus=int(row[0]),
                p_gen=row[1] / base_mva,
                q_gen=row[2] / base_mva,
                q_max=row[3] / base_mva,
                q_min=row[4] / base_mva,
                v_setpoint=row[5],
                status=Status.IN_SERVICE if row[7] > 0 else Status.OUTAGED,
                p_max=row[8] / base_mva,
                p_min=row[9] / base_mva,
            )
        )

    branches = []
    for row in tables["branch"]:
        rate_a = row[5] / base_mva
        rate_c = row[7] / base_mva
        if rate_a > 0.0:
            emergency = rate_c if rate_c > 0.0 else emergency_rating_factor * rate_a
            emergency = max(emergency, rate_a)
        else:
            emergency = 0.0
        branches.append(
            Branch(
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                r=row[2],
                x=row[3],
                b_charging=row[4],
                s_max_normal=rate_a,
                s_max_emergency=emergency,
                tap_ratio=row[8] if row[8] != 0.0 else 1.0,
                phase_shift=math.radians(row[9]),
                status=Status.IN_SERVICE if row[10] > 0 else Status.OUTAGED,
            )
        )

    return Network(
        mva_base=base_mva,
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(gens),
    )


def serialize_case(net: Network, name: str = "case") -> str:
    """Emit the network as MATPOWER-subset case text (inverse of parse_case)."""
    base = net.mva_base
    lines = [f"function mpc = {name}", "mpc.version = '2';", f"mpc.baseMVA = {base!r};", ""]
    lines.append("mpc.bus = [")
    for b in net.buses:
        kind = {BusKind.PQ: 1, BusKind.PV: 2, BusKind.SLACK: 3}[b.kind]
        lines.append(
            "\t"
            + "\t".join(
                repr(v)
                for v in (
                    b.id,
                    kind,
                    b.p_load * base,
                    b.q_load * base,
                    b.shunt_g * base,
                    b.shunt_b * base,
                    b.area,
                    b.voltage_magnitude,
                    math.degrees(b.voltage_angle),
                    b.base_kv,
                    1,
                    b.v_max_normal,
                    b.v_min_normal,
                )
            )
            + ";"
        )
    lines.append("];")
    lines.append("")
    lines.append("mpc.gen = [")
    for g in net.generators:
        lines.append(
            "\t"
            + "\t".join(
                repr(v)
                for v in (
                    g.bus,
                    g.p_gen * base,
                    g.q_gen * base,
                    g.q_max * base,
                    g.q_min * base,
                    g.v_setpoint,
                    base,
                    1 if g.status is Status.IN_SERVICE else 0,
                    g.p_max * base,
                    g.p_min * base,
                )
            )
            + ";"
        )
    lines.append("];")
    lines.append("")
    lines.append("mpc.branch = [")
    for br in net.branches:
        lines.append(
            "\t"
            + "\t".join(
                repr(v)
                for v in (
                    br.from_bus,
                    br.to_bus,
                    br.r,
                    br.x,
                    br.b_charging,
                    br.s_max_normal * base,
                    br.s_max_normal * base,
                    br.s_max_emergency * base,
                    br.tap_ratio,
                    math.degrees(br.phase_shift),
                    1 if br.status is Status.IN_SERVICE else 0,
                )
            )
            + ";"
        )
    lines.append("];")
    lines.append("")
    return "\n".join(lines)
