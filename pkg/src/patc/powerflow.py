"""Newton-Raphson AC power flow with PV/PQ switching on reactive limits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .netmodel import BusKind, Network, Status

__all__ = [
    "InjectionSpec",
    "PfOptions",
    "PfState",
    "PowerFlowError",
    "SingularJacobianError",
    "base_injections",
    "solve_power_flow",
    "branch_flows",
    "power_flow_jacobian",
    "bus_power",
]


class PowerFlowError(RuntimeError):
    """Newton iteration failed to converge."""


class SingularJacobianError(PowerFlowError):
    """The power-flow Jacobian is singular at the current iterate."""


@dataclass
class InjectionSpec:
    """Per-bus injection specification, all per-unit on the system base.

    p:        net scheduled active injection (gen + renewables - load)
    q_nogen:  net reactive injection excluding PV-bus generator output
              (renewable Q - load Q); for buses without voltage regulation
              any fixed generator Q is folded in here as well
    v_set:    regulated voltage magnitude (NaN where the bus does not regulate)
    q_min/q_max: aggregate generator reactive limits at regulated buses
    regulated: True where the bus holds a voltage setpoint (PV behaviour)
    """

    p: np.ndarray
    q_nogen: np.ndarray
    v_set: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray
    regulated: np.ndarray

    def copy(self) -> "InjectionSpec":
        return InjectionSpec(
            self.p.copy(),
            self.q_nogen.copy(),
            self.v_set.copy(),
            self.q_min.copy(),
            self.q_max.copy(),
            self.regulated.copy(),
        )


@dataclass
class PfOptions:
    tolerance: float = 1e-8
    max_iterations: int = 20
    enforce_q_limits: bool = True
    flat_start: bool = True
    max_switch_rounds: int = 10

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class PfState:
    voltage_magnitudes: np.ndarray
    voltage_angles: np.ndarray
    pv_to_pq_switches: dict = field(default_factory=dict)  # bus index -> pinned Q (p.u.)
    converged: bool = False
    iterations: int = 0
    max_mismatch: float = np.inf

    @property
    def v_complex(self) -> np.ndarray:
        return self.voltage_magnitudes * np.exp(1j * self.voltage_angles)

    def copy(self) -> "PfState":
        return PfState(
            self.voltage_magnitudes.copy(),
            self.voltage_angles.copy(),
            dict(self.pv_to_pq_switches),
            self.converged,
            self.iterations,
            self.max_mismatch,
        )


def base_injections(net: Network, gen_scale: float = 1.0, load_scale: float = 1.0) -> InjectionSpec:
    """Injection spec for the case as given (optionally with dispatch and
    load uniformly rescaled)."""
    n = net.n_bus
    idx = net.bus_index
    p = np.zeros(n)
    q_nogen = np.zeros(n)
    v_set = np.full(n, np.nan)
    q_min = np.full(n, -np.inf)
    q_max = np.full(n, np.inf)
    regulated = np.zeros(n, dtype=bool)

    for k, b in enumerate(net.buses):
        p[k] -= b.p_load * load_scale
        q_nogen[k] -= b.q_load * load_scale

    has_gen = np.zeros(n, dtype=bool)
    for g in net.generators:
        if g.status is not Status.IN_SERVICE:
            continue
        k = idx[g.bus]
        p[k] += g.p_gen * gen_scale
        has_gen[k] = True

    for k, b in enumerate(net.buses):
        gens = net.generators_at(b.id)
        if b.kind in (BusKind.PV, BusKind.SLACK) and gens:
            regulated[k] = b.kind is BusKind.PV
            v_set[k] = gens[0].v_setpoint
            q_min[k] = sum(g.q_min for g in gens)
            q_max[k] = sum(g.q_max for g in gens)
        elif gens:
            # fixed-Q generation at a non-regulating bus
            q_nogen[k] += sum(g.q_gen for g in gens)
        if b.kind is BusKind.SLACK:
            v_set[k] = gens[0].v_setpoint if gens else b.voltage_magnitude
    return InjectionSpec(p, q_nogen, v_set, q_min, q_max, regulated)


def bus_power(Y: np.ndarray, V: np.ndarray) -> np.ndarray:
    """Complex injections S_i = V_i * conj(sum_j Y_ij V_j)."""
    return V * np.conj(Y @ V)


def power_flow_jacobian(Y: np.ndarray, V: np.ndarray, pvpq: np.ndarray, pq: np.ndarray):
    """Blocks of dS/d(angle) and dS/d|V| reduced to the free variables.

    Returns the real Newton matrix [[dP/dth, dP/dVm], [dQ/dth, dQ/dVm]].
    """
    n = len(V)
    Ibus = Y @ V
    Vnorm = V / np.abs(V)
    diag = np.arange(n)
    dS_dVm = V[:, None] * np.conj(Y * Vnorm[None, :])
    dS_dVm[diag, diag] += np.conj(Ibus) * Vnorm
    dS_dVa = -1j * (V[:, None] * np.conj(Y * V[None, :]))
    dS_dVa[diag, diag] += 1j * V * np.conj(Ibus)
    n1, n2 = len(pvpq), len(pq)
    J = np.empty((n1 + n2, n1 + n2))
    J[:n1, :n1] = dS_dVa.real[pvpq[:, None], pvpq[None, :]]
    J[:n1, n1:] = dS_dVm.real[pvpq[:, None], pq[None, :]]
    J[n1:, :n1] = dS_dVa.imag[pq[:, None], pvpq[None, :]]
    J[n1:, n1:] = dS_dVm.imag[pq[:, None], pq[None, :]]
    return J


def _newton(Y, p_spec, q_spec, vm, va, slack, pv, pq, tol, max_iter):
    """Core Newton loop; mutates vm/va in place. Returns (converged, iters, mis)."""
    pvpq = np.concatenate([pv, pq])
    n_pvpq = len(pvpq)
    V = vm * np.exp(1j * va)
    S = bus_power(Y, V)
    F = np.concatenate([p_spec[pvpq] - S.real[pvpq], q_spec[pq] - S.imag[pq]])
    mis = np.max(np.abs(F)) if F.size else 0.0
    it = 0
    while mis > tol and it < max_iter:
        J = power_flow_jacobian(Y, V, pvpq, pq)
        try:
            dx = np.linalg.solve(J, F)
        except np.linalg.LinAlgError:
            raise SingularJacobianError("singular power-flow Jacobian")
        if not np.all(np.isfinite(dx)):
            return False, it, mis
        va[pvpq] += dx[:n_pvpq]
        vm[pq] += dx[n_pvpq:]
        if np.any(vm <= 0):
            return False, it + 1, np.inf
        it += 1
        V = vm * np.exp(1j * va)
        S = bus_power(Y, V)
        F = np.concatenate([p_spec[pvpq] - S.real[pvpq], q_spec[pq] - S.imag[pq]])
        mis = np.max(np.abs(F))
    return mis <= tol, it, mis


def solve_power_flow(
    net: Network,
    inj: InjectionSpec,
    opts: PfOptions | None = None,
    warm: PfState | None = None,
) -> PfState:
    """Solve the AC power flow for the given injections.

    With `enforce_q_limits`, regulated buses whose aggregate generator Q
    leaves its limits are switched to PQ with Q pinned at the violated limit
    (all violating buses at once), and the case is re-solved; switches
    inherited from `warm` stay pinned. Raises PowerFlowError if any Newton
    round fails to converge.
    """
    opts = opts or PfOptions()
    n = net.n_bus
    slack = net.slack_index
    Y = net.admittance

    if warm is not None:
        vm = warm.voltage_magnitudes.copy()
        va = warm.voltage_angles.copy()
        switches = dict(warm.pv_to_pq_switches)
    else:
        vm = np.ones(n)
        va = np.full(n, net.buses[slack].voltage_angle)
        switches = {}
        if not opts.flat_start:
            vm = np.array([b.voltage_magnitude for b in net.buses])
            va = np.array([b.voltage_angle for b in net.buses])

    vm[slack] = inj.v_set[slack] if np.isfinite(inj.v_set[slack]) else vm[slack]
    va[slack] = net.buses[slack].voltage_angle

    for round_ in range(opts.max_switch_rounds + 1):
        pv_mask = inj.regulated.copy()
        pv_mask[slack] = False
        for k in switches:
            pv_mask[k] = False
        pv = np.flatnonzero(pv_mask)
        pq_mask = ~pv_mask
        pq_mask[slack] = False
        pq = np.flatnonzero(pq_mask)

        vm[pv] = inj.v_set[pv]
        q_spec = inj.q_nogen.copy()
        for k, pinned in switches.items():
            q_spec[k] = inj.q_nogen[k] + pinned

        converged, iters, mis = _newton(
            Y, inj.p, q_spec, vm, va, slack, pv, pq, opts.tolerance, opts.max_iterations
        )
        state = PfState(vm, va, dict(switches), converged, iters, mis)
        if not converged:
            raise PowerFlowError(
                f"power flow did not converge (mismatch {mis:.3e} after {iters} iterations)"
            )
        if not opts.enforce_q_limits:
            return state

        V = vm * np.exp(1j * va)
        q_calc = bus_power(Y, V).imag
        new_switches = {}
        for k in pv:
            q_gen = q_calc[k] - inj.q_nogen[k]
            if q_gen > inj.q_max[k] + opts.tolerance:
                new_switches[k] = inj.q_max[k]
            elif q_gen < inj.q_min[k] - opts.tolerance:
                new_switches[k] = inj.q_min[k]
        if not new_switches:
            return state
        switches.update(new_switches)
    return state


_BRANCH_CACHE: dict[int, tuple] = {}


def _branch_arrays(net: Network):
    """Per-branch pi-model admittance vectors and end indices (cached)."""
    key = id(net)
    hit = _BRANCH_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    idx = net.bus_index
    nb = len(net.branches)
    f_idx = np.zeros(nb, dtype=int)
    t_idx = np.zeros(nb, dtype=int)
    y_ff = np.zeros(nb, dtype=complex)
    y_ft = np.zeros(nb, dtype=complex)
    y_tf = np.zeros(nb, dtype=complex)
    y_tt = np.zeros(nb, dtype=complex)
    for k, br in enumerate(net.branches):
        f_idx[k], t_idx[k] = idx[br.from_bus], idx[br.to_bus]
        if br.status is not Status.IN_SERVICE:
            continue
        ys = 1.0 / complex(br.r, br.x)
        bc = 0.5j * br.b_charging
        tap = br.tap_ratio if br.tap_ratio != 0.0 else 1.0
        tcplx = tap * np.exp(1j * br.phase_shift)
        y_ff[k] = (ys + bc) / (tap * tap)
        y_ft[k] = -ys / np.conj(tcplx)
        y_tf[k] = -ys / tcplx
        y_tt[k] = ys + bc
    arrays = (f_idx, t_idx, y_ff, y_ft, y_tf, y_tt)
    if len(_BRANCH_CACHE) > 64:
        _BRANCH_CACHE.clear()
    _BRANCH_CACHE[key] = (net, arrays)
    return arrays


def branch_flows(net: Network, state: PfState):
    """Apparent power at both branch ends.

    Returns (s_from, s_to, loading): complex end flows per branch and the max
    apparent-power magnitude of the two ends; outaged branches report zero.
    """
    f_idx, t_idx, y_ff, y_ft, y_tf, y_tt = _branch_arrays(net)
    V = state.v_complex
    vf, vt = V[f_idx], V[t_idx]
    s_from = vf * np.conj(y_ff * vf + y_ft * vt)
    s_to = vt * np.conj(y_tf * vf + y_tt * vt)
    loading = np.maximum(np.abs(s_from), np.abs(s_to))
    return s_from, s_to, loading
