"""Transfer-capability maximization along a load-generation direction.

A transfer case is traced by a predictor-corrector continuation in the
transfer parameter: natural-parameter marching with adaptive steps resolves
the first violation of each limit class (voltage band, thermal rating,
dispatch capability) by bisection, and a pseudo-arclength phase refines the
nose (voltage collapse) point when plain Newton stops converging. Base and
contingency cases combine by taking the minimum; an optional early-stop bound
lets non-binding cases quit as soon as they are provably above the running
minimum without changing the composed result.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .netmodel import BusKind, Network, Status, apply_contingency
from .powerflow import (
    InjectionSpec,
    PfOptions,
    PfState,
    PowerFlowError,
    base_injections,
    branch_flows,
    bus_power,
    power_flow_jacobian,
    solve_power_flow,
)

if TYPE_CHECKING:
    from .uncertainty import Scenario

__all__ = [
    "Normalization",
    "Transaction",
    "TraceOptions",
    "AtcCaseResult",
    "CaseInjections",
    "AtcEngine",
    "inject_random_inputs",
    "continuation_trace",
    "overall_atc",
]


class Normalization(enum.Enum):
    UNIT_SOURCE_SUM = "unit_source_sum"
    RAW_MW = "raw_mw"


@dataclass(frozen=True)
class Transaction:
    """Balanced source-to-sink transfer direction.

    Shares are per-unit participation factors; under UNIT_SOURCE_SUM they are
    rescaled so the source side sums to one, which makes the traced transfer
    parameter read directly in per-unit MW of the system base.
    """

    source_injections: dict  # bus id -> active-power share
    sink_withdrawals: dict  # bus id -> (dP share, dQ share)
    normalization: Normalization = Normalization.UNIT_SOURCE_SUM

    def direction(self, net: Network):
        """Per-bus direction arrays (dp, dq_nogen, dgen) for the net."""
        idx = net.bus_index
        n = net.n_bus
        dp = np.zeros(n)
        dq = np.zeros(n)
        dgen = np.zeros(n)
        src_total = sum(self.source_injections.values())
        sink_total = sum(p for p, _ in self.sink_withdrawals.values())
        if src_total <= 0.0 and sink_total <= 0.0:
            return dp, dq, dgen  # degenerate direction
        if self.normalization is Normalization.UNIT_SOURCE_SUM:
            base = src_total if src_total > 0.0 else sink_total
            src_scale = 1.0 / base if src_total > 0.0 else 0.0
            sink_scale = 1.0 / sink_total if sink_total > 0.0 else 0.0
        else:
            src_scale = 1.0
            sink_scale = (src_total / sink_total) if sink_total > 0.0 else 0.0
        for bus, share in self.source_injections.items():
            k = idx[bus]
            dp[k] += share * src_scale
            dgen[k] += share * src_scale
        for bus, (p_share, q_share) in self.sink_withdrawals.items():
            k = idx[bus]
            dp[k] -= p_share * sink_scale
            dq[k] -= q_share * sink_scale
        return dp, dq, dgen

    def is_degenerate(self) -> bool:
        return (
            sum(self.source_injections.values()) <= 0.0
            and sum(p for p, _ in self.sink_withdrawals.values()) <= 0.0
        )


@dataclass
class TraceOptions:
    step0: float = 0.1
    delta_lambda: float = 1e-4  # bisection / nose resolution, p.u.
    lambda_cap: float = 100.0
    arc_switch_step: float = 0.01  # natural step below which the arc phase takes over
    pf: PfOptions = field(default_factory=lambda: PfOptions(tolerance=1e-8, max_iterations=20))
    violation_eps: float = 1e-9


@dataclass
class AtcCaseResult:
    """Per-configuration transfer limits, all in MW at the system base.

    `lambda_collapse` is the feasibility boundary of the continuation: the
    nose point, or the exhaustion of source dispatch capability when a
    generator active-power limit binds first. `censored` marks a case whose
    trace stopped early at a feasible point because it could no longer bind
    the composed minimum; its values are then lower bounds.
    """

    case_index: int
    outage: str | None
    lambda_voltage: float
    lambda_thermal: float
    lambda_collapse: float
    overall: float
    binding_class: str | None
    binding_facility: str | None
    base_violations: tuple = ()
    censored: bool = False


@dataclass
class CaseInjections:
    """Injection spec at the start of a trace plus the conventional dispatch
    bookkeeping needed for generator active-power limit checks."""

    spec: InjectionSpec
    p_conv_gen: np.ndarray  # effective conventional dispatch per bus, p.u.


_CLASSES = ("voltage", "thermal", "dispatch")


class _CaseTemplate:
    """Realization-independent part of a case's injections: the scaled base
    dispatch with the renewable-forecast displacement already applied."""

    def __init__(self, net: Network, scenario: "Scenario"):
        st = scenario.settings
        self.net = net
        self.bus_of = np.array([net.bus_index[inp.bus] for inp in scenario.inputs])
        spec = base_injections(net, gen_scale=st.gen_scale, load_scale=st.load_scale)
        idx = net.bus_index
        base = net.mva_base

        p_conv_gen = np.zeros(net.n_bus)
        for g in net.generators:
            if g.status is Status.IN_SERVICE:
                p_conv_gen[idx[g.bus]] += g.p_gen * st.gen_scale

        if st.dispatch_rule == "local_mean":
            for inp in scenario.inputs:
                if inp.kind not in ("wind", "solar"):
                    continue
                k = idx[inp.bus]
                mean_pu = inp.forecast_mean_power_mw() / base
                d = min(mean_pu, max(p_conv_gen[k], 0.0))
                spec.p[k] -= d
                p_conv_gen[k] -= d
        elif st.dispatch_rule == "proportional":
            total_mean = sum(
                inp.forecast_mean_power_mw() / base
                for inp in scenario.inputs
                if inp.kind in ("wind", "solar")
            )
            sl = net.slack_index
            conv = p_conv_gen.copy()
            conv[sl] = 0.0
            conv_total = conv.sum()
            if conv_total > 0.0:
                shed = np.minimum(conv, conv * min(total_mean / conv_total, 1.0))
                spec.p -= shed
                p_conv_gen -= shed
        elif st.dispatch_rule != "slack":
            raise ValueError(f"unknown dispatch rule {st.dispatch_rule!r}")

        self.spec0 = spec
        self.p_conv_gen = p_conv_gen

    def realize(self, scenario: "Scenario", u: np.ndarray | None) -> CaseInjections:
        from .uncertainty import solar_power, wind_power

        st = scenario.settings
        base = self.net.mva_base
        spec = self.spec0.copy()
        if u is None:
            u = np.array([inp.forecast_mean() for inp in scenario.inputs])
        u = np.asarray(u, dtype=float)
        if u.shape != (len(scenario.inputs),):
            raise ValueError(f"realization has shape {u.shape}, expected ({len(scenario.inputs)},)")
        q_wind_factor = math.tan(math.acos(min(max(st.wind_power_factor, -1.0), 1.0)))
        for inp, k, value in zip(scenario.inputs, self.bus_of, u):
            if inp.kind == "wind":
                if value < 0:
                    raise ValueError(f"negative wind speed {value} for input {inp.name}")
                p_mw = wind_power(value, inp.curve)
                spec.p[k] += p_mw / base
                spec.q_nogen[k] += p_mw * q_wind_factor / base
            elif inp.kind == "solar":
                if value < 0:
                    raise ValueError(f"negative solar radiation {value} for input {inp.name}")
                spec.p[k] += solar_power(value, inp.curve) / base
            elif inp.kind == "load":
                base_p = inp.base_p_mw * st.load_scale
                base_q = inp.base_q_mw * st.load_scale
                ratio = value / base_p if base_p != 0.0 else 0.0
                spec.p[k] -= (value - base_p) / base
                spec.q_nogen[k] -= base_q * (ratio - 1.0) / base
            else:
                raise ValueError(f"unknown input kind {inp.kind!r}")
        return CaseInjections(spec, self.p_conv_gen)


def inject_random_inputs(net: Network, scenario: "Scenario", u: np.ndarray | None) -> CaseInjections:
    """Per-bus injection specification for one realization of the random
    inputs (wind speeds, solar radiations, load active powers, in scenario
    input order). `u=None` evaluates the deterministic forecast point: plant
    outputs at their expected MW and loads at their forecast means.

    Conventional dispatch is displaced by the renewable forecast according to
    the scenario's dispatch rule before the realization is applied.
    """
    return _CaseTemplate(net, scenario).realize(scenario, u)


# ---------------------------------------------------------------------------
# single-case continuation
# ---------------------------------------------------------------------------


class _CaseTracer:
    """Continuation machinery for one network configuration and direction."""

    def __init__(self, net: Network, case: CaseInjections, txn: Transaction, opts: TraceOptions):
        self.net = net
        self.opts = opts
        self.inj0 = case.spec
        self.dp, self.dq, self.dgen = txn.direction(net)
        self.v_lo, self.v_hi = net.voltage_band()
        self.ratings = net.thermal_ratings()
        idx = net.bus_index
        self.p_conv0 = case.p_conv_gen
        self.p_min_bus = np.zeros(net.n_bus)
        self.p_max_bus = np.zeros(net.n_bus)
        self.has_gen = np.zeros(net.n_bus, dtype=bool)
        for g in net.generators:
            if g.status is Status.IN_SERVICE:
                k = idx[g.bus]
                self.p_min_bus[k] += g.p_min
                self.p_max_bus[k] += g.p_max
                self.has_gen[k] = True
        self.slack = net.slack_index

    def injections(self, lam: float) -> InjectionSpec:
        inj = self.inj0.copy()
        inj.p = self.inj0.p + lam * self.dp
        inj.q_nogen = self.inj0.q_nogen + lam * self.dq
        return inj

    def solve(self, lam: float, warm: PfState | None) -> PfState | None:
        try:
            return solve_power_flow(self.net, self.injections(lam), self.opts.pf, warm=warm)
        except PowerFlowError:
            return None

    def violations(self, lam: float, state: PfState) -> dict[str, str]:
        """First violated facility per limit class at a solved point."""
        eps = self.opts.violation_eps
        out: dict[str, str] = {}
        vm = state.voltage_magnitudes
        v_excess = np.maximum(self.v_lo - vm, vm - self.v_hi)
        k = int(np.argmax(v_excess))
        if v_excess[k] > eps:
            out["voltage"] = f"B{self.net.buses[k].id}"
        _, _, loading = branch_flows(self.net, state)
        with np.errstate(invalid="ignore"):
            t_excess = np.where(
                np.isfinite(self.ratings), (loading - self.ratings) / self.ratings, -np.inf
            )
        k = int(np.argmax(t_excess))
        if t_excess[k] > eps:
            out["thermal"] = self.net.branch_id(k)
        # dispatch capability along the direction; the slack bus is the
        # system balancer and is exempt (distributed slack is out of scope)
        p_gen = self.p_conv0 + lam * self.dgen
        worst = 0.0
        fac = None
        for k in np.flatnonzero(self.has_gen):
            if k == self.slack:
                continue
            excess = max(self.p_min_bus[k] - p_gen[k], p_gen[k] - self.p_max_bus[k])
            if excess > eps and excess > worst:
                worst, fac = excess, f"G{self.net.buses[k].id}"
        if fac:
            out["dispatch"] = fac
        return out

    # -- pseudo-arclength nose refinement ---------------------------------

    def _arc_partitions(self, state: PfState):
        inj = self.inj0
        pv_mask = inj.regulated.copy()
        pv_mask[self.slack] = False
        for k in state.pv_to_pq_switches:
            pv_mask[k] = False
        pq_mask = ~pv_mask
        pq_mask[self.slack] = False
        return np.flatnonzero(pv_mask), np.flatnonzero(pq_mask)

    def _arc_residual(self, vm, va, lam, pvpq, pq, q_pinned):
        V = vm * np.exp(1j * va)
        S = bus_power(self.net.admittance, V)
        p_spec = self.inj0.p + lam * self.dp
        q_spec = self.inj0.q_nogen + lam * self.dq + q_pinned
        return np.concatenate([p_spec[pvpq] - S.real[pvpq], q_spec[pq] - S.imag[pq]]), V

    def _arc_corrector(self, y0, tangent, sigma, pv, pq, q_pinned, max_iter=25):
        """Newton on [power mismatch; hyperplane] from the predicted point."""
        pvpq = np.concatenate([pv, pq])
        n1, n2 = len(pvpq), len(pq)
        y = y0 + sigma * tangent
        vm = self.frontier_vm.copy()
        va = self.frontier_va.copy()
        for it in range(max_iter):
            va[pvpq] = y[:n1]
            vm[pq] = y[n1 : n1 + n2]
            lam = y[-1]
            F, V = self._arc_residual(vm, va, lam, pvpq, pq, q_pinned)
            g = np.concatenate([F, [tangent @ (y - y0) - sigma]])
            if np.max(np.abs(g)) < self.opts.pf.tolerance * 10:
                return y, vm, va
            J = power_flow_jacobian(self.net.admittance, V, pvpq, pq)
            dF_dlam = np.concatenate([self.dp[pvpq], self.dq[pq]])
            J_aug = np.zeros((n1 + n2 + 1, n1 + n2 + 1))
            J_aug[: n1 + n2, : n1 + n2] = -J
            J_aug[: n1 + n2, -1] = dF_dlam
            J_aug[-1, :] = tangent
            try:
                dy = np.linalg.solve(J_aug, -g)
            except np.linalg.LinAlgError:
                return None
            if not np.all(np.isfinite(dy)):
                return None
            y = y + dy
            if y[-1] > self.opts.lambda_cap * 2 or np.any(vm <= 0):
                return None
        return None

    def _arc_tangent(self, vm, va, lam, pv, pq, q_pinned, t_prev):
        pvpq = np.concatenate([pv, pq])
        n1, n2 = len(pvpq), len(pq)
        _, V = self._arc_residual(vm, va, lam, pvpq, pq, q_pinned)
        J = power_flow_jacobian(self.net.admittance, V, pvpq, pq)
        dF_dlam = np.concatenate([self.dp[pvpq], self.dq[pq]])
        J_aug = np.zeros((n1 + n2 + 1, n1 + n2 + 1))
        J_aug[: n1 + n2, : n1 + n2] = -J
        J_aug[: n1 + n2, -1] = dF_dlam
        J_aug[-1, :] = t_prev
        rhs = np.zeros(n1 + n2 + 1)
        rhs[-1] = 1.0
        try:
            z = np.linalg.solve(J_aug, rhs)
        except np.linalg.LinAlgError:
            return None
        norm = np.linalg.norm(z)
        return z / norm if norm > 0 else None

    def trace_nose(self, lam0: float, state0: PfState) -> float:
        """Advance past `lam0` with pseudo-arclength steps; return the
        largest solvable transfer parameter found (nose point to within the
        configured resolution). PV/PQ switching is frozen at the frontier's
        set during this phase."""
        opts = self.opts
        pv, pq = self._arc_partitions(state0)
        pvpq = np.concatenate([pv, pq])
        q_pinned = np.zeros(self.net.n_bus)
        for k, pinned in state0.pv_to_pq_switches.items():
            q_pinned[k] = pinned - 0.0  # pinned value replaces generator Q
        # the pinned contribution was already in q_nogen via solve path; here
        # the injections are rebuilt raw, so add the pinned generator output
        self.frontier_vm = state0.voltage_magnitudes.copy()
        self.frontier_va = state0.voltage_angles.copy()

        y = np.concatenate([state0.voltage_angles[pvpq], state0.voltage_magnitudes[pq], [lam0]])
        t = np.zeros(len(y))
        t[-1] = 1.0
        tangent = self._arc_tangent(self.frontier_vm, self.frontier_va, lam0, pv, pq, q_pinned, t)
        if tangent is None:
            return lam0
        if tangent[-1] < 0:
            tangent = -tangent
        best = lam0
        sigma = max(opts.arc_switch_step, opts.delta_lambda)
        for _ in range(400):
            if tangent[-1] <= 0.0 and sigma <= opts.delta_lambda:
                break
            if tangent[-1] <= 0.0:
                sigma /= 2
                continue
            res = self._arc_corrector(y, tangent, sigma, pv, pq, q_pinned)
            if res is None:
                sigma /= 2
                if sigma < opts.delta_lambda / 4:
                    break
                continue
            y_new, vm, va = res
            lam_new = y_new[-1]
            t_new = self._arc_tangent(vm, va, lam_new, pv, pq, q_pinned, tangent)
            if t_new is None:
                break
            if lam_new > best:
                best = lam_new
            if lam_new >= opts.lambda_cap:
                return opts.lambda_cap
            if t_new[-1] <= 0.0 or lam_new < y[-1]:
                # nose passed between y and y_new: shrink the step
                if sigma <= opts.delta_lambda:
                    break
                sigma /= 2
                continue
            y = y_new
            tangent = t_new
            self.frontier_vm = vm.copy()
            self.frontier_va = va.copy()
            sigma = min(sigma * 2, opts.arc_switch_step)
        return best

    # -- violation bisection ----------------------------------------------

    def refine_violation(self, cls: str, lo: float, lo_state: PfState, hi: float):
        """Shrink [lo, hi] around the first violation of `cls`; returns
        (last feasible lam, facility at the first violating solve)."""
        opts = self.opts
        facility = None
        state = lo_state
        while hi - lo > opts.delta_lambda:
            mid = 0.5 * (lo + hi)
            sol = self.solve(mid, state)
            if sol is None:
                hi = mid
                continue
            viol = self.violations(mid, sol)
            if cls in viol:
                hi = mid
                facility = viol[cls]
            else:
                lo = mid
                state = sol
        return lo, facility


def continuation_trace(
    net: Network,
    base: PfState | None,
    case: CaseInjections,
    txn: Transaction,
    opts: TraceOptions | None = None,
    case_index: int = 0,
    outage: str | None = None,
    lambda_stop: float | None = None,
    full: bool = True,
) -> AtcCaseResult:
    """Trace the maximum transfer parameter for one network configuration.

    With `full=True` every limit class is resolved to its own boundary
    (deterministic-study table); otherwise the trace finishes at the first
    violation, which fixes the case's composed minimum. `lambda_stop` allows
    an early feasible exit once the case can no longer bind the minimum of a
    multi-case study; the returned result is then marked censored.

    Returns MW values (transfer parameter times the MVA base under unit
    source normalization).
    """
    opts = opts or TraceOptions()
    tracer = _CaseTracer(net, case, txn, opts)
    base_mw = net.mva_base

    if txn.is_degenerate():
        lam_cap_mw = opts.lambda_cap * base_mw
        return AtcCaseResult(
            case_index, outage, lam_cap_mw, lam_cap_mw, lam_cap_mw, lam_cap_mw, None, None
        )

    state0 = base if base is not None and base.converged else tracer.solve(0.0, base)
    if state0 is None:
        raise PowerFlowError(f"case {case_index} ({outage or 'base'}): no solution at zero transfer")
    viol0 = tracer.violations(0.0, state0)
    if viol0:
        cls = next(c for c in _CLASSES if c in viol0)
        return AtcCaseResult(
            case_index,
            outage,
            0.0,
            0.0,
            0.0,
            0.0,
            "collapse" if cls == "dispatch" else cls,
            viol0[cls],
            base_violations=tuple(f"{c}:{f}" for c, f in sorted(viol0.items())),
        )

    lam = 0.0
    state = state0
    step = opts.step0
    brackets: dict[str, tuple] = {}
    nose_lam: float | None = None

    while True:
        if lambda_stop is not None and lam >= lambda_stop and not brackets:
            # provably above the running study minimum: quit feasible
            lam_mw = lam * base_mw
            return AtcCaseResult(
                case_index, outage, lam_mw, lam_mw, lam_mw, lam_mw, None, None, censored=True
            )
        pending = [c for c in _CLASSES if c not in brackets]
        if not full and len(brackets) >= 1:
            break
        if not pending or lam >= opts.lambda_cap:
            break
        lam_try = min(lam + step, opts.lambda_cap)
        sol = tracer.solve(lam_try, state)
        if sol is None:
            step /= 2
            if step < opts.arc_switch_step:
                nose_lam = tracer.trace_nose(lam, state)
                break
            continue
        viol = tracer.violations(lam_try, sol)
        for c in pending:
            if c in viol:
                brackets[c] = (lam, state, lam_try)
        lam, state = lam_try, sol
        step = min(step * 2, opts.step0)

    refined: dict[str, tuple] = {}
    for c in _CLASSES:
        if c in brackets:
            lo, lo_state, hi = brackets[c]
            refined[c] = tracer.refine_violation(c, lo, lo_state, hi)

    if nose_lam is None:
        if not full and refined:
            # first-violation mode: the nose is not resolved; unresolved
            # classes sit at the binding level (they are at least that large)
            nose_lam = min(v for v, _ in refined.values())
        elif lam >= opts.lambda_cap:
            nose_lam = opts.lambda_cap
        else:
            nose_lam = tracer.trace_nose(lam, state)
    nose_lam = min(nose_lam, opts.lambda_cap)

    lam_class: dict[str, float] = {}
    facility: dict[str, str | None] = {}
    for c in _CLASSES:
        if c in refined:
            lam_class[c], facility[c] = refined[c]
        else:
            lam_class[c], facility[c] = nose_lam, None

    lam_collapse = min(nose_lam, lam_class["dispatch"])
    collapse_fac = facility["dispatch"] if lam_class["dispatch"] < nose_lam else None
    candidates = {
        "voltage": (lam_class["voltage"], facility["voltage"], "voltage" in refined),
        "thermal": (lam_class["thermal"], facility["thermal"], "thermal" in refined),
        "collapse": (lam_collapse, collapse_fac, "dispatch" in refined),
    }
    # classes with a recorded violation win ties against ones defaulted to the
    # nose value; an all-default tie is a genuine nose and reports collapse
    binding_class = min(
        candidates, key=lambda c: (candidates[c][0], not candidates[c][2], _CLASS_ORDER[c])
    )
    overall = candidates[binding_class][0]
    return AtcCaseResult(
        case_index,
        outage,
        candidates["voltage"][0] * base_mw,
        candidates["thermal"][0] * base_mw,
        candidates["collapse"][0] * base_mw,
        overall * base_mw,
        binding_class,
        candidates[binding_class][1],
    )


_CLASS_ORDER = {"collapse": 0, "voltage": 1, "thermal": 2}


# ---------------------------------------------------------------------------
# multi-case composition
# ---------------------------------------------------------------------------


class AtcEngine:
    """Precompiled base + contingency configurations for repeated ATC solves.

    Network variants (admittance, limit arrays) are built once; each
    evaluation only rebuilds injections for the given realization, so this is
    the object to hold on to when sweeping many samples.
    """

    def __init__(self, net: Network, scenario: "Scenario", opts: TraceOptions | None = None):
        self.scenario = scenario
        self.opts = opts or TraceOptions()
        self.cases: list[tuple[str | None, Network]] = [(None, net)]
        for fac in scenario.contingencies:
            self.cases.append((fac, apply_contingency(net, fac)))
        self._templates = [_CaseTemplate(case_net, scenario) for _, case_net in self.cases]
        self.solver_calls = 0

    def evaluate(
        self,
        u: np.ndarray | None,
        early_stop: bool = True,
        full: bool = False,
    ) -> tuple[list[AtcCaseResult], float]:
        """Solve all configurations for one realization; returns the per-case
        results and the composed minimum in MW."""
        txn = self.scenario.transaction
        results: list[AtcCaseResult] = []
        best: float | None = None
        for v, (outage, case_net) in enumerate(self.cases):
            case_inj = self._templates[v].realize(self.scenario, u)
            stop = (best / case_net.mva_base) if (early_stop and best is not None) else None
            res = continuation_trace(
                case_net,
                None,
                case_inj,
                txn,
                self.opts,
                case_index=v,
                outage=outage,
                lambda_stop=stop,
                full=full,
            )
            results.append(res)
            if not res.censored and (best is None or res.overall < best):
                best = res.overall
        self.solver_calls += 1
        overall = min(r.overall for r in results)
        return results, overall


def overall_atc(
    net: Network,
    txn: Transaction,
    contingencies: Sequence[str],
    scenario: "Scenario",
    u: np.ndarray | None = None,
    opts: TraceOptions | None = None,
    early_stop: bool = True,
    full: bool = False,
) -> tuple[list[AtcCaseResult], float]:
    """Composed transfer capability over the base case and a contingency
    list, per the minimum rule. Convenience wrapper over AtcEngine for
    one-shot evaluations."""
    scenario = replace(scenario, transaction=txn, contingencies=tuple(contingencies))
    engine = AtcEngine(net, scenario, opts)
    return engine.evaluate(u, early_stop=early_stop, full=full)
