"""Random-input modeling: marginals, plant conversion curves, Nataf
transformation between correlated physical inputs and independent standard
normals, and Latin hypercube experimental designs."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
from scipy import optimize, special

from .netmodel import Network

if TYPE_CHECKING:
    from .atc import Transaction

log = logging.getLogger(__name__)

__all__ = [
    "WeibullMarginal",
    "BetaMarginal",
    "NormalMarginal",
    "WindCurve",
    "SolarCurve",
    "wind_power",
    "solar_power",
    "RandomInput",
    "StudySettings",
    "Scenario",
    "NatafMap",
    "fit_nataf",
    "lhs_design",
    "load_scenario",
    "InfeasibleCorrelationError",
]

_TAIL_CLIP = 1e-12  # probability clamp against infinite quantiles


class InfeasibleCorrelationError(ValueError):
    """No Gaussian-space correlation in (-1, 1) reproduces the target."""


# ---------------------------------------------------------------------------
# marginal distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WeibullMarginal:
    """Weibull wind-speed model with shape k and scale c (m/s)."""

    shape: float
    scale: float

    def __post_init__(self):
        if self.shape <= 0 or self.scale <= 0:
            raise ValueError("Weibull shape and scale must be positive")

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        out = -np.expm1(-((np.maximum(x, 0.0) / self.scale) ** self.shape))
        return np.where(x < 0, 0.0, out)

    def quantile(self, p):
        p = _check_prob(p)
        return self.scale * (-np.log1p(-p)) ** (1.0 / self.shape)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        k, c = self.shape, self.scale
        with np.errstate(invalid="ignore"):
            out = (k / c) * (x / c) ** (k - 1.0) * np.exp(-((x / c) ** k))
        return np.where(x < 0, 0.0, out)

    def mean(self):
        return self.scale * math.gamma(1.0 + 1.0 / self.shape)

    def std(self):
        k, c = self.shape, self.scale
        return c * math.sqrt(math.gamma(1.0 + 2.0 / k) - math.gamma(1.0 + 1.0 / k) ** 2)

    def support(self):
        return 0.0, np.inf


@dataclass(frozen=True)
class BetaMarginal:
    """Beta solar-radiation model on [r_min, r_max] (W/m^2)."""

    alpha: float
    beta: float
    r_min: float = 0.0
    r_max: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("Beta shape parameters must be positive")
        if self.r_min >= self.r_max:
            raise ValueError("Beta support requires r_min < r_max")

    def _t(self, x):
        return (np.asarray(x, dtype=float) - self.r_min) / (self.r_max - self.r_min)

    def cdf(self, x):
        t = np.clip(self._t(x), 0.0, 1.0)
        return special.betainc(self.alpha, self.beta, t)

    def quantile(self, p):
        p = _check_prob(p)
        t = special.betaincinv(self.alpha, self.beta, p)
        return self.r_min + (self.r_max - self.r_min) * t

    def pdf(self, x):
        t = self._t(x)
        lognorm = (
            special.gammaln(self.alpha + self.beta)
            - special.gammaln(self.alpha)
            - special.gammaln(self.beta)
        )
        with np.errstate(divide="ignore", invalid="ignore"):
            logpdf = (
                lognorm
                + (self.alpha - 1.0) * np.log(t)
                + (self.beta - 1.0) * np.log1p(-t)
                - math.log(self.r_max - self.r_min)
            )
        out = np.exp(logpdf)
        return np.where((t < 0) | (t > 1), 0.0, out)

    def mean(self):
        return self.r_min + (self.r_max - self.r_min) * self.alpha / (self.alpha + self.beta)

    def std(self):
        a, b = self.alpha, self.beta
        var01 = a * b / ((a + b) ** 2 * (a + b + 1.0))
        return (self.r_max - self.r_min) * math.sqrt(var01)

    def support(self):
        return self.r_min, self.r_max


@dataclass(frozen=True)
class NormalMarginal:
    """Gaussian load forecast model (MW)."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("Normal sigma must be positive")

    def cdf(self, x):
        return special.ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def quantile(self, p):
        p = _check_prob(p)
        return self.mu + self.sigma * special.ndtri(p)

    def pdf(self, x):
        z = (np.asarray(x, dtype=float) - self.mu) / self.sigma
        return np.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))

    def mean(self):
        return self.mu

    def std(self):
        return self.sigma

    def support(self):
        return -np.inf, np.inf


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("probability must lie strictly inside (0, 1)")
    return p


# ---------------------------------------------------------------------------
# conversion curves
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindCurve:
    v_in: float
    v_rated: float
    v_out: float
    p_rated_mw: float

    def __post_init__(self):
        if not self.v_in < self.v_rated < self.v_out:
            raise ValueError("wind curve requires v_in < v_rated < v_out")


@dataclass(frozen=True)
class SolarCurve:
    r_c: float
    r_std: float
    p_rated_mw: float

    def __post_init__(self):
        if not 0.0 < self.r_c < self.r_std:
            raise ValueError("solar curve requires 0 < r_c < r_std")


def wind_power(v, curve: WindCurve):
    """Piecewise speed-to-power conversion: zero outside the cut-in/cut-out
    window, linear ramp up to rated speed, rated power on the plateau."""
    v = np.asarray(v, dtype=float)
    ramp = (v - curve.v_in) / (curve.v_rated - curve.v_in) * curve.p_rated_mw
    out = np.where(
        (v <= curve.v_in) | (v > curve.v_out),
        0.0,
        np.where(v <= curve.v_rated, ramp, curve.p_rated_mw),
    )
    return out if out.ndim else float(out)


def solar_power(r, curve: SolarCurve):
    """Piecewise radiation-to-power conversion: quadratic below r_c, linear
    up to the standard-environment radiation, rated power beyond."""
    r = np.asarray(r, dtype=float)
    quad = r * r / (curve.r_c * curve.r_std) * curve.p_rated_mw
    lin = r / curve.r_std * curve.p_rated_mw
    out = np.where(r < curve.r_c, quad, np.where(r <= curve.r_std, lin, curve.p_rated_mw))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# scenario definition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RandomInput:
    """One random dimension: a marginal plus (for plants) a conversion curve."""

    name: str
    kind: str  # "wind" | "solar" | "load"
    bus: int
    marginal: object
    curve: object = None
    base_p_mw: float = 0.0
    base_q_mw: float = 0.0

    def forecast_mean_power_mw(self) -> float:
        """Expected plant MW output under the marginal (loads: mean MW)."""
        if self.kind == "load":
            return self.marginal.mean()
        cached = self.__dict__.get("_mean_mw")
        if cached is None:
            p_grid, w = _prob_quadrature()
            x = self.marginal.quantile(p_grid)
            power = wind_power(x, self.curve) if self.kind == "wind" else solar_power(x, self.curve)
            cached = float(power @ w)
            object.__setattr__(self, "_mean_mw", cached)
        return cached

    def forecast_mean(self) -> float:
        """Deterministic (forecast) value of the input itself: for plants the
        input level whose conversion equals the expected MW output, so the
        forecast point reproduces the expected injection."""
        if self.kind == "load":
            return self.marginal.mean()
        mean_mw = self.forecast_mean_power_mw()
        c = self.curve
        if self.kind == "wind":
            return c.v_in + mean_mw / c.p_rated_mw * (c.v_rated - c.v_in)
        frac = mean_mw / c.p_rated_mw
        if frac >= c.r_c / c.r_std:
            return frac * c.r_std
        return math.sqrt(frac * c.r_c * c.r_std)


_QUAD_CACHE = {}


def _prob_quadrature(n: int = 256):
    if n not in _QUAD_CACHE:
        x, w = np.polynomial.legendre.leggauss(n)
        _QUAD_CACHE[n] = (0.5 * (x + 1.0), 0.5 * w)  # map to (0,1)
    return _QUAD_CACHE[n]


@dataclass(frozen=True)
class StudySettings:
    """Study-level knobs carried by the scenario file."""

    gen_scale: float = 1.0
    load_scale: float = 1.0
    dispatch_rule: str = "slack"  # slack | local_mean | proportional
    wind_power_factor: float = 1.0
    confidence_levels: tuple = (0.99, 0.98, 0.95, 0.90, 0.80)
    seeds: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    lra: dict = field(default_factory=dict)
    name: str = ""


@dataclass(frozen=True)
class Scenario:
    """Probabilistic study definition: ordered random inputs, their physical
    correlation matrix, the transaction direction and the contingency list."""

    inputs: tuple
    correlation: np.ndarray
    transaction: "Transaction"
    contingencies: tuple
    settings: StudySettings = field(default_factory=StudySettings)

    def __post_init__(self):
        rho = np.asarray(self.correlation, dtype=float)
        n = len(self.inputs)
        if rho.shape != (n, n):
            raise ValueError(f"correlation matrix shape {rho.shape} != ({n}, {n})")
        if not np.allclose(rho, rho.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(rho), 1.0, atol=1e-12):
            raise ValueError("correlation matrix must have unit diagonal")
        object.__setattr__(self, "correlation", rho)

    @property
    def dimension(self) -> int:
        return len(self.inputs)

    def content_hash(self) -> str:
        import hashlib

        payload = repr(
            (
                [(i.name, i.kind, i.bus, repr(i.marginal), repr(i.curve), i.base_p_mw, i.base_q_mw) for i in self.inputs],
                np.asarray(self.correlation).tolist(),
                repr(self.transaction),
                self.contingencies,
                repr(self.settings),
            )
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Nataf transformation
# ---------------------------------------------------------------------------

_GH_ORDER = 64


def _gh_nodes():
    # probabilists' Hermite rule: integrates against exp(-x^2/2)
    x, w = np.polynomial.hermite_e.hermegauss(_GH_ORDER)
    return x, w / math.sqrt(2.0 * math.pi)


def _physical_on_grid(marginal, z):
    p = np.clip(special.ndtr(z), _TAIL_CLIP, 1.0 - _TAIL_CLIP)
    return marginal.quantile(p)


def _pair_correlation(marginal_i, marginal_j, rho_z: float, grid=None) -> float:
    """Linear correlation of (F_i^-1(Phi(Z_i)), F_j^-1(Phi(Z_j))) for jointly
    standard-normal (Z_i, Z_j) with correlation rho_z, by tensorized
    Gauss-Hermite quadrature."""
    if grid is None:
        grid = _gh_nodes()
    z, w = grid
    hi = _physical_on_grid(marginal_i, z)
    mu_i = hi @ w
    sd_i = math.sqrt(max((hi * hi) @ w - mu_i**2, 1e-300))
    z2 = rho_z * z[:, None] + math.sqrt(max(1.0 - rho_z * rho_z, 0.0)) * z[None, :]
    hj2 = _physical_on_grid(marginal_j, z2)
    hj = _physical_on_grid(marginal_j, z)
    mu_j = hj @ w
    sd_j = math.sqrt(max((hj * hj) @ w - mu_j**2, 1e-300))
    e_prod = hi @ (hj2 @ w * w)
    return (e_prod - mu_i * mu_j) / (sd_i * sd_j)


def _solve_pair(marginal_i, marginal_j, rho_target: float, tol: float = 1e-9) -> float:
    if rho_target == 0.0:
        return 0.0
    if isinstance(marginal_i, NormalMarginal) and isinstance(marginal_j, NormalMarginal):
        return rho_target  # Nataf identity for Gaussian marginals
    grid = _gh_nodes()
    lo, hi = -0.999999, 0.999999
    f = lambda r: _pair_correlation(marginal_i, marginal_j, r, grid) - rho_target
    f_lo, f_hi = f(lo), f(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        raise InfeasibleCorrelationError(
            f"target correlation {rho_target} unreachable for marginals "
            f"{marginal_i!r} / {marginal_j!r}"
        )
    return float(optimize.brentq(f, lo, hi, xtol=tol))


def _nearest_pd(rho: np.ndarray, floor: float = 1e-10) -> np.ndarray:
    vals, vecs = np.linalg.eigh(rho)
    if vals.min() > floor:
        return rho
    vals = np.maximum(vals, floor)
    fixed = (vecs * vals) @ vecs.T
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    return 0.5 * (fixed + fixed.T)


@dataclass(frozen=True)
class NatafMap:
    """Gaussian-copula mapping between the correlated physical inputs and
    independent standard normals xi."""

    inputs: tuple
    adjusted_gaussian_correlation: np.ndarray
    cholesky_factor: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.inputs)

    def to_physical(self, xi: np.ndarray) -> np.ndarray:
        """Map independent standard normals to physical space:
        u_i = F_i^-1(Phi((L xi)_i)). Accepts a vector or an (m, n) batch."""
        xi = np.asarray(xi, dtype=float)
        single = xi.ndim == 1
        z = np.atleast_2d(xi) @ self.cholesky_factor.T
        p = np.clip(special.ndtr(z), _TAIL_CLIP, 1.0 - _TAIL_CLIP)
        u = np.empty_like(z)
        for i, inp in enumerate(self.inputs):
            u[:, i] = inp.marginal.quantile(p[:, i])
        return u[0] if single else u

    def to_standard(self, u: np.ndarray) -> np.ndarray:
        """Inverse map: xi = L^-1 Phi^-1(F(u))."""
        from scipy.linalg import solve_triangular

        u = np.asarray(u, dtype=float)
        single = u.ndim == 1
        u2 = np.atleast_2d(u)
        z = np.empty_like(u2)
        for i, inp in enumerate(self.inputs):
            p = np.clip(inp.marginal.cdf(u2[:, i]), _TAIL_CLIP, 1.0 - _TAIL_CLIP)
            z[:, i] = special.ndtri(p)
        xi = solve_triangular(self.cholesky_factor, z.T, lower=True).T
        return xi[0] if single else xi


def fit_nataf(scenario: Scenario) -> NatafMap:
    """Solve the Nataf integral equation pairwise and Cholesky-factor the
    adjusted Gaussian correlation. Non-positive-definite adjusted matrices
    are repaired by eigenvalue clipping with a logged warning."""
    inputs = scenario.inputs
    rho = scenario.correlation
    n = len(inputs)
    rho_z = np.eye(n)
    cache: dict = {}
    for i in range(n):
        for j in range(i + 1, n):
            target = rho[i, j]
            if target == 0.0:
                continue
            key = (repr(inputs[i].marginal), repr(inputs[j].marginal), target)
            if key not in cache:
                cache[key] = _solve_pair(inputs[i].marginal, inputs[j].marginal, target)
            rho_z[i, j] = rho_z[j, i] = cache[key]
    try:
        L = np.linalg.cholesky(rho_z)
    except np.linalg.LinAlgError:
        log.warning("adjusted Gaussian correlation not positive definite; applying eigenvalue clip")
        rho_z = _nearest_pd(rho_z)
        L = np.linalg.cholesky(rho_z)
    return NatafMap(inputs, rho_z, L)


# ---------------------------------------------------------------------------
# Latin hypercube sampling
# ---------------------------------------------------------------------------


def lhs_design(n_dim: int, n_samples: int, seed: int) -> np.ndarray:
    """Standard-normal Latin hypercube: per dimension, one uniform draw in
    each of n_samples equiprobable strata, stratum order permuted
    independently per dimension; deterministic in the seed."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    out = np.empty((n_samples, n_dim))
    for j in range(n_dim):
        perm = rng.permutation(n_samples)
        u = rng.uniform(size=n_samples)
        p = (perm + u) / n_samples
        out[:, j] = special.ndtri(np.clip(p, _TAIL_CLIP, 1.0 - _TAIL_CLIP))
    return out


# ---------------------------------------------------------------------------
# scenario file loading
# ---------------------------------------------------------------------------


def _marginal_from_config(cfg: dict):
    kind = cfg["kind"].lower()
    if kind == "weibull":
        return WeibullMarginal(shape=cfg["shape"], scale=cfg["scale"])
    if kind == "beta":
        return BetaMarginal(
            alpha=cfg["alpha"], beta=cfg["beta"],
            r_min=cfg.get("r_min", 0.0), r_max=cfg.get("r_max", 1.0),
        )
    if kind == "normal":
        return NormalMarginal(mu=cfg["mu"], sigma=cfg["sigma"])
    raise ValueError(f"unknown marginal kind {cfg['kind']!r}")


def load_scenario(source, net: Network) -> Scenario:
    """Build a Scenario from a JSON config (path, JSON text, or dict).

    The load registry, sink weighting and transaction direction are resolved
    against the supplied network.
    """
    from .atc import Normalization, Transaction

    if isinstance(source, dict):
        cfg = source
    else:
        text = str(source)
        if not text.lstrip().startswith("{"):
            text = Path(source).read_text()
        cfg = json.loads(text)

    scale = cfg.get("base_scale", {})
    load_scale = float(scale.get("load", 1.0))
    gen_scale = float(scale.get("gen", 1.0))

    inputs: list[RandomInput] = []
    for plant in cfg.get("plants", []):
        kind = plant["type"].lower()
        marginal = _marginal_from_config(plant["marginal"])
        if kind == "wind":
            c = plant["curve"]
            curve = WindCurve(c["v_in"], c["v_rated"], c["v_out"], plant["rated_mw"])
        elif kind == "solar":
            c = plant["curve"]
            curve = SolarCurve(c["r_c"], c["r_std"], plant["rated_mw"])
        else:
            raise ValueError(f"unknown plant type {plant['type']!r}")
        inputs.append(RandomInput(plant["name"], kind, int(plant["bus"]), marginal, curve))

    loads_cfg = cfg.get("loads", {})
    sigma_cfg = loads_cfg.get("sigma", {"rule": "std_fraction_of_mean", "value": 0.05})
    which = loads_cfg.get("buses", "all")
    for b in sorted(net.buses, key=lambda b: b.id):
        if b.p_load <= 0.0:
            continue
        if which != "all" and b.id not in which:
            continue
        mu = b.p_load * net.mva_base * load_scale
        rule = sigma_cfg.get("rule", "std_fraction_of_mean")
        value = float(sigma_cfg.get("value", 0.05))
        if rule == "std_fraction_of_mean":
            sigma = value * mu
        elif rule == "variance_fraction_of_mean":
            sigma = math.sqrt(value * mu)
        else:
            raise ValueError(f"unknown load sigma rule {rule!r}")
        inputs.append(
            RandomInput(
                f"PL{b.id}",
                "load",
                b.id,
                NormalMarginal(mu=mu, sigma=sigma),
                base_p_mw=b.p_load * net.mva_base,
                base_q_mw=b.q_load * net.mva_base,
            )
        )

    corr_cfg = cfg.get("correlation", {})
    n = len(inputs)
    rho = np.eye(n)
    cross = float(corr_cfg.get("cross", 0.0))
    by_class = {
        "wind": float(corr_cfg.get("wind", 0.0)),
        "solar": float(corr_cfg.get("solar", 0.0)),
        "load": float(corr_cfg.get("load", 0.0)),
    }
    for i in range(n):
        for j in range(i + 1, n):
            if inputs[i].kind == inputs[j].kind:
                rho[i, j] = rho[j, i] = by_class[inputs[i].kind]
            else:
                rho[i, j] = rho[j, i] = cross

    txn_cfg = cfg.get("transaction", {})
    sources = [int(b) for b in txn_cfg.get("sources", [])]
    sinks = [int(b) for b in txn_cfg.get("sinks", [])]
    src_weighting = txn_cfg.get("source_weighting", "equal")
    sink_weighting = txn_cfg.get("sink_weighting", "proportional_to_load")
    amount = float(txn_cfg.get("amount_mw", 0.0)) / net.mva_base

    bus_by_id = {b.id: b for b in net.buses}
    if src_weighting == "equal":
        src_shares = {b: 1.0 / len(sources) for b in sources} if sources else {}
    else:
        raise ValueError(f"unknown source weighting {src_weighting!r}")
    if sink_weighting == "proportional_to_load":
        total = sum(bus_by_id[b].p_load for b in sinks)
        if total <= 0.0:
            raise ValueError("sink buses carry no load; use equal weighting")
        sink_shares = {b: bus_by_id[b].p_load / total for b in sinks}
    elif sink_weighting == "equal":
        sink_shares = {b: 1.0 / len(sinks) for b in sinks} if sinks else {}
    else:
        raise ValueError(f"unknown sink weighting {sink_weighting!r}")

    normalization = Normalization(txn_cfg.get("normalization", "unit_source_sum"))
    scale_amount = amount if normalization is Normalization.RAW_MW and amount > 0 else 1.0
    txn = Transaction(
        source_injections={b: s * scale_amount for b, s in src_shares.items()},
        sink_withdrawals={
            b: (
                s * scale_amount,
                s
                * scale_amount
                * (bus_by_id[b].q_load / bus_by_id[b].p_load if bus_by_id[b].p_load > 0 else 0.0),
            )
            for b, s in sink_shares.items()
        },
        normalization=normalization,
    )

    settings = StudySettings(
        gen_scale=gen_scale,
        load_scale=load_scale,
        dispatch_rule=cfg.get("dispatch_rule", "slack"),
        wind_power_factor=float(cfg.get("wind_power_factor", 1.0)),
        confidence_levels=tuple(cfg.get("confidence_levels", (0.99, 0.98, 0.95, 0.90, 0.80))),
        seeds=dict(cfg.get("seeds", {})),
        solver=dict(cfg.get("solver", {})),
        lra=dict(cfg.get("lra", {})),
        name=cfg.get("name", ""),
    )
    return Scenario(
        inputs=tuple(inputs),
        correlation=rho,
        transaction=txn,
        contingencies=tuple(cfg.get("contingencies", ())),
        settings=settings,
    )
