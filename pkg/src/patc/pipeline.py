"""End-to-end probabilistic ATC studies.

The surrogate path builds a Latin-hypercube experimental design, evaluates
exact transfer capabilities with the contingency-constrained solver, fits the
low-rank model (enriching the design until the validation target is met),
then samples the surrogate extensively for distribution statistics and
TRM/ATC at the requested confidence levels. The Monte Carlo path runs the
exact solver for every sample and produces the same report schema so the two
can be compared side by side.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lra as lra_mod
from .atc import AtcCaseResult, AtcEngine, TraceOptions
from .lra import ExperimentalDesign, LraModel
from .netmodel import Network
from .powerflow import PfOptions
from .uncertainty import NatafMap, Scenario, fit_nataf, lhs_design

log = logging.getLogger(__name__)

__all__ = [
    "PatcSample",
    "PatcReport",
    "PipelineError",
    "run_lra_patc",
    "run_mcs_patc",
    "run_deterministic",
    "trm_at_confidence",
    "ks_distance",
    "emit_report",
    "compare_reports",
    "silverman_kde",
]


class PipelineError(RuntimeError):
    """Study-level failure (infeasible scenario, too many solver failures)."""


@dataclass
class PatcSample:
    """One evaluated realization of the transfer-capability response."""

    xi: np.ndarray
    u: np.ndarray
    patc: float
    binding_case: int
    binding_class: str | None


@dataclass
class PatcReport:
    """Everything a study emits: moments, curves, TRM table, accounting."""

    kind: str  # "lra" | "mcs"
    scenario_name: str = ""
    scenario_hash: str = ""
    dimension: int = 0
    contingencies: tuple = ()
    mean_analytic: float = np.nan
    std_analytic: float = np.nan
    mean_empirical: float = np.nan
    std_empirical: float = np.nan
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pdf_grid: np.ndarray = field(default_factory=lambda: np.zeros(0))
    pdf_density: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hist_edges: np.ndarray = field(default_factory=lambda: np.zeros(0))
    hist_counts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    trm_table: list = field(default_factory=list)  # (p_cl, mean, trm, atc)
    ed_size: int = 0
    enrichments: int = 0
    surrogate_samples: int = 0
    atc_solver_calls: int = 0
    solver_failures: int = 0
    model_rank: int = 0
    model_degree: int = 0
    model_coefficients: int = 0
    validation_error: float = np.nan
    binding_case_counts: dict = field(default_factory=dict)
    binding_class_counts: dict = field(default_factory=dict)
    det_table: list = field(default_factory=list)  # AtcCaseResult rows
    det_overall: float = np.nan
    timings: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# statistics helpers
# ---------------------------------------------------------------------------


def trm_at_confidence(samples: np.ndarray, p_cl: float) -> tuple[float, float]:
    """Reliability margin and resulting capability at a confidence level.

    The capability is the empirical (1 - p_cl) quantile (linear interpolation
    between order statistics), so it is exceeded with probability p_cl; the
    margin is the sample mean minus that quantile.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ValueError("empty sample set")
    if not 0.0 < p_cl < 1.0:
        raise ValueError("confidence level must be inside (0, 1)")
    atc = float(np.quantile(samples, 1.0 - p_cl, method="linear"))
    trm = float(samples.mean() - atc)
    return trm, atc


def ks_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    pooled = np.concatenate([a, b])
    fa = np.searchsorted(a, pooled, side="right") / a.size
    fb = np.searchsorted(b, pooled, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def silverman_kde(samples: np.ndarray, grid_size: int = 512):
    """Gaussian kernel density with the Silverman rule-of-thumb bandwidth."""
    x = np.asarray(samples, dtype=float)
    m = x.size
    sd = x.std()
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    spread = min(sd, iqr / 1.349) if iqr > 0 else sd
    h = 0.9 * spread * m ** (-0.2)
    if h <= 0.0:
        v = float(x[0])
        return np.array([v]), np.array([np.inf])
    grid = np.linspace(x.min() - 3 * h, x.max() + 3 * h, grid_size)
    dens = np.exp(-0.5 * ((grid[:, None] - x[None, :]) / h) ** 2).sum(axis=1)
    dens /= m * h * np.sqrt(2.0 * np.pi)
    return grid, dens


def _distribution_tables(report: PatcReport, samples: np.ndarray):
    report.samples = samples
    report.mean_empirical = float(samples.mean())
    report.std_empirical = float(samples.std(ddof=1)) if samples.size > 1 else 0.0
    report.pdf_grid, report.pdf_density = silverman_kde(samples)
    nbins = max(10, min(60, int(np.sqrt(samples.size))))
    counts, edges = np.histogram(samples, bins=nbins)
    report.hist_edges, report.hist_counts = edges, counts


def _trm_rows(samples: np.ndarray, levels) -> list:
    mean = float(np.mean(samples))
    rows = []
    for p_cl in levels:
        trm, atc = trm_at_confidence(samples, p_cl)
        rows.append((float(p_cl), mean, trm, atc))
    return rows


# ---------------------------------------------------------------------------
# batch evaluation (optionally across a process pool)
# ---------------------------------------------------------------------------

_WORKER_ENGINE: AtcEngine | None = None
_WORKER_SCN: Scenario | None = None


def _init_worker(net: Network, scenario: Scenario, opts: TraceOptions):
    global _WORKER_ENGINE
    _WORKER_ENGINE = AtcEngine(net, scenario, opts)


def _eval_one(u_row: np.ndarray):
    try:
        results, overall = _WORKER_ENGINE.evaluate(u_row, early_stop=True, full=False)
        binding = min((r for r in results if not r.censored), key=lambda r: r.overall)
        return overall, binding.case_index, binding.binding_class, None
    except Exception as exc:  # per-sample failure; accounted by the caller
        return np.nan, -1, None, f"{type(exc).__name__}: {exc}"


def _evaluate_batch(net, scenario, opts, u_matrix, workers: int = 1):
    """Exact ATC for each realization row; returns (values, case idx, class,
    error strings). Order is fixed by sample index regardless of workers."""
    m = u_matrix.shape[0]
    if workers <= 1:
        _init_worker(net, scenario, opts)
        out = [_eval_one(u_matrix[k]) for k in range(m)]
    else:
        chunk = max(1, m // (workers * 8))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_init_worker, initargs=(net, scenario, opts)
        ) as pool:
            out = list(pool.map(_eval_one, list(u_matrix), chunksize=chunk))
    values = np.array([o[0] for o in out])
    cases = np.array([o[1] for o in out], dtype=int)
    classes = [o[2] for o in out]
    errors = [o[3] for o in out if o[3] is not None]
    return values, cases, classes, errors


def _trace_options(scenario: Scenario) -> TraceOptions:
    cfg = scenario.settings.solver
    pf = PfOptions(tolerance=float(cfg.get("pf_tolerance", 1e-8)))
    return TraceOptions(
        step0=float(cfg.get("step0", 0.1)),
        delta_lambda=float(cfg.get("delta_lambda", 1e-4)),
        lambda_cap=float(cfg.get("lambda_cap", 100.0)),
        pf=pf,
    )


def _check_failures(errors, total: int):
    if not errors:
        return
    frac = len(errors) / total
    if frac > 0.01:
        raise PipelineError(
            f"ATC solver failed on {len(errors)}/{total} design points "
            f"({frac:.1%}); scenario likely infeasible. First error: {errors[0]}"
        )
    log.warning("dropping %d failed design point(s) out of %d", len(errors), total)


def _binding_histograms(report: PatcReport, cases: np.ndarray, classes):
    ok = cases >= 0
    vals, counts = np.unique(cases[ok], return_counts=True)
    report.binding_case_counts = {int(v): int(c) for v, c in zip(vals, counts)}
    class_counts: dict = {}
    for c in classes:
        if c is not None:
            class_counts[c] = class_counts.get(c, 0) + 1
    report.binding_class_counts = class_counts


def run_deterministic(net: Network, scenario: Scenario) -> tuple[list[AtcCaseResult], float]:
    """Full per-case limit table at the forecast point (no uncertainty)."""
    opts = _trace_options(scenario)
    engine = AtcEngine(net, scenario, opts)
    return engine.evaluate(None, early_stop=False, full=True)


# ---------------------------------------------------------------------------
# study drivers
# ---------------------------------------------------------------------------


def run_lra_patc(
    net: Network,
    scenario: Scenario,
    m_design: int,
    m_surrogate: int = 2000,
    seeds: dict | None = None,
    workers: int = 1,
    with_det_table: bool = True,
) -> tuple[LraModel, PatcReport]:
    """Surrogate-based probabilistic ATC study.

    Builds the experimental design (LHS in standard space mapped through the
    Nataf transformation), evaluates it exactly, fits the low-rank model with
    design enrichment until the validation target is met, and tabulates the
    PATC distribution from `m_surrogate` cheap surrogate evaluations.
    """
    st = scenario.settings
    seeds = {**st.seeds, **(seeds or {})}
    seed_design = int(seeds.get("design", 1))
    seed_surrogate = int(seeds.get("surrogate", seed_design + 1))
    lra_cfg = st.lra
    target_error = float(lra_cfg.get("target_error", 1e-2))
    max_enrich = int(lra_cfg.get("max_enrichments", 4))
    rank_candidates = tuple(lra_cfg.get("rank_candidates", (1, 2, 3, 4, 5)))
    degree_candidates = tuple(lra_cfg.get("degree_candidates", (2, 3, 4, 5)))
    validation_fraction = float(lra_cfg.get("validation_fraction", 0.2))
    opts = _trace_options(scenario)

    report = PatcReport(
        kind="lra",
        scenario_name=st.name,
        scenario_hash=scenario.content_hash(),
        dimension=scenario.dimension,
        contingencies=scenario.contingencies,
        seeds={"design": seed_design, "surrogate": seed_surrogate},
    )

    t0 = time.perf_counter()
    nataf = fit_nataf(scenario)
    report.timings["nataf_s"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    xi = lhs_design(scenario.dimension, m_design, seed_design)
    u = nataf.to_physical(xi)
    y, cases, classes, errors = _evaluate_batch(net, scenario, opts, u, workers)
    _check_failures(errors, m_design)
    keep = ~np.isnan(y)
    xi, y = xi[keep], y[keep]
    cases = cases[keep]
    report.atc_solver_calls = m_design
    report.solver_failures = len(errors)

    model, fit_report = None, None
    for round_ in range(max_enrich + 1):
        ed = ExperimentalDesign(xi, y, provenance=f"lhs seed {seed_design} round {round_}")
        model, fit_report = lra_mod.fit(
            ed,
            rank_candidates=rank_candidates,
            degree_candidates=degree_candidates,
            validation_fraction=validation_fraction,
        )
        if fit_report.validation_error <= target_error or round_ == max_enrich:
            break
        extra = max(1, m_design // 2)
        xi_new = lhs_design(scenario.dimension, extra, seed_design + 1000 + round_)
        u_new = nataf.to_physical(xi_new)
        y_new, cases_new, _, errors_new = _evaluate_batch(net, scenario, opts, u_new, workers)
        _check_failures(errors_new, extra)
        keep = ~np.isnan(y_new)
        xi = np.vstack([xi, xi_new[keep]])
        y = np.concatenate([y, y_new[keep]])
        cases = np.concatenate([cases, cases_new[keep]])
        report.atc_solver_calls += extra
        report.solver_failures += len(errors_new)
        report.enrichments = round_ + 1
    report.timings["design_eval_s"] = time.perf_counter() - t0
    report.ed_size = int(y.size)
    report.model_rank = fit_report.chosen_rank
    report.model_degree = fit_report.chosen_degree
    report.model_coefficients = model.coefficient_count
    report.validation_error = fit_report.validation_error

    t0 = time.perf_counter()
    mean_a, var_a = lra_mod.analytic_moments(model)
    report.mean_analytic = mean_a
    report.std_analytic = float(np.sqrt(var_a))
    xi_s = lhs_design(scenario.dimension, m_surrogate, seed_surrogate)
    y_s = lra_mod.evaluate(model, xi_s)
    report.surrogate_samples = int(m_surrogate)
    _distribution_tables(report, y_s)
    report.trm_table = _trm_rows(y_s, st.confidence_levels)
    _binding_histograms(report, cases, classes)
    report.timings["surrogate_s"] = time.perf_counter() - t0

    if with_det_table:
        t0 = time.perf_counter()
        det, det_overall = run_deterministic(net, scenario)
        report.det_table = det
        report.det_overall = det_overall
        report.timings["deterministic_s"] = time.perf_counter() - t0
    return model, report


def run_mcs_patc(
    net: Network,
    scenario: Scenario,
    m_samples: int,
    seed: int | None = None,
    workers: int = 1,
    with_det_table: bool = False,
) -> PatcReport:
    """Monte Carlo benchmark: exact ATC solves over an LHS design."""
    if m_samples < 2:
        raise ValueError("need at least two samples")
    st = scenario.settings
    seed = int(st.seeds.get("mcs", 7)) if seed is None else int(seed)
    opts = _trace_options(scenario)
    report = PatcReport(
        kind="mcs",
        scenario_name=st.name,
        scenario_hash=scenario.content_hash(),
        dimension=scenario.dimension,
        contingencies=scenario.contingencies,
        seeds={"mcs": seed},
    )
    t0 = time.perf_counter()
    nataf = fit_nataf(scenario)
    xi = lhs_design(scenario.dimension, m_samples, seed)
    u = nataf.to_physical(xi)
    y, cases, classes, errors = _evaluate_batch(net, scenario, opts, u, workers)
    _check_failures(errors, m_samples)
    keep = ~np.isnan(y)
    y = y[keep]
    report.atc_solver_calls = m_samples
    report.solver_failures = len(errors)
    report.timings["mcs_eval_s"] = time.perf_counter() - t0

    _distribution_tables(report, y)
    report.mean_analytic = report.mean_empirical
    report.std_analytic = report.std_empirical
    report.trm_table = _trm_rows(y, st.confidence_levels)
    _binding_histograms(report, cases[keep], classes)
    if with_det_table:
        det, det_overall = run_deterministic(net, scenario)
        report.det_table = det
        report.det_overall = det_overall
    return report


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


def _summary_dict(report: PatcReport) -> dict:
    return {
        "kind": report.kind,
        "scenario_name": report.scenario_name,
        "scenario_hash": report.scenario_hash,
        "dimension": report.dimension,
        "contingencies": list(report.contingencies),
        "moments": {
            "mean_analytic_mw": report.mean_analytic,
            "std_analytic_mw": report.std_analytic,
            "mean_empirical_mw": report.mean_empirical,
            "std_empirical_mw": report.std_empirical,
        },
        "trm_table": [
            {"confidence_level": p, "expected_patc_mw": m, "trm_mw": t, "atc_mw": a}
            for p, m, t, a in report.trm_table
        ],
        "counts": {
            "ed_size": report.ed_size,
            "enrichments": report.enrichments,
            "surrogate_samples": report.surrogate_samples,
            "atc_solver_calls": report.atc_solver_calls,
            "solver_failures": report.solver_failures,
        },
        "model": {
            "rank": report.model_rank,
            "degree": report.model_degree,
            "coefficients_plus_weights": report.model_coefficients,
            "validation_error": report.validation_error,
        },
        "binding": {
            "by_case": report.binding_case_counts,
            "by_class": report.binding_class_counts,
        },
        "deterministic": {
            "overall_atc_mw": report.det_overall,
            "cases": [
                {
                    "case": r.case_index,
                    "outage": r.outage,
                    "voltage_limit_mw": r.lambda_voltage,
                    "thermal_limit_mw": r.lambda_thermal,
                    "collapse_mw": r.lambda_collapse,
                    "overall_mw": r.overall,
                    "binding_class": r.binding_class,
                    "binding_facility": r.binding_facility,
                }
                for r in report.det_table
            ],
        },
        "timings_s": report.timings,
        "seeds": report.seeds,
    }


def emit_report(report: PatcReport, out_dir, formats=("json", "csv"), figures: bool = True) -> list:
    """Write the study outputs: summary.json, the delimited distribution and
    TRM tables, the per-case table, and (unless disabled) rendered figures.
    Returns the list of written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    if "json" in formats:
        path = out / "summary.json"
        path.write_text(json.dumps(_summary_dict(report), indent=1, default=_json_default) + "\n")
        written.append(path)

    if "csv" in formats:
        path = out / "pdf.csv"
        lines = ["atc_mw,density"]
        lines += [f"{v!r},{d!r}" for v, d in zip(report.pdf_grid, report.pdf_density)]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        path = out / "cdf.csv"
        lines = ["atc_mw,cumulative_probability"]
        if report.samples.size:
            xs = np.sort(report.samples)
            uniq, last_idx = np.unique(xs, return_index=True)
            # step-function table: leading zero row, then post-jump values
            counts = np.diff(np.append(last_idx, xs.size))
            cum = np.cumsum(counts) / xs.size
            lines.append(f"{uniq[0]!r},0.0")
            lines += [f"{v!r},{c!r}" for v, c in zip(uniq, cum)]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        path = out / "hist.csv"
        lines = ["bin_left_mw,bin_right_mw,count,density"]
        if report.hist_counts.size:
            total = report.hist_counts.sum()
            widths = np.diff(report.hist_edges)
            for k in range(report.hist_counts.size):
                dens = report.hist_counts[k] / (total * widths[k]) if widths[k] > 0 else np.inf
                lines.append(
                    f"{report.hist_edges[k]!r},{report.hist_edges[k + 1]!r},"
                    f"{int(report.hist_counts[k])},{dens!r}"
                )
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        path = out / "trm.csv"
        lines = ["confidence_level,expected_patc_mw,trm_mw,atc_mw"]
        lines += [f"{p!r},{m!r},{t!r},{a!r}" for p, m, t, a in report.trm_table]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

        path = out / "cases.csv"
        lines = ["case,outage,voltage_limit_mw,thermal_limit_mw,collapse_mw,overall_mw,binding_class,binding_facility"]
        for r in report.det_table:
            lines.append(
                f"{r.case_index},{r.outage or 'base'},{r.lambda_voltage!r},{r.lambda_thermal!r},"
                f"{r.lambda_collapse!r},{r.overall!r},{r.binding_class or ''},{r.binding_facility or ''}"
            )
        path.write_text("\n".join(lines) + "\n")
        written.append(path)

    if figures:
        from . import plots

        written += plots.render_distribution(report, out)
    return written


def compare_reports(report_a: PatcReport, report_b: PatcReport) -> dict:
    """Side-by-side accuracy and effort comparison (reference = second)."""
    ks = ks_distance(report_a.samples, report_b.samples)
    ref_mean = report_b.mean_empirical
    ref_std = report_b.std_empirical
    return {
        "kinds": [report_a.kind, report_b.kind],
        "mean_mw": [report_a.mean_analytic, ref_mean],
        "std_mw": [report_a.std_analytic, ref_std],
        "mean_delta_pct": 100.0 * (report_a.mean_analytic - ref_mean) / ref_mean,
        "std_delta_pct": 100.0 * (report_a.std_analytic - ref_std) / ref_std,
        "ks_distance": ks,
        "solver_calls": [report_a.atc_solver_calls, report_b.atc_solver_calls],
        "call_ratio": report_b.atc_solver_calls / max(report_a.atc_solver_calls, 1),
    }
