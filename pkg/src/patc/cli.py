"""Command-line interface: deterministic tables, surrogate and Monte Carlo
studies, and side-by-side report comparison."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data_path
from .netmodel import parse_case
from .pipeline import (
    PatcReport,
    compare_reports,
    emit_report,
    run_deterministic,
    run_lra_patc,
    run_mcs_patc,
)
from .uncertainty import load_scenario


def _read_input(name: str) -> str:
    """Resolve a case/scenario argument: a path, or the name of a bundled file."""
    p = Path(name)
    if p.exists():
        return p.read_text()
    bundled = data_path(name)
    if bundled.is_file():
        return bundled.read_text()
    raise SystemExit(f"no such file or bundled dataset: {name}")


def _load(case: str, scenario: str):
    net = parse_case(_read_input(case))
    scn = load_scenario(_read_input(scenario), net)
    return net, scn


def _print_case_table(results, overall: float):
    head = f"{'case':>4} {'outage':>10} {'voltage':>12} {'thermal':>12} {'collapse':>12} {'overall':>12}  binding"
    print(head)
    print("-" * len(head))
    for r in results:
        binding = f"{r.binding_class or '-'}" + (f" @ {r.binding_facility}" if r.binding_facility else "")
        print(
            f"{r.case_index:>4} {r.outage or 'base':>10} {r.lambda_voltage:>12.4f} "
            f"{r.lambda_thermal:>12.4f} {r.lambda_collapse:>12.4f} {r.overall:>12.4f}  {binding}"
        )
    print(f"overall ATC: {overall:.4f} MW")


def _cmd_det(args):
    net, scn = _load(args.case, args.scenario)
    results, overall = run_deterministic(net, scn)
    _print_case_table(results, overall)
    if args.out:
        report = PatcReport(kind="det", scenario_name=scn.settings.name,
                            scenario_hash=scenario_hash(scn))
        report.det_table = results
        report.det_overall = overall
        emit_report(report, args.out, formats=("json", "csv"), figures=False)
        print(f"wrote tables to {args.out}")


def scenario_hash(scn) -> str:
    return scn.content_hash()


def _cmd_lra(args):
    net, scn = _load(args.case, args.scenario)
    t0 = time.perf_counter()
    model, report = run_lra_patc(
        net,
        scn,
        m_design=args.mc,
        m_surrogate=args.ms,
        seeds={"design": args.seed} if args.seed is not None else None,
        workers=args.workers,
    )
    wall = time.perf_counter() - t0
    print(
        f"LRA study: rank {report.model_rank}, degree {report.model_degree}, "
        f"{report.model_coefficients} coefficients+weights, "
        f"validation error {report.validation_error:.3e}"
    )
    print(
        f"mean {report.mean_analytic:.4f} MW (analytic) / {report.mean_empirical:.4f} (sampled), "
        f"std {report.std_analytic:.4f} / {report.std_empirical:.4f}"
    )
    print(f"ATC solver calls: {report.atc_solver_calls}  wall {wall:.1f} s")
    for p_cl, mean, trm, atc in report.trm_table:
        print(f"  confidence {p_cl:.1%}: TRM {trm:>9.4f} MW  ATC {atc:>9.4f} MW")
    if args.out:
        from .lra import model_to_json

        written = emit_report(report, args.out)
        Path(args.out, "model.json").write_text(model_to_json(model, report.scenario_hash))
        print(f"wrote {len(written) + 1} file(s) to {args.out}")


def _cmd_mcs(args):
    net, scn = _load(args.case, args.scenario)
    t0 = time.perf_counter()
    report = run_mcs_patc(net, scn, m_samples=args.samples, seed=args.seed, workers=args.workers)
    wall = time.perf_counter() - t0
    print(
        f"MCS study: {report.atc_solver_calls} ATC solves "
        f"({report.solver_failures} failed), wall {wall:.1f} s"
    )
    print(f"mean {report.mean_empirical:.4f} MW  std {report.std_empirical:.4f} MW")
    for p_cl, mean, trm, atc in report.trm_table:
        print(f"  confidence {p_cl:.1%}: TRM {trm:>9.4f} MW  ATC {atc:>9.4f} MW")
    if args.out:
        written = emit_report(report, args.out)
        print(f"wrote {len(written)} file(s) to {args.out}")


def _load_report_dir(path: str) -> PatcReport:
    src = Path(path)
    summary = json.loads((src / "summary.json").read_text())
    report = PatcReport(kind=summary["kind"])
    report.scenario_hash = summary["scenario_hash"]
    m = summary["moments"]
    report.mean_analytic = m["mean_analytic_mw"]
    report.std_analytic = m["std_analytic_mw"]
    report.mean_empirical = m["mean_empirical_mw"]
    report.std_empirical = m["std_empirical_mw"]
    report.atc_solver_calls = summary["counts"]["atc_solver_calls"]
    n_samples = summary["counts"]["surrogate_samples"] or (
        summary["counts"]["atc_solver_calls"] - summary["counts"]["solver_failures"]
    )
    rows = (src / "cdf.csv").read_text().strip().splitlines()[2:]  # header + zero row
    values, cum = [], []
    for row in rows:
        v, c = row.split(",")
        values.append(float(v))
        cum.append(float(c))
    counts = np.rint(np.diff(np.concatenate([[0.0], cum])) * n_samples).astype(int)
    report.samples = np.repeat(values, counts)
    grid, dens = [], []
    for row in (src / "pdf.csv").read_text().strip().splitlines()[1:]:
        v, d = row.split(",")
        grid.append(float(v))
        dens.append(float(d))
    report.pdf_grid, report.pdf_density = np.array(grid), np.array(dens)
    return report


def _cmd_compare(args):
    rep_a = _load_report_dir(args.report_a)
    rep_b = _load_report_dir(args.report_b)
    if rep_a.scenario_hash != rep_b.scenario_hash:
        print("warning: reports come from different scenario definitions", file=sys.stderr)
    result = compare_reports(rep_a, rep_b)
    print(f"{rep_a.kind.upper()} vs {rep_b.kind.upper()} (reference: {rep_b.kind.upper()})")
    print(f"mean: {result['mean_mw'][0]:.4f} vs {result['mean_mw'][1]:.4f} MW "
          f"({result['mean_delta_pct']:+.3f} %)")
    print(f"std:  {result['std_mw'][0]:.4f} vs {result['std_mw'][1]:.4f} MW "
          f"({result['std_delta_pct']:+.3f} %)")
    print(f"KS distance: {result['ks_distance']:.4f}")
    print(f"solver calls: {result['solver_calls'][0]} vs {result['solver_calls'][1]} "
          f"({result['call_ratio']:.1f}x fewer)")
    if args.out:
        from . import plots

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "compare.json").write_text(json.dumps(result, indent=1) + "\n")
        plots.render_comparison(rep_a, rep_b, out)
        print(f"wrote comparison to {args.out}")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="patc",
        description="Deterministic and probabilistic available transfer capability studies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("det", help="deterministic per-case ATC table")
    p.add_argument("case", help="case file path or bundled name")
    p.add_argument("scenario", help="scenario file path or bundled name")
    p.add_argument("--out", help="directory for result tables")
    p.set_defaults(func=_cmd_det)

    p = sub.add_parser("lra", help="surrogate-based probabilistic ATC study")
    p.add_argument("case")
    p.add_argument("scenario")
    p.add_argument("--mc", type=int, default=125, help="experimental design size")
    p.add_argument("--ms", type=int, default=2000, help="surrogate sample count")
    p.add_argument("--seed", type=int, default=None, help="design seed override")
    p.add_argument("--workers", type=int, default=1, help="parallel ATC workers")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_lra)

    p = sub.add_parser("mcs", help="Monte Carlo benchmark study")
    p.add_argument("case")
    p.add_argument("scenario")
    p.add_argument("--samples", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_mcs)

    p = sub.add_parser("compare", help="compare two emitted reports")
    p.add_argument("report_a", help="directory of the first report (e.g. LRA)")
    p.add_argument("report_b", help="directory of the reference report (e.g. MCS)")
    p.add_argument("--out", help="directory for comparison outputs")
    p.set_defaults(func=_cmd_compare)

    args = parser.parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
