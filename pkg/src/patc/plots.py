"""Figure rendering for study reports (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

RC = {
    "figure.figsize": (7.0, 3.0),
    "figure.dpi": 130,
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.bbox": "tight",
}

_PNG_META = {"Software": "patc"}


def _ecdf(samples):
    xs = np.sort(samples)
    return xs, np.arange(1, xs.size + 1) / xs.size


def render_distribution(report, out_dir) -> list:
    """PDF and CDF panels for one report; returns written paths."""
    out = Path(out_dir)
    written = []
    with plt.rc_context(RC):
        fig, (ax_pdf, ax_cdf) = plt.subplots(1, 2)
        if report.pdf_grid.size > 1:
            ax_pdf.plot(report.pdf_grid, report.pdf_density, color="tab:blue")
            ax_pdf.fill_between(report.pdf_grid, report.pdf_density, alpha=0.2, color="tab:blue")
        if report.hist_counts.size:
            widths = np.diff(report.hist_edges)
            total = report.hist_counts.sum()
            ax_pdf.bar(
                report.hist_edges[:-1],
                report.hist_counts / (total * widths),
                width=widths,
                align="edge",
                alpha=0.25,
                color="tab:gray",
                linewidth=0,
            )
        ax_pdf.set_xlabel("transfer capability (MW)")
        ax_pdf.set_ylabel("density")
        ax_pdf.set_title(f"PATC distribution ({report.kind.upper()})")
        if report.samples.size:
            xs, f = _ecdf(report.samples)
            ax_cdf.step(xs, f, where="post", color="tab:red")
        ax_cdf.set_xlabel("transfer capability (MW)")
        ax_cdf.set_ylabel("cumulative probability")
        ax_cdf.set_ylim(-0.02, 1.02)
        ax_cdf.set_title("empirical CDF")
        path = out / "distribution.png"
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
        written.append(path)
    return written


def render_comparison(report_a, report_b, out_dir, labels=("LRA", "MCS")) -> list:
    """Overlaid PDF/CDF curves of two reports; returns written paths."""
    out = Path(out_dir)
    written = []
    with plt.rc_context(RC):
        fig, (ax_pdf, ax_cdf) = plt.subplots(1, 2)
        for rep, label, color in zip((report_a, report_b), labels, ("tab:blue", "tab:red")):
            if rep.pdf_grid.size > 1:
                ax_pdf.plot(rep.pdf_grid, rep.pdf_density, label=label, color=color)
            if rep.samples.size:
                xs, f = _ecdf(rep.samples)
                ax_cdf.step(xs, f, where="post", label=label, color=color)
        ax_pdf.set_xlabel("transfer capability (MW)")
        ax_pdf.set_ylabel("density")
        ax_pdf.set_title("PATC density")
        ax_pdf.legend()
        ax_cdf.set_xlabel("transfer capability (MW)")
        ax_cdf.set_ylabel("cumulative probability")
        ax_cdf.set_ylim(-0.02, 1.02)
        ax_cdf.set_title("PATC CDF")
        ax_cdf.legend()
        path = out / "compare.png"
        fig.savefig(path, metadata=_PNG_META)
        plt.close(fig)
        written.append(path)
    return written
