"""Report emission: JSON summary, plausibility/KL text table, QoI density plot."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.stats import gaussian_kde

from .errors import PredselError


def format_table(art) -> str:
    """Text table laid out like the results tables: one row per spring, one
    column per forcing, each cell ``plausibility (KL)``; single-physics
    plausibilities head the rows and columns. ``*`` marks the plausibility
    winner, ``+`` the predictive winner."""
    plaus = art.plaus
    scores = art.predictive_report.scores
    p_win = art.plausibility_report.winner
    k_win = art.predictive_report.winner
    width = 16
    head = ["".ljust(12)] + [f"{c} {art.plaus_b[c]:.2f}".center(width) for c in plaus.cols]
    lines = ["".join(head)]
    for r in plaus.rows:
        cells = [f"{r} {art.plaus_a[r]:.2f}".ljust(12)]
        for c in plaus.cols:
            mid = f"{r}-{c}"
            mark = ("*" if mid == p_win else "") + ("+" if mid == k_win else "")
            cells.append(f"{plaus[mid]:.2f} ({scores[mid]:.2f}){mark}".center(width))
        lines.append("".join(cells))
    lines.append("")
    lines.append(f"plausibility winner (*): {p_win}")
    lines.append(f"predictive winner (+):   {k_win}")
    floor = art.predictive_report.noise_floor
    if floor:
        lines.append(f"KL at estimator noise floor: {', '.join(floor)}")
    lines.append(f"truth QoI: {art.truth_qoi:.6g}")
    return "\n".join(lines) + "\n"


def qoi_density(samples, grid):
    """KDE of a positive QoI built on log-scale (Silverman bandwidth), mapped back."""
    logq = np.log(np.asarray(samples, dtype=float))
    if np.ptp(logq) == 0:
        return np.zeros_like(grid)
    kde = gaussian_kde(logq, bw_method="silverman")
    return kde(np.log(grid)) / grid


def plot_qoi(art, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = {mid: p.qoi_samples for mid, p in art.predictives.items()}
    if art.predictive_report.bma is not None and len(series) > 1:
        series["BMA"] = art.predictive_report.bma.qoi_samples
    everything = np.concatenate(list(series.values()) + [np.array([art.truth_qoi])])
    lo, hi = np.quantile(everything[everything > 0], [0.001, 0.999])
    lo = min(lo, art.truth_qoi) * 0.9
    hi = max(hi, art.truth_qoi) * 1.1
    grid = np.linspace(lo, hi, 400)

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for mid, q in series.items():
        if mid == "BMA":
            ax.plot(grid, qoi_density(q, grid), "k--", lw=2, label="BMA")
        elif art.plaus[mid] > 1e-3 or len(series) <= 4:
            ax.plot(grid, qoi_density(q, grid), lw=1.5, label=f"{mid} ({art.plaus[mid]:.2f})")
    ax.axvline(art.truth_qoi, color="r", lw=1.5, label="truth")
    ax.set_xlabel("max |velocity|")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def emit_report(art, formats=("json", "table", "plot"), out_dir=None) -> list:
    """Write the requested report formats; returns the written paths."""
    from .scenario import report_dict

    if isinstance(formats, str):
        formats = (formats,)
    out_dir = Path(out_dir or art.run_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PredselError(f"cannot create output directory {out_dir}: {exc}") from exc
    stem = art.config.run_name
    written = []
    for fmt in formats:
        try:
            if fmt == "json":
                path = out_dir / f"report_{stem}.json"
                path.write_text(json.dumps(report_dict(art), indent=2, sort_keys=True))
            elif fmt == "table":
                path = out_dir / f"table_{stem}.txt"
                path.write_text(format_table(art))
            elif fmt == "plot":
                path = plot_qoi(art, out_dir / f"qoi_{stem}.svg")
            else:
                raise ValueError(f"unknown report format {fmt!r}")
        except OSError as exc:
            raise PredselError(f"cannot write {fmt} report to {out_dir}: {exc}") from exc
        written.append(Path(path))
    return written
