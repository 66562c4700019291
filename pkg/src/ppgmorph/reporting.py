"""Tables (CSV + markdown) and figures for probe results and training runs."""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .eval import ProbeReport  # noqa: E402

REPORT_COLUMNS = ("task", "metric", "point", "lo", "hi", "formatted", "n_test", "seed", "config_hash",
                  "params", "note")


def _params_str(params: dict) -> str:
    return ";".join(f"{k}={params[k]}" for k in sorted(params))


def emit_report(reports, destination, config_hash: str = "", seed=None, stem: str = "probe_report"):
    """Write ``<stem>.csv`` and ``<stem>.md``; returns the two paths."""
    reports = list(reports)
    if not reports:
        raise ValueError("no reports to emit")
    dest = Path(destination)
    try:
        dest.mkdir(parents=True, exist_ok=True)
        csv_path, md_path = dest / f"{stem}.csv", dest / f"{stem}.md"
        with open(csv_path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(REPORT_COLUMNS)
            for r in reports:
                w.writerow([r.task, r.metric, repr(float(r.point)), repr(float(r.lo)), repr(float(r.hi)),
                            r.formatted(), r.n_test, r.seed if seed is None else seed, config_hash,
                            _params_str(r.params), r.note])
        lines = ["| task | metric | value [95% CI] | n | seed | config |",
                 "|---|---|---|---|---|---|"]
        for r in reports:
            lines.append(f"| {r.task} | {r.metric} | {r.formatted()} | {r.n_test} | "
                         f"{r.seed if seed is None else seed} | {config_hash} |")
        notes = sorted({r.note for r in reports if r.note})
        if notes:
            lines.append("")
            lines.extend(f"Note: {n}" for n in notes)
        md_path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write report to {dest}: {exc}") from None
    return csv_path, md_path


def read_report(path) -> list[ProbeReport]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            params = dict(kv.split("=", 1) for kv in row["params"].split(";") if kv)
            seed = int(row["seed"]) if row["seed"] not in ("", "None") else None
            out.append(ProbeReport(row["task"], row["metric"], float(row["point"]), float(row["lo"]),
                                   float(row["hi"]), int(row["n_test"]), params, seed, row["note"]))
    return out


def read_loss_log(path):
    """Columns of a loss-log CSV as float arrays (blank cells -> NaN)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        return {}
    return {k: np.array([float(r[k]) if r[k] != "" else np.nan for r in rows]) for k in rows[0]}


def plot_loss_curve(log: dict, path, window: int = 50):
    from .ssl import smoothed

    fig, ax = plt.subplots(figsize=(6, 3.5))
    step = log["step"]
    for key, style in (("total", "-"), ("svri", "--"), ("ipa", ":"), ("sqi", "-.")):
        v = log.get(key)
        if v is None or np.all(np.isnan(v)):
            continue
        ax.plot(step, v, style, alpha=0.25, lw=0.8)
        ax.plot(step, smoothed(v, window), style, lw=1.5, label=key)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_distance_histogram(values, path, metric: str = "cosine", bins: int = 20):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.hist(np.asarray(values), bins=bins, color="0.4")
    ax.set_xlabel(f"{metric} distance between subjects")
    ax.set_ylabel("pairs")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_ci(reports, path):
    """Point estimates with 95% CI bars, one row per report."""
    reports = list(reports)
    fig, ax = plt.subplots(figsize=(5, 0.5 + 0.45 * len(reports)))
    y = np.arange(len(reports))
    pts = np.array([r.point for r in reports])
    lo = np.array([r.lo for r in reports])
    hi = np.array([r.hi for r in reports])
    ax.errorbar(pts, y, xerr=np.vstack([np.maximum(pts - lo, 0), np.maximum(hi - pts, 0)]), fmt="o", color="k",
                capsize=3)
    ax.set_yticks(y)
    ax.set_yticklabels([f"{r.task} ({r.metric})" for r in reports])
    ax.invert_yaxis()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def write_histogram_csv(counts, edges, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("bin_lo", "bin_hi", "count"))
        for c, a, b in zip(counts, edges[:-1], edges[1:]):
            w.writerow((repr(float(a)), repr(float(b)), int(c)))
    return path
