"""Delimited output and figures for experiment results.

All writers are deterministic: identical inputs produce byte-identical files,
SVG figures included (fixed hash salt, no embedded timestamps).  Floats are
written with ``repr``, which round-trips exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .simulation import ExperimentResult, ShapiroSummary  # noqa: E402

_SVG_SALT = "latentrank"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_records_csv(result: ExperimentResult, path: str | Path) -> Path:
    """One row per replicate: condition, outcome flags, then the estimate."""
    path = Path(path)
    header = (["experiment", "n", "delta", "rep", "converged", "stop_reason",
               "admissible"] + list(result.labels) + ["loss"])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in result.records:
            row = [r.experiment, r.n, _fmt(float(r.delta)), r.rep,
                   _fmt(r.converged), r.stop_reason, _fmt(r.admissible)]
            row += [_fmt(float(v)) for v in r.theta]
            row.append(_fmt(float(r.loss)))
            writer.writerow(row)
    return path


_STAT_FIELDS = ("mean_all", "sd_all", "mean_converged", "sd_converged",
                "mean_nonconverged", "sd_nonconverged")


def write_summary_csv(result: ExperimentResult, path: str | Path) -> Path:
    path = Path(path)
    header = ["n", "delta", "nsim", "prop_converged", "se_converged",
              "prop_admissible", "se_admissible"]
    for lab in result.labels:
        header += [f"{lab}:{stat}" for stat in _STAT_FIELDS]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for s in result.summaries:
            row = [s.n, _fmt(float(s.delta)), s.nsim,
                   _fmt(s.prop_converged), _fmt(s.se_converged),
                   _fmt(s.prop_admissible), _fmt(s.se_admissible)]
            for lab in result.labels:
                st = s.params[lab]
                row += [_fmt(getattr(st, f)) for f in _STAT_FIELDS]
            writer.writerow(row)
    return path


def write_summary_json(result: ExperimentResult, path: str | Path) -> Path:
    path = Path(path)
    payload = {
        "experiment": result.config.experiment,
        "nsim": result.config.nsim,
        "seed": result.config.seed,
        "labels": list(result.labels),
        "conditions": [
            {
                "n": s.n,
                "delta": s.delta,
                "nsim": s.nsim,
                "prop_converged": s.prop_converged,
                "se_converged": s.se_converged,
                "prop_admissible": s.prop_admissible,
                "se_admissible": s.se_admissible,
                "params": {lab: {f: getattr(st, f) for f in _STAT_FIELDS}
                           for lab, st in s.params.items()},
            }
            for s in result.summaries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, allow_nan=True)
        fh.write("\n")
    return path


def write_shapiro_hist_csv(summary: ShapiroSummary, path: str | Path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for left, right, count in zip(summary.hist_edges[:-1],
                                      summary.hist_edges[1:],
                                      summary.hist_counts):
            writer.writerow([_fmt(float(left)), _fmt(float(right)), count])
    return path


def _save_deterministic(fig, path: Path):
    plt.rcParams["svg.hashsalt"] = _SVG_SALT
    if path.suffix.lower() == ".svg":
        fig.savefig(path, format="svg", metadata={"Date": None})
    else:
        fig.savefig(path)
    plt.close(fig)


def experiment_figure(result: ExperimentResult, path: str | Path) -> Path:
    """Two panels over sample size (log scale): proportion admissible and
    proportion converged, one line per delta, with +/- 2 SE error bars."""
    path = Path(path)
    deltas = sorted({s.delta for s in result.summaries})
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 3.6), sharey=True)
    panels = (("admissible", "prop_admissible", "se_admissible"),
              ("converged", "prop_converged", "se_converged"))
    cmap = plt.get_cmap("viridis")
    for ax, (title, pfield, sefield) in zip(axes, panels):
        for k, d in enumerate(deltas):
            rows = sorted((s for s in result.summaries if s.delta == d),
                          key=lambda s: s.n)
            ns = [s.n for s in rows]
            ps = [getattr(s, pfield) for s in rows]
            ses = [2.0 * getattr(s, sefield) for s in rows]
            color = cmap(k / max(1, len(deltas) - 1))
            ax.errorbar(ns, ps, yerr=ses, marker="o", markersize=3,
                        linestyle="--", linewidth=1, capsize=2,
                        color=color, label=f"delta={d:g}")
        ax.set_xscale("log")
        ax.set_ylim(0, 1.02)
        ax.set_xlabel("sample size")
        ax.set_title(f"proportion {title}")
        ax.grid(True, alpha=0.3)
    axes[0].set_ylabel("proportion")
    axes[1].legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    _save_deterministic(fig, path)
    return path


def shapiro_figure(summary: ShapiroSummary, path: str | Path) -> Path:
    """Histogram of the estimate of the zero residual variance; the negative
    (inadmissible) mass is drawn in a warning color."""
    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.0, 3.4))
    edges = summary.hist_edges
    for left, right, count in zip(edges[:-1], edges[1:], summary.hist_counts):
        color = "#d4a017" if right <= 0 else "#4878a8"
        ax.bar(left, count, width=right - left, align="edge",
               color=color, edgecolor="white", linewidth=0.3)
    ax.axvline(0.0, color="black", linewidth=1)
    ax.set_xlabel("estimated residual variance (true value 0)")
    ax.set_ylabel("replicates")
    ax.set_title(f"inadmissible fraction "
                 f"{summary.fraction_negative:.3f} (n={summary.n}, "
                 f"nsim={summary.nsim})")
    fig.tight_layout()
    _save_deterministic(fig, path)
    return path
