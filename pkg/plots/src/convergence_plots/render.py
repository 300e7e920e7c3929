"""Offline rendering of convergence curves from experiment CSVs.

Consumes only the published metrics schema (a header row naming columns such
as d, T, N, kl) and renders one image per group with an optionally annotated
least-squares slope.  The fit is ordinary least squares on the transformed
columns: the x column (log-transformed when ``x_log``) against the natural
log of the y column when ``y_log``, matching the regression the experiment
harness reports, so figures and pass/fail analyses cannot disagree.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PNG_METADATA = {"Software": "convergence-plots"}


class PlotError(ValueError):
    """Bad plot specification or unusable data."""


@dataclass
class PlotSpec:
    """What to read, how to group, and where to render."""

    csv: list[str]
    x: str
    y: str
    out: str
    group_by: list[str] = field(default_factory=list)
    fit: bool = True
    x_log: bool = False
    y_log: bool = True
    meta_out: str | None = None

    @staticmethod
    def from_dict(data: dict) -> "PlotSpec":
        known = {"csv", "x", "y", "out", "group_by", "fit", "x_log", "y_log", "meta_out"}
        unknown = set(data) - known
        if unknown:
            raise PlotError(f"unknown plotspec keys: {sorted(unknown)}")
        missing = {"csv", "x", "y", "out"} - set(data)
        if missing:
            raise PlotError(f"plotspec missing required keys: {sorted(missing)}")
        return PlotSpec(**data)

    @staticmethod
    def load(path: str) -> "PlotSpec":
        with open(path) as fh:
            return PlotSpec.from_dict(json.load(fh))


def read_rows(paths: list[str]) -> list[dict]:
    rows: list[dict] = []
    for path in paths:
        with open(path, newline="") as fh:
            rows.extend(csv.DictReader(fh))
    return rows


def fit_slope(x: np.ndarray, y: np.ndarray) -> float:
    """Least-squares slope of y against x via a degree-one polynomial fit."""
    return float(np.polyfit(x, y, 1)[0])


def _group_key(row: dict, cols: list[str]) -> tuple:
    return tuple(row[c] for c in cols)


def _suffix_path(out: str, key: tuple, cols: list[str]) -> str:
    if not cols:
        return out
    stem, dot, ext = out.rpartition(".")
    tag = "_".join(f"{c}={v}" for c, v in zip(cols, key))
    return f"{stem}_{tag}.{ext}" if dot else f"{out}_{tag}"


def render(spec: PlotSpec) -> list[dict]:
    """Render one image per group; returns per-group metadata.

    Raises :class:`PlotError` when a referenced column is missing or a group
    has no usable points; no image is written in that case.
    """
    rows = read_rows(spec.csv)
    if not rows:
        raise PlotError(f"no data rows in {spec.csv}")
    header = rows[0].keys()
    for col in [spec.x, spec.y, *spec.group_by]:
        if col not in header:
            raise PlotError(f"column {col!r} not in CSV header {sorted(header)}")

    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(_group_key(row, spec.group_by), []).append(row)

    results = []
    for key in sorted(groups):
        xs, ys = [], []
        for row in groups[key]:
            xv, yv = float(row[spec.x]), float(row[spec.y])
            if (spec.x_log and xv <= 0) or (spec.y_log and yv <= 0):
                continue
            xs.append(xv)
            ys.append(yv)
        if not xs:
            raise PlotError(f"group {dict(zip(spec.group_by, key))} has no usable points")
        order = np.argsort(xs)
        xs = np.asarray(xs)[order]
        ys = np.asarray(ys)[order]

        fx = np.log(xs) if spec.x_log else xs
        fy = np.log(ys) if spec.y_log else ys
        slope = fit_slope(fx, fy) if spec.fit and len(xs) >= 2 else None

        label = ", ".join(f"{c}={v}" for c, v in zip(spec.group_by, key)) or spec.y
        fig, ax = plt.subplots(figsize=(5.0, 3.6))
        ax.plot(xs, ys, "o-", color="tab:blue")
        if spec.x_log:
            ax.set_xscale("log")
        if spec.y_log:
            ax.set_yscale("log")
        ax.set_xlabel(spec.x)
        ax.set_ylabel(spec.y)
        title = label
        if slope is not None:
            title += f"  (slope {slope:.4f})"
            ax.annotate(
                f"slope = {slope:.6f}",
                xy=(0.05, 0.08),
                xycoords="axes fraction",
                fontsize=9,
            )
        ax.set_title(title, fontsize=10)
        fig.tight_layout()
        out_path = _suffix_path(spec.out, key, spec.group_by)
        fig.savefig(out_path, dpi=120, metadata=PNG_METADATA)
        plt.close(fig)
        results.append(
            {
                "group": dict(zip(spec.group_by, key)),
                "image": out_path,
                "points": len(xs),
                "slope": slope,
            }
        )

    if spec.meta_out:
        with open(spec.meta_out, "w") as fh:
            json.dump({"groups": results}, fh, indent=2)
            fh.write("\n")
    return results
