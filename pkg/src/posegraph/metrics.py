"""Keypoint accuracy metrics and report emission.

A prediction counts as correct when its Euclidean distance to the ground
truth is at most ``alpha * max(h, w)``, where (h, w) is that frame's
bounding box over visible ground-truth joints (boundary inclusive).
Invisible joints are excluded; frames whose box would be degenerate
(< 2 visible joints) are skipped with a warning.

``emit_report`` writes the delimited results plus one accuracy-vs-alpha
chart per part, rendered with matplotlib to SVG. Output bytes are
deterministic for fixed inputs (fixed hash salt, no timestamps).
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .grids import JointTrack  # noqa: E402

_SVG_SALT = "posegraph"


@dataclass(frozen=True)
class PckReport:
    alpha: float
    part_names: tuple[str, ...]
    per_part: np.ndarray
    counts: np.ndarray

    @property
    def mean(self) -> float:
        total = int(self.counts.sum())
        if total == 0:
            return 0.0
        return float(np.sum(self.per_part * self.counts) / total)


def pck(pred: JointTrack, gt: JointTrack, alpha: float, part_names=None) -> PckReport:
    if alpha <= 0:
        raise ValueError(f"alpha must be > 0, got {alpha}")
    if pred.positions.shape != gt.positions.shape:
        raise ValueError(
            f"prediction shape {pred.positions.shape} does not match ground truth {gt.positions.shape}"
        )
    k = gt.parts
    names = tuple(part_names) if part_names is not None else tuple(f"part{i}" for i in range(k))
    if len(names) != k:
        raise ValueError(f"expected {k} part names, got {len(names)}")
    correct = np.zeros(k, dtype=np.int64)
    counts = np.zeros(k, dtype=np.int64)
    for t in range(gt.frames):
        vis = gt.visibility[t]
        if vis.sum() < 2:
            warnings.warn(f"frame {t}: fewer than 2 visible joints, skipped (degenerate box)")
            continue
        box = gt.positions[t][vis]
        size = max(float(np.ptp(box[:, 0])), float(np.ptp(box[:, 1])))
        threshold = alpha * size
        dist = np.sqrt(((pred.positions[t] - gt.positions[t]) ** 2).sum(axis=1))
        hit = (dist <= threshold) & vis
        correct += hit.astype(np.int64)
        counts += vis.astype(np.int64)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_part = np.where(counts > 0, correct / np.maximum(counts, 1), 0.0)
    return PckReport(alpha=float(alpha), part_names=names, per_part=per_part, counts=counts)


def pck_curve(pred: JointTrack, gt: JointTrack, alphas, part_names=None) -> list[PckReport]:
    alphas = list(alphas)
    if alphas != sorted(alphas):
        raise ValueError("alphas must be sorted ascending")
    return [pck(pred, gt, a, part_names) for a in alphas]


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def emit_report(reports_by_model: dict[str, list[PckReport]], out_dir, stem: str = "pck") -> list[Path]:
    """Write the accuracy tables and figures for one or more models.

    Produces ``<stem>.csv`` (rows model,part,alpha,accuracy,count with a
    per-alpha mean row), one pivot table per alpha (models x parts, the
    grouped-comparison layout), and one SVG curve chart per part plus the
    mean. Returns the written paths.
    """
    if not reports_by_model:
        raise ValueError("no reports to emit")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = next(iter(reports_by_model.values()))
    part_names = first[0].part_names
    alphas = [r.alpha for r in first]
    for model, reports in reports_by_model.items():
        if [r.alpha for r in reports] != alphas or any(r.part_names != part_names for r in reports):
            raise ValueError(f"model {model!r} reports do not align with the others")

    written = []
    long_path = out / f"{stem}.csv"
    with open(long_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["model", "part", "alpha", "accuracy", "count"])
        for model, reports in reports_by_model.items():
            for rep in reports:
                for name, acc, cnt in zip(rep.part_names, rep.per_part, rep.counts):
                    writer.writerow([model, name, f"{rep.alpha:g}", _fmt(acc), int(cnt)])
                writer.writerow([model, "mean", f"{rep.alpha:g}", _fmt(rep.mean), int(rep.counts.sum())])
    written.append(long_path)

    for i, alpha in enumerate(alphas):
        pivot_path = out / f"{stem}_table_alpha{alpha:g}.csv"
        with open(pivot_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", *part_names, "mean"])
            for model, reports in reports_by_model.items():
                rep = reports[i]
                writer.writerow([model, *(_fmt(a) for a in rep.per_part), _fmt(rep.mean)])
        written.append(pivot_path)

    with matplotlib.rc_context({"svg.hashsalt": _SVG_SALT}):
        curves = {name: idx for idx, name in enumerate(part_names)}
        curves["mean"] = None
        for name, idx in curves.items():
            fig, ax = plt.subplots(figsize=(4.5, 3.2))
            for model, reports in reports_by_model.items():
                ys = [r.mean if idx is None else float(r.per_part[idx]) for r in reports]
                ax.plot(alphas, ys, marker="o", label=model)
            ax.set_xlabel("alpha")
            ax.set_ylabel("accuracy")
            ax.set_ylim(-0.02, 1.02)
            ax.set_title(name)
            ax.grid(True, alpha=0.3)
            ax.legend(loc="lower right", fontsize=8)
            fig.tight_layout()
            fig_path = out / f"{stem}_{name}.svg"
            fig.savefig(fig_path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(fig_path)
    return written
