"""Per-class precision, recall, F1 and IoU with macro and support-weighted averages."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from synthpc.mesh import CLASS_NAMES, IGNORE_ID

COLUMNS = ("precision", "recall", "f1", "iou")


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # counts[gt, pred]
    class_names: list[str]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsRow:
    name: str
    precision: float
    recall: float
    f1: float
    iou: float
    support: int
    notes: list[str] = field(default_factory=list)

    def values(self) -> tuple[float, float, float, float]:
        return (self.precision, self.recall, self.f1, self.iou)


@dataclass
class MetricsReport:
    rows: list[MetricsRow]
    macro: MetricsRow
    weighted: MetricsRow

    def row(self, name: str) -> MetricsRow:
        for r in self.all_rows():
            if r.name == name:
                return r
        raise KeyError(name)

    def all_rows(self) -> list[MetricsRow]:
        return [*self.rows, self.macro, self.weighted]


def _apply_map(labels, class_map):
    labels = np.asarray(labels).astype(np.int64)
    if not class_map:
        return labels
    lut = np.arange(256, dtype=np.int64)
    for src, dst in class_map.items():
        lut[int(src)] = IGNORE_ID if dst is None else int(dst)
    return lut[labels]


def confusion(pred, gt, class_map: dict | None = None, class_names=None) -> ConfusionMatrix:
    """Counts of (gt, pred) pairs; points whose gt or pred is the ignore id are skipped.

    ``class_map`` sends source ids to new ids (``None`` or 255 means ignore). The
    remaining classes are renumbered densely in ascending order of their new id.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape[0] if pred.ndim else 0} predictions vs "
                         f"{gt.shape[0] if gt.ndim else 0} ground-truth labels")
    p = _apply_map(pred, class_map)
    g = _apply_map(gt, class_map)
    if class_names is None:
        ids = sorted(CLASS_NAMES)
        if class_map:
            kept = sorted({IGNORE_ID if v is None else int(v) for v in class_map.values()}
                          | {c for c in ids if c not in {int(s) for s in class_map}})
            ids = [c for c in kept if c != IGNORE_ID]
        class_names = [CLASS_NAMES.get(c, str(c)) for c in ids]
    else:
        ids = list(range(len(class_names)))
    lut = np.full(256, -1, np.int64)
    lut[ids] = np.arange(len(ids))
    pi, gi = lut[p], lut[g]
    stray = ((pi < 0) & (p != IGNORE_ID)) | ((gi < 0) & (g != IGNORE_ID))
    if stray.any():
        raise ValueError(f"label {int(np.where(pi < 0, p, g)[stray][0])} is outside the evaluated classes")
    ok = (pi >= 0) & (gi >= 0)
    n = len(ids)
    counts = np.bincount(gi[ok] * n + pi[ok], minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts.astype(np.int64), list(class_names))


def _ratio(num, den, note, notes):
    if den == 0:
        notes.append(note)
        return 0.0
    return num / den


def per_class(cm: ConfusionMatrix) -> list[MetricsRow]:
    c = cm.counts
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    rows = []
    for j, name in enumerate(cm.class_names):
        notes: list[str] = []
        p = _ratio(tp[j], tp[j] + fp[j], "precision undefined (no predictions)", notes)
        r = _ratio(tp[j], tp[j] + fn[j], "recall undefined (no ground truth)", notes)
        f1 = _ratio(2 * p * r, p + r, "f1 undefined (precision + recall = 0)", notes)
        iou = _ratio(tp[j], tp[j] + fp[j] + fn[j], "iou undefined (empty union)", notes)
        rows.append(MetricsRow(name, float(p), float(r), float(f1), float(iou), int(tp[j] + fn[j]), notes))
    return rows


def f1_from_pr(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def iou_from_f1(f1: float) -> float:
    return f1 / (2 - f1)


def aggregate(rows, supports=None) -> tuple[MetricsRow, MetricsRow]:
    """Macro (plain mean) and weighted (support-weighted mean) rows."""
    rows = list(rows)
    vals = np.array([r.values() for r in rows], dtype=float).reshape(-1, 4)
    sup = np.array([r.support for r in rows] if supports is None else supports, dtype=float)
    total = int(sup.sum())
    macro = vals.mean(axis=0) if len(rows) else np.zeros(4)
    notes = []
    if total > 0:
        weighted = (vals * sup[:, None]).sum(axis=0) / sup.sum()
    else:
        weighted = np.zeros(4)
        notes.append("weighted average undefined (zero support)")
    return (MetricsRow("macro avg", *map(float, macro), total),
            MetricsRow("weighted avg", *map(float, weighted), total, notes))


def evaluate(pred, gt, class_map: dict | None = None) -> MetricsReport:
    cm = confusion(pred, gt, class_map)
    rows = per_class(cm)
    macro, weighted = aggregate(rows)
    return MetricsReport(rows, macro, weighted)


def render_report(report: MetricsReport, fmt: str = "text") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", *COLUMNS, "support"])
        for r in report.all_rows():
            w.writerow([r.name, *(f"{v:.6f}" for v in r.values()), r.support])
        return buf.getvalue()
    if fmt == "json":
        doc = [{"class": r.name, **{k: round(v, 6) for k, v in zip(COLUMNS, r.values())}, "support": r.support}
               for r in report.all_rows()]
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "text":
        width = max(12, *(len(r.name) for r in report.all_rows()))
        lines = [" " * width + "".join(f"{h:>11}" for h in ("precision", "recall", "f1-score", "IOU", "support"))]
        for r in report.rows:
            lines.append(f"{r.name:<{width}}" + "".join(f"{v:>11.3f}" for v in r.values()) + f"{r.support:>11d}")
        lines.append("")
        for r in (report.macro, report.weighted):
            lines.append(f"{r.name:<{width}}" + "".join(f"{v:>11.3f}" for v in r.values()) + f"{r.support:>11d}")
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def parse_report_csv(text: str) -> MetricsReport:
    rows = list(csv.DictReader(io.StringIO(text)))
    if not rows or list(rows[0]) != ["class", *COLUMNS, "support"]:
        raise ValueError("report CSV header must be class,precision,recall,f1,iou,support")
    parsed = [MetricsRow(r["class"], *(float(r[c]) for c in COLUMNS), int(r["support"])) for r in rows]
    by_name = {r.name: r for r in parsed}
    if "macro avg" not in by_name or "weighted avg" not in by_name:
        raise ValueError("report CSV lacks the macro/weighted rows")
    return MetricsReport([r for r in parsed if r.name not in ("macro avg", "weighted avg")],
                         by_name["macro avg"], by_name["weighted avg"])
