"""Inference, ICBHI metrics, precision-recall analysis and report files.

A prediction vector is binarized at 0.5 (inclusive) and mapped to one of
the four ICBHI classes by the crackle/wheeze priority rule.  Specificity is
the fraction of Normal cycles predicted Normal; sensitivity is the fraction
of abnormal cycles whose predicted class matches exactly (a true Both
predicted as Crackle counts as a miss).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .augment import AugmentedSample
from .features import apply_norm, concat_mel, mel_spectrogram
from .ingest import RespiratoryCycle
from .labels import IcbhiClass, Label3, to_icbhi_class
from .model import TrainedModel, forward, sigmoid

THRESHOLD = 0.5
AP_CLASSES = ("normal", "crackle", "wheeze")
METRICS = ("sp", "se", "score", "ap_normal", "ap_crackle", "ap_wheeze")


@dataclass(frozen=True)
class PredictionRecord:
    cycle_id: str
    probabilities: tuple[float, ...]
    true_label: Label3
    patient_id: str

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if len(p) not in (2, 3) or not np.all(np.isfinite(p)) or p.min() < 0 or p.max() > 1:
            raise ValueError(f"{self.cycle_id}: probabilities must be 2 or 3 values in [0, 1]")

    def probability(self, cls: str) -> float | None:
        """Probability for ``normal``/``crackle``/``wheeze``; None for normal in 2-label mode."""
        k = AP_CLASSES.index(cls)
        if len(self.probabilities) == 2:
            return None if k == 0 else self.probabilities[k - 1]
        return self.probabilities[k]


def predict_cycles(model: TrainedModel, cycles: Sequence[RespiratoryCycle],
                   batch_size: int = 32) -> list[PredictionRecord]:
    records = []
    for k in range(0, len(cycles), batch_size):
        chunk = cycles[k:k + batch_size]
        specs = np.stack([model.features(c.samples) for c in chunk])
        probs = sigmoid(forward(model.params, specs).main_logits)
        for c, p in zip(chunk, probs):
            records.append(PredictionRecord(c.cycle_id, tuple(float(v) for v in p), c.label, c.patient))
    return records


def infer_cycle(model: TrainedModel, cycle: RespiratoryCycle) -> PredictionRecord:
    """Pad/crop one cycle to the model's input length and predict its label probabilities."""
    return predict_cycles(model, [cycle])[0]


def binarize_and_classify(probs: Sequence[float]) -> IcbhiClass:
    bits = [int(p >= THRESHOLD) for p in probs]
    if len(bits) == 2:
        bits = [0, *bits]
    elif len(bits) != 3:
        raise ValueError(f"expected 2 or 3 probabilities, got {len(bits)}")
    return to_icbhi_class(bits)


# --------------------------------------------------------------------------
# precision-recall


@dataclass(frozen=True)
class PRCurve:
    precision: np.ndarray
    recall: np.ndarray
    thresholds: np.ndarray
    ap: float


def pr_curve(scores, targets) -> PRCurve:
    """Precision/recall at every distinct score threshold, highest first.

    Equal scores enter together.  ``ap = sum_k (R_k - R_{k-1}) * P_k`` with
    ``R_0 = 0`` (step-wise, no interpolation).
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(targets).astype(bool)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError("scores and targets must be 1-D and the same length")
    n_pos = int(y.sum())
    if n_pos == 0:
        raise ValueError("average precision is undefined without positives")
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.cumsum(y)[last]
    precision = tp / (last + 1)
    recall = tp / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return PRCurve(precision, recall, s[last], ap)


def pr_curve_and_ap(records: Sequence[PredictionRecord], cls: str) -> PRCurve:
    if cls not in AP_CLASSES:
        raise ValueError(f"class must be one of {AP_CLASSES}, got {cls!r}")
    scores = [r.probability(cls) for r in records]
    if any(v is None for v in scores):
        raise ValueError(f"no {cls} probability in 2-label predictions")
    targets = [getattr(r.true_label, cls) for r in records]
    return pr_curve(scores, targets)


# --------------------------------------------------------------------------
# metrics


@dataclass
class EvalReport:
    sp: float | None
    se: float | None
    score: float | None
    confusion: np.ndarray  # rows: true class, cols: predicted class (IcbhiClass order)
    ap: dict[str, float | None]
    flags: list[str] = field(default_factory=list)

    @property
    def n_records(self) -> int:
        return int(self.confusion.sum())

    def metric(self, name: str) -> float | None:
        if name.startswith("ap_"):
            return self.ap.get(name[3:])
        return getattr(self, name)


def icbhi_metrics(records: Sequence[PredictionRecord]) -> EvalReport:
    confusion = np.zeros((4, 4), dtype=np.int64)
    for r in records:
        if not r.true_label.is_original():
            raise ValueError(f"{r.cycle_id}: true label {tuple(r.true_label)} is not a single-cycle label")
        confusion[to_icbhi_class(r.true_label), binarize_and_classify(r.probabilities)] += 1
    flags = []
    n_normal = confusion[IcbhiClass.NORMAL].sum()
    n_abnormal = confusion[1:].sum()
    sp = se = None
    if n_normal:
        sp = 100.0 * confusion[IcbhiClass.NORMAL, IcbhiClass.NORMAL] / n_normal
    else:
        flags.append("no_normal_support")
    if n_abnormal:
        se = 100.0 * np.trace(confusion[1:, 1:]) / n_abnormal
    else:
        flags.append("no_abnormal_support")
    score = (sp + se) / 2.0 if sp is not None and se is not None else None

    ap: dict[str, float | None] = {}
    for cls in AP_CLASSES:
        try:
            ap[cls] = pr_curve_and_ap(records, cls).ap
        except ValueError:
            ap[cls] = None
            flags.append(f"ap_undefined_{cls}")
    return EvalReport(sp=sp, se=se, score=score, confusion=confusion, ap=ap, flags=flags)


@dataclass(frozen=True)
class Aggregate:
    mean: float | None
    std: float | None
    n: int


def aggregate_runs(reports: Sequence[EvalReport]) -> dict[str, Aggregate]:
    """Mean and sample standard deviation (n - 1) of each metric over runs."""
    if len(reports) < 2:
        raise ValueError("aggregation needs at least two reports")
    out = {}
    for name in METRICS:
        values = [r.metric(name) for r in reports]
        if any(v is None for v in values):
            out[name] = Aggregate(None, None, len(values))
            continue
        v = np.asarray(values, dtype=np.float64)
        out[name] = Aggregate(float(v.mean()), float(v.std(ddof=1)), len(v))
    return out


# --------------------------------------------------------------------------
# embeddings


def sample_features(model: TrainedModel, sample: AugmentedSample) -> np.ndarray:
    first, second = sample.halves
    spec = concat_mel(first, second, mel_spectrogram(first), mel_spectrogram(second))
    return apply_norm(spec, model.norm)


def embed_samples(model: TrainedModel, samples: Sequence[AugmentedSample], batch_size: int = 32) -> np.ndarray:
    rows = []
    for k in range(0, len(samples), batch_size):
        specs = np.stack([sample_features(model, s) for s in samples[k:k + batch_size]])
        rows.append(np.atleast_2d(forward(model.params, specs).z))
    return np.concatenate(rows) if rows else np.zeros((0, model.params.arch.embed_dim))


def export_embeddings(model: TrainedModel, samples: Sequence[AugmentedSample],
                      path: str | Path | None = None) -> list[list]:
    """Rows of (sample_id, z_0..z_{D-1}, kind); also written as CSV when ``path`` is given."""
    z = embed_samples(model, samples)
    rows = [[s.sample_id, *(float(v) for v in vec), s.kind] for s, vec in zip(samples, z)]
    if path is not None:
        d = model.params.arch.embed_dim
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", *(f"z{i}" for i in range(d)), "sample_type"])
            for row in rows:
                w.writerow([row[0], *(repr(v) for v in row[1:-1]), row[-1]])
    return rows


# --------------------------------------------------------------------------
# files


def _fmt(v: float | None) -> str:
    return "" if v is None else repr(float(v))


def write_predictions(records: Iterable[PredictionRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cycle_id", "patient_id", "p_normal", "p_crackle", "p_wheeze", "n", "c", "w", "pred_class"])
        for r in records:
            probs = [r.probability(c) for c in AP_CLASSES]
            w.writerow([r.cycle_id, r.patient_id, *(_fmt(p) for p in probs), *r.true_label,
                        binarize_and_classify(r.probabilities).name.lower()])


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    records = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            probs = tuple(float(row[k]) for k in ("p_normal", "p_crackle", "p_wheeze") if row[k] != "")
            label = Label3.of([int(row["n"]), int(row["c"]), int(row["w"])])
            records.append(PredictionRecord(row["cycle_id"], probs, label, row["patient_id"]))
    return records


def write_metrics_csv(reports: EvalReport | Sequence[tuple[str, EvalReport]], path: str | Path) -> None:
    """One row per run; a bare report is written as a single unnamed run."""
    rows = [("", reports)] if isinstance(reports, EvalReport) else list(reports)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run", *METRICS, "n", "flags"])
        for run, report in rows:
            w.writerow([run, *(_fmt(report.metric(m)) for m in METRICS), report.n_records,
                        ";".join(report.flags)])


def read_metrics_csv(path: str | Path) -> list[dict[str, float | None]]:
    with open(path, newline="") as fh:
        return [{m: (float(row[m]) if row[m] != "" else None) for m in METRICS} for row in csv.DictReader(fh)]


def write_aggregate_csv(agg: dict[str, Aggregate], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "mean", "std", "n_runs"])
        for name, a in agg.items():
            w.writerow([name, _fmt(a.mean), _fmt(a.std), a.n])


def format_report(report: EvalReport, agg: dict[str, Aggregate] | None = None) -> str:
    def pct(v):
        return "withheld" if v is None else f"{v:.2f}%"

    names = [c.name.capitalize() for c in IcbhiClass]
    lines = [
        f"cycles evaluated: {report.n_records}",
        f"Specificity (Sp): {pct(report.sp)}",
        f"Sensitivity (Se): {pct(report.se)}",
        f"ICBHI Score:      {pct(report.score)}",
        "",
        "confusion (rows = true, cols = predicted)",
        "           " + "".join(f"{n:>9}" for n in names),
    ]
    for n, row in zip(names, report.confusion):
        lines.append(f"{n:>10} " + "".join(f"{v:>9d}" for v in row))
    lines.append("")
    for cls in AP_CLASSES:
        v = report.ap[cls]
        lines.append(f"AP {cls:<8} {'undefined' if v is None else f'{v:.4f}'}")
    if report.flags:
        lines.append("flags: " + ", ".join(report.flags))
    if agg:
        lines.append("")
        lines.append(f"over {next(iter(agg.values())).n} runs (mean ± sample std):")
        for name, a in agg.items():
            body = "undefined" if a.mean is None else f"{a.mean:.4f} ± {a.std:.4f}"
            lines.append(f"  {name:<11} {body}")
    return "\n".join(lines) + "\n"


def write_pr_csv(curve: PRCurve, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "precision", "recall"])
        for t, p, r in zip(curve.thresholds, curve.precision, curve.recall):
            w.writerow([repr(float(t)), repr(float(p)), repr(float(r))])


def write_pr_svg(curves: dict[str, PRCurve], path: str | Path, size: int = 320) -> None:
    """Minimal hand-written SVG of step PR curves (recall on x, precision on y)."""
    pad = 40
    colors = {"normal": "#2a9d3a", "crackle": "#d62728", "wheeze": "#1f77b4"}

    def xy(r, p):
        return f"{pad + r * size:.2f},{pad + (1 - p) * size:.2f}"

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size + 2 * pad}" height="{size + 2 * pad}">',
        f'<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>',
        f'<text x="{pad + size / 2}" y="{size + pad + 30}" text-anchor="middle" font-size="12">recall</text>',
        f'<text x="12" y="{pad + size / 2}" font-size="12" transform="rotate(-90 12 {pad + size / 2})" '
        f'text-anchor="middle">precision</text>',
    ]
    for k, (cls, c) in enumerate(curves.items()):
        pts = [xy(0.0, c.precision[0])]
        prev_r = 0.0
        for p, r in zip(c.precision, c.recall):
            pts.append(xy(prev_r, p))
            pts.append(xy(r, p))
            prev_r = r
        color = colors.get(cls, "black")
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{" ".join(pts)}"/>')
        parts.append(f'<text x="{pad + 8}" y="{pad + size - 10 - 16 * k}" font-size="12" fill="{color}">'
                     f'{cls} AP={c.ap:.3f}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")

