"""Evaluation arithmetic: IOU, flower matching, F1, EOA and count regression."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DegenerateInputError",
    "MatchResult",
    "ImageRow",
    "MetricsReport",
    "LinearFit",
    "iou",
    "mean_iou",
    "match_flowers",
    "precision_recall_f1",
    "eoa",
    "eoa_stats",
    "build_report",
    "fit_linear",
    "correct_count",
]


class DegenerateInputError(ValueError):
    """Input for which the requested statistic is undefined."""


def _same_shape(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    return a, b


def iou(pred: np.ndarray, truth: np.ndarray, positive_class: bool = True) -> float:
    """``|T ∩ P| / |T ∪ P|`` for pixels equal to ``positive_class``; 1.0 if both sets are empty."""
    pred, truth = _same_shape(pred, truth)
    p = pred == positive_class
    t = truth == positive_class
    union = np.count_nonzero(p | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(p & t) / union


def mean_iou(pred: np.ndarray, truth: np.ndarray) -> float:
    return (iou(pred, truth, True) + iou(pred, truth, False)) / 2.0


@dataclass
class MatchResult:
    tp: int
    fp: int
    fn_: int
    pairs: list[tuple[int, int]] = field(default_factory=list)  # (candidate index, annotation index)


def match_flowers(candidates: Sequence, annotations) -> MatchResult:
    """Greedy candidate-to-annotation matching.

    Candidates are visited by descending score (ties by ``cx`` then ``cy``);
    each claims the nearest still-unclaimed annotation whose distance to its
    center is at most the candidate radius.
    """
    pts = np.asarray(annotations, dtype=np.float64).reshape(-1, 2)
    free = np.ones(len(pts), dtype=bool)
    order = sorted(range(len(candidates)), key=lambda i: (-candidates[i].score, candidates[i].cx, candidates[i].cy))
    pairs = []
    for i in order:
        if not free.any():
            break
        c = candidates[i]
        d = np.hypot(pts[:, 0] - c.cx, pts[:, 1] - c.cy)
        d[~free] = np.inf
        j = int(np.argmin(d))
        if d[j] <= c.r:
            free[j] = False
            pairs.append((i, j))
    tp = len(pairs)
    return MatchResult(tp, len(candidates) - tp, len(pts) - tp, pairs)


def precision_recall_f1(m: MatchResult) -> tuple[float, float, float]:
    precision = m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    recall = m.tp / (m.tp + m.fn_) if m.tp + m.fn_ else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def eoa(estimated: float, annotated: float) -> float:
    """Estimated-over-annotated count ratio."""
    if annotated <= 0:
        raise DegenerateInputError(f"annotated count must be positive, got {annotated}")
    return estimated / annotated


def eoa_stats(rows: Iterable[tuple[float, float]]) -> tuple[float, float]:
    """Mean and population standard deviation of per-row EOA over ``(estimated, annotated)`` rows."""
    ratios = np.array([eoa(e, a) for e, a in rows], dtype=np.float64)
    if ratios.size == 0:
        raise DegenerateInputError("eoa_stats needs at least one row")
    return float(ratios.mean()), float(ratios.std())


@dataclass
class ImageRow:
    name: str
    tp: int
    fp: int
    fn_: int

    @property
    def estimated(self) -> int:
        return self.tp + self.fp

    @property
    def annotated(self) -> int:
        return self.tp + self.fn_

    @property
    def scores(self) -> tuple[float, float, float]:
        return precision_recall_f1(MatchResult(self.tp, self.fp, self.fn_))

    @property
    def eoa(self) -> float:
        return eoa(self.estimated, self.annotated)


@dataclass
class MetricsReport:
    """Per-image rows plus pooled scores.

    Precision, recall and F1 of the aggregate are computed from the summed
    TP/FP/FN counts; EOA is averaged over images.
    """

    rows: list[ImageRow]
    precision: float
    recall: float
    f1: float
    mean_eoa: float
    sigma_eoa: float

    COLUMNS = ("image", "F1", "Recall", "Precision", "EOA", "Annotated", "Estimated", "TP", "FP", "FN")

    def _records(self):
        for r in self.rows:
            p, rc, f = r.scores
            e = r.eoa if r.annotated else math.nan
            yield (r.name, f, rc, p, e, r.annotated, r.estimated, r.tp, r.fp, r.fn_)
        tp = sum(r.tp for r in self.rows)
        fp = sum(r.fp for r in self.rows)
        fn_ = sum(r.fn_ for r in self.rows)
        yield ("TOTAL", self.f1, self.recall, self.precision, self.mean_eoa, tp + fn_, tp + fp, tp, fp, fn_)

    def to_text(self) -> str:
        head = f"{'image':<24}{'F1':>8}{'Recall':>9}{'Prec.':>8}{'EOA':>9}{'Annot.':>8}{'Estim.':>8}{'TP':>7}{'FP':>7}{'FN':>7}"
        lines = [head]
        for rec in self._records():
            name, f, rc, p, e, a, es, tp, fp, fn_ = rec
            lines.append(f"{name:<24}{f:>8.1%}{rc:>9.1%}{p:>8.1%}{e:>9.1%}{a:>8d}{es:>8d}{tp:>7d}{fp:>7d}{fn_:>7d}")
        lines.append(f"sigma(EOA) = {self.sigma_eoa:.2%}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for name, f, rc, p, e, a, es, tp, fp, fn_ in self._records():
            w.writerow([name, f"{f:.6f}", f"{rc:.6f}", f"{p:.6f}", f"{e:.6f}", a, es, tp, fp, fn_])
        w.writerow(["sigma_eoa", f"{self.sigma_eoa:.6f}", "", "", "", "", "", "", "", ""])
        return buf.getvalue()


def build_report(rows: Sequence[ImageRow]) -> MetricsReport:
    if not rows:
        raise DegenerateInputError("report needs at least one image row")
    total = MatchResult(sum(r.tp for r in rows), sum(r.fp for r in rows), sum(r.fn_ for r in rows))
    p, rc, f = precision_recall_f1(total)
    annotated = [r for r in rows if r.annotated > 0]
    if annotated:
        mean_e, sigma_e = eoa_stats((r.estimated, r.annotated) for r in annotated)
    else:
        mean_e, sigma_e = math.nan, math.nan
    return MetricsReport(list(rows), p, rc, f, mean_e, sigma_e)


@dataclass(frozen=True)
class LinearFit:
    slope: float
    intercept: float
    r_squared: float

    def to_text(self) -> str:
        return f"slope={self.slope!r}, intercept={self.intercept!r}, r2={self.r_squared!r}\n"

    @classmethod
    def from_text(cls, text: str) -> "LinearFit":
        fields = {}
        for part in text.strip().split(","):
            key, sep, value = part.strip().partition("=")
            if not sep:
                raise ValueError(f"malformed fit text: {text!r}")
            fields[key.strip()] = float(value)
        try:
            return cls(fields["slope"], fields["intercept"], fields["r2"])
        except KeyError as exc:
            raise ValueError(f"fit text lacks {exc.args[0]!r}: {text!r}") from exc


def fit_linear(points: Iterable[tuple[float, float]]) -> LinearFit:
    """Ordinary least squares ``y = slope * x + intercept`` with ``R² = Sxy² / (Sxx Syy)``."""
    pts = np.asarray(list(points), dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2:
        raise DegenerateInputError("need at least two points for a linear fit")
    x, y = pts[:, 0], pts[:, 1]
    dx, dy = x - x.mean(), y - y.mean()
    sxx, syy, sxy = dx @ dx, dy @ dy, dx @ dy
    if sxx == 0:
        raise DegenerateInputError("all x values are equal")
    slope = sxy / sxx
    intercept = y.mean() - slope * x.mean()
    r2 = 1.0 if syy == 0 else sxy * sxy / (sxx * syy)
    return LinearFit(float(slope), float(intercept), float(r2))


def correct_count(fit: LinearFit, estimated: float) -> float:
    """Invert the fit: the annotated count that the line maps to ``estimated``."""
    if fit.slope == 0:
        raise DegenerateInputError("cannot invert a fit with zero slope")
    return (estimated - fit.intercept) / fit.slope
