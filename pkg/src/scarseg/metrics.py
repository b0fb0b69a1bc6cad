"""Evaluation statistics: Dice overlap, scar burden, Pearson correlation,
Bland-Altman agreement, and the paired Wilcoxon signed-rank test.

The Wilcoxon test drops zero differences, assigns average ranks to tied
absolute differences, and reports W = min(W+, W-). For n_eff <= 20 the
two-sided p-value is exact over all 2^n sign assignments (computed by
dynamic programming over the achievable rank sums, which enumerates the
same distribution); above that a normal approximation with continuity and
tie corrections is used.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DegenerateInputError(ValueError):
    """All paired differences are zero: the test statistic is undefined."""


class UndefinedStatisticError(ValueError):
    """A statistic's formula is undefined for this input (e.g. constant data)."""


def dice_coeff(y: np.ndarray, pred: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|) on binary masks; both empty -> 1, one empty -> 0."""
    if y.shape != pred.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {pred.shape}")
    a = np.asarray(y) > 0
    b = np.asarray(pred) > 0
    denom = int(a.sum()) + int(b.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / denom


def scar_burden(mask: np.ndarray, myo: np.ndarray) -> float:
    """Fraction of myocardial pixels labelled scar (mask is clipped to M)."""
    m = np.asarray(myo) > 0
    n_myo = int(m.sum())
    if n_myo == 0:
        raise ValueError("empty myocardium mask: burden undefined")
    return int((np.asarray(mask) > 0)[m].sum()) / n_myo


def pearson_r(x, y) -> float:
    """Product-moment correlation."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("pearson_r needs two equal-length 1-d sequences")
    if len(x) < 2:
        raise ValueError("pearson_r needs at least 2 pairs")
    dx = x - x.mean()
    dy = y - y.mean()
    sx = float((dx * dx).sum())
    sy = float((dy * dy).sum())
    if sx == 0.0 or sy == 0.0:
        raise UndefinedStatisticError("correlation of a constant sequence is undefined")
    return float((dx * dy).sum()) / math.sqrt(sx * sy)


def bland_altman(gt, pred):
    """(mean difference, lower LoA, upper LoA) for differences gt - pred,
    limits at mean +/- 1.96 sample standard deviations (n-1 denominator)."""
    gt = np.asarray(gt, dtype=np.float64)
    pred = np.asarray(pred, dtype=np.float64)
    if gt.shape != pred.shape or gt.ndim != 1:
        raise ValueError("bland_altman needs two equal-length 1-d sequences")
    if len(gt) < 2:
        raise ValueError("bland_altman needs at least 2 pairs")
    diff = gt - pred
    mean = float(diff.mean())
    sd = float(diff.std(ddof=1))
    return mean, mean - 1.96 * sd, mean + 1.96 * sd


@dataclass
class WilcoxonResult:
    n_effective: int
    statistic: float  # W = min(W+, W-)
    p_value: float  # two-sided
    method: str  # "exact" | "normal-approximation"


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average of 1-based ranks i+1..j+1
        i = j + 1
    return ranks


def _exact_tail_counts(scaled_ranks, w_scaled):
    """(#assignments with W+ <= w, #assignments with W+ >= S - w) by DP over
    the subset-sum distribution of the integer-scaled ranks."""
    total = int(sum(scaled_ranks))
    dist = np.zeros(total + 1, dtype=np.int64)
    dist[0] = 1
    for r in scaled_ranks:
        nxt = dist.copy()
        nxt[r:] += dist[: total + 1 - r]
        dist = nxt
    low = int(dist[: w_scaled + 1].sum())
    high = int(dist[total - w_scaled :].sum())
    return low, high


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Two-sided paired Wilcoxon signed-rank test on a_i - b_i.

    method: "auto" picks exact for n_eff <= 20 and the normal approximation
    above; "exact" / "approx" force one path (exact is limited to n_eff <= 25).
    """
    if method not in ("auto", "exact", "approx"):
        raise ValueError(f"unknown method {method!r}")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValueError("wilcoxon needs two equal-length non-empty 1-d sequences")
    diff = a - b
    diff = diff[diff != 0.0]  # classical treatment: drop zero differences
    n = len(diff)
    if n == 0:
        raise DegenerateInputError("all paired differences are zero")

    ranks = _average_ranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    w_minus = float(ranks[diff < 0].sum())
    w = min(w_plus, w_minus)

    exact = n <= 20 if method == "auto" else method == "exact"
    if exact and n > 25:
        raise ValueError(f"exact enumeration over 2^{n} sign patterns refused (n > 25)")
    if exact:
        # average ranks are multiples of 1/2: doubling makes them integers
        scaled = [int(round(2.0 * r)) for r in ranks]
        low, high = _exact_tail_counts(scaled, int(round(2.0 * w)))
        p = min(low + high, 2**n) / 2**n
        return WilcoxonResult(n, w, p, "exact")

    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, counts = np.unique(np.abs(diff), return_counts=True)
    var -= float(((counts**3 - counts) / 48.0).sum())
    z = (w - mean + 0.5) / math.sqrt(var)  # continuity correction toward the mean
    p = min(math.erfc(-z / math.sqrt(2.0)), 1.0)  # = 2 * Phi(z), capped
    return WilcoxonResult(n, w, p, "normal-approximation")


@dataclass
class EvalRow:
    sample_id: int
    dice: float
    gt_burden: float
    pred_burden: float


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    def add(self, sample_id, dice, gt_burden, pred_burden):
        self.rows.append(EvalRow(sample_id, dice, gt_burden, pred_burden))

    def dices(self):
        return [r.dice for r in self.rows]

    def gt_burdens(self):
        return [r.gt_burden for r in self.rows]

    def pred_burdens(self):
        return [r.pred_burden for r in self.rows]

    def aggregates(self) -> dict:
        """Summary statistics, recomputable from the rows alone. Undefined
        entries (constant burdens, too few rows) are None."""
        out = {
            "median_dice": float(np.median(self.dices())) if self.rows else None,
            "mean_dice": float(np.mean(self.dices())) if self.rows else None,
        }
        try:
            out["pearson_r"] = pearson_r(self.gt_burdens(), self.pred_burdens())
        except (ValueError, UndefinedStatisticError):
            out["pearson_r"] = None
        try:
            mean, lo, hi = bland_altman(self.gt_burdens(), self.pred_burdens())
            out["ba_mean_diff"] = mean
            out["ba_loa_low"] = lo
            out["ba_loa_high"] = hi
        except ValueError:
            out["ba_mean_diff"] = out["ba_loa_low"] = out["ba_loa_high"] = None
        return out


REPORT_HEADER = "id,dice,gt_burden,pred_burden"


def write_report_csv(report: EvalReport, path) -> None:
    """Per-sample rows, then aggregate rows prefixed '#agg,'."""
    lines = [REPORT_HEADER]
    for r in report.rows:
        lines.append(f"{r.sample_id},{r.dice!r},{r.gt_burden!r},{r.pred_burden!r}")
    for key, value in report.aggregates().items():
        lines.append(f"#agg,{key},{'' if value is None else repr(value)}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_report_csv(path):
    """Returns (EvalReport, aggregates-dict-as-written)."""
    from .errors import FormatError

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != REPORT_HEADER:
        got = lines[0] if lines else "<empty file>"
        raise FormatError(f"report line 1: expected header {REPORT_HEADER!r}, got {got!r}")
    report = EvalReport()
    aggregates = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if parts[0] == "#agg":
            if len(parts) != 3:
                raise FormatError(f"report line {lineno}: malformed aggregate row")
            aggregates[parts[1]] = float(parts[2]) if parts[2] else None
            continue
        if len(parts) != 4:
            raise FormatError(f"report line {lineno}: expected 4 fields, got {len(parts)}")
        try:
            report.add(int(parts[0]), float(parts[1]), float(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise FormatError(f"report line {lineno}: {exc}")
    return report, aggregates
