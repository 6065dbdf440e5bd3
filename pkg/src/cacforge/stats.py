"""Run-log evaluation: metric suite, epoch selection, paired testing.

Consumes per-run prediction logs emitted by an external trainer (one file
per (seed, fold) run), reduces each run to a single AUC via the
discard-then-top-5 epoch rule, and compares configurations with paired
two-sided Wilcoxon signed-rank tests aligned on (seed, fold).

The Wilcoxon statistic is reported in min(W+, W-) form.  Zero differences
are dropped; an all-zero comparison is flagged degenerate with p = 1.0 so
batch reports still complete.  P-values are exact (full enumeration over
sign assignments) up to n = 12 and use a tie-corrected, continuity-corrected
normal approximation above.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EXACT_CUTOFF = 12
RUN_FILE_PATTERN = re.compile(r"^seed(\d+)_fold(\d+)\.tsv$")
RUN_HEADER = "epoch\tpatient_id\tscore\tlabel"


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative; ties count half.

    Computed from average ranks, which is algebraically the pair-count form
    [#(pos > neg) + 0.5 * #(pos = neg)] / (n_pos * n_neg).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = _average_ranks(scores)
    rank_sum = float(ranks[labels == 1].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


@dataclass(frozen=True)
class ConfusionMetrics:
    accuracy: float
    precision: float
    recall: float
    f1: float
    no_positive_predictions: bool


def confusion_metrics(scores, labels, threshold: float = 0.5) -> ConfusionMetrics:
    """Threshold at >= threshold; precision/F1 report flagged zeros when
    nothing is predicted positive."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(scores) == 0:
        raise ValueError("empty input")
    pred = scores >= threshold
    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    fn = int((~pred & (labels == 1)).sum())
    tn = int((~pred & (labels == 0)).sum())

    no_pred_pos = (tp + fp) == 0
    precision = 0.0 if no_pred_pos else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0 else 2 * precision * recall / (precision + recall)
    accuracy = (tp + tn) / len(scores)
    return ConfusionMetrics(accuracy, precision, recall, f1, no_pred_pos)


def epoch_select(per_epoch_auc) -> float:
    """Discard the first five epochs, then average the five best of the rest.

    Guards against optimism from volatile early epochs; requires >= 10.
    """
    vals = list(per_epoch_auc)
    if len(vals) < 10:
        raise ValueError(f"epoch selection needs >= 10 epochs, got {len(vals)}")
    kept = sorted(vals[5:], reverse=True)[:5]
    return sum(kept) / 5.0


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # min(W+, W-); nan when degenerate
    w_plus: float
    w_minus: float
    n: int  # pairs remaining after zero differences are dropped
    p_value: float
    method: str  # "exact", "normal", or "degenerate"
    degenerate: bool


def wilcoxon_signed_rank(a, b, method: str = "auto") -> WilcoxonResult:
    """Two-sided paired signed-rank test on a - b.

    method: "auto" picks exact enumeration for n <= 12 else the normal
    approximation; "exact"/"normal" force a branch (exact is exponential in
    principle but runs as an integer rank-sum convolution).
    """
    if method not in ("auto", "exact", "normal"):
        raise ValueError("method must be auto, exact, or normal")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 1:
        raise ValueError("inputs must be equal-length 1-D vectors")

    d = a - b
    d = d[d != 0.0]  # classical zero policy: drop
    n = len(d)
    if n == 0:
        return WilcoxonResult(math.nan, 0.0, 0.0, 0, 1.0, "degenerate", True)

    ranks = _average_ranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    w = min(w_plus, w_minus)

    use_exact = method == "exact" or (method == "auto" and n <= EXACT_CUTOFF)
    if use_exact:
        p = _exact_two_sided(ranks, w)
        how = "exact"
    else:
        p = _normal_two_sided(ranks, w, n)
        how = "normal"
    return WilcoxonResult(w, w_plus, w_minus, n, p, how, False)


def _exact_two_sided(ranks: np.ndarray, w: float) -> float:
    """Exact p over all 2^n sign assignments via integer convolution.

    Average ranks are half-integers, so doubling makes everything integral
    and the distribution of 2*W+ is a polynomial product; both tails of the
    min-form statistic are summed, subtracting the center overlap once.
    """
    ranks2 = [int(round(2.0 * r)) for r in ranks]
    total2 = sum(ranks2)
    counts = [0] * (total2 + 1)
    counts[0] = 1
    for r2 in ranks2:
        for s in range(total2, r2 - 1, -1):
            if counts[s - r2]:
                counts[s] += counts[s - r2]
    w2 = int(round(2.0 * w))
    low = sum(counts[: w2 + 1])
    high = sum(counts[total2 - w2 :])
    overlap = counts[w2] if 2 * w2 == total2 else 0
    return (low + high - overlap) / float(2 ** len(ranks2))


def _normal_two_sided(ranks: np.ndarray, w: float, n: int) -> float:
    mu = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    # tie correction over groups of equal |d| ranks
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    z = (w - mu + 0.5) / math.sqrt(var)  # continuity correction toward the mean
    p = 2.0 * (0.5 * math.erfc(-z / math.sqrt(2.0)))
    return min(1.0, max(0.0, p))


@dataclass
class PairedComparison:
    name: str
    keys: list  # aligned (seed, fold) pairs
    auc_a: list
    auc_b: list
    result: WilcoxonResult

    @property
    def mean_a(self) -> float:
        return sum(self.auc_a) / len(self.auc_a)

    @property
    def mean_b(self) -> float:
        return sum(self.auc_b) / len(self.auc_b)


def compare_runs(name: str, runs_a: dict, runs_b: dict) -> PairedComparison:
    """Pair two run sets by their (seed, fold) keys; mismatches are an error."""
    if set(runs_a) != set(runs_b):
        only_a = sorted(set(runs_a) - set(runs_b))
        only_b = sorted(set(runs_b) - set(runs_a))
        raise ValueError(f"{name}: run keys differ (A-only {only_a}, B-only {only_b})")
    keys = sorted(runs_a)
    auc_a = [runs_a[k] for k in keys]
    auc_b = [runs_b[k] for k in keys]
    return PairedComparison(name, keys, auc_a, auc_b, wilcoxon_signed_rank(auc_a, auc_b))


_REPORT_HEADER = ("Comparison", "Stat", "p-value", "Mean AUC A", "Mean AUC B")


def report_rows(comparisons: list[PairedComparison], alpha: float = 0.05) -> list[tuple]:
    rows = []
    for c in comparisons:
        stat = "nan" if c.result.degenerate else f"{c.result.statistic:.1f}"
        p = _format_p(c.result.p_value)
        if c.result.p_value < alpha and not c.result.degenerate:
            p += "*"
        rows.append((c.name, stat, p, f"{c.mean_a:.3f}", f"{c.mean_b:.3f}"))
    return rows


def compare_report(comparisons: list[PairedComparison], alpha: float = 0.05) -> str:
    """Aligned text table; significant rows are starred at p < alpha."""
    rows = [_REPORT_HEADER] + report_rows(comparisons, alpha)
    widths = [max(len(r[i]) for r in rows) for i in range(len(_REPORT_HEADER))]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _format_p(p: float) -> str:
    if p != 0 and p < 5e-4:
        return f"{p:.2e}"
    return f"{p:.3f}"


def read_run_file(path: Path) -> dict[int, list[tuple[str, float, int]]]:
    """Parse one run log into {epoch: [(patient_id, score, label), ...]}.

    Enforces the log contract: epochs strictly increasing from 1, and every
    epoch covering the same patient set.
    """
    lines = Path(path).read_text("utf-8").splitlines()
    if not lines or lines[0] != RUN_HEADER:
        raise ValueError(f"{path}: bad run-log header (expected {RUN_HEADER!r})")
    epochs: dict[int, list[tuple[str, float, int]]] = {}
    order: list[int] = []
    for lineno, line in enumerate(lines[1:], 2):
        if not line.strip():
            continue
        try:
            epoch_s, pid, score_s, label_s = line.split("\t")
            epoch, score, label = int(epoch_s), float(score_s), int(label_s)
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: bad row: {exc}") from exc
        if label not in (0, 1):
            raise ValueError(f"{path}:{lineno}: label must be 0 or 1")
        if epoch not in epochs:
            epochs[epoch] = []
            order.append(epoch)
        epochs[epoch].append((pid, score, label))

    if order != list(range(1, len(order) + 1)):
        raise ValueError(f"{path}: epoch indices must increase strictly from 1, got {order[:10]}")
    patient_sets = {e: frozenset(pid for pid, _, _ in rows) for e, rows in epochs.items()}
    first = patient_sets[1]
    for e, pats in patient_sets.items():
        if pats != first:
            raise ValueError(f"{path}: epoch {e} covers a different patient set than epoch 1")
    return epochs


def run_auc(path: Path) -> float:
    """Per-run AUC: epoch-wise AUC reduced by the epoch-selection rule."""
    epochs = read_run_file(path)
    per_epoch = []
    for e in sorted(epochs):
        rows = epochs[e]
        per_epoch.append(roc_auc([s for _, s, _ in rows], [l for _, _, l in rows]))
    return epoch_select(per_epoch)


def load_run_set(directory: Path) -> dict[tuple[int, int], float]:
    """Map (seed, fold) -> run AUC for every seed*_fold*.tsv in a directory."""
    directory = Path(directory)
    runs = {}
    for child in sorted(directory.iterdir()):
        match = RUN_FILE_PATTERN.match(child.name)
        if not match:
            continue
        key = (int(match.group(1)), int(match.group(2)))
        if key in runs:
            raise ValueError(f"{directory}: duplicate run for seed/fold {key}")
        runs[key] = run_auc(child)
    if not runs:
        raise ValueError(f"{directory}: no run logs found (expected seedS_foldF.tsv)")
    return runs
