"""Threshold-free metrics and seed-first aggregation of results."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .exceptions import MissingProblem, NoPositives, SingleClass, UnevenSeeds

METRICS = ("auroc", "aupr")


def _as_arrays(scores, labels):
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel().astype(np.int64)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} and labels {labels.shape} differ in shape")
    if not np.all(np.isin(labels, (0, 1))):
        raise ValueError("labels must be binary (1 = anomalous)")
    return scores, labels


def auroc(scores, labels) -> float:
    """Area under the ROC curve, anomalies (label 1) as positives.

    Equals the Mann-Whitney statistic: the fraction of anomalous/normal pairs
    ranked correctly, ties counting one half.
    """
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUROC needs both normal and anomalous samples")
    # twice the average ranks are integers, so the numerator is exact
    doubled_ranks = np.rint(2 * rankdata(scores, method="average")).astype(np.int64)
    numerator = int(doubled_ranks[labels == 1].sum()) - n_pos * (n_pos + 1)
    return numerator / (2 * n_pos * n_neg)


def aupr(scores, labels) -> float:
    """Area under the precision-recall step curve, anomalies as positives.

    Thresholds sweep the distinct scores in descending order (tied scores
    enter together); each recall increment is weighted by the precision at
    that threshold.
    """
    scores, labels = _as_arrays(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise NoPositives("AUPR needs at least one anomalous sample")
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[np.nonzero(np.diff(s))[0], len(s) - 1]
    tp = np.cumsum(y)[last]
    fp = (last + 1) - tp
    precision = tp / (tp + fp)
    recall = tp / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


@dataclass(frozen=True)
class EvaluationResult:
    method: str
    problem_id: str
    seed: int
    auroc: float
    aupr: float


def evaluate(scores, labels, method: str, problem_id: str, seed: int) -> EvaluationResult:
    return EvaluationResult(method, problem_id, int(seed), auroc(scores, labels), aupr(scores, labels))


@dataclass
class AggregateReport:
    """Seed-averaged metrics per problem, grand means, deltas and ranks.

    ``per_problem[method][problem][metric]`` is the seed mean;
    ``mean``, ``delta`` and ``rank`` map ``method -> metric -> value``.
    """

    methods: list
    problems: list
    per_problem: dict
    mean: dict
    delta: dict = field(default_factory=dict)
    rank: dict = field(default_factory=dict)
    reference: str | None = None


def aggregate(results, reference_method: str | None = None) -> AggregateReport:
    """Average over seeds first, then across problems.

    Every (method, problem) cell must hold the same set of seeds and every
    method must cover every problem. Ranks are per problem, 1 = best, ties
    sharing the average rank.
    """
    results = sorted(results, key=lambda r: (r.method, r.problem_id, r.seed))
    if not results:
        raise MissingProblem("no results to aggregate")
    cells = defaultdict(dict)
    for r in results:
        key = (r.method, r.problem_id)
        if r.seed in cells[key]:
            raise ValueError(f"duplicate result for {key} seed {r.seed}")
        cells[key][r.seed] = r
    methods = sorted({m for m, _ in cells})
    problems = sorted({p for _, p in cells})
    seed_sets = {key: frozenset(v) for key, v in cells.items()}
    for m in methods:
        for p in problems:
            if (m, p) not in cells:
                raise MissingProblem(f"method {m!r} has no results for problem {p!r}")
    if len(set(seed_sets.values())) > 1:
        detail = ", ".join(f"{m}/{p}: {sorted(s)}" for (m, p), s in sorted(seed_sets.items()))
        raise UnevenSeeds(f"seed sets differ across cells ({detail})")
    if reference_method is not None and reference_method not in methods:
        raise MissingProblem(f"reference method {reference_method!r} has no results")

    per_problem = {m: {} for m in methods}
    for (m, p), by_seed in cells.items():
        per_problem[m][p] = {
            metric: float(np.mean([getattr(by_seed[s], metric) for s in sorted(by_seed)]))
            for metric in METRICS
        }
    mean = {
        m: {metric: float(np.mean([per_problem[m][p][metric] for p in problems])) for metric in METRICS}
        for m in methods
    }
    rank = {m: {} for m in methods}
    for metric in METRICS:
        ranks = np.array([
            rankdata([-per_problem[m][p][metric] for m in methods], method="average")
            for p in problems
        ])  # (problems, methods)
        for j, m in enumerate(methods):
            rank[m][metric] = float(ranks[:, j].mean())
    delta = {}
    if reference_method is not None:
        delta = {
            m: {metric: mean[m][metric] - mean[reference_method][metric] for metric in METRICS}
            for m in methods
        }
    return AggregateReport(methods, problems, per_problem, mean, delta, rank, reference_method)


# --------------------------------------------------------------------------
# Tables

RESULT_COLUMNS = ("method", "problem_id", "seed", "auroc", "aupr")


def write_results(path, results) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in results:
            w.writerow([r.method, r.problem_id, r.seed, repr(float(r.auroc)), repr(float(r.aupr))])
    return path


def read_results(path) -> list[EvaluationResult]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh, delimiter="\t"))
    return [
        EvaluationResult(r["method"], r["problem_id"], int(r["seed"]), float(r["auroc"]), float(r["aupr"]))
        for r in rows
    ]


def report_rows(report: AggregateReport) -> list[dict]:
    rows = []
    for m in report.methods:
        row = {"method": m}
        for metric in METRICS:
            row[f"mean_{metric}"] = report.mean[m][metric]
            if report.reference is not None:
                row[f"delta_{metric}"] = report.delta[m][metric]
            row[f"rank_{metric}"] = report.rank[m][metric]
        rows.append(row)
    return rows


def write_report(path, report: AggregateReport) -> Path:
    rows = report_rows(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()} for r in rows)
    return path


def format_report(report: AggregateReport) -> str:
    """Aligned text table: mean, delta and rank per metric, in percent."""
    has_delta = report.reference is not None
    header = ["Method"]
    for metric in METRICS:
        name = metric.upper()
        header += [f"Mean {name} (%)"] + ([f"Δ {name} (%)"] if has_delta else []) + ["Rank"]
    body = []
    for m in report.methods:
        row = [m]
        for metric in METRICS:
            row.append(f"{100 * report.mean[m][metric]:.2f}")
            if has_delta:
                row.append(f"{100 * report.delta[m][metric]:+.2f}")
            row.append(f"{report.rank[m][metric]:.2f}")
        body.append(row)
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))
             for r in [header] + body]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
