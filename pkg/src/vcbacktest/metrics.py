"""Binary-classification metrics and yearly time-series cross-validation."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .backtest import eligible_companies
from .model import ClassifierConfig
from .pipeline import fit_on_dataset, training_rows
from .store import EntityStore
from .universe import UniverseConfig, build_dataset_asof, filter_universe, success_events

logger = logging.getLogger(__name__)

CV_YEARS = tuple(range(2016, 2022))


class UndefinedMetricError(ValueError):
    """Raised when a metric is not defined for the given labels or predictions."""


def _validate(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel()
    if s.shape != y.shape:
        raise ValueError(f"scores and labels differ in length: {s.size} vs {y.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0/1")
    return s, y.astype(bool)


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counting one half."""
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes")
    ranks = rankdata(s)  # midranks for ties
    u = math.fsum(ranks[y]) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def pr_auc(scores, labels) -> float:
    """Step-wise area under the precision-recall curve (average precision).

    One operating point per distinct score; each recall increment is
    weighted by the precision reached at that threshold.
    """
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("pr_auc needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    tp = np.cumsum(y_sorted)
    # last index of each block of tied scores
    ends = np.flatnonzero(np.r_[s_sorted[1:] != s_sorted[:-1], True])
    tp_at = tp[ends].astype(np.float64)
    precision = tp_at / (ends + 1)
    recall_step = np.diff(np.r_[0.0, tp_at]) / n_pos
    return math.fsum(precision * recall_step)


def precision_recall_at(scores, labels, threshold: float) -> tuple[Optional[float], float]:
    """Precision and recall when predicting positive for ``score >= threshold``.

    Precision is ``None`` when nothing is predicted positive.
    """
    if threshold != threshold:
        raise ValueError("threshold is NaN")
    s, y = _validate(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("recall needs at least one positive")
    pred = s >= threshold
    tp = int(np.sum(pred & y))
    n_pred = int(pred.sum())
    precision = tp / n_pred if n_pred else None
    return precision, tp / n_pos


@dataclass
class FoldReport:
    fold_year: Optional[int]
    precision: Optional[float]
    recall: Optional[float]
    roc_auc: Optional[float]
    pr_auc: Optional[float]
    n_pos: int
    n_neg: int
    n_train: int = 0


METRIC_NAMES = ("precision", "recall", "roc_auc", "pr_auc")


def fold_report(year: Optional[int], scores, labels, threshold: float = 0.5, n_train: int = 0) -> FoldReport:
    y = np.asarray(labels, dtype=int)
    n_pos = int(y.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        return FoldReport(year, None, None, None, None, n_pos, n_neg, n_train)
    p, r = precision_recall_at(scores, y, threshold)
    return FoldReport(year, p, r, roc_auc(scores, y), pr_auc(scores, y), n_pos, n_neg, n_train)


def average_reports(reports: Sequence[FoldReport]) -> FoldReport:
    """Mean of each metric over the folds where it is defined."""
    means = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        means[name] = math.fsum(vals) / len(vals) if vals else None
    return FoldReport(None, n_pos=sum(r.n_pos for r in reports), n_neg=sum(r.n_neg for r in reports),
                      n_train=sum(r.n_train for r in reports), **means)


def fold_training_set(store: EntityStore, ucfg: UniverseConfig, year: int):
    """(dataset, feature rows) the fold for ``year`` trains on."""
    dataset = build_dataset_asof(store, ucfg, dt.date(year, 1, 1))
    rows, _ = training_rows(store, dataset)
    return dataset, rows


def fold_test_set(store: EntityStore, ucfg: UniverseConfig, year: int,
                  entry_mode: str = "earlybird") -> tuple[list[str], list[int]]:
    """Companies entering in ``year`` and whether a success followed their entry round."""
    start, end = dt.date(year, 1, 1), dt.date(year + 1, 1, 1)
    entrants = eligible_companies(store, start, end, entry_mode, filter_universe(store, ucfg))
    uuids, labels = [], []
    for uuid, trigger in entrants:
        events = success_events(store, uuid, ucfg)
        uuids.append(uuid)
        labels.append(int(any(e.date >= trigger.announced_on for e in events)))
    return uuids, labels


def time_series_cv(store: EntityStore, ucfg: UniverseConfig = UniverseConfig(),
                   years: Sequence[int] = CV_YEARS, *, threshold: float = 0.5,
                   clf_config: ClassifierConfig = ClassifierConfig(), nmf_k: int = 30,
                   nmf_max_iters: int = 200, seed: int = 0,
                   entry_mode: str = "earlybird") -> tuple[list[FoldReport], FoldReport]:
    """One fold per year: train on what was known on Jan 1, test on that year's entrants."""
    reports = []
    for i, year in enumerate(years):
        dataset = build_dataset_asof(store, ucfg, dt.date(year, 1, 1))
        uuids, labels = fold_test_set(store, ucfg, year, entry_mode)
        if dataset.n_pos == 0 or dataset.n_neg == 0 or not uuids:
            logger.warning("fold %d: cannot train or test (%d pos, %d neg, %d test)",
                           year, dataset.n_pos, dataset.n_neg, len(uuids))
            y = np.asarray(labels, dtype=int)
            reports.append(FoldReport(year, None, None, None, None, int(y.sum()),
                                      int(y.size - y.sum()), len(dataset)))
            continue
        model = fit_on_dataset(store, dataset, clf_config=clf_config, nmf_k=nmf_k,
                               nmf_max_iters=nmf_max_iters, seed=seed + i)
        scores = model.score(store, uuids, dt.date(year, 1, 1))
        rep = fold_report(year, scores, labels, threshold, len(dataset))
        logger.info("fold %d: %s", year, rep)
        reports.append(rep)
    return reports, average_reports(reports)


def write_cv_report(reports: Sequence[FoldReport], mean: FoldReport, path) -> Path:
    path = Path(path)
    names = [f.name for f in fields(FoldReport)]

    def cell(v):
        return "" if v is None else (repr(v) if isinstance(v, float) else str(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for r in reports:
            w.writerow([cell(getattr(r, n)) for n in names])
        w.writerow(["mean"] + [cell(getattr(mean, n)) for n in names[1:]])
    return path


def holdout_rows(store: EntityStore, ucfg: UniverseConfig = UniverseConfig(), *,
                 founded_before: dt.date = dt.date(2010, 1, 1), mode: str = "first"):
    """Snapshot-labeled companies with a series B round, observed just before it.

    Restricting to an early founding cohort keeps the classes on the same
    calendar, so calendar-driven features (e.g. investor activity counts)
    cannot separate them on their own.
    """
    from .features import company_features
    from .universe import label_snapshot

    dataset = label_snapshot(store, ucfg, mode=mode)
    uuids, rows, labels = [], [], []
    for rec in dataset.records:
        if store.companies[rec.company_uuid].founded_on >= founded_before:
            continue
        b = next((r for r in store.company_rounds(rec.company_uuid) if r.investment_type == "series_b"), None)
        if b is None:
            continue
        uuids.append(rec.company_uuid)
        rows.append(company_features(store, rec.company_uuid, b.announced_on))
        labels.append(rec.label)
    return uuids, rows, labels


def transfer_auc(train_store: EntityStore, test_store: EntityStore, ucfg: UniverseConfig = UniverseConfig(), *,
                 seed: int = 0, founded_before: dt.date = dt.date(2010, 1, 1),
                 clf_config: ClassifierConfig = ClassifierConfig(), nmf_k: int = 30,
                 nmf_max_iters: int = 200) -> float:
    """ROC AUC on ``test_store``'s holdout rows of a pipeline fit on ``train_store``'s."""
    from .pipeline import fit_scoring_model

    _, train_rows, train_y = holdout_rows(train_store, ucfg, founded_before=founded_before)
    _, test_rows, test_y = holdout_rows(test_store, ucfg, founded_before=founded_before)
    model = fit_scoring_model(train_rows, train_y, as_of=train_store.snapshot_date, clf_config=clf_config,
                              nmf_k=nmf_k, nmf_max_iters=nmf_max_iters, seed=seed)
    return roc_auc(model.score_rows(test_rows), test_y)


def holdout_auc(store_a: EntityStore, store_b: EntityStore, ucfg: UniverseConfig = UniverseConfig(),
                **kw) -> float:
    """Mean AUC of fitting on each of two independent samples and testing on the other.

    Testing on a separately drawn sample avoids the pull below 0.5 that
    in-sample k-fold splitting shows under a null signal: a fold's training
    labels and its test labels are complements of one finite population.
    """
    return 0.5 * (transfer_auc(store_a, store_b, ucfg, **kw) + transfer_auc(store_b, store_a, ucfg, **kw))
