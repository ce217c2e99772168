"""Walk-forward prediction engine.

Every ``retrain_interval_months`` the pipeline is refit from scratch on the
dataset knowable at the window start, then scores the companies that raise
an entry round inside the window.  All windows are concatenated into one
prediction table for the portfolio simulation.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .dates import add_months, format_date, month_range
from .model import ClassifierConfig
from .pipeline import checkpoint_path, fit_on_dataset
from .store import DataError, EntityStore, FundingRound
from .universe import UniverseConfig, build_dataset_asof, filter_universe

logger = logging.getLogger(__name__)

ENTRY_MODES = {
    "earlybird": ("series_b", "series_c"),
    "any": ("series_b", "series_c", "series_d", "series_e", "series_f",
            "series_g", "series_h", "series_i", "series_j"),
}


@dataclass(frozen=True)
class BacktestConfig:
    start: dt.date = dt.date(2016, 1, 1)
    end: dt.date = dt.date(2022, 1, 1)
    retrain_interval_months: int = 3
    entry_mode: str = "earlybird"
    threshold_base: float = 0.5
    threshold_slope: float = 0.05
    seed: int = 0
    nmf_k: int = 30
    nmf_max_iters: int = 200

    def __post_init__(self):
        if not self.start < self.end:
            raise ValueError("backtest start must precede end")
        if self.retrain_interval_months < 1:
            raise ValueError("retrain interval must be at least one month")
        if self.entry_mode not in ENTRY_MODES:
            raise ValueError(f"entry_mode must be one of {sorted(ENTRY_MODES)}")

    def windows(self) -> list[tuple[dt.date, dt.date]]:
        starts = month_range(self.start, self.end, self.retrain_interval_months)
        return [(s, min(add_months(s, self.retrain_interval_months), self.end)) for s in starts]


@dataclass(frozen=True)
class PredictionRecord:
    company_uuid: str
    name: str
    window_start: dt.date
    window_end: dt.date
    trigger_round_uuid: str
    trigger_round_type: str
    trigger_round_date: dt.date
    score: float
    train_size: int


@dataclass
class PredictionTable:
    records: list[PredictionRecord]
    windows: list[tuple[dt.date, dt.date]] = field(default_factory=list)
    skipped_windows: list[dt.date] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)


def eligible_companies(store: EntityStore, window_start: dt.date, window_end: dt.date,
                       entry_mode: str = "earlybird",
                       universe: Optional[Iterable[str]] = None) -> list[tuple[str, FundingRound]]:
    """Companies announcing an entry round in ``[window_start, window_end)``.

    One record per company: its earliest qualifying round in the window.
    """
    if not window_start < window_end:
        raise ValueError("empty window")
    types = ENTRY_MODES[entry_mode]
    allowed = set(universe) if universe is not None else None
    first: dict[str, FundingRound] = {}
    for r in store.rounds.values():
        if r.investment_type not in types or not window_start <= r.announced_on < window_end:
            continue
        if allowed is not None and r.company_uuid not in allowed:
            continue
        cur = first.get(r.company_uuid)
        if cur is None or (r.announced_on, r.uuid) < (cur.announced_on, cur.uuid):
            first[r.company_uuid] = r
    return sorted(first.items(), key=lambda kv: (kv[1].announced_on, kv[0]))


def run_window(store: EntityStore, ucfg: UniverseConfig, bcfg: BacktestConfig,
               ccfg: ClassifierConfig, window_start: dt.date, window_end: dt.date, *,
               seed: Optional[int] = None, checkpoint_dir=None) -> Optional[list[PredictionRecord]]:
    """Train on data known at ``window_start`` and score that window's entrants.

    Returns ``None`` when the training set is empty or single-class.
    """
    dataset = build_dataset_asof(store, ucfg, window_start)
    if not dataset.records or dataset.n_pos == 0 or dataset.n_neg == 0:
        logger.warning("window %s: training set unusable (%d pos, %d neg); skipped",
                       window_start, dataset.n_pos, dataset.n_neg)
        return None
    universe = filter_universe(store, ucfg)
    entrants = eligible_companies(store, window_start, window_end, bcfg.entry_mode, universe)
    model = fit_on_dataset(store, dataset, clf_config=ccfg, nmf_k=bcfg.nmf_k,
                           nmf_max_iters=bcfg.nmf_max_iters,
                           seed=bcfg.seed if seed is None else seed)
    if checkpoint_dir is not None:
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
        model.save(checkpoint_path(checkpoint_dir, window_start))
    scores = model.score(store, [u for u, _ in entrants], window_start)
    out = [
        PredictionRecord(u, store.companies[u].name, window_start, window_end, r.uuid,
                         r.investment_type, r.announced_on, float(s), len(dataset))
        for (u, r), s in zip(entrants, scores)
    ]
    logger.info("window %s: trained on %d (%d pos), scored %d", window_start, len(dataset),
                dataset.n_pos, len(out))
    return out


def _window_job(args):
    store, ucfg, bcfg, ccfg, i, ws, we, ckpt = args
    return run_window(store, ucfg, bcfg, ccfg, ws, we, seed=bcfg.seed + i, checkpoint_dir=ckpt)


def sort_predictions(records: Iterable[PredictionRecord]) -> list[PredictionRecord]:
    return sorted(records, key=lambda p: (p.window_start, -p.score, p.company_uuid))


def run_walkforward(store: EntityStore, ucfg: UniverseConfig = UniverseConfig(),
                    bcfg: BacktestConfig = BacktestConfig(), ccfg: ClassifierConfig = ClassifierConfig(),
                    *, checkpoint_dir=None, threads: int = 1,
                    window_starts: Optional[Sequence[dt.date]] = None) -> PredictionTable:
    """Master prediction table over all windows in ``[start, end)``.

    ``window_starts`` restricts the run to a subset of the windows (seeds
    stay tied to each window's position, so results match a full run).
    """
    if store.snapshot_date < bcfg.end - dt.timedelta(days=1):
        logger.warning("snapshot %s ends before the backtest end %s", store.snapshot_date, bcfg.end)
    windows = bcfg.windows()
    jobs = [(store, ucfg, bcfg, ccfg, i, ws, we, checkpoint_dir)
            for i, (ws, we) in enumerate(windows)
            if window_starts is None or ws in set(window_starts)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_window_job, jobs))
    else:
        results = [_window_job(j) for j in jobs]
    records, skipped = [], []
    for job, res in zip(jobs, results):
        if res is None:
            skipped.append(job[5])
        else:
            records.extend(res)
    logger.info("walk-forward: %d windows, %d skipped, %d predictions", len(jobs), len(skipped), len(records))
    return PredictionTable(sort_predictions(records), [(j[5], j[6]) for j in jobs], skipped)


PREDICTION_COLUMNS = ("uuid", "name", "window_start", "window_end", "trigger_round_type", "score",
                      "train_size", "trigger_round_uuid", "trigger_round_date")


def write_predictions(table: PredictionTable, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for p in table.records:
            w.writerow([p.company_uuid, p.name, format_date(p.window_start), format_date(p.window_end),
                        p.trigger_round_type, repr(p.score), p.train_size, p.trigger_round_uuid,
                        format_date(p.trigger_round_date)])
    return path


def read_predictions(path) -> PredictionTable:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: prediction table lacks columns {missing}")
        for row in reader:
            records.append(PredictionRecord(
                row["uuid"], row["name"], dt.date.fromisoformat(row["window_start"]),
                dt.date.fromisoformat(row["window_end"]), row["trigger_round_uuid"],
                row["trigger_round_type"], dt.date.fromisoformat(row["trigger_round_date"]),
                float(row["score"]), int(row["train_size"]),
            ))
    windows = sorted({(r.window_start, r.window_end) for r in records})
    return PredictionTable(records, windows)
