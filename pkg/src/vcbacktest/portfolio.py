"""Monthly fund simulation over the walk-forward prediction table.

At each month boundary ``t`` the fund

1. adds up to ``monthly_top_k`` of the best-scored companies whose entry
   round fell in the month ending at ``t`` (score above the threshold,
   capacity permitting, never re-entering a company), then
2. reviews holdings: a success event during the month exits with
   ``success``; no round within ``longtime_days`` exits with ``longtime``.

Whatever is still held at the end is ``STILL_IN``.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .dates import add_months, format_date, month_range
from .store import EntityStore, format_number
from .universe import EXIT_MODES, SuccessEvent, UniverseConfig, success_events

SUCCESS, LONGTIME, STILL_IN = "success", "longtime", "STILL_IN"


@dataclass(frozen=True)
class PortfolioConfig:
    start: dt.date = dt.date(2016, 1, 1)
    end: dt.date = dt.date(2022, 1, 1)
    capacity: int = 30
    monthly_top_k: int = 3
    threshold_base: float = 0.5
    threshold_slope: float = 0.05
    # None: use the smallest train_size in the prediction table (first window).
    reference_size: Optional[int] = None
    longtime_days: int = 730
    exit_mode: str = "last"
    stake_usd: float = 1.0
    compounding: bool = False

    def __post_init__(self):
        if self.monthly_top_k > self.capacity:
            raise ValueError("monthly_top_k cannot exceed capacity")
        if self.longtime_days <= 0:
            raise ValueError("longtime_days must be positive")
        if self.exit_mode not in EXIT_MODES:
            raise ValueError(f"exit_mode must be one of {EXIT_MODES}")


def threshold_fn(train_size: int, reference_size: int, base: float = 0.5, slope: float = 0.05) -> float:
    """Score cut-off that rises slowly as the training set grows."""
    if train_size <= 0 or reference_size <= 0:
        return min(max(base, 0.0), 0.95)
    raw = base + slope * math.log10(train_size / reference_size)
    return min(max(raw, 0.0), 0.95)


@dataclass
class LedgerEntry:
    uuid: str
    name: str
    enter_series_date: dt.date
    enter_series_value: Optional[float]
    score: Optional[float]
    added: dt.date
    last_series_date: Optional[dt.date] = None
    last_series_value: Optional[float] = None
    exit_reason: str = STILL_IN
    expired: Optional[dt.date] = None
    used_in_capital_growth: bool = False
    enter_series: str = ""

    def exit_value(self) -> Optional[float]:
        """Exit mark in USD of company valuation (0 for longtime)."""
        if self.exit_reason == LONGTIME:
            return 0.0
        return self.last_series_value


def _last_round(store: EntityStore, uuid: str, before: dt.date):
    last = None
    for r in store.company_rounds(uuid):
        if r.announced_on >= before:
            break
        last = r
    return last


def last_known_valuation(store: EntityStore, uuid: str, before: dt.date) -> Optional[float]:
    value = None
    for r in store.company_rounds(uuid):
        if r.announced_on >= before:
            break
        if r.post_money_valuation_usd is not None:
            value = r.post_money_valuation_usd
    return value


def _exit_target(events: Sequence[SuccessEvent], entered: dt.date, mode: str) -> Optional[SuccessEvent]:
    later = [e for e in events if e.date >= entered]
    if not later:
        return None
    return later[0] if mode == "first" else later[-1]


def simulate_fund(predictions: Iterable, store: EntityStore, cfg: PortfolioConfig = PortfolioConfig(),
                  ucfg: UniverseConfig = UniverseConfig()) -> list[LedgerEntry]:
    """Run the month loop and return the ledger in order of addition."""
    preds = list(predictions)
    for p in preds:
        if not cfg.start <= p.trigger_round_date < cfg.end:
            raise ValueError(f"prediction for {p.company_uuid} dated {p.trigger_round_date} "
                             f"is outside the backtest period [{cfg.start}, {cfg.end})")
    if not preds:
        return []
    reference = cfg.reference_size or min(p.train_size for p in preds)

    by_month: dict[dt.date, list] = {}
    for p in preds:
        key = dt.date(p.trigger_round_date.year, p.trigger_round_date.month, 1)
        by_month.setdefault(key, []).append(p)

    ledger: list[LedgerEntry] = []
    held: list[LedgerEntry] = []
    seen: set[str] = set()
    targets: dict[str, Optional[SuccessEvent]] = {}

    for month in month_range(cfg.start, cfg.end):
        t = add_months(month, 1)
        # (a) additions
        best: dict[str, object] = {}
        for p in by_month.get(month, ()):
            cur = best.get(p.company_uuid)
            if cur is None or p.score > cur.score:
                best[p.company_uuid] = p
        candidates = sorted(best.values(), key=lambda p: (-p.score, p.company_uuid))
        added = 0
        for p in candidates:
            if added >= cfg.monthly_top_k or len(held) >= cfg.capacity:
                break
            if p.company_uuid in seen:
                continue
            if p.score < threshold_fn(p.train_size, reference, cfg.threshold_base, cfg.threshold_slope):
                continue
            trigger = store.rounds.get(p.trigger_round_uuid)
            entry = LedgerEntry(
                uuid=p.company_uuid, name=p.name, enter_series_date=p.trigger_round_date,
                enter_series_value=trigger.post_money_valuation_usd if trigger else None,
                score=p.score, added=t, enter_series=p.trigger_round_type,
            )
            ledger.append(entry)
            held.append(entry)
            seen.add(p.company_uuid)
            events = success_events(store, p.company_uuid, ucfg)
            targets[p.company_uuid] = _exit_target(events, p.trigger_round_date, cfg.exit_mode)
            added += 1
        # (b) review
        still = []
        for entry in held:
            target = targets[entry.uuid]
            if target is not None and month <= target.date < t:
                entry.exit_reason, entry.expired = SUCCESS, t
                entry.last_series_date, entry.last_series_value = target.date, target.value_usd
                continue
            last = _last_round(store, entry.uuid, t)
            last_day = last.announced_on if last else entry.enter_series_date
            if (t - last_day).days >= cfg.longtime_days:
                entry.exit_reason, entry.expired = LONGTIME, t
                entry.last_series_date = last_day
                entry.last_series_value = last_known_valuation(store, entry.uuid, t)
                continue
            still.append(entry)
        held = still

    for entry in held:
        last = _last_round(store, entry.uuid, cfg.end)
        entry.last_series_date = last.announced_on if last else entry.enter_series_date
        entry.last_series_value = last_known_valuation(store, entry.uuid, cfg.end)
    for entry in ledger:
        entry.used_in_capital_growth = (entry.enter_series_value is not None and entry.enter_series_value > 0
                                        and entry.exit_value() is not None)
    return ledger


@dataclass
class PnlSeries:
    months: list[dt.date] = field(default_factory=list)
    realized_pnl: list[float] = field(default_factory=list)
    unrealized_pnl: list[float] = field(default_factory=list)
    portfolio_size: list[int] = field(default_factory=list)
    growth_multiple: list[float] = field(default_factory=list)
    entered: list[float] = field(default_factory=list)
    stakes: dict[str, float] = field(default_factory=dict)

    @property
    def final_growth_multiple(self) -> float:
        return self.growth_multiple[-1] if self.growth_multiple else float("nan")


def exit_marks(ledger: Sequence[LedgerEntry], stakes: Optional[dict[str, float]] = None,
               stake_usd: float = 1.0) -> dict[str, float]:
    """Final value of each capital-growth position: stake * exit / entry."""
    out = {}
    for e in ledger:
        if e.used_in_capital_growth:
            stake = stakes[e.uuid] if stakes else stake_usd
            out[e.uuid] = stake * e.exit_value() / e.enter_series_value
    return out


def compute_pnl(ledger: Sequence[LedgerEntry], store: EntityStore,
                cfg: PortfolioConfig = PortfolioConfig()) -> PnlSeries:
    """Month-by-month realized / unrealized value of the fund.

    ``realized_pnl`` is the cumulative exit value of closed positions and
    ``unrealized_pnl`` the mark of open ones at their last known round
    valuation; ``growth_multiple`` divides their sum by the capital staked.
    Only ledger rows flagged ``used_in_capital_growth`` take part.  With
    ``compounding`` each new stake is scaled by the previous month's multiple.
    """
    used = [e for e in ledger if e.used_in_capital_growth]
    series = PnlSeries()
    stakes = series.stakes
    for month in month_range(cfg.start, cfg.end):
        t = add_months(month, 1)
        factor = 1.0
        if cfg.compounding and series.growth_multiple and series.growth_multiple[-1] == series.growth_multiple[-1]:
            factor = series.growth_multiple[-1]
        for e in used:
            if e.added == t:
                stakes[e.uuid] = cfg.stake_usd * factor
        realized, unrealized, entered = [], [], []
        for e in used:
            if e.added > t:
                continue
            stake = stakes[e.uuid]
            entered.append(stake)
            if e.expired is not None and e.expired <= t:
                realized.append(stake * e.exit_value() / e.enter_series_value)
            else:
                mark = last_known_valuation(store, e.uuid, t)
                unrealized.append(stake * (e.enter_series_value if mark is None else mark) / e.enter_series_value)
        size = sum(1 for e in ledger if e.added <= t and (e.expired is None or e.expired > t))
        total_in = math.fsum(entered)
        series.months.append(t)
        series.realized_pnl.append(math.fsum(realized))
        series.unrealized_pnl.append(math.fsum(unrealized))
        series.portfolio_size.append(size)
        series.entered.append(total_in)
        series.growth_multiple.append(
            (series.realized_pnl[-1] + series.unrealized_pnl[-1]) / total_in if total_in else float("nan"))
    return series


LEDGER_COLUMNS = ("uuid", "name", "enter_series_date", "enter_series_value", "score", "added",
                  "last_series_date", "last_series_value", "exit_reason", "expired",
                  "used_in_capital_growth")


def write_ledger(ledger: Sequence[LedgerEntry], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LEDGER_COLUMNS)
        for e in ledger:
            w.writerow([e.uuid, e.name, format_date(e.enter_series_date), format_number(e.enter_series_value),
                        "" if e.score is None else repr(e.score), format_date(e.added),
                        format_date(e.last_series_date), format_number(e.last_series_value),
                        e.exit_reason, format_date(e.expired), "TRUE" if e.used_in_capital_growth else "FALSE"])
    return path


def write_pnl(series: PnlSeries, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["month", "realized", "unrealized", "size", "growth_multiple"])
        for i, m in enumerate(series.months):
            g = series.growth_multiple[i]
            w.writerow([format_date(m), repr(series.realized_pnl[i]), repr(series.unrealized_pnl[i]),
                        series.portfolio_size[i], "" if g != g else repr(g)])
    return path
