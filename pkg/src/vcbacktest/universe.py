"""Universe filters and success / failure labels, evaluated point-in-time."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .dates import format_date
from .store import DataError, EntityStore, FundingRound, funding_history

logger = logging.getLogger(__name__)

ALLOWED_CATEGORY_GROUPS = frozenset({
    "Software", "Internet Services", "Hardware", "Information Technology",
    "Media and Entertainment", "Commerce and Shopping", "Mobile", "Data and Analytics",
    "Financial Services", "Sales and Marketing", "Apps", "Advertising",
    "Artificial Intelligence", "Professional Services", "Privacy and Security", "Video",
    "Content and Publishing", "Design", "Payments", "Gaming",
    "Messaging and Telecommunications", "Music and Audio", "Platforms", "Education",
    "Lending and Investments",
})

IPO, ACQ, UNIC, NONE = "IPO", "ACQ", "UNIC", "NONE"
# Same-day ties between outcomes resolve towards the right.
_KIND_PRIORITY = {UNIC: 0, ACQ: 1, IPO: 2}
EXIT_MODES = ("first", "last")


@dataclass(frozen=True)
class UniverseConfig:
    founded_after: dt.date = dt.date(2000, 1, 1)
    allowed_category_groups: frozenset[str] = ALLOWED_CATEGORY_GROUPS
    ipo_valuation_min: float = 500e6
    ipo_raised_min: float = 100e6
    acq_price_min: float = 100e6
    unicorn_valuation_min: float = 1e9
    dead_after: dt.date = dt.date(2016, 1, 1)
    jobs_after: dt.date = dt.date(2017, 1, 1)
    gray_zone_valuation_max: float = 100e6
    # Before this date the "no rounds since dead_after" rule lacks evidence;
    # negatives then need ``negative_quiet_days`` without a round instead.
    negatives_decidable_from: dt.date = dt.date(2018, 1, 1)
    negative_quiet_days: int = 730

    def __post_init__(self):
        for name in ("ipo_valuation_min", "ipo_raised_min", "acq_price_min",
                     "unicorn_valuation_min", "gray_zone_valuation_max", "negative_quiet_days"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class SuccessEvent:
    kind: str
    date: dt.date
    value_usd: Optional[float]
    round_uuid: Optional[str] = None


@dataclass(frozen=True)
class OutcomeRecord:
    company_uuid: str
    label: int
    outcome_kind: str
    success_date: Optional[dt.date]
    success_round_index: Optional[int]
    round_timeline: tuple[FundingRound, ...] = field(default=(), repr=False)

    @property
    def success_round(self) -> Optional[FundingRound]:
        if self.success_round_index is None:
            return None
        return self.round_timeline[self.success_round_index]


@dataclass
class LabeledDataset:
    as_of: dt.date
    records: list[OutcomeRecord]

    @property
    def n_pos(self) -> int:
        return sum(r.label for r in self.records)

    @property
    def n_neg(self) -> int:
        return len(self.records) - self.n_pos

    def __len__(self) -> int:
        return len(self.records)

    @property
    def uuids(self) -> list[str]:
        return [r.company_uuid for r in self.records]


def _horizon(store: EntityStore, as_of: Optional[dt.date]) -> dt.date:
    return as_of if as_of is not None else store.snapshot_date + dt.timedelta(days=1)


def filter_universe(store: EntityStore, cfg: UniverseConfig = UniverseConfig()) -> set[str]:
    """Companies founded on/after ``cfg.founded_after`` in an allowed category group."""
    allowed = cfg.allowed_category_groups
    return {
        c.uuid for c in store.companies.values()
        if c.founded_on is not None and c.founded_on >= cfg.founded_after
        and not allowed.isdisjoint(c.category_groups_list)
    }


def success_events(store: EntityStore, company: str, cfg: UniverseConfig = UniverseConfig(),
                   as_of: Optional[dt.date] = None) -> list[SuccessEvent]:
    """Qualifying IPO / acquisition / unicorn events dated before ``as_of``, oldest first.

    Every round priced above the unicorn threshold is its own event, so
    "last" exits follow the latest such round.
    """
    horizon = _horizon(store, as_of)
    timeline = funding_history(store, company, horizon)
    events: list[SuccessEvent] = []

    ipo = store.ipos.get(company)
    if ipo is not None and ipo.went_public_on < horizon:
        if ((ipo.valuation_usd is not None and ipo.valuation_usd > cfg.ipo_valuation_min)
                or (ipo.money_raised_usd is not None and ipo.money_raised_usd > cfg.ipo_raised_min)):
            events.append(SuccessEvent(IPO, ipo.went_public_on, ipo.valuation_usd))

    for acq in store.company_acquisitions(company):
        if acq.announced_on >= horizon or acq.price_usd is None:
            continue
        raised = [r.raised_amount_usd for r in timeline
                  if r.announced_on < acq.announced_on and r.raised_amount_usd is not None]
        if acq.price_usd >= cfg.acq_price_min and acq.price_usd >= max(raised, default=0.0):
            events.append(SuccessEvent(ACQ, acq.announced_on, acq.price_usd))

    unicorn_rounds = [r for r in timeline if r.post_money_valuation_usd is not None
                      and r.post_money_valuation_usd > cfg.unicorn_valuation_min]
    for r in unicorn_rounds:
        events.append(SuccessEvent(UNIC, r.announced_on, r.post_money_valuation_usd, r.uuid))

    # The table is undated and only known at the snapshot, so earlier
    # horizons must ignore it.
    if company in store.verified_unicorns and horizon > store.snapshot_date:
        full = funding_history(store, company, _horizon(store, None))
        priced = any(r.post_money_valuation_usd is not None
                     and r.post_money_valuation_usd > cfg.unicorn_valuation_min for r in full)
        # Table-only unicorns are dated by their latest known round.
        if not priced and full:
            last = full[-1]
            events.append(SuccessEvent(UNIC, last.announced_on, last.post_money_valuation_usd, last.uuid))

    events.sort(key=lambda e: (e.date, _KIND_PRIORITY[e.kind]))
    return events


def pick_event(events: list[SuccessEvent], mode: str) -> SuccessEvent:
    if mode not in EXIT_MODES:
        raise ValueError(f"exit mode must be one of {EXIT_MODES}, got {mode!r}")
    if mode == "first":
        first_day = events[0].date
        return max((e for e in events if e.date == first_day), key=lambda e: _KIND_PRIORITY[e.kind])
    return events[-1]


def _round_index(timeline, when: dt.date) -> Optional[int]:
    idx = None
    for i, r in enumerate(timeline):
        if r.announced_on <= when:
            idx = i
        else:
            break
    return idx


def label_successful(store: EntityStore, cfg: UniverseConfig = UniverseConfig(), *,
                     mode: str = "first", as_of: Optional[dt.date] = None,
                     universe: Optional[Iterable[str]] = None) -> list[OutcomeRecord]:
    """Label-1 records for universe companies with a qualifying event before ``as_of``.

    ``mode`` picks the earliest ("first") or latest ("last") event as the
    success date.  Companies without any round on or before that date are
    skipped since their success cannot be placed on a round timeline.
    """
    horizon = _horizon(store, as_of)
    ids = filter_universe(store, cfg) if universe is None else set(universe)
    out = []
    for uuid in sorted(ids):
        events = success_events(store, uuid, cfg, as_of)
        if not events:
            continue
        event = pick_event(events, mode)
        timeline = tuple(funding_history(store, uuid, horizon))
        idx = _round_index(timeline, event.date)
        if idx is None:
            logger.debug("success of %s has no preceding round; skipped", uuid)
            continue
        out.append(OutcomeRecord(uuid, 1, event.kind, event.date, idx, timeline))
    return out


def _is_structural_relative(store: EntityStore, uuid: str) -> bool:
    return store.companies[uuid].parent_uuid is not None or bool(store.children(uuid))


def label_unsuccessful(store: EntityStore, cfg: UniverseConfig = UniverseConfig(),
                       successful: Iterable[str] = (), *, as_of: Optional[dt.date] = None,
                       universe: Optional[Iterable[str]] = None) -> list[OutcomeRecord]:
    """Label-0 records: quiet companies that never crossed a success threshold.

    With ``as_of`` before ``cfg.negatives_decidable_from`` the fixed
    "no rounds since 2016 / no hires since 2017" test cannot be applied yet;
    a company then qualifies after ``cfg.negative_quiet_days`` without a round.
    """
    horizon = _horizon(store, as_of)
    successful = set(successful)
    ids = filter_universe(store, cfg) if universe is None else set(universe)
    early = horizon < cfg.negatives_decidable_from
    quiet_cutoff = horizon - dt.timedelta(days=cfg.negative_quiet_days)
    out = []
    for uuid in sorted(ids):
        company = store.companies[uuid]
        if uuid in successful or uuid in store.verified_unicorns:
            continue
        if company.founded_on is None or company.founded_on >= horizon:
            continue
        if _is_structural_relative(store, uuid):
            continue
        if success_events(store, uuid, cfg, as_of):
            continue
        raw_rounds = [r for r in store.company_rounds(uuid) if r.announced_on < horizon]
        if early:
            last_activity = raw_rounds[-1].announced_on if raw_rounds else company.founded_on
            if last_activity > quiet_cutoff:
                continue
        else:
            if any(r.announced_on >= cfg.dead_after for r in raw_rounds):
                continue
            if any(j.started_on is not None and cfg.jobs_after <= j.started_on < horizon
                   for j in store.org_jobs(uuid)):
                continue
        valuations = [r.post_money_valuation_usd for r in raw_rounds if r.post_money_valuation_usd is not None]
        ipo = store.ipos.get(uuid)
        if ipo is not None and ipo.went_public_on < horizon and ipo.valuation_usd is not None:
            valuations.append(ipo.valuation_usd)
        valuations += [a.price_usd for a in store.company_acquisitions(uuid)
                       if a.announced_on < horizon and a.price_usd is not None]
        if any(v > cfg.gray_zone_valuation_max for v in valuations):
            continue
        timeline = tuple(funding_history(store, uuid, horizon))
        out.append(OutcomeRecord(uuid, 0, NONE, None, None, timeline))
    return out


def build_dataset_asof(store: EntityStore, cfg: UniverseConfig = UniverseConfig(), as_of: dt.date = None,
                       *, mode: str = "first") -> LabeledDataset:
    """Training rows knowable at ``as_of``: founded before it, outcome settled before it."""
    if as_of is None:
        raise ValueError("as_of is required")
    if as_of > store.snapshot_date + dt.timedelta(days=1):
        raise DataError(f"as_of {as_of} is after the snapshot date {store.snapshot_date}")
    universe = {u for u in filter_universe(store, cfg) if store.companies[u].founded_on < as_of}
    positives = label_successful(store, cfg, mode=mode, as_of=as_of, universe=universe)
    negatives = label_unsuccessful(store, cfg, {r.company_uuid for r in positives},
                                   as_of=as_of, universe=universe)
    records = sorted(positives + negatives, key=lambda r: r.company_uuid)
    ds = LabeledDataset(as_of, records)
    logger.info("dataset as of %s: %d positive, %d negative", as_of, ds.n_pos, ds.n_neg)
    return ds


def label_snapshot(store: EntityStore, cfg: UniverseConfig = UniverseConfig(), *,
                   mode: str = "first") -> LabeledDataset:
    """Full labeled dataset using everything in the export."""
    horizon = _horizon(store, None)
    return build_dataset_asof(store, cfg, horizon, mode=mode)


def write_labels(dataset: LabeledDataset, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["uuid", "label", "outcome_kind", "success_date", "success_round_index"])
        for r in dataset.records:
            w.writerow([r.company_uuid, r.label, r.outcome_kind, format_date(r.success_date),
                        "" if r.success_round_index is None else r.success_round_index])
    return path
