"""In-memory entity store loaded from a Crunchbase-style daily CSV export.

The store is built once and then only read.  Every record carries its own
dates; the point-in-time helpers here (``funding_history`` and friends) never
hand back anything dated on or after the ``as_of`` they are given.

Rows that cannot be trusted (bad dates, dangling foreign keys, broken
invariants) are dropped and counted in ``EntityStore.quarantine`` instead of
aborting the load.
"""

from __future__ import annotations

import bisect
import csv
import datetime as dt
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional

from .dates import format_date, parse_date

logger = logging.getLogger(__name__)

__all__ = [
    "AMBIGUOUS_ROUND_TYPES",
    "COLUMNS",
    "SERIES_TYPES",
    "Acquisition",
    "Company",
    "DataError",
    "Degree",
    "EntityStore",
    "FounderProfile",
    "FundingRound",
    "Investment",
    "Investor",
    "Ipo",
    "Job",
    "LoadError",
    "NotFoundError",
    "Person",
    "funding_history",
    "load_export",
    "round_rank",
    "write_export",
]


class DataError(Exception):
    """Input data cannot support the requested operation."""


class LoadError(DataError):
    """The export directory is unusable (missing file, bad header)."""


class NotFoundError(DataError, KeyError):
    """Unknown entity id."""

    def __str__(self) -> str:  # KeyError quotes its message otherwise
        return str(self.args[0]) if self.args else ""


SERIES_TYPES = (
    "series_a", "series_b", "series_c", "series_d", "series_e",
    "series_f", "series_g", "series_h", "series_i", "series_j",
)
AMBIGUOUS_ROUND_TYPES = frozenset({"series_unknown", "private_equity", "undisclosed"})
_EARLY_TYPES = ("pre_seed", "angel", "seed")
COMPANY_STATUSES = frozenset({"operating", "acquired", "ipo", "closed"})


def round_rank(investment_type: str) -> Optional[int]:
    """Ordinal stage of a round: pre_seed=0 ... seed=2, series_a=3 ... series_j=12.

    Non-staged types (private_equity, undisclosed, grants, ...) have no rank.
    """
    if investment_type in _EARLY_TYPES:
        return _EARLY_TYPES.index(investment_type)
    if investment_type in SERIES_TYPES:
        return len(_EARLY_TYPES) + SERIES_TYPES.index(investment_type)
    return None


_SERIES_B_RANK = round_rank("series_b")


# -- records ---------------------------------------------------------------


@dataclass(frozen=True)
class Company:
    uuid: str
    name: str
    founded_on: Optional[dt.date]
    country_code: str
    region: str
    city: str
    category_list: tuple[str, ...]
    category_groups_list: tuple[str, ...]
    status: str
    parent_uuid: Optional[str]

    @property
    def tags(self) -> tuple[str, ...]:
        return self.category_list + self.category_groups_list


@dataclass(frozen=True)
class FundingRound:
    uuid: str
    company_uuid: str
    investment_type: str
    announced_on: dt.date
    raised_amount_usd: Optional[float]
    post_money_valuation_usd: Optional[float]
    investor_count: Optional[int]
    lead_investor_uuids: tuple[str, ...]

    @property
    def rank(self) -> Optional[int]:
        return round_rank(self.investment_type)


@dataclass(frozen=True)
class Ipo:
    company_uuid: str
    went_public_on: dt.date
    valuation_usd: Optional[float]
    money_raised_usd: Optional[float]


@dataclass(frozen=True)
class Acquisition:
    acquiree_uuid: str
    acquirer_uuid: str
    announced_on: dt.date
    price_usd: Optional[float]


@dataclass(frozen=True)
class Person:
    uuid: str
    name: str
    gender: str
    country_code: str
    region: str
    city: str
    twitter_url: str
    linkedin_url: str
    facebook_url: str
    featured_job_organization_uuid: Optional[str]

    @property
    def has_twitter(self) -> bool:
        return bool(self.twitter_url)

    @property
    def has_linkedin(self) -> bool:
        return bool(self.linkedin_url)

    @property
    def has_facebook(self) -> bool:
        return bool(self.facebook_url)


@dataclass(frozen=True)
class Degree:
    person_uuid: str
    institution_name: str
    degree_type: str
    subject: str
    is_completed: Optional[bool]
    completed_on: Optional[dt.date]


@dataclass(frozen=True)
class Job:
    person_uuid: str
    org_uuid: str
    started_on: Optional[dt.date]
    ended_on: Optional[dt.date]
    title: str
    is_founder: bool


@dataclass(frozen=True)
class Investor:
    uuid: str
    name: str
    type: str
    investor_types: tuple[str, ...]
    country_code: str
    region: str
    city: str
    investment_count: Optional[int]
    total_funding_usd: Optional[float]
    twitter_url: str
    linkedin_url: str
    facebook_url: str

    @property
    def has_twitter(self) -> bool:
        return bool(self.twitter_url)

    @property
    def has_linkedin(self) -> bool:
        return bool(self.linkedin_url)

    @property
    def has_facebook(self) -> bool:
        return bool(self.facebook_url)


@dataclass(frozen=True)
class Investment:
    round_uuid: str
    investor_uuid: str
    is_lead: bool


@dataclass(frozen=True)
class FounderProfile:
    person: Person
    degrees: tuple[Degree, ...]
    jobs: tuple[Job, ...]
    founded_companies: tuple[tuple[str, Optional[dt.date]], ...]

    @property
    def person_uuid(self) -> str:
        return self.person.uuid


# -- cell codecs -------------------------------------------------------------


def _text(cell: str) -> str:
    return cell.strip()


def _opt_id(cell: str) -> Optional[str]:
    cell = cell.strip()
    return cell or None


def _tags(cell: str) -> tuple[str, ...]:
    return tuple(t.strip() for t in cell.split(",") if t.strip())


def _money(cell: str) -> Optional[float]:
    cell = cell.strip()
    if not cell:
        return None
    value = float(cell)
    if value != value or value < 0:
        raise ValueError(f"bad amount {cell!r}")
    return value


def _count(cell: str) -> Optional[int]:
    cell = cell.strip()
    if not cell:
        return None
    value = int(float(cell))
    if value < 0:
        raise ValueError(f"negative count {cell!r}")
    return value


def _flag(cell: str) -> Optional[bool]:
    cell = cell.strip().lower()
    if not cell:
        return None
    if cell in ("true", "t", "1", "yes"):
        return True
    if cell in ("false", "f", "0", "no"):
        return False
    raise ValueError(f"bad boolean {cell!r}")


def _req_date(cell: str) -> dt.date:
    value = parse_date(cell)
    if value is None:
        raise ValueError("missing required date")
    return value


def format_number(value: Optional[float]) -> str:
    if value is None:
        return ""
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def _fmt_flag(value: Optional[bool]) -> str:
    return "" if value is None else ("true" if value else "false")


def _fmt_tags(tags: Iterable[str]) -> str:
    return ",".join(tags)


# -- schema ------------------------------------------------------------------

COLUMNS: dict[str, tuple[str, ...]] = {
    "organizations": ("uuid", "name", "founded_on", "country_code", "region", "city",
                      "category_list", "category_groups_list", "status", "parent_uuid"),
    "funding_rounds": ("uuid", "org_uuid", "investment_type", "announced_on",
                       "raised_amount_usd", "post_money_valuation_usd", "investor_count",
                       "lead_investor_uuids"),
    "ipos": ("org_uuid", "went_public_on", "valuation_usd", "money_raised_usd"),
    "acquisitions": ("acquiree_uuid", "acquirer_uuid", "announced_on", "price_usd"),
    "people": ("uuid", "gender", "country_code", "region", "city", "twitter_url",
               "linkedin_url", "facebook_url", "featured_job_organization_uuid"),
    "degrees": ("person_uuid", "institution_name", "degree_type", "subject",
                "is_completed", "completed_on"),
    "jobs": ("person_uuid", "org_uuid", "started_on", "ended_on", "title", "is_founder"),
    "investors": ("uuid", "name", "type", "investor_types", "country_code", "region", "city",
                  "investment_count", "total_funding_usd", "twitter_url", "linkedin_url",
                  "facebook_url"),
    "investments": ("funding_round_uuid", "investor_uuid", "is_lead"),
}
# Optional columns read when present and always written back.
OPTIONAL_COLUMNS: dict[str, tuple[str, ...]] = {"people": ("name",)}
VERIFIED_UNICORNS_FILE = "verified_unicorns.csv"


def _parse_company(r: dict[str, str]) -> Company:
    status = _text(r["status"])
    return Company(
        uuid=_text(r["uuid"]), name=_text(r["name"]), founded_on=parse_date(r["founded_on"]),
        country_code=_text(r["country_code"]), region=_text(r["region"]), city=_text(r["city"]),
        category_list=_tags(r["category_list"]), category_groups_list=_tags(r["category_groups_list"]),
        status=status, parent_uuid=_opt_id(r["parent_uuid"]),
    )


def _parse_round(r: dict[str, str]) -> FundingRound:
    return FundingRound(
        uuid=_text(r["uuid"]), company_uuid=_text(r["org_uuid"]),
        investment_type=_text(r["investment_type"]), announced_on=_req_date(r["announced_on"]),
        raised_amount_usd=_money(r["raised_amount_usd"]),
        post_money_valuation_usd=_money(r["post_money_valuation_usd"]),
        investor_count=_count(r["investor_count"]), lead_investor_uuids=_tags(r["lead_investor_uuids"]),
    )


def _parse_ipo(r: dict[str, str]) -> Ipo:
    return Ipo(_text(r["org_uuid"]), _req_date(r["went_public_on"]),
               _money(r["valuation_usd"]), _money(r["money_raised_usd"]))


def _parse_acquisition(r: dict[str, str]) -> Acquisition:
    acq = Acquisition(_text(r["acquiree_uuid"]), _text(r["acquirer_uuid"]),
                      _req_date(r["announced_on"]), _money(r["price_usd"]))
    if acq.acquiree_uuid == acq.acquirer_uuid:
        raise ValueError("acquiree equals acquirer")
    return acq


def _parse_person(r: dict[str, str]) -> Person:
    return Person(
        uuid=_text(r["uuid"]), name=_text(r.get("name", "")), gender=_text(r["gender"]),
        country_code=_text(r["country_code"]), region=_text(r["region"]), city=_text(r["city"]),
        twitter_url=_text(r["twitter_url"]), linkedin_url=_text(r["linkedin_url"]),
        facebook_url=_text(r["facebook_url"]),
        featured_job_organization_uuid=_opt_id(r["featured_job_organization_uuid"]),
    )


def _parse_degree(r: dict[str, str]) -> Degree:
    return Degree(_text(r["person_uuid"]), _text(r["institution_name"]), _text(r["degree_type"]),
                  _text(r["subject"]), _flag(r["is_completed"]), parse_date(r["completed_on"]))


def _parse_job(r: dict[str, str]) -> Job:
    job = Job(_text(r["person_uuid"]), _text(r["org_uuid"]), parse_date(r["started_on"]),
              parse_date(r["ended_on"]), _text(r["title"]), bool(_flag(r["is_founder"])))
    if job.started_on and job.ended_on and job.started_on > job.ended_on:
        raise ValueError("job ends before it starts")
    return job


def _parse_investor(r: dict[str, str]) -> Investor:
    return Investor(
        uuid=_text(r["uuid"]), name=_text(r["name"]), type=_text(r["type"]),
        investor_types=_tags(r["investor_types"]), country_code=_text(r["country_code"]),
        region=_text(r["region"]), city=_text(r["city"]),
        investment_count=_count(r["investment_count"]), total_funding_usd=_money(r["total_funding_usd"]),
        twitter_url=_text(r["twitter_url"]), linkedin_url=_text(r["linkedin_url"]),
        facebook_url=_text(r["facebook_url"]),
    )


def _parse_investment(r: dict[str, str]) -> Investment:
    return Investment(_text(r["funding_round_uuid"]), _text(r["investor_uuid"]), bool(_flag(r["is_lead"])))


_ROW_FORMATTERS: dict[str, Callable[..., list[str]]] = {
    "organizations": lambda c: [c.uuid, c.name, format_date(c.founded_on), c.country_code, c.region,
                                c.city, _fmt_tags(c.category_list), _fmt_tags(c.category_groups_list),
                                c.status, c.parent_uuid or ""],
    "funding_rounds": lambda f: [f.uuid, f.company_uuid, f.investment_type, format_date(f.announced_on),
                                 format_number(f.raised_amount_usd),
                                 format_number(f.post_money_valuation_usd),
                                 format_number(f.investor_count), _fmt_tags(f.lead_investor_uuids)],
    "ipos": lambda i: [i.company_uuid, format_date(i.went_public_on), format_number(i.valuation_usd),
                       format_number(i.money_raised_usd)],
    "acquisitions": lambda a: [a.acquiree_uuid, a.acquirer_uuid, format_date(a.announced_on),
                               format_number(a.price_usd)],
    "people": lambda p: [p.uuid, p.gender, p.country_code, p.region, p.city, p.twitter_url,
                         p.linkedin_url, p.facebook_url, p.featured_job_organization_uuid or "", p.name],
    "degrees": lambda d: [d.person_uuid, d.institution_name, d.degree_type, d.subject,
                          _fmt_flag(d.is_completed), format_date(d.completed_on)],
    "jobs": lambda j: [j.person_uuid, j.org_uuid, format_date(j.started_on), format_date(j.ended_on),
                       j.title, _fmt_flag(j.is_founder)],
    "investors": lambda v: [v.uuid, v.name, v.type, _fmt_tags(v.investor_types), v.country_code,
                            v.region, v.city, format_number(v.investment_count),
                            format_number(v.total_funding_usd), v.twitter_url, v.linkedin_url,
                            v.facebook_url],
    "investments": lambda i: [i.round_uuid, i.investor_uuid, _fmt_flag(i.is_lead)],
}


# -- the store ---------------------------------------------------------------


def _by_date(rounds: Iterable[FundingRound]) -> tuple[FundingRound, ...]:
    return tuple(sorted(rounds, key=lambda r: (r.announced_on, r.uuid)))


@dataclass(frozen=True, eq=False)
class EntityStore:
    """Snapshot of the export, indexed for as-of queries.

    Build it with :func:`load_export` or :meth:`from_records`; never mutate
    it afterwards (derived indexes would go stale).
    """

    snapshot_date: dt.date
    companies: dict[str, Company]
    rounds: dict[str, FundingRound]
    ipos: dict[str, Ipo]
    acquisitions: tuple[Acquisition, ...]
    people: dict[str, Person]
    degrees: tuple[Degree, ...]
    jobs: tuple[Job, ...]
    investors: dict[str, Investor]
    investments: tuple[Investment, ...]
    verified_unicorns: frozenset[str] = frozenset()
    quarantine: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        rounds_by_company = defaultdict(list)
        for r in self.rounds.values():
            rounds_by_company[r.company_uuid].append(r)
        investments_by_round = defaultdict(list)
        rounds_by_investor = defaultdict(list)
        for inv in self.investments:
            investments_by_round[inv.round_uuid].append(inv)
            rounds_by_investor[inv.investor_uuid].append(self.rounds[inv.round_uuid])
        jobs_by_person = defaultdict(list)
        jobs_by_org = defaultdict(list)
        for job in self.jobs:
            jobs_by_person[job.person_uuid].append(job)
            jobs_by_org[job.org_uuid].append(job)
        degrees_by_person = defaultdict(list)
        for deg in self.degrees:
            degrees_by_person[deg.person_uuid].append(deg)
        acquisitions_by_acquiree = defaultdict(list)
        for acq in self.acquisitions:
            acquisitions_by_acquiree[acq.acquiree_uuid].append(acq)
        children = defaultdict(list)
        for c in self.companies.values():
            if c.parent_uuid:
                children[c.parent_uuid].append(c.uuid)

        investor_rounds = {k: _by_date(v) for k, v in rounds_by_investor.items()}
        # Prefix arrays let investor as-of aggregates run in O(log n).
        investor_prefix = {}
        for k, rs in investor_rounds.items():
            dates, raised, raised_n, icount, icount_n = [], [0.0], [0], [0.0], [0]
            for r in rs:
                dates.append(r.announced_on)
                raised.append(raised[-1] + (r.raised_amount_usd or 0.0))
                raised_n.append(raised_n[-1] + (r.raised_amount_usd is not None))
                icount.append(icount[-1] + (r.investor_count or 0))
                icount_n.append(icount_n[-1] + (r.investor_count is not None))
            investor_prefix[k] = (dates, raised, raised_n, icount, icount_n)

        set_ = object.__setattr__
        set_(self, "_rounds_by_company", {k: _by_date(v) for k, v in rounds_by_company.items()})
        set_(self, "_investments_by_round", {k: tuple(v) for k, v in investments_by_round.items()})
        set_(self, "_investor_rounds", investor_rounds)
        set_(self, "_investor_prefix", investor_prefix)
        set_(self, "_jobs_by_person", {k: tuple(v) for k, v in jobs_by_person.items()})
        set_(self, "_jobs_by_org", {k: tuple(v) for k, v in jobs_by_org.items()})
        set_(self, "_degrees_by_person", {k: tuple(v) for k, v in degrees_by_person.items()})
        set_(self, "_acquisitions_by_acquiree",
             {k: tuple(sorted(v, key=lambda a: (a.announced_on, a.acquirer_uuid)))
              for k, v in acquisitions_by_acquiree.items()})
        set_(self, "_children", {k: tuple(sorted(v)) for k, v in children.items()})

    @classmethod
    def from_records(cls, snapshot_date: dt.date, *, companies=(), rounds=(), ipos=(), acquisitions=(),
                     people=(), degrees=(), jobs=(), investors=(), investments=(),
                     verified_unicorns=(), quarantine=None) -> "EntityStore":
        """Assemble a store from already-validated records (canonical order)."""
        return cls(
            snapshot_date=snapshot_date,
            companies={c.uuid: c for c in sorted(companies, key=lambda c: c.uuid)},
            rounds={r.uuid: r for r in sorted(rounds, key=lambda r: r.uuid)},
            ipos={i.company_uuid: i for i in sorted(ipos, key=lambda i: i.company_uuid)},
            acquisitions=tuple(sorted(acquisitions, key=lambda a: _ROW_FORMATTERS["acquisitions"](a))),
            people={p.uuid: p for p in sorted(people, key=lambda p: p.uuid)},
            degrees=tuple(sorted(degrees, key=lambda d: _ROW_FORMATTERS["degrees"](d))),
            jobs=tuple(sorted(jobs, key=lambda j: _ROW_FORMATTERS["jobs"](j))),
            investors={v.uuid: v for v in sorted(investors, key=lambda v: v.uuid)},
            investments=tuple(sorted(investments, key=lambda i: (i.round_uuid, i.investor_uuid))),
            verified_unicorns=frozenset(verified_unicorns),
            quarantine=dict(quarantine or {}),
        )

    # -- lookups --

    @property
    def quarantined(self) -> int:
        return sum(self.quarantine.values())

    def company(self, uuid: str) -> Company:
        try:
            return self.companies[uuid]
        except KeyError:
            raise NotFoundError(f"unknown company {uuid!r}") from None

    def company_rounds(self, uuid: str) -> tuple[FundingRound, ...]:
        """All rounds of a company, chronological, no as-of cut."""
        return self._rounds_by_company.get(uuid, ())

    def round_investments(self, round_uuid: str) -> tuple[Investment, ...]:
        return self._investments_by_round.get(round_uuid, ())

    def investor_rounds(self, investor_uuid: str, as_of: dt.date) -> tuple[FundingRound, ...]:
        rounds = self._investor_rounds.get(investor_uuid, ())
        dates = self._investor_prefix[investor_uuid][0] if rounds else []
        return rounds[: bisect.bisect_left(dates, as_of)]

    def investor_activity(self, investor_uuid: str, as_of: dt.date) -> dict[str, Optional[float]]:
        """Point-in-time totals over an investor's rounds dated before ``as_of``."""
        if investor_uuid not in self._investor_prefix:
            return {"investment_count": 0, "total_funding_usd": None,
                    "mean_raised_amount_usd": None, "mean_investor_count": None}
        dates, raised, raised_n, icount, icount_n = self._investor_prefix[investor_uuid]
        k = bisect.bisect_left(dates, as_of)
        return {
            "investment_count": k,
            "total_funding_usd": raised[k] if raised_n[k] else None,
            "mean_raised_amount_usd": raised[k] / raised_n[k] if raised_n[k] else None,
            "mean_investor_count": icount[k] / icount_n[k] if icount_n[k] else None,
        }

    def person_jobs(self, person_uuid: str) -> tuple[Job, ...]:
        return self._jobs_by_person.get(person_uuid, ())

    def org_jobs(self, org_uuid: str) -> tuple[Job, ...]:
        return self._jobs_by_org.get(org_uuid, ())

    def person_degrees(self, person_uuid: str) -> tuple[Degree, ...]:
        return self._degrees_by_person.get(person_uuid, ())

    def company_acquisitions(self, uuid: str) -> tuple[Acquisition, ...]:
        return self._acquisitions_by_acquiree.get(uuid, ())

    def children(self, uuid: str) -> tuple[str, ...]:
        return self._children.get(uuid, ())

    def founder_ids(self, company_uuid: str, as_of: dt.date) -> list[str]:
        """People holding a founder job at the company that started before ``as_of``.

        Undated founder jobs are taken to start on the company's founding date.
        """
        founded = self.companies[company_uuid].founded_on if company_uuid in self.companies else None
        out = set()
        for job in self.org_jobs(company_uuid):
            if not job.is_founder:
                continue
            start = job.started_on or founded
            if start is not None and start < as_of:
                out.add(job.person_uuid)
        return sorted(out)

    def founder_profile(self, person_uuid: str) -> FounderProfile:
        person = self.people.get(person_uuid)
        if person is None:
            raise NotFoundError(f"unknown person {person_uuid!r}")
        jobs = self.person_jobs(person_uuid)
        founded = tuple(sorted(
            {(j.org_uuid, self.companies[j.org_uuid].founded_on) for j in jobs if j.is_founder},
            key=lambda t: (t[1] or dt.date.min, t[0]),
        ))
        return FounderProfile(person, self.person_degrees(person_uuid), jobs, founded)

    def investor_name(self, investor_uuid: str) -> str:
        inv = self.investors.get(investor_uuid)
        return inv.name if inv else ""


# -- point-in-time queries -----------------------------------------------------


def funding_history(store: EntityStore, company: str, as_of: dt.date) -> list[FundingRound]:
    """Rounds announced strictly before ``as_of``, oldest first.

    series_unknown / private_equity / undisclosed rounds are kept only when a
    series B (or later lettered series) round of the same company precedes
    them.
    """
    store.company(company)
    out: list[FundingRound] = []
    seen_b = None
    for r in store.company_rounds(company):
        if r.announced_on >= as_of:
            break
        if r.investment_type in AMBIGUOUS_ROUND_TYPES:
            if seen_b is None or seen_b >= r.announced_on:
                continue
        elif r.rank is not None and r.rank >= _SERIES_B_RANK and seen_b is None:
            seen_b = r.announced_on
        out.append(r)
    return out


# -- load / write --------------------------------------------------------------


def _read_table(directory: Path, table: str) -> list[dict[str, str]]:
    path = directory / f"{table}.csv"
    if not path.is_file():
        raise LoadError(f"missing export file: {path.name}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise LoadError(f"{path.name}: empty file, expected columns {list(COLUMNS[table])}") from None
        missing = [c for c in COLUMNS[table] if c not in header]
        if missing:
            raise LoadError(
                f"{path.name}: malformed header, missing {missing}; expected columns {list(COLUMNS[table])}"
            )
        rows = []
        for raw in reader:
            if not any(cell.strip() for cell in raw):
                continue
            raw = raw + [""] * (len(header) - len(raw))
            rows.append(dict(zip(header, raw)))
    # Canonical order makes duplicate resolution independent of file order.
    wanted = COLUMNS[table] + OPTIONAL_COLUMNS.get(table, ())
    rows.sort(key=lambda r: tuple(r.get(c, "") for c in wanted))
    return rows


class _Loader:
    def __init__(self, snapshot_date: dt.date):
        self.snapshot = snapshot_date
        self.quarantine: Counter = Counter()
        self.reasons: list[tuple[str, str]] = []

    def reject(self, table: str, why: str) -> None:
        self.quarantine[table] += 1
        if len(self.reasons) < 1000:
            self.reasons.append((table, why))

    def parse(self, table: str, rows, parser):
        out = []
        for row in rows:
            try:
                out.append(parser(row))
            except (ValueError, TypeError) as exc:
                self.reject(table, str(exc))
        return out

    def not_future(self, table: str, records, *date_attrs):
        out = []
        for rec in records:
            if any((d := getattr(rec, a)) is not None and d > self.snapshot for a in date_attrs):
                self.reject(table, "dated after snapshot")
            else:
                out.append(rec)
        return out

    def unique(self, table: str, records, key):
        seen, out = set(), []
        for rec in records:
            k = key(rec)
            if k in seen:
                self.reject(table, f"duplicate key {k}")
            else:
                seen.add(k)
                out.append(rec)
        return out

    def resolve(self, table: str, records, check):
        out = []
        for rec in records:
            if check(rec):
                out.append(rec)
            else:
                self.reject(table, "unresolved foreign key")
        return out


def load_export(directory, snapshot_date: dt.date) -> EntityStore:
    """Load every export table from ``directory``.

    Missing files and headers lacking required columns are fatal
    (:class:`LoadError`); bad rows are quarantined and counted.
    """
    directory = Path(directory)
    tables = {t: _read_table(directory, t) for t in COLUMNS}
    ld = _Loader(snapshot_date)

    companies = ld.unique("organizations", ld.not_future(
        "organizations", ld.parse("organizations", tables["organizations"], _parse_company), "founded_on"),
        lambda c: c.uuid)
    # Drop orgs whose parent does not resolve until the set is stable.
    while True:
        ids = {c.uuid for c in companies}
        kept = [c for c in companies if c.parent_uuid is None or c.parent_uuid in ids]
        for _ in range(len(companies) - len(kept)):
            ld.reject("organizations", "unresolved parent_uuid")
        if len(kept) == len(companies):
            break
        companies = kept
    org_ids = {c.uuid for c in companies}

    investors = ld.unique("investors", ld.parse("investors", tables["investors"], _parse_investor),
                          lambda v: v.uuid)
    investor_ids = {v.uuid for v in investors}

    people = ld.unique("people", ld.parse("people", tables["people"], _parse_person), lambda p: p.uuid)
    people = ld.resolve("people", people, lambda p: p.featured_job_organization_uuid is None
                        or p.featured_job_organization_uuid in org_ids)
    person_ids = {p.uuid for p in people}

    rounds = ld.not_future("funding_rounds", ld.parse("funding_rounds", tables["funding_rounds"], _parse_round),
                           "announced_on")
    rounds = ld.unique("funding_rounds", rounds, lambda r: r.uuid)
    rounds = ld.resolve("funding_rounds", rounds, lambda r: r.company_uuid in org_ids
                        and all(v in investor_ids for v in r.lead_investor_uuids))
    round_ids = {r.uuid for r in rounds}

    investments = ld.parse("investments", tables["investments"], _parse_investment)
    investments = ld.unique("investments", investments, lambda i: (i.round_uuid, i.investor_uuid))
    investments = ld.resolve("investments", investments,
                             lambda i: i.round_uuid in round_ids and i.investor_uuid in investor_ids)

    ipos = ld.not_future("ipos", ld.parse("ipos", tables["ipos"], _parse_ipo), "went_public_on")
    ipos = ld.resolve("ipos", ipos, lambda i: i.company_uuid in org_ids)
    ipos.sort(key=lambda i: (i.company_uuid, i.went_public_on))
    ipos = ld.unique("ipos", ipos, lambda i: i.company_uuid)  # keeps the earliest

    acquisitions = ld.not_future("acquisitions", ld.parse("acquisitions", tables["acquisitions"],
                                                          _parse_acquisition), "announced_on")
    acquisitions = ld.resolve("acquisitions", acquisitions,
                              lambda a: a.acquiree_uuid in org_ids and a.acquirer_uuid in org_ids)

    degrees = ld.not_future("degrees", ld.parse("degrees", tables["degrees"], _parse_degree), "completed_on")
    degrees = ld.resolve("degrees", degrees, lambda d: d.person_uuid in person_ids)

    jobs = ld.not_future("jobs", ld.parse("jobs", tables["jobs"], _parse_job), "started_on")
    jobs = ld.resolve("jobs", jobs, lambda j: j.person_uuid in person_ids and j.org_uuid in org_ids)

    verified: list[str] = []
    vpath = directory / VERIFIED_UNICORNS_FILE
    if vpath.is_file():
        with open(vpath, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                uuid = (row.get("uuid") or "").strip()
                if not uuid:
                    continue
                if uuid in org_ids:
                    verified.append(uuid)
                else:
                    ld.reject("verified_unicorns", "unknown organization")

    store = EntityStore.from_records(
        snapshot_date, companies=companies, rounds=rounds, ipos=ipos, acquisitions=acquisitions,
        people=people, degrees=degrees, jobs=jobs, investors=investors, investments=investments,
        verified_unicorns=verified, quarantine=dict(ld.quarantine),
    )
    if store.quarantined:
        logger.warning("quarantined %d rows: %s", store.quarantined, dict(ld.quarantine))
    object.__setattr__(store, "quarantine_reasons", tuple(ld.reasons))
    return store


def _table_records(store: EntityStore, table: str):
    return {
        "organizations": store.companies.values(),
        "funding_rounds": store.rounds.values(),
        "ipos": store.ipos.values(),
        "acquisitions": store.acquisitions,
        "people": store.people.values(),
        "degrees": store.degrees,
        "jobs": store.jobs,
        "investors": store.investors.values(),
        "investments": store.investments,
    }[table]


def write_export(store: EntityStore, directory) -> list[Path]:
    """Write the store back out as an export directory, rows canonically sorted."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    written = []
    for table, cols in COLUMNS.items():
        header = list(cols) + list(OPTIONAL_COLUMNS.get(table, ()))
        rows = sorted(_ROW_FORMATTERS[table](rec) for rec in _table_records(store, table))
        path = directory / f"{table}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
        written.append(path)
    path = directory / VERIFIED_UNICORNS_FILE
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("uuid\n")
        for uuid in sorted(store.verified_unicorns):
            fh.write(uuid + "\n")
    written.append(path)
    return written


def export_stats(store: EntityStore) -> dict[str, int]:
    return {
        "companies": len(store.companies),
        "funding_rounds": len(store.rounds),
        "ipos": len(store.ipos),
        "acquisitions": len(store.acquisitions),
        "people": len(store.people),
        "degrees": len(store.degrees),
        "jobs": len(store.jobs),
        "investors": len(store.investors),
        "investments": len(store.investments),
        "verified_unicorns": len(store.verified_unicorns),
        "quarantined": store.quarantined,
    }
