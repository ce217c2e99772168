"""Deterministic synthetic export with a plantable success signal.

Every company's visible pre-series-B profile (seed and A round sizes,
founder track record, early backers, categories) is drawn first and
independently of its fate.  Success is then a Bernoulli draw whose logit is
``b0 + signal_strength * signal_scale * z`` with ``z`` a standardized
linear combination of that profile; ``b0`` is solved so the expected
success rate equals ``positive_rate``.  With ``signal_strength = 0`` the
pre-B profile carries no information about the outcome.

Successful companies go on to a unicorn round, an acquisition or an IPO;
the others stall after their last round with valuations under $100M.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
import uuid as uuidlib
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .features import median
from .store import (
    Acquisition, Company, Degree, EntityStore, FundingRound, Investment, Investor, Ipo, Job, Person,
    write_export,
)
from .universe import ALLOWED_CATEGORY_GROUPS

logger = logging.getLogger(__name__)

SNAPSHOT = dt.date(2022, 6, 14)

_GROUPS = tuple(sorted(ALLOWED_CATEGORY_GROUPS))
_OTHER_GROUPS = ("Manufacturing", "Health Care", "Energy", "Real Estate", "Transportation")
_LOCATIONS = (
    ("USA", "California", "San Francisco"), ("USA", "California", "Palo Alto"),
    ("USA", "New York", "New York"), ("USA", "Massachusetts", "Boston"),
    ("GBR", "England", "London"), ("DEU", "Berlin", "Berlin"), ("FRA", "Ile-de-France", "Paris"),
    ("ISR", "Tel Aviv", "Tel Aviv"), ("IND", "Karnataka", "Bangalore"), ("CHN", "Beijing", "Beijing"),
    ("SWE", "Stockholm", "Stockholm"), ("CAN", "Ontario", "Toronto"),
)
_INSTITUTIONS = ("Stanford University", "MIT", "Harvard University", "University of Oxford",
                 "ETH Zurich", "Tel Aviv University", "IIT Bombay", "Tsinghua University",
                 "University of Toronto", "KTH Royal Institute of Technology", "UC Berkeley",
                 "Imperial College London")
_DEGREE_TYPES = ("BS", "BA", "MS", "MBA", "PhD")
_SUBJECTS = ("Computer Science", "Economics", "Electrical Engineering", "Mathematics",
             "Business Administration", "Physics", "Design")
_FIRST = ("Alex", "Sam", "Maria", "Jun", "Priya", "Omar", "Lena", "Noah", "Ava", "Ravi", "Ines",
          "Tom", "Yara", "Kai", "Elif", "Marco", "Hana", "Luis", "Nora", "Ben")
_LAST = ("Smith", "Chen", "Garcia", "Kumar", "Cohen", "Muller", "Rossi", "Kim", "Silva", "Novak",
         "Tanaka", "Dubois", "Haddad", "Larsen", "Okafor", "Weber", "Singh", "Moreau", "Park", "Levi")
_SYLLABLES = ("ka", "lo", "mi", "ra", "ven", "tor", "zen", "qui", "lu", "bex", "sa", "no", "vi",
              "tri", "ox", "fy", "ly", "go", "da", "ri", "pex", "mo", "ne", "tu")
_INVESTOR_TYPES = ("venture_capital", "micro_vc", "corporate_venture_capital", "angel_group",
                   "private_equity_firm")
_TITLES = ("Software Engineer", "Product Manager", "Sales Lead", "Designer", "Data Scientist",
           "VP Engineering", "Marketing Manager")
SUCCESS_KINDS = (("UNIC", 0.45), ("ACQ", 0.35), ("IPO", 0.20))
# visible pre-B traits and their weight in the hidden score
SIGNAL_WEIGHTS = {
    "seed_size": 1.0, "a_size": 1.0, "prior_startups": 0.8, "degrees": 0.5,
    "linkedin": 0.4, "top_backer": 0.8, "tag_effect": 0.6,
}


@dataclass(frozen=True)
class SynthConfig:
    n_companies: int = 5000
    start: dt.date = dt.date(2000, 1, 1)
    snapshot_date: dt.date = SNAPSHOT
    signal_strength: float = 1.0
    positive_rate: float = 0.06
    seed: int = 0
    signal_scale: float = 6.0
    # companies are founded in [start, last_founding)
    last_founding: dt.date = dt.date(2018, 1, 1)
    # Set to draw a fresh company sample over the same world (investors,
    # employers, category effects) as another sample with the same ``seed``.
    sample_seed: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.positive_rate < 1:
            raise ValueError("positive_rate must be in (0, 1)")
        if not 0 <= self.signal_strength <= 1:
            raise ValueError("signal_strength must be in [0, 1]")
        if self.n_companies < 100:
            raise ValueError("n_companies must be at least 100")
        if not self.start < self.last_founding < self.snapshot_date:
            raise ValueError("need start < last_founding < snapshot_date")


def calibrate_intercept(z: np.ndarray, slope: float, rate: float) -> float:
    """Intercept ``b0`` with ``mean(sigmoid(b0 + slope * z)) == rate``."""
    return brentq(lambda b: float(np.mean(expit(b + slope * z))) - rate, -60.0, 60.0, xtol=1e-12)


def _standardize(x: np.ndarray) -> np.ndarray:
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


class _Gen:
    """Mutable build state; records are collected and frozen into a store at the end."""

    def __init__(self, cfg: SynthConfig):
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.companies: list[Company] = []
        self.rounds: list[FundingRound] = []
        self.ipos: list[Ipo] = []
        self.acquisitions: list[Acquisition] = []
        self.people: list[Person] = []
        self.degrees: list[Degree] = []
        self.jobs: list[Job] = []
        self.investments: list[Investment] = []
        self.verified: list[str] = []

    # -- primitives --

    def uid(self) -> str:
        return str(uuidlib.UUID(bytes=self.rng.bytes(16)))

    def day(self, lo: dt.date, hi: dt.date) -> dt.date:
        """Uniform date in ``[lo, hi)`` (``lo`` if empty)."""
        span = (hi - lo).days
        return lo + dt.timedelta(days=int(self.rng.integers(span))) if span > 0 else lo

    def after(self, d: dt.date, lo_years: float, hi_years: float) -> dt.date:
        return d + dt.timedelta(days=int(365.25 * self.rng.uniform(lo_years, hi_years)))

    def choice(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def name(self) -> str:
        k = int(self.rng.integers(2, 4))
        return "".join(self.choice(_SYLLABLES) for _ in range(k)).capitalize()

    def person_name(self) -> str:
        return f"{self.choice(_FIRST)} {self.choice(_LAST)}"

    # -- entities --

    def shell(self, founded: dt.date, parent: Optional[str] = None, status: str = "operating") -> str:
        """Organization outside the universe: employer, past venture or acquirer."""
        cid = self.uid()
        country, region, city = self.choice(_LOCATIONS)
        group = self.choice(_OTHER_GROUPS)
        self.companies.append(Company(cid, self.name() + " " + self.choice(("Corp", "Group", "Labs")),
                                      founded, country, region, city, (group.lower(),), (group,),
                                      status, parent))
        return cid

    def person(self, featured: Optional[str], linkedin: Optional[bool] = None) -> str:
        pid = self.uid()
        country, region, city = self.choice(_LOCATIONS)
        slug = pid[:8]
        gender = self.choice(("male", "female", "male", "female", ""))
        if linkedin is None:
            linkedin = self.rng.random() < 0.6
        self.people.append(Person(
            pid, self.person_name(), gender, country, region, city,
            f"https://twitter.com/{slug}" if self.rng.random() < 0.5 else "",
            f"https://linkedin.com/in/{slug}" if linkedin else "",
            f"https://facebook.com/{slug}" if self.rng.random() < 0.3 else "",
            featured,
        ))
        return pid

    def add_round(self, company: str, kind: str, when: dt.date, raised: Optional[float],
                  post: Optional[float], backers: list[str]) -> None:
        rid = self.uid()
        lead = (backers[0],) if backers and self.rng.random() < 0.9 else ()
        self.rounds.append(FundingRound(
            rid, company, kind, when, None if raised is None else float(round(raised)),
            None if post is None else float(round(post)), len(backers) if backers else None, lead,
        ))
        for i, b in enumerate(backers):
            self.investments.append(Investment(rid, b, i == 0))


def _investors(g: _Gen, n: int) -> tuple[list[Investor], list[str], list[str]]:
    out = []
    for _ in range(n):
        iid = g.uid()
        country, region, city = g.choice(_LOCATIONS)
        slug = iid[:8]
        kinds = tuple(sorted({g.choice(_INVESTOR_TYPES) for _ in range(int(g.rng.integers(1, 3)))}))
        out.append(Investor(
            iid, g.name() + " " + g.choice(("Ventures", "Capital", "Partners", "Fund")),
            "organization" if g.rng.random() < 0.85 else "person", kinds, country, region, city,
            None, None,
            f"https://twitter.com/{slug}" if g.rng.random() < 0.6 else "",
            f"https://linkedin.com/company/{slug}" if g.rng.random() < 0.7 else "",
            f"https://facebook.com/{slug}" if g.rng.random() < 0.3 else "",
        ))
    n_top = max(3, n // 10)
    ids = [v.uuid for v in out]
    return out, ids[:n_top], ids[n_top:]


def _backers(g: _Gen, top: list[str], rest: list[str], k: int, top_lead: bool) -> list[str]:
    picked = []
    if top_lead:
        picked.append(g.choice(top))
    pool = rest if g.rng.random() < 0.85 else top
    while len(picked) < k:
        c = g.choice(pool)
        if c not in picked:
            picked.append(c)
    return picked


def synthesize(cfg: SynthConfig = SynthConfig()) -> EntityStore:
    """Build the synthetic export in memory."""
    g = _Gen(cfg)
    n = cfg.n_companies
    snap = cfg.snapshot_date
    horizon = snap - dt.timedelta(days=30)

    investors, top, rest = _investors(g, max(60, n // 20))
    employers = [g.shell(g.day(dt.date(1985, 1, 1), dt.date(2015, 1, 1))) for _ in range(max(30, n // 50))]
    group_effect = dict(zip(_GROUPS, g.rng.normal(0.0, 1.0, len(_GROUPS))))
    categories = {grp: tuple(f"{grp.lower().split()[0]}-{i}" for i in range(3)) for grp in _GROUPS}
    if cfg.sample_seed is not None:
        g.rng = np.random.default_rng([cfg.seed, cfg.sample_seed])
    rng = g.rng

    # Phase 1: visible pre-B profile, independent of the outcome.
    plans = []
    for _ in range(n):
        founded = g.day(cfg.start, cfg.last_founding)
        groups = tuple(sorted({g.choice(_GROUPS) for _ in range(int(rng.integers(1, 4)))}))
        n_founders = int(rng.integers(1, 4))
        lam = math.exp(rng.normal(-0.7, 0.8))
        p_deg = rng.beta(2, 2)
        founders = []
        for _ in range(n_founders):
            founders.append({
                "startups": int(min(rng.poisson(lam), 5)),
                "degrees": int(rng.binomial(3, p_deg)),
                "jobs": int(rng.poisson(2)),
                "linkedin": bool(rng.random() < 0.6),
            })
        seed_raised = math.exp(rng.normal(math.log(1.5e6), 0.6))
        a_raised = math.exp(rng.normal(math.log(8e6), 0.6))
        plans.append({
            "founded": founded, "groups": groups, "founders": founders,
            "seed_raised": seed_raised, "a_raised": a_raised,
            "top_backer": bool(rng.random() < 0.2),
            "angel": bool(rng.random() < 0.3),
        })
    traits = {
        "seed_size": np.array([math.log(p["seed_raised"]) for p in plans]),
        "a_size": np.array([math.log(p["a_raised"]) for p in plans]),
        "prior_startups": np.array([median(f["startups"] for f in p["founders"]) for p in plans]),
        "degrees": np.array([median(f["degrees"] for f in p["founders"]) for p in plans]),
        "linkedin": np.array([median((float(f["linkedin"]) for f in p["founders"]), lower=True)
                              for p in plans]),
        "top_backer": np.array([float(p["top_backer"]) for p in plans]),
        "tag_effect": np.array([np.mean([group_effect[x] for x in p["groups"]]) for p in plans]),
    }
    w = np.array([SIGNAL_WEIGHTS[k] for k in traits])
    z = sum(wk * _standardize(traits[k]) for wk, k in zip(w, traits)) / np.linalg.norm(w)
    z = _standardize(z)
    slope = cfg.signal_strength * cfg.signal_scale
    b0 = calibrate_intercept(z, slope, cfg.positive_rate)
    success = rng.random(n) < expit(b0 + slope * z)
    kind_draw = rng.random(n)
    logger.info("synth: %d companies, %d successes (b0=%.3f)", n, int(success.sum()), b0)

    # Phase 2: materialize entities.
    for i, plan in enumerate(plans):
        _company(g, plan, bool(success[i]), float(kind_draw[i]), categories, employers, top, rest,
                 horizon, snap)

    # Snapshot-level investor totals (the pipeline derives as-of values itself).
    rounds_by_id = {r.uuid: r for r in g.rounds}
    counts: dict[str, int] = {}
    totals: dict[str, float] = {}
    for inv in g.investments:
        counts[inv.investor_uuid] = counts.get(inv.investor_uuid, 0) + 1
        raised = rounds_by_id[inv.round_uuid].raised_amount_usd
        totals[inv.investor_uuid] = totals.get(inv.investor_uuid, 0.0) + (raised or 0.0)
    investors = [Investor(v.uuid, v.name, v.type, v.investor_types, v.country_code, v.region, v.city,
                          counts.get(v.uuid, 0), totals.get(v.uuid, 0.0), v.twitter_url, v.linkedin_url,
                          v.facebook_url) for v in investors]

    return EntityStore.from_records(
        snap, companies=g.companies, rounds=g.rounds, ipos=g.ipos, acquisitions=g.acquisitions,
        people=g.people, degrees=g.degrees, jobs=g.jobs, investors=investors,
        investments=g.investments, verified_unicorns=g.verified,
    )


def _company(g: _Gen, plan: dict, success: bool, kind_u: float, categories, employers, top, rest,
             horizon: dt.date, snap: dt.date) -> None:
    rng = g.rng
    cid = g.uid()
    founded = plan["founded"]
    country, region, city = g.choice(_LOCATIONS)
    groups = plan["groups"]
    cats = tuple(sorted({g.choice(categories[x]) for x in groups}))
    parent = None
    if rng.random() < 0.02:
        parent = g.shell(g.day(dt.date(1985, 1, 1), founded))

    # founders and their history, all dated before the founding
    for f in plan["founders"]:
        pid = g.person(cid, f["linkedin"])
        g.jobs.append(Job(pid, cid, None if rng.random() < 0.05 else founded, None,
                          g.choice(("Founder", "Co-Founder", "Founder & CEO")), True))
        for _ in range(f["startups"]):
            started = g.day(max(dt.date(1985, 1, 1), founded - dt.timedelta(days=365 * 12)),
                            founded - dt.timedelta(days=365))
            venture = g.shell(started)
            g.jobs.append(Job(pid, venture, started, None, "Founder", True))
            if rng.random() < 0.1:
                when = g.day(started + dt.timedelta(days=200), founded)
                if when < founded:
                    g.acquisitions.append(Acquisition(venture, g.choice(employers), when,
                                                      float(round(rng.uniform(1e8, 6e8), -3))))
        for _ in range(f["jobs"]):
            started = g.day(founded - dt.timedelta(days=365 * 10), founded - dt.timedelta(days=100))
            ended = g.day(started + dt.timedelta(days=30), founded)
            g.jobs.append(Job(pid, g.choice(employers), started, max(started, ended), g.choice(_TITLES), False))
        for _ in range(f["degrees"]):
            done = g.day(founded - dt.timedelta(days=365 * 15), founded - dt.timedelta(days=30))
            g.degrees.append(Degree(pid, g.choice(_INSTITUTIONS), g.choice(_DEGREE_TYPES),
                                    g.choice(_SUBJECTS), bool(rng.random() < 0.9),
                                    None if rng.random() < 0.1 else done))

    # pre-B rounds: same law for every company
    top_lead = plan["top_backer"]
    last = founded
    if plan["angel"]:
        last = g.after(founded, 0.0, 0.4)
        g.add_round(cid, g.choice(("angel", "pre_seed")), last, rng.uniform(5e4, 4e5), None,
                    _backers(g, top, rest, int(rng.integers(1, 3)), False))
    seed_day = g.after(last, 0.2, 0.8)
    seed_post = min(plan["seed_raised"] * rng.uniform(3, 6), 8e7)
    g.add_round(cid, "seed", seed_day, plan["seed_raised"], seed_post if rng.random() < 0.7 else None,
                _backers(g, top, rest, int(rng.integers(1, 4)), top_lead))
    a_day = g.after(seed_day, 0.5, 1.5)
    a_post = min(plan["a_raised"] * rng.uniform(3, 5), 8e7)
    g.add_round(cid, "series_a", a_day, plan["a_raised"], a_post if rng.random() < 0.7 else None,
                _backers(g, top, rest, int(rng.integers(1, 5)), top_lead))
    b_day = g.after(a_day, 0.5, 1.5)

    timeline = []  # (kind, offset_days, raised, post) after series_b
    status = "operating"
    if success:
        kind = "UNIC" if kind_u < 0.45 else ("ACQ" if kind_u < 0.80 else "IPO")
        b_post = rng.uniform(6e7, 4e8)
        t = 0
        if kind == "UNIC":
            t += int(365 * rng.uniform(0.7, 2.0))
            c_post = rng.uniform(1.05e9, 3e9)
            timeline.append(("series_c", t, c_post * rng.uniform(0.08, 0.15), c_post))
            if rng.random() < 0.5:
                t += int(365 * rng.uniform(0.7, 2.0))
                d_post = c_post * rng.uniform(1.2, 2.5)
                timeline.append(("series_d", t, d_post * rng.uniform(0.05, 0.12), d_post))
            if rng.random() < 0.1:
                t += int(365 * rng.uniform(0.3, 1.0))
                timeline.append((g.choice(("series_unknown", "undisclosed")), t, None, None))
            if rng.random() < 0.3:
                t += int(365 * rng.uniform(1.0, 3.0))
                timeline.append(("IPO", t, rng.uniform(1.5e8, 8e8), rng.uniform(3e9, 1e10)))
                status = "ipo"
        elif kind == "ACQ":
            if rng.random() < 0.5:
                t += int(365 * rng.uniform(0.7, 2.0))
                c_post = rng.uniform(1.5e8, 6e8)
                timeline.append(("series_c", t, c_post * rng.uniform(0.1, 0.2), c_post))
            t += int(365 * rng.uniform(0.5, 3.0))
            timeline.append(("ACQ", t, None, rng.uniform(1.2e8, 1.5e9)))
            status = "acquired"
        else:
            t += int(365 * rng.uniform(0.7, 2.0))
            c_post = rng.uniform(2e8, 6e8)
            timeline.append(("series_c", t, c_post * rng.uniform(0.1, 0.2), c_post))
            if rng.random() < 0.6:
                t += int(365 * rng.uniform(0.7, 2.0))
                d_post = rng.uniform(4e8, 9e8)
                timeline.append(("series_d", t, d_post * rng.uniform(0.1, 0.2), d_post))
            t += int(365 * rng.uniform(1.0, 3.0))
            timeline.append(("IPO", t, rng.uniform(1.2e8, 5e8), rng.uniform(6e8, 5e9)))
            status = "ipo"
        # squeeze the post-B story in before the snapshot
        room = (horizon - b_day).days
        if timeline and timeline[-1][1] > room:
            scale = room / timeline[-1][1]
            squeezed, prev = [], 0
            for k, off, raised, post in timeline:
                off = max(prev + 1, int(off * scale))
                squeezed.append((k, off, raised, post))
                prev = off
            timeline = squeezed
        has_b = True
    else:
        kind = None
        b_post = rng.uniform(2e7, 1e8)
        has_b = rng.random() < 0.55
        if has_b and rng.random() < 0.3:
            off = int(365 * rng.uniform(0.7, 1.5))
            c_post = rng.uniform(max(b_post, 4e7), 1e8)
            timeline.append(("series_c", off, c_post * rng.uniform(0.15, 0.3), c_post))
        if rng.random() < 0.3:
            status = "closed"

    last_activity = a_day
    if has_b and b_day <= snap:
        g.add_round(cid, "series_b", b_day, b_post * rng.uniform(0.15, 0.3),
                    b_post if (success or rng.random() < 0.8) else None,
                    _backers(g, top, rest, int(rng.integers(2, 6)), False))
        last_activity = b_day
        for k, off, raised, post in timeline:
            when = b_day + dt.timedelta(days=off)
            if when > snap:
                break
            last_activity = when
            if k == "IPO":
                g.ipos.append(Ipo(cid, when, float(round(post, -3)), float(round(raised, -3))))
            elif k == "ACQ":
                g.acquisitions.append(Acquisition(cid, g.choice(employers), when, float(round(post, -3))))
            else:
                g.add_round(cid, k, when, raised, post, _backers(g, top, rest, int(rng.integers(2, 7)), False)
                            if raised is not None else [])
    if kind == "UNIC":
        g.verified.append(cid)

    # employees join while the company is active
    for _ in range(int(rng.poisson(3))):
        started = g.day(founded, min(last_activity + dt.timedelta(days=1), snap))
        pid = g.person(None)
        ended = None
        if rng.random() < 0.4:
            ended = g.day(started, snap)
        g.jobs.append(Job(pid, cid, started, ended, g.choice(_TITLES), False))

    name = g.name()
    g.companies.append(Company(cid, name, founded, country, region, city, cats, groups, status, parent))


def generate_synthetic(cfg: SynthConfig, out_dir) -> Path:
    """Write the synthetic export (CSV tables + verified unicorns) to ``out_dir``."""
    store = synthesize(cfg)
    out = Path(out_dir)
    write_export(store, out)
    logger.info("synth: wrote %d companies, %d rounds to %s", len(store.companies), len(store.rounds), out)
    return out
