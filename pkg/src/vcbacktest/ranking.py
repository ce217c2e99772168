"""Auxiliary rankings: investors, founders and likely future unicorns.

* Investors are embedded with a small autoencoder and scored by closeness
  to the centroid of an expert set.
* Founders get a weighted count of their track record, min-max scaled.
* Young companies are ranked by cosine similarity to the unicorns of their
  founding cohort, and the recommendations drive a toy portfolio.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .dates import add_months, add_years, format_date, month_range
from .features import CATEGORICAL_FIELDS, NUMERIC_FIELDS, FeatureSchema, company_features, fit_encoders
from .model import Adam, mlp_backward, mlp_forward, uniform_fan_in
from .store import DataError, EntityStore, format_number, round_rank
from .universe import UNIC, UniverseConfig, filter_universe, success_events

logger = logging.getLogger(__name__)

# -- investor autoencoder -------------------------------------------------------

INVESTOR_AE_CATEGORICAL = ("investor_type", "investor_country_code", "investor_region",
                           "investor_city", "investor_investor_types")
INVESTOR_AE_NUMERIC = ("investor_investment_count", "investor_total_funding_usd",
                       "investor_has_twitter", "investor_has_linkedin", "investor_has_facebook",
                       "investor_raised_amount_usd", "investor_investor_count")


def investor_rows(store: EntityStore, as_of: dt.date) -> tuple[list[str], list[dict]]:
    """Partial maps for investors with at least one round before ``as_of``."""
    ids, rows = [], []
    for iid, inv in store.investors.items():
        act = store.investor_activity(iid, as_of)
        if act["investment_count"] == 0:
            continue
        ids.append(iid)
        rows.append({
            "investor_type": inv.type or None,
            "investor_country_code": inv.country_code or None,
            "investor_region": inv.region or None,
            "investor_city": inv.city or None,
            "investor_investor_types": ",".join(sorted(inv.investor_types)) or None,
            "investor_investment_count": float(act["investment_count"]),
            "investor_total_funding_usd": act["total_funding_usd"],
            "investor_has_twitter": float(inv.has_twitter),
            "investor_has_linkedin": float(inv.has_linkedin),
            "investor_has_facebook": float(inv.has_facebook),
            "investor_raised_amount_usd": act["mean_raised_amount_usd"],
            "investor_investor_count": act["mean_investor_count"],
        })
    return ids, rows


def tabular_matrix(schema: FeatureSchema, rows: Sequence[dict]) -> tuple[np.ndarray, list[np.ndarray]]:
    """Dense ``[z-scored numerics, missing masks]`` plus per-field category codes."""
    n = len(rows)
    p = len(schema.numeric_fields)
    dense = np.zeros((n, 2 * p))
    for i, r in enumerate(rows):
        for j, f in enumerate(schema.numeric_fields):
            v = r.get(f.name)
            if v is None:
                dense[i, p + j] = 1.0
            else:
                x = math.log1p(v) if f.log_scaled else v
                dense[i, j] = (x - f.mean) / f.std
    codes = [np.array([schema.code(k, r.get(name)) for r in rows], dtype=np.int64)
             for k, name in enumerate(schema.categorical_names)]
    return dense, codes


def _one_hot(codes: Sequence[np.ndarray], sizes: Sequence[int]) -> np.ndarray:
    n = len(codes[0]) if codes else 0
    blocks = []
    for c, size in zip(codes, sizes):
        b = np.zeros((n, size))
        b[np.arange(n), c] = 1.0
        blocks.append(b)
    return np.hstack(blocks) if blocks else np.zeros((n, 0))


@dataclass
class AutoencoderConfig:
    latent_dim: int = 8
    hidden_sizes: tuple[int, ...] = (32,)
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 0  # 0 = full batch
    seed: int = 0

    def __post_init__(self):
        self.hidden_sizes = tuple(int(h) for h in self.hidden_sizes)
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")


@dataclass
class InvestorAutoencoder:
    """Encoder / decoder over investor vectors; the latent layer is linear."""

    schema: FeatureSchema
    config: AutoencoderConfig
    params: dict[str, np.ndarray]
    loss_curve: list[float] = field(default_factory=list)

    @property
    def n_enc(self) -> int:
        return len(self.config.hidden_sizes) + 1

    @property
    def numeric_width(self) -> int:
        return 2 * len(self.schema.numeric_fields)

    @property
    def vocab_sizes(self) -> list[int]:
        return self.schema.vocab_sizes

    def inputs(self, rows: Sequence[dict]) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        dense, codes = tabular_matrix(self.schema, rows)
        return np.hstack([dense, _one_hot(codes, self.vocab_sizes)]), dense, codes

    def encode(self, x: np.ndarray) -> np.ndarray:
        z, _ = mlp_forward(self.params, x, self.n_enc, prefix="enc_")
        return z

    def loss_and_grads(self, x: np.ndarray, dense: np.ndarray, codes: list[np.ndarray], grads: bool = True):
        n = x.shape[0]
        z, enc_cache = mlp_forward(self.params, x, self.n_enc, prefix="enc_")
        out, dec_cache = mlp_forward(self.params, z, self.n_enc, prefix="dec_")
        w = self.numeric_width
        diff = out[:, :w] - dense
        loss = float(np.sum(diff * diff))
        dout = np.zeros_like(out)
        dout[:, :w] = 2.0 * diff
        off = w
        for c, size in zip(codes, self.vocab_sizes):
            logits = out[:, off:off + size]
            shifted = logits - logits.max(axis=1, keepdims=True)
            logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
            logp = shifted - logz
            loss -= float(np.sum(logp[np.arange(n), c]))
            p = np.exp(logp)
            p[np.arange(n), c] -= 1.0
            dout[:, off:off + size] = p
            off += size
        loss /= n
        if not grads:
            return loss, None
        dout /= n
        g_dec, dz = mlp_backward(self.params, dec_cache, dout, self.n_enc, prefix="dec_")
        g_enc, _ = mlp_backward(self.params, enc_cache, dz, self.n_enc, prefix="enc_")
        g_dec.update(g_enc)
        return loss, g_dec


def train_investor_autoencoder(store: EntityStore, as_of: dt.date, latent_dim: int = 8,
                               cfg: Optional[AutoencoderConfig] = None,
                               rows: Optional[Sequence[dict]] = None) -> tuple[InvestorAutoencoder, list[str]]:
    """Fit the investor autoencoder; returns the model and the investor ids it embeds.

    ``rows`` bypasses the store (ids are then positional strings).
    """
    cfg = replace(cfg or AutoencoderConfig(), latent_dim=latent_dim)
    if rows is None:
        ids, rows = investor_rows(store, as_of)
    else:
        ids = [str(i) for i in range(len(rows))]
    if len(rows) < max(latent_dim, 2):
        raise DataError(f"need at least {max(latent_dim, 2)} investors with activity before {as_of}, "
                        f"found {len(rows)}")
    schema = fit_encoders(rows, categorical=INVESTOR_AE_CATEGORICAL, numeric=INVESTOR_AE_NUMERIC,
                          tag_embedding_dim=0)
    rng = np.random.default_rng(cfg.seed)
    in_width = 2 * len(schema.numeric_fields) + sum(schema.vocab_sizes)
    sizes = [in_width, *cfg.hidden_sizes, latent_dim]
    params = {}
    for i in range(len(sizes) - 1):
        params[f"enc_W{i}"] = uniform_fan_in(rng, sizes[i], sizes[i + 1], 6.0 if i < len(sizes) - 2 else 3.0)
        params[f"enc_b{i}"] = np.zeros(sizes[i + 1])
    rev = sizes[::-1]
    for i in range(len(rev) - 1):
        params[f"dec_W{i}"] = uniform_fan_in(rng, rev[i], rev[i + 1], 6.0 if i < len(rev) - 2 else 3.0)
        params[f"dec_b{i}"] = np.zeros(rev[i + 1])
    model = InvestorAutoencoder(schema, cfg, params)

    x, dense, codes = model.inputs(rows)
    opt = Adam(params, lr=cfg.learning_rate)
    order_rng = np.random.default_rng(cfg.seed + 1)
    n = x.shape[0]
    bs = cfg.batch_size or n
    model.loss_curve.append(model.loss_and_grads(x, dense, codes, grads=False)[0])
    for _ in range(cfg.epochs):
        order = order_rng.permutation(n) if bs < n else np.arange(n)
        for s in range(0, n, bs):
            idx = order[s:s + bs]
            _, g = model.loss_and_grads(x[idx], dense[idx], [c[idx] for c in codes])
            opt.step(params, g)
        loss = model.loss_and_grads(x, dense, codes, grads=False)[0]
        if not math.isfinite(loss):
            raise FloatingPointError("autoencoder loss diverged")
        model.loss_curve.append(loss)
    logger.info("investor autoencoder: %d investors, loss %.4g -> %.4g", n, model.loss_curve[0],
                model.loss_curve[-1])
    return model, ids


def investor_embeddings(model: InvestorAutoencoder, rows: Sequence[dict]) -> np.ndarray:
    x, _, _ = model.inputs(rows)
    return model.encode(x)


@dataclass(frozen=True)
class InvestorScore:
    investor_uuid: str
    name: str
    latent_vector: tuple[float, ...]
    distance_to_centroid: float
    score: float


def score_investors(embeddings: Mapping[str, np.ndarray], expert_top_set: Iterable[str],
                    names: Optional[Mapping[str, str]] = None) -> list[InvestorScore]:
    """Score = 1 / (1 + Euclidean distance to the expert centroid), best first."""
    experts = sorted(set(expert_top_set))
    if not experts:
        raise ValueError("expert set is empty")
    missing = [e for e in experts if e not in embeddings]
    if missing:
        raise KeyError(f"expert investors without embeddings: {missing[:5]}")
    centroid = np.mean([np.asarray(embeddings[e], dtype=float) for e in experts], axis=0)
    out = []
    for uuid, vec in embeddings.items():
        v = np.asarray(vec, dtype=float)
        d = float(np.linalg.norm(v - centroid))
        out.append(InvestorScore(uuid, (names or {}).get(uuid, ""), tuple(float(a) for a in v),
                                 d, 1.0 / (1.0 + d)))
    out.sort(key=lambda s: (s.distance_to_centroid, s.investor_uuid))
    return out


def default_expert_set(store: EntityStore, as_of: dt.date, ucfg: UniverseConfig = UniverseConfig(),
                       size: int = 10) -> list[str]:
    """Investors with the most pre-success rounds in companies that succeeded before ``as_of``."""
    counts: Counter = Counter()
    for uuid in sorted(filter_universe(store, ucfg)):
        events = success_events(store, uuid, ucfg, as_of)
        if not events:
            continue
        for r in store.company_rounds(uuid):
            if r.announced_on >= events[0].date:
                break
            for inv in store.round_investments(r.uuid):
                counts[inv.investor_uuid] += 1
    ranked = sorted(counts, key=lambda k: (-counts[k], k))
    return ranked[:size]


def rank_investors(store: EntityStore, as_of: dt.date, *, latent_dim: int = 8,
                   cfg: Optional[AutoencoderConfig] = None, experts: Optional[Sequence[str]] = None,
                   ucfg: UniverseConfig = UniverseConfig()) -> list[InvestorScore]:
    model, ids = train_investor_autoencoder(store, as_of, latent_dim, cfg)
    _, rows = investor_rows(store, as_of)
    emb = investor_embeddings(model, rows)
    embeddings = dict(zip(ids, emb))
    experts = [e for e in (experts if experts is not None else default_expert_set(store, as_of, ucfg))
               if e in embeddings]
    if not experts:
        raise DataError(f"no expert investors with activity before {as_of}")
    return score_investors(embeddings, experts, {i: store.investor_name(i) for i in ids})


# -- founders -------------------------------------------------------------------

FOUNDER_WEIGHTS = (1.0, 3.0, 0.5, 0.5)


@dataclass(frozen=True)
class FounderScore:
    person_uuid: str
    name: str
    raw_score: float
    score: float


def _founded_before(store: EntityStore, job, as_of: dt.date) -> bool:
    # both the company and the founder role must predate as_of
    dates = [d for d in (store.companies[job.org_uuid].founded_on, job.started_on) if d is not None]
    return bool(dates) and max(dates) < as_of


def founder_history(store: EntityStore, person_uuid: str, as_of: dt.date,
                    ucfg: UniverseConfig = UniverseConfig()) -> tuple[int, int, int, int]:
    """(startups founded, of which succeeded, other jobs, completed degrees) before ``as_of``."""
    founded, jobs = set(), 0
    for job in store.person_jobs(person_uuid):
        if job.is_founder:
            if _founded_before(store, job, as_of):
                founded.add(job.org_uuid)
        elif job.started_on is not None and job.started_on < as_of:
            jobs += 1
    succeeded = sum(1 for c in founded if success_events(store, c, ucfg, as_of))
    degrees = sum(1 for d in store.person_degrees(person_uuid)
                  if d.is_completed and (d.completed_on is None or d.completed_on < as_of))
    return len(founded), succeeded, jobs, degrees


def minmax(values: Sequence[float]) -> list[float]:
    """Scale to [0, 1]; a constant input maps to all zeros."""
    if not values:
        return []
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0] * len(values)
    return [(v - lo) / (hi - lo) for v in values]


def score_founders(store: EntityStore, as_of: dt.date, weights: Sequence[float] = FOUNDER_WEIGHTS,
                   ucfg: UniverseConfig = UniverseConfig(),
                   people: Optional[Iterable[str]] = None) -> list[FounderScore]:
    """Weighted track-record score for everyone holding a founder job before ``as_of``."""
    if people is None:
        people = sorted({j.person_uuid for j in store.jobs
                         if j.is_founder and _founded_before(store, j, as_of)})
    people = list(people)
    raw = []
    for pid in people:
        counts = founder_history(store, pid, as_of, ucfg)
        raw.append(math.fsum(w * c for w, c in zip(weights, counts)))
    scaled = minmax(raw)
    out = [FounderScore(pid, store.people[pid].name, r, s) for pid, r, s in zip(people, raw, scaled)]
    out.sort(key=lambda f: (-f.raw_score, f.person_uuid))
    return out


# -- unicorn recommender --------------------------------------------------------


@dataclass(frozen=True)
class UnicornRecommendation:
    company_uuid: str
    name: str
    similarity: float
    recommended_on: dt.date
    enter_series: Optional[str] = None
    last_series_value: Optional[float] = None


def cohort(store: EntityStore, as_of: dt.date, ucfg: UniverseConfig = UniverseConfig(),
           min_age_years: int = 4, max_age_years: int = 5) -> list[str]:
    """Universe companies founded between ``max_age_years`` and ``min_age_years`` before ``as_of``."""
    lo, hi = add_years(as_of, -max_age_years), add_years(as_of, -min_age_years)
    return sorted(u for u in filter_universe(store, ucfg) if lo <= store.companies[u].founded_on < hi)


def _company_matrix(rows: Sequence[dict]) -> np.ndarray:
    schema = fit_encoders(rows, categorical=CATEGORICAL_FIELDS, numeric=NUMERIC_FIELDS, tag_embedding_dim=0)
    dense, codes = tabular_matrix(schema, rows)
    # known categories only; code 0 means unknown
    cats = _one_hot(codes, schema.vocab_sizes)
    keep = np.ones(cats.shape[1], dtype=bool)
    off = 0
    for size in schema.vocab_sizes:
        keep[off] = False
        off += size
    vocab = sorted({t for r in rows for t in r["tags"]})
    index = {t: i for i, t in enumerate(vocab)}
    tags = np.zeros((len(rows), len(vocab)))
    for i, r in enumerate(rows):
        for t in r["tags"]:
            tags[i, index[t]] = 1.0
    return np.hstack([dense, cats[:, keep], tags])


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def recommend_unicorns(store: EntityStore, as_of: dt.date, ucfg: UniverseConfig = UniverseConfig(),
                       top_n: int = 30) -> list[UnicornRecommendation]:
    """Cohort companies most similar to the cohort's unicorns, using data before ``as_of``."""
    members = cohort(store, as_of, ucfg)
    if not members:
        logger.warning("recommend_unicorns %s: empty cohort", as_of)
        return []
    events = {u: success_events(store, u, ucfg, as_of) for u in members}
    unicorns = [u for u in members if any(e.kind == UNIC for e in events[u])]
    if not unicorns:
        logger.warning("recommend_unicorns %s: cohort of %d has no unicorns", as_of, len(members))
        return []
    rows = [company_features(store, u, as_of) for u in members]
    X = _company_matrix(rows)
    pos = {u: i for i, u in enumerate(members)}
    centroid = X[[pos[u] for u in unicorns]].mean(axis=0)
    recs = []
    for u in members:
        if events[u]:
            continue
        recs.append((cosine(X[pos[u]], centroid), u))
    recs.sort(key=lambda t: (-t[0], t[1]))
    return [UnicornRecommendation(u, store.companies[u].name, s, as_of) for s, u in recs[:top_n]]


# -- unicorn portfolio ------------------------------------------------------------

VALUATION, STALE, STILL_IN = "valuation", "stale", "STILL_IN"


@dataclass(frozen=True)
class UnicornPortfolioConfig:
    start: dt.date = dt.date(2016, 1, 1)
    end: dt.date = dt.date(2022, 1, 1)
    entry_valuation_max: float = 1e9
    max_entry_round: str = "series_e"
    exit_valuation: float = 2.5e9
    stale_days: int = 1095

    def __post_init__(self):
        if round_rank(self.max_entry_round) is None:
            raise ValueError(f"unknown round type {self.max_entry_round!r}")


@dataclass
class UnicornLedgerEntry:
    uuid: str
    name: str
    enter_series: str
    enter_series_date: dt.date
    enter_series_value: float
    added: dt.date
    last_series_date: dt.date
    last_series_value: Optional[float]
    exit_reason: str = STILL_IN
    expired: Optional[dt.date] = None


def simulate_unicorn_portfolio(store: EntityStore, recommendations: Mapping[int, Sequence[UnicornRecommendation]],
                               cfg: UnicornPortfolioConfig = UnicornPortfolioConfig()) -> list[UnicornLedgerEntry]:
    """Monthly loop: buy recommended companies on a modest round, sell at 2.5B or when stale.

    Each month uses the recommendation list of its calendar year.
    """
    max_rank = round_rank(cfg.max_entry_round)
    ledger: list[UnicornLedgerEntry] = []
    held: list[UnicornLedgerEntry] = []
    seen: set[str] = set()
    for month in month_range(cfg.start, cfg.end):
        t = add_months(month, 1)
        for rec in recommendations.get(month.year, ()):
            if rec.company_uuid in seen:
                continue
            for r in store.company_rounds(rec.company_uuid):
                if not month <= r.announced_on < t:
                    continue
                rank = r.rank
                v = r.post_money_valuation_usd
                if v is None or v >= cfg.entry_valuation_max or rank is None or rank > max_rank:
                    continue
                entry = UnicornLedgerEntry(rec.company_uuid, rec.name, r.investment_type, r.announced_on,
                                           v, t, r.announced_on, v)
                ledger.append(entry)
                held.append(entry)
                seen.add(rec.company_uuid)
                break
        still = []
        for e in held:
            since = [r for r in store.company_rounds(e.uuid) if e.enter_series_date <= r.announced_on < t]
            e.last_series_date = since[-1].announced_on
            values = [r.post_money_valuation_usd for r in since if r.post_money_valuation_usd is not None]
            e.last_series_value = values[-1]
            if e.last_series_value is not None and e.last_series_value >= cfg.exit_valuation:
                e.exit_reason, e.expired = VALUATION, t
            elif (t - e.last_series_date).days >= cfg.stale_days:
                e.exit_reason, e.expired = STALE, t
            else:
                still.append(e)
        held = still
    return ledger


# -- writers --------------------------------------------------------------------


def write_investor_scores(scores: Sequence[InvestorScore], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["uuid", "name", "distance", "score"])
        for s in scores:
            w.writerow([s.investor_uuid, s.name, repr(s.distance_to_centroid), repr(s.score)])
    return path


def write_founder_scores(scores: Sequence[FounderScore], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["uuid", "name", "raw_score", "score"])
        for s in scores:
            w.writerow([s.person_uuid, s.name, repr(s.raw_score), repr(s.score)])
    return path


def write_recommendations(recs: Mapping[int, Sequence[UnicornRecommendation]], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["year", "rank", "uuid", "name", "similarity"])
        for year in sorted(recs):
            for i, r in enumerate(recs[year], 1):
                w.writerow([year, i, r.company_uuid, r.name, repr(r.similarity)])
    return path


def write_unicorn_ledger(ledger: Sequence[UnicornLedgerEntry], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["uuid", "name", "enter_series", "enter_series_date", "enter_series_value", "added",
                    "last_series_date", "last_series_value", "exit_reason", "expired"])
        for e in ledger:
            w.writerow([e.uuid, e.name, e.enter_series, format_date(e.enter_series_date),
                        format_number(e.enter_series_value), format_date(e.added),
                        format_date(e.last_series_date), format_number(e.last_series_value),
                        e.exit_reason, format_date(e.expired)])
    return path
