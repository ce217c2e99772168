"""Point-in-time company features.

Extraction works on "partial maps": plain dicts from feature name to a raw
value, ``None`` meaning unknown.  Every extractor takes an ``as_of`` date and
only looks at records dated strictly before it.  ``fit_encoders`` freezes
vocabularies and normalization statistics on training rows, and ``encode``
turns partial maps into aligned numeric vectors.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .nmf import NmfModel, nmf_transform
from .store import EntityStore, funding_history

FOUNDER_CATEGORICAL = (
    "founder_country_code", "founder_region", "founder_city",
    "founder_institution_name", "founder_degree_type", "founder_subject",
)
FOUNDER_NUMERIC = (
    "founder_has_twitter", "founder_has_linkedin", "founder_has_facebook", "founder_gender",
    "founder_is_completed", "founder_num_degrees", "founder_num_last_startups",
    "founder_num_last_jobs", "number_of_founders",
)
INVESTOR_CATEGORICAL = (
    "investor_type", "investor_country_code", "investor_region", "investor_city",
    "investor_investor_types",
)
INVESTOR_NUMERIC = (
    "investor_investment_count", "investor_total_funding_usd", "investor_has_twitter",
    "investor_has_linkedin", "investor_has_facebook", "investor_raised_amount_usd",
    "investor_investor_count", "num_full",
)
ROUND_CATEGORICAL = (
    "round_country_code", "round_investment_type", "round_region", "round_city",
    "round_investor_name",
)
_ROUND_VALUES = ("raised_amount_usd", "investor_count", "post_money_valuation_usd")
ROUND_NUMERIC = tuple(f"{v}_{agg}" for v in _ROUND_VALUES for agg in ("sum", "mean", "max"))

CATEGORICAL_FIELDS = FOUNDER_CATEGORICAL + INVESTOR_CATEGORICAL + ROUND_CATEGORICAL
NUMERIC_FIELDS = FOUNDER_NUMERIC + INVESTOR_NUMERIC + ROUND_NUMERIC
# Binary indicators use the lower-middle element as their median.
BINARY_FIELDS = frozenset({
    "founder_has_twitter", "founder_has_linkedin", "founder_has_facebook", "founder_gender",
    "founder_is_completed", "investor_has_twitter", "investor_has_linkedin", "investor_has_facebook",
})
TAG_KEY = "tags"
TAG_EMBEDDING_DIM = 30
VOCAB_CAP = 10_000
ENTRY_ROUND_TYPES = ("series_b", "series_c")


class SchemaError(ValueError):
    pass


# -- aggregation helpers -----------------------------------------------------


def mode(values: Iterable[Optional[str]]) -> Optional[str]:
    """Most frequent non-missing value; ties go to the lexicographically smallest."""
    counts = Counter(v for v in values if v)
    if not counts:
        return None
    best = max(counts.values())
    return min(v for v, c in counts.items() if c == best)


def median(values: Iterable[Optional[float]], *, lower: bool = False) -> Optional[float]:
    vals = sorted(float(v) for v in values if v is not None)
    if not vals:
        return None
    if lower:
        return vals[(len(vals) - 1) // 2]
    return float(np.median(vals))


def _aggregate(per_entity: list[dict], categorical: Sequence[str], numeric: Sequence[str]) -> dict:
    out = {}
    for name in categorical:
        out[name] = mode(e.get(name) for e in per_entity)
    for name in numeric:
        out[name] = median((e.get(name) for e in per_entity), lower=name in BINARY_FIELDS)
    return out


def _blank(fields: Iterable[str]) -> dict:
    return {f: None for f in fields}


# -- extractors --------------------------------------------------------------


def _gender_code(gender: str) -> Optional[float]:
    g = gender.strip().lower()
    if g == "female":
        return 1.0
    if g == "male":
        return 0.0
    return None


def founder_features(store: EntityStore, company: str, as_of: dt.date) -> dict:
    """Founder block: per-founder values aggregated by mode / median."""
    founders = store.founder_ids(company, as_of)
    if not founders:
        return _blank(FOUNDER_CATEGORICAL + FOUNDER_NUMERIC)
    per = []
    for pid in founders:
        person = store.people[pid]
        degrees = [d for d in store.person_degrees(pid) if d.completed_on is None or d.completed_on < as_of]
        latest = max(degrees, key=lambda d: (d.completed_on or dt.date.min, d.institution_name,
                                             d.degree_type, d.subject), default=None)
        founded = set()
        jobs = 0
        for job in store.person_jobs(pid):
            if job.org_uuid == company:
                continue
            if job.is_founder:
                # both the company and the founder role must predate as_of
                dates = [d for d in (store.companies[job.org_uuid].founded_on, job.started_on) if d is not None]
                if dates and max(dates) < as_of:
                    founded.add(job.org_uuid)
            elif job.started_on is not None and job.started_on < as_of:
                jobs += 1
        per.append({
            "founder_country_code": person.country_code or None,
            "founder_region": person.region or None,
            "founder_city": person.city or None,
            "founder_institution_name": (latest.institution_name or None) if latest else None,
            "founder_degree_type": (latest.degree_type or None) if latest else None,
            "founder_subject": (latest.subject or None) if latest else None,
            "founder_has_twitter": float(person.has_twitter),
            "founder_has_linkedin": float(person.has_linkedin),
            "founder_has_facebook": float(person.has_facebook),
            "founder_gender": _gender_code(person.gender),
            "founder_is_completed": (float(any(d.is_completed for d in degrees)) if degrees else None),
            "founder_num_degrees": float(len(degrees)),
            "founder_num_last_startups": float(len(founded)),
            "founder_num_last_jobs": float(jobs),
        })
    out = _aggregate(per, FOUNDER_CATEGORICAL, FOUNDER_NUMERIC[:-1])
    out["number_of_founders"] = float(len(founders))
    return out


def investor_features(store: EntityStore, company: str, as_of: dt.date) -> dict:
    """Investor block over everyone who backed the company's rounds before ``as_of``."""
    rounds = funding_history(store, company, as_of)
    if not rounds:
        return _blank(INVESTOR_CATEGORICAL + INVESTOR_NUMERIC)
    ids = set()
    for r in rounds:
        ids.update(inv.investor_uuid for inv in store.round_investments(r.uuid))
        ids.update(r.lead_investor_uuids)
    per = []
    for iid in sorted(ids):
        inv = store.investors[iid]
        act = store.investor_activity(iid, as_of)
        per.append({
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
    out = _aggregate(per, INVESTOR_CATEGORICAL, INVESTOR_NUMERIC[:-1])
    out["num_full"] = float(len(ids))
    return out


def _lead_name(store: EntityStore, r) -> Optional[str]:
    names = sorted(store.investor_name(u) for u in r.lead_investor_uuids if store.investor_name(u))
    if not names:
        names = sorted(store.investor_name(i.investor_uuid) for i in store.round_investments(r.uuid)
                       if i.is_lead and store.investor_name(i.investor_uuid))
    return names[0] if names else None


def round_features(store: EntityStore, company: str, as_of: dt.date) -> dict:
    """Round block: sum/mean/max of round figures plus latest-round categoricals."""
    rounds = funding_history(store, company, as_of)
    c = store.company(company)
    out = {
        "round_country_code": c.country_code or None,
        "round_region": c.region or None,
        "round_city": c.city or None,
        "round_investment_type": rounds[-1].investment_type if rounds else None,
        "round_investor_name": _lead_name(store, rounds[-1]) if rounds else None,
    }
    for attr in _ROUND_VALUES:
        vals = [float(getattr(r, attr)) for r in rounds if getattr(r, attr) is not None]
        out[f"{attr}_sum"] = math.fsum(vals) if vals else None
        out[f"{attr}_mean"] = math.fsum(vals) / len(vals) if vals else None
        out[f"{attr}_max"] = max(vals) if vals else None
    return out


def company_features(store: EntityStore, company: str, as_of: dt.date) -> dict:
    """All three blocks plus the company's tags, as one partial map."""
    row = {}
    row.update(founder_features(store, company, as_of))
    row.update(investor_features(store, company, as_of))
    row.update(round_features(store, company, as_of))
    row[TAG_KEY] = store.company(company).tags
    return row


def entry_observation_date(store: EntityStore, company: str, as_of: dt.date) -> dt.date:
    """Date a training row is observed at: its first series B/C round if that precedes ``as_of``.

    Scoring happens before an entry round, so training rows are observed
    just before theirs as well.
    """
    for r in store.company_rounds(company):
        if r.announced_on >= as_of:
            break
        if r.investment_type in ENTRY_ROUND_TYPES:
            return r.announced_on
    return as_of


# -- encoding ----------------------------------------------------------------


def _is_log_scaled(name: str) -> bool:
    return "usd" in name or "count" in name or name.startswith("num") or name == "number_of_founders"


def _numeric_transform(name: str, value: float) -> float:
    return math.log1p(value) if _is_log_scaled(name) else value


@dataclass(frozen=True)
class NumericField:
    name: str
    mean: float
    std: float
    log_scaled: bool


@dataclass(frozen=True)
class FeatureSchema:
    categorical_fields: tuple[tuple[str, tuple[str, ...]], ...]
    numeric_fields: tuple[NumericField, ...]
    tag_embedding_dim: int = TAG_EMBEDDING_DIM

    @property
    def categorical_names(self) -> list[str]:
        return [n for n, _ in self.categorical_fields]

    @property
    def numeric_names(self) -> list[str]:
        return [f.name for f in self.numeric_fields]

    @property
    def vocab_sizes(self) -> list[int]:
        """Embedding table sizes, counting the reserved unknown code 0."""
        return [len(v) + 1 for _, v in self.categorical_fields]

    @property
    def dense_width(self) -> int:
        return 2 * len(self.numeric_fields) + self.tag_embedding_dim

    def code(self, field_index: int, value: Optional[str]) -> int:
        lookup = self._lookups()[field_index]
        return lookup.get(value, 0) if value is not None else 0

    def decode(self, field_index: int, code: int) -> Optional[str]:
        vocab = self.categorical_fields[field_index][1]
        return vocab[code - 1] if 1 <= code <= len(vocab) else None

    def _lookups(self) -> list[dict[str, int]]:
        cached = self.__dict__.get("_lookup_cache")
        if cached is None:
            cached = [{v: i + 1 for i, v in enumerate(vocab)} for _, vocab in self.categorical_fields]
            object.__setattr__(self, "_lookup_cache", cached)
        return cached

    def column_names(self) -> list[str]:
        return (self.categorical_names + self.numeric_names
                + [f"{n}_missing" for n in self.numeric_names]
                + [f"tag_{i}" for i in range(self.tag_embedding_dim)])

    def to_dict(self) -> dict:
        return {
            "categorical_fields": [[n, list(v)] for n, v in self.categorical_fields],
            "numeric_fields": [[f.name, f.mean, f.std, f.log_scaled] for f in self.numeric_fields],
            "tag_embedding_dim": self.tag_embedding_dim,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(
            tuple((n, tuple(v)) for n, v in d["categorical_fields"]),
            tuple(NumericField(n, float(m), float(s), bool(lg)) for n, m, s, lg in d["numeric_fields"]),
            int(d["tag_embedding_dim"]),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def fit_encoders(rows: Sequence[dict], *, categorical: Sequence[str] = CATEGORICAL_FIELDS,
                 numeric: Sequence[str] = NUMERIC_FIELDS, tag_embedding_dim: int = TAG_EMBEDDING_DIM,
                 vocab_cap: int = VOCAB_CAP) -> FeatureSchema:
    """Freeze vocabularies (code 0 = unknown) and z-score statistics on training rows.

    Numeric columns with no observed values or zero spread are dropped.
    """
    if not rows:
        raise ValueError("cannot fit encoders on zero rows")
    cats = []
    for name in categorical:
        counts = Counter(r.get(name) for r in rows if r.get(name) is not None)
        kept = sorted(counts, key=lambda v: (-counts[v], v))[:vocab_cap]
        cats.append((name, tuple(sorted(kept))))
    nums = []
    for name in numeric:
        vals = np.array([_numeric_transform(name, r[name]) for r in rows if r.get(name) is not None])
        if vals.size == 0:
            continue
        mean, std = float(vals.mean()), float(vals.std())
        if not std > 0:
            continue
        nums.append(NumericField(name, mean, std, _is_log_scaled(name)))
    return FeatureSchema(tuple(cats), tuple(nums), tag_embedding_dim)


@dataclass(frozen=True, eq=False)
class FeatureVector:
    as_of: Optional[dt.date]
    categorical_codes: np.ndarray
    numeric_values: np.ndarray
    tag_embedding: np.ndarray
    missing_mask: np.ndarray
    company_uuid: Optional[str] = None

    def dense(self) -> np.ndarray:
        return np.concatenate([self.numeric_values, self.missing_mask.astype(float), self.tag_embedding])


def encode(schema: FeatureSchema, rows: Sequence[dict], tag_model: Optional[NmfModel] = None, *,
           as_of: Optional[Sequence[Optional[dt.date]]] = None,
           uuids: Optional[Sequence[str]] = None) -> list[FeatureVector]:
    """Aligned vectors for partial maps; tags go through ``tag_model``."""
    needed = schema.categorical_names + schema.numeric_names
    for i, r in enumerate(rows):
        missing = [n for n in needed if n not in r]
        if missing:
            raise SchemaError(f"row {i} lacks schema fields {missing[:5]}")
    k = schema.tag_embedding_dim
    if tag_model is not None and tag_model.k != k:
        raise SchemaError(f"tag model rank {tag_model.k} != schema tag dimension {k}")
    if rows and k:
        if tag_model is None:
            raise SchemaError("schema expects a tag embedding but no tag model was given")
        if tag_model.m:
            X = np.vstack([tag_model.binary_row(r.get(TAG_KEY, ())) for r in rows])
            tags = nmf_transform(tag_model, X)
        else:
            tags = np.zeros((len(rows), k))
    else:
        tags = np.zeros((len(rows), k))

    lookups = schema._lookups()
    out = []
    for i, r in enumerate(rows):
        codes = np.array([lookups[j].get(r[n], 0) if r[n] is not None else 0
                          for j, n in enumerate(schema.categorical_names)], dtype=np.int64)
        values = np.zeros(len(schema.numeric_fields))
        mask = np.zeros(len(schema.numeric_fields), dtype=bool)
        for j, f in enumerate(schema.numeric_fields):
            v = r[f.name]
            if v is None:
                mask[j] = True
            else:
                x = math.log1p(v) if f.log_scaled else v
                values[j] = (x - f.mean) / f.std
        out.append(FeatureVector(
            as_of[i] if as_of is not None else None, codes, values, tags[i].copy(), mask,
            uuids[i] if uuids is not None else None,
        ))
    return out


def stack(vectors: Sequence[FeatureVector], schema: Optional[FeatureSchema] = None):
    """``(codes n x c int, dense n x d float)`` matrices for the classifier."""
    if not vectors:
        c = len(schema.categorical_fields) if schema else 0
        d = schema.dense_width if schema else 0
        return np.zeros((0, c), dtype=np.int64), np.zeros((0, d))
    codes = np.vstack([v.categorical_codes for v in vectors]).astype(np.int64)
    dense = np.vstack([v.dense() for v in vectors])
    return codes, dense


def write_feature_matrix(schema: FeatureSchema, vectors: Sequence[FeatureVector], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["uuid", "as_of"] + schema.column_names())
        for v in vectors:
            w.writerow([v.company_uuid or "", v.as_of.isoformat() if v.as_of else ""]
                       + [int(c) for c in v.categorical_codes]
                       + [repr(float(x)) for x in v.numeric_values]
                       + [int(m) for m in v.missing_mask]
                       + [repr(float(x)) for x in v.tag_embedding])
    return path

