"""Fit-and-score glue shared by the backtest, cross-validation and CLI.

A :class:`ScoringModel` bundles everything fitted on one training cutoff:
the tag NMF, the encoder schema and the classifier.
"""

from __future__ import annotations

import datetime as dt
import io
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .features import (
    TAG_EMBEDDING_DIM, FeatureSchema, company_features, encode, entry_observation_date, fit_encoders,
)
from .model import Classifier, ClassifierConfig, init_classifier, predict, train_classifier
from .nmf import NmfModel, fit_tag_model
from .store import EntityStore
from .universe import LabeledDataset

logger = logging.getLogger(__name__)


@dataclass
class ScoringModel:
    schema: FeatureSchema
    tag_model: NmfModel
    classifier: Classifier
    train_size: int
    as_of: dt.date

    def vectors(self, rows, dates=None, uuids=None):
        return encode(self.schema, rows, self.tag_model, as_of=dates, uuids=uuids)

    def score_rows(self, rows) -> np.ndarray:
        if not rows:
            return np.zeros(0)
        return predict(self.classifier, self.vectors(rows))

    def score(self, store: EntityStore, uuids: Sequence[str], as_of: dt.date) -> np.ndarray:
        """Scores for companies using features known strictly before ``as_of``."""
        return self.score_rows([company_features(store, u, as_of) for u in uuids])

    def save(self, path) -> None:
        buf_nmf, buf_clf = io.BytesIO(), io.BytesIO()
        self.tag_model.save(buf_nmf)
        self.classifier.save(buf_clf)
        meta = {"format": "scoring_model", "version": 1, "train_size": self.train_size,
                "as_of": self.as_of.isoformat()}
        np.savez(path, meta=np.array(json.dumps(meta)),
                 nmf=np.frombuffer(buf_nmf.getvalue(), dtype=np.uint8),
                 classifier=np.frombuffer(buf_clf.getvalue(), dtype=np.uint8))

    @classmethod
    def load(cls, path) -> "ScoringModel":
        with np.load(path) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("format") != "scoring_model":
                raise ValueError(f"not a scoring model checkpoint: {path}")
            tag_model = NmfModel.load(io.BytesIO(z["nmf"].tobytes()))
            clf = Classifier.load(io.BytesIO(z["classifier"].tobytes()))
        return cls(clf.schema, tag_model, clf, meta["train_size"], dt.date.fromisoformat(meta["as_of"]))


def training_rows(store: EntityStore, dataset: LabeledDataset) -> tuple[list[dict], list[dt.date]]:
    """Partial maps for every labeled company, each observed at its entry-stage date."""
    rows, dates = [], []
    for rec in dataset.records:
        when = entry_observation_date(store, rec.company_uuid, dataset.as_of)
        rows.append(company_features(store, rec.company_uuid, when))
        dates.append(when)
    return rows, dates


def fit_scoring_model(rows: Sequence[dict], labels: Sequence[int], *, as_of: dt.date,
                      clf_config: ClassifierConfig = ClassifierConfig(), nmf_k: int = TAG_EMBEDDING_DIM,
                      nmf_max_iters: int = 200, seed: Optional[int] = None) -> ScoringModel:
    """Refit tag NMF, encoders and classifier from scratch on these rows."""
    if not rows:
        raise ValueError("no training rows")
    if seed is not None:
        clf_config = replace(clf_config, seed=seed)
    tag_model = fit_tag_model([r["tags"] for r in rows], k=nmf_k, max_iters=nmf_max_iters,
                              seed=clf_config.seed)
    schema = fit_encoders(rows, tag_embedding_dim=nmf_k)
    vectors = encode(schema, rows, tag_model)
    clf = init_classifier(schema, clf_config)
    train_classifier(clf, vectors, labels, clf_config)
    return ScoringModel(schema, tag_model, clf, len(rows), as_of)


def fit_on_dataset(store: EntityStore, dataset: LabeledDataset, **kw) -> ScoringModel:
    rows, _ = training_rows(store, dataset)
    return fit_scoring_model(rows, [r.label for r in dataset.records], as_of=dataset.as_of, **kw)


def checkpoint_path(directory, window_start: dt.date) -> Path:
    return Path(directory) / f"model_{window_start.isoformat()}.npz"
