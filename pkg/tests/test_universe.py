import datetime as dt

import pytest

from builders import D, StoreBuilder, perturb_future
from vcbacktest.store import DataError, EntityStore
from vcbacktest.universe import (
    ACQ, IPO, NONE, UNIC, UniverseConfig, build_dataset_asof, filter_universe, label_snapshot,
    label_successful, label_unsuccessful, success_events, write_labels,
)

CFG = UniverseConfig()


def _labels(store, **kw):
    pos = {r.company_uuid: r for r in label_successful(store, CFG, **kw)}
    neg = {r.company_uuid: r for r in label_unsuccessful(store, CFG, pos, **kw)}
    return pos, neg


# -- filter_universe ----------------------------------------------------------------


def test_founding_date_cutoff():
    b = StoreBuilder()
    old = b.company("1999-12-31")
    new = b.company("2000-01-01")
    assert filter_universe(b.build()) == {new}
    assert old not in filter_universe(b.build())


def test_category_group_filter():
    b = StoreBuilder()
    sw = b.company("2010-01-01", groups=("Software",))
    bio = b.company("2010-01-01", groups=("Biotechnology",))
    mixed = b.company("2010-01-01", groups=("Biotechnology", "Data and Analytics"))
    u = filter_universe(b.build())
    assert sw in u and mixed in u and bio not in u


def test_missing_founding_date_is_excluded():
    b = StoreBuilder()
    b.company(None)
    assert filter_universe(b.build()) == set()


def test_empty_store():
    store = EntityStore.from_records(D("2022-06-14"))
    assert filter_universe(store) == set()
    assert len(label_snapshot(store)) == 0


# -- positives --------------------------------------------------------------------


def test_ipo_above_valuation_threshold_is_positive():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2012-01-01", raised=10e6)
    b.ipo(c, "2015-05-05", valuation=600e6)
    pos, _ = _labels(b.build())
    assert pos[c].label == 1 and pos[c].outcome_kind == IPO
    assert pos[c].success_date == D("2015-05-05")
    assert pos[c].success_round.investment_type == "series_a"


def test_ipo_on_money_raised_alone_is_positive():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2011-01-01")
    b.ipo(c, "2015-05-05", valuation=None, raised=150e6)
    pos, _ = _labels(b.build())
    assert pos[c].outcome_kind == IPO


def test_small_ipo_is_not_success():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2011-01-01")
    b.ipo(c, "2015-05-05", valuation=400e6, raised=50e6)
    assert success_events(b.build(), c) == []


def test_cheap_acquisition_fails_both_filters():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2011-01-01", raised=80e6)
    b.acquisition(c, "2014-01-01", 50e6)
    pos, _ = _labels(b.build())
    assert c not in pos


def test_acquisition_below_max_raised_fails():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_c", "2011-01-01", raised=300e6)
    b.acquisition(c, "2014-01-01", 200e6)
    assert success_events(b.build(), c) == []


def test_acquisition_above_both_thresholds_is_positive():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2011-01-01", raised=20e6)
    b.acquisition(c, "2014-01-01", 250e6)
    pos, _ = _labels(b.build())
    assert pos[c].outcome_kind == ACQ


def test_unicorn_round_is_positive():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2011-01-01", post=50e6)
    b.round(c, "series_c", "2014-01-01", post=1.2e9)
    pos, _ = _labels(b.build())
    assert pos[c].outcome_kind == UNIC
    assert pos[c].success_date == D("2014-01-01")
    assert pos[c].success_round_index == 1


def test_first_and_last_modes_pick_earliest_and_latest_event():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2011-01-01", post=50e6)
    b.round(c, "series_c", "2014-01-01", post=1.2e9)
    b.round(c, "series_d", "2016-01-01", post=3e9)
    b.ipo(c, "2019-01-01", valuation=9e9)
    store = b.build()
    first = label_successful(store, CFG, mode="first")[0]
    last = label_successful(store, CFG, mode="last")[0]
    assert first.success_date == D("2014-01-01") and first.outcome_kind == UNIC
    assert last.success_date == D("2019-01-01") and last.outcome_kind == IPO
    assert last.success_round_index == 2


def test_success_without_preceding_round_is_skipped():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.ipo(c, "2015-01-01", valuation=2e9)
    b.round(c, "series_a", "2016-01-01")
    pos, neg = _labels(b.build())
    assert c not in pos and c not in neg


def test_verified_unicorn_without_priced_round_is_dated_by_last_round():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2011-01-01")
    b.round(c, "series_c", "2015-06-01")
    b.verified.append(c)
    store = b.build()
    events = success_events(store, c)
    assert [(e.kind, e.date) for e in events] == [(UNIC, D("2015-06-01"))]
    assert success_events(store, c, as_of=D("2015-06-01")) == []
    # the table itself is undated, so no earlier horizon may use it
    assert success_events(store, c, as_of=D("2019-01-01")) == []


# -- negatives --------------------------------------------------------------------


def test_quiet_unvalued_company_is_negative():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2014-01-01")
    pos, neg = _labels(b.build())
    assert c in neg and neg[c].label == 0 and neg[c].outcome_kind == NONE


def test_recent_round_excludes_from_negatives():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2018-01-01")
    _, neg = _labels(b.build())
    assert c not in neg


def test_recent_hire_excludes_from_negatives():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2014-01-01")
    p = b.person()
    b.job(p, c, "2018-03-01")
    _, neg = _labels(b.build())
    assert c not in neg


def test_gray_zone_valuation_excludes_from_negatives():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_b", "2014-01-01", post=150e6)
    pos, neg = _labels(b.build())
    assert c not in neg and c not in pos


def test_structural_relatives_excluded_from_negatives():
    b = StoreBuilder()
    parent = b.company("2005-01-01")
    child = b.company("2010-01-01", parent=parent)
    b.round(child, "seed", "2012-01-01")
    b.round(parent, "seed", "2012-01-01")
    _, neg = _labels(b.build())
    assert parent not in neg and child not in neg


def test_early_horizon_uses_quiet_period_rule():
    b = StoreBuilder()
    quiet = b.company("2008-01-01")
    b.round(quiet, "seed", "2012-01-01")
    busy = b.company("2008-01-01")
    b.round(busy, "seed", "2015-06-01")
    ds = build_dataset_asof(b.build(), CFG, D("2016-01-01"))
    labels = {r.company_uuid: r.label for r in ds.records}
    assert labels == {quiet: 0}


# -- point-in-time dataset ------------------------------------------------------------


def test_future_success_is_not_a_training_positive():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "series_a", "2012-01-01", post=40e6)
    b.round(c, "series_c", "2018-05-01", post=1.5e9)
    store = b.build()
    early = build_dataset_asof(store, CFG, D("2016-01-01"))
    assert c not in {r.company_uuid for r in early.records if r.label == 1}
    later = build_dataset_asof(store, CFG, D("2019-01-01"))
    assert {r.company_uuid: r.label for r in later.records}[c] == 1


def test_as_of_before_every_founding_is_empty():
    b = StoreBuilder()
    c = b.company("2010-01-01")
    b.round(c, "seed", "2011-01-01")
    assert len(build_dataset_asof(b.build(), CFG, D("2009-01-01"))) == 0


def test_as_of_after_snapshot_is_rejected():
    store = StoreBuilder().build()
    with pytest.raises(DataError):
        build_dataset_asof(store, CFG, D("2030-01-01"))
    with pytest.raises(ValueError):
        build_dataset_asof(store, CFG, None)


def test_labels_are_disjoint_and_deterministic(small_synth):
    ds1 = label_snapshot(small_synth)
    ds2 = label_snapshot(small_synth)
    assert [(r.company_uuid, r.label) for r in ds1.records] == [(r.company_uuid, r.label) for r in ds2.records]
    ids = ds1.uuids
    assert len(ids) == len(set(ids))
    assert ds1.n_pos > 0 and ds1.n_neg > 0


@pytest.mark.parametrize("cut", ["2016-01-01", "2018-07-01", "2020-04-01"])
def test_dataset_ignores_records_on_or_after_cutoff(small_synth, cut):
    cut = D(cut)
    base = build_dataset_asof(small_synth, CFG, cut)
    mutated = build_dataset_asof(perturb_future(small_synth, cut, seed=1), CFG, cut)
    key = lambda ds: [(r.company_uuid, r.label, r.outcome_kind, r.success_date, r.success_round_index)
                      for r in ds.records]
    assert key(base) == key(mutated)


def test_dataset_grows_with_as_of(small_synth):
    sizes = [len(build_dataset_asof(small_synth, CFG, dt.date(y, 1, 1))) for y in (2012, 2016, 2020)]
    assert sizes == sorted(sizes) and sizes[0] < sizes[-1]


def test_write_labels(tmp_path, small_synth):
    ds = label_snapshot(small_synth)
    path = write_labels(ds, tmp_path / "labels.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "uuid,label,outcome_kind,success_date,success_round_index"
    assert len(lines) == len(ds) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        UniverseConfig(acq_price_min=0)
