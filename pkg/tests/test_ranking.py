import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from builders import D, StoreBuilder, perturb_future
from vcbacktest.ranking import (
    STALE, STILL_IN, VALUATION, AutoencoderConfig, UnicornPortfolioConfig, UnicornRecommendation, cohort,
    cosine, founder_history, investor_embeddings, minmax, rank_investors, recommend_unicorns, score_founders,
    score_investors, simulate_unicorn_portfolio, train_investor_autoencoder, write_founder_scores,
    write_investor_scores, write_recommendations, write_unicorn_ledger,
)
from vcbacktest.store import DataError
from vcbacktest.universe import UniverseConfig

UCFG = UniverseConfig()
AS_OF = D("2020-01-01")


def investor_table(n=100, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        rows.append({
            "investor_type": str(rng.choice(["organization", "person"])),
            "investor_country_code": str(rng.choice(["USA", "GBR", "FRA"])),
            "investor_region": None, "investor_city": None, "investor_investor_types": None,
            "investor_investment_count": float(rng.integers(1, 50)),
            "investor_total_funding_usd": float(rng.random() * 1e8),
            "investor_has_twitter": float(rng.random() < 0.5),
            "investor_has_linkedin": float(rng.random() < 0.5),
            "investor_has_facebook": float(rng.random() < 0.5),
            "investor_raised_amount_usd": float(rng.random() * 1e7),
            "investor_investor_count": float(rng.integers(1, 9)),
        })
    return rows


# -- investors --------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_autoencoder_loss_is_essentially_non_increasing(seed):
    cfg = AutoencoderConfig(learning_rate=1e-3, epochs=100, seed=seed)
    model, _ = train_investor_autoencoder(None, AS_OF, 4, cfg, rows=investor_table(seed=seed))
    curve = np.array(model.loss_curve)
    assert len(curve) == 101
    assert int(np.sum(np.diff(curve) > 0)) <= 2
    assert curve[-1] < curve[0]


def test_wide_latent_layer_reconstructs_nearly_exactly():
    rows = investor_table()
    probe, _ = train_investor_autoencoder(None, AS_OF, 2, AutoencoderConfig(epochs=0), rows=rows)
    width = probe.inputs(rows)[0].shape[1]
    cfg = AutoencoderConfig(learning_rate=3e-3, epochs=3000)
    model, _ = train_investor_autoencoder(None, AS_OF, width, cfg, rows=rows)
    assert model.loss_curve[-1] < 1e-2


def test_identical_investors_share_a_latent_vector():
    rows = investor_table(20)
    rows[5] = dict(rows[3])
    model, _ = train_investor_autoencoder(None, AS_OF, 3, AutoencoderConfig(epochs=20), rows=rows)
    emb = investor_embeddings(model, rows)
    assert np.array_equal(emb[3], emb[5])


def test_autoencoder_is_deterministic_and_rejects_tiny_inputs():
    rows = investor_table(30)
    a, _ = train_investor_autoencoder(None, AS_OF, 3, AutoencoderConfig(epochs=10, seed=2), rows=rows)
    b, _ = train_investor_autoencoder(None, AS_OF, 3, AutoencoderConfig(epochs=10, seed=2), rows=rows)
    assert a.loss_curve == b.loss_curve
    with pytest.raises(DataError):
        train_investor_autoencoder(None, AS_OF, 8, rows=investor_table(5))
    with pytest.raises(ValueError):
        AutoencoderConfig(latent_dim=0)


def test_single_expert_scores_one():
    emb = {"a": np.array([1.0, 2.0]), "b": np.array([4.0, 6.0])}
    scores = score_investors(emb, ["a"])
    assert scores[0].investor_uuid == "a" and scores[0].score == 1.0
    assert scores[1].distance_to_centroid == 5.0 and scores[1].score == 1 / 6


def test_symmetric_investors_score_equally():
    emb = {"e1": np.array([0.0, 0.0]), "e2": np.array([2.0, 0.0]),
           "x": np.array([1.0, 3.0]), "y": np.array([1.0, -3.0])}
    by_id = {s.investor_uuid: s.score for s in score_investors(emb, ["e1", "e2"])}
    assert by_id["x"] == by_id["y"]
    with pytest.raises(ValueError):
        score_investors(emb, [])
    with pytest.raises(KeyError):
        score_investors(emb, ["zzz"])


def test_order_matches_direct_distance_sort():
    rng = np.random.default_rng(4)
    emb = {f"i{k:02d}": rng.normal(size=5) for k in range(50)}
    experts = ["i03", "i17", "i40"]
    centroid = np.mean([emb[e] for e in experts], axis=0)
    expected = sorted(emb, key=lambda k: (np.sqrt(np.sum((emb[k] - centroid) ** 2)), k))
    got = score_investors(emb, experts)
    assert [s.investor_uuid for s in got] == expected
    scores = [s.score for s in got]
    assert scores == sorted(scores, reverse=True)
    assert all(0 < s <= 1 for s in scores)


def test_rank_investors_on_synthetic_store(small_synth, tmp_path):
    scores = rank_investors(small_synth, AS_OF, latent_dim=4, cfg=AutoencoderConfig(epochs=20))
    assert len(scores) > 10
    assert all(len(s.latent_vector) == 4 for s in scores)
    path = write_investor_scores(scores, tmp_path / "inv.csv")
    assert len(path.read_text().splitlines()) == len(scores) + 1


# -- founders --------------------------------------------------------------------------


def founder_store():
    b = StoreBuilder()
    serial = b.person(name="Serial")
    fresh = b.person(name="Fresh")
    mid = b.person(name="Mid")
    late = b.person(name="Late")
    for k in range(3):
        c = b.company(f"201{k}-01-01")
        b.job(serial, c, f"201{k}-01-01", founder=True)
    winner = b.company("2012-06-01")
    b.job(serial, winner, "2012-06-01", founder=True)
    b.round(winner, "series_b", "2014-01-01", post=1.5e9)
    b.job(serial, b.company("2000-01-01"), "2005-01-01")
    b.degree(serial, "2008-06-01")
    start = b.company("2018-01-01")
    for p in (serial, fresh, mid):
        b.job(p, start, "2018-01-01", founder=True)
    b.job(mid, b.company("2000-01-01"), "2010-01-01")
    b.degree(mid, "2009-06-01")
    # a founder role that only starts after the cut
    b.job(late, b.company("2015-01-01"), "2021-01-01", founder=True)
    return b.build(), serial, fresh, mid, late


def test_founder_history_counts():
    store, serial, fresh, mid, late = founder_store()
    assert founder_history(store, serial, AS_OF) == (5, 1, 1, 1)
    assert founder_history(store, fresh, AS_OF) == (1, 0, 0, 0)
    assert founder_history(store, mid, AS_OF) == (1, 0, 1, 1)
    assert founder_history(store, late, AS_OF) == (0, 0, 0, 0)


def test_founder_scores_span_unit_interval():
    store, serial, fresh, mid, late = founder_store()
    scores = score_founders(store, AS_OF)
    assert [s.person_uuid for s in scores] == [serial, mid, fresh]
    assert scores[0].score == 1.0 and scores[-1].score == 0.0
    assert scores[0].raw_score == 1 * 5 + 3 * 1 + 0.5 * 1 + 0.5 * 1


def test_founder_with_no_history_has_zero_raw_score():
    store, *_ = founder_store()
    b = StoreBuilder()
    p = b.person()
    b.job(p, b.company("2018-01-01"), "2018-06-01", founder=True)
    s = b.build()
    assert score_founders(s, AS_OF, weights=(0, 3, 0.5, 0.5))[0].raw_score == 0.0


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=6))
def test_doubling_startup_weight_keeps_order(startups):
    b = StoreBuilder()
    people = []
    for k, n in enumerate(startups):
        p = b.person(uuid=f"p{k}")
        people.append(p)
        for j in range(n):
            b.job(p, b.company("2012-01-01"), "2012-01-01", founder=True)
        b.job(p, b.company("2018-01-01"), "2018-01-01", founder=True)
    store = b.build()
    base = score_founders(store, AS_OF)
    doubled = score_founders(store, AS_OF, weights=(2.0, 3.0, 0.5, 0.5))
    assert [s.person_uuid for s in base] == [s.person_uuid for s in doubled]
    if len(set(startups)) > 1:
        assert max(s.score for s in base) == 1.0 and min(s.score for s in base) == 0.0


def test_minmax_helper():
    assert minmax([]) == []
    assert minmax([3.0, 3.0]) == [0.0, 0.0]
    assert minmax([1.0, 3.0, 2.0]) == [0.0, 1.0, 0.5]


def test_founder_scores_ignore_later_records(small_synth, tmp_path):
    cut = D("2019-01-01")
    mutated = perturb_future(small_synth, cut, seed=4)
    assert score_founders(small_synth, cut) == score_founders(mutated, cut)
    path = write_founder_scores(score_founders(small_synth, cut), tmp_path / "f.csv")
    assert path.read_text().startswith("uuid,name,raw_score,score")


# -- unicorn recommendations -----------------------------------------------------------


def cohort_store():
    # the unicorn is known only from the verified table, so its twin can match it feature for feature
    b = StoreBuilder(snapshot="2019-12-31")
    for uuid in ("uni", "twin"):
        c = b.company("2015-06-01", uuid=uuid, groups=("Payments",), categories=("payments",))
        b.round(c, "series_a", "2016-06-01", raised=20e6, post=100e6)
        b.round(c, "series_b", "2018-06-01", raised=200e6, post=900e6)
    b.verified.append("uni")
    for k in range(4):
        o = b.company(f"2015-0{k + 2}-01", uuid=f"o{k}", groups=("Software",), categories=(f"cat{k}",),
                      country="GBR")
        b.round(o, "seed", "2016-03-01", raised=1e6 * (k + 1))
    b.company("2012-01-01", uuid="old")
    return b.build()


def test_cohort_is_four_to_five_years_old():
    store = cohort_store()
    assert "old" not in cohort(store, AS_OF)
    assert set(cohort(store, AS_OF)) == {"uni", "twin", "o0", "o1", "o2", "o3"}


def test_twin_of_unicorn_is_ranked_first_with_unit_similarity():
    store = cohort_store()
    recs = recommend_unicorns(store, AS_OF)
    assert "uni" not in [r.company_uuid for r in recs]
    assert recs[0].company_uuid == "twin"
    assert recs[0].similarity == pytest.approx(1.0, abs=1e-12)
    assert all(r.recommended_on == AS_OF for r in recs)


def test_no_cohort_unicorn_gives_empty_list(caplog):
    b = StoreBuilder()
    c = b.company("2015-06-01")
    b.round(c, "seed", "2016-01-01")
    with caplog.at_level("WARNING"):
        assert recommend_unicorns(b.build(), AS_OF) == []
    assert "no unicorns" in caplog.text


def test_recommendations_match_exhaustive_similarity_sort(small_synth):
    as_of = D("2019-01-01")
    recs = recommend_unicorns(small_synth, as_of, top_n=30)
    assert 0 < len(recs) <= 30
    from vcbacktest.features import company_features
    from vcbacktest.ranking import _company_matrix
    from vcbacktest.universe import UNIC, success_events
    members = cohort(small_synth, as_of)
    rows = [company_features(small_synth, u, as_of) for u in members]
    X = _company_matrix(rows)
    events = {u: success_events(small_synth, u, UCFG, as_of) for u in members}
    uni = [i for i, u in enumerate(members) if any(e.kind == UNIC for e in events[u])]
    centroid = X[uni].mean(axis=0)
    sims = []
    for i, u in enumerate(members):
        if events[u]:
            continue
        a, c = X[i], centroid
        denom = np.sqrt(a @ a) * np.sqrt(c @ c)
        sims.append((-(a @ c / denom if denom else 0.0), u))
    expected = [u for _, u in sorted(sims)[:30]]
    assert [r.company_uuid for r in recs] == expected


def test_recommendations_ignore_later_records(small_synth):
    cut = D("2019-01-01")
    mutated = perturb_future(small_synth, cut, seed=6)
    assert recommend_unicorns(small_synth, cut) == recommend_unicorns(mutated, cut)


def test_cosine_of_zero_vector():
    assert cosine(np.zeros(3), np.ones(3)) == 0.0


# -- unicorn portfolio -----------------------------------------------------------------


def rec(uuid, year):
    return UnicornRecommendation(uuid, uuid, 0.9, dt.date(year, 1, 1))


def test_valuation_exit_at_two_point_six_billion(tmp_path):
    b = StoreBuilder()
    c = b.company("2012-01-01", uuid="c")
    b.round(c, "series_b", "2016-03-10", post=500e6)
    b.round(c, "series_c", "2017-05-02", post=2.6e9)
    ledger = simulate_unicorn_portfolio(b.build(), {2016: [rec("c", 2016)]})
    e, = ledger
    assert e.added == D("2016-04-01") and e.enter_series == "series_b"
    assert (e.exit_reason, e.expired, e.last_series_value) == (VALUATION, D("2017-06-01"), 2.6e9)
    path = write_unicorn_ledger(ledger, tmp_path / "u.csv")
    assert "valuation" in path.read_text()


def test_round_above_one_billion_is_not_entered():
    b = StoreBuilder()
    c = b.company("2012-01-01", uuid="c")
    b.round(c, "series_c", "2016-03-10", post=1.2e9)
    assert simulate_unicorn_portfolio(b.build(), {2016: [rec("c", 2016)]}) == []


def test_late_round_type_is_not_entered():
    b = StoreBuilder()
    c = b.company("2012-01-01", uuid="c")
    b.round(c, "series_f", "2016-03-10", post=500e6)
    store = b.build()
    assert simulate_unicorn_portfolio(store, {2016: [rec("c", 2016)]}) == []
    loose = UnicornPortfolioConfig(max_entry_round="series_f")
    assert len(simulate_unicorn_portfolio(store, {2016: [rec("c", 2016)]}, loose)) == 1


def test_stale_holding_removed_after_three_years():
    b = StoreBuilder()
    c = b.company("2012-01-01", uuid="c")
    b.round(c, "series_b", "2016-03-10", post=500e6)
    e, = simulate_unicorn_portfolio(b.build(), {2016: [rec("c", 2016)]})
    assert e.exit_reason == STALE
    assert (e.expired - D("2016-03-10")).days >= 1095
    assert (e.expired - D("2016-03-10")).days < 1095 + 31


def test_recommendation_applies_only_to_its_year():
    b = StoreBuilder()
    c = b.company("2012-01-01", uuid="c")
    b.round(c, "series_b", "2017-03-10", post=500e6)
    b.round(c, "series_c", "2019-03-10", post=800e6)
    store = b.build()
    assert simulate_unicorn_portfolio(store, {2016: [rec("c", 2016)]}) == []
    e, = simulate_unicorn_portfolio(store, {2017: [rec("c", 2017)]})
    assert e.exit_reason == STILL_IN and e.last_series_value == 800e6


def test_recommendation_writer(tmp_path):
    path = write_recommendations({2016: [rec("c", 2016)]}, tmp_path / "r.csv")
    assert len(path.read_text().splitlines()) == 2
