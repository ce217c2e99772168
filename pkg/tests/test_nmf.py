import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from vcbacktest.nmf import NmfModel, binary_matrix, fit_tag_model, nmf_fit, nmf_transform, objective


def _binary(seed, shape, p=0.2):
    rng = np.random.default_rng(seed)
    return (rng.random(shape) < p).astype(float)


@pytest.mark.parametrize("seed", range(3))
def test_objective_non_increasing_small(seed):
    X = _binary(seed, (50, 40))
    model, W = nmf_fit(X, 5, max_iters=300, tol=-np.inf, seed=seed, record_trace=True)
    trace = np.array(model.objective_trace)
    assert len(trace) == 301
    assert np.all(np.diff(trace) <= 1e-12)
    # the trace is the objective actually reached
    assert trace[-1] == pytest.approx(objective(X, W, model.H), rel=1e-12)


@pytest.mark.parametrize("seed", range(3))
def test_exact_low_rank_matrix_is_recovered(seed):
    # sparse factors make the factorization essentially unique, so plain
    # multiplicative updates converge in a few thousand steps
    rng = np.random.default_rng(seed)
    W0 = rng.random((60, 5)) * (rng.random((60, 5)) > 0.5)
    H0 = rng.random((5, 40)) * (rng.random((5, 40)) > 0.5)
    X = W0 @ H0
    model, W = nmf_fit(X, 5, max_iters=5000, tol=1e-14, seed=1)
    assert np.linalg.norm(X - W @ model.H) / np.linalg.norm(X) < 1e-3


def test_zero_row_has_zero_code():
    X = _binary(0, (30, 20))
    X[4] = 0.0
    model, W = nmf_fit(X, 4, seed=0)
    assert np.all(W[4] == 0)
    assert np.all(nmf_transform(model, np.zeros(20)) == 0)


def test_transform_reproduces_training_codes():
    rng = np.random.default_rng(5)
    W0 = rng.random((60, 5)) * (rng.random((60, 5)) > 0.5)
    H0 = rng.random((5, 40)) * (rng.random((5, 40)) > 0.5)
    X = W0 @ H0
    model, W = nmf_fit(X, 5, max_iters=5000, tol=1e-14, seed=1)
    T = nmf_transform(model, X, max_iters=5000, tol=1e-14)
    assert np.linalg.norm(T - W) / np.linalg.norm(W) < 1e-2


def test_transform_of_unseen_combination_is_finite_and_nonnegative():
    X = _binary(1, (40, 25))
    model, _ = nmf_fit(X, 6, seed=0)
    row = np.ones(25)
    code = nmf_transform(model, row)
    assert code.shape == (6,)
    assert np.all(np.isfinite(code)) and np.all(code >= 0)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(2, 12)),
              elements=st.sampled_from([0.0, 1.0])),
       st.integers(1, 4), st.integers(0, 100))
def test_factors_stay_nonnegative_and_objective_never_rises(X, k, seed):
    k = min(k, *X.shape)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        model, W = nmf_fit(X, k, max_iters=50, tol=-np.inf, seed=seed, record_trace=True)
    assert np.all(W >= 0) and np.all(model.H >= 0)
    assert np.all(np.isfinite(W)) and np.all(np.isfinite(model.H))
    trace = np.array(model.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.maximum(trace[:-1], 1.0))


def test_input_validation():
    with pytest.raises(ValueError):
        nmf_fit(np.array([[1.0, -1.0]]), 1)
    with pytest.raises(ValueError):
        nmf_fit(np.ones((3, 3)), 4)
    with pytest.raises(ValueError):
        nmf_fit(np.ones(3), 1)
    with pytest.warns(RuntimeWarning):
        model, W = nmf_fit(np.zeros((3, 4)), 2)
    assert not W.any() and not model.H.any()
    model, _ = nmf_fit(np.ones((3, 4)), 2)
    with pytest.raises(ValueError):
        nmf_transform(model, np.ones(5))


def test_save_load_round_trip(tmp_path):
    X, vocab = binary_matrix([("a", "b"), ("b", "c"), ("c",), ("a", "c")])
    model, _ = nmf_fit(X, 2, seed=0, tag_vocabulary=vocab)
    model.save(tmp_path / "nmf.npz")
    back = NmfModel.load(tmp_path / "nmf.npz")
    assert back.tag_vocabulary == ("a", "b", "c")
    assert np.array_equal(back.H, model.H)
    assert np.array_equal(back.binary_row(["c", "zzz"]), [0.0, 0.0, 1.0])


def test_tag_model_pads_rank_for_tiny_vocabularies():
    model = fit_tag_model([("a",), ("b",)], k=30)
    assert model.k == 30 and model.H.shape == (30, 2)
    empty = fit_tag_model([(), ()], k=30)
    assert empty.m == 0


def test_same_seed_same_factors():
    X = _binary(2, (30, 20))
    a, Wa = nmf_fit(X, 4, seed=7)
    b, Wb = nmf_fit(X, 4, seed=7)
    assert np.array_equal(a.H, b.H) and np.array_equal(Wa, Wb)
