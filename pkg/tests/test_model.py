import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.special import expit

from vcbacktest.features import FeatureSchema, NumericField
from vcbacktest.model import (
    Classifier, ClassifierConfig, TrainingError, gradient_check, init_classifier, predict, sigmoid,
    train_classifier, weighted_bce, write_loss_curve,
)


def toy_schema(n_cat=3, vocab=4, n_num=10, tags=30):
    cats = tuple((f"c{j}", tuple(f"v{i}" for i in range(vocab))) for j in range(n_cat))
    nums = tuple(NumericField(f"n{j}", 0.0, 1.0, False) for j in range(n_num))
    return FeatureSchema(cats, nums, tags)


def toy_data(schema, n, seed=0):
    rng = np.random.default_rng(seed)
    codes = np.column_stack([rng.integers(0, s, n) for s in schema.vocab_sizes]).astype(np.int64)
    dense = rng.normal(size=(n, schema.dense_width))
    return codes, dense


def separable(n=200, seed=0):
    schema = toy_schema(n_cat=1, vocab=3, n_num=4, tags=0)
    codes, dense = toy_data(schema, n, seed)
    w = np.array([2.0, -1.0, 0.5, 1.5])
    score = dense[:, :4] @ w
    keep = np.abs(score) > 0.3  # margin
    y = (score > 0).astype(float)
    return schema, (codes[keep], dense[keep]), y[keep]


def test_input_width_arithmetic():
    schema = toy_schema()
    clf = init_classifier(schema, ClassifierConfig(embedding_dim_per_categorical=8))
    assert clf.input_width == 3 * 8 + 10 + 10 + 30 == 74
    assert clf.params["W0"].shape == (74, 128)


def test_empty_hidden_sizes_rejected():
    with pytest.raises(ValueError):
        ClassifierConfig(hidden_sizes=())
    with pytest.raises(ValueError):
        ClassifierConfig(dropout_rate=1.0)
    with pytest.raises(ValueError):
        ClassifierConfig(positive_class_weight=-1.0)


def test_same_seed_gives_identical_parameters():
    schema = toy_schema()
    data = toy_data(schema, 64)
    y = (np.arange(64) % 3 == 0).astype(int)
    cfg = ClassifierConfig(hidden_sizes=(16, 8), epochs=5, batch_size=16, seed=4)
    a = train_classifier(init_classifier(schema, cfg), data, y, cfg)
    b = train_classifier(init_classifier(schema, cfg), data, y, cfg)
    assert a.params.keys() == b.params.keys()
    for k in a.params:
        assert np.array_equal(a.params[k], b.params[k])
    assert a.loss_curve == b.loss_curve


def test_linearly_separable_data_is_fit():
    schema, data, y = separable()
    # oracle: an unregularized logistic regression separates the same data
    X = data[1][:, :4]
    nll = lambda w: -np.sum(y * np.log(expit(X @ w) + 1e-300) + (1 - y) * np.log(expit(-(X @ w)) + 1e-300))
    w = minimize(nll, np.zeros(4), method="BFGS").x
    assert np.mean((X @ w > 0) == (y > 0.5)) == 1.0

    cfg = ClassifierConfig(hidden_sizes=(16,), epochs=200, batch_size=32, dropout_rate=0.0,
                           learning_rate=1e-2, seed=0)
    clf = train_classifier(init_classifier(schema, cfg), data, y, cfg)
    acc = np.mean((predict(clf, data) > 0.5) == (y > 0.5))
    assert acc >= 0.99


def test_duplicated_rows_reach_the_same_training_loss():
    schema, data, y = separable(seed=1)
    cfg = ClassifierConfig(hidden_sizes=(16,), epochs=300, batch_size=32, dropout_rate=0.0,
                           learning_rate=1e-2, seed=0)
    once = train_classifier(init_classifier(schema, cfg), data, y, cfg)
    doubled = (np.vstack([data[0], data[0]]), np.vstack([data[1], data[1]]))
    twice = train_classifier(init_classifier(schema, cfg), doubled, np.r_[y, y], cfg)
    assert abs(once.loss_curve[-1] - twice.loss_curve[-1]) < 1e-3


def test_single_class_labels_give_constant_prior_model():
    schema = toy_schema()
    data = toy_data(schema, 20)
    cfg = ClassifierConfig(hidden_sizes=(8,))
    with pytest.warns(RuntimeWarning, match="single-class"):
        clf = train_classifier(init_classifier(schema, cfg), data, np.zeros(20), cfg)
    p = predict(clf, data)
    assert np.all(p < 1e-5)
    assert np.ptp(p) == 0


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_raises():
    schema = toy_schema()
    codes, dense = toy_data(schema, 16)
    dense[3, 0] = np.nan
    cfg = ClassifierConfig(hidden_sizes=(8,), epochs=1)
    with pytest.raises(TrainingError):
        train_classifier(init_classifier(schema, cfg), (codes, dense), np.arange(16) % 2, cfg)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 10_000))
def test_scores_are_probabilities_and_deterministic(n, seed):
    schema = toy_schema(n_cat=2, n_num=3, tags=2)
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(8, 4), seed=seed % 7))
    codes, dense = toy_data(schema, n, seed)
    dense = dense * 50  # push into saturation
    p = predict(clf, (codes, dense))
    assert p.shape == (n,)
    assert np.all((p >= 0) & (p <= 1))
    assert np.array_equal(p, predict(clf, (codes, dense)))
    # identical rows give identical scores
    p2 = predict(clf, (np.vstack([codes[:1]] * 3), np.vstack([dense[:1]] * 3)))
    assert p2[0] == p2[1] == p2[2]


def test_shape_and_code_checks():
    schema = toy_schema()
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(8,)))
    codes, dense = toy_data(schema, 4)
    with pytest.raises(ValueError):
        predict(clf, (codes, dense[:, :-1]))
    codes[0, 0] = 99
    with pytest.raises(ValueError):
        predict(clf, (codes, dense))
    assert predict(clf, (codes[:0], dense[:0])).shape == (0,)


# -- gradients ----------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(3))
def test_gradient_check_on_fresh_model(seed):
    schema = toy_schema(n_cat=2, vocab=3, n_num=4, tags=3)
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(16, 8), embedding_dim_per_categorical=4,
                                                   seed=seed))
    codes, dense = toy_data(schema, 8, seed)
    y = np.array([0, 1, 0, 1, 1, 0, 0, 1])
    assert gradient_check(clf, (codes, dense), y, samples_per_param=40, seed=seed) < 1e-4


def test_zero_output_layer_matches_closed_form():
    schema = toy_schema(n_cat=1, n_num=3, tags=0)
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(6,), embedding_dim_per_categorical=2))
    clf.params["W1"][:] = 0.0
    clf.params["b1"][:] = 0.3
    codes, dense = toy_data(schema, 10)
    y = (np.arange(10) % 2).astype(float)
    w = np.ones(10)
    _, grads = clf.loss_and_grads(codes, dense, y, w)
    # every logit equals b1, so dL/db1 = mean(sigmoid(b1) - y)
    assert grads["b1"][0] == pytest.approx(np.mean(sigmoid(np.array([0.3]))[0] - y), abs=1e-15)
    assert np.all(grads["W0"] == 0) and np.all(grads["b0"] == 0)


def test_unused_codes_get_zero_embedding_gradient():
    schema = toy_schema(n_cat=2, vocab=5, n_num=2, tags=0)
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(8,)))
    codes = np.array([[1, 2], [1, 3], [4, 2]])
    dense = np.random.default_rng(0).normal(size=(3, schema.dense_width))
    _, grads = clf.loss_and_grads(codes, dense, np.array([0.0, 1.0, 1.0]), np.ones(3))
    g0 = grads["emb0"]
    assert np.all(g0[[0, 2, 3, 5]] == 0) and np.any(g0[[1, 4]] != 0)
    g1 = grads["emb1"]
    assert np.all(g1[[0, 1, 4, 5]] == 0)


def test_weighted_bce_matches_direct_formula():
    rng = np.random.default_rng(0)
    z = rng.normal(size=20) * 3
    y = (rng.random(20) < 0.4).astype(float)
    w = rng.random(20) + 0.5
    loss, d = weighted_bce(z, y, w)
    p = 1 / (1 + np.exp(-z))
    direct = -np.sum(w * (y * np.log(p) + (1 - y) * np.log(1 - p))) / w.sum()
    assert loss == pytest.approx(direct, rel=1e-12)
    np.testing.assert_allclose(d, w * (p - y) / w.sum(), rtol=1e-12)


def test_class_weights_balance_classes():
    schema = toy_schema(n_cat=1, n_num=2, tags=0)
    clf = init_classifier(schema, ClassifierConfig(hidden_sizes=(4,)))
    from vcbacktest.model import _class_weights
    y = np.array([1, 0, 0, 0, 0.0])
    w = _class_weights(y, clf.config)
    assert w[0] == 4.0 and np.all(w[1:] == 1.0)


def test_save_load_round_trip(tmp_path):
    schema = toy_schema()
    data = toy_data(schema, 32)
    cfg = ClassifierConfig(hidden_sizes=(8,), epochs=2)
    clf = train_classifier(init_classifier(schema, cfg), data, np.arange(32) % 2, cfg)
    clf.save(tmp_path / "clf.npz")
    back = Classifier.load(tmp_path / "clf.npz")
    assert np.array_equal(predict(back, data), predict(clf, data))
    assert back.loss_curve == clf.loss_curve
    path = write_loss_curve(clf, tmp_path / "loss.csv")
    assert path.read_text().splitlines()[0] == "epoch,loss"


@pytest.mark.parametrize("seed", range(3))
def test_training_loss_is_essentially_non_increasing(seed):
    schema = toy_schema()
    data = toy_data(schema, 400, seed)
    y = (np.random.default_rng(seed).random(400) < 0.3).astype(int)
    cfg = ClassifierConfig(hidden_sizes=(32,), epochs=100, batch_size=64, learning_rate=1e-3, seed=seed)
    clf = train_classifier(init_classifier(schema, cfg), data, y, cfg)
    assert len(clf.loss_curve) >= 100
    assert int(np.sum(np.diff(clf.loss_curve) > 0)) <= 2
