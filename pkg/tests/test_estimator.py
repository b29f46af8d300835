import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from imb_lab import IMBClassifier
from imb_lab.data import gen_binary_task


@pytest.fixture(scope="module")
def task():
    ds = gen_binary_task(0, 8)
    return ds.inputs, np.where(ds.labels == 1, "pos", "neg")


def quick(**kw):
    base = dict(hidden=(16, 8), n_samples=4, epochs=40, batch_size=32, learning_rate=0.5, init_scale=4.0)
    base.update(kw)
    return IMBClassifier(**base)


def test_fit_predict_string_labels(task):
    X, y = task
    clf = quick().fit(X, y)
    assert set(clf.classes_) == {"neg", "pos"}
    assert clf.n_features_in_ == 8
    assert clf.score(X, y) > 0.8
    proba = clf.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)


def test_predictions_are_repeatable(task):
    X, y = task
    clf = quick(epochs=5).fit(X, y)
    assert np.array_equal(clf.predict_proba(X), clf.predict_proba(X))


def test_get_set_params_and_clone():
    clf = quick(beta=1e-3)
    params = clf.get_params()
    assert params["beta"] == 1e-3 and params["hidden"] == (16, 8)
    other = clone(clf).set_params(algorithm="mle")
    assert other.algorithm == "mle" and clf.algorithm == "joint"


def test_cross_validation(task):
    X, y = task
    scores = cross_val_score(quick(epochs=20), X, y, cv=2)
    assert scores.shape == (2,)


def test_validation(task):
    X, y = task
    with pytest.raises(NotFittedError):
        quick().predict(X)
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        quick().fit(X * 2, y)
    with pytest.raises(ValueError, match="two classes"):
        quick().fit(X, np.zeros(len(X)))
    clf = quick(epochs=1).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        clf.predict(X[:, :3])


def test_mle_and_deterministic_variants(task):
    X, y = task
    a = quick(algorithm="mle", deterministic=True, epochs=20).fit(X, y)
    assert a.score(X, y) > 0.7
    b = quick(algorithm="greedy", hidden=(8, 4), epochs=20).fit(X, y)
    assert b.log_.stage_boundaries == [0, 10]
