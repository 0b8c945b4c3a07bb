import numpy as np
import pytest
from sklearn.base import clone

from l3net import GraphConvClassifier
from l3net.datasets import gen_updown
from l3net.errors import ShapeError, StructuralError
from l3net.estimator import TrainingDiverged, check_signals
from l3net.graph import build_ring


@pytest.fixture(scope="module")
def small():
    return gen_updown("ring", 16, 200, 100, seed=0)


def test_sklearn_params_and_clone():
    clf = GraphConvClassifier(graph=build_ring(16), layer="cheb", cheb_L=3, reg_lambda=0.1)
    params = clf.get_params()
    assert params["cheb_L"] == 3 and params["reg_lambda"] == 0.1
    c2 = clone(clf)
    assert c2.get_params()["layer"] == "cheb" and not hasattr(c2, "model_")


def test_fit_predict_shapes(small):
    tr, te = small
    clf = GraphConvClassifier(graph=tr.graph, epochs=2, batch_size=50).fit(tr.signals, tr.labels)
    assert clf.predict(te.signals).shape == (100,)
    proba = clf.predict_proba(te.signals[:, :, 0])
    assert proba.shape == (100, 2) and np.allclose(proba.sum(axis=1), 1)
    assert 0 <= clf.score(te.signals, te.labels) <= 1
    assert [h["epoch"] for h in clf.history_] == [0, 1, 2]


def test_input_validation(small):
    tr, _ = small
    with pytest.raises(ValueError):
        GraphConvClassifier(epochs=1).fit(tr.signals, tr.labels)
    with pytest.raises(StructuralError):
        GraphConvClassifier(graph=build_ring(8), epochs=1).fit(tr.signals, tr.labels)
    with pytest.raises(ShapeError):
        check_signals(np.zeros((2, 3, 4, 5)))
    with pytest.raises(ValueError):
        GraphConvClassifier(graph=tr.graph, reg_lambda=-1, epochs=1).fit(tr.signals, tr.labels)


def test_state_roundtrip_resumes_identically(small):
    tr, te = small
    full = GraphConvClassifier(graph=tr.graph, epochs=3, batch_size=50).fit(tr.signals, tr.labels)
    part = GraphConvClassifier(graph=tr.graph, epochs=1, batch_size=50).fit(tr.signals, tr.labels)
    state = part.get_state()
    resumed = GraphConvClassifier(graph=tr.graph, epochs=3, batch_size=50).fit(tr.signals, tr.labels, resume=state)
    for a, b in zip(full.model_.parameters(), resumed.model_.parameters()):
        assert np.array_equal(a.value, b.value)
    np.testing.assert_equal(full.history_, resumed.history_)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_restores_last_finite_state(small):
    tr, _ = small
    X = tr.signals.copy()
    clf = GraphConvClassifier(graph=tr.graph, epochs=1, lr=1e300, optimizer="sgd", batch_size=50)
    with pytest.raises(TrainingDiverged) as info:
        clf.fit(X * 1e200, tr.labels)
    assert info.value.state.epoch == 0
    assert all(np.all(np.isfinite(p.value)) for p in clf.model_.parameters())
