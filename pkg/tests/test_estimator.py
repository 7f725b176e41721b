import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from relgraph import RelGraphReID
from relgraph.dataio import Manifest
from relgraph.engine.config import TrainConfig


@pytest.fixture(scope="module")
def data(synthetic_dir):
    manifest = Manifest.read(synthetic_dir / "manifest.csv")
    train = manifest.select("train")
    return train.load_images(), train.labels, train.modalities


@pytest.fixture(scope="module")
def fitted(data):
    X, y, m = data
    return RelGraphReID(epochs=1, steps_per_epoch=4, random_state=1).fit(X, y, modality=m)


def test_params_mirror_config():
    est = RelGraphReID(gamma=0.0, random_state=5)
    params = est.get_params()
    assert params["gamma"] == 0.0 and params["random_state"] == 5
    cfg = est.to_config()
    assert cfg == TrainConfig(gamma=0.0, seed=5)
    assert RelGraphReID.from_config(cfg).get_params() == params


def test_clone_and_set_params():
    est = RelGraphReID(lambda_local=0.5)
    copy = clone(est)
    assert copy.get_params() == est.get_params() and copy is not est
    copy.set_params(lambda_local=0.0)
    assert est.lambda_local == 0.5


def test_not_fitted():
    with pytest.raises(NotFittedError):
        RelGraphReID().transform(np.zeros((1, 3, 48, 24)))


def test_fit_transform_predict(fitted, data):
    X, y, m = data
    assert fitted.n_features_out_ == 32
    assert fitted.classes_.tolist() == list(range(16))
    assert len(fitted.trace_) == 4
    feats = fitted.transform(X[:5], "vis")
    assert feats.shape == (5, 32) and feats.dtype == np.float32
    pred = fitted.predict(X[-3:], "ir")
    assert pred.shape == (3,) and set(pred.tolist()) <= set(range(16))
    assert fitted.decision_function(X[:2]).shape == (2, 16)
    feats, nodes = fitted.embed(X[:2], "ir")
    assert nodes.shape == (2, 6, 32)


def test_fit_is_deterministic(fitted, data):
    X, y, m = data
    again = RelGraphReID(epochs=1, steps_per_epoch=4, random_state=1).fit(X, y, modality=m)
    assert again.trace_ == fitted.trace_
    assert again.transform(X[:4]).tobytes() == fitted.transform(X[:4]).tobytes()


def test_fit_transform_routes_modalities(data):
    X, y, m = data
    est = RelGraphReID(epochs=1, steps_per_epoch=1)
    out = est.fit_transform(X, y, modality=m)
    assert out.shape == (X.shape[0], 32)
    np.testing.assert_allclose(out[m == "ir"][:3], est.transform(X[m == "ir"][:3], "ir"), rtol=1e-5, atol=1e-5)


def test_input_validation(data):
    X, y, m = data
    est = RelGraphReID(epochs=1, steps_per_epoch=1)
    with pytest.raises(ValueError, match="modality"):
        est.fit(X, y)
    with pytest.raises(ValueError, match="modality tags"):
        est.fit(X, y, modality=["vis", "uv"] * (len(y) // 2))
    with pytest.raises(ValueError, match="labels"):
        est.fit(X, y[:-1], modality=m)
    with pytest.raises(ValueError, match="shape"):
        est.fit(X[:, :, :40], y, modality=m)
    with pytest.raises(ValueError):
        est.fit(np.full_like(X, np.nan), y, modality=m)
