import numpy as np
import pytest
from sklearn.base import clone

from rdpkit.estimators import MarginalLikelihoodModel, RandomizedForward, RandomizedInside, ToyAutoencoder
from rdpkit.exceptions import ConfigError
from rdpkit.harness import exact_quantity, simulate_chain, simulate_tree
from rdpkit.train import make_long_tail_data


@pytest.fixture
def chains():
    return [simulate_chain(20, 4, "intermediate", seed=s) for s in range(2)]


def test_forward_transform_shape_and_determinism(chains):
    est = RandomizedForward(k1=3, k2=1, n_runs=5, random_state=1).fit(chains)
    a, b = est.transform(chains), est.transform(chains)
    assert a.shape == (2, 5)
    np.testing.assert_array_equal(a, b)
    assert est.n_instances_ == 2 and est.n_states_ == 20


def test_forward_full_k_is_exact(chains):
    est = RandomizedForward(k1=20, k2=0)
    np.testing.assert_allclose(est.predict(chains), [exact_quantity(p) for p in chains])
    assert est.score(chains) == pytest.approx(0.0, abs=1e-20)


def test_forward_entropy(chains):
    est = RandomizedForward(k1=20, k2=0, quantity="entropy")
    assert est.predict(chains[0])[0] == pytest.approx(exact_quantity(chains[0], "entropy"))
    with pytest.raises(ConfigError):
        RandomizedForward(quantity="mode").predict(chains)


def test_params_roundtrip_and_clone():
    est = RandomizedForward(k1=4, k2=2, proposal="uniform")
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(k2=3).k2 == 3


def test_invalid_counts(chains):
    with pytest.raises(ConfigError):
        RandomizedForward(k1=30, k2=0).fit(chains)
    with pytest.raises(ConfigError):
        RandomizedForward(k1=0, k2=0).fit(chains)
    with pytest.raises(ConfigError):
        RandomizedForward().fit([])


def test_inside_estimator():
    trees = [simulate_tree(8, 3, "dense", seed=0)]
    est = RandomizedInside(k1=8, k2=0).fit(trees)
    assert est.predict(trees)[0] == pytest.approx(exact_quantity(trees[0]))
    assert RandomizedInside(k1=2, k2=2, n_runs=3).transform(trees).shape == (1, 3)
    with pytest.raises(ConfigError):
        RandomizedInside().fit(simulate_chain(5, 2))


def test_likelihood_model():
    symbols, teacher = make_long_tail_data(n_states=6, n_symbols=4, dim=2, length=3, n_sequences=5, seed=0)
    model = MarginalLikelihoodModel(n_states=6, k1=2, k2=1, steps=3).fit(symbols, context_features=teacher.context_features)
    assert model.nll_curve_.shape == (4,)
    assert model.score(symbols) == pytest.approx(-model.nll_curve_[-1])
    assert model.transform(symbols).shape == (5,)
    with pytest.raises(ConfigError):
        MarginalLikelihoodModel().fit(symbols)


def test_autoencoder_model():
    symbols, teacher = make_long_tail_data(n_states=6, n_symbols=4, dim=2, length=3, n_sequences=5, seed=0)
    model = ToyAutoencoder(n_states=6, k1=1, k2=1, steps=2).fit(symbols, context_features=teacher.context_features)
    assert model.histogram_.sum() == symbols.size
    assert model.score() == model.elbo_curve_[-1]
