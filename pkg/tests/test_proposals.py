import numpy as np
import pytest

from rdpkit.chain import ChainPotentials, exact_forward
from rdpkit.exceptions import ConfigError
from rdpkit.harness import simulate_chain, simulate_tree
from rdpkit.proposals import chain_proposal, local_global_proposal, oracle_proposal, tree_proposal, uniform_proposal


def test_uniform():
    np.testing.assert_allclose(uniform_proposal(4), [[0.25] * 4])
    np.testing.assert_allclose(uniform_proposal(1), [[1.0]])
    assert uniform_proposal(10**4).sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ConfigError):
        uniform_proposal(0)


def test_local_global_examples():
    np.testing.assert_allclose(local_global_proposal(np.ones(3), np.ones(3)), [[1 / 3] * 3])
    np.testing.assert_allclose(local_global_proposal([2, 1, 1], [1, 1, 1], mix=1.0), [[0.5, 0.25, 0.25]])
    np.testing.assert_allclose(local_global_proposal([1, 0], [0, 1], mix=0.5), [[0.5, 0.5]])


def test_local_global_errors():
    with pytest.raises(ConfigError):
        local_global_proposal([0, 0], [1, 1])
    with pytest.raises(ConfigError):
        local_global_proposal([1, 1], [1, 1], mix=1.5)
    with pytest.raises(ConfigError):
        local_global_proposal([1, 1], [1, 1, 1])


def test_oracle_single_state():
    pot = ChainPotentials(np.zeros(1), np.zeros((2, 1, 1)))
    np.testing.assert_allclose(oracle_proposal(pot), np.ones((3, 1)))


def test_oracle_uniform_potentials():
    pot = ChainPotentials(np.zeros(4), np.zeros((2, 4, 4)))
    np.testing.assert_allclose(oracle_proposal(pot), np.full((3, 4), 0.25))


def test_oracle_accepts_exact_alphas(rng):
    pot = ChainPotentials(rng.standard_normal(3), rng.standard_normal((2, 3, 3)))
    np.testing.assert_allclose(oracle_proposal(pot, exact_forward(pot)[1]), oracle_proposal(pot))


@pytest.mark.parametrize("name", ["uniform", "local", "global", "local-global", "oracle"])
def test_chain_proposals_are_distributions(name):
    q = chain_proposal(simulate_chain(30, 4, "intermediate", seed=2), name)
    assert q.shape == (4, 30) and (q >= 0).all()
    np.testing.assert_allclose(q.sum(axis=1), 1.0, atol=1e-12)


@pytest.mark.parametrize("name", ["uniform", "local", "global", "local-global"])
def test_tree_proposals_are_distributions(name):
    q = tree_proposal(simulate_tree(10, 3, "dense", seed=0), name)
    assert q.shape == (3, 3, 10)
    np.testing.assert_allclose(q.sum(axis=-1), 1.0, atol=1e-12)


def test_unknown_proposal():
    with pytest.raises(ConfigError):
        chain_proposal(simulate_chain(5, 2), "magic")
    with pytest.raises(ConfigError):
        tree_proposal(simulate_tree(5, 2), "oracle")


def test_chain_proposal_without_side_information(rng):
    pot = ChainPotentials(rng.standard_normal(5), rng.standard_normal((2, 5, 5)))
    q = chain_proposal(pot, "local-global")
    np.testing.assert_allclose(q.sum(axis=1), 1.0)
