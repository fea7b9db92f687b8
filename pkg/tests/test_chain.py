import numpy as np
import pytest

from rdpkit.chain import (
    ChainPotentials,
    backward_messages,
    brute_force_chain,
    exact_entropy,
    exact_forward,
    gumbel_backward_sample,
    randomized_entropy,
    randomized_forward,
)
from rdpkit.exceptions import ConfigError, GuardLimitError, NumericalError, SelectionMismatchError
from rdpkit.numerics import Rng
from rdpkit.proposals import uniform_proposal
from rdpkit.selection import IndexSelection, NodeDraw, select_chain

from conftest import random_chain


def uniform_chain(T, N):
    return ChainPotentials(np.zeros(N), np.zeros((T - 1, N, N)))


def test_uniform_t2_n2():
    log_z, alphas = exact_forward(uniform_chain(2, 2))
    assert log_z == pytest.approx(np.log(4))
    assert exact_entropy(uniform_chain(2, 2)) == pytest.approx(np.log(4))
    assert len(alphas) == 2 and alphas.states[1].size == 2


def test_single_step():
    log_z, _ = exact_forward(ChainPotentials(np.log([2.0, 3.0]), np.zeros((0, 2, 2))))
    assert log_z == pytest.approx(np.log(5))


def test_exact_matches_brute_force(rng):
    pot = random_chain(rng, 4, 5)
    enum = brute_force_chain(pot)
    assert exact_forward(pot)[0] == pytest.approx(enum.log_z, rel=1e-10)
    assert exact_entropy(pot) == pytest.approx(enum.entropy, rel=1e-8)
    assert enum.posterior.sum() == pytest.approx(1.0)


def test_point_mass_entropy_zero():
    pw = np.full((2, 3, 3), -np.inf)
    pw[0, 1, 2] = 0.0
    pw[1, 2, 0] = 0.0
    init = np.array([-np.inf, 0.0, -np.inf])
    pot = ChainPotentials(init, pw)
    assert exact_entropy(pot) == pytest.approx(0.0, abs=1e-12)
    assert brute_force_chain(pot).entropy == pytest.approx(0.0, abs=1e-12)
    assert exact_forward(pot)[0] == pytest.approx(0.0)


def test_unreachable_step():
    pw = np.full((1, 2, 2), -np.inf)
    with pytest.raises(NumericalError, match="unreachable"):
        exact_forward(ChainPotentials(np.zeros(2), pw))


def test_brute_force_guard():
    with pytest.raises(GuardLimitError):
        brute_force_chain(uniform_chain(7, 8))


def test_bad_shapes():
    with pytest.raises(ConfigError):
        ChainPotentials(np.zeros(3), np.zeros((2, 3, 2)))
    with pytest.raises(ConfigError):
        ChainPotentials(np.array([np.nan, 0.0]), np.zeros((1, 2, 2)))


def test_full_selection_reduction(rng):
    pot = random_chain(rng, 5, 4)
    sel = IndexSelection.full(5, 4)
    log_z, alphas = randomized_forward(pot, sel)
    assert log_z == exact_forward(pot)[0]
    assert randomized_entropy(pot, sel, alphas, log_z) == pytest.approx(exact_entropy(pot), rel=1e-10)


def test_single_state_chain():
    pot = ChainPotentials(np.array([0.5]), np.full((3, 1, 1), 0.25))
    sel = select_chain(uniform_proposal(1, 4), 0, 1, Rng(0))
    log_z, alphas = randomized_forward(pot, sel)
    assert log_z == pytest.approx(exact_forward(pot)[0])
    assert randomized_entropy(pot, sel, alphas, log_z) == pytest.approx(0.0, abs=1e-12)
    sample = gumbel_backward_sample(pot, sel, alphas, log_z, np.zeros((4, 1)))
    assert sample.hard.tolist() == [0, 0, 0, 0]
    assert all(float(s[0]) == 1.0 for s in sample.soft)


def test_selection_shape_mismatch(rng):
    with pytest.raises(ConfigError, match="does not match"):
        randomized_forward(random_chain(rng, 3, 4), IndexSelection.full(4, 4))


def test_entropy_refuses_other_selection(rng):
    pot = random_chain(rng, 4, 6)
    q = uniform_proposal(6, 4)
    sel_a = select_chain(q, 1, 2, Rng(0))
    sel_b = select_chain(q, 1, 2, Rng(1))
    log_z, alphas = randomized_forward(pot, sel_a)
    with pytest.raises(SelectionMismatchError):
        randomized_entropy(pot, sel_b, alphas, log_z)
    with pytest.raises(SelectionMismatchError):
        gumbel_backward_sample(pot, sel_b, alphas, log_z, np.zeros((4, 6)))


def test_duplicate_draws_merge_weights():
    node = NodeDraw([0], [2, 2, 3], [0.5, 0.5, 0.5])
    states, logw = node.active()
    assert states.tolist() == [0, 2, 3]
    np.testing.assert_allclose(np.exp(logw), [1.0, 2 / 1.5, 1 / 1.5])


def test_node_validation():
    with pytest.raises(ConfigError):
        NodeDraw([0, 0], [], [])
    with pytest.raises(ConfigError):
        NodeDraw([0], [0], [0.5])
    with pytest.raises(ConfigError):
        NodeDraw([], [], [])
    with pytest.raises(ConfigError):
        NodeDraw([], [1], [1.5])


def test_gumbel_temperature_checks(rng):
    pot = random_chain(rng, 3, 3)
    sel = IndexSelection.full(3, 3)
    log_z, alphas = randomized_forward(pot, sel)
    with pytest.raises(ConfigError):
        gumbel_backward_sample(pot, sel, alphas, log_z, np.zeros((3, 3)), temperature=0.0)
    with pytest.raises(ConfigError):
        gumbel_backward_sample(pot, sel, alphas, log_z, np.zeros((2, 3)))


def test_gumbel_low_temperature_soft_is_one_hot(rng):
    pot = random_chain(rng, 4, 5)
    sel = select_chain(uniform_proposal(5, 4), 2, 1, Rng(3))
    log_z, alphas = randomized_forward(pot, sel)
    noise = Rng(4).generator.gumbel(size=(4, 5))
    sample = gumbel_backward_sample(pot, sel, alphas, log_z, noise, temperature=0.01)
    for t in range(4):
        soft = np.asarray(sample.soft[t])
        assert soft.max() > 0.99
        assert sample.support[t][int(np.argmax(soft))] == sample.hard[t]
        assert sample.hard[t] in sample.support[t]


def test_backward_messages_consistent(rng):
    pot = random_chain(rng, 4, 3)
    log_z, alphas = exact_forward(pot)
    beta = backward_messages(pot)
    for t in range(4):
        lz = np.logaddexp.reduce(alphas.log_alpha[t] + beta[t])
        assert lz == pytest.approx(log_z, rel=1e-12)


def test_alpha_table_as_dict(rng):
    pot = random_chain(rng, 3, 4)
    sel = select_chain(uniform_proposal(4, 3), 1, 1, Rng(0))
    _, alphas = randomized_forward(pot, sel)
    assert set(alphas.as_dict(1)) == set(sel.active(1)[0].tolist())


def test_selection_accessors():
    sel = select_chain(uniform_proposal(5, 2), 2, 2, Rng(9))
    assert [len(t) for t in sel.topk] == [2, 2]
    assert all(len(s) == 2 for s in sel.sampled)
    assert not sel.is_full and IndexSelection.full(2, 5).is_full


def test_zero_variance_rank_one(rng):
    from rdpkit.proposals import oracle_proposal

    T, N = 5, 6
    a, b = rng.standard_normal((T - 1, N)), rng.standard_normal((T - 1, N))
    pot = ChainPotentials(rng.standard_normal(N), a[:, :, None] + b[:, None, :])
    q = oracle_proposal(pot)
    exact = exact_forward(pot)[0]
    for s in range(30):
        assert abs(randomized_forward(pot, select_chain(q, 1, 2, Rng(s)))[0] - exact) < 1e-8


def test_rao_blackwell_monotone_in_k1():
    from rdpkit.harness import evaluate, simulate_chain

    pot = simulate_chain(40, 5, "long_tail", seed=1)
    variances = [evaluate(pot, k1=k1, k2=2, runs=300, seed=5).variance for k1 in (0, 10, 20)]
    assert variances[0] >= variances[1] >= variances[2]
