import numpy as np
import pytest

from rdpkit import autodiff as ad
from rdpkit.chain import ChainPotentials, brute_force_chain, exact_forward
from rdpkit.exceptions import ConfigError, NumericalError, TapeError


def grad_of(f, *values):
    tape = ad.Tape()
    xs = [tape.leaf(v) for v in values]
    out = f(*xs)
    tape.backward(out)
    return [x.grad for x in xs]


def test_log_exp_identity():
    (g,) = grad_of(lambda x: ad.log(ad.exp(x)), 3.0)
    assert g == pytest.approx(1.0)


def test_product_rule():
    gx, gy = grad_of(ad.mul, 2.0, 5.0)
    assert gx == pytest.approx(5.0) and gy == pytest.approx(2.0)


def test_logsumexp_gradient_is_softmax():
    x = np.array([0.3, -1.2])
    (g,) = grad_of(ad.logsumexp, x)
    np.testing.assert_allclose(g, np.exp(x) / np.exp(x).sum(), rtol=1e-14)


def test_sum_of_leaves():
    grads = grad_of(lambda a, b, c: ad.add(ad.add(a, b), c), 1.0, 2.0, 3.0)
    assert [float(g) for g in grads] == [1.0, 1.0, 1.0]


def test_div_and_neg():
    gx, gy = grad_of(lambda x, y: ad.neg(ad.div(x, y)), 3.0, 2.0)
    assert gx == pytest.approx(-0.5) and gy == pytest.approx(0.75)


def test_log_nonpositive_raises():
    tape = ad.Tape()
    with pytest.raises(NumericalError):
        ad.log(tape.leaf(0.0))


def test_div_by_zero_raises():
    tape = ad.Tape()
    with pytest.raises(NumericalError):
        ad.div(tape.leaf(1.0), tape.leaf(0.0))


def test_empty_logsumexp():
    with pytest.raises(ConfigError, match="empty"):
        ad.logsumexp(np.array([]))


def test_second_backward_raises():
    tape = ad.Tape()
    x = tape.leaf(2.0)
    y = ad.mul(x, x)
    tape.backward(y)
    with pytest.raises(TapeError):
        tape.backward(y)
    tape.zero_grad()
    tape.backward(y)
    assert x.grad == pytest.approx(4.0)


def test_backward_needs_scalar():
    tape = ad.Tape()
    x = tape.leaf(np.ones(3))
    with pytest.raises(TapeError):
        tape.backward(ad.exp(x))


def test_no_record_mode():
    tape = ad.Tape(record=False)
    y = ad.exp(tape.leaf(1.0))
    assert tape.n_nodes == 1
    with pytest.raises(TapeError):
        tape.backward(y)


def test_constants_stay_plain():
    out = ad.add(np.ones(2), 1.0)
    assert isinstance(out, np.ndarray)


def test_node_counts_exclude_leaves():
    tape = ad.Tape()
    x = tape.leaf(np.ones((2, 3)))
    ad.exp(x)
    assert tape.n_nodes == 1 and tape.n_scalars == 6


def test_broadcast_gradient():
    gx, gy = grad_of(lambda x, y: ad.sum(ad.mul(x, y)), np.ones((2, 3)), np.arange(3.0))
    np.testing.assert_allclose(gx, np.tile(np.arange(3.0), (2, 1)))
    np.testing.assert_allclose(gy, [2.0, 2.0, 2.0])


def test_take_scatter_adds_duplicates():
    (g,) = grad_of(lambda x: ad.sum(ad.take(x, np.array([0, 0, 2]))), np.zeros(3))
    np.testing.assert_allclose(g, [2.0, 0.0, 1.0])


def test_clip_gradient_masked():
    (g,) = grad_of(lambda x: ad.sum(ad.clip(x, -1.0, 1.0)), np.array([-2.0, 0.5, 3.0]))
    np.testing.assert_allclose(g, [0.0, 1.0, 0.0])


@pytest.mark.parametrize(
    "f",
    [
        lambda x: ad.logsumexp(x),
        lambda x: ad.sum(ad.softmax(x) * np.arange(5.0)),
        lambda x: ad.sum(ad.log_softmax(ad.reshape(x, (5, 1)), axis=0)),
        lambda x: ad.sum(ad.exp(ad.stack([x, ad.neg(x)]))),
        lambda x: ad.logsumexp(ad.concatenate([x, ad.mul(x, 2.0)])),
        lambda x: ad.sum(ad.matmul(np.ones((2, 5)), ad.reshape(ad.mul(x, x), (5, 1)))),
        lambda x: ad.sum(ad.transpose(ad.reshape(x, (5, 1)))),
    ],
)
def test_gradcheck_ops(f):
    x = np.random.default_rng(0).standard_normal(5)
    assert ad.gradcheck(f, x, eps=1e-6) < 1e-6


def test_gradcheck_eps_range():
    with pytest.raises(ConfigError):
        ad.gradcheck(ad.logsumexp, np.zeros(2), eps=1e-2)


def test_gradcheck_exact_forward(rng):
    pw = rng.standard_normal((3, 5, 5))
    init = rng.standard_normal(5)

    def f(x):
        return exact_forward(ChainPotentials(init, x))[0]

    assert ad.gradcheck(f, pw, eps=1e-6) < 1e-5


def test_exact_forward_adjoints_are_edge_marginals(rng):
    init, pw = rng.standard_normal(3), rng.standard_normal((2, 3, 3))
    tape = ad.Tape()
    pot = ChainPotentials(init, pw).on_tape(tape)
    log_z, _ = exact_forward(pot)
    tape.backward(log_z)
    enum = brute_force_chain(ChainPotentials(init, pw))
    for t in range(2):
        marg = np.zeros((3, 3))
        np.add.at(marg, (enum.paths[:, t], enum.paths[:, t + 1]), enum.posterior)
        np.testing.assert_allclose(pot.pairwise.grad[t], marg, atol=1e-12)
    node = np.bincount(enum.paths[:, 0], weights=enum.posterior, minlength=3)
    np.testing.assert_allclose(pot.init.grad, node, atol=1e-12)
