import numpy as np
import pytest

from densecount.optim import Adam, zero_grads
from densecount.tensor import Tensor


def test_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    before = p.data.copy()
    Adam(learning_rate=0.1).step([p], grads=[np.zeros(2)])
    np.testing.assert_array_equal(p.data, before)


def test_first_step_matches_closed_form():
    # At t=1 bias correction cancels: update = lr * g / (|g| + eps).
    lr, eps = 1e-3, 1e-8
    g = np.array([0.3, -4.0, 1e-5])
    p = Tensor(np.zeros(3), requires_grad=True)
    Adam(learning_rate=lr, eps=eps).step([p], grads=[g])
    expected = -lr * g / (np.abs(g) + eps)
    np.testing.assert_allclose(p.data, expected, rtol=1e-12)


def test_updates_are_deterministic():
    outs = []
    for _ in range(2):
        rng = np.random.default_rng(3)
        p = Tensor(rng.standard_normal((4, 4)), requires_grad=True)
        opt = Adam(learning_rate=0.01)
        for _ in range(25):
            opt.step([p], grads=[rng.standard_normal((4, 4))])
        outs.append(p.data.copy())
    np.testing.assert_array_equal(outs[0], outs[1])


def test_step_counter_and_slot_shapes():
    p = Tensor(np.zeros((2, 3)), requires_grad=True)
    q = Tensor(np.zeros(5), requires_grad=True)
    opt = Adam()
    opt.step([p, q], grads=[np.ones((2, 3)), None])
    opt.step([p, q], grads=[np.ones((2, 3)), np.ones(5)])
    assert opt.step_count(p) == 2
    assert opt.step_count(q) == 1
    m, v, _ = opt._slots[p]
    assert m.shape == p.data.shape and v.shape == p.data.shape


def test_grad_shape_mismatch_raises():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError, match="shape"):
        Adam().step([p], grads=[np.ones(4)])


def test_nonpositive_learning_rate_raises():
    with pytest.raises(ValueError, match="learning rate"):
        Adam(learning_rate=0.0)


def test_reads_grads_from_tensors_and_zero_grads_clears():
    p = Tensor(np.array(2.0), requires_grad=True)
    loss = p * p
    loss.backward()
    assert p.grad == 4.0
    Adam(learning_rate=0.5).step([p])
    assert p.data != 2.0
    zero_grads([p])
    assert p.grad is None


def test_descends_a_quadratic():
    p = Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam(learning_rate=0.2)
    for _ in range(400):
        zero_grads([p])
        ((p * p).sum()).backward()
        opt.step([p])
    np.testing.assert_allclose(p.data, np.zeros(2), atol=1e-3)
