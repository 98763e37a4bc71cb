import math

import numpy as np
import pytest

from gcrpnet.nn import Parameter
from gcrpnet.optim import AdamW, AdamWConfig, NumericalError, adamw_step


def scalar_adamw(p, grads, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p = p - lr * wd * p - lr * mhat / (math.sqrt(vhat) + eps)
    return p


@pytest.mark.parametrize("grads", [[0.5], [0.5, 0.5, 0.5], [2.0, -1.0, 0.25, 3.0]])
def test_matches_scalar_reference(grads):
    cfg = AdamWConfig(lr=1e-2)
    p = np.array([0.7])
    state = None
    for g in grads:
        p, state = adamw_step(p, np.array([g]), state, cfg)
    assert p[0] == pytest.approx(scalar_adamw(0.7, grads, 1e-2), rel=1e-12)


def test_first_step_moves_by_lr():
    cfg = AdamWConfig(lr=1e-3, weight_decay=0.0)
    p, _ = adamw_step(np.array([1.0]), np.array([4.0]), None, cfg)
    assert p[0] == pytest.approx(1.0 - 1e-3, rel=1e-9)


def test_zero_grad_zero_decay_is_noop():
    cfg = AdamWConfig(lr=0.1, weight_decay=0.0)
    p = np.random.default_rng(0).standard_normal(5)
    state = None
    q = p
    for _ in range(3):
        q, state = adamw_step(q, np.zeros(5), state, cfg)
    assert np.array_equal(q, p)


def test_weight_decay_alone_shrinks():
    cfg = AdamWConfig(lr=0.1, weight_decay=0.5)
    p = np.array([1.0, -2.0, 0.3])
    state = None
    prev = np.abs(p)
    for _ in range(10):
        p, state = adamw_step(p, np.zeros(3), state, cfg)
        assert np.all(np.abs(p) < prev)
        prev = np.abs(p)


def test_nan_gradient_aborts_with_name_and_leaves_params():
    a = Parameter(np.ones(2))
    b = Parameter(np.ones(2))
    opt = AdamW([("layer.a", a), ("layer.b", b)], AdamWConfig(lr=0.1))
    a.grad = np.ones(2)
    b.grad = np.array([1.0, np.nan])
    with pytest.raises(NumericalError, match="layer.b"):
        opt.step()
    assert np.array_equal(a.data, np.ones(2))


def test_config_validation():
    with pytest.raises(ValueError):
        AdamWConfig(lr=0)
    with pytest.raises(ValueError):
        AdamWConfig(beta1=1.0)


def test_state_arrays_round_trip():
    p = Parameter(np.ones(3))
    opt = AdamW([("w", p)], AdamWConfig(lr=0.1))
    p.grad = np.array([1.0, 2.0, 3.0])
    opt.step()
    other = AdamW([("w", Parameter(np.ones(3)))], AdamWConfig(lr=0.1))
    other.load_state_arrays(opt.state_arrays())
    assert other.step_count == 1
    assert np.array_equal(other.state["w"].m, opt.state["w"].m)
