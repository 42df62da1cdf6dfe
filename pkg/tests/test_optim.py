"""SGD update rule and the polynomial schedule."""

import numpy as np
import pytest

from fuseseg.optim import SGD, poly_lr
from fuseseg.tensor import Tensor


def make_param(value):
    p = Tensor(np.array([value], dtype=np.float64), requires_grad=True)
    return p


class TestSGD:
    def test_plain_gradient_step(self):
        p = make_param(1.0)
        opt = SGD([("p", p)], momentum=0.0, weight_decay=0.0)
        p.grad = np.array([0.5])
        opt.step(0.1)
        assert np.allclose(p.data, 1.0 - 0.1 * 0.5)

    def test_momentum_two_steps(self):
        # constant grad g: displacement lr*g after step 1, lr*g*(1+1.9) total
        p = make_param(0.0)
        opt = SGD([("p", p)], momentum=0.9, weight_decay=0.0)
        g = 2.0
        p.grad = np.array([g])
        opt.step(0.1)
        assert np.allclose(p.data, -0.1 * g)
        p.grad = np.array([g])
        opt.step(0.1)
        assert np.allclose(p.data, -0.1 * g * (1 + 1.9))

    def test_decay_shrinks_toward_zero(self):
        p = make_param(4.0)
        opt = SGD([("p", p)], momentum=0.0, weight_decay=0.01)
        for _ in range(5):
            p.grad = np.array([0.0])
            opt.step(1.0)
        assert 0 < p.data[0] < 4.0

    def test_none_grad_skipped(self):
        p = make_param(1.0)
        opt = SGD([("p", p)])
        opt.step(0.1)
        assert p.data[0] == 1.0

    def test_state_round_trip(self):
        p = make_param(1.0)
        opt = SGD([("p", p)], momentum=0.9)
        p.grad = np.array([1.0])
        opt.step(0.1)
        state = {k: v.copy() for k, v in opt.state_dict().items()}
        opt2 = SGD([("p", p)], momentum=0.9)
        opt2.load_state_dict(state)
        assert np.array_equal(opt2.state_dict()["p"], state["p"])


class TestPolyLr:
    def test_start_is_base(self):
        assert poly_lr(0.01, 0, 100) == 0.01

    def test_end_is_zero(self):
        assert poly_lr(0.01, 100, 100) == 0.0

    def test_midpoint_value(self):
        # 0.01 * 0.5 ** 0.9
        assert abs(poly_lr(0.01, 50, 100, 0.9) - 0.005358867) < 1e-8

    def test_total_zero_rejected(self):
        with pytest.raises(ValueError):
            poly_lr(0.01, 0, 0)

    def test_monotone_decreasing(self):
        values = [poly_lr(0.01, i, 10) for i in range(11)]
        assert all(a > b for a, b in zip(values, values[1:]))
