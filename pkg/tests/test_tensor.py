import threading

import numpy as np
import pytest
from numpy.testing import assert_allclose

from sscrs.core.tensor import (Tape, Tensor, backward, concat, current_tape, default_dtype, exp,
                               get_default_dtype, log, no_grad)


class TestTape:
    """Recording and reverse accumulation."""

    def test_gradients_of_reused_tensor_accumulate(self):
        x = Tensor(np.array([1.0, 2.0, -3.0]), requires_grad=True)
        with Tape() as tape:
            y = (x * x + x).sum()
        backward(tape, y)
        assert_allclose(x.grad, 2 * x.data + 1)

    def test_broadcasting_is_reduced(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.arange(4.0), requires_grad=True)
        with Tape() as tape:
            y = (a * b).sum()
        backward(tape, y)
        assert b.grad.shape == (4,)
        assert_allclose(b.grad, [3.0, 3.0, 3.0, 3.0])
        assert_allclose(a.grad, np.broadcast_to(np.arange(4.0), (3, 4)))

    def test_matmul_and_indexing(self):
        a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        b = Tensor(np.ones((3, 2)), requires_grad=True)
        with Tape() as tape:
            c = (a @ b)[np.array([0, 0, 1])]
            y = c.sum()
        backward(tape, y)
        assert_allclose(a.grad, [[4.0, 4.0, 4.0], [2.0, 2.0, 2.0]])
        assert_allclose(b.grad, np.tile(np.array([[3.0], [6.0], [9.0]]), (1, 2)))

    def test_concat_exp_log(self):
        a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        b = Tensor(np.array([0.5]), requires_grad=True)
        with Tape() as tape:
            y = log(exp(concat([a, b]))).sum()
        backward(tape, y)
        assert_allclose(a.grad, [1.0, 1.0])
        assert_allclose(b.grad, [1.0])

    def test_parameters_without_contribution_get_zeros(self):
        used = Tensor(np.ones(2), requires_grad=True)
        unused = Tensor(np.ones(3), requires_grad=True)
        with Tape() as tape:
            y = (used * 2.0).sum()
        grads = backward(tape, y, {"used": used, "unused": unused})
        assert_allclose(grads["used"], [2.0, 2.0])
        assert_allclose(grads["unused"], np.zeros(3))

    def test_mean_over_axes(self):
        x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
        with Tape() as tape:
            y = x.mean(axis=(1, 2)).sum()
        backward(tape, y)
        assert_allclose(x.grad, np.full((2, 3, 4), 1.0 / 12))

    def test_loss_must_be_scalar(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            y = x * 2.0
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_no_grad_suspends_recording(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with Tape() as tape:
            with no_grad():
                assert current_tape() is None
                y = x * 2.0
            assert current_tape() is tape
        assert len(tape) == 0
        assert not y.requires_grad

    def test_tapes_are_per_thread(self):
        seen = []
        with Tape():
            t = threading.Thread(target=lambda: seen.append(current_tape()))
            t.start()
            t.join()
        assert seen == [None]


class TestDefaultDtype:
    """Switching the precision of new tensors."""

    def test_context_restores(self):
        assert get_default_dtype() == np.float32
        with default_dtype(np.float64):
            assert Tensor([1, 2]).dtype == np.float64
        assert Tensor([1, 2]).dtype == np.float32

    def test_floating_data_keeps_its_dtype(self):
        assert Tensor(np.zeros(2, dtype=np.float64)).dtype == np.float64
