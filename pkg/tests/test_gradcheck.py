import numpy as np
import pytest

from sscrs.core.errors import NumericalCheckError, UsageError
from sscrs.core.gradcheck import (THRESHOLD, CheckResult, GradientSuite, add_gradient_check, check_gradients,
                                  get_gradient_checks, relative_error)
from sscrs.core.tensor import Tensor, default_dtype, make_result, tsum

FAST_CHECKS = ["add", "matmul", "softmax", "conv3d", "max_pool3d", "scatter_mean", "sparse_conv_submanifold",
               "bev_project_sparse", "lovasz_softmax", "arf"]


def wrong_square(x: Tensor) -> Tensor:
    """x^2 with a backward that forgets the factor 2."""
    return make_result("wrong_square", x.data * x.data, [x], lambda g: [g * x.data])


class TestCheckGradients:
    """Finite differences against backpropagation."""

    def test_detects_wrong_backward(self):
        with default_dtype(np.float64):
            x = Tensor(np.array([0.5, -1.0, 2.0]))
            result = check_gradients("wrong_square", {"x": x}, lambda: tsum(wrong_square(x)))
        assert not result.passed
        assert result.max_rel_error == pytest.approx(0.5, rel=1e-3)

    def test_accepts_correct_backward(self):
        with default_dtype(np.float64):
            x = Tensor(np.array([0.5, -1.0, 2.0]))
            result = check_gradients("square", {"x": x}, lambda: tsum(x * x))
        assert result.passed
        assert result.num_entries == 3

    def test_sampling_entries(self, rng):
        with default_dtype(np.float64):
            x = Tensor(rng.standard_normal(20))
            result = check_gradients("square", {"x": x}, lambda: tsum(x * x), max_entries=4, rng=rng)
        assert result.num_entries == 4

    def test_relative_error(self):
        assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
        assert relative_error(np.array([0.0]), np.array([0.0])) == 0.0
        assert not CheckResult("x", float("nan"), 1).passed
        assert CheckResult("x", THRESHOLD, 1).passed


class TestRegistry:
    """Registered operations."""

    def test_covers_operations(self):
        names = get_gradient_checks().keys()
        for name in ["conv3d", "conv2d_transposed", "sparse_conv_strided", "sgfe_downscale", "arf_concat",
                     "bev_loss", "semantic_stage_loss", "completion_stage_loss", "total_loss", "model"]:
            assert name in names

    def test_duplicate_rejected(self):
        with pytest.raises(ValueError):
            add_gradient_check("add", get_gradient_checks()["add"])

    def test_unknown_scale_or_name(self):
        with pytest.raises(UsageError):
            GradientSuite(scale="huge")
        with pytest.raises(UsageError):
            GradientSuite(names=["fft"])


class TestSuite:
    """Running checks at 64-bit precision."""

    def test_fast_subset_passes(self):
        results = GradientSuite(names=FAST_CHECKS).run()
        assert [r.name for r in results] == FAST_CHECKS
        assert all(r.passed for r in results)

    def test_inputs_are_reproducible(self):
        a = GradientSuite(names=["conv2d"], seed=4).run_check("conv2d")
        b = GradientSuite(names=["conv2d"], seed=4).run_check("conv2d")
        assert a.max_rel_error == b.max_rel_error

    def test_run_resets_stop_flag(self):
        suite = GradientSuite(names=["add", "sub"])
        suite.stop_execution()
        assert suite.is_stopped
        # run() resets the flag
        assert len(suite.run()) == 2

    def test_failure_raises(self, monkeypatch):
        monkeypatch.setattr(GradientSuite, "run_check", lambda self, name: CheckResult(name, 1.0, 1))
        with pytest.raises(NumericalCheckError, match="add"):
            GradientSuite(names=["add"]).run()
        assert not GradientSuite(names=["add"]).run(fail=False)[0].passed


@pytest.mark.slow
def test_full_suite():
    """Every registered operation, the full model included."""
    results = GradientSuite().run(fail=False)
    failed = [str(r) for r in results if not r.passed]
    assert failed == []
