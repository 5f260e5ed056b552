import logging

import numpy as np
import pytest

from structalign.diffmath import (
    GradientTape,
    Tensor,
    backward,
    concatenate,
    cosine_sim,
    grad_check,
    kl_divergence,
    l2_normalize,
    log_softmax,
    softmax,
    stack,
)
from structalign.exceptions import (
    DisconnectedParameterError,
    NonFiniteFunctionValueError,
    NonPositiveTemperatureError,
    NotADistributionError,
    NotScalarError,
    ShapeMismatchError,
    ZeroVectorError,
)


class TestNormalizeAndCosine:
    def test_normalize_three_four(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]).value, [0.6, 0.8], atol=1e-12)

    def test_normalize_unit_vector_unchanged(self):
        np.testing.assert_allclose(l2_normalize([1.0, 0.0, 0.0]).value, [1.0, 0.0, 0.0])

    def test_normalize_zero_vector_raises(self):
        with pytest.raises(ZeroVectorError) as excinfo:
            l2_normalize([0.0, 0.0])
        assert excinfo.value.norm == 0.0

    def test_normalized_norm_is_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            v = rng.standard_normal(7) * rng.uniform(1e-3, 1e3)
            assert abs(np.linalg.norm(l2_normalize(v).value) - 1.0) < 1e-9

    @pytest.mark.parametrize(
        "a,b,expected",
        [
            ([1.0, 0.0], [1.0, 0.0], 1.0),
            ([1.0, 0.0], [0.0, 1.0], 0.0),
            ([1.0, 1.0], [1.0, 0.0], 0.70710678),
        ],
    )
    def test_cosine_examples(self, a, b, expected):
        assert cosine_sim(a, b).item() == pytest.approx(expected, abs=1e-8)

    def test_cosine_symmetric_and_bounded(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            a, b = rng.standard_normal((2, 5))
            ab, ba = cosine_sim(a, b).item(), cosine_sim(b, a).item()
            assert ab == pytest.approx(ba, abs=1e-15)
            assert -1 - 1e-9 <= ab <= 1 + 1e-9

    def test_cosine_zero_input_raises(self):
        with pytest.raises(ZeroVectorError):
            cosine_sim([0.0, 0.0], [1.0, 0.0])

    def test_cosine_shape_mismatch(self):
        with pytest.raises(ShapeMismatchError):
            cosine_sim([1.0, 0.0], [1.0, 0.0, 0.0])


class TestSoftmax:
    def test_constant_input_is_uniform(self):
        np.testing.assert_allclose(softmax([2.5, 2.5, 2.5], temperature=0.3).value, [1 / 3] * 3)

    def test_two_entries(self):
        np.testing.assert_allclose(softmax([2.0, 1.0]).value, [0.7310586, 0.2689414], atol=1e-7)

    def test_small_temperature_sharpens(self):
        p = softmax([2.0, 1.0], temperature=1e-3).value
        assert p[0] > 1 - 1e-12

    def test_sums_to_one_over_temperature_range(self):
        rng = np.random.default_rng(2)
        for tau in (1e-3, 1e-1, 1.0, 10.0, 1e3):
            p = softmax(rng.uniform(-50, 50, 9), temperature=tau).value
            assert abs(p.sum() - 1.0) < 1e-9
            assert np.all(p >= 0)

    def test_shift_invariant(self):
        v = np.array([0.3, -1.2, 2.0])
        np.testing.assert_allclose(softmax(v).value, softmax(v + 17.0).value, atol=1e-15)

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_non_positive_temperature(self, tau):
        with pytest.raises(NonPositiveTemperatureError):
            softmax([1.0, 2.0], temperature=tau)
        with pytest.raises(NonPositiveTemperatureError):
            log_softmax([1.0, 2.0], temperature=tau)

    def test_mask_zeroes_entries_exactly(self):
        p = softmax([2.0, 1.0, 0.0], mask=np.array([True, True, False])).value
        assert p[2] == 0.0
        np.testing.assert_allclose(p[:2], [0.7310586, 0.2689414], atol=1e-7)


class TestKlDivergence:
    def test_identical_is_zero(self):
        assert kl_divergence([0.5, 0.5], [0.5, 0.5]) == 0.0

    def test_point_mass_against_uniform(self):
        assert kl_divergence([1.0, 0.0], [0.5, 0.5]) == pytest.approx(0.693147, abs=1e-6)

    def test_direct_formula(self):
        assert kl_divergence([0.5, 0.5], [0.9, 0.1]) == pytest.approx(0.5108, abs=1e-4)

    def test_gibbs_inequality(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            p, q = rng.dirichlet(np.ones(6), size=2)
            assert kl_divergence(p, q) >= 0.0

    def test_rejects_non_distribution(self):
        with pytest.raises(NotADistributionError):
            kl_divergence([0.5, 0.6], [0.5, 0.5])
        with pytest.raises(NotADistributionError):
            kl_divergence([0.5, 0.5], [0.2, 0.2])


class TestBackward:
    def test_sum_gradient_is_ones(self):
        x = Tensor(np.array([1.0, -2.0, 3.0]))
        with GradientTape() as tape:
            tape.watch({"x": x})
            loss = x.sum()
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads["x"], [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_squared_norm_gradient(self):
        x = Tensor(np.array([1.0, 2.0]))
        with GradientTape() as tape:
            tape.watch({"x": x})
            loss = (x * x).sum()
        np.testing.assert_allclose(backward(loss, tape)["x"], [2.0, 4.0])

    def test_disconnected_parameter_gets_zero_and_warning(self, caplog):
        x = Tensor(np.array([1.0, 2.0]))
        y = Tensor(np.array([3.0]))
        with GradientTape() as tape:
            tape.watch({"x": x, "y": y})
            loss = y.sum() * 2.0
        with caplog.at_level(logging.WARNING):
            grads = backward(loss, tape)
        np.testing.assert_array_equal(grads["x"], [0.0, 0.0])
        assert "Disconnected parameter x" in caplog.text

    def test_disconnected_parameter_strict(self):
        x = Tensor(np.array([1.0]))
        y = Tensor(np.array([1.0]))
        with GradientTape() as tape:
            tape.watch({"x": x, "y": y})
            loss = y.sum()
        with pytest.raises(DisconnectedParameterError):
            backward(loss, tape, strict=True)

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3))
        with GradientTape() as tape:
            tape.watch({"x": x})
            out = x * 2.0
        with pytest.raises(NotScalarError):
            backward(out, tape)

    def test_gradient_shapes_match_parameters(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.standard_normal((3, 5)))
        b = Tensor(rng.standard_normal(5))
        x = rng.standard_normal((2, 4, 3))
        with GradientTape() as tape:
            tape.watch({"w": w, "b": b})
            loss = ((x @ w + b).tanh() ** 2).mean()
        grads = backward(loss, tape)
        assert grads["w"].shape == w.shape
        assert grads["b"].shape == b.shape

    def test_deterministic(self):
        rng = np.random.default_rng(5)
        point = rng.standard_normal((4, 4))

        def run():
            w = Tensor(point.copy())
            with GradientTape() as tape:
                tape.watch({"w": w})
                loss = log_softmax(w @ w.T, temperature=0.5).sum()
            return backward(loss, tape)["w"]

        np.testing.assert_array_equal(run(), run())

    def test_nothing_recorded_without_tape(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with GradientTape() as tape:
            pass
        _ = (x * 3.0).sum()
        assert len(tape) == 0

    def test_numpy_left_operand_dispatches_to_tensor(self):
        x = Tensor(np.array([1.0, 2.0]))
        with GradientTape() as tape:
            tape.watch({"x": x})
            loss = (np.array([3.0, 4.0]) * x).sum()
        np.testing.assert_allclose(backward(loss, tape)["x"], [3.0, 4.0])


class TestGradCheck:
    def test_quadratic(self):
        point = {"x": np.random.default_rng(6).standard_normal(5)}
        assert grad_check(lambda p: (p["x"] * p["x"]).sum(), point) < 1e-6

    def test_composite_operations(self):
        rng = np.random.default_rng(7)
        a = rng.standard_normal((3, 4))
        point = {"w": rng.standard_normal((4, 2)), "v": rng.standard_normal((3, 2))}

        def f(p):
            z = (a @ p["w"]).tanh()
            pieces = concatenate([z, p["v"]], axis=1)
            stacked = stack([pieces, pieces * 2.0], axis=0)
            return (softmax(stacked, temperature=0.7) * stacked).sum() + l2_normalize(p["v"]).max(axis=1).sum()

        assert grad_check(f, point) < 1e-5

    def test_non_finite_value(self):
        with pytest.raises(NonFiniteFunctionValueError):
            grad_check(lambda p: (p["x"].log()).sum(), {"x": np.array([-1.0])})

    def test_step_range(self):
        with pytest.raises(ValueError):
            grad_check(lambda p: p["x"].sum(), {"x": np.ones(1)}, step=1e-2)
