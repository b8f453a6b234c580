"""
Unit tests for the reverse-mode autodiff tape

Tests cover:
- Tape-free fallback of every op
- Gradients against central finite differences
- Broadcasting, indexing and structural ops
- ParameterStore binding and bookkeeping
"""
import numpy as np
import pytest

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent.parent))

from shared.types import SceneValidationError, TapeError
from shared.utils import autodiff as ad
from shared.utils.autodiff import ParameterStore, Tape, Var


def numeric_grad(fn, x, eps=1e-6):
    """Central finite differences of a scalar function of one array."""
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        plus, minus = x.copy(), x.copy()
        plus[idx] += eps
        minus[idx] -= eps
        grad[idx] = (fn(plus) - fn(minus)) / (2 * eps)
    return grad


def tape_grad(build, x):
    """Gradient of build(var) w.r.t. x computed by the tape."""
    tape = Tape()
    v = tape.variable(x, name="x")
    return tape.backward(build(v))["x"]


def check(build, x, rtol=1e-5, atol=1e-7):
    expected = numeric_grad(lambda arr: float(build(arr)), x)
    np.testing.assert_allclose(tape_grad(build, x), expected, rtol=rtol, atol=atol)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


class TestTapeFreeFallback:
    """Ops on plain arrays run numpy and record nothing."""

    def test_plain_inputs_return_arrays(self):
        """No Var involved means no Var out."""
        out = ad.mul(ad.add(np.ones(3), 2.0), np.arange(3.0))
        assert isinstance(out, np.ndarray)
        np.testing.assert_array_equal(out, [0.0, 3.0, 6.0])

    def test_value_of_plain_and_var(self):
        """value_of unwraps tape values and converts scalars."""
        tape = Tape()
        v = tape.variable([1.0, 2.0])
        np.testing.assert_array_equal(ad.value_of(v), [1.0, 2.0])
        assert ad.value_of(3).dtype == np.float64

    def test_unary_ops_match_numpy(self):
        """Fallback values equal the numpy functions."""
        x = np.array([-1.0, 0.5, 2.0])
        np.testing.assert_allclose(ad.relu(x), np.maximum(x, 0))
        np.testing.assert_allclose(ad.sigmoid(x), 1 / (1 + np.exp(-x)))
        np.testing.assert_allclose(ad.softplus(x), np.log1p(np.exp(x)))
        np.testing.assert_allclose(ad.cumsum_exclusive(x), [0.0, -1.0, -0.5])


class TestGradients:
    """Tape gradients agree with finite differences."""

    def test_elementwise_chain(self, rng):
        """Products, quotients and transcendental functions."""
        x = rng.uniform(0.5, 1.5, size=(3, 2))
        check(lambda v: ad.sum_(ad.div(ad.mul(ad.exp(v), ad.sin(v)), ad.add(ad.square(v), 1.0))), x)

    def test_log_sqrt_cos(self, rng):
        """Remaining unary ops."""
        x = rng.uniform(0.5, 2.0, size=4)
        check(lambda v: ad.sum_(ad.add(ad.log(v), ad.mul(ad.sqrt(v), ad.cos(v)))), x)

    def test_sigmoid_softplus(self, rng):
        """Stable sigmoid and softplus on both signs."""
        x = rng.normal(size=5) * 3
        check(lambda v: ad.sum_(ad.mul(ad.sigmoid(v), ad.softplus(v))), x)

    def test_matmul(self, rng):
        """Both operands of a 2-D product."""
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        check(lambda v: ad.sum_(ad.square(ad.matmul(v, b))), a)
        check(lambda v: ad.sum_(ad.square(ad.matmul(a, v))), b)

    def test_broadcast_add(self, rng):
        """A bias row broadcast over a batch sums its gradient."""
        x = rng.normal(size=(5, 3))
        bias = rng.normal(size=3)
        check(lambda v: ad.sum_(ad.square(ad.add(x, v))), bias)

    def test_cross_and_normalize(self, rng):
        """Vector ops used by rotation assembly."""
        a = rng.normal(size=(4, 3))
        b = rng.normal(size=(4, 3))
        check(lambda v: ad.sum_(ad.mul(ad.normalize(ad.cross(v, b)), b)), a)
        check(lambda v: ad.sum_(ad.mul(ad.normalize(ad.cross(a, v)), a)), b)

    def test_cumsum_exclusive(self, rng):
        """Transmittance-style exclusive prefix sums."""
        x = rng.normal(size=(2, 5))
        w = rng.normal(size=(2, 5))
        check(lambda v: ad.sum_(ad.mul(ad.exp(ad.neg(ad.cumsum_exclusive(v, axis=-1))), w)), x)

    def test_indexing_and_take_rows(self, rng):
        """Repeated rows accumulate gradient."""
        table = rng.normal(size=(4, 3))
        rows = np.array([0, 2, 2, 3])
        check(lambda v: ad.sum_(ad.square(ad.take_rows(v, rows))), table)

    def test_concat_stack_reshape(self, rng):
        """Structural ops route gradients to the right slices."""
        x = rng.normal(size=(2, 3))

        def build(v):
            joined = ad.concat([v, ad.square(v)], axis=-1)
            stacked = ad.stack([ad.reshape(joined, (12,)), ad.reshape(joined, (12,))], axis=0)
            return ad.sum_(ad.mul(stacked, np.arange(24.0).reshape(2, 12)))

        check(build, x)

    def test_mean_with_axis(self, rng):
        """Mean over one axis of a batch."""
        x = rng.normal(size=(3, 4))
        check(lambda v: ad.sum_(ad.square(ad.mean(v, axis=0))), x)

    def test_clamp_min_and_relu(self, rng):
        """Gradient only where the input exceeds the floor."""
        x = np.array([-1.0, 0.3, 2.0])
        grad = tape_grad(lambda v: ad.sum_(ad.add(ad.clamp_min(v, 0.5), ad.relu(v))), x)
        np.testing.assert_array_equal(grad, [0.0, 1.0, 2.0])

    def test_operator_overloads(self, rng):
        """Python operators build the same graph, with arrays on either side."""
        x = rng.uniform(1.0, 2.0, size=3)
        c = np.array([1.0, 2.0, 3.0])
        check(lambda v: ((c - v) * (v + 1.0) / (2.0 * v) - (-v)).sum(), x)


class TestTape:
    """Tape bookkeeping and misuse."""

    def test_unused_named_variable_gets_zero(self):
        """Named inputs that do not reach the loss report zeros."""
        tape = Tape()
        a = tape.variable(np.ones(2), name="a")
        tape.variable(np.ones(3), name="b")
        grads = tape.backward(ad.sum_(ad.square(a)))
        np.testing.assert_array_equal(grads["b"], np.zeros(3))
        np.testing.assert_array_equal(grads["a"], [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        """Backward needs a scalar."""
        tape = Tape()
        a = tape.variable(np.ones(2), name="a")
        with pytest.raises(TapeError):
            tape.backward(ad.square(a))

    def test_foreign_loss_rejected(self):
        """Losses from another tape are refused."""
        first, second = Tape(), Tape()
        loss = ad.sum_(first.variable(np.ones(2), name="a"))
        with pytest.raises(TapeError):
            second.backward(loss)

    def test_mixed_tapes_rejected(self):
        """Operands from two tapes cannot be combined."""
        a = Tape().variable(1.0)
        b = Tape().variable(2.0)
        with pytest.raises(TapeError):
            ad.add(a, b)

    def test_duplicate_names_rejected(self):
        tape = Tape()
        tape.variable(1.0, name="w")
        with pytest.raises(TapeError):
            tape.variable(2.0, name="w")

    def test_ops_recorded_in_order(self):
        """The op list reflects execution order."""
        tape = Tape()
        a = tape.variable(2.0, name="a")
        ad.sum_(ad.square(a))
        assert tape.ops == ["input", "square", "reduce_sum"]
        assert len(tape) == 3


class TestParameterStore:
    """Named parameter arrays."""

    def test_bind_marks_only_trainable(self):
        """Frozen entries stay plain arrays."""
        store = ParameterStore({"w": np.ones((2, 2)), "b": np.zeros(2)})
        bound = store.bind(Tape(), trainable=["w"])
        assert isinstance(bound["w"], Var)
        assert isinstance(bound["b"], np.ndarray)

    def test_bind_without_tape(self):
        """Inference binding records nothing."""
        store = ParameterStore({"w": np.ones(2)})
        assert isinstance(store.bind(None, ["w"])["w"], np.ndarray)

    def test_bind_unknown_name(self):
        store = ParameterStore({"w": np.ones(2)})
        with pytest.raises(SceneValidationError):
            store.bind(Tape(), ["missing"])

    def test_set_keeps_shape(self):
        """Shapes are fixed at construction."""
        store = ParameterStore({"w": np.ones(2)})
        store.set("w", [3.0, 4.0])
        np.testing.assert_array_equal(store["w"], [3.0, 4.0])
        with pytest.raises(SceneValidationError):
            store.set("w", np.ones(3))

    def test_copy_is_independent(self):
        store = ParameterStore({"w": np.ones(2)})
        clone = store.copy()
        clone.set("w", np.zeros(2))
        assert not store.equals(clone)
        assert store.equals(ParameterStore({"w": np.ones(2)}))

    def test_counts_and_finiteness(self):
        store = ParameterStore({"w": np.ones((2, 3)), "b": np.array([np.nan])})
        assert store.num_parameters() == 7
        assert store.num_parameters(["w"]) == 6
        assert not store.all_finite()
        assert set(store.zeros_like()) == {"w", "b"}
        assert store.subset(["w"]).names == ["w"]
