import numpy as np
import pytest

from ntg import autograd as ag
from ntg.errors import NumericError, ShapeError


def numeric_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f(x)
        flat[i] = keep - h
        dn = f(x)
        flat[i] = keep
        gf[i] = (up - dn) / (2 * h)
    return g


def check_primitive(build, shape, seed=0, tol=2e-6):
    """Finite-difference check of one op: build(tape, leaf) -> scalar Var."""
    rng = np.random.default_rng(seed)
    x0 = rng.normal(size=shape)
    tape = ag.Tape()
    leaf = tape.leaf(x0.copy(), "x")
    loss = build(tape, leaf)
    grads = tape.backward(loss)
    analytic = grads[leaf]

    def value(x):
        t = ag.Tape()
        return float(build(t, t.leaf(x, "x")).value)

    numeric = numeric_grad(value, x0.copy())
    denom = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    assert np.abs(analytic - numeric).max() / denom < tol


def weighted_sum(x, rng):
    """Random linear functional to make scalar losses from array ops."""
    w = rng.normal(size=x.value.shape)
    return ag.asum(ag.mul_const(x, w))


class TestPrimitiveGradients:
    @pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0)])
    def test_conv2d_wrt_input(self, stride, pad):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)

        def build(tape, x):
            out = ag.conv2d(x, tape.const(w), tape.const(b), stride, pad)
            return weighted_sum(out, np.random.default_rng(5))

        check_primitive(build, (2, 6, 6), seed=2)

    def test_conv2d_wrt_kernel_and_bias(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(2, 5, 5))
        w0 = rng.normal(size=(3, 2, 3, 3))

        def build_w(tape, w):
            out = ag.conv2d(tape.const(x0), w, tape.const(np.zeros(3)), 1, 1)
            return weighted_sum(out, np.random.default_rng(6))

        check_primitive(build_w, (3, 2, 3, 3), seed=4)

        def build_b(tape, b):
            out = ag.conv2d(tape.const(x0), tape.const(w0), b, 1, 1)
            return weighted_sum(out, np.random.default_rng(7))

        check_primitive(build_b, (3,), seed=5)

    @pytest.mark.parametrize(
        "op",
        [
            ag.relu,
            lambda v: ag.leaky_relu(v, 0.2),
            ag.avg_pool2,
            ag.upsample_nearest2,
            ag.absval,
            ag.sigmoid,
        ],
        ids=["relu", "leaky", "pool", "upsample", "abs", "sigmoid"],
    )
    def test_elementwise_and_resampling(self, op):
        def build(tape, x):
            return weighted_sum(op(x), np.random.default_rng(8))

        # offset away from 0 so the kink never sits within the probe step
        rng = np.random.default_rng(9)
        x0 = rng.normal(size=(2, 6, 6)) + 0.05

        def value(x):
            t = ag.Tape()
            return float(build(t, t.leaf(x, "x")).value)

        tape = ag.Tape()
        leaf = tape.leaf(x0.copy(), "x")
        grads = tape.backward(build(tape, leaf))
        numeric = numeric_grad(value, x0.copy())
        denom = max(np.abs(grads[leaf]).max(), 1e-8)
        assert np.abs(grads[leaf] - numeric).max() / denom < 2e-6

    def test_pool_odd_dims(self):
        def build(tape, x):
            return weighted_sum(ag.avg_pool2(x), np.random.default_rng(10))

        check_primitive(build, (1, 5, 7), seed=11)

    def test_gram(self):
        def build(tape, x):
            return weighted_sum(ag.gram(x), np.random.default_rng(12))

        check_primitive(build, (3, 4, 4), seed=13)

    def test_log_guarded(self):
        def build(tape, x):
            return ag.asum(ag.log_guarded(x))

        rng = np.random.default_rng(14)
        x0 = rng.uniform(0.1, 2.0, size=(3, 3))
        tape = ag.Tape()
        leaf = tape.leaf(x0.copy(), "x")
        grads = tape.backward(build(tape, leaf))
        assert np.allclose(grads[leaf], 1.0 / x0, rtol=1e-12)

    def test_log_guard_subgradient_zero(self):
        tape = ag.Tape()
        leaf = tape.leaf(np.array([1e-15, 0.5]), "x")
        loss = ag.asum(ag.log_guarded(leaf))
        grads = tape.backward(loss)
        assert grads[leaf][0] == 0.0
        assert grads[leaf][1] == pytest.approx(2.0)

    def test_concat_and_mul(self):
        rng = np.random.default_rng(15)
        b0 = rng.normal(size=(2, 4, 4))

        def build(tape, x):
            cat = ag.concat(x, tape.const(b0))
            return ag.sumsq(cat)

        check_primitive(build, (3, 4, 4), seed=16)

    def test_sumsq_and_mean(self):
        tape = ag.Tape()
        x = tape.leaf(np.array([1.0, -2.0, 3.0]), "x")
        grads = tape.backward(ag.sumsq(x))
        assert np.allclose(grads[x], [2.0, -4.0, 6.0])
        tape = ag.Tape()
        x = tape.leaf(np.array([1.0, -2.0, 3.0]), "x")
        grads = tape.backward(ag.amean(x))
        assert np.allclose(grads[x], 1.0 / 3.0)


class TestTapeContract:
    def test_sum_loss_gradient_is_ones(self):
        tape = ag.Tape()
        x = tape.leaf(np.random.default_rng(0).normal(size=(4, 5)), "x")
        grads = tape.backward(ag.asum(x))
        assert np.array_equal(grads[x], np.ones((4, 5)))

    def test_quadratic_gradient(self):
        tape = ag.Tape()
        v = np.random.default_rng(1).normal(size=(6,))
        x = tape.leaf(v, "x")
        grads = tape.backward(ag.sumsq(x))
        assert np.allclose(grads[x], 2 * v, rtol=1e-14)

    def test_second_backward_rejected(self):
        tape = ag.Tape()
        x = tape.leaf(np.ones(3), "x")
        loss = ag.asum(x)
        tape.backward(loss)
        with pytest.raises(RuntimeError):
            tape.backward(loss)

    def test_ops_on_consumed_tape_rejected(self):
        tape = ag.Tape()
        x = tape.leaf(np.ones(3), "x")
        tape.backward(ag.asum(x))
        with pytest.raises(RuntimeError):
            ag.relu(x)

    def test_non_scalar_loss_rejected(self):
        tape = ag.Tape()
        x = tape.leaf(np.ones(3), "x")
        with pytest.raises(ShapeError):
            tape.backward(ag.relu(x))

    def test_gradient_of_sum_equals_sum_of_gradients(self):
        rng = np.random.default_rng(2)
        v = rng.normal(size=(3, 4, 4))

        def grad_of(fn):
            tape = ag.Tape()
            x = tape.leaf(v, "x")
            return tape.backward(fn(x))[x]

        f1 = lambda x: ag.sumsq(ag.relu(x))
        f2 = lambda x: ag.amean(ag.absval(x))
        combined = lambda x: ag.add(ag.sumsq(ag.relu(x)), ag.amean(ag.absval(x)))
        assert np.abs(grad_of(combined) - (grad_of(f1) + grad_of(f2))).max() < 1e-12

    def test_identical_tape_identical_gradients(self):
        v = np.random.default_rng(3).normal(size=(2, 8, 8))
        w = np.random.default_rng(4).normal(size=(3, 2, 3, 3))

        def run():
            tape = ag.Tape()
            x = tape.leaf(v, "x")
            out = ag.relu(ag.conv2d(x, tape.const(w), tape.const(np.zeros(3)), 1, 1))
            return tape.backward(ag.sumsq(out))[x]

        assert np.array_equal(run(), run())

    def test_nonfinite_loss_rejected(self):
        tape = ag.Tape()
        x = tape.leaf(np.array([1e308, 1e308]), "x")
        with pytest.raises(NumericError):
            tape.backward(ag.sumsq(x))

    def test_grads_skipped_for_const(self):
        tape = ag.Tape()
        x = tape.const(np.ones(3))
        grads = tape.backward(ag.asum(x))
        assert grads == {}


class TestFiniteDiffCheck:
    def test_simple_quadratic(self):
        def f(params, need_grad):
            p = params["p"]
            value = float((p * p).sum())
            return value, ({"p": 2 * p} if need_grad else None)

        err, per = ag.finite_diff_check(f, {"p": np.array([3.0, -1.0])}, h=1e-5)
        assert err < 1e-8
        assert per["p"] < 1e-8

    def test_constant_function_zero_error(self):
        def f(params, need_grad):
            return 1.0, ({"p": np.zeros(3)} if need_grad else None)

        err, _ = ag.finite_diff_check(f, {"p": np.zeros(3)}, h=1e-5)
        assert err == 0.0

    def test_wrong_gradient_detected(self):
        def f(params, need_grad):
            p = params["p"]
            return float((p * p).sum()), ({"p": 3 * p} if need_grad else None)

        err, _ = ag.finite_diff_check(f, {"p": np.array([2.0])}, h=1e-5)
        assert err > 0.2

    def test_subset_sampling_large_net(self):
        rng = np.random.default_rng(0)
        p0 = rng.normal(size=(40, 40))

        def f(params, need_grad):
            p = params["p"]
            return float((p**3).sum()), ({"p": 3 * p * p} if need_grad else None)

        err, _ = ag.finite_diff_check(f, {"p": p0}, h=1e-5, sample=200)
        assert err < 1e-6

    def test_nonpositive_h_rejected(self):
        with pytest.raises(ValueError):
            ag.finite_diff_check(lambda p, g: (0.0, {}), {}, h=0)
