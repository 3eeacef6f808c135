"""Per-operation gradient checks against central finite differences."""

import numpy as np
import pytest

from crossconst import autodiff as ad
from crossconst.autodiff import Tensor


def fd_grad(fn, arrays, index, step=1e-6):
    """Central-difference gradient of scalar fn w.r.t. arrays[index]."""
    base = [a.copy() for a in arrays]
    grad = np.zeros_like(base[index])
    flat = grad.reshape(-1)
    for i in range(flat.size):
        plus = [a.copy() for a in base]
        minus = [a.copy() for a in base]
        plus[index].reshape(-1)[i] += step
        minus[index].reshape(-1)[i] -= step
        flat[i] = (fn(plus) - fn(minus)) / (2 * step)
    return grad


def check_op(build, *shapes, seed=0, step=1e-6, tol=1e-6):
    """build(tensors) -> scalar Tensor; compares backward to central FD."""
    rng = np.random.default_rng(seed)
    arrays = [rng.standard_normal(s) for s in shapes]

    def value(arrs):
        return float(build([Tensor(a) for a in arrs]).data)

    tensors = [Tensor(a.copy()) for a in arrays]
    loss = build(tensors)
    loss.backward()
    for i, t in enumerate(tensors):
        numeric = fd_grad(value, arrays, i, step=step)
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        np.testing.assert_allclose(analytic, numeric, atol=tol, rtol=tol)


class TestElementwiseOps:
    def test_add_broadcast(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(ad.add(t[0], t[1]), t[0])),
                 (3, 4), (4,))

    def test_mul_broadcast(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(t[0], t[1])), (2, 3, 4), (3, 1))

    def test_div(self):
        rng = np.random.default_rng(1)
        a, b = rng.standard_normal((3, 3)), rng.uniform(0.5, 2.0, (3, 3))

        def value(arrs):
            return float(ad.tensor_sum(ad.div(Tensor(arrs[0]), Tensor(arrs[1]))).data)

        ta, tb = Tensor(a.copy()), Tensor(b.copy())
        ad.tensor_sum(ad.div(ta, tb)).backward()
        np.testing.assert_allclose(ta.grad, fd_grad(value, [a, b], 0), atol=1e-6)
        np.testing.assert_allclose(tb.grad, fd_grad(value, [a, b], 1), atol=1e-6)

    def test_exp_log_chain(self):
        check_op(lambda t: ad.tensor_sum(ad.log(ad.exp(t[0]))), (4, 2))

    def test_relu(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(ad.relu(t[0]), t[0])), (5, 5),
                 seed=3)

    def test_gelu(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(ad.gelu(t[0]), t[1])),
                 (4, 6), (4, 6), seed=4)


class TestMatmulAndShapes:
    def test_matmul(self):
        check_op(lambda t: ad.tensor_sum(ad.matmul(t[0], t[1])), (3, 4), (4, 5))

    def test_batched_matmul(self):
        check_op(lambda t: ad.tensor_sum(ad.matmul(t[0], t[1])),
                 (2, 3, 4, 5), (2, 3, 5, 2))

    def test_linear_with_bias(self):
        check_op(lambda t: ad.tensor_sum(ad.linear(t[0], t[1], t[2])),
                 (2, 3, 4), (4, 5), (5,))

    def test_reshape_transpose(self):
        check_op(lambda t: ad.tensor_sum(
            ad.mul(ad.transpose(ad.reshape(t[0], (2, 6)), (1, 0)), 2.0)), (3, 4))

    def test_concat(self):
        check_op(lambda t: ad.tensor_sum(
            ad.mul(ad.concat([t[0], t[1]], axis=1), t[2])),
            (2, 3), (2, 2), (2, 5))


class TestReductionsAndSoftmax:
    def test_sum_axis_keepdims(self):
        check_op(lambda t: ad.tensor_sum(
            ad.mul(ad.tensor_sum(t[0], axis=1, keepdims=True), t[1])),
            (3, 4), (3, 1))

    def test_mean(self):
        check_op(lambda t: ad.mean(ad.mul(t[0], t[0])), (4, 3))

    def test_softmax(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(ad.softmax(t[0]), t[1])),
                 (3, 7), (3, 7))

    def test_log_softmax(self):
        check_op(lambda t: ad.tensor_sum(ad.mul(ad.log_softmax(t[0]), t[1])),
                 (3, 7), (3, 7))

    def test_softmax_rows_normalized(self):
        rng = np.random.default_rng(0)
        s = ad.softmax(Tensor(rng.standard_normal((5, 11)))).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)
        assert (s > 0).all()

    def test_layer_norm(self):
        check_op(lambda t: ad.tensor_sum(
            ad.mul(ad.layer_norm(t[0], t[1], t[2]), t[3])),
            (2, 5, 8), (8,), (8,), (2, 5, 8))


class TestStructuredOps:
    def test_embedding_scatter(self):
        ids = np.array([[0, 2, 2], [1, 0, 3]])
        rng = np.random.default_rng(0)
        w = rng.standard_normal((4, 3))
        coef = rng.standard_normal((2, 3, 3))

        def value(arrs):
            return float(ad.tensor_sum(ad.mul(ad.embedding(Tensor(arrs[0]), ids),
                                              coef)).data)

        tw = Tensor(w.copy())
        ad.tensor_sum(ad.mul(ad.embedding(tw, ids), coef)).backward()
        np.testing.assert_allclose(tw.grad, fd_grad(value, [w], 0), atol=1e-6)

    def test_max_pool_masked(self):
        mask = np.array([[True, True, False], [True, False, False]])
        rng = np.random.default_rng(2)
        x = rng.standard_normal((2, 3, 4))
        coef = rng.standard_normal((2, 4))

        def value(arrs):
            return float(ad.tensor_sum(ad.mul(ad.max_pool(Tensor(arrs[0]), mask),
                                              coef)).data)

        tx = Tensor(x.copy())
        ad.tensor_sum(ad.mul(ad.max_pool(tx, mask), coef)).backward()
        np.testing.assert_allclose(tx.grad, fd_grad(value, [x], 0), atol=1e-6)
        # masked positions never receive gradient
        assert np.all(tx.grad[~mask] == 0)

    def test_dropout_train_scaling(self):
        rng = np.random.default_rng(0)
        x = Tensor(np.ones((1000,)))
        out = ad.dropout(x, 0.25, rng)
        kept = out.data[out.data > 0]
        np.testing.assert_allclose(kept, 1 / 0.75)
        assert abs(out.data.mean() - 1.0) < 0.1


class TestGraphMechanics:
    def test_backward_requires_scalar(self):
        t = Tensor(np.ones((2, 2)))
        with pytest.raises(ValueError):
            ad.add(t, t).backward()

    def test_unreached_parameter_zero_grad(self):
        a, b = Tensor(np.ones(3)), Tensor(np.ones(3))
        ad.tensor_sum(a).backward()
        np.testing.assert_array_equal(a.grad, np.ones(3))
        assert b.grad is None

    def test_sum_of_parameter_gives_ones(self):
        a = Tensor(np.arange(6.0).reshape(2, 3))
        ad.tensor_sum(a).backward()
        np.testing.assert_array_equal(a.grad, np.ones((2, 3)))

    def test_detach_blocks_gradient(self):
        a = Tensor(np.ones(4))
        loss = ad.tensor_sum(ad.mul(a.detach(), a))
        loss.backward()
        np.testing.assert_array_equal(a.grad, np.ones(4))

    def test_no_grad_skips_recording(self):
        a = Tensor(np.ones(3))
        with ad.no_grad():
            out = ad.mul(a, 2.0)
        assert out._parents == ()
        out2 = ad.mul(a, 2.0)
        assert out2._parents != ()

    def test_reused_node_accumulates(self):
        a = Tensor(np.array(3.0))
        loss = ad.add(ad.mul(a, a), a)      # d/da (a^2 + a) = 2a + 1
        loss.backward()
        np.testing.assert_allclose(a.grad, 7.0)
