import numpy as np
import pytest

from mvref import tensor as T


def fd_gradcheck(fn, tensors, h=1e-5, tol=1e-4, max_entries=None, rng=None):
    """Central-difference check of every (or a sampled subset of) input
    entries against the taped analytic gradient."""
    with T.Tape() as tape:
        out = fn(*tensors)
    tape.backward(out)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "input received no gradient"
        analytic = t.grad.copy()
        flat = t.data.reshape(-1)
        indices = range(flat.size)
        if max_entries is not None and flat.size > max_entries:
            indices = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for idx in indices:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = fn(*tensors).item()
            flat[idx] = orig - h
            f_minus = fn(*tensors).item()
            flat[idx] = orig
            fd = (f_plus - f_minus) / (2 * h)
            a = analytic.reshape(-1)[idx]
            rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
            worst = max(worst, rel)
    assert worst < tol, f"max relative gradient error {worst}"
    return worst


class TestMatmul:
    def test_identity(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((3, 3))
        out = T.Tensor(np.eye(3)) @ T.Tensor(a)
        np.testing.assert_array_equal(out.data, a)

    def test_scalar_case(self):
        out = T.Tensor([[2.0]]) @ T.Tensor([[3.0]])
        assert out.data[0, 0] == 6.0

    def test_against_triple_loop(self):
        rng = np.random.default_rng(2)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((4, 3))
        expected = np.zeros((5, 3))
        for i in range(5):
            for j in range(3):
                for l in range(4):
                    expected[i, j] += a[i, l] * b[l, j]
        out = (T.Tensor(a) @ T.Tensor(b)).data
        assert np.abs(out - expected).max() < 1e-12

    def test_all_small_shapes(self):
        rng = np.random.default_rng(3)
        for m in range(1, 9):
            for k in range(1, 9):
                for n in range(1, 9):
                    a = rng.standard_normal((m, k))
                    b = rng.standard_normal((k, n))
                    expected = np.zeros((m, n))
                    for i in range(m):
                        for j in range(n):
                            for l in range(k):
                                expected[i, j] += a[i, l] * b[l, j]
                    out = (T.Tensor(a) @ T.Tensor(b)).data
                    assert np.abs(out - expected).max() < 1e-12

    def test_identity_associativity(self):
        rng = np.random.default_rng(4)
        a = T.Tensor(rng.standard_normal((4, 4)))
        eye = T.Tensor(np.eye(4))
        left = ((eye @ a) @ eye).data
        right = (eye @ (a @ eye)).data
        np.testing.assert_allclose(left, right, atol=1e-15)
        np.testing.assert_allclose(left, a.data, atol=1e-15)

    def test_shape_errors_name_both_shapes(self):
        a, b = T.Tensor(np.zeros((2, 3))), T.Tensor(np.zeros((4, 2)))
        with pytest.raises(T.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            a @ b

    def test_batch_mismatch(self):
        a, b = T.Tensor(np.zeros((2, 3, 4))), T.Tensor(np.zeros((3, 4, 5)))
        with pytest.raises(T.ShapeError):
            a @ b


class TestSoftmax:
    def test_equal_logits(self):
        out = T.softmax(T.Tensor([1.0, 1.0, 1.0, 1.0]), axis=-1)
        np.testing.assert_array_equal(out.data, np.full(4, 0.25))

    def test_masked_entry_exact_zero(self):
        out = T.softmax(T.Tensor([0.0, -np.inf]), axis=-1)
        assert out.data[0] == 1.0
        assert out.data[1] == 0.0

    def test_against_direct_formula(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(6)
        expected = np.exp(x) / np.exp(x).sum()
        out = T.softmax(T.Tensor(x), axis=-1).data
        assert np.abs(out - expected).max() < 1e-12

    def test_rows_are_probability_vectors(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((7, 9)) * 10
        out = T.softmax(T.Tensor(x), axis=-1).data
        assert out.min() >= 0.0 and out.max() <= 1.0
        np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)

    def test_all_masked_row_raises(self):
        with pytest.raises(T.DegenerateRowError):
            T.softmax(T.Tensor([[0.0, 1.0], [-np.inf, -np.inf]]), axis=-1)

    def test_bad_axis(self):
        with pytest.raises(T.ShapeError):
            T.softmax(T.Tensor([1.0, 2.0]), axis=3)


class TestBackward:
    def test_square(self):
        x = T.Tensor(3.0, requires_grad=True)
        with T.Tape() as tape:
            y = x * x
        tape.backward(y)
        assert x.grad == pytest.approx(6.0)

    def test_matmul_sum_gradient(self):
        rng = np.random.default_rng(7)
        a = T.Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        b = T.Tensor(rng.standard_normal((2, 2)), requires_grad=True)
        with T.Tape() as tape:
            loss = (a @ b).sum()
        tape.backward(loss)
        np.testing.assert_allclose(a.grad, np.ones((2, 2)) @ b.data.T, atol=1e-15)
        np.testing.assert_allclose(b.grad, a.data.T @ np.ones((2, 2)), atol=1e-15)

    def test_fanout_accumulates(self):
        x = T.Tensor(2.0, requires_grad=True)
        with T.Tape() as tape:
            y = x * x + x * x
        tape.backward(y)
        assert x.grad == pytest.approx(8.0)

    def test_non_scalar_root(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.Tape() as tape:
            y = x * x
        with pytest.raises(T.GradientError):
            tape.backward(y)

    def test_no_tape_records_nothing(self):
        x = T.Tensor(3.0, requires_grad=True)
        tape = T.Tape()
        y = x * x  # outside the context: nothing recorded
        assert len(tape) == 0 and y.requires_grad


class TestGradcheckPrimitives:
    """Every primitive's analytic gradient matches central differences."""

    def setup_method(self):
        self.rng = np.random.default_rng(8)

    def _t(self, *shape):
        return T.Tensor(self.rng.standard_normal(shape), requires_grad=True)

    def test_add_broadcast(self):
        fd_gradcheck(lambda a, b: (a + b).sum(), [self._t(3, 4), self._t(4)])

    def test_neg(self):
        fd_gradcheck(lambda a: (-a * a).sum(), [self._t(5)])

    def test_mul_broadcast(self):
        fd_gradcheck(lambda a, b: (a * b).sum(), [self._t(2, 3), self._t(3)])

    def test_matmul_2d(self):
        fd_gradcheck(lambda a, b: ((a @ b) * (a @ b)).sum(), [self._t(3, 4), self._t(4, 2)])

    def test_matmul_batched(self):
        fd_gradcheck(lambda a, b: ((a @ b) * (a @ b)).sum(), [self._t(2, 3, 4), self._t(2, 4, 3)])

    def test_power(self):
        x = T.Tensor(np.abs(self.rng.standard_normal((4,))) + 0.5, requires_grad=True)
        fd_gradcheck(lambda a: (a ** -0.5).sum(), [x])

    def test_silu(self):
        fd_gradcheck(lambda a: T.silu(a).sum(), [self._t(6)])

    def test_softmax(self):
        fd_gradcheck(lambda a: (T.softmax(a, axis=-1) * T.softmax(a, axis=-1)).sum(), [self._t(3, 5)])

    def test_sum_axis(self):
        fd_gradcheck(lambda a: (a.sum(axis=0) * a.sum(axis=0)).sum(), [self._t(3, 4)])

    def test_mean(self):
        fd_gradcheck(lambda a: (a.mean(axis=-1, keepdims=True) * a).sum(), [self._t(3, 4)])

    def test_reshape_swapaxes(self):
        fd_gradcheck(lambda a: (a.reshape((4, 3)).swapaxes(0, 1) * 2.0).sum(), [self._t(2, 6)])

    def test_take(self):
        fd_gradcheck(lambda a: (a[1:3] * a[1:3]).sum(), [self._t(5, 2)])

    def test_rotate_pairs(self):
        fd_gradcheck(lambda a: (T.rotate_pairs(a) * a).sum(), [self._t(3, 4)])

    def test_layer_norm_composition(self):
        from mvref.model import _layer_norm

        g = T.Tensor(np.ones(5) * 1.3, requires_grad=True)
        b = T.Tensor(np.zeros(5) + 0.1, requires_grad=True)
        fd_gradcheck(lambda x, g, b: (_layer_norm(x, g, b) ** 2.0).sum(), [self._t(3, 5), g, b])


class TestOptimizer:
    def test_basic_step(self):
        p = T.Tensor(1.0)
        T.sgd_step([p], [np.asarray(2.0)], lr=0.1)
        assert p.data == pytest.approx(0.8)

    def test_zero_gradient_is_identity(self):
        p = T.Tensor([1.0, -2.0])
        before = p.data.copy()
        T.sgd_step([p], [np.zeros(2)], lr=0.3)
        np.testing.assert_array_equal(p.data, before)

    def test_quadratic_bowl(self):
        # f(p) = p^2, grad 2p; p_k = (1 - 2 lr)^k
        p = T.Tensor(1.0)
        lr = 0.4
        for _ in range(20):
            T.sgd_step([p], [2.0 * p.data], lr=lr)
        closed_form = (1 - 2 * lr) ** 20
        assert abs(p.data) < 1e-3
        assert p.data == pytest.approx(closed_form, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(T.ShapeError):
            T.sgd_step([T.Tensor([1.0, 2.0])], [np.zeros(3)], lr=0.1)

    def test_bad_lr(self):
        with pytest.raises(ValueError):
            T.sgd_step([T.Tensor(1.0)], [np.asarray(0.0)], lr=0.0)


class TestDeterminism:
    def test_bit_identical_pipeline(self):
        def run():
            rng = np.random.default_rng(99)
            a = T.Tensor(rng.standard_normal((6, 6)), requires_grad=True)
            b = T.Tensor(rng.standard_normal((6, 6)), requires_grad=True)
            with T.Tape() as tape:
                loss = (T.softmax(a @ b, axis=-1) * (a @ b)).sum()
            tape.backward(loss)
            return loss.item(), a.grad.copy(), b.grad.copy()

        l1, ga1, gb1 = run()
        l2, ga2, gb2 = run()
        assert l1 == l2
        np.testing.assert_array_equal(ga1, ga2)
        np.testing.assert_array_equal(gb1, gb2)

    def test_finite_outputs(self):
        rng = np.random.default_rng(100)
        a = T.Tensor(rng.standard_normal((4, 4)) * 50)
        for out in (T.softmax(a, axis=-1), T.silu(a), a @ a, a * a + a):
            assert np.isfinite(out.data).all()


class TestTensorFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        arr = rng.standard_normal((3, 4, 5))
        path = tmp_path / "x.bin"
        T.save_tensor(path, arr)
        np.testing.assert_array_equal(T.load_tensor(path), arr)

    def test_scalar_round_trip(self, tmp_path):
        path = tmp_path / "s.bin"
        T.save_tensor(path, np.asarray(3.5))
        out = T.load_tensor(path)
        assert out.shape == () and out == 3.5

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTTENSR" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            T.load_tensor(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "short.bin"
        T.save_tensor(path, np.ones((2, 2)))
        blob = path.read_bytes()
        path.write_bytes(blob[:-8])
        with pytest.raises(ValueError, match="payload"):
            T.load_tensor(path)
