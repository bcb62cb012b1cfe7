import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clamdet import tensor as tn
from clamdet.tensor import Tensor


def central_diff(f, x, h=1e-6):
    """Independent numerical gradient of scalar f at array x."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.reshape(-1)[i] += h
        xm.reshape(-1)[i] -= h
        g.reshape(-1)[i] = (f(xp) - f(xm)) / (2 * h)
    return g


class TestKernels:
    def test_matmul_identity(self):
        a = np.array([[1.5, -2.0], [0.25, 4.0]])
        assert np.array_equal(tn.matmul(Tensor(np.eye(2)), Tensor(a)).data, a)

    def test_matmul_hand_value(self):
        out = tn.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[5, 6], [7, 8]]))
        assert out.data.tolist() == [[19, 22], [43, 50]]

    def test_softmax_uniform(self):
        out = tn.softmax(Tensor([0.0, 0.0, 0.0]))
        assert np.allclose(out.data, 1 / 3, atol=1e-15)

    def test_matmul_shape_error_names_both(self):
        with pytest.raises(tn.DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            tn.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_no_implicit_broadcast(self):
        with pytest.raises(tn.DimensionError):
            tn.add(Tensor(np.ones((2, 3))), Tensor(np.ones(3)))
        out = tn.add(Tensor(np.ones((2, 3))), 2.0)
        assert np.all(out.data == 3.0)

    def test_log_domain(self):
        with pytest.raises(tn.NumericError):
            tn.log(Tensor([1.0, 0.0]))

    def test_nonfinite_output_names_kernel(self):
        with pytest.raises(tn.NumericError, match="exp"):
            tn.exp(Tensor([1000.0]))

    def test_inputs_not_mutated(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        before = x.data.copy()
        y = tn.sum_(tn.tanh(tn.mul(x, x)))
        y.backward()
        assert np.array_equal(x.data, before)

    def test_concat_split_identity(self):
        rng = np.random.default_rng(0)
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((4, 3))
        c = tn.concat([Tensor(a), Tensor(b)], axis=0)
        pa, pb = tn.split(c, [2, 4], axis=0)
        assert np.array_equal(pa.data, a) and np.array_equal(pb.data, b)

    def test_reshape_preserves_bytes(self):
        x = np.random.default_rng(1).standard_normal((3, 4))
        assert tn.reshape(Tensor(x), (2, 6)).data.tobytes() == x.tobytes()

    def test_softplus_stable(self):
        out = tn.softplus(Tensor([-700.0, 0.0, 700.0])).data
        assert out[0] >= 0 and out[0] < 1e-300
        assert out[1] == pytest.approx(np.log(2))
        assert out[2] == 700.0


class TestBackward:
    def test_square(self):
        x = Tensor(3.0, requires_grad=True)
        tn.mul(x, x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_sum_softmax_zero_grad(self):
        x = Tensor([0.3, -1.2, 2.0, 0.5], requires_grad=True)
        tn.sum_(tn.softmax(x)).backward()
        assert np.allclose(x.grad, 0.0, atol=1e-15)

    def test_elementwise_product_grad(self):
        rng = np.random.default_rng(7)
        a0, b0 = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
        a = Tensor(a0, requires_grad=True)
        b = Tensor(b0, requires_grad=True)
        tn.sum_(tn.mul(a, b)).backward()
        num = central_diff(lambda x: float(np.sum(x * b0)), a0)
        # frozen against the finite-difference oracle: d/dA sum(A*B) = B
        assert np.allclose(num, b0, atol=1e-8)
        assert np.allclose(a.grad, num, atol=1e-8)

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ValueError):
            tn.mul(x, x).backward()

    def test_second_backward_rejected(self):
        x = Tensor(2.0, requires_grad=True)
        y = tn.mul(x, x)
        y.backward()
        with pytest.raises(tn.GraphStateError):
            y.backward()

    def test_paths_accumulate(self):
        x = Tensor(2.0, requires_grad=True)
        y = tn.add(tn.mul(x, x), tn.scale(x, 3.0))  # x^2 + 3x
        y.backward()
        assert x.grad == pytest.approx(7.0)

    def test_unreached_leaf_gets_no_grad(self):
        x = Tensor(2.0, requires_grad=True)
        unused = Tensor(5.0, requires_grad=True)
        tn.mul(x, x).backward()
        assert unused.grad is None

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal(5)

        def loss1(x):
            return tn.sum_(tn.tanh(x))

        def loss2(x):
            return tn.sum_(tn.mul(x, x))

        grads = []
        for f in (loss1, loss2, lambda x: tn.add(loss1(x), loss2(x))):
            x = Tensor(x0, requires_grad=True)
            f(x).backward()
            grads.append(x.grad)
        assert np.allclose(grads[0] + grads[1], grads[2], atol=1e-12, rtol=0)


class TestGradCheck:
    def test_linear_exact(self):
        rep = tn.grad_check(lambda x: tn.sum_(x), [np.array([0.3, -2.0, 5.0])])
        assert rep.max_rel_error < 1e-9 and rep.passed

    def test_relu_kink_excluded(self):
        rep = tn.grad_check(lambda x: tn.sum_(tn.relu(x)), [np.array([0.0, 1.0])])
        assert rep.excluded == 1
        assert rep.passed

    def test_nonfinite_raises(self):
        with pytest.raises(tn.NumericError):
            tn.grad_check(lambda x: tn.sum_(tn.exp(tn.scale(x, 1e4))), [np.array([1.0])])


def _nudge(x, away=1e-3):
    # keep relu/clamp/abs inputs clear of their kinks
    return np.where(np.abs(x) < away, np.sign(x) * away + (x == 0) * away, x)


UNARY = {
    "exp": tn.exp,
    "log": lambda x: tn.log(tn.add_scalar(tn.mul(x, x), 0.5)),
    "relu": tn.relu,
    "tanh": tn.tanh,
    "sqrt": lambda x: tn.sqrt(tn.add_scalar(tn.mul(x, x), 0.1)),
    "sigmoid": tn.sigmoid,
    "softplus": tn.softplus,
    "clamp_min": lambda x: tn.clamp_min(x, 0.0),
    "abs": tn.abs_,
    "huber": lambda x: tn.huber(x, 0.7),
    "softmax0": lambda x: tn.softmax(x, axis=0),
    "softmax1": lambda x: tn.softmax(x, axis=1),
    "sum0": lambda x: tn.sum_(x, axis=0),
    "mean1": lambda x: tn.mean(x, axis=1),
    "transpose": tn.transpose,
    "reshape": lambda x: tn.reshape(x, (-1,)),
    "scale": lambda x: tn.scale(x, -2.5),
    "expand": lambda x: tn.expand(tn.reshape(x, (1,) + x.shape), (2,) + x.shape),
    "take_rows": lambda x: tn.take_rows(x, [2, 0, 0]),
    "slice": lambda x: tn.slice_axis(x, 1, 3, axis=1),
}

BINARY = {
    "add": tn.add,
    "sub": tn.sub,
    "mul": tn.mul,
    "matmul": lambda a, b: tn.matmul(a, tn.transpose(b)),
    "concat": lambda a, b: tn.concat([a, b], axis=1),
    "sqdist_rows": tn.sqdist_rows,
}


def _weighted(f, w):
    # random linear readout so every output element matters
    def g(*xs):
        out = f(*xs)
        return tn.sum_(tn.mul(out, Tensor(w[: out.size].reshape(out.shape))))
    return g


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_kernels_gradcheck(name):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = _nudge(rng.standard_normal((3, 4)))
        w = rng.standard_normal(64)
        rep = tn.grad_check(_weighted(UNARY[name], w), [x], h=1e-6, tol=1e-5)
        assert rep.passed, (name, seed, rep)


@pytest.mark.parametrize("name", sorted(BINARY))
def test_binary_kernels_gradcheck(name):
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        w = rng.standard_normal(64)
        rep = tn.grad_check(_weighted(BINARY[name], w), [a, b], h=1e-6, tol=1e-5)
        assert rep.passed, (name, seed, rep)


def test_batched_matmul_gradcheck():
    rng = np.random.default_rng(11)
    a, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((2, 4, 2))
    w = rng.standard_normal(12)
    assert tn.grad_check(_weighted(tn.matmul, w), [a, b]).passed
    c = rng.standard_normal((4, 5))
    w = rng.standard_normal(30)
    assert tn.grad_check(_weighted(tn.matmul, w), [a, c]).passed


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_rows_and_shift(xs, c):
    x = np.array(xs)
    p = tn.softmax(Tensor(x)).data
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.allclose(tn.softmax(Tensor(x + c)).data, p, atol=1e-12, rtol=0)


class TestBlob:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"w": rng.standard_normal((3, 2)), "bias": rng.standard_normal(4),
                  "scalar": np.array(1.25), "ünï": np.zeros((0, 2))}
        tn.save_blob(arrays, tmp_path / "x.clt")
        back = tn.load_blob(tmp_path / "x.clt")
        assert list(back) == list(arrays)
        for k in arrays:
            assert back[k].shape == arrays[k].shape
            assert back[k].tobytes() == arrays[k].tobytes()

    def test_layout(self):
        buf = tn.encode_blob({"ab": np.array([[0.5]])})
        assert buf[:4] == b"CLT1"
        assert buf[4:6] == (2).to_bytes(2, "little")
        assert buf[6:8] == b"ab"
        assert buf[8] == 2
        assert buf[9:17] == (1).to_bytes(4, "little") * 2
        assert np.frombuffer(buf[17:], "<f8")[0] == 0.5

    def test_bad_magic(self):
        with pytest.raises(tn.BlobFormatError):
            tn.decode_blob(b"XXXX")

    def test_truncated(self):
        buf = tn.encode_blob({"w": np.ones(4)})
        with pytest.raises(OSError, match="expected 32 bytes, got 24"):
            tn.decode_blob(buf[:-8])
