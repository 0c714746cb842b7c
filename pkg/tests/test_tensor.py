import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dualitm.nn import ConvKernel, conv2d
from dualitm.tensor import (
    ContractError,
    NumericError,
    ShapeError,
    Tape,
    Tensor,
    concat,
    grad_check,
    l1_loss,
    load_dten,
    no_grad,
    read_dten,
    save_dten,
    stack,
    tensor_new,
    where,
    write_dten,
)
from dualitm.wavelet import dwt2_haar


def grads(fn, *xs):
    for x in xs:
        x.requires_grad = True
        x.grad = None
    tape = Tape()
    with tape.activate():
        tape.backward(fn(*xs))
    return [x.grad for x in xs]


class TestConstruction:
    def test_zeros(self):
        t = tensor_new([2, 3])
        assert t.shape == (2, 3) and t.size == 6
        assert np.all(t.data == 0.0)

    def test_constant(self):
        assert tensor_new([1], "constant", value=2.5).data.tolist() == [2.5]

    def test_seeded_uniform_is_reproducible(self):
        a = tensor_new([4], "uniform", seed=7).data
        b = tensor_new([4], "uniform", seed=7).data
        assert a.tobytes() == b.tobytes()
        assert np.all((a >= 0) & (a < 1))

    @pytest.mark.parametrize("shape", [[0], [2, -1], []])
    def test_bad_dims(self, shape):
        with pytest.raises(ShapeError):
            tensor_new(shape)

    def test_unknown_init(self):
        with pytest.raises(ContractError):
            tensor_new([2], "gaussian")

    def test_float32_kept(self):
        assert Tensor(np.zeros(3, np.float32)).dtype == np.float32
        assert Tensor([1, 2]).dtype == np.float64


class TestBackward:
    def test_sum(self):
        (g,) = grads(lambda x: x.sum(), Tensor(np.zeros(3)))
        assert g.tolist() == [1.0, 1.0, 1.0]

    def test_square(self):
        (g,) = grads(lambda x: (x * x).sum(), Tensor([1.0, 2.0]))
        assert g.tolist() == [2.0, 4.0]

    def test_l1_mean(self):
        (g,) = grads(lambda a: l1_loss(a, [2.0, 2.0]), Tensor([1.0, 3.0]))
        assert g.tolist() == [-0.5, 0.5]

    def test_l1_subgradient_zero_at_kink(self):
        (g,) = grads(lambda a: l1_loss(a, [1.0, 0.0]), Tensor([1.0, 1.0]))
        assert g.tolist() == [0.0, 0.5]

    def test_non_scalar_loss(self):
        x = Tensor(np.ones(3), requires_grad=True)
        tape = Tape()
        with tape.activate():
            y = x * 2.0
            with pytest.raises(ContractError):
                tape.backward(y)

    def test_loss_not_on_tape(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with Tape().activate():
            y = (x * 2.0).sum()
        with pytest.raises(ContractError):
            Tape().backward(y)

    def test_accumulates_across_calls(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        for _ in range(2):
            tape = Tape()
            with tape.activate():
                tape.backward((x * 3.0).sum())
        assert x.grad.tolist() == [6.0, 6.0]
        x.zero_grad()
        assert x.grad is None

    def test_shared_leaf_gets_summed_grad(self):
        (g,) = grads(lambda x: (x * x + x * 2.0 + x).sum(), Tensor([1.0, 2.0]))
        assert g.tolist() == [5.0, 7.0]

    def test_no_grad_does_not_record(self):
        x = Tensor(np.ones(2), requires_grad=True)
        tape = Tape()
        with tape.activate(), no_grad():
            (x * 2).sum()
        assert len(tape) == 0

    def test_clear(self):
        x = Tensor(np.ones(2), requires_grad=True)
        tape = Tape()
        with tape.activate():
            (x * 2).sum()
        assert len(tape) == 2
        tape.clear()
        assert len(tape) == 0

    def test_replay_determinism(self):
        def run():
            x = tensor_new([3, 4], "uniform", seed=3, requires_grad=True)
            w = tensor_new([4, 2], "uniform", seed=4, requires_grad=True)
            tape = Tape()
            with tape.activate():
                tape.backward(((x @ w).sigmoid() ** 2).mean())
            return x.grad.tobytes() + w.grad.tobytes()

        assert run() == run()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
class TestFiniteness:
    def test_log_of_negative_raises(self):
        with pytest.raises(NumericError):
            Tensor([-1.0]).log()

    def test_division_by_zero_raises(self):
        with pytest.raises(NumericError):
            Tensor([1.0]) / Tensor([0.0])

    def test_grad_check_rejects_nonfinite(self):
        with pytest.raises(NumericError):
            grad_check(lambda x: (x * 1e308) * 10.0, Tensor([1.0]))


class TestBroadcasting:
    def test_trailing_alignment(self):
        a = Tensor(np.ones((2, 3)))
        b = Tensor(np.arange(3.0))
        assert (a + b).shape == (2, 3)

    def test_mismatch_is_error(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) + Tensor(np.ones(2))

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))

    def test_broadcast_grad_reduces(self):
        ga, gb = grads(lambda a, b: (a * b).sum(), Tensor(np.ones((2, 3))), Tensor(np.arange(3.0)))
        assert ga.shape == (2, 3) and gb.shape == (3,)
        assert gb.tolist() == [2.0, 2.0, 2.0]


class TestGradCheck:
    def test_sum_of_squares(self):
        x = tensor_new([5, 4], "uniform", low=-1, high=1, seed=1)
        assert grad_check(lambda t: (t * t).sum(), x, eps=1e-5) <= 1e-6

    def test_conv(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.normal(size=(1, 1, 4, 4)))
        k = ConvKernel(Tensor(rng.normal(size=(1, 1, 3, 3))), Tensor(np.zeros(1)))
        assert grad_check(lambda t: conv2d(t, k).sum(), x) <= 1e-5

    def test_dwt_ll(self):
        x = tensor_new([1, 4, 4], "uniform", seed=2)
        assert grad_check(lambda t: dwt2_haar(t).ll.sum(), x) <= 1e-6

    @pytest.mark.parametrize("eps", [1e-8, 1e-2])
    def test_eps_range(self, eps):
        with pytest.raises(ContractError):
            grad_check(lambda t: t.sum(), Tensor([1.0]), eps=eps)

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a: (a.exp() * a.sqrt()).sum(),
            lambda a: (a.log() / (a + 1.0)).sum(),
            lambda a: (1.0 / a - a**2).mean(),
            lambda a: a.sigmoid().sum(),
            lambda a: (a.reshape(6, 2).transpose(1, 0) @ Tensor(np.ones((6, 1)))).sum(),
            lambda a: (a[1:, ::2] ** 2).sum(),
            lambda a: (a.clip(0.6, 1.2) * a).sum(),
            lambda a: (concat([a, a * 2.0], axis=1) ** 2).sum(),
            lambda a: (stack([a, a.exp()], axis=0) ** 2).mean(),
            lambda a: (where(a.data > 1.0, a * 3.0, a.log()) ** 2).sum(),
            lambda a: (a.mean(axis=0, keepdims=True) - a).abs().sum(),
            lambda a: (a.broadcast_to((2, 3, 4)) ** 2).sum(),
        ],
    )
    def test_elementwise_ops(self, fn):
        rng = np.random.default_rng(5)
        x = Tensor(rng.uniform(0.5, 1.5, size=(3, 4)))
        assert grad_check(fn, x) <= 1e-4


class TestDten:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(0)
        for dt in (np.float32, np.float64):
            arr = rng.normal(size=(3, 5, 7)).astype(dt)
            save_dten(tmp_path / "a.dten", arr)
            back = load_dten(tmp_path / "a.dten")
            assert back.dtype == dt and back.tobytes() == arr.tobytes()

    def test_header_layout(self):
        buf = io.BytesIO()
        write_dten(buf, np.arange(6, dtype=np.float32).reshape(2, 3))
        raw = buf.getvalue()
        assert raw[:4] == b"DTEN"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 2
        assert int.from_bytes(raw[12:20], "little") == 2
        assert int.from_bytes(raw[20:28], "little") == 3
        assert raw[28] == 0
        assert len(raw) == 29 + 6 * 4

    @pytest.mark.parametrize("cut", [3, 10, 20, 30])
    def test_truncated(self, cut):
        buf = io.BytesIO()
        write_dten(buf, np.ones((2, 2)))
        with pytest.raises(ContractError):
            read_dten(io.BytesIO(buf.getvalue()[:cut]))

    def test_bad_magic(self):
        with pytest.raises(ContractError):
            read_dten(io.BytesIO(b"XTEN" + bytes(30)))

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 4)), elements=st.floats(-1e6, 1e6)))
    def test_round_trip_property(self, arr):
        buf = io.BytesIO()
        write_dten(buf, arr)
        buf.seek(0)
        assert read_dten(buf).tobytes() == arr.tobytes()


@settings(max_examples=40, deadline=None)
@given(
    arrays(np.float64, (3, 4), elements=st.floats(-3, 3)),
    arrays(np.float64, (4,), elements=st.floats(-3, 3)),
)
def test_product_rule_property(a, b):
    ga, gb = grads(lambda x, y: (x * y).sum(), Tensor(a), Tensor(b))
    np.testing.assert_allclose(ga, np.broadcast_to(b, (3, 4)))
    np.testing.assert_allclose(gb, a.sum(axis=0))
