import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dualitm.modulation import (
    COST_TABLE_ROWS,
    ModulationVectors,
    cost_table,
    dmc,
    dmc_unfolded,
    fold_modulation,
    format_cost_table,
    gfm,
    modulation_cost,
)
from dualitm.nn import ConvKernel, conv1x1
from dualitm.tensor import ShapeError, Tensor, grad_check


def mv(alpha, beta, gamma=None):
    return ModulationVectors(Tensor(alpha), Tensor(beta), None if gamma is None else Tensor(gamma))


def test_fold_hand_example():
    W = np.array([[1.0, 2.0], [3.0, 4.0]])
    fk = fold_modulation((W, np.zeros(2)), mv([2.0, 1.0], [0.0, 0.0], [1.0, 3.0]))
    assert fk.weight.data.tolist() == [[2.0, 12.0], [3.0, 12.0]]


def test_fold_bias():
    fk = fold_modulation((np.eye(2), np.array([1.0, -2.0])), mv([3.0, 0.5], [0.25, 1.0]))
    assert fk.bias.data.tolist() == [3.25, 0.0]


def test_neutral_vectors_leave_kernel_unchanged():
    rng = np.random.default_rng(0)
    k = ConvKernel(Tensor(rng.normal(size=(3, 2, 3, 3))), Tensor(rng.normal(size=3)))
    fk = fold_modulation(k, ModulationVectors.neutral(3, 2))
    np.testing.assert_array_equal(fk.weight.data, k.weight.data)
    np.testing.assert_array_equal(fk.bias.data, k.bias.data)


def test_gfm_explicit():
    rng = np.random.default_rng(1)
    W, b, x = rng.normal(size=(3, 2)), rng.normal(size=3), rng.normal(size=(2, 4, 5))
    a, s = rng.normal(size=3), rng.normal(size=3)
    y = gfm(Tensor(x), (W, b), mv(a, s)).data
    ref = a[:, None, None] * (np.einsum("om,mhw->ohw", W, x) + b[:, None, None]) + s[:, None, None]
    np.testing.assert_allclose(y, ref, atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**31), st.sampled_from([1, 3]))
def test_folded_equals_unfolded(n, m, seed, k):
    rng = np.random.default_rng(seed)
    kern = ConvKernel(Tensor(rng.normal(size=(n, m, k, k))), Tensor(rng.normal(size=n)))
    vec = mv(rng.normal(size=n), rng.normal(size=n), rng.normal(size=m))
    vec.alpha.data[0] = 0.0
    vec.gamma.data[-1] = -abs(vec.gamma.data[-1])
    x = Tensor(rng.normal(size=(m, 5, 4)))
    assert np.abs(dmc(x, kern, vec).data - dmc_unfolded(x, kern, vec).data).max() <= 1e-10


def test_gfm_equals_folded_without_gamma():
    rng = np.random.default_rng(2)
    W, b, x = rng.normal(size=(4, 3)), rng.normal(size=4), Tensor(rng.normal(size=(3, 6, 6)))
    vec = mv(rng.normal(size=4), rng.normal(size=4))
    fk = fold_modulation((W, b), vec)
    np.testing.assert_allclose(gfm(x, (W, b), vec).data, conv1x1(x, fk.weight, fk.bias).data, atol=1e-12)


def test_shape_checks():
    W = np.ones((2, 3))
    with pytest.raises(ShapeError):
        fold_modulation((W, None), mv(np.ones(3), np.zeros(2)))
    with pytest.raises(ShapeError):
        fold_modulation((W, None), mv(np.ones(2), np.zeros(2), np.ones(2)))


def test_dmc_gradients():
    rng = np.random.default_rng(3)
    w, b = Tensor(rng.normal(size=(3, 2, 1, 1))), Tensor(rng.normal(size=3))
    a, s, g = Tensor(rng.normal(size=3)), Tensor(rng.normal(size=3)), Tensor(rng.normal(size=2))
    x = Tensor(rng.normal(size=(2, 4, 4)))

    def fn(x, w, b, a, s, g):
        return (dmc(x, ConvKernel(w, b), ModulationVectors(a, s, g)) ** 2).sum()

    assert grad_check(fn, [x, w, b, a, s, g]) <= 1e-4


class TestCost:
    def test_formula(self):
        assert modulation_cost(2, 3, 4, 5) == (60, 30)

    @pytest.mark.parametrize("bad", [(0, 1, 1, 1), (1.5, 1, 1, 1), (1, 1, -2, 1)])
    def test_rejects_non_positive(self, bad):
        with pytest.raises(ValueError):
            modulation_cost(*bad)

    def test_table_values(self):
        rows = cost_table()
        assert [(r["gfm_ops"], r["ckm_ops"]) for r in rows] == [
            (44_236_800, 4_224),
            (265_420_800, 4_224),
            (1_061_683_200, 4_224),
        ]
        assert [r["gfm"] for r in rows] == ["44.24M", "265.42M", "1061.68M"]
        assert all(r["ckm"] == "4.22K" for r in rows)
        assert rows[1]["speedup"] > 6e4

    def test_table_rows_are_square_channel(self):
        assert all(m == n == 64 for _, _, m, n in COST_TABLE_ROWS)

    def test_format_has_header_and_rows(self):
        lines = format_cost_table().splitlines()
        assert len(lines) == 4
        assert "44,236,800" in lines[1] and "4,224" in lines[1]
