import numpy as np
import pytest

from conftest import gradcheck
from molmark import autodiff as ad
from molmark.errors import DataError, NumericError
from molmark.layers import (Conv3x3, CrossBlock, LayerNorm, Linear, ParamStore,
                            SelfAttention, adaptive_avg_pool, sinusoidal_pe)


def make_store():
    return ParamStore(dtype=np.float64)


def test_sinusoidal_pe_row_zero():
    pe = sinusoidal_pe(4, 8)
    assert np.allclose(pe[0, 0::2], 0.0)
    assert np.allclose(pe[0, 1::2], 1.0)


def test_sinusoidal_pe_direct_value():
    pe = sinusoidal_pe(2, 64, num=10000.0)
    assert np.isclose(pe[1, 0], np.sin(1.0))
    assert np.isclose(pe[1, 1], np.cos(1.0))
    assert np.isclose(pe[1, 2], np.sin(1.0 / 10000.0 ** (2 / 64)))


def test_sinusoidal_pe_bounded():
    pe = sinusoidal_pe(50, 64)
    assert pe.min() >= -1.0 and pe.max() <= 1.0


def test_sinusoidal_pe_odd_width_rejected():
    with pytest.raises(DataError):
        sinusoidal_pe(4, 7)


def test_param_store_unique_names():
    store = make_store()
    store.register("w", np.ones(3))
    with pytest.raises(DataError):
        store.register("w", np.ones(3))


def test_linear_identity_and_bias():
    store = make_store()
    rng = np.random.default_rng(0)
    lin = Linear(store, "lin.", 3, 3, rng)
    lin.w.data = np.eye(3)
    lin.b.data = np.zeros(3)
    x = ad.Tensor(rng.normal(size=(2, 1, 4, 3)))
    assert np.allclose(lin(x).data, x.data)
    lin.b.data = np.array([1.0, 2.0, 3.0])
    out = lin(ad.Tensor(np.zeros((2, 1, 4, 3))))
    assert np.allclose(out.data, np.broadcast_to([1.0, 2.0, 3.0], (2, 1, 4, 3)))


def test_linear_gradcheck():
    store = make_store()
    rng = np.random.default_rng(1)
    lin = Linear(store, "lin.", 4, 2, rng)

    def loss(w):
        saved = lin.w.data
        lin.w.data = w.data if isinstance(w, ad.Tensor) else w
        out = ad.tsum(ad.sigmoid(ad.matmul(ad.Tensor(x0), w)) ** 2)
        lin.w.data = saved
        return out

    x0 = rng.normal(size=(3, 4))
    gradcheck(loss, lin.w.data.copy())


def test_layer_norm_constant_input():
    store = make_store()
    ln = LayerNorm(store, "ln.", 6)
    out = ln(ad.Tensor(np.full((2, 6), 3.7)))
    assert np.abs(out.data).max() < 1e-6


def test_layer_norm_already_normalized():
    store = make_store()
    ln = LayerNorm(store, "ln.", 2)
    out = ln(ad.Tensor(np.array([[-1.0, 1.0]])))
    assert np.allclose(out.data, [[-1.0, 1.0]], atol=1e-4)   # eps shrinks slightly


def test_layer_norm_gradcheck():
    store = make_store()
    ln = LayerNorm(store, "ln.", 5)
    rng = np.random.default_rng(2)
    x0 = rng.normal(size=(3, 5))
    gradcheck(lambda t: ad.tsum(ln(t) ** 2), x0)


def test_attention_single_token():
    store = make_store()
    rng = np.random.default_rng(3)
    attn = SelfAttention(store, "attn.", 2, 3, rng)
    x = ad.Tensor(rng.normal(size=(1, 2, 1, 3)))
    out = attn(x)
    tokens = x.data.transpose(0, 2, 1, 3).reshape(1, 1, 6)
    expect = 1.0 / (1.0 + np.exp(-(tokens @ attn.wv.data)))
    assert np.allclose(out.data.transpose(0, 2, 1, 3).reshape(1, 1, 6), expect, atol=1e-10)


def test_attention_permutation_equivariance():
    store = make_store()
    rng = np.random.default_rng(4)
    attn = SelfAttention(store, "attn.", 3, 3, rng)
    x0 = rng.normal(size=(1, 3, 5, 3))
    perm = rng.permutation(5)
    out = attn(ad.Tensor(x0)).data
    out_perm = attn(ad.Tensor(x0[:, :, perm, :])).data
    assert np.allclose(out_perm, out[:, :, perm, :], atol=1e-10)


def test_attention_masked_atoms_zero_and_ignored():
    store = make_store()
    rng = np.random.default_rng(5)
    attn = SelfAttention(store, "attn.", 2, 3, rng)
    x = rng.normal(size=(1, 2, 4, 3))
    x_masked = x.copy()
    x_masked[:, :, 2:, :] = 0.0
    mask = np.array([[1.0, 1.0, 0.0, 0.0]])
    out = attn(ad.Tensor(x_masked), mask)
    assert np.all(out.data[:, :, 2:, :] == 0.0)
    # padded tokens must not influence the first two rows
    x_small = x[:, :, :2, :]
    out_small = attn(ad.Tensor(x_small), np.array([[1.0, 1.0]]))
    assert np.allclose(out.data[:, :, :2, :], out_small.data, atol=1e-6)


def test_attention_gradcheck():
    store = make_store()
    rng = np.random.default_rng(6)
    attn = SelfAttention(store, "attn.", 2, 3, rng)
    x0 = rng.normal(size=(1, 2, 3, 3))
    gradcheck(lambda t: ad.tsum(attn(t) ** 2), x0, tol=1e-4)


def test_cross_block_growth_zero_identity():
    store = make_store()
    rng = np.random.default_rng(7)
    block = CrossBlock(store, "cb.", 4, 0, rng)
    x = ad.Tensor(rng.normal(size=(2, 4, 3, 3)))
    assert block(x) is x


def test_cross_block_channel_arithmetic():
    store = make_store()
    rng = np.random.default_rng(8)
    c, g = 5, 2
    blocks = [CrossBlock(store, f"cb{i}.", c + i * g, g, rng) for i in range(3)]
    x = ad.Tensor(rng.normal(size=(1, c, 4, 3)))
    for b in blocks:
        x = b(x)
    assert x.shape[1] == c + 3 * g


def test_cross_block_stack_gradcheck():
    store = make_store()
    rng = np.random.default_rng(9)
    blocks = [CrossBlock(store, f"cb{i}.", 2 + i, 1, rng) for i in range(3)]

    def loss(t):
        z = t
        for b in blocks:
            z = b(z)
        return ad.tsum(ad.sigmoid(z))

    gradcheck(loss, rng.normal(size=(1, 2, 3, 3)))


def test_adaptive_avg_pool_constant():
    x = ad.Tensor(np.full((2, 3, 4, 3), 0.7))
    mask = np.ones((2, 4))
    out = adaptive_avg_pool(x, mask, np.array([4, 4]))
    assert out.shape == (2, 3, 1, 1)
    assert np.allclose(out.data, 0.7)


def test_adaptive_avg_pool_half_and_half():
    x = np.zeros((1, 1, 2, 3))
    x[0, 0, 1, :] = 1.0
    out = adaptive_avg_pool(ad.Tensor(x), np.ones((1, 2)), np.array([2]))
    assert np.isclose(out.data[0, 0, 0, 0], 0.5)


def test_adaptive_avg_pool_respects_mask():
    x = np.ones((1, 1, 3, 3))
    x[0, 0, 2, :] = 100.0                       # padded atom must not count
    mask = np.array([[1.0, 1.0, 0.0]])
    out = adaptive_avg_pool(ad.Tensor(x * mask[:, None, :, None]), mask, np.array([2]))
    assert np.isclose(out.data[0, 0, 0, 0], 1.0)


def test_adaptive_avg_pool_all_masked_rejected():
    with pytest.raises(NumericError):
        adaptive_avg_pool(ad.Tensor(np.zeros((1, 1, 2, 3))), np.zeros((1, 2)), np.array([0]))
