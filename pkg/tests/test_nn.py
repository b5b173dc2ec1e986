"""Neural blocks: normalization semantics, attention, module traversal."""

import numpy as np
import pytest

from trifuse import nn
from trifuse.tensor import Param, Tensor


def rng():
    return np.random.default_rng(11)


def test_linear_identity_and_affine():
    lin = nn.Linear(3, 3, rng())
    lin.weight.data = np.eye(3)
    lin.bias.data = np.zeros(3)
    x = np.arange(6.0).reshape(3, 2)
    assert np.allclose(lin(Tensor(x)).data, x)
    lin.weight.data = np.array([[1.0, 0.0, 0.0], [0.0, 2.0, 0.0],
                                [0.0, 0.0, 3.0]])
    lin.bias.data = np.array([1.0, 1.0, 1.0])
    got = lin(Tensor(x)).data
    assert np.allclose(got, x * np.array([[1.0], [2.0], [3.0]]) + 1.0)


def test_linear_rejects_wrong_input_dim():
    lin = nn.Linear(3, 2, rng())
    with pytest.raises(ValueError):
        lin(Tensor(np.ones((4, 5))))


def test_layer_norm_column_statistics():
    ln = nn.LayerNorm(16)
    x = Tensor(np.random.default_rng(0).normal(size=(16, 7)) * 5 + 2)
    y = ln(x).data
    assert np.abs(y.mean(axis=0)).max() < 1e-7
    assert np.abs(y.var(axis=0) - 1.0).max() < 1e-6


def test_batch_norm_train_uses_batch_stats():
    bn = nn.BatchNorm(2)
    x = Tensor(np.array([[1.0, 3.0], [10.0, 10.0]]))
    y = bn(x).data
    assert np.allclose(y[0], [-1.0, 1.0], atol=1e-4)
    assert np.allclose(y[1], [0.0, 0.0], atol=1e-6)  # constant channel


def test_batch_norm_requires_two_tokens_in_train():
    bn = nn.BatchNorm(2)
    with pytest.raises(ValueError):
        bn(Tensor(np.ones((2, 1))))
    bn.eval()
    bn(Tensor(np.ones((2, 1))))  # eval mode is fine with one token


def test_batch_norm_running_stats_and_eval():
    bn = nn.BatchNorm(1, momentum=1.0)
    x = np.array([[1.0, 2.0, 3.0, 4.0]])
    bn(Tensor(x))
    assert np.allclose(bn.running_mean, [2.5])
    assert np.allclose(bn.running_var, [x.var(ddof=1)])
    bn.eval()
    got = bn(Tensor(x)).data
    want = (x - 2.5) / np.sqrt(x.var(ddof=1) + bn.eps)
    assert np.abs(got - want).max() < 1e-5


def test_batch_norm_momentum_blend():
    bn = nn.BatchNorm(1, momentum=0.1)
    bn(Tensor(np.array([[10.0, 10.0]])))
    assert np.allclose(bn.running_mean, [0.9 * 0.0 + 0.1 * 10.0])


def test_depthwise_conv_odd_kernel_only():
    with pytest.raises(ValueError):
        nn.DepthwiseConv1d(2, 4, rng())


def test_mhsa_single_token_is_value_projection():
    att = nn.MultiHeadSelfAttention(8, 2, rng())
    x = Tensor(np.random.default_rng(1).normal(size=(8, 1)))
    got = att(x).data
    v = att.wv(x)
    want = att.wo(v).data
    assert np.allclose(got, want, atol=1e-12)


def test_mhsa_rows_stochastic_and_uniform_inputs():
    att = nn.MultiHeadSelfAttention(8, 4, rng())
    x = Tensor(np.ones((8, 5)))
    _, weights = att(x, return_weights=True)
    w = weights.data  # [heads, n, n]
    assert np.abs(w.sum(axis=-1) - 1.0).max() < 1e-7
    assert np.abs(w - 1.0 / 5.0).max() < 1e-12  # identical tokens


def test_mhsa_rejects_indivisible_heads():
    with pytest.raises(ValueError):
        nn.MultiHeadSelfAttention(6, 4, rng())


def test_ffn_zero_weights_give_zero():
    ff = nn.FeedForward(4, rng(), ratio=2)
    for p in ff.params():
        p.data[...] = 0.0
    out = ff(Tensor(np.random.default_rng(2).normal(size=(4, 3))))
    assert np.all(out.data == 0.0)


def test_ffn_hidden_ratio():
    ff = nn.FeedForward(6, rng(), ratio=4)
    assert ff.lin1.weight.shape == (24, 6)
    assert ff.lin2.weight.shape == (6, 24)


def test_module_traversal_and_state_roundtrip():
    class Tiny(nn.Module):
        def __init__(self, r):
            self.lin = nn.Linear(2, 2, r)
            self.stack = [nn.LayerNorm(2), nn.LayerNorm(2)]
            self.by_name = {"a": nn.BatchNorm(2)}

    tiny = Tiny(rng())
    names = [n for n, _ in tiny.named_params()]
    assert "lin.weight" in names and "stack.0.gain" in names
    assert "by_name.a.shift" in names
    buffers = [n for n, _ in tiny.named_buffers()]
    assert "by_name.a.running_mean" in buffers

    state = {k: (v.copy(), f) for k, (v, f) in tiny.state_dict().items()}
    for p in tiny.params():
        p.data[...] = 7.0
    tiny.load_state_dict(state)
    assert not np.any(tiny.lin.weight.data == 7.0)

    with pytest.raises(KeyError):
        tiny.load_state_dict({**state, "bogus": (np.ones(1), False)})
    partial = dict(state)
    partial.pop("lin.weight")
    with pytest.raises(KeyError):
        tiny.load_state_dict(partial)


def test_freeze_cascades_and_counts():
    lin = nn.Linear(3, 4, rng())
    n_all = lin.num_trainable()
    assert n_all == 3 * 4 + 4
    lin.freeze()
    assert lin.num_trainable() == 0
    assert all(p.frozen for p in lin.params())


def test_train_eval_flags_cascade():
    class Holder(nn.Module):
        def __init__(self):
            self.bn = nn.BatchNorm(2)

    h = Holder()
    assert h.bn.training
    h.eval()
    assert not h.bn.training
    h.train()
    assert h.bn.training
