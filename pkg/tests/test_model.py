"""Fusion model: stream plumbing, toggles, feature assembly."""

import numpy as np

from trifuse.backbone import BackboneConfig
from trifuse.model import FusionModel, ModelToggles
from trifuse.prompts import MODALITIES


def _cfg():
    return BackboneConfig(embed_dim=8, layers=2, heads=2, patch=4,
                          image_h=8, image_w=8, channels=1, n_prompts=2)


def _model(seed=0, **toggle_kw):
    toggles = ModelToggles(**toggle_kw) if toggle_kw else ModelToggles()
    return FusionModel(_cfg(), toggles, num_ids=4,
                       rng=np.random.default_rng(seed),
                       d_state=2, dt_rank=2, ma_blocks=1)


def _sample(seed=0):
    rng = np.random.default_rng(seed)
    return {m: rng.normal(size=(1, 8, 8)) for m in MODALITIES}


def test_forward_shapes_and_sequence_lengths():
    model = _model().eval()
    f_cls, f_ma = model.forward_sample(_sample())
    assert f_cls.shape == (24, 1)
    assert f_ma.shape == (24, 1)
    want_len = 1 + _cfg().n_patches + 3 * 2
    for m in MODALITIES:
        assert model.last_seq[m] == [want_len, want_len]


def test_sequences_without_prompts():
    model = _model(srp=False).eval()
    model.forward_sample(_sample())
    want_len = 1 + _cfg().n_patches
    for m in MODALITIES:
        assert model.last_seq[m] == [want_len] * 2


def test_streams_share_backbone_and_adapters():
    model = _model(srp=False).eval()
    image = _sample()["n"]
    outs = [model._run_stream(m, image).data for m in MODALITIES]
    assert np.array_equal(outs[0], outs[1])
    assert np.array_equal(outs[0], outs[2])


def test_prompts_differentiate_streams():
    model = _model(srp=True).eval()
    image = _sample()["n"]
    outs = [model._run_stream(m, image).data for m in MODALITIES]
    assert not np.allclose(outs[0], outs[1])
    assert not np.allclose(outs[1], outs[2])


def test_class_feature_stacks_stream_tokens():
    model = _model().eval()
    sample = _sample()
    f_cls, _ = model.forward_sample(sample)
    for i, m in enumerate(MODALITIES):
        stream = model._run_stream(m, sample[m])
        assert np.allclose(f_cls.data[8 * i:8 * (i + 1), 0],
                           stream.data[:, 0], atol=1e-14)


def test_toggles_control_feature_width_and_heads():
    with_ma = _model().eval()
    without = _model(ma=False).eval()
    assert without.aggregator is None
    assert without.heads.ma_head is None
    assert with_ma.heads.ma_head is not None

    _, f_ma = without.forward_sample(_sample())
    assert f_ma is None

    samples = [_sample(s) for s in range(3)]
    assert with_ma.features(samples).shape == (48, 3)
    assert without.features(samples).shape == (24, 3)


def test_batch_forward_concatenates_sample_columns():
    model = _model().eval()
    samples = [_sample(s) for s in range(2)]
    f_cls, f_ma = model.forward_batch(samples)
    assert f_cls.shape == (24, 2)
    assert f_ma.shape == (24, 2)
    one_cls, one_ma = model.forward_sample(samples[1])
    assert np.array_equal(f_cls.data[:, 1:], one_cls.data)
    assert np.array_equal(f_ma.data[:, 1:], one_ma.data)


def test_frozen_backbone_keeps_zero_gradients():
    model = _model()
    model.train()
    f_cls, f_ma = model.forward_sample(_sample())
    (f_cls.sum() + f_ma.sum()).backward()
    for name, p in model.backbone.named_params():
        assert np.all(p.grad == 0.0), f"backbone.{name} received gradient"
    moved = sum(np.abs(p.grad).sum() > 0 for p in model.trainable_params())
    assert moved > 0
