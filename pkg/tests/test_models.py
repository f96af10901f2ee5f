import os

import numpy as np
import pytest

from sdtgan import tensor as tc
from sdtgan.data import CorpusConfig, encode_text, render_mel, sample_batch
from sdtgan.models import (ATTENTION_ORDER, CondTensors, Discriminator, Generator, ModelConfig, StageSpec,
                           build_stage, count_params, discriminate, generate, load_tensors, save_tensors)
from sdtgan.tensor import DimensionError, Tensor
from sdtgan.train import TrainState

from conftest import small_model


@pytest.fixture(scope="module")
def desk():
    cfg = ModelConfig()
    return cfg, Generator(cfg), Discriminator(cfg)


def test_sdt_ordering(desk):
    _, G, D = desk
    g_sets = [set(s.block_names) for s in G.stages]
    d_sets = [set(s.block_names) for s in D.stages]
    assert g_sets == [{"self", "word", "sentence"}, {"word", "sentence"}, {"sentence"}]
    assert d_sets == g_sets[::-1]
    assert [len(s) for s in g_sets] == sorted((len(s) for s in g_sets), reverse=True)
    assert [s.spec.resolution for s in G.stages] == [(16, 16), (32, 32), (64, 64)]
    assert [s.spec.resolution for s in D.stages] == [(32, 32), (16, 16), (8, 8)]


def test_blocks_follow_fixed_order():
    rng = np.random.default_rng(0)
    st = build_stage(StageSpec((8, 8), 4, ("self", "word", "sentence")), 4, 8, rng)
    assert st.block_names == list(ATTENTION_ORDER)
    assert build_stage(StageSpec((8, 8), 4, ("self",)), 4, 8, rng).block_names == ["self"]
    with pytest.raises(ValueError):
        build_stage(StageSpec((8, 8), 4, ("global",)), 4, 8, rng)
    with pytest.raises(ValueError):
        build_stage(StageSpec((8, 8), 4, ()), 4, 8, rng)


def test_empty_stage_is_plain_conv():
    rng = np.random.default_rng(1)
    st = build_stage(StageSpec((8, 8), 3, ()), 2, 8, rng, mode="down", allow_empty=True)
    x = rng.standard_normal((1, 16, 16, 2))
    expected = tc.leaky_relu(tc.add(tc.conv2d(Tensor(x), st.conv_w, 2), st.conv_b), 0.2).data
    conds = CondTensors.from_conds([encode_text([0], 8)])
    np.testing.assert_array_equal(st(Tensor(x), conds).data, expected)


def test_generate_shape_range_and_determinism(desk):
    cfg, G, _ = desk
    cond = encode_text([3, 7], cfg.c_c)
    z = np.random.default_rng(0).standard_normal(cfg.c_z).astype(np.float32)
    a, b = generate(z, [cond], G), generate(z, [cond], G)
    assert a.shape == (1, 64, 64, 1)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.min() > 0 and a.data.max() < 1


def test_generate_rejects_bad_noise(desk):
    cfg, G, _ = desk
    with pytest.raises(DimensionError):
        generate(np.zeros(cfg.c_z + 1), [encode_text([1], cfg.c_c)], G)


def test_zeroed_convs_give_constant_output():
    cfg = small_model()
    G = Generator(cfg)
    for name, p in G.named_parameters().items():
        if name.endswith("conv.w") or name == "head.w":
            p.data = np.zeros_like(p.data)
    rng = np.random.default_rng(2)
    conds = CondTensors.from_conds([encode_text([i], cfg.c_c) for i in range(3)])
    out = G.forward(Tensor(rng.standard_normal((3, cfg.c_z))), conds).data
    np.testing.assert_array_equal(out, out.flat[0])


def test_word_attention_is_per_sample():
    # samples with different caption lengths are batched in groups; results
    # must match running each sample alone
    cfg = small_model()
    G = Generator(cfg)
    for p in G.parameters():
        p.data = p.data + 0.05  # non-zero v so attention changes the output
    conds = [encode_text(ids, cfg.c_c) for ids in ([1], [2, 3, 4], [5, 6], [7])]
    z = np.random.default_rng(3).standard_normal((4, cfg.c_z))
    joint = G.forward(Tensor(z), CondTensors.from_conds(conds)).data
    for i in range(4):
        alone = G.forward(Tensor(z[i:i + 1]), CondTensors.from_conds([conds[i]])).data
        np.testing.assert_allclose(joint[i], alone[0], atol=1e-5)


def test_discriminator_outputs(desk):
    cfg, _, D = desk
    corpus = CorpusConfig.build()
    batch = sample_batch(corpus, 3, 0)
    out = discriminate(batch.mels, batch.conds, D)
    R = D.local_resolution[0] * D.local_resolution[1]
    assert out.logit.shape == (3,)
    assert out.local.shape == (3, R, cfg.d_channels[0])
    assert out.global_.shape == (3, cfg.c_g)
    np.testing.assert_allclose(np.linalg.norm(out.emb.g.data, axis=1), 1, atol=1e-5)


def test_discriminator_logits_finite():
    cfg = small_model()
    D = Discriminator(cfg)
    rng = np.random.default_rng(4)
    for _ in range(100):
        mel = rng.uniform(0, 1, (2, cfg.F, cfg.T, 1))
        conds = CondTensors.from_conds([encode_text([int(rng.integers(8))], cfg.c_c) for _ in range(2)])
        assert np.all(np.isfinite(D.forward(Tensor(mel), conds).logit.data))


def test_local_features_see_event_rectangle(desk):
    cfg, _, D = desk
    corpus = CorpusConfig.build()
    e = corpus.event(0)
    a = render_mel([], 64, 64)
    b = render_mel([e], 64, 64)
    conds = [encode_text([0], cfg.c_c)]
    la = discriminate(a, conds, D).local.data[0]
    lb = discriminate(b, conds, D).local.data[0]
    F1, T1 = D.local_resolution
    diff = np.abs(la - lb).reshape(F1, T1, -1).max(-1)
    inside = diff[e.f_lo // 2:(e.f_hi + 1) // 2, e.onset // 2:(e.offset + 1) // 2]
    assert inside.min() > 0
    # one cell of receptive field beyond the rectangle, nothing changes
    far = np.ones_like(diff, bool)
    far[max(e.f_lo // 2 - 1, 0):(e.f_hi + 1) // 2 + 1, max(e.onset // 2 - 1, 0):(e.offset + 1) // 2 + 1] = False
    assert diff[far].max() == 0


def test_param_count(desk):
    cfg, G, D = desk
    total = count_params(G) + count_params(D)
    assert total < 1_000_000
    assert count_params(Tensor(np.zeros((64, 32)))) == 64 * 32
    assert count_params(Generator(cfg)) == count_params(G)


def test_checkpoint_roundtrip_bytes(tmp_path):
    state = TrainState.fresh(small_model())
    state.save(tmp_path / "a", {"text_seed": 0, "vocab_size": 8})
    loaded, manifest = TrainState.load(tmp_path / "a")
    loaded.save(tmp_path / "b", {"text_seed": manifest["text_seed"], "vocab_size": manifest["vocab_size"]})
    names = sorted(os.listdir(tmp_path / "a"))
    assert names == sorted(os.listdir(tmp_path / "b"))
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_checkpoint_shape_mismatch(tmp_path):
    G = Generator(small_model())
    tensors = {k: v.data for k, v in G.named_parameters().items()}
    tensors["stem.b"] = np.zeros(3, np.float32)
    save_tensors(tmp_path, tensors, {})
    _, loaded = load_tensors(tmp_path)
    from sdtgan.models import assign
    with pytest.raises(DimensionError):
        assign(G.named_parameters(), loaded)


def test_attention_override():
    cfg = small_model(attention_override=("sentence",))
    assert cfg.g_attention() == cfg.d_attention() == [("sentence",)] * 3
    G = Generator(cfg)
    assert all(s.block_names == ["sentence"] for s in G.stages)


def test_config_digest_stable():
    a, b = ModelConfig(), ModelConfig.from_dict(ModelConfig().to_dict())
    assert a.digest() == b.digest()
    assert a.digest() != ModelConfig(c_g=32).digest()
