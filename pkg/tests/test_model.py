import numpy as np
import pytest

from cmta import nncore as nn
from cmta.corpus import MisinfoClass
from cmta.model import CMTAModel, ConfigError, ModelConfig, predict
from cmta.tokenizer import Vocab, build_vocab, encode_batch

from gradsuite import head_errors


def desk(**kw):
    base = dict(vocab_size=40, max_len=64, hidden=32, layers=2, heads=2)
    base.update(kw)
    return ModelConfig(**base)


def _batch(cfg, rng, b=3):
    ids = rng.integers(4, cfg.vocab_size, size=(b, cfg.max_len))
    mask = np.ones((b, cfg.max_len), dtype=np.int64)
    for i in range(b):
        n = int(rng.integers(3, cfg.max_len))
        ids[i, n:] = 0
        mask[i, n:] = 0
    return ids, np.zeros_like(ids), mask


def test_config_invariants():
    with pytest.raises(ConfigError):
        desk(max_len=60)
    with pytest.raises(ConfigError):
        desk(max_len=72)  # 72/8 = 9 not divisible by 8
    with pytest.raises(ConfigError):
        desk(dense_dims=(8, 8, 3))
    with pytest.raises(ConfigError):
        desk(dense_dims=(8, 8, 8, 4))
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"vocab_size": 10, "hiden": 3})
    assert ModelConfig.from_dict(desk().to_dict()) == desk()


def test_full_scale_shapes():
    cfg = ModelConfig.full_scale(vocab_size=100)
    assert (cfg.hidden, cfg.layers, cfg.max_len, cfg.ff_dim) == (768, 12, 128, 3072)
    assert cfg.head_lengths == (16, 2)
    assert len(cfg.dense_dims) == 4 and cfg.dense_dims[-1] == 3
    assert (cfg.avg_pool, cfg.max_pool, cfg.dropout) == (8, 8, 0.36)


def test_hidden_states_length_and_shapes():
    rng = np.random.default_rng(0)
    for layers in (1, 2, 3):
        cfg = desk(layers=layers)
        m = CMTAModel.initialize(cfg, 0)
        ids, segs, mask = _batch(cfg, rng)
        states = m.encoder_forward(m.embed_inputs(ids, segs), mask)
        assert len(states) == layers + 1
        assert all(s.shape == (3, 64, 32) for s in states)


def test_position_term_distinguishes_repeated_tokens():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 0)
    ids = np.full((1, 64), 7)
    e = m.embed_inputs(ids).data
    assert not np.allclose(e[0, 0], e[0, 5])
    np.testing.assert_array_equal(e, m.embed_inputs(ids).data)
    with pytest.raises(IndexError):
        m.embed_inputs(np.full((1, 64), 40))


def test_head_lengths_and_output():
    cfg = ModelConfig(vocab_size=40, max_len=128, hidden=16, layers=1, heads=2)
    m = CMTAModel.initialize(cfg, 0)
    trace = []
    rep = m.conv_head_forward(nn.Tensor(np.random.default_rng(0).normal(size=(2, 128, 16)).astype(np.float32)),
                              trace=trace)
    assert [s[1] for s in trace[:2]] == [16, 2]
    assert rep.shape == (2, cfg.conv_channels[2])


def test_zero_input_zero_bias_gives_zero_head_output():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 0)
    for n in ("head.conv1.bias", "head.conv2.bias", "head.conv3.bias"):
        m.params[n].data = np.zeros_like(m.params[n].data)
    out = m.conv_head_forward(nn.Tensor(np.zeros((1, 64, 32), dtype=np.float32)))
    assert not out.data.any()


def test_classify_contract():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 1)
    rng = np.random.default_rng(1)
    ids, segs, mask = _batch(cfg, rng, b=5)
    p = m.predict_proba(ids, segs, mask)
    assert p.shape == (5, 3)
    np.testing.assert_allclose(p.sum(1), 1.0, atol=1e-6)
    assert np.all((p > 0) & (p < 1))
    np.testing.assert_array_equal(p, m.predict_proba(ids, segs, mask))
    with pytest.raises(nn.NonFiniteInput):
        m.classify(nn.Tensor(np.array([[np.nan] * 32], dtype=np.float32)))
    assert MisinfoClass(int(np.argmax([0.7, 0.2, 0.1]))) is MisinfoClass.FALSE


def test_attention_block_exactly_ignores_pad_tokens():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 2)
    rng = np.random.default_rng(2)
    ids, segs, mask = _batch(cfg, rng)
    other = ids.copy()
    other[mask == 0] = rng.integers(4, cfg.vocab_size, size=int((mask == 0).sum()))
    sa = m.encoder_forward(m.embed_inputs(ids, segs), mask)
    sb = m.encoder_forward(m.embed_inputs(other, segs), mask)
    real = mask.astype(bool)
    for a, b in zip(sa, sb):
        np.testing.assert_array_equal(a.data[real], b.data[real])


def test_full_model_pad_invariance():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 3)
    rng = np.random.default_rng(3)
    ids, segs, mask = _batch(cfg, rng)
    other = ids.copy()
    other[mask == 0] = rng.integers(4, cfg.vocab_size, size=int((mask == 0).sum()))
    np.testing.assert_array_equal(m.predict_proba(ids, segs, mask), m.predict_proba(other, segs, mask))
    # without head-side masking, pad rows reach the convolution and do move the output
    loose = CMTAModel(desk(mask_pad_in_head=False), m.state_dict())
    diff = np.abs(loose.predict_proba(ids, segs, mask) - loose.predict_proba(other, segs, mask)).max()
    assert diff > 0


def test_dropout_only_in_training():
    cfg = desk()
    m = CMTAModel.initialize(cfg, 4)
    ids, segs, mask = _batch(cfg, np.random.default_rng(4))
    a = m.forward(ids, segs, mask, training=True, rng=np.random.default_rng(0)).data
    b = m.forward(ids, segs, mask, training=True, rng=np.random.default_rng(1)).data
    assert not np.array_equal(a, b)
    with pytest.raises(ValueError):
        m.forward(ids, segs, mask, training=True)


def test_composed_head_gradients():
    errs = head_errors(seed=5)
    assert len(errs) >= 20 and max(errs) < 1e-3


def test_end_to_end_gradient_desk_config():
    cfg = ModelConfig(vocab_size=12, max_len=16, hidden=16, layers=1, heads=2, avg_pool=4, max_pool=4,
                      conv_channels=(4, 4, 4), dense_dims=(8, 6, 4, 3), dtype="float64")
    model = CMTAModel.initialize(cfg, 7)
    rng = np.random.default_rng(7)
    ids, segs, mask = _batch(cfg, rng, b=2)
    gold = np.array([0, 2])
    names = ["embed.token", "embed.ln.gamma", "encoder.0.attn.wq", "encoder.0.attn.bv", "encoder.0.ff.w2",
             "encoder.0.ln2.beta", "head.conv1.kernel", "head.conv2.bias", "head.dense1.weight",
             "head.dense4.bias"]

    def fn(*tensors):
        for n, t in zip(names, tensors):
            model.params[n] = t
        return nn.softmax_cross_entropy(model.forward(ids, segs, mask), gold)

    err = nn.grad_check(fn, [model.params[n].data for n in names])
    assert err < 1e-3


def test_predict_consistency():
    vocab = build_vocab(["fake vaccine claim", "true report"], 60)
    m = CMTAModel.initialize(desk(vocab_size=len(vocab)), 0)
    cls, probs = predict("fake vaccine claim", vocab, m)
    assert cls is MisinfoClass(int(np.argmax(probs)))
    cls2, probs2 = predict("fake vaccine claim", vocab, m)
    assert cls2 is cls and np.array_equal(probs, probs2)


def test_state_dict_round_trip_is_bitwise():
    m = CMTAModel.initialize(desk(), 9)
    n = CMTAModel(m.config, m.state_dict())
    for k in m.params:
        assert np.array_equal(m.params[k].data, n.params[k].data)


def test_encode_batch_dtype_feeds_model():
    v = Vocab(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "a"])
    ids, segs, mask = encode_batch(["a a"], v, 64)
    m = CMTAModel.initialize(desk(vocab_size=len(v)), 0)
    assert m.predict_proba(ids, segs, mask).shape == (1, 3)
