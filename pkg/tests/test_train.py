import numpy as np
import pytest

from cmta.checkpoint import read_checkpoint
from cmta.fixtures import SyntheticSpec, gen_synthetic
from cmta.model import CMTAModel, ModelConfig
from cmta.preprocess import StopwordTable
from cmta.tokenizer import build_vocab
from cmta.train import (
    ComparisonReport,
    Divergence,
    EmptyDataset,
    InsufficientData,
    TrainConfig,
    compare_models,
    encode_records,
    evaluate,
    model_texts,
    train,
)

SW = StopwordTable.default()


@pytest.fixture(scope="module")
def data():
    recs = gen_synthetic(SyntheticSpec(languages=("en", "es"), per_cell=6, seed=1))
    vocab = build_vocab(model_texts(recs, SW), 400)
    cfg = ModelConfig(vocab_size=len(vocab), max_len=32, hidden=16, layers=1, heads=2, avg_pool=4, max_pool=4,
                      conv_channels=(8, 8, 8), dense_dims=(16, 8, 8, 3))
    return recs, vocab, cfg


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.batch_size, c.epochs, c.lr) == (32, 10, 1e-4)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)


def test_history_and_determinism(data, tmp_path):
    recs, vocab, cfg = data
    runs = []
    for d in ("a", "b"):
        m = CMTAModel.initialize(cfg, 0)
        res = train(m, vocab, recs, recs[:6], TrainConfig(epochs=3, batch_size=8, lr=1e-3, seed=4), SW,
                    tmp_path / d)
        runs.append(res)
        assert len(res.history) == 3
        assert res.steps == 3 * int(np.ceil(len(recs) / 8))
    for name in ("model.ckpt", "best.ckpt", "history.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    header = (tmp_path / "a" / "history.csv").read_text().splitlines()[0]
    assert header == "epoch,loss,train_acc,val_acc"
    best = read_checkpoint(tmp_path / "a" / "best.ckpt")
    assert best.meta["selected_epoch"] == runs[0].best_epoch
    accs = [e.val_acc for e in runs[0].history.epochs]
    assert accs[runs[0].best_epoch - 1] == max(accs)


def test_zero_lr_leaves_parameters_and_loss(data):
    recs, vocab, cfg = data
    from dataclasses import replace
    m = CMTAModel.initialize(replace(cfg, dropout=0.0), 0)
    before = m.state_dict()
    res = train(m, vocab, recs, [], TrainConfig(epochs=3, batch_size=len(recs), lr=0.0, seed=0), SW)
    for k, v in m.state_dict().items():
        assert np.array_equal(v, before[k])
    losses = [e.loss for e in res.history.epochs]
    # full batch in a different order each epoch: equal up to summation order
    np.testing.assert_allclose(losses, losses[0], rtol=1e-6)


def test_full_batch_single_step(data):
    recs, vocab, cfg = data
    res = train(CMTAModel.initialize(cfg, 0), vocab, recs, [], TrainConfig(epochs=1, batch_size=len(recs)), SW)
    assert res.steps == 1
    res = train(CMTAModel.initialize(cfg, 0), vocab, recs, [], TrainConfig(epochs=1, batch_size=5), SW)
    assert res.steps == int(np.ceil(len(recs) / 5))  # last partial batch is kept


def test_empty_dataset(data):
    _, vocab, cfg = data
    with pytest.raises(EmptyDataset):
        train(CMTAModel.initialize(cfg, 0), vocab, [], [], TrainConfig(), SW)


def test_divergence_guard(data):
    recs, vocab, cfg = data
    m = CMTAModel.initialize(cfg, 0)
    m.params["head.dense4.bias"].data = np.array([np.nan, 0, 0], dtype=np.float32)
    with pytest.raises(Divergence):
        train(m, vocab, recs, [], TrainConfig(epochs=1), SW)


def test_evaluate_dump_and_repeatability(data):
    recs, vocab, cfg = data
    m = CMTAModel.initialize(cfg, 2)
    m1, dump = evaluate(m, vocab, recs, SW)
    m2, _ = evaluate(m, vocab, recs, SW)
    assert m1 == m2
    assert len(dump) == len(recs)
    assert all(d.pred.value == int(np.argmax(d.probs)) for d in dump)
    assert dump[0].to_json().startswith('{"id":')


def test_eval_loss_repeatable(data):
    from cmta import nncore as nn
    recs, vocab, cfg = data
    m = CMTAModel.initialize(cfg, 2)
    enc = encode_records(recs, vocab, cfg.max_len, SW)
    with nn.no_grad():
        a = nn.softmax_cross_entropy(m.forward(enc.ids, enc.segment_ids, enc.mask), enc.labels).data
        b = nn.softmax_cross_entropy(m.forward(enc.ids, enc.segment_ids, enc.mask), enc.labels).data
    assert a == b


def test_compare_models_shape(data):
    recs, vocab, cfg = data
    specs = [("EnglishBERT", "en"), ("SpanishBERT", "es"), ("CMTA", "multilingual")]
    report = compare_models(specs, recs, recs[:6], recs, cfg, TrainConfig(epochs=1, batch_size=16), vocab, SW)
    assert isinstance(report, ComparisonReport)
    assert [(r.model, r.slice) for r in report.rows] == [("EnglishBERT", "en"), ("SpanishBERT", "es"), ("CMTA", "all")]
    assert [r.slice for r in report.breakdown] == ["en", "es"]
    for r in report.rows + report.breakdown:
        assert all(0.0 <= v <= 1.0 for v in (r.precision, r.recall, r.f1, r.accuracy))
    assert report.to_csv().splitlines()[0] == "model,slice,precision,recall,f1,accuracy,n"
    assert "macro" in report.to_text()
    with pytest.raises(InsufficientData):
        compare_models([("FrenchBERT", "fr")], recs, [], recs, cfg, TrainConfig(epochs=1), vocab, SW)


def test_compare_duplicated_slices_are_equal(data):
    # the same data under two language tags trains to identical rows
    recs, vocab, cfg = data
    from dataclasses import replace
    en = [r for r in recs if r.language == "en"]
    fr = [replace(r, id=r.id + "-fr", language="fr") for r in en]
    both = en + fr
    report = compare_models([("A", "en"), ("B", "fr")], both, [], both, cfg, TrainConfig(epochs=1), vocab, SW)
    a, b = report.rows
    assert (a.precision, a.recall, a.f1, a.accuracy) == (b.precision, b.recall, b.f1, b.accuracy)
