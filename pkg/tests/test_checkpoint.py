import struct

import numpy as np
import pytest

from cmta.checkpoint import (
    CorruptFile,
    VersionMismatch,
    VocabHashMismatch,
    from_bytes,
    load_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from cmta.model import CMTAModel, ModelConfig
from cmta.tokenizer import build_vocab


@pytest.fixture
def saved(tmp_path):
    vocab = build_vocab(["alpha beta gamma", "beta delta"], 40)
    model = CMTAModel.initialize(ModelConfig(vocab_size=len(vocab), max_len=64, hidden=16, layers=1, heads=2), 3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path, vocab, {"epochs_run": 2, "final_val_acc": 0.5})
    return model, vocab, path


def test_round_trip_bitwise(saved):
    model, vocab, path = saved
    loaded = load_checkpoint(path, vocab)
    assert loaded.config == model.config
    assert loaded.meta == {"epochs_run": 2, "final_val_acc": 0.5}
    assert list(loaded.params) == list(model.params)
    for k, t in model.params.items():
        assert loaded.params[k].data.dtype == t.data.dtype
        assert loaded.params[k].data.tobytes() == t.data.tobytes()


def test_save_is_byte_deterministic(saved, tmp_path):
    model, vocab, path = saved
    again = tmp_path / "again.ckpt"
    save_checkpoint(load_checkpoint(path, vocab), again, vocab)
    assert again.read_bytes() == path.read_bytes()


def test_header_layout(saved):
    _, vocab, path = saved
    raw = path.read_bytes()
    assert raw[:4] == b"CMTA" and struct.unpack_from("<I", raw, 4) == (1,)
    assert read_checkpoint(path).vocab_sha256 == vocab.sha256()


def test_wrong_vocab(saved):
    _, _, path = saved
    with pytest.raises(VocabHashMismatch):
        load_checkpoint(path, build_vocab(["other words"], 30))


def test_truncated_and_flipped(saved):
    _, _, path = saved
    raw = path.read_bytes()
    with pytest.raises(CorruptFile):
        from_bytes(raw[: len(raw) // 2])
    with pytest.raises(CorruptFile):
        from_bytes(raw[:10])
    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0xFF
    with pytest.raises(CorruptFile) as exc:
        from_bytes(bytes(flipped))
    assert exc.value.offset >= 0
    with pytest.raises(CorruptFile):
        from_bytes(b"XXXX" + raw[4:])


def test_version_mismatch(saved):
    import zlib
    _, _, path = saved
    raw = bytearray(path.read_bytes()[:-4])
    raw[4:8] = struct.pack("<I", 99)
    raw += struct.pack("<I", zlib.crc32(bytes(raw)) & 0xFFFFFFFF)
    with pytest.raises(VersionMismatch):
        from_bytes(bytes(raw))


def test_float64_params_survive(tmp_path):
    vocab = build_vocab(["a b"], 20)
    m = CMTAModel.initialize(ModelConfig(vocab_size=len(vocab), max_len=16, hidden=8, layers=1, heads=1,
                                         avg_pool=4, max_pool=4, dtype="float64"), 0)
    save_checkpoint(m, tmp_path / "x.ckpt", vocab)
    n = load_checkpoint(tmp_path / "x.ckpt")
    assert all(np.array_equal(n.params[k].data, m.params[k].data) for k in m.params)
    assert n.params["embed.token"].data.dtype == np.float64
