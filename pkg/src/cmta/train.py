"""Training loop, evaluation and the monolingual-vs-multilingual comparison."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import nncore as nn
from .checkpoint import Checkpoint, save_checkpoint
from .corpus import MisinfoClass, TextRecord
from .metrics import Metrics, compute_metrics
from .model import CMTAModel, ModelConfig
from .preprocess import StopwordTable, clean_text
from .tokenizer import Vocab, encode_batch

logger = logging.getLogger(__name__)

# independent random streams derived from one root seed
STREAM_INIT, STREAM_SHUFFLE, STREAM_DROPOUT = 0, 1, 2


def stream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *keys])


class TrainingError(RuntimeError):
    pass


class EmptyDataset(TrainingError):
    pass


class Divergence(TrainingError):
    pass


class InsufficientData(ValueError):
    def __init__(self, language: str, split: str = "train"):
        super().__init__(f"no {split} records for language {language!r}")
        self.language = language


@dataclass
class TrainConfig:
    batch_size: int = 32
    epochs: int = 10
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    eval_every_epoch: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    val_acc: Optional[float]
    seconds: float
    val_metrics: Optional[Metrics] = None


@dataclass
class TrainHistory:
    epochs: list[EpochStats] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epochs)

    def to_csv(self, include_seconds: bool = False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["epoch", "loss", "train_acc", "val_acc"] + (["seconds"] if include_seconds else [])
        w.writerow(header)
        for e in self.epochs:
            row = [e.epoch, repr(e.loss), repr(e.train_acc), "" if e.val_acc is None else repr(e.val_acc)]
            if include_seconds:
                row.append(f"{e.seconds:.3f}")
            w.writerow(row)
        return buf.getvalue()

    def write_csv(self, path: str | Path, include_seconds: bool = False) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv(include_seconds))


@dataclass
class EncodedSet:
    ids: np.ndarray
    segment_ids: np.ndarray
    mask: np.ndarray
    labels: Optional[np.ndarray]
    record_ids: list[str]

    def __len__(self) -> int:
        return len(self.ids)


def model_texts(records: Sequence[TextRecord], stopwords: StopwordTable | None) -> list[str]:
    """Cleaned text per record (reusing ``clean_text`` when the record already has it)."""
    table = stopwords if stopwords is not None else StopwordTable()
    return [r.clean_text if r.clean_text is not None else clean_text(r.raw_text, r.language, table).text
            for r in records]


def encode_records(records: Sequence[TextRecord], vocab: Vocab, max_len: int,
                   stopwords: StopwordTable | None = None, require_labels: bool = True) -> EncodedSet:
    ids, segs, mask = encode_batch(model_texts(records, stopwords), vocab, max_len)
    labels = None
    if require_labels:
        missing = [r.id for r in records if r.gold_class is None]
        if missing:
            raise ValueError(f"records without gold class: {missing[:3]}")
        labels = np.asarray([int(r.gold_class) for r in records], dtype=np.int64)
    return EncodedSet(ids, segs, mask, labels, [r.id for r in records])


@dataclass
class TrainResult:
    final: Checkpoint
    best: Checkpoint
    best_epoch: int
    history: TrainHistory
    steps: int


def _predict_encoded(model: CMTAModel, data: EncodedSet, batch_size: int = 256) -> np.ndarray:
    out = []
    for s in range(0, len(data), batch_size):
        sl = slice(s, s + batch_size)
        out.append(model.predict_proba(data.ids[sl], data.segment_ids[sl], data.mask[sl]))
    if not out:
        return np.zeros((0, model.config.num_classes))
    return np.concatenate(out)


def train(model: CMTAModel, vocab: Vocab, train_records: Sequence[TextRecord],
          val_records: Sequence[TextRecord], cfg: TrainConfig,
          stopwords: StopwordTable | None = None, output_dir: str | Path | None = None) -> TrainResult:
    """Minimise mean batch cross-entropy with AdamW; the model is updated in place.

    Shuffling and dropout masks come from streams derived from ``cfg.seed``, so
    identical inputs give bit-identical parameters. When ``output_dir`` is set
    the best-validation and final checkpoints plus ``history.csv`` are written.
    """
    if not train_records:
        raise EmptyDataset("training set is empty")
    mc = model.config
    data = encode_records(train_records, vocab, mc.max_len, stopwords)
    val = encode_records(val_records, vocab, mc.max_len, stopwords) if val_records else None
    opt = nn.AdamW(model.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.eps,
                   weight_decay=cfg.weight_decay)
    dropout_rng = stream(cfg.seed, STREAM_DROPOUT)
    history = TrainHistory()
    vocab_hash = vocab.sha256()
    best_state = model.state_dict()
    best_acc = -1.0
    best_epoch = 0
    steps = 0
    n = len(data)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = stream(cfg.seed, STREAM_SHUFFLE, epoch).permutation(n)
        loss_sum = 0.0
        correct = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            try:
                logits = model.forward(data.ids[idx], data.segment_ids[idx], data.mask[idx],
                                       training=True, rng=dropout_rng)
                loss = nn.softmax_cross_entropy(logits, data.labels[idx])
            except nn.NonFiniteInput as exc:
                raise Divergence(f"non-finite activations at epoch {epoch}, step {steps + 1}: {exc}") from None
            value = float(loss.data)
            if not np.isfinite(value):
                raise Divergence(f"loss became {value} at epoch {epoch}, step {steps + 1}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            steps += 1
            loss_sum += value * len(idx)
            correct += int((logits.data.argmax(axis=-1) == data.labels[idx]).sum())
        val_metrics = None
        if val is not None and cfg.eval_every_epoch:
            val_metrics = compute_metrics(_predict_encoded(model, val).argmax(axis=-1), val.labels)
        stats = EpochStats(epoch, loss_sum / n, correct / n,
                           None if val_metrics is None else val_metrics.accuracy,
                           time.perf_counter() - t0, val_metrics)
        history.epochs.append(stats)
        logger.info("epoch %d loss %.4f train_acc %.4f val_acc %s (%.1fs)", epoch, stats.loss,
                    stats.train_acc, "-" if stats.val_acc is None else f"{stats.val_acc:.4f}", stats.seconds)
        # selection on validation accuracy; without a validation set the latest epoch wins
        score = stats.val_acc if stats.val_acc is not None else float(epoch)
        if score > best_acc:
            best_acc = score
            best_epoch = epoch
            best_state = model.state_dict()

    last = history.epochs[-1]
    final_meta = {"epochs_run": len(history), "steps": steps, "final_loss": last.loss,
                  "final_train_acc": last.train_acc, "final_val_acc": last.val_acc, "seed": cfg.seed}
    best_meta = dict(final_meta, selected_epoch=best_epoch, selection="val_acc")
    final = Checkpoint(mc, model.state_dict(), vocab_hash, final_meta)
    best = Checkpoint(mc, best_state, vocab_hash, best_meta)
    model.meta = final_meta
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "model.ckpt", vocab, final_meta)
        best_model = CMTAModel(mc, best_state)
        save_checkpoint(best_model, out / "best.ckpt", vocab, best_meta)
        history.write_csv(out / "history.csv")
    return TrainResult(final, best, best_epoch, history, steps)


@dataclass
class Prediction:
    id: str
    gold: Optional[MisinfoClass]
    pred: MisinfoClass
    probs: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "gold": None if self.gold is None else self.gold.label,
                           "pred": self.pred.label, "probs": [float(p) for p in self.probs]},
                          ensure_ascii=False, separators=(",", ":"))


def evaluate(model: CMTAModel, vocab: Vocab, records: Sequence[TextRecord],
             stopwords: StopwordTable | None = None, batch_size: int = 256
             ) -> tuple[Metrics, list[Prediction]]:
    data = encode_records(records, vocab, model.config.max_len, stopwords)
    probs = _predict_encoded(model, data, batch_size)
    preds = probs.argmax(axis=-1)
    dump = [Prediction(r.id, r.gold_class, MisinfoClass(int(p)), tuple(float(x) for x in pr))
            for r, p, pr in zip(records, preds, probs)]
    return compute_metrics(preds, data.labels), dump


def write_predictions(preds: Sequence[Prediction], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for p in preds:
            fh.write(p.to_json() + "\n")


# ---------------------------------------------------------------------------
# comparison harness
# ---------------------------------------------------------------------------

MULTILINGUAL = "multilingual"


@dataclass(frozen=True)
class ComparisonRow:
    model: str
    slice: str
    precision: float
    recall: float
    f1: float
    accuracy: float
    n: int


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    breakdown: list[ComparisonRow]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "slice", "precision", "recall", "f1", "accuracy", "n"])
        for r in self.rows + self.breakdown:
            w.writerow([r.model, r.slice, f"{r.precision:.6f}", f"{r.recall:.6f}", f"{r.f1:.6f}",
                        f"{r.accuracy:.6f}", r.n])
        return buf.getvalue()

    def to_text(self) -> str:
        width = max([len(r.model) for r in self.rows + self.breakdown] + [6])
        lines = [f"{'Model':<{width}}  {'Slice':<6} {'Precision':>9} {'Recall':>9} {'F1':>9}"]
        for r in self.rows + self.breakdown:
            lines.append(f"{r.model:<{width}}  {r.slice:<6} {100 * r.precision:>9.2f} "
                         f"{100 * r.recall:>9.2f} {100 * r.f1:>9.2f}")
        lines.append("(macro-averaged over the three classes, in %)")
        return "\n".join(lines) + "\n"


def _slice(records: Sequence[TextRecord], language: str) -> list[TextRecord]:
    if language == MULTILINGUAL:
        return list(records)
    return [r for r in records if r.language == language]


def _row(name: str, slice_name: str, m: Metrics) -> ComparisonRow:
    return ComparisonRow(name, slice_name, m.macro_precision, m.macro_recall, m.macro_f1, m.accuracy, m.n)


def compare_models(specs: Sequence[tuple[str, str]], train_records: Sequence[TextRecord],
                   val_records: Sequence[TextRecord], test_records: Sequence[TextRecord],
                   model_config: ModelConfig, cfg: TrainConfig, vocab: Vocab,
                   stopwords: StopwordTable | None = None) -> ComparisonReport:
    """Train one model per ``(name, language or "multilingual")`` spec and tabulate.

    Every model starts from the same seed and :class:`TrainConfig`. Monolingual
    models are scored on their language's test slice; the multilingual model on
    the full test set (main row) and on each language slice (breakdown).
    """
    for _, lang in specs:
        if not _slice(train_records, lang):
            raise InsufficientData(lang, "train")
        if not _slice(test_records, lang):
            raise InsufficientData(lang, "test")
    rows: list[ComparisonRow] = []
    breakdown: list[ComparisonRow] = []
    languages = sorted({r.language for r in test_records})
    for name, lang in specs:
        model = CMTAModel.initialize(model_config, stream(cfg.seed, STREAM_INIT))
        train(model, vocab, _slice(train_records, lang), _slice(val_records, lang), cfg, stopwords)
        metrics, _ = evaluate(model, vocab, _slice(test_records, lang), stopwords)
        rows.append(_row(name, "all" if lang == MULTILINGUAL else lang, metrics))
        if lang == MULTILINGUAL:
            for sl in languages:
                m, _ = evaluate(model, vocab, _slice(test_records, sl), stopwords)
                breakdown.append(_row(name, sl, m))
    return ComparisonReport(rows, breakdown)
