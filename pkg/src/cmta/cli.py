"""Command-line interface: ``cmta <command> [options]``.

Configuration precedence (later wins): built-in defaults, the ``--config``
file (JSON or key=value lines), ``CMTA_<KEY>`` environment variables for path
keys, then command-line flags and ``--set key=value`` overrides.

Exit codes: 0 success, 1 validation failure (bad config, missing inputs),
2 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .analyze import (DIMS, FORMATS, CorpusManifest, LabeledRecord, aggregate, classify_corpus,
                      emit_report)
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import CorpusError, SplitSpec, load_dataset, save_jsonl, split_dataset, with_clean_text
from .fixtures import COMPARISON_SPECS
from .model import CMTAModel, ConfigError, ModelConfig
from .preprocess import StopwordTable, clean
from .tokenizer import Vocab, build_vocab
from .train import (MULTILINGUAL, STREAM_INIT, TrainConfig, compare_models, evaluate, model_texts,
                    stream, train, write_predictions)

logger = logging.getLogger("cmta")

COMMANDS = ("prep", "build-vocab", "train", "eval", "classify", "analyze", "compare")
PATH_KEYS = ("input", "output", "dataset", "val", "test", "vocab", "checkpoint", "stopwords",
             "output_dir", "manifest")
ENV_PREFIX = "CMTA_"
SCALAR_KEYS = {"seed": int, "workers": int, "vocab_size": int, "format": str, "dims": str,
               "specs": str, "strict": bool}
_MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)} - {"vocab_size"}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"seed"}
_SPLIT_FIELDS = {f.name for f in dataclasses.fields(SplitSpec)} - {"seed"}

# desk-scale defaults for the CLI; full-scale sizes are reachable through model.* keys
DESK_MODEL = {"max_len": 64, "hidden": 32, "layers": 2, "heads": 2}


class ValidationError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    workers: int = 1
    vocab_size: int = 8000
    format: str = "csv"
    dims: str = "language,month"
    specs: str = ""
    strict: bool = False
    paths: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)

    def set(self, key: str, value) -> None:
        """Assign a dotted key; unknown keys raise :class:`ValidationError`."""
        section, _, name = key.partition(".")
        if name:
            allowed = {"paths": set(PATH_KEYS), "model": _MODEL_FIELDS, "train": _TRAIN_FIELDS,
                       "split": _SPLIT_FIELDS}.get(section)
            if allowed is None or name not in allowed:
                raise ValidationError(f"unknown config key {key!r}")
            getattr(self, section)[name] = str(value) if section == "paths" else _coerce(value)
        elif key in SCALAR_KEYS:
            setattr(self, key, _cast(SCALAR_KEYS[key], key, value))
        elif key in PATH_KEYS:
            self.paths[key] = str(value)
        else:
            raise ValidationError(f"unknown config key {key!r}")

    def update(self, mapping: dict, prefix: str = "") -> None:
        for k, v in mapping.items():
            full = f"{prefix}{k}"
            if isinstance(v, dict) and full in ("paths", "model", "train", "split"):
                self.update(v, full + ".")
            else:
                self.set(full, v)

    def path(self, key: str) -> Optional[Path]:
        v = self.paths.get(key)
        return Path(v) if v else None

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **{**DESK_MODEL, **self.model})

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, **self.train)

    def split_spec(self) -> SplitSpec:
        return SplitSpec(seed=self.seed, **self.split)


def _coerce(value):
    if not isinstance(value, str):
        return value
    try:
        return json.loads(value)
    except ValueError:
        return value


def _cast(kind, key, value):
    if kind is bool:
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key} expects a boolean, got {value!r}")
    try:
        return kind(value)
    except (TypeError, ValueError):
        raise ValidationError(f"{key} expects {kind.__name__}, got {value!r}") from None


def read_config_file(path: Path) -> dict:
    """JSON object, or ``key = value`` lines with '#' comments."""
    text = path.read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        try:
            obj = json.loads(text)
        except ValueError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(obj, dict):
            raise ValidationError(f"{path}: top level must be an object")
        return obj
    out = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{n}: expected key=value")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


# flag name -> config key, per command
_FLAG_KEYS = {
    "input": "input", "output": "output", "dataset": "dataset", "val": "val", "test": "test",
    "vocab": "vocab", "checkpoint": "checkpoint", "stopwords": "stopwords", "output_dir": "output_dir",
    "manifest": "manifest", "size": "vocab_size", "format": "format", "dims": "dims", "specs": "specs",
    "seed": "seed", "workers": "workers", "strict": "strict",
}


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        p = Path(args.config)
        if not p.is_file():
            raise ValidationError(f"config file not found: {p}")
        cfg.update(read_config_file(p))
    for key in PATH_KEYS:
        env = environ.get(ENV_PREFIX + key.upper())
        if env:
            cfg.paths[key] = env
    for attr, key in _FLAG_KEYS.items():
        v = getattr(args, attr, None)
        if v is not None and v is not False:
            cfg.set(key, v)
    for item in args.set or []:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        cfg.set(k.strip(), v.strip())
    return cfg


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _need(cfg: RunConfig, *keys: str) -> list[Path]:
    out = []
    for k in keys:
        p = cfg.path(k)
        if p is None:
            raise ValidationError(f"missing required path {k!r}")
        out.append(p)
    return out


def _need_files(cfg: RunConfig, *keys: str) -> list[Path]:
    paths = _need(cfg, *keys)
    for k, p in zip(keys, paths):
        if not p.is_file():
            raise ValidationError(f"{k} not found: {p}")
    return paths


def _stopwords(cfg: RunConfig) -> StopwordTable:
    p = cfg.path("stopwords")
    if p is None:
        return StopwordTable.default()
    return StopwordTable.from_dir(p)


def _check_stopwords(cfg: RunConfig) -> None:
    p = cfg.path("stopwords")
    if p is not None and not p.is_dir():
        raise ValidationError(f"stopwords directory not found: {p}")


def _load(path: Path, cfg: RunConfig):
    records, errors = load_dataset(path, strict=cfg.strict)
    for e in errors:
        logger.warning("%s line %d: %s", path, e.line, e.reason)
    return records, errors


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _plan(cmd: str, cfg: RunConfig, reads: list, writes: list) -> None:
    print(f"plan: {cmd}")
    for p in reads:
        print(f"  read  {p}")
    for p in writes:
        print(f"  write {p}")
    print(f"  seed={cfg.seed} workers={cfg.workers}")


def _parse_specs(text: str, languages: list[str]) -> list[tuple[str, str]]:
    if not text:
        present = [s for s in COMPARISON_SPECS if s[1] == MULTILINGUAL or s[1] in languages]
        return present
    specs = []
    for item in text.split(","):
        name, sep, lang = item.partition(":")
        if not sep:
            raise ValidationError(f"spec {item!r} must be name:language")
        specs.append((name.strip(), lang.strip()))
    return specs


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_prep(cfg: RunConfig, dry_run: bool) -> int:
    src, dst = _need(cfg, "input", "output")
    _need_files(cfg, "input")
    _check_stopwords(cfg)
    if dry_run:
        _plan("prep", cfg, [src], [dst])
        return 0
    table = _stopwords(cfg)
    records, errors = _load(src, cfg)
    out, emptied, warnings = [], 0, len(errors)
    for r in records:
        ct = clean(r, table)
        emptied += ct.empty
        out.append(with_clean_text(r, ct.text))
    dst.parent.mkdir(parents=True, exist_ok=True)
    save_jsonl(out, dst)
    print(f"prep: records {len(out)}, emptied {emptied}, warnings {warnings}")
    return 0


def cmd_build_vocab(cfg: RunConfig, dry_run: bool) -> int:
    src, dst = _need(cfg, "input", "vocab")
    _need_files(cfg, "input")
    _check_stopwords(cfg)
    if dry_run:
        _plan("build-vocab", cfg, [src], [dst])
        return 0
    records, _ = _load(src, cfg)
    vocab = build_vocab(model_texts(records, _stopwords(cfg)), cfg.vocab_size)
    dst.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(dst)
    print(f"build-vocab: {len(vocab)} tokens, sha256 {vocab.sha256()[:16]}")
    return 0


def cmd_train(cfg: RunConfig, dry_run: bool) -> int:
    data, vocab_path, out_dir = _need(cfg, "dataset", "vocab", "output_dir")
    _need_files(cfg, "dataset", "vocab")
    _check_stopwords(cfg)
    tcfg = cfg.train_config()
    spec = cfg.split_spec()
    outputs = [out_dir / n for n in ("model.ckpt", "best.ckpt", "history.csv", "train.jsonl",
                                     "val.jsonl", "test.jsonl")]
    if dry_run:
        _plan("train", cfg, [data, vocab_path], outputs)
        print(f"  train: {dataclasses.asdict(tcfg)}")
        return 0
    vocab = Vocab.load(vocab_path)
    mcfg = cfg.model_config(len(vocab))
    records, _ = _load(data, cfg)
    tr, va, te = split_dataset(records, spec)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, part in (("train", tr), ("val", va), ("test", te)):
        save_jsonl(part, out_dir / f"{name}.jsonl")
    model = CMTAModel.initialize(mcfg, stream(cfg.seed, STREAM_INIT))
    result = train(model, vocab, tr, va, tcfg, _stopwords(cfg), out_dir)
    last = result.history.epochs[-1]
    print(f"train: {len(tr)}/{len(va)}/{len(te)} split, {result.steps} steps, "
          f"final loss {last.loss:.4f}, train_acc {last.train_acc:.4f}, best epoch {result.best_epoch}")
    return 0


def _load_model(cfg: RunConfig) -> tuple[CMTAModel, Vocab]:
    vocab = Vocab.load(cfg.path("vocab"))
    return load_checkpoint(cfg.path("checkpoint"), vocab), vocab


def cmd_eval(cfg: RunConfig, dry_run: bool) -> int:
    ckpt, vocab_path, data, out_dir = _need(cfg, "checkpoint", "vocab", "dataset", "output_dir")
    _need_files(cfg, "checkpoint", "vocab", "dataset")
    _check_stopwords(cfg)
    outputs = [out_dir / "metrics.csv", out_dir / "predictions.jsonl"]
    if dry_run:
        _plan("eval", cfg, [ckpt, vocab_path, data], outputs)
        return 0
    model, vocab = _load_model(cfg)
    records, _ = _load(data, cfg)
    metrics, preds = evaluate(model, vocab, records, _stopwords(cfg))
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics.write_csv(outputs[0])
    write_predictions(preds, outputs[1])
    print(f"eval: n={metrics.n} accuracy {metrics.accuracy:.4f} macro P/R/F1 "
          f"{metrics.macro_precision:.4f}/{metrics.macro_recall:.4f}/{metrics.macro_f1:.4f}")
    return 0


def cmd_classify(cfg: RunConfig, dry_run: bool) -> int:
    ckpt, vocab_path, src, dst = _need(cfg, "checkpoint", "vocab", "input", "output")
    _need_files(cfg, "checkpoint", "vocab", "input")
    _check_stopwords(cfg)
    if cfg.workers < 1:
        raise ValidationError("workers must be >= 1")
    if dry_run:
        _plan("classify", cfg, [ckpt, vocab_path, src], [dst])
        return 0
    model, vocab = _load_model(cfg)
    records, errors = _load(src, cfg)
    labeled, report = classify_corpus(model, vocab, records, cfg.workers, _stopwords(cfg))
    dst.parent.mkdir(parents=True, exist_ok=True)
    with open(dst, "w", encoding="utf-8", newline="\n") as fh:
        for r in labeled:
            fh.write(r.to_json() + "\n")
    print(f"classify: {report.summary()}, unreadable rows {len(errors)}")
    return 0


def _read_labeled(path: Path) -> tuple[list[LabeledRecord], int]:
    out, bad = [], 0
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(LabeledRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, CorpusError) as exc:
                bad += 1
                logger.warning("%s line %d: %s", path, n, exc)
    return out, bad


def cmd_analyze(cfg: RunConfig, dry_run: bool) -> int:
    src, dst = _need(cfg, "input", "output")
    _need_files(cfg, "input")
    if cfg.path("manifest") is not None:
        _need_files(cfg, "manifest")
    if cfg.format not in FORMATS:
        raise ValidationError(f"format must be one of {FORMATS}")
    dims = tuple(d for d in cfg.dims.split(",") if d)
    if any(d not in DIMS for d in dims):
        raise ValidationError(f"dims must be a subset of {DIMS}")
    if dry_run:
        _plan("analyze", cfg, [src], [dst])
        return 0
    labeled, bad = _read_labeled(src)
    cells = aggregate(labeled, dims)
    _write_text(dst, emit_report(cells, cfg.format, skipped=bad))
    print(f"analyze: {len(labeled)} records in {len(cells)} cells, skipped {bad}")
    if cfg.path("manifest") is not None:
        expected = CorpusManifest.read(cfg.path("manifest"))
        got = CorpusManifest.from_records(labeled)
        diff = expected.diff(got)
        if diff:
            for lang, (want, have) in diff.items():
                print(f"manifest mismatch {lang}: expected {want}, got {have}")
            return 2
        print(f"manifest: {expected.total} records match")
    return 0


def cmd_compare(cfg: RunConfig, dry_run: bool) -> int:
    data, vocab_path, out_dir = _need(cfg, "dataset", "vocab", "output_dir")
    _need_files(cfg, "dataset", "vocab")
    _check_stopwords(cfg)
    outputs = [out_dir / "comparison.csv", out_dir / "comparison.txt"]
    if dry_run:
        _plan("compare", cfg, [data, vocab_path], outputs)
        return 0
    vocab = Vocab.load(vocab_path)
    records, _ = _load(data, cfg)
    tr, va, te = split_dataset(records, cfg.split_spec())
    specs = _parse_specs(cfg.specs, sorted({r.language for r in records}))
    report = compare_models(specs, tr, va, te, cfg.model_config(len(vocab)), cfg.train_config(), vocab,
                            _stopwords(cfg))
    _write_text(outputs[0], report.to_csv())
    _write_text(outputs[1], report.to_text())
    print(report.to_text(), end="")
    return 0


HANDLERS = {
    "prep": cmd_prep, "build-vocab": cmd_build_vocab, "train": cmd_train, "eval": cmd_eval,
    "classify": cmd_classify, "analyze": cmd_analyze, "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmta", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HANDLERS[name].__name__.replace("cmd_", "").replace("_", "-"))
        p.add_argument("--config", help="JSON or key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override any config key, e.g. model.hidden=64 or train.epochs=3")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--dry-run", action="store_true", help="validate and print the plan; write nothing")
        p.add_argument("--error-json", action="store_true", help="report failures as JSON on stderr")
        p.add_argument("--strict", action="store_true", help="abort on the first malformed input row")
        p.add_argument("-v", "--verbose", action="store_true")
        p.add_argument("--stopwords", help="directory of <lang>.txt stopword lists")
        if name in ("prep", "build-vocab", "classify", "analyze"):
            p.add_argument("--in", dest="input")
        if name in ("prep", "classify", "analyze"):
            p.add_argument("--out", dest="output")
        if name in ("build-vocab", "train", "eval", "classify", "compare"):
            p.add_argument("--vocab")
        if name == "build-vocab":
            p.add_argument("--size", type=int, help="target vocabulary size")
        if name in ("train", "eval", "compare"):
            p.add_argument("--dataset")
            p.add_argument("--output-dir", dest="output_dir")
        if name in ("eval", "classify"):
            p.add_argument("--checkpoint")
        if name == "analyze":
            p.add_argument("--format", choices=FORMATS)
            p.add_argument("--dims", help="comma-separated subset of language,month")
            p.add_argument("--manifest", help="CSV language,count to check totals against")
        if name == "compare":
            p.add_argument("--specs", help="comma-separated name:language (or name:multilingual)")
    return parser


def _fail(args, code: int, exc: BaseException) -> int:
    if getattr(args, "error_json", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}),
              file=sys.stderr)
    else:
        print(f"error: {exc}", file=sys.stderr)
    return code


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        # fail fast on bad model/train overrides before any data is read
        cfg.train_config()
        cfg.split_spec()
        if cfg.model:
            cfg.model_config(vocab_size=8)
    except (ValidationError, ConfigError, TypeError, ValueError) as exc:
        return _fail(args, 1, exc)
    print(f"seed: {cfg.seed}", file=sys.stderr)
    try:
        return HANDLERS[args.command](cfg, args.dry_run)
    except ValidationError as exc:
        return _fail(args, 1, exc)
    except (CorpusError, CheckpointError, OSError, ValueError, RuntimeError) as exc:
        return _fail(args, 2, exc)


if __name__ == "__main__":
    sys.exit(main())
