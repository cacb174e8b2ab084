"""Corpus-scale inference and label aggregation by language, month and class."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .corpus import LANGUAGES, MisinfoClass, TextRecord, normalize_language
from .model import CMTAModel
from .preprocess import StopwordTable, clean_text
from .tokenizer import Vocab, encode_batch

logger = logging.getLogger(__name__)

UNKNOWN_MONTH = "unknown"
ANY = "*"
DIMS = ("language", "month")
FORMATS = ("csv", "json", "text-bar-chart")


class UnsupportedFormat(ValueError):
    pass


@dataclass(frozen=True)
class LabeledRecord:
    id: str
    language: str
    month: Optional[str]
    pred: MisinfoClass
    probs: tuple[float, ...]

    def to_json(self) -> str:
        return json.dumps({"id": self.id, "language": self.language, "month": self.month,
                           "pred": self.pred.label, "probs": [float(p) for p in self.probs]},
                          ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "LabeledRecord":
        return cls(str(d["id"]), normalize_language(d["language"]), d.get("month"),
                   MisinfoClass.parse(d["pred"]), tuple(float(p) for p in d.get("probs", ())))


@dataclass
class ClassifyReport:
    records: int = 0
    labeled: int = 0
    skipped: int = 0
    seconds: float = 0.0
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def throughput(self) -> float:
        return self.labeled / self.seconds if self.seconds > 0 else 0.0

    def summary(self) -> str:
        return (f"classified {self.labeled}/{self.records} records, skipped {self.skipped}, "
                f"{self.throughput:.0f} rec/s")


def _classify_chunk(model: CMTAModel, vocab: Vocab, chunk: Sequence[TextRecord],
                    table: StopwordTable, batch_size: int):
    """Label one chunk; returns (labeled-or-None per record, errors)."""
    texts: list[Optional[str]] = []
    errors = []
    for r in chunk:
        try:
            t = r.clean_text if r.clean_text is not None else clean_text(r.raw_text, r.language, table).text
            if not t:
                raise ValueError("empty after cleaning")
            texts.append(t)
        except Exception as exc:  # per-record failures are tallied, never fatal
            texts.append(None)
            errors.append((r.id, f"{type(exc).__name__}: {exc}"))
    keep = [i for i, t in enumerate(texts) if t is not None]
    out: list[Optional[LabeledRecord]] = [None] * len(chunk)
    max_len = model.config.max_len
    for s in range(0, len(keep), batch_size):
        idx = keep[s:s + batch_size]
        ids, segs, mask = encode_batch([texts[i] for i in idx], vocab, max_len)
        probs = model.predict_proba(ids, segs, mask)
        for i, p in zip(idx, probs):
            r = chunk[i]
            out[i] = LabeledRecord(r.id, r.language, r.month, MisinfoClass(int(np.argmax(p))),
                                   tuple(float(x) for x in p))
    return out, errors


def classify_corpus(model: CMTAModel, vocab: Vocab, records: Sequence[TextRecord], workers: int = 1,
                    stopwords: StopwordTable | None = None, chunk_size: int = 512,
                    batch_size: int = 256) -> tuple[list[LabeledRecord], ClassifyReport]:
    """Predict a class for every record, preserving input order.

    Records are split into fixed-size chunks independent of ``workers``, so the
    batches the model sees (and therefore the outputs) do not depend on the
    degree of parallelism. Records that fail cleaning or encoding are skipped
    and reported.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    table = stopwords if stopwords is not None else StopwordTable()
    report = ClassifyReport(records=len(records))
    t0 = time.perf_counter()
    chunks = [records[s:s + chunk_size] for s in range(0, len(records), chunk_size)]
    if workers == 1:
        results = [_classify_chunk(model, vocab, c, table, batch_size) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda c: _classify_chunk(model, vocab, c, table, batch_size), chunks))
    labeled: list[LabeledRecord] = []
    for out, errors in results:
        labeled.extend(x for x in out if x is not None)
        report.errors.extend(errors)
    report.labeled = len(labeled)
    report.skipped = len(report.errors)
    report.seconds = time.perf_counter() - t0
    for rid, msg in report.errors[:10]:
        logger.warning("skipped %s: %s", rid, msg)
    logger.info(report.summary())
    return labeled, report


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, order=True)
class AggregationCell:
    language: str
    month: str
    cls: MisinfoClass
    count: int

    def sort_key(self):
        return (self.language, self.month, int(self.cls))


def _check_dims(dims: Iterable[str]) -> tuple[str, ...]:
    dims = tuple(dims)
    bad = [d for d in dims if d not in DIMS]
    if bad:
        raise ValueError(f"unknown aggregation dims {bad}; choose from {DIMS}")
    return dims


class Aggregator:
    """Streaming (language, month, class) counter; memory is bounded by the cell count."""

    def __init__(self, dims: Iterable[str] = DIMS):
        self.dims = _check_dims(dims)
        self.counts: Counter = Counter()
        self.skipped = 0

    def key(self, language: str, month: Optional[str], cls: MisinfoClass):
        lang = language if "language" in self.dims else ANY
        mon = (month or UNKNOWN_MONTH) if "month" in self.dims else ANY
        return (lang, mon, MisinfoClass(cls))

    def add(self, rec: LabeledRecord) -> None:
        self.counts[self.key(rec.language, rec.month, rec.pred)] += 1

    def update(self, recs: Iterable[LabeledRecord]) -> "Aggregator":
        for r in recs:
            self.add(r)
        return self

    def merge(self, other: "Aggregator") -> "Aggregator":
        if other.dims != self.dims:
            raise ValueError("cannot merge aggregators over different dims")
        self.counts.update(other.counts)
        self.skipped += other.skipped
        return self

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def cells(self) -> list[AggregationCell]:
        cells = [AggregationCell(lang, mon, c, n) for (lang, mon, c), n in self.counts.items() if n > 0]
        return sorted(cells, key=AggregationCell.sort_key)


def aggregate(labeled: Iterable[LabeledRecord], dims: Iterable[str] = DIMS) -> list[AggregationCell]:
    """Exact counts per cell; a dimension left out of ``dims`` is collapsed to ``"*"``."""
    return Aggregator(dims).update(labeled).cells()


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class CorpusManifest:
    counts: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    @classmethod
    def from_records(cls, records: Iterable[TextRecord]) -> "CorpusManifest":
        c = Counter(r.language for r in records)
        return cls({lang: c[lang] for lang in LANGUAGES if c[lang]})

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["language", "count"])
            for lang, n in self.counts.items():
                w.writerow([lang, n])

    @classmethod
    def read(cls, path: str | Path) -> "CorpusManifest":
        counts: dict[str, int] = {}
        with open(path, encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                lang = normalize_language(row["language"])
                n = int(row["count"])
                if n < 0:
                    raise ValueError(f"negative count for {lang}")
                if lang in counts:
                    raise ValueError(f"duplicate manifest row for {lang}")
                counts[lang] = n
        return cls(counts)

    def diff(self, other: "CorpusManifest") -> dict[str, tuple[int, int]]:
        langs = sorted(set(self.counts) | set(other.counts))
        return {lang: (self.counts.get(lang, 0), other.counts.get(lang, 0)) for lang in langs
                if self.counts.get(lang, 0) != other.counts.get(lang, 0)}


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

CSV_HEADER = ["language", "month", "class", "count"]


def _sorted(cells: Iterable[AggregationCell]) -> list[AggregationCell]:
    return sorted(cells, key=AggregationCell.sort_key)


def _csv(cells, skipped: Optional[int]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for c in _sorted(cells):
        w.writerow([c.language, c.month, c.cls.label, c.count])
    if skipped:
        buf.write(f"# skipped,{skipped}\n")
    return buf.getvalue()


def _json(cells, skipped: Optional[int]) -> str:
    nested: dict = {}
    for c in _sorted(cells):
        nested.setdefault(c.language, {}).setdefault(c.month, {})[c.cls.label] = c.count
    doc = {"cells": nested, "total": sum(c.count for c in cells), "skipped": skipped or 0}
    return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"


def _bars(cells, skipped: Optional[int], width: int = 40) -> str:
    cells = _sorted(cells)
    if not cells:
        return "(no records)\n" + (f"skipped: {skipped}\n" if skipped else "")
    peak = max(c.count for c in cells)
    label_w = max(len(f"{c.language} {c.month} {c.cls.label}") for c in cells)
    lines = []
    for c in cells:
        n = round(width * c.count / peak) if peak else 0
        lines.append(f"{c.language + ' ' + c.month + ' ' + c.cls.label:<{label_w}} |{'#' * n} {c.count}")
    lines.append(f"total: {sum(c.count for c in cells)}")
    if skipped:
        lines.append(f"skipped: {skipped}")
    return "\n".join(lines) + "\n"


_EMITTERS = {"csv": _csv, "json": _json, "text-bar-chart": _bars}


def emit_report(cells: Iterable[AggregationCell], fmt: str = "csv", skipped: Optional[int] = None) -> str:
    """Render cells as CSV, nested JSON or a text bar chart, sorted by (language, month, class)."""
    try:
        emitter = _EMITTERS[fmt]
    except KeyError:
        raise UnsupportedFormat(f"unsupported report format {fmt!r}; choose from {FORMATS}") from None
    return emitter(list(cells), skipped)


def parse_csv_report(text: str) -> tuple[list[AggregationCell], int]:
    """Inverse of the CSV report: returns (cells, skipped)."""
    skipped = 0
    body = []
    for line in text.splitlines():
        if line.startswith("# skipped,"):
            skipped = int(line.split(",", 1)[1])
        else:
            body.append(line)
    reader = csv.DictReader(io.StringIO("\n".join(body)))
    if reader.fieldnames is not None and list(reader.fieldnames) != CSV_HEADER:
        raise ValueError(f"unexpected header {reader.fieldnames}")
    cells = [AggregationCell(row["language"], row["month"], MisinfoClass.parse(row["class"]), int(row["count"]))
             for row in reader]
    return cells, skipped
