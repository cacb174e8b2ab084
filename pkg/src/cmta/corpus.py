"""Dataset ingestion, rating -> class attribute engineering, splitting, statistics.

File contract (JSONL or CSV): keys ``id``, ``text``, ``language`` are required;
``month``, ``source``, ``rating``, ``label`` and ``clean_text`` are optional.
"""
from __future__ import annotations

import csv
import enum
import io
import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

#: ISO-639-1 style codes accepted at ingestion ("in" is Indonesian, as in the source data).
LANGUAGES: tuple[str, ...] = ("en", "es", "in", "fr", "ja", "th", "hi", "de")
#: Alternative spellings normalised at ingestion.
LANGUAGE_ALIASES: dict[str, str] = {"id": "in"}

FIELDS: tuple[str, ...] = ("id", "text", "language", "month", "source", "rating", "label", "clean_text")
_MONTH_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


class CorpusError(ValueError):
    pass


class FormatError(CorpusError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class UnknownLanguage(CorpusError):
    def __init__(self, code: str):
        super().__init__(f"unknown language code {code!r}")
        self.code = code


class UnknownRating(CorpusError):
    def __init__(self, value: str):
        super().__init__(f"unknown fact-checker rating {value!r}")
        self.value = value


class UnknownLabel(CorpusError):
    def __init__(self, value: str):
        super().__init__(f"unknown class label {value!r}")
        self.value = value


class MissingLabel(CorpusError):
    def __init__(self, record_id: str):
        super().__init__(f"record {record_id!r} has no gold class")
        self.record_id = record_id


class MisinfoClass(enum.IntEnum):
    """The three output classes; the integer value is the classifier output index."""

    FALSE = 0
    PARTIALLY_FALSE = 1
    MISLEADING = 2

    @property
    def label(self) -> str:
        return _CLASS_LABELS[self]

    @classmethod
    def parse(cls, value) -> "MisinfoClass":
        if isinstance(value, MisinfoClass):
            return value
        if isinstance(value, int) and not isinstance(value, bool):
            try:
                return cls(value)
            except ValueError:
                raise UnknownLabel(str(value)) from None
        key = _norm(str(value))
        if key.isdigit() and int(key) in (0, 1, 2):
            return cls(int(key))
        try:
            return _CLASS_LOOKUP[key]
        except KeyError:
            raise UnknownLabel(str(value)) from None


_CLASS_LABELS = {
    MisinfoClass.FALSE: "False",
    MisinfoClass.PARTIALLY_FALSE: "Partially False",
    MisinfoClass.MISLEADING: "Misleading",
}


class FactCheckerRating(enum.Enum):
    FALSE = "False"
    PARTIALLY_FALSE = "Partially False"
    MISLEADING = "Misleading"
    NO_EVIDENCE = "No Evidence"
    FOUR_PINOCCHIOS = "Four Pinocchios"
    INCORRECT = "Incorrect"
    THREE_PINOCCHIOS = "Three Pinocchios"
    TWO_PINOCCHIOS = "Two Pinocchios"
    MOSTLY_FALSE = "Mostly False"

    @classmethod
    def parse(cls, value) -> "FactCheckerRating":
        if isinstance(value, FactCheckerRating):
            return value
        try:
            return _RATING_LOOKUP[_norm(str(value))]
        except KeyError:
            raise UnknownRating(str(value)) from None


def _norm(s: str) -> str:
    return " ".join(s.replace("_", " ").split()).casefold()


# Explicit alias table; anything not listed here is rejected.
_RATING_ALIASES = {
    "partly false": FactCheckerRating.PARTIALLY_FALSE,
    "inaccurate": FactCheckerRating.INCORRECT,
}
_RATING_LOOKUP = {_norm(r.value): r for r in FactCheckerRating} | _RATING_ALIASES

_CLASS_LOOKUP = {_norm(lbl): c for c, lbl in _CLASS_LABELS.items()} | {
    "partly false": MisinfoClass.PARTIALLY_FALSE,
}

_RATING_TO_CLASS = {
    FactCheckerRating.FALSE: MisinfoClass.FALSE,
    FactCheckerRating.FOUR_PINOCCHIOS: MisinfoClass.FALSE,
    FactCheckerRating.INCORRECT: MisinfoClass.FALSE,
    FactCheckerRating.PARTIALLY_FALSE: MisinfoClass.PARTIALLY_FALSE,
    FactCheckerRating.THREE_PINOCCHIOS: MisinfoClass.PARTIALLY_FALSE,
    FactCheckerRating.TWO_PINOCCHIOS: MisinfoClass.PARTIALLY_FALSE,
    FactCheckerRating.MISLEADING: MisinfoClass.MISLEADING,
    FactCheckerRating.NO_EVIDENCE: MisinfoClass.MISLEADING,
    FactCheckerRating.MOSTLY_FALSE: MisinfoClass.MISLEADING,
}


def map_rating(rating: FactCheckerRating) -> MisinfoClass:
    """Collapse a fact-checker rating into one of the three classes."""
    return _RATING_TO_CLASS[FactCheckerRating.parse(rating)]


def normalize_language(code: str) -> str:
    c = str(code).strip().lower()
    c = LANGUAGE_ALIASES.get(c, c)
    if c not in LANGUAGES:
        raise UnknownLanguage(str(code))
    return c


@dataclass(frozen=True)
class TextRecord:
    id: str
    raw_text: str
    language: str
    month: Optional[str] = None
    source: Optional[str] = None
    rating: Optional[FactCheckerRating] = None
    gold_class: Optional[MisinfoClass] = None
    clean_text: Optional[str] = None

    def __post_init__(self):
        if not self.raw_text or not self.raw_text.strip():
            raise CorpusError(f"record {self.id!r}: empty text")
        object.__setattr__(self, "language", normalize_language(self.language))
        if self.month is not None and not _MONTH_RE.match(self.month):
            raise CorpusError(f"record {self.id!r}: month {self.month!r} is not YYYY-MM")
        if self.rating is not None and self.gold_class is not None:
            if map_rating(self.rating) != self.gold_class:
                raise CorpusError(
                    f"record {self.id!r}: label {self.gold_class.label!r} contradicts "
                    f"rating {self.rating.value!r}"
                )

    def to_dict(self) -> dict:
        d: dict = {"id": self.id, "text": self.raw_text, "language": self.language}
        if self.month is not None:
            d["month"] = self.month
        if self.source is not None:
            d["source"] = self.source
        if self.rating is not None:
            d["rating"] = self.rating.value
        if self.gold_class is not None:
            d["label"] = self.gold_class.label
        if self.clean_text is not None:
            d["clean_text"] = self.clean_text
        return d

    @property
    def text(self) -> str:
        """Text fed to the model: the cleaned text when available."""
        return self.clean_text if self.clean_text is not None else self.raw_text


def record_from_dict(row: dict) -> TextRecord:
    """Validate one raw row (keys as in the file contract) into a record."""
    for key in ("id", "text", "language"):
        if row.get(key) in (None, ""):
            raise CorpusError(f"missing required field {key!r}")
    unknown = set(row) - set(FIELDS)
    if unknown:
        logger.debug("ignoring extra fields %s", sorted(unknown))
    language = normalize_language(row["language"])
    rating = FactCheckerRating.parse(row["rating"]) if row.get("rating") not in (None, "") else None
    label = MisinfoClass.parse(row["label"]) if row.get("label") not in (None, "") else None
    if label is None and rating is not None:
        label = map_rating(rating)

    def opt(key):
        v = row.get(key)
        return None if v in (None, "") else str(v)

    return TextRecord(
        id=str(row["id"]),
        raw_text=str(row["text"]),
        language=language,
        month=opt("month"),
        source=opt("source"),
        rating=rating,
        gold_class=label,
        # an empty cell reads as "not cleaned yet"; re-cleaning an emptied text yields "" again
        clean_text=opt("clean_text"),
    )


@dataclass(frozen=True)
class RowError:
    line: int
    reason: str

    def to_json(self) -> str:
        return json.dumps({"line": self.line, "reason": self.reason}, ensure_ascii=False)


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    if fmt not in ("jsonl", "csv"):
        raise CorpusError(f"unsupported dataset format {fmt!r}")
    return fmt


def iter_rows(path: str | Path, fmt: str | None = None) -> Iterator[tuple[int, dict | Exception]]:
    """Yield ``(line_number, row_dict_or_error)`` without validating fields."""
    path = Path(path)
    fmt = _detect_format(path, fmt)
    with open(path, "rb") as fh:
        raw = fh.read()
    if fmt == "jsonl":
        for lineno, bline in enumerate(raw.split(b"\n"), start=1):
            try:
                line = bline.decode("utf-8")
            except UnicodeDecodeError:
                yield lineno, FormatError(lineno, "invalid UTF-8")
                continue
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, FormatError(lineno, f"bad JSON: {exc.msg}")
                continue
            if not isinstance(obj, dict):
                yield lineno, FormatError(lineno, "row is not a JSON object")
                continue
            yield lineno, obj
        return
    try:
        text = raw.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        lineno = raw[:exc.start].count(b"\n") + 1
        raise FormatError(lineno, "invalid UTF-8") from None
    reader = csv.DictReader(io.StringIO(text, newline=""))
    if reader.fieldnames is None:
        return
    for row in reader:
        lineno = reader.line_num
        if None in row:
            yield lineno, FormatError(lineno, "too many fields")
            continue
        yield lineno, {k: v for k, v in row.items() if v is not None}


def load_dataset(path: str | Path, fmt: str | None = None, strict: bool = False
                 ) -> tuple[list[TextRecord], list[RowError]]:
    """Load records in file order.

    In the default partial mode malformed rows are skipped and described in the
    returned error list; with ``strict=True`` the first bad row raises.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    records: list[TextRecord] = []
    errors: list[RowError] = []
    for lineno, row in iter_rows(path, fmt):
        try:
            if isinstance(row, Exception):
                raise row
            records.append(record_from_dict(row))
        except CorpusError as exc:
            if strict:
                if isinstance(exc, FormatError):
                    raise
                raise FormatError(lineno, str(exc)) from exc
            reason = exc.reason if isinstance(exc, FormatError) else str(exc)
            errors.append(RowError(lineno, reason))
    if errors:
        logger.warning("%s: %d malformed rows skipped", path, len(errors))
    return records, errors


def dumps_record(record: TextRecord) -> str:
    return json.dumps(record.to_dict(), ensure_ascii=False, separators=(",", ":"))


def save_jsonl(records: Iterable[TextRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(dumps_record(r))
            fh.write("\n")


def save_csv(records: Iterable[TextRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(FIELDS), lineterminator="\r\n")
        writer.writeheader()
        for r in records:
            writer.writerow(r.to_dict())


def write_error_report(errors: Sequence[RowError], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in errors:
            fh.write(e.to_json() + "\n")


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.8
    val_frac: float = 0.1
    test_frac: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("train_frac", "val_frac", "test_frac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1), got {v}")
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"split fractions sum to {total}, not 1")

    def sizes(self, n: int) -> tuple[int, int, int]:
        # floor on val/test, remainder to train; the small slack absorbs 0.1*10 style fp error
        n_val = math.floor(n * self.val_frac + 1e-9)
        n_test = math.floor(n * self.test_frac + 1e-9)
        return n - n_val - n_test, n_val, n_test


def split_dataset(records: Sequence[TextRecord], spec: SplitSpec
                  ) -> tuple[list[TextRecord], list[TextRecord], list[TextRecord]]:
    for r in records:
        if r.gold_class is None:
            raise MissingLabel(r.id)
    n = len(records)
    n_train, n_val, n_test = spec.sizes(n)
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = [records[i] for i in perm[:n_train]]
    val = [records[i] for i in perm[n_train:n_train + n_val]]
    test = [records[i] for i in perm[n_train + n_val:]]
    return train, val, test


@dataclass
class CountTable:
    by: str
    counts: dict = field(default_factory=dict)
    unlabeled: int = 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())


_BY = ("class", "language", "class_language")
_BY_ALIASES = {"class×language": "class_language", "language_class": "class_language"}


def class_distribution(records: Iterable[TextRecord], by: str = "class") -> CountTable:
    """Count labeled records by class, language or (language, class).

    Unlabeled records are tallied in ``unlabeled`` and excluded from ``counts``.
    """
    by = _BY_ALIASES.get(by, by)
    if by not in _BY:
        raise ValueError(f"by must be one of {_BY}")
    counts: Counter = Counter()
    unlabeled = 0
    for r in records:
        if r.gold_class is None:
            unlabeled += 1
            continue
        if by == "class":
            counts[r.gold_class] += 1
        elif by == "language":
            counts[r.language] += 1
        else:
            counts[(r.language, r.gold_class)] += 1
    return CountTable(by=by, counts=dict(counts), unlabeled=unlabeled)


def with_clean_text(record: TextRecord, text: str) -> TextRecord:
    return replace(record, clean_text=text)
