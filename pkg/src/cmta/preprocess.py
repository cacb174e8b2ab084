"""Multilingual micro-text cleaning.

Pipeline order is fixed: noise (URLs, mentions, retweet marker) -> '#' symbol
-> emoji -> stopwords. Only those items are removed; other punctuation, digits
and hyphens are kept so hashtag bodies like ``COVID-19`` survive intact.
"""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Optional, Sequence

logger = logging.getLogger(__name__)

URL_RE = re.compile(r"(?:https?|ftp)://\S+|www\.\S+", re.IGNORECASE)
MENTION_RE = re.compile(r"@\w+")
RETWEET_RE = re.compile(r"^\s*RT\b[\s:]*")
_WS_RE = re.compile(r"\s+")

#: Default emoji codepoint ranges (inclusive).
DEFAULT_EMOJI_RANGES: tuple[tuple[int, int], ...] = (
    (0x1F300, 0x1FAFF),
    (0x2600, 0x27BF),
    (0xFE0F, 0xFE0F),
    (0x200D, 0x200D),
    (0x1F1E6, 0x1F1FF),
)

STEP_NAMES = ("strip_noise", "strip_hashtag_symbol", "remove_emojis", "remove_stopwords")

#: Languages written without spaces between words.
UNSEGMENTED_LANGUAGES = frozenset({"th", "ja"})

Segmenter = Callable[[str], list]


def _collapse(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


def strip_noise(text: str) -> str:
    """Drop URLs, @mentions and a leading ``RT`` marker; collapse whitespace."""
    text = URL_RE.sub(" ", text)
    text = MENTION_RE.sub(" ", text)
    text = RETWEET_RE.sub("", _collapse(text))
    return _collapse(text)


def strip_hashtag_symbol(text: str) -> str:
    return text.replace("#", "")


def _emoji_class(ranges: Sequence[tuple[int, int]]) -> re.Pattern:
    parts = []
    for lo, hi in ranges:
        parts.append(re.escape(chr(lo)) if lo == hi else f"{re.escape(chr(lo))}-{re.escape(chr(hi))}")
    return re.compile("[" + "".join(parts) + "]")


_DEFAULT_EMOJI_PATTERN = _emoji_class(DEFAULT_EMOJI_RANGES)


def remove_emojis(text: str, ranges: Sequence[tuple[int, int]] | None = None) -> str:
    pattern = _DEFAULT_EMOJI_PATTERN if ranges is None else _emoji_class(ranges)
    return pattern.sub("", text)


# ---------------------------------------------------------------------------
# stopwords
# ---------------------------------------------------------------------------

@dataclass
class StopwordTable:
    """Per-language stopword sets; lookups are on case-folded tokens."""

    tables: dict[str, frozenset[str]] = field(default_factory=dict)
    provenance: dict[str, str] = field(default_factory=dict)

    def __contains__(self, language: str) -> bool:
        return language in self.tables

    def get(self, language: str) -> Optional[frozenset[str]]:
        return self.tables.get(language)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[str]]) -> "StopwordTable":
        return cls({lang: frozenset(w.casefold() for w in words) for lang, words in mapping.items()},
                   {lang: "inline" for lang in mapping})

    @classmethod
    def from_dir(cls, directory: str | Path) -> "StopwordTable":
        """Read ``<lang>.txt`` files: one token per line, '#' lines are comments."""
        table = cls()
        for path in sorted(Path(directory).glob("*.txt")):
            lang = _FILE_LANG.get(path.stem, path.stem)
            table.tables[lang] = frozenset(parse_stopword_file(path.read_text(encoding="utf-8")))
            table.provenance[lang] = str(path)
        return table

    @classmethod
    def default(cls) -> "StopwordTable":
        """The tables bundled with the package."""
        table = cls()
        root = resources.files("cmta") / "data" / "stopwords"
        for entry in sorted(root.iterdir(), key=lambda p: p.name):
            if not entry.name.endswith(".txt"):
                continue
            stem = entry.name[:-4]
            lang = _FILE_LANG.get(stem, stem)
            table.tables[lang] = frozenset(parse_stopword_file(entry.read_text(encoding="utf-8")))
            table.provenance[lang] = f"bundled:{entry.name}"
        return table


# bundled Indonesian table is named after the modern ISO code
_FILE_LANG = {"id": "in"}


def parse_stopword_file(text: str) -> list[str]:
    words = []
    for line in text.split("\n"):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        words.append(line.casefold())
    return words


def script_class(ch: str) -> str:
    cp = ord(ch)
    if 0x0E00 <= cp <= 0x0E7F:
        return "thai"
    if 0x3040 <= cp <= 0x309F:
        return "hiragana"
    if 0x30A0 <= cp <= 0x30FF or 0x31F0 <= cp <= 0x31FF:
        return "katakana"
    if 0x4E00 <= cp <= 0x9FFF or 0x3400 <= cp <= 0x4DBF:
        return "han"
    if ch.isdigit():
        return "digit"
    if ch.isalpha():
        return "alpha"
    return "other"


def script_run_segment(text: str) -> list[str]:
    """Default segmenter for unspaced scripts: maximal runs of one script class."""
    out: list[str] = []
    for chunk in text.split():
        start = 0
        for i in range(1, len(chunk) + 1):
            if i == len(chunk) or script_class(chunk[i]) != script_class(chunk[start]):
                out.append(chunk[start:i])
                start = i
    return out


def remove_stopwords(text: str, language: str, table: StopwordTable,
                     segmenter: Segmenter | None = None) -> tuple[str, bool]:
    """Drop tokens whose case-folded form is a stopword for ``language``.

    Returns ``(text, table_found)``. A missing table leaves the text unchanged.
    Thai and Japanese are segmented first (``segmenter`` or script runs) when
    their table is non-empty.
    """
    words = table.get(language)
    if words is None:
        return text, False
    if language in UNSEGMENTED_LANGUAGES:
        if not words:
            return text, True
        tokens = (segmenter or script_run_segment)(text)
    else:
        tokens = text.split()
    return " ".join(t for t in tokens if t.casefold() not in words), True


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CleanText:
    text: str
    applied_steps: tuple[str, ...]
    language: str

    @property
    def empty(self) -> bool:
        return not self.text

    @property
    def warnings(self) -> tuple[str, ...]:
        return tuple(s for s in self.applied_steps if s.startswith("warn:"))


def clean_text(text: str, language: str, table: StopwordTable,
               emoji_ranges: Sequence[tuple[int, int]] | None = None,
               segmenters: Mapping[str, Segmenter] | None = None) -> CleanText:
    # Removing one item can splice two fragments into a new match (e.g. "ht#tp://")
    # so the character-level steps repeat until nothing changes; each pass shrinks
    # the string, so this terminates.
    prev = None
    cur = text
    while cur != prev:
        prev = cur
        cur = strip_noise(cur)
        cur = strip_hashtag_symbol(cur)
        cur = remove_emojis(cur, emoji_ranges)
    cur = _collapse(cur)
    segmenter = (segmenters or {}).get(language)
    cur, found = remove_stopwords(cur, language, table, segmenter)
    steps = list(STEP_NAMES)
    if not found:
        logger.debug("no stopword table for %r; passing text through", language)
        steps.append(f"warn:no_stopword_table:{language}")
    if not cur:
        steps.append("warn:empty")
    return CleanText(cur, tuple(steps), language)


def clean(record, table: StopwordTable, **kwargs) -> CleanText:
    """Clean a :class:`~cmta.corpus.TextRecord` (its raw text)."""
    return clean_text(record.raw_text, record.language, table, **kwargs)
