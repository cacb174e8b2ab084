"""WordPiece vocabulary training and fixed-length encoding.

Vocabulary training is frequency-greedy pair merging over words split into
characters (word-initial pieces bare, later pieces prefixed with ``##``).
Ties between equally frequent pairs go to the lexicographically smallest
``(left, right)`` pair, so the result depends only on the corpus and size.
"""
from __future__ import annotations

import hashlib
import heapq
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, CLS, SEP = "[PAD]", "[UNK]", "[CLS]", "[SEP]"
SPECIALS: tuple[str, ...] = (PAD, UNK, CLS, SEP)
PAD_ID, UNK_ID, CLS_ID, SEP_ID = 0, 1, 2, 3
CONT = "##"
MAX_WORD_CHARS = 100


class TargetTooSmall(ValueError):
    pass


class UnknownId(IndexError):
    pass


class Vocab:
    """Immutable ordered token list; a token's id is its position."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:4] != SPECIALS:
            raise ValueError(f"vocab must start with {SPECIALS}")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        if len(self.index) != len(tokens):
            raise ValueError("duplicate tokens in vocab")
        self._split_cache: dict[str, tuple[str, ...]] = {}

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def __hash__(self) -> int:
        return hash(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def to_text(self) -> str:
        return "".join(t + "\n" for t in self.tokens)

    def sha256(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        with open(path, "r", encoding="utf-8", newline="") as fh:
            text = fh.read()
        if text.endswith("\n"):
            text = text[:-1]
        return cls(text.split("\n"))


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + [CONT + c for c in word[1:]]


def _merge_symbol(a: str, b: str) -> str:
    return a + b[len(CONT):]


def _initial_inventory(word_freq: dict[str, int]) -> list[str]:
    bare: set[str] = set()
    cont: set[str] = set()
    for w in word_freq:
        bare.update(w)
        cont.update(CONT + c for c in w[1:])
    return sorted(bare) + sorted(cont)


def build_vocab(corpus: Iterable[str], target_size: int = 8000) -> Vocab:
    """Greedy pair-merge vocabulary of at most ``target_size`` tokens.

    Every codepoint seen in the corpus gets a bare token; characters seen
    inside a word also get a ``##`` token. Merges then add the most frequent
    adjacent symbol pair (weighted by word frequency) until the target size is
    reached or no pair remains.
    """
    word_freq: Counter = Counter()
    for text in corpus:
        word_freq.update(text.split())
    inventory = _initial_inventory(word_freq)
    if len(SPECIALS) + len(inventory) > target_size:
        raise TargetTooSmall(
            f"{len(SPECIALS)} specials + {len(inventory)} characters exceed target {target_size}"
        )
    tokens = list(SPECIALS) + inventory
    known = set(tokens)

    words = sorted(word_freq)
    freqs = [word_freq[w] for w in words]
    seqs = [_word_symbols(w) for w in words]

    pair_counts: dict[tuple[str, str], int] = defaultdict(int)
    where: dict[tuple[str, str], set[int]] = defaultdict(set)
    for wi, seq in enumerate(seqs):
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)
    heap = [(-c, p) for p, c in pair_counts.items()]
    heapq.heapify(heap)

    while len(tokens) < target_size and heap:
        neg, pair = heapq.heappop(heap)
        count = pair_counts.get(pair, 0)
        if count <= 0:
            continue
        if -neg != count:
            continue  # stale; a fresher entry was pushed when the count changed
        a, b = pair
        merged = _merge_symbol(a, b)
        if merged not in known:
            known.add(merged)
            tokens.append(merged)
        touched: set[tuple[str, str]] = set()
        for wi in sorted(where.pop(pair, ())):
            seq = seqs[wi]
            f = freqs[wi]
            for p in zip(seq, seq[1:]):
                pair_counts[p] -= f
                touched.add(p)
            out: list[str] = []
            i = 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == a and seq[i + 1] == b:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            seqs[wi] = out
            for p in zip(out, out[1:]):
                pair_counts[p] += f
                where[p].add(wi)
                touched.add(p)
        for p in touched:
            c = pair_counts.get(p, 0)
            if c > 0:
                heapq.heappush(heap, (-c, p))
            else:
                pair_counts.pop(p, None)
                where.pop(p, None)
    return Vocab(tokens)


def wordpiece_split(word: str, vocab: Vocab) -> list[str]:
    """Greedy longest-match-first split; any unmatched position yields ``[UNK]``."""
    cached = vocab._split_cache.get(word)
    if cached is not None:
        return list(cached)
    pieces: list[str] = []
    if len(word) > MAX_WORD_CHARS:
        pieces = [UNK]
    else:
        start = 0
        n = len(word)
        while start < n:
            end = n
            found = None
            while end > start:
                piece = word[start:end]
                if start > 0:
                    piece = CONT + piece
                if piece in vocab.index:
                    found = piece
                    break
                end -= 1
            if found is None:
                pieces = [UNK]
                break
            pieces.append(found)
            start = end
    vocab._split_cache[word] = tuple(pieces)
    return pieces


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    segment_ids: np.ndarray
    attention_mask: np.ndarray
    true_length: int

    def __len__(self) -> int:
        return len(self.ids)


def tokenize(text: str, vocab: Vocab) -> list[str]:
    pieces: list[str] = []
    for word in text.split():
        pieces.extend(wordpiece_split(word, vocab))
    return pieces


def encode(text: str, vocab: Vocab, max_len: int = 128, segment: int = 0) -> TokenSequence:
    """``[CLS] pieces [SEP]`` truncated to ``max_len`` then padded with ``[PAD]``."""
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    if segment not in (0, 1):
        raise ValueError("segment must be 0 or 1")
    pieces = tokenize(text, vocab)[: max_len - 2]
    ids = np.zeros(max_len, dtype=np.int64)
    n = len(pieces) + 2
    ids[0] = CLS_ID
    ids[1:n - 1] = [vocab.id_of(p) for p in pieces]
    ids[n - 1] = SEP_ID
    mask = np.zeros(max_len, dtype=np.int64)
    mask[:n] = 1
    segs = np.zeros(max_len, dtype=np.int64)
    if segment:
        segs[:n] = 1
    return TokenSequence(ids, segs, mask, n)


def encode_batch(texts: Sequence[str], vocab: Vocab, max_len: int = 128
                 ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack encodings into ``(ids, segment_ids, attention_mask)`` arrays ``[B, max_len]``."""
    ids = np.zeros((len(texts), max_len), dtype=np.int64)
    segs = np.zeros_like(ids)
    mask = np.zeros_like(ids)
    for i, t in enumerate(texts):
        seq = encode(t, vocab, max_len)
        ids[i] = seq.ids
        segs[i] = seq.segment_ids
        mask[i] = seq.attention_mask
    return ids, segs, mask


def decode(seq: TokenSequence | Sequence[int], vocab: Vocab) -> str:
    """Drop specials, glue ``##`` pieces onto their predecessor, space-join words."""
    ids = seq.ids if isinstance(seq, TokenSequence) else seq
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < len(vocab):
            raise UnknownId(f"token id {i} outside vocab of size {len(vocab)}")
        tok = vocab.tokens[i]
        if tok in SPECIALS:
            continue
        if tok.startswith(CONT) and words:
            words[-1] += tok[len(CONT):]
        else:
            words.append(tok)
    return " ".join(words)
