"""Deterministic synthetic corpora and count fixtures for tests and acceptance runs.

Texts are synthetic; only the label/count structure of the reference tables is
mirrored.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .corpus import LANGUAGES, FactCheckerRating, MisinfoClass, TextRecord, map_rating

# Filler vocabulary per language. Kept free of stopwords and of marker tokens.
FILLERS: dict[str, tuple[str, ...]] = {
    "en": ("vaccine", "hospital", "virus", "government", "report", "doctors", "lockdown", "masks",
           "cases", "city", "school", "patients", "testing", "border", "market", "video"),
    "es": ("vacuna", "hospital", "gobierno", "informe", "médicos", "cuarentena", "mascarillas",
           "casos", "ciudad", "escuela", "pacientes", "frontera", "mercado", "video", "salud", "país"),
    "in": ("vaksin", "rumah", "sakit", "pemerintah", "laporan", "dokter", "masker", "kasus",
           "kota", "sekolah", "pasien", "perbatasan", "pasar", "video", "warga", "obat"),
    "fr": ("vaccin", "hôpital", "gouvernement", "rapport", "médecins", "confinement", "masques",
           "cas", "ville", "école", "patients", "frontière", "marché", "vidéo", "santé", "virus"),
    "ja": ("ワクチン", "病院", "政府", "報告", "医師", "封鎖", "マスク", "感染", "都市", "学校",
           "患者", "検査", "国境", "市場", "動画", "東京"),
    "th": ("วัคซีน", "โรงพยาบาล", "รัฐบาล", "รายงาน", "แพทย์", "หน้ากาก", "ผู้ป่วย", "ตลาด",
           "โรงเรียน", "เมือง", "ไวรัส", "ตรวจ", "ชายแดน", "วิดีโอ", "ข่าว", "ยา"),
    "hi": ("टीका", "अस्पताल", "सरकार", "रिपोर्ट", "डॉक्टर", "तालाबंदी", "मास्क", "मामले",
           "शहर", "स्कूल", "मरीज", "जांच", "सीमा", "बाजार", "वीडियो", "दवा"),
    "de": ("impfstoff", "krankenhaus", "regierung", "bericht", "ärzte", "masken", "fälle",
           "stadt", "schule", "patienten", "grenze", "markt", "video", "gesundheit", "virus", "test"),
}

# Disjoint marker tokens per class; their presence alone determines the label.
MARKERS: dict[MisinfoClass, tuple[str, ...]] = {
    MisinfoClass.FALSE: ("hoaxclaim", "fabricated", "debunked", "bogus"),
    MisinfoClass.PARTIALLY_FALSE: ("exaggerated", "halftruth", "overstated", "cherrypicked"),
    MisinfoClass.MISLEADING: ("miscaptioned", "outofcontext", "doctored", "decontextualized"),
}

DEFAULT_MONTHS = ("2020-02", "2020-03", "2020-04")


@dataclass(frozen=True)
class SyntheticSpec:
    languages: tuple[str, ...] = ("en", "es")
    per_cell: int = 32
    seed: int = 0
    markers: dict = field(default_factory=lambda: dict(MARKERS))
    months: tuple[str, ...] = DEFAULT_MONTHS
    filler_range: tuple[int, int] = (4, 10)
    markers_per_record: tuple[int, int] = (1, 2)

    def __post_init__(self):
        if self.per_cell < 0:
            raise ValueError("per_cell must be >= 0")
        unknown = [lang for lang in self.languages if lang not in FILLERS]
        if unknown:
            raise ValueError(f"no filler vocabulary for {unknown}")
        seen: set[str] = set()
        for toks in self.markers.values():
            if seen & set(toks):
                raise ValueError("marker vocabularies must be disjoint")
            seen |= set(toks)
        lo, hi = self.filler_range
        if not 0 <= lo <= hi:
            raise ValueError("bad filler_range")


def _text(rng: np.random.Generator, language: str, markers: Sequence[str], spec: SyntheticSpec) -> str:
    lo, hi = spec.filler_range
    words = list(rng.choice(FILLERS[language], size=int(rng.integers(lo, hi + 1))))
    mlo, mhi = spec.markers_per_record
    for _ in range(int(rng.integers(mlo, mhi + 1))):
        words.insert(int(rng.integers(0, len(words) + 1)), str(rng.choice(markers)))
    return " ".join(str(w) for w in words)


def gen_synthetic(spec: SyntheticSpec = SyntheticSpec()) -> list[TextRecord]:
    """Balanced labeled corpus: ``per_cell`` records per (language, class)."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for lang in spec.languages:
        for cls in MisinfoClass:
            for i in range(spec.per_cell):
                out.append(TextRecord(
                    id=f"syn-{lang}-{cls.name.lower()}-{i:05d}",
                    raw_text=_text(rng, lang, spec.markers[cls], spec),
                    language=lang,
                    month=spec.months[int(rng.integers(len(spec.months)))] if spec.months else None,
                    source="synthetic",
                    gold_class=cls,
                ))
    return out


def rule_oracle(text: str, markers: Optional[dict] = None) -> Optional[MisinfoClass]:
    """Label by marker lookup; None when no (or conflicting) markers appear."""
    markers = markers if markers is not None else MARKERS
    tokens = set(text.split())
    hits = [c for c, toks in markers.items() if tokens & set(toks)]
    return hits[0] if len(hits) == 1 else None


def gen_corpus(n: int, languages: Sequence[str] = LANGUAGES, seed: int = 0,
               months: Sequence[str] = DEFAULT_MONTHS) -> list[TextRecord]:
    """Unlabeled inference corpus of ``n`` records cycling through languages."""
    rng = np.random.default_rng(seed)
    spec = SyntheticSpec(languages=tuple(languages), per_cell=0, seed=seed)
    classes = list(MisinfoClass)
    out = []
    for i in range(n):
        lang = languages[i % len(languages)]
        cls = classes[int(rng.integers(3))]
        month = months[int(rng.integers(len(months)))] if months else None
        out.append(TextRecord(id=f"c{i:07d}", raw_text=_text(rng, lang, MARKERS[cls], spec),
                              language=lang, month=month, source="synthetic"))
    return out


def gen_multilingual_strings(n: int, seed: int = 0, max_words: int = 12) -> list[str]:
    """Random space-separated strings drawn from every language's filler list."""
    rng = np.random.default_rng(seed)
    pool = [w for lang in LANGUAGES for w in FILLERS[lang]] + [w for t in MARKERS.values() for w in t]
    return [" ".join(rng.choice(pool, size=int(rng.integers(1, max_words + 1)))) for _ in range(n)]


# ---------------------------------------------------------------------------
# reference-count fixtures
# ---------------------------------------------------------------------------

# (source, language, class, count) rows of the collected training set
TABLE1_ROWS: tuple[tuple[str, str, MisinfoClass, int], ...] = (
    ("poynter", "en", MisinfoClass.FALSE, 2869),
    ("poynter", "en", MisinfoClass.PARTIALLY_FALSE, 2765),
    ("poynter", "en", MisinfoClass.MISLEADING, 2837),
    ("chequeado", "es", MisinfoClass.FALSE, 191),
    ("chequeado", "es", MisinfoClass.PARTIALLY_FALSE, 161),
    ("chequeado", "es", MisinfoClass.MISLEADING, 179),
    ("checkworthy-tweets", "en", MisinfoClass.FALSE, 500),
)
TABLE1_TOTAL = 9502

# language -> tweet count of the inference corpus
INFERENCE_MANIFEST: dict[str, int] = {
    "en": 1_472_448,
    "es": 353_294,
    "in": 80_764,
    "fr": 71_722,
    "ja": 71_418,
    "th": 36_824,
    "hi": 27_320,
    "de": 23_316,
}
INFERENCE_TOTAL = 2_137_106

# Monolingual baselines of the comparison table, in row order, then the multilingual model.
COMPARISON_SPECS: tuple[tuple[str, str], ...] = (
    ("EnglishBERT", "en"),
    ("SpanishBERT", "es"),
    ("FrenchBERT", "fr"),
    ("GermanBERT", "de"),
    ("HindiBERT", "hi"),
    ("JapaneseBERT", "ja"),
    ("ThaiBERT", "th"),
    ("IndonesianBERT", "in"),
    ("CMTA", "multilingual"),
)


def _preimage(cls: MisinfoClass) -> list[FactCheckerRating]:
    return [r for r in FactCheckerRating if map_rating(r) == cls]


def table1_fixture() -> list[TextRecord]:
    """9,502 labeled records with the collected set's class/language/source counts.

    Ratings cycle over each class's pre-merge fact-checker ratings; texts are synthetic.
    """
    out = []
    spec = SyntheticSpec(languages=("en", "es"), per_cell=0)
    rng = np.random.default_rng(1)
    for source, lang, cls, count in TABLE1_ROWS:
        ratings = _preimage(cls) if source != "checkworthy-tweets" else [FactCheckerRating.FALSE]
        for i in range(count):
            out.append(TextRecord(
                id=f"{source}-{lang}-{cls.name.lower()}-{i:05d}",
                raw_text=_text(rng, lang, MARKERS[cls], spec),
                language=lang,
                source=source,
                rating=ratings[i % len(ratings)],
                gold_class=cls,
            ))
    return out
