"""Sentence splitting, language-ID filtering, length filtering and 10-gram
decontamination.

The splitter is rule-based: split after a terminator followed by whitespace
and an uppercase-or-uncased character, unless the token ending at the
terminator is a listed abbreviation. No character outside whitespace is ever
lost.

The built-in language identifier is a smoothed character-trigram model
trained on the run's seed sentences; an external labeler can be plugged in
through a line protocol (one sentence in per line, "label<TAB>confidence"
out per line).

Decontamination drops a sentence iff one of its normalized word 10-grams
hashes into the blocklist AND the literal n-gram confirms the hit (hash
collisions are excluded by construction).
"""
from __future__ import annotations

import hashlib
import math
import shlex
import struct
import subprocess
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol

from .errors import ContractError, IntegrationError, TrainingError
from .model import LangCode, SentenceRecord, StageCounts, GeneratedParagraph, write_jsonl
from .textnorm import NORMALIZATION_SPEC, tokenize, word_ngrams

DEFAULT_TERMINATORS = frozenset({".", "!", "?", "।", "؟"})
DECON_NGRAM_ORDER = 10

_BLOCKLIST_MAGIC = b"BXNGBL01"


@dataclass(frozen=True)
class SplitterRules:
    terminators: frozenset[str] = DEFAULT_TERMINATORS
    abbreviations: dict[str, frozenset[str]] = field(default_factory=dict)
    min_tokens: int = 3
    max_tokens: int = 150

    def __post_init__(self):
        if not self.terminators:
            raise ContractError("terminator set must be non-empty")
        if self.min_tokens < 1:
            raise ContractError("min_tokens must be >= 1")

    def abbreviations_for(self, lang: LangCode) -> frozenset[str]:
        return self.abbreviations.get(lang.code, frozenset()) | self.abbreviations.get("*", frozenset())


def _is_upper_or_uncased(ch: str) -> bool:
    return ch.isupper() or ch.lower() == ch.upper()


def split_sentences(paragraph: str, rules: SplitterRules, lang: LangCode) -> list[str]:
    """Split a paragraph into sentences; empty segments are dropped.

    Concatenating the outputs equals the input up to boundary whitespace.
    """
    abbrevs = rules.abbreviations_for(lang)
    text = paragraph
    n = len(text)
    sentences: list[str] = []
    start = 0
    i = 0
    while i < n:
        if text[i] in rules.terminators:
            j = i + 1
            k = j
            while k < n and text[k].isspace():
                k += 1
            if k > j and k < n and _is_upper_or_uncased(text[k]):
                tok_start = i
                while tok_start > start and not text[tok_start - 1].isspace():
                    tok_start -= 1
                if text[tok_start : i + 1] not in abbrevs:
                    sentences.append(text[start:j])
                    start = k
                    i = k
                    continue
        i += 1
    if start < n:
        sentences.append(text[start:])
    return [s for s in (seg.strip() for seg in sentences) if s]


class LanguageClassifier(Protocol):
    def classify_batch(self, sentences: list[str]) -> list[tuple[LangCode, float]]: ...


@dataclass
class LangIdModel:
    """Per-language character-trigram model with add-alpha smoothing.

    Scores P(c | two preceding chars); the posterior over languages uses a
    configurable prior (uniform by default). Confidence is the normalized
    posterior of the winning language.
    """

    languages: list[str]
    trigram_counts: dict[str, dict[str, int]]
    bigram_counts: dict[str, dict[str, int]]
    priors: dict[str, float]
    smoothing: float
    charset_size: int

    @staticmethod
    def _normalize(sentence: str) -> str:
        s = unicodedata.normalize("NFC", sentence).lower()
        return "  " + " ".join(s.split())

    def _log_likelihood(self, lang: str, text: str) -> float:
        tri = self.trigram_counts[lang]
        bi = self.bigram_counts[lang]
        a = self.smoothing
        v = self.charset_size + 1
        total = 0.0
        for i in range(2, len(text)):
            ctx = text[i - 2 : i]
            total += math.log((tri.get(ctx + text[i], 0) + a) / (bi.get(ctx, 0) + a * v))
        return total

    def classify(self, sentence: str) -> tuple[LangCode, float]:
        if not sentence or not sentence.strip():
            raise ContractError("cannot classify an empty sentence")
        text = self._normalize(sentence)
        scores = {
            lang: math.log(self.priors[lang]) + self._log_likelihood(lang, text) for lang in self.languages
        }
        m = max(scores.values())
        z = sum(math.exp(s - m) for s in scores.values())
        best = max(sorted(scores), key=lambda lang: scores[lang])
        return LangCode(best), math.exp(scores[best] - m) / z

    def classify_batch(self, sentences: list[str]) -> list[tuple[LangCode, float]]:
        return [self.classify(s) for s in sentences]


def train_langid(
    seed_sentences: dict[str, list[str]],
    smoothing: float = 1.0,
    priors: dict[str, float] | None = None,
) -> LangIdModel:
    """Train the built-in classifier; every configured language needs seeds."""
    if not seed_sentences:
        raise TrainingError("no languages to train on")
    for lang, sents in seed_sentences.items():
        if not sents:
            raise TrainingError(f"language {lang} has zero seed sentences")
    languages = sorted(seed_sentences)
    trigrams: dict[str, dict[str, int]] = {}
    bigrams: dict[str, dict[str, int]] = {}
    charset: set[str] = set()
    for lang in languages:
        tri: Counter = Counter()
        bi: Counter = Counter()
        for sentence in seed_sentences[lang]:
            text = LangIdModel._normalize(sentence)
            charset.update(text)
            for i in range(2, len(text)):
                tri[text[i - 2 : i + 1]] += 1
                bi[text[i - 2 : i]] += 1
        trigrams[lang] = dict(tri)
        bigrams[lang] = dict(bi)
    if priors is None:
        priors = {lang: 1.0 / len(languages) for lang in languages}
    return LangIdModel(
        languages=languages,
        trigram_counts=trigrams,
        bigram_counts=bigrams,
        priors=priors,
        smoothing=smoothing,
        charset_size=len(charset),
    )


@dataclass
class ExternalClassifier:
    """Adapter for any labeler speaking the line protocol."""

    command: str

    def classify_batch(self, sentences: list[str]) -> list[tuple[LangCode, float]]:
        payload = "\n".join(s.replace("\n", " ") for s in sentences) + "\n"
        proc = subprocess.run(
            shlex.split(self.command), input=payload, capture_output=True, text=True, check=False
        )
        if proc.returncode != 0:
            raise IntegrationError(f"external classifier exited {proc.returncode}: {proc.stderr.strip()}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        if len(lines) != len(sentences):
            raise IntegrationError(f"external classifier wrote {len(lines)} lines for {len(sentences)} inputs")
        out = []
        for ln in lines:
            try:
                label, conf = ln.split("\t")
                out.append((LangCode(label.strip()), float(conf)))
            except (ValueError, ContractError) as exc:
                raise IntegrationError(f"bad classifier line: {ln!r}") from exc
        return out


def _hash64(ngram: str) -> int:
    return int.from_bytes(hashlib.blake2b(ngram.encode("utf-8"), digest_size=8).digest(), "big")


@dataclass
class NgramBlocklist:
    """64-bit hashes of word 10-grams from the evaluation sets, with the
    literal n-grams retained for collision verification."""

    n: int = DECON_NGRAM_ORDER
    normalization_spec: str = NORMALIZATION_SPEC
    entries: dict[int, set[str]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(v) for v in self.entries.values())

    def add_text(self, text: str) -> None:
        for ngram in word_ngrams(tokenize(text), self.n):
            self.entries.setdefault(_hash64(ngram), set()).add(ngram)

    @classmethod
    def build(cls, texts: Iterable[str], n: int = DECON_NGRAM_ORDER) -> "NgramBlocklist":
        bl = cls(n=n)
        for text in texts:
            bl.add_text(text)
        return bl

    def matched_ngrams(self, text: str) -> list[str]:
        """Literal 10-grams of `text` present in the blocklist (verified)."""
        hits = []
        for ngram in word_ngrams(tokenize(text), self.n):
            stored = self.entries.get(_hash64(ngram))
            if stored is not None and ngram in stored:
                hits.append(ngram)
        return hits

    def save(self, path: Path | str) -> None:
        flat = sorted((h, lit) for h, lits in self.entries.items() for lit in lits)
        spec = self.normalization_spec.encode("utf-8")
        with open(path, "wb") as fh:
            fh.write(_BLOCKLIST_MAGIC)
            fh.write(struct.pack(">H", len(spec)))
            fh.write(spec)
            fh.write(struct.pack(">IQ", self.n, len(flat)))
            for h, lit in flat:
                raw = lit.encode("utf-8")
                fh.write(struct.pack(">QI", h, len(raw)))
                fh.write(raw)

    @classmethod
    def load(cls, path: Path | str) -> "NgramBlocklist":
        with open(path, "rb") as fh:
            if fh.read(len(_BLOCKLIST_MAGIC)) != _BLOCKLIST_MAGIC:
                raise ContractError(f"{path} is not a blocklist file")
            (spec_len,) = struct.unpack(">H", fh.read(2))
            spec = fh.read(spec_len).decode("utf-8")
            n, count = struct.unpack(">IQ", fh.read(12))
            bl = cls(n=n, normalization_spec=spec)
            for _ in range(count):
                h, raw_len = struct.unpack(">QI", fh.read(12))
                lit = fh.read(raw_len).decode("utf-8")
                bl.entries.setdefault(h, set()).add(lit)
            return bl


def decontaminate(records: list[SentenceRecord], blocklist: NgramBlocklist) -> list[SentenceRecord]:
    """Flip kept records sharing a verified 10-gram with the blocklist to
    dropped_decontaminated; everything else passes through unchanged (a
    record dropped earlier keeps its original reason). Idempotent."""
    out = []
    for rec in records:
        if rec.status == "kept" and blocklist.matched_ngrams(rec.text):
            out.append(rec.with_status("dropped_decontaminated"))
        else:
            out.append(rec)
    return out


def apply_filters(
    paragraphs: list[GeneratedParagraph],
    rules: SplitterRules,
    classifier: LanguageClassifier,
    blocklist: NgramBlocklist,
    expected_lang: LangCode,
    conf_threshold: float = 0.5,
    out_path: Path | str | None = None,
) -> tuple[list[SentenceRecord], StageCounts]:
    """Split, language-filter, length-filter and decontaminate.

    Every sentence is written with its status; kept text is never mutated.
    Filter order fixes the recorded reason: language-ID first, then length,
    then decontamination.
    """
    texts: list[str] = []
    meta: list[tuple[str, int]] = []
    for para in paragraphs:
        for pos, sent in enumerate(split_sentences(para.text, rules, expected_lang)):
            texts.append(sent)
            meta.append((para.id, pos))

    records: list[SentenceRecord] = []
    if texts:
        verdicts = classifier.classify_batch(texts)
        for (para_id, pos), sent, (label, conf) in zip(meta, texts, verdicts):
            if label != expected_lang or conf < conf_threshold:
                status = "dropped_langid"
            elif not rules.min_tokens <= len(sent.split()) <= rules.max_tokens:
                status = "dropped_length"
            else:
                status = "kept"
            records.append(
                SentenceRecord(
                    paragraph_id=para_id,
                    position=pos,
                    text=sent,
                    langid_label=label,
                    langid_confidence=conf,
                    status=status,
                )
            )
    records = decontaminate(records, blocklist)

    counts = StageCounts(
        paragraphs=len(paragraphs),
        sentences_raw=len(records),
        sentences_after_langid=sum(1 for r in records if r.status in ("kept", "dropped_decontaminated")),
        sentences_after_decon=sum(1 for r in records if r.status == "kept"),
        pairs=0,
    )
    if out_path is not None:
        write_jsonl(out_path, records)
    return records, counts
