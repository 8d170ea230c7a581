"""Shared text normalization and tokenization.

One canonical normalizer is used by ROUGE rejection, n-gram decontamination,
BM25 indexing and BLEU so that "token" means the same thing everywhere:
NFC-normalize, optionally lowercase, replace Unicode punctuation with spaces,
split on whitespace.
"""
from __future__ import annotations

import unicodedata
from functools import lru_cache

NORMALIZATION_SPEC = "nfc-lower-punct2space-wsplit/v1"


@lru_cache(maxsize=4096)
def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def normalize_text(text: str, lowercase: bool = True) -> str:
    """NFC-normalize, lowercase, turn punctuation into spaces, collapse runs."""
    text = unicodedata.normalize("NFC", text)
    if lowercase:
        text = text.lower()
    text = "".join(" " if _is_punct(ch) else ch for ch in text)
    return " ".join(text.split())


def tokenize(text: str, lowercase: bool = True) -> list[str]:
    """Word tokens under the shared normalization."""
    return normalize_text(text, lowercase=lowercase).split()


def nfc(text: str) -> str:
    """NFC normalization only (applied to all persisted text)."""
    return unicodedata.normalize("NFC", text)


def word_ngrams(tokens: list[str], n: int) -> list[str]:
    """Space-joined word n-grams; empty when fewer than n tokens."""
    if len(tokens) < n:
        return []
    return [" ".join(tokens[i : i + n]) for i in range(len(tokens) - n + 1)]
