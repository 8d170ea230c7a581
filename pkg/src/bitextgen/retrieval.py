"""Okapi BM25 index for few-shot example selection.

Documents are tokenized with the shared normalizer (lowercase, punctuation
split); IDF = ln(1 + (N - df + 0.5)/(df + 0.5)), so scores are never
negative. Queries score as the sum over query tokens (repeats included) of
IDF(t) * tf*(k1+1) / (tf + k1*(1 - b + b*len/avglen)). Results are the top-k
positive-scoring documents, ties broken by ascending doc id. The index is
immutable once built; concurrent queries need no locking.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from pathlib import Path

from .errors import ContractError
from .textnorm import NORMALIZATION_SPEC, tokenize

_INDEX_MAGIC = b"BM25IDX2"
INDEX_FORMAT_VERSION = 2

DEFAULT_K1 = 1.5
DEFAULT_B = 0.75


def _tokenizer_spec_hash() -> bytes:
    return hashlib.blake2b(NORMALIZATION_SPEC.encode("utf-8"), digest_size=16).digest()


@dataclass
class Bm25Index:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    avg_doc_length: float
    n_docs: int
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    tokenizer_spec: str = NORMALIZATION_SPEC

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.n_docs - df + 0.5) / (df + 0.5))


def build_index(corpus: list[str], k1: float = DEFAULT_K1, b: float = DEFAULT_B) -> Bm25Index:
    if not corpus:
        raise ContractError("cannot build a BM25 index over an empty corpus")
    postings: dict[str, dict[int, int]] = {}
    doc_lengths = []
    for doc_id, doc in enumerate(corpus):
        tokens = tokenize(doc)
        doc_lengths.append(len(tokens))
        for tok in tokens:
            postings.setdefault(tok, {})
            postings[tok][doc_id] = postings[tok].get(doc_id, 0) + 1
    return Bm25Index(
        postings={t: sorted(d.items()) for t, d in postings.items()},
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths),
        n_docs=len(corpus),
        k1=k1,
        b=b,
    )


def query(index: Bm25Index, text: str, k: int) -> list[tuple[int, float]]:
    """Top-k (doc id, score), scores descending, zero-score docs excluded.

    A query with no indexed term (or no terms at all) returns an empty list.
    """
    if k < 1:
        raise ContractError("k must be >= 1")
    terms = tokenize(text)
    if not terms:
        return []
    scores: dict[int, float] = {}
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        idf = index.idf(term)
        for doc_id, tf in plist:
            norm = index.k1 * (1 - index.b + index.b * index.doc_lengths[doc_id] / index.avg_doc_length)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (index.k1 + 1) / (tf + norm)
    ranked = sorted(((doc_id, s) for doc_id, s in scores.items() if s > 0.0), key=lambda x: (-x[1], x[0]))
    return ranked[:k]


def save_index(index: Bm25Index, path: Path | str) -> None:
    """Single binary file: header {version, N, k1, b, tokenizer spec hash},
    then doc lengths and sorted postings."""
    with open(path, "wb") as fh:
        fh.write(_INDEX_MAGIC)
        fh.write(struct.pack(">IQdd", INDEX_FORMAT_VERSION, index.n_docs, index.k1, index.b))
        fh.write(_tokenizer_spec_hash())
        fh.write(struct.pack(f">{index.n_docs}I", *index.doc_lengths))
        fh.write(struct.pack(">Q", len(index.postings)))
        for term in sorted(index.postings):
            raw = term.encode("utf-8")
            plist = index.postings[term]
            fh.write(struct.pack(">HI", len(raw), len(plist)))
            fh.write(raw)
            for doc_id, tf in plist:
                fh.write(struct.pack(">II", doc_id, tf))


def load_index(path: Path | str) -> Bm25Index:
    with open(path, "rb") as fh:
        if fh.read(len(_INDEX_MAGIC)) != _INDEX_MAGIC:
            raise ContractError(f"{path} is not a BM25 index file")
        version, n_docs, k1, b = struct.unpack(">IQdd", fh.read(28))
        if version != INDEX_FORMAT_VERSION:
            raise ContractError(f"unsupported index version {version}")
        if fh.read(16) != _tokenizer_spec_hash():
            raise ContractError("index was built with a different tokenizer spec")
        doc_lengths = list(struct.unpack(f">{n_docs}I", fh.read(4 * n_docs)))
        (n_terms,) = struct.unpack(">Q", fh.read(8))
        postings: dict[str, list[tuple[int, int]]] = {}
        for _ in range(n_terms):
            raw_len, n_postings = struct.unpack(">HI", fh.read(6))
            term = fh.read(raw_len).decode("utf-8")
            plist = []
            for _ in range(n_postings):
                doc_id, tf = struct.unpack(">II", fh.read(8))
                plist.append((doc_id, tf))
            postings[term] = plist
    return Bm25Index(
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths) if doc_lengths else 0.0,
        n_docs=n_docs,
        k1=k1,
        b=b,
    )
