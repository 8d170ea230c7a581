from __future__ import annotations

import math
import random

import pytest

from bitextgen.errors import ContractError
from bitextgen.retrieval import build_index, load_index, query, save_index
from bitextgen.textnorm import tokenize

from conftest import random_words


def brute_force_scores(corpus: list[str], text: str, k1: float = 1.5, b: float = 0.75) -> dict[int, float]:
    """Independent BM25 scorer: re-derives df/tf by scanning documents."""
    docs = [tokenize(d) for d in corpus]
    n = len(docs)
    avg_len = sum(len(d) for d in docs) / n
    scores: dict[int, float] = {}
    for term in tokenize(text):
        df = sum(1 for d in docs if term in d)
        idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
        for doc_id, d in enumerate(docs):
            tf = d.count(term)
            if tf == 0:
                continue
            denom = tf + k1 * (1 - b + b * len(d) / avg_len)
            scores[doc_id] = scores.get(doc_id, 0.0) + idf * tf * (k1 + 1) / denom
    return {i: s for i, s in scores.items() if s > 0.0}


def brute_force_topk(corpus, text, k):
    scores = brute_force_scores(corpus, text)
    return sorted(scores.items(), key=lambda x: (-x[1], x[0]))[:k]


@pytest.fixture
def corpus():
    rng = random.Random(31)
    vocab = [f"term{i}" for i in range(150)]
    return [random_words(rng, vocab, rng.randint(4, 25)) for _ in range(200)]


class TestBuildIndex:
    def test_single_document(self):
        index = build_index(["one single document here"])
        assert index.n_docs == 1
        assert index.avg_doc_length == 4
        assert index.doc_lengths == [4]

    def test_rebuild_identical(self, corpus):
        a, b = build_index(corpus), build_index(corpus)
        assert a.postings == b.postings
        assert a.doc_lengths == b.doc_lengths

    def test_df_counts_match_document_scans(self, corpus):
        index = build_index(corpus)
        docs = [set(tokenize(d)) for d in corpus]
        for term, plist in index.postings.items():
            assert len(plist) == sum(1 for d in docs if term in d)

    def test_tf_counts_match(self, corpus):
        index = build_index(corpus)
        for term, plist in index.postings.items():
            for doc_id, tf in plist:
                assert tokenize(corpus[doc_id]).count(term) == tf

    def test_empty_corpus_rejected(self):
        with pytest.raises(ContractError):
            build_index([])

    def test_invariants(self, corpus):
        index = build_index(corpus)
        assert len(index.doc_lengths) == index.n_docs
        assert index.avg_doc_length == pytest.approx(sum(index.doc_lengths) / index.n_docs)
        for plist in index.postings.values():
            assert all(0 <= doc_id < index.n_docs for doc_id, _ in plist)


class TestQuery:
    def test_exact_document_ranks_first(self):
        rng = random.Random(8)
        vocab = [f"q{i}" for i in range(60)]
        corpus = [random_words(rng, vocab, rng.randint(5, 15)) for _ in range(50)]
        index = build_index(corpus)
        for doc_id in (0, 17, 49):
            hits = query(index, corpus[doc_id], 5)
            oracle = brute_force_topk(corpus, corpus[doc_id], 5)
            assert hits[0][0] == oracle[0][0]
            assert [h[0] for h in hits] == [o[0] for o in oracle]

    def test_no_overlap_returns_empty(self, corpus):
        index = build_index(corpus)
        assert query(index, "zebra xylophone quagga", 5) == []

    def test_zero_term_query_returns_empty(self, corpus):
        index = build_index(corpus)
        assert query(index, "..., !!!", 5) == []

    def test_topk_matches_exhaustive_scoring(self, corpus):
        index = build_index(corpus)
        rng = random.Random(77)
        vocab = [f"term{i}" for i in range(150)]
        for _ in range(50):
            q = random_words(rng, vocab, rng.randint(1, 6))
            got = query(index, q, 5)
            want = brute_force_topk(corpus, q, 5)
            assert [g[0] for g in got] == [w[0] for w in want]
            for (_, gs), (_, ws) in zip(got, want):
                assert gs == pytest.approx(ws, rel=1e-12)

    def test_scores_non_increasing_and_ties_by_doc_id(self):
        corpus = ["same words here", "same words here", "same words here", "other thing entirely"]
        index = build_index(corpus)
        hits = query(index, "same words", 10)
        assert [h[0] for h in hits] == [0, 1, 2]
        assert hits[0][1] == hits[1][1] == hits[2][1]

    def test_k_at_least_n_returns_every_positive_doc_once(self, corpus):
        index = build_index(corpus)
        q = corpus[3]
        hits = query(index, q, len(corpus) + 50)
        ids = [h[0] for h in hits]
        assert len(ids) == len(set(ids))
        assert set(ids) == set(brute_force_scores(corpus, q))

    def test_b_zero_makes_scores_length_independent(self):
        corpus = ["apple banana", "apple banana cherry dates extra words padding"]
        index = build_index(corpus, k1=1.5, b=0.0)
        hits = dict(query(index, "apple banana", 2))
        assert hits[0] == pytest.approx(hits[1])


class TestPersistence:
    def test_round_trip(self, tmp_path, corpus):
        index = build_index(corpus)
        path = tmp_path / "pool.bm25"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.postings == index.postings
        assert loaded.doc_lengths == index.doc_lengths
        assert loaded.n_docs == index.n_docs
        assert (loaded.k1, loaded.b) == (index.k1, index.b)
        q = corpus[11]
        assert query(loaded, q, 5) == query(index, q, 5)

    def test_bad_file_rejected(self, tmp_path):
        path = tmp_path / "junk.bm25"
        path.write_bytes(b"not an index")
        with pytest.raises(ContractError):
            load_index(path)
