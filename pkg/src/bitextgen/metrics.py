"""Corpus-level MT metrics, significance testing, corpus statistics and the
Vendi diversity score.

BLEU here uses the package's own tokenizer (lowercase, punctuation split),
not a subword tokenizer, so values are comparable only within this tool;
goldens in the test suite are hand-computed. chrF++ follows the usual
char-order-6 / word-order-2 / beta-2 setup with whitespace excluded from
character n-grams and degenerate orders skipped from the average.

The paired bootstrap draws index multisets with replacement and reports the
fraction of resamples where the full-corpus loser ties or beats the winner.
"""
from __future__ import annotations

import math
import random
import shlex
import subprocess
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ContractError, IntegrationError
from .model import ParallelPair, stable_hash
from .textnorm import tokenize

MetricFn = Callable[[Sequence[str], Sequence[str]], float]


@dataclass(frozen=True)
class BleuParams:
    max_order: int = 4
    smoothing: str = "exp"
    lowercase: bool = True

    def __post_init__(self):
        if self.max_order < 1:
            raise ContractError("max_order must be >= 1")
        if self.smoothing not in ("exp", "none"):
            raise ContractError(f"unknown smoothing: {self.smoothing!r}")


@dataclass(frozen=True)
class ChrfParams:
    char_order: int = 6
    word_order: int = 2
    beta: float = 2.0

    def __post_init__(self):
        if self.char_order < 1 or self.word_order < 0:
            raise ContractError("char_order must be >= 1 and word_order >= 0")


@dataclass(frozen=True)
class BootstrapParams:
    n_samples: int = 300
    sample_size: int = 500
    alpha: float = 0.05
    seed: int = 0


def _ngram_counts(tokens: list[str], order: int) -> Counter:
    return Counter(tuple(tokens[i : i + order]) for i in range(len(tokens) - order + 1))


def bleu(hypotheses: Sequence[str], references: Sequence[str], params: BleuParams | None = None) -> float:
    """Corpus BLEU in [0, 100].

    Geometric mean of clipped n-gram precisions times the brevity penalty
    exp(min(0, 1 - ref_len/hyp_len)). Exponential smoothing halves the
    smoothed match count for each successive zero-precision order, but only
    for orders >= 2: a zero clipped-unigram count means 0.0. Orders for
    which the hypothesis corpus has no n-grams at all are skipped, so that
    identical corpora score 100 regardless of segment lengths.
    """
    params = params or BleuParams()
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ContractError("need at least one segment")

    correct = [0] * params.max_order
    total = [0] * params.max_order
    hyp_len = ref_len = 0
    for hyp, ref in zip(hypotheses, references):
        hyp_toks = tokenize(hyp, lowercase=params.lowercase)
        ref_toks = tokenize(ref, lowercase=params.lowercase)
        hyp_len += len(hyp_toks)
        ref_len += len(ref_toks)
        for n in range(1, params.max_order + 1):
            hyp_ngrams = _ngram_counts(hyp_toks, n)
            total[n - 1] += sum(hyp_ngrams.values())
            if hyp_ngrams:
                ref_ngrams = _ngram_counts(ref_toks, n)
                correct[n - 1] += sum((hyp_ngrams & ref_ngrams).values())

    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    effective_orders = 0
    smooth_halvings = 0
    for n in range(1, params.max_order + 1):
        if total[n - 1] == 0:
            continue
        effective_orders += 1
        if correct[n - 1] > 0:
            precision = correct[n - 1] / total[n - 1]
        elif params.smoothing == "exp" and n > 1:
            smooth_halvings += 1
            precision = 1.0 / (2**smooth_halvings * total[n - 1])
        else:
            return 0.0
        log_sum += math.log(precision)
    if effective_orders == 0:
        return 0.0
    bp = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * bp * math.exp(log_sum / effective_orders)


def _char_ngram_counts(text: str, order: int) -> Counter:
    chars = "".join(text.split())
    return Counter(chars[i : i + order] for i in range(len(chars) - order + 1))


def chrf_pp(hypotheses: Sequence[str], references: Sequence[str], params: ChrfParams | None = None) -> float:
    """chrF++ in [0, 100]: F_beta over per-order precisions/recalls averaged
    across character orders 1..char_order and word orders 1..word_order.

    Character n-grams exclude whitespace and keep case; word n-grams use the
    shared tokenizer without lowercasing. Orders with no n-grams on either
    side are skipped from the average (effective ordering), which keeps
    identical corpora at 100 even for very short texts.
    """
    params = params or ChrfParams()
    if len(hypotheses) != len(references):
        raise ContractError(f"{len(hypotheses)} hypotheses vs {len(references)} references")
    if not hypotheses:
        raise ContractError("need at least one segment")

    n_orders = params.char_order + params.word_order
    match = [0] * n_orders
    hyp_total = [0] * n_orders
    ref_total = [0] * n_orders
    for hyp, ref in zip(hypotheses, references):
        for n in range(1, params.char_order + 1):
            h = _char_ngram_counts(hyp, n)
            r = _char_ngram_counts(ref, n)
            match[n - 1] += sum((h & r).values())
            hyp_total[n - 1] += sum(h.values())
            ref_total[n - 1] += sum(r.values())
        hyp_words = tokenize(hyp, lowercase=False)
        ref_words = tokenize(ref, lowercase=False)
        for n in range(1, params.word_order + 1):
            i = params.char_order + n - 1
            h = _ngram_counts(hyp_words, n)
            r = _ngram_counts(ref_words, n)
            match[i] += sum((h & r).values())
            hyp_total[i] += sum(h.values())
            ref_total[i] += sum(r.values())

    precisions, recalls = [], []
    for i in range(n_orders):
        if hyp_total[i] == 0 and ref_total[i] == 0:
            continue
        precisions.append(match[i] / hyp_total[i] if hyp_total[i] else 0.0)
        recalls.append(match[i] / ref_total[i] if ref_total[i] else 0.0)
    if not precisions:
        return 0.0
    avg_p = sum(precisions) / len(precisions)
    avg_r = sum(recalls) / len(recalls)
    beta2 = params.beta**2
    denom = beta2 * avg_p + avg_r
    if denom == 0.0:
        return 0.0
    return 100.0 * (1 + beta2) * avg_p * avg_r / denom


@dataclass
class BootstrapOutcome:
    p_value: float
    win_counts: dict[str, int]
    full_score_a: float
    full_score_b: float


def paired_bootstrap(
    hyps_a: Sequence[str],
    hyps_b: Sequence[str],
    refs: Sequence[str],
    metric_fn: MetricFn,
    params: BootstrapParams | None = None,
) -> BootstrapOutcome:
    """Paired bootstrap resampling over segments.

    Each resample's indices derive from (seed, sample index), so results are
    reproducible and resamples could be evaluated in parallel. A sample
    counts as a win for the full-corpus winner only when its score is
    strictly greater; ties go to the loser, making p conservative. Exact
    full-corpus ties (including constant metrics) give p = 1.0, which also
    keeps p symmetric under swapping the two systems.
    """
    params = params or BootstrapParams()
    if not (len(hyps_a) == len(hyps_b) == len(refs)):
        raise ContractError("hyps_a, hyps_b and refs must have equal lengths")

    full_a = metric_fn(hyps_a, refs)
    full_b = metric_fn(hyps_b, refs)

    wins = {"a": 0, "b": 0, "ties": 0}
    n = len(refs)
    loser_geq_winner = 0
    for s in range(params.n_samples):
        rng = random.Random(int(stable_hash("bootstrap", params.seed, s)[:15], 16))
        idx = [rng.randrange(n) for _ in range(params.sample_size)]
        sa = metric_fn([hyps_a[i] for i in idx], [refs[i] for i in idx])
        sb = metric_fn([hyps_b[i] for i in idx], [refs[i] for i in idx])
        if sa > sb:
            wins["a"] += 1
        elif sb > sa:
            wins["b"] += 1
        else:
            wins["ties"] += 1
        winner_score, loser_score = (sa, sb) if full_a >= full_b else (sb, sa)
        if loser_score >= winner_score:
            loser_geq_winner += 1

    p = 1.0 if full_a == full_b else loser_geq_winner / params.n_samples
    return BootstrapOutcome(p_value=p, win_counts=wins, full_score_a=full_a, full_score_b=full_b)


@dataclass
class CorpusStats:
    n_pairs: int
    source_mean_words: float
    target_mean_words: float
    source_mean_tokens: float | None = None
    target_mean_tokens: float | None = None
    token_counter_error: str | None = None


def corpus_stats(pairs: Sequence[ParallelPair], token_counter_cmd: str | None = None) -> CorpusStats:
    """Mean whitespace word counts per side; mean subword tokens when an
    external counter (lines in, one integer per line out) is configured.
    Source is the HRL side, target the LRL side. A failing hook degrades to
    word-only stats with the error recorded."""
    if not pairs:
        raise ContractError("corpus_stats needs at least one pair")
    src_words = sum(len(p.hrl_text.split()) for p in pairs) / len(pairs)
    tgt_words = sum(len(p.lrl_text.split()) for p in pairs) / len(pairs)
    stats = CorpusStats(n_pairs=len(pairs), source_mean_words=src_words, target_mean_words=tgt_words)
    if token_counter_cmd:
        try:
            src_counts = _run_line_hook(token_counter_cmd, [p.hrl_text for p in pairs])
            tgt_counts = _run_line_hook(token_counter_cmd, [p.lrl_text for p in pairs])
            stats.source_mean_tokens = sum(src_counts) / len(pairs)
            stats.target_mean_tokens = sum(tgt_counts) / len(pairs)
        except IntegrationError as exc:
            stats.token_counter_error = str(exc)
    return stats


def _run_line_hook(command: str, lines: Sequence[str]) -> list[float]:
    payload = "\n".join(ln.replace("\n", " ") for ln in lines) + "\n"
    proc = subprocess.run(shlex.split(command), input=payload, capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise IntegrationError(f"hook exited {proc.returncode}: {proc.stderr.strip()}")
    out_lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(out_lines) != len(lines):
        raise IntegrationError(f"hook wrote {len(out_lines)} lines for {len(lines)} inputs")
    try:
        return [float(ln.strip()) for ln in out_lines]
    except ValueError as exc:
        raise IntegrationError(f"hook wrote a non-numeric line: {exc}") from exc


def vendi_score(similarity: np.ndarray | None = None, embeddings: np.ndarray | None = None) -> float:
    """exp of the Shannon entropy of the spectrum of K/n.

    K must be symmetric PSD with unit diagonal; when embeddings are given,
    K is the matrix of inner products of L2-normalized rows. Ranges from 1
    (all items identical) to n (all items orthogonal).
    """
    if (similarity is None) == (embeddings is None):
        raise ContractError("pass exactly one of similarity= or embeddings=")
    if embeddings is not None:
        emb = np.asarray(embeddings, dtype=float)
        if emb.ndim != 2 or emb.shape[0] < 1:
            raise ContractError("embeddings must be a non-empty n x d matrix")
        norms = np.linalg.norm(emb, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ContractError("zero-norm embedding row")
        emb = emb / norms
        k = emb @ emb.T
    else:
        k = np.asarray(similarity, dtype=float)

    if k.ndim != 2 or k.shape[0] != k.shape[1] or k.shape[0] < 1:
        raise ContractError("similarity matrix must be square and non-empty")
    n = k.shape[0]
    if not np.allclose(k, k.T, atol=1e-8):
        raise ContractError("similarity matrix must be symmetric")
    if not np.allclose(np.diag(k), 1.0, atol=1e-8):
        raise ContractError("similarity matrix must have a unit diagonal")
    eigenvalues = np.linalg.eigvalsh(k / n)
    if eigenvalues.min() < -1e-8:
        raise ContractError(f"similarity matrix is not PSD (min eigenvalue {eigenvalues.min():g})")
    entropy = -sum(float(lam) * math.log(lam) for lam in eigenvalues if lam > 0)
    return math.exp(entropy)


@dataclass(frozen=True)
class ScorerHook:
    """External per-segment scorer (e.g. a neural metric) over a line protocol:
    one "source<TAB>hypothesis<TAB>reference" per input line, one decimal per
    output line, in order."""

    command: str
    min_score: float | None = None
    max_score: float | None = None


def external_score(triples: Sequence[tuple[str, str, str]], hook: ScorerHook) -> list[float]:
    if not triples:
        raise ContractError("external_score needs at least one triple")
    lines = ["\t".join(part.replace("\t", " ").replace("\n", " ") for part in t) for t in triples]
    scores = _run_line_hook(hook.command, lines)
    for s in scores:
        if hook.min_score is not None and s < hook.min_score:
            raise IntegrationError(f"score {s} below declared minimum {hook.min_score}")
        if hook.max_score is not None and s > hook.max_score:
            raise IntegrationError(f"score {s} above declared maximum {hook.max_score}")
    return scores
