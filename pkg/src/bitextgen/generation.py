"""Paragraph-generation loop with ROUGE-1 near-duplicate rejection.

Each attempt samples a topic uniformly (with replacement), builds a prompt
from freshly sampled seeds, calls the generator, and accepts the output iff
its maximum ROUGE-1 F1 against every previously accepted paragraph of the run
stays below the rejection threshold. Accepted paragraphs are appended to disk
immediately, so an interrupted run resumes from the last written record.
"""
from __future__ import annotations

import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, PipelineError
from .gateway import DecodeParams, Gateway, BackendProfile, derived_seed
from .model import GeneratedParagraph, LangCode, SeedPools, append_jsonl, read_jsonl, stable_hash
from .prompting import PromptSpec, build_generation_prompt, build_judge_prompt
from .textnorm import tokenize

logger = logging.getLogger(__name__)

GEN_STATE_FILE = "generation_state.json"


@dataclass
class GenerationConfig:
    target_lang: LangCode
    n_target_paragraphs: int
    rouge_threshold: float = 0.7
    temperature: float = 1.0
    max_attempts_per_slot: int = 4
    seed: int = 0
    k_seed_paragraphs: int = 2
    m_seed_sentences: int = 5
    max_new_tokens: int = 512

    def __post_init__(self):
        if self.n_target_paragraphs < 1 or self.max_attempts_per_slot < 1:
            raise ContractError("n_target_paragraphs and max_attempts_per_slot must be >= 1")
        if not 0 < self.rouge_threshold <= 1:
            raise ContractError("rouge_threshold must be in (0, 1]")
        if self.temperature > 1.2:
            logger.warning(
                "generation temperature %.2f is above 1.2; outputs tend to degenerate there", self.temperature
            )


def rouge1_f(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """ROUGE-1 F1: clipped unigram overlap, 0 when either side is empty."""
    if not candidate_tokens or not reference_tokens:
        return 0.0
    overlap = sum((Counter(candidate_tokens) & Counter(reference_tokens)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(candidate_tokens)
    r = overlap / len(reference_tokens)
    return 2 * p * r / (p + r)


class AcceptedPool:
    """Unigram multisets of accepted paragraphs plus an inverted index.

    The index prunes pool members sharing no token with the candidate (their
    ROUGE-1 is 0 by definition), keeping per-candidate cost flat as the pool
    grows. Tokenization is identical to rouge1_f's callers: the shared
    normalizer.
    """

    def __init__(self):
        self._ids: list[str] = []
        self._counts: list[Counter] = []
        self._lengths: list[int] = []
        self._token_to_members: dict[str, set[int]] = {}

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, paragraph_id: str, tokens: list[str]) -> None:
        idx = len(self._ids)
        self._ids.append(paragraph_id)
        counts = Counter(tokens)
        self._counts.append(counts)
        self._lengths.append(len(tokens))
        for tok in counts:
            self._token_to_members.setdefault(tok, set()).add(idx)

    def max_overlap(self, tokens: list[str]) -> tuple[float, str | None]:
        """(max ROUGE-1 F1 over the pool, arg-max id); (0.0, None) when no
        member overlaps. Ties resolve to the earliest-added member."""
        if not self._ids or not tokens:
            return 0.0, None
        cand_counts = Counter(tokens)
        members: set[int] = set()
        for tok in cand_counts:
            members |= self._token_to_members.get(tok, set())
        best, best_id = 0.0, None
        for idx in sorted(members):
            overlap = sum((cand_counts & self._counts[idx]).values())
            if overlap == 0:
                continue
            p = overlap / len(tokens)
            r = overlap / self._lengths[idx]
            score = 2 * p * r / (p + r)
            if score > best:
                best, best_id = score, self._ids[idx]
        return best, best_id


def max_pool_overlap(candidate: str, pool: AcceptedPool) -> tuple[float, str | None]:
    return pool.max_overlap(tokenize(candidate))


@dataclass
class GenerationResult:
    accepted: int
    attempts_used: int
    rejected_overlap: int
    rejected_empty: int
    backend_failures: int
    shortfall: int
    paragraphs_path: Path


def run_generation(
    config: GenerationConfig,
    pools: SeedPools,
    gw: Gateway,
    profile: BackendProfile,
    out_dir: Path | str,
    run_id: str,
) -> GenerationResult:
    """Generate until the target count is reached or the attempt budget
    (n_target_paragraphs x max_attempts_per_slot) runs out. A shortfall is
    reported in the result, not raised. Restartable: existing records are
    reloaded and the attempt counter continues where it stopped, so the
    attempt-indexed randomness replays identically.
    """
    pools.require_for(config.target_lang)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paragraphs_path = out_dir / "paragraphs.jsonl"
    state_path = out_dir / GEN_STATE_FILE

    pool = AcceptedPool()
    accepted = 0
    for para in read_jsonl(paragraphs_path, GeneratedParagraph.from_json) if paragraphs_path.exists() else []:
        if para.target_lang == config.target_lang:
            pool.add(para.id, tokenize(para.text))
            accepted += 1
    attempts = 0
    if state_path.exists():
        attempts = json.loads(state_path.read_text(encoding="utf-8")).get("attempts_used", 0)

    budget = config.n_target_paragraphs * config.max_attempts_per_slot
    rejected_overlap = rejected_empty = failures = 0

    while accepted < config.n_target_paragraphs and attempts < budget:
        attempt_rng = random.Random(derived_seed(config.seed, "generate", config.target_lang.code, attempts))
        attempts += 1
        topic = pools.topics[attempt_rng.randrange(len(pools.topics))]
        spec = PromptSpec(
            kind="generation",
            target_lang=config.target_lang,
            topic=topic,
            k_seed_paragraphs=config.k_seed_paragraphs,
            m_seed_sentences=config.m_seed_sentences,
        )
        prompt = build_generation_prompt(spec, pools, attempt_rng)
        params = DecodeParams(
            temperature=config.temperature,
            max_new_tokens=config.max_new_tokens,
            seed=derived_seed(config.seed, "decode", config.target_lang.code, attempts - 1),
        )
        try:
            completion = gw.complete(profile, prompt, params)
        except PipelineError as exc:
            failures += 1
            logger.warning("generation attempt %d failed: %s", attempts, exc)
            _save_state(state_path, attempts)
            continue

        text = completion.text.strip()
        if not text:
            rejected_empty += 1
            _save_state(state_path, attempts)
            continue
        score, _ = max_pool_overlap(text, pool)
        if score >= config.rouge_threshold:
            rejected_overlap += 1
            _save_state(state_path, attempts)
            continue

        para = GeneratedParagraph(
            id=stable_hash(run_id, accepted),
            topic=topic,
            target_lang=config.target_lang,
            text=text,
            prompt_fingerprint=stable_hash(prompt),
            backend_id=profile.backend_id,
            temperature=config.temperature,
            max_pool_overlap=score,
        )
        append_jsonl(paragraphs_path, para)
        pool.add(para.id, tokenize(para.text))
        accepted += 1
        _save_state(state_path, attempts)

    shortfall = config.n_target_paragraphs - accepted
    if shortfall > 0:
        logger.warning("generation stopped %d paragraphs short after %d attempts", shortfall, attempts)
    return GenerationResult(
        accepted=accepted,
        attempts_used=attempts,
        rejected_overlap=rejected_overlap,
        rejected_empty=rejected_empty,
        backend_failures=failures,
        shortfall=shortfall,
        paragraphs_path=paragraphs_path,
    )


def _save_state(state_path: Path, attempts: int) -> None:
    state_path.write_text(json.dumps({"attempts_used": attempts}) + "\n", encoding="utf-8")


def judge_topic_alignment(
    paragraph: GeneratedParagraph,
    gw: Gateway,
    judge_profile: BackendProfile,
    seed: int | None = None,
) -> str:
    """Ask a judge model whether the paragraph addresses its topic.

    Returns "yes", "no" or "unparseable" (only the first word of the reply
    counts, case-insensitively). Transport problems raise; they are not
    "unparseable".
    """
    if judge_profile.kind not in ("chat_llm", "mock"):
        raise ContractError("judge profile must be chat_llm or mock")
    prompt = build_judge_prompt(paragraph.topic, paragraph.text)
    result = gw.complete(judge_profile, prompt, DecodeParams(temperature=0.0, max_new_tokens=8, seed=seed))
    first = result.text.strip().split()
    head = first[0].strip(".,!:;\"'").lower() if first else ""
    if head == "yes":
        return "yes"
    if head == "no":
        return "no"
    return "unparseable"
