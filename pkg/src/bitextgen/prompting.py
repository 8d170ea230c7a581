"""Prompt and training-record construction.

Three prompt families: topic-guided generation prompts (instruction block,
cross-lingual seed paragraphs, target-language seed sentences, final cue),
zero-shot MT prompts (the fixed three-line translation template), and few-shot
MT prompts (completed template blocks followed by the query block). All
builders are pure functions of their inputs and the provided RNG state.

Fine-tune emission turns every parallel pair into two training records, one
per direction, with the target side as the completion.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from importlib import resources

from .errors import ConfigurationError, ContractError, PoolExhaustedError
from .model import LangCode, ParallelPair, SeedPools, Topic, write_jsonl

GENERATION_TEMPLATE_VERSION = "v1"
JUDGE_TEMPLATE_VERSION = "v1"

# Human-readable names for the language codes this project ships with; a run
# config may extend or override the table.
DEFAULT_LANGUAGE_NAMES = {
    "eng_Latn": "English",
    "eus_Latn": "Basque",
    "hau_Latn": "Hausa",
    "ibo_Latn": "Igbo",
    "kin_Latn": "Kinyarwanda",
    "npi_Deva": "Nepali",
    "som_Latn": "Somali",
    "sun_Latn": "Sundanese",
    "swh_Latn": "Swahili",
    "urd_Arab": "Urdu",
    "xho_Latn": "Xhosa",
}

PROMPT_KINDS = ("generation", "mt_zero_shot", "mt_few_shot")


def load_template(name: str, version: str) -> str:
    ref = resources.files("bitextgen.templates").joinpath(f"{name}_{version}.txt")
    return ref.read_text(encoding="utf-8")


def language_name(lang: LangCode, names: dict[str, str] | None = None) -> str:
    table = dict(DEFAULT_LANGUAGE_NAMES)
    if names:
        table.update(names)
    try:
        return table[lang.code]
    except KeyError:
        raise ConfigurationError(f"no human-readable name configured for language {lang.code}") from None


@dataclass(frozen=True)
class PromptSpec:
    kind: str
    target_lang: LangCode
    topic: Topic | None = None
    k_seed_paragraphs: int = 0
    m_seed_sentences: int = 0
    shots: int = 0

    def __post_init__(self):
        if self.kind not in PROMPT_KINDS:
            raise ContractError(f"unknown prompt kind: {self.kind!r}")
        if self.kind == "generation" and self.topic is None:
            raise ContractError("generation prompts require a topic")
        if self.kind == "mt_few_shot" and self.shots < 1:
            raise ContractError("few-shot MT prompts require shots >= 1")
        if min(self.k_seed_paragraphs, self.m_seed_sentences, self.shots) < 0:
            raise ContractError("prompt counts must be >= 0")


@dataclass(frozen=True)
class TrainingRecord:
    prompt: str
    completion: str
    direction: tuple[LangCode, LangCode]

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "completion": self.completion,
            "direction": [self.direction[0].code, self.direction[1].code],
        }


def build_generation_prompt(
    spec: PromptSpec,
    pools: SeedPools,
    rng: random.Random,
    names: dict[str, str] | None = None,
) -> str:
    """Render the topic-guided generation prompt.

    RNG consumption order is part of the contract (tests re-derive it):
    first one rng.sample over the eligible seed-paragraph indices, then one
    rng.sample over the target language's seed-sentence indices. Sampling is
    without replacement within the prompt. Target-language paragraphs are
    never eligible: demonstrations are cross-lingual, the target language
    appears only through seed sentences.
    """
    if spec.kind != "generation" or spec.topic is None:
        raise ContractError("build_generation_prompt needs a generation PromptSpec")
    tgt = spec.target_lang
    tgt_name = language_name(tgt, names)

    eligible = [(lang, text) for lang, text in pools.seed_paragraphs if lang != tgt]
    if spec.k_seed_paragraphs > len(eligible):
        raise PoolExhaustedError(
            f"asked for {spec.k_seed_paragraphs} seed paragraphs, only {len(eligible)} eligible"
        )
    para_idx = rng.sample(range(len(eligible)), spec.k_seed_paragraphs)

    sentences = pools.seed_sentences.get(tgt.code, [])
    if spec.m_seed_sentences > len(sentences):
        raise PoolExhaustedError(
            f"asked for {spec.m_seed_sentences} seed sentences in {tgt.code}, only {len(sentences)} available"
        )
    sent_idx = rng.sample(range(len(sentences)), spec.m_seed_sentences)

    sections = []
    if para_idx:
        blocks = []
        for i in para_idx:
            lang, text = eligible[i]
            blocks.append(f"{language_name(lang, names)} paragraph:\n{text}")
        sections.append("Example paragraphs in other languages:\n\n" + "\n\n".join(blocks) + "\n\n")
    if sent_idx:
        lines = "\n".join(f"- {sentences[i]}" for i in sent_idx)
        sections.append(f"Example sentences in {tgt_name}:\n{lines}\n\n")

    template = load_template("generation", GENERATION_TEMPLATE_VERSION)
    return template.format(
        language_name=tgt_name,
        language_code=tgt.code,
        topic_label=spec.topic.label,
        topic_id=spec.topic.id,
        demonstrations="".join(sections),
    )


def build_judge_prompt(topic: Topic, paragraph_text: str) -> str:
    template = load_template("judge", JUDGE_TEMPLATE_VERSION)
    return template.format(topic_label=topic.label, paragraph=paragraph_text)


def build_zero_shot_mt_prompt(
    src: LangCode,
    tgt: LangCode,
    sentence: str,
    names: dict[str, str] | None = None,
) -> str:
    """The fixed three-line translation prompt, e.g.:

    Translate this from English to Hausa:
    English: <sentence>
    Hausa:
    """
    if not sentence:
        raise ContractError("cannot build an MT prompt for an empty sentence")
    src_name = language_name(src, names)
    tgt_name = language_name(tgt, names)
    return f"Translate this from {src_name} to {tgt_name}:\n{src_name}: {sentence}\n{tgt_name}:"


def build_few_shot_mt_prompt(
    examples: list[ParallelPair],
    src: LangCode,
    tgt: LangCode,
    sentence: str,
    names: dict[str, str] | None = None,
) -> str:
    """Completed zero-shot blocks for each example (in given, i.e. ranked,
    order) followed by the uncompleted block for `sentence`. With an empty
    example list this degenerates to the zero-shot prompt byte-for-byte.
    """
    blocks = []
    for i, pair in enumerate(examples):
        if {pair.direction[0], pair.direction[1]} != {src, tgt}:
            raise ContractError(
                f"example {i} has direction {pair.direction[0]}->{pair.direction[1]}, prompt wants {src}->{tgt}"
            )
        block = build_zero_shot_mt_prompt(src, tgt, pair.text_in(src), names)
        blocks.append(f"{block} {pair.text_in(tgt)}")
    blocks.append(build_zero_shot_mt_prompt(src, tgt, sentence, names))
    return "\n\n".join(blocks)


def emit_finetune_records(
    pairs: list[ParallelPair],
    names: dict[str, str] | None = None,
) -> list[TrainingRecord]:
    """Two records per pair, one per direction; completion is the target side."""
    if not pairs:
        raise ContractError("emit_finetune_records needs at least one pair")
    records = []
    for pair in pairs:
        lrl, hrl = pair.direction
        if not pair.lrl_text.strip() or not pair.hrl_text.strip():
            raise ContractError("pair with an empty side cannot produce training records")
        records.append(
            TrainingRecord(
                prompt=build_zero_shot_mt_prompt(hrl, lrl, pair.hrl_text, names),
                completion=pair.lrl_text,
                direction=(hrl, lrl),
            )
        )
        records.append(
            TrainingRecord(
                prompt=build_zero_shot_mt_prompt(lrl, hrl, pair.lrl_text, names),
                completion=pair.hrl_text,
                direction=(lrl, hrl),
            )
        )
    return records


def write_finetune_jsonl(records: list[TrainingRecord], path) -> int:
    return write_jsonl(path, records)
