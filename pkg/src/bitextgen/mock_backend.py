"""Deterministic offline mock for text generation and translation.

The mock generator emits pseudo-text from a per-language synthetic vocabulary
keyed by (seed, prompt hash, topic id when parseable from the prompt); it is
bit-reproducible across processes (no reliance on PYTHONHASHSEED). Language
codes carry a script suffix and the vocabulary uses that script, so language
identification downstream behaves like it would on real text.

The mock translator is a tagged bijection (script tag + reversed text), so
round-tripping a translation recovers the input exactly.
"""
from __future__ import annotations

import random
import re
from functools import lru_cache

from .model import stable_hash

_LANG_CODE_IN_PROMPT = re.compile(r"\(([a-z]{3}_[A-Za-z]{4})\)")
_TOPIC_ID_IN_PROMPT = re.compile(r"topic #(\d+)")
_MT_PROMPT = re.compile(r"^Translate this from (.+) to (.+):", re.MULTILINE)
_JUDGE_PROMPT_CUE = "Answer Yes or No."

_TRANSLATION_TAG = re.compile(r"^⟦([^⟧]+)⟧ ")

# Independent (non-combining) letters per script suffix; unknown scripts fall
# back to Latin.
_SCRIPT_CHARS = {
    "Latn": "abcdefghijklmnopqrstuvwxyz",
    "Deva": "".join(chr(c) for c in range(0x0905, 0x0939)),
    "Cyrl": "".join(chr(c) for c in range(0x0430, 0x0450)),
    "Arab": "".join(chr(c) for c in range(0x0627, 0x064B)),
    "Grek": "".join(chr(c) for c in range(0x03B1, 0x03CA)),
    "Ethi": "".join(chr(c) for c in range(0x1200, 0x1240)),
}
_SENTENCE_END = {"Deva": "।"}  # danda for Devanagari, "." elsewhere

_VOCAB_SIZE = 240


def _seed_int(*parts) -> int:
    return int(stable_hash(*parts)[:16], 16)


@lru_cache(maxsize=64)
def synthetic_vocabulary(key: str) -> tuple[str, ...]:
    """Deterministic pseudo-word list for a language key.

    `key` is a language code like "hau_Latn" or any tag (e.g. "name:English"
    for prompts that only carry a human-readable name). Two keys sharing a
    script still get distinct vocabularies because word composition is seeded
    by the whole key.
    """
    script = key.split("_")[1] if "_" in key and key.split("_")[1] in _SCRIPT_CHARS else "Latn"
    chars = _SCRIPT_CHARS[script]
    rng = random.Random(_seed_int("vocab", key))
    # A per-language subset of the script's letters keeps trigram profiles apart.
    alphabet = sorted(rng.sample(chars, max(10, len(chars) * 2 // 3)))
    words = set()
    while len(words) < _VOCAB_SIZE:
        n_syll = rng.randint(1, 3)
        word = "".join(rng.choice(alphabet) + rng.choice(alphabet) for _ in range(n_syll + 1))
        words.add(word)
    return tuple(sorted(words))


def _script_of(key: str) -> str:
    if "_" in key and key.split("_")[1] in _SCRIPT_CHARS:
        return key.split("_")[1]
    return "Latn"


def synthetic_sentence(key: str, rng: random.Random) -> str:
    vocab = synthetic_vocabulary(key)
    n = rng.randint(6, 14)
    words = [rng.choice(vocab) for _ in range(n)]
    if _script_of(key) == "Latn":
        words[0] = words[0].capitalize()
    return " ".join(words) + _SENTENCE_END.get(_script_of(key), ".")


def synthetic_paragraph(key: str, rng: random.Random) -> str:
    return " ".join(synthetic_sentence(key, rng) for _ in range(rng.randint(4, 8)))


def mock_complete(model_name: str, prompt: str, temperature: float, seed: int | None) -> str:
    """Deterministic completion for a mock chat profile.

    Greedy decoding (temperature 0) ignores the seed, mirroring real decoders;
    only the (model, prompt) pair matters then.
    """
    effective_seed = seed if temperature > 0 else 0
    rng = random.Random(_seed_int("complete", model_name, effective_seed, stable_hash(prompt)))

    if _JUDGE_PROMPT_CUE in prompt:
        return "Yes" if rng.random() < 0.9 else "No"

    mt = _MT_PROMPT.search(prompt)
    if mt:
        target_key = f"name:{mt.group(2).strip()}"
        return synthetic_sentence(target_key, rng)

    lang = _LANG_CODE_IN_PROMPT.search(prompt)
    key = lang.group(1) if lang else "mok_Latn"
    topic = _TOPIC_ID_IN_PROMPT.search(prompt)
    if topic:
        rng = random.Random(_seed_int("complete", model_name, effective_seed, stable_hash(prompt), topic.group(1)))
    return synthetic_paragraph(key, rng)


def mock_translate(text: str, src_code: str, tgt_code: str) -> str:
    """Tagged reversible transform; see mock_invert_translation."""
    return f"⟦{src_code}⟧ {text[::-1]}"


def mock_invert_translation(translated: str) -> str:
    """Invert mock_translate, recovering the original segment."""
    m = _TRANSLATION_TAG.match(translated)
    body = translated[m.end():] if m else translated
    return body[::-1]
