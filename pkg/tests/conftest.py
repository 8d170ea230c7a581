from __future__ import annotations

import random

import pytest

from bitextgen.gateway import BackendProfile, Gateway, RetryPolicy
from bitextgen.model import LangCode, ParallelPair, SentenceRecord, stable_hash


@pytest.fixture
def eng():
    return LangCode("eng_Latn")


@pytest.fixture
def hau():
    return LangCode("hau_Latn")


@pytest.fixture
def npi():
    return LangCode("npi_Deva")


@pytest.fixture
def mock_gen_profile():
    return BackendProfile(backend_id="gen", kind="mock", model_name="pseudo-writer")


@pytest.fixture
def mock_mt_profile():
    return BackendProfile(backend_id="mt", kind="mock", model_name="pseudo-mt")


@pytest.fixture
def gateway():
    return Gateway(sleeper=lambda s: None)


def make_kept_sentence(i: int, text: str, lang: str = "hau_Latn") -> SentenceRecord:
    return SentenceRecord(
        paragraph_id=stable_hash("para", i),
        position=0,
        text=text,
        langid_label=LangCode(lang),
        langid_confidence=0.99,
        status="kept",
    )


def make_pair(i: int, lrl_text: str, hrl_text: str, lrl: str = "hau_Latn", hrl: str = "eng_Latn") -> ParallelPair:
    return ParallelPair(
        lrl_text=lrl_text,
        hrl_text=hrl_text,
        direction=(LangCode(lrl), LangCode(hrl)),
        sentence_ref=stable_hash("sent", i),
        bt_backend_id="mt",
        bt_mode="supervised_mt",
    )


def random_words(rng: random.Random, vocab: list[str], n: int) -> str:
    return " ".join(rng.choice(vocab) for _ in range(n))
