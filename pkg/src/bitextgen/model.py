"""Persistent data types, JSONL serialization and manifest bookkeeping.

Every dataset is JSON Lines (one record per line, UTF-8, NFC-normalized text)
so million-sentence runs stay streamable and diffable. Stable ids are 128-bit
blake2b hashes of canonical content, which makes runs resumable without a
database.

Run layout: run/<run_id>/{paragraphs.jsonl, sentences.jsonl, pairs.jsonl, manifest.json}
"""
from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Iterator

from .errors import ContractError, ManifestParseError
from .textnorm import nfc

LANG_CODE_RE = re.compile(r"^[a-z]{3}_[A-Za-z]{4}$")
BT_MODE_RE = re.compile(r"^(supervised_mt|fewshot_generator|student_round_\d+)$")

SENTENCE_STATUSES = ("kept", "dropped_langid", "dropped_decontaminated", "dropped_length")

PARAGRAPHS_FILE = "paragraphs.jsonl"
SENTENCES_FILE = "sentences.jsonl"
PAIRS_FILE = "pairs.jsonl"
MANIFEST_FILE = "manifest.json"


def stable_hash(*parts: Any) -> str:
    """128-bit hex digest of the canonical JSON form of `parts`."""
    blob = json.dumps(parts, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.blake2b(blob.encode("utf-8"), digest_size=16).hexdigest()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass(frozen=True, order=True)
class LangCode:
    """Language tag with script suffix, e.g. "eng_Latn"."""

    code: str

    def __post_init__(self):
        if not self.code or not LANG_CODE_RE.match(self.code):
            raise ContractError(f"bad language code: {self.code!r}")

    @property
    def script(self) -> str:
        return self.code.split("_")[1]

    def __str__(self) -> str:
        return self.code


def direction_pair(src: LangCode, tgt: LangCode) -> tuple[LangCode, LangCode]:
    """Validated (source, target) pair; the two languages must differ."""
    if src == tgt:
        raise ContractError(f"direction must use two distinct languages, got {src} twice")
    return (src, tgt)


@dataclass(frozen=True)
class Topic:
    id: int
    label: str

    def __post_init__(self):
        if not self.label.strip():
            raise ContractError("topic label must be non-empty")


@dataclass
class SeedPools:
    """Prompt-construction inputs: topics, HRL paragraphs, per-language seed sentences."""

    topics: list[Topic]
    seed_paragraphs: list[tuple[LangCode, str]]
    seed_sentences: dict[str, list[str]]

    def __post_init__(self):
        ids = [t.id for t in self.topics]
        if len(ids) != len(set(ids)):
            raise ContractError("topic ids must be unique")

    def require_for(self, target_lang: LangCode) -> None:
        """Check the pools a run needs are non-empty."""
        if not self.topics:
            raise ContractError("topic pool is empty")
        if not self.seed_paragraphs:
            raise ContractError("seed paragraph pool is empty")
        if not self.seed_sentences.get(target_lang.code):
            raise ContractError(f"no seed sentences for target language {target_lang}")


@dataclass(frozen=True)
class GeneratedParagraph:
    """One accepted generator output plus its provenance."""

    id: str
    topic: Topic
    target_lang: LangCode
    text: str
    prompt_fingerprint: str
    backend_id: str
    temperature: float
    max_pool_overlap: float

    def __post_init__(self):
        if not self.text.strip():
            raise ContractError("paragraph text empty after trimming")
        object.__setattr__(self, "text", nfc(self.text))

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "topic_id": self.topic.id,
            "topic_label": self.topic.label,
            "target_lang": self.target_lang.code,
            "text": self.text,
            "prompt_fingerprint": self.prompt_fingerprint,
            "backend_id": self.backend_id,
            "temperature": self.temperature,
            "max_pool_overlap": self.max_pool_overlap,
        }

    @classmethod
    def from_json(cls, d: dict) -> "GeneratedParagraph":
        return cls(
            id=d["id"],
            topic=Topic(d["topic_id"], d["topic_label"]),
            target_lang=LangCode(d["target_lang"]),
            text=d["text"],
            prompt_fingerprint=d["prompt_fingerprint"],
            backend_id=d["backend_id"],
            temperature=d["temperature"],
            max_pool_overlap=d["max_pool_overlap"],
        )


@dataclass(frozen=True)
class SentenceRecord:
    """One split sentence with its language-ID verdict and filter status."""

    paragraph_id: str
    position: int
    text: str
    langid_label: LangCode
    langid_confidence: float
    status: str

    def __post_init__(self):
        if self.position < 0:
            raise ContractError("sentence position must be >= 0")
        if self.status not in SENTENCE_STATUSES:
            raise ContractError(f"unknown sentence status: {self.status!r}")
        if not 0.0 <= self.langid_confidence <= 1.0:
            raise ContractError("langid confidence must be in [0, 1]")
        object.__setattr__(self, "text", nfc(self.text))

    @property
    def sentence_id(self) -> str:
        return stable_hash(self.paragraph_id, self.position)

    def with_status(self, status: str) -> "SentenceRecord":
        return SentenceRecord(
            self.paragraph_id, self.position, self.text, self.langid_label, self.langid_confidence, status
        )

    def to_json(self) -> dict:
        return {
            "paragraph_id": self.paragraph_id,
            "position": self.position,
            "text": self.text,
            "langid_label": self.langid_label.code,
            "langid_confidence": self.langid_confidence,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, d: dict) -> "SentenceRecord":
        return cls(
            paragraph_id=d["paragraph_id"],
            position=d["position"],
            text=d["text"],
            langid_label=LangCode(d["langid_label"]),
            langid_confidence=d["langid_confidence"],
            status=d["status"],
        )


@dataclass(frozen=True)
class ParallelPair:
    """(LRL sentence, HRL back-translation); the pipeline's product.

    `direction` is (language of lrl_text, language of hrl_text), i.e. the
    back-translation direction.
    """

    lrl_text: str
    hrl_text: str
    direction: tuple[LangCode, LangCode]
    sentence_ref: str
    bt_backend_id: str
    bt_mode: str

    def __post_init__(self):
        if not self.lrl_text.strip() or not self.hrl_text.strip():
            raise ContractError("both sides of a parallel pair must be non-empty")
        if self.direction[0] == self.direction[1]:
            raise ContractError("pair direction languages must differ")
        if not BT_MODE_RE.match(self.bt_mode):
            raise ContractError(f"unknown bt_mode: {self.bt_mode!r}")
        object.__setattr__(self, "lrl_text", nfc(self.lrl_text))
        object.__setattr__(self, "hrl_text", nfc(self.hrl_text))

    def text_in(self, lang: LangCode) -> str:
        if lang == self.direction[0]:
            return self.lrl_text
        if lang == self.direction[1]:
            return self.hrl_text
        raise ContractError(f"pair has no side in language {lang}")

    def to_json(self) -> dict:
        return {
            "lrl_text": self.lrl_text,
            "hrl_text": self.hrl_text,
            "direction": [self.direction[0].code, self.direction[1].code],
            "sentence_ref": self.sentence_ref,
            "bt_backend_id": self.bt_backend_id,
            "bt_mode": self.bt_mode,
        }

    @classmethod
    def from_json(cls, d: dict) -> "ParallelPair":
        return cls(
            lrl_text=d["lrl_text"],
            hrl_text=d["hrl_text"],
            direction=(LangCode(d["direction"][0]), LangCode(d["direction"][1])),
            sentence_ref=d["sentence_ref"],
            bt_backend_id=d["bt_backend_id"],
            bt_mode=d["bt_mode"],
        )


@dataclass(frozen=True)
class BtFailureMarker:
    """Back-translation failure, written alongside pairs but excluded from counts."""

    sentence_ref: str
    bt_backend_id: str
    bt_error: str

    def to_json(self) -> dict:
        return {"sentence_ref": self.sentence_ref, "bt_backend_id": self.bt_backend_id, "bt_error": self.bt_error}

    @classmethod
    def from_json(cls, d: dict) -> "BtFailureMarker":
        return cls(sentence_ref=d["sentence_ref"], bt_backend_id=d["bt_backend_id"], bt_error=d["bt_error"])


@dataclass(frozen=True)
class EvalSegmentSet:
    """Named parallel evaluation set: (source text, reference text) segments."""

    name: str
    segments: list[tuple[str, str]]

    def __post_init__(self):
        if not self.segments:
            raise ContractError(f"eval set {self.name!r} is empty")

    @property
    def sources(self) -> list[str]:
        return [s for s, _ in self.segments]

    @property
    def references(self) -> list[str]:
        return [r for _, r in self.segments]


@dataclass
class StageCounts:
    paragraphs: int = 0
    sentences_raw: int = 0
    sentences_after_langid: int = 0
    sentences_after_decon: int = 0
    pairs: int = 0

    def to_json(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_json(cls, d: dict) -> "StageCounts":
        return cls(**{k: int(d.get(k, 0)) for k in cls().__dict__})


@dataclass
class RunManifest:
    """Per-stage counts and config fingerprint; the audit/resume record of a run."""

    run_id: str
    config_fingerprint: str
    counts: dict[str, StageCounts] = field(default_factory=dict)
    started_at: str = field(default_factory=utc_now_iso)
    updated_at: str = field(default_factory=utc_now_iso)
    stage_states: dict[str, dict] = field(default_factory=dict)

    def counts_for(self, lang: LangCode | str) -> StageCounts:
        key = lang.code if isinstance(lang, LangCode) else lang
        if key not in self.counts:
            self.counts[key] = StageCounts()
        return self.counts[key]

    def touch(self) -> None:
        self.updated_at = utc_now_iso()

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "config_fingerprint": self.config_fingerprint,
            "counts": {lang: c.to_json() for lang, c in sorted(self.counts.items())},
            "started_at": self.started_at,
            "updated_at": self.updated_at,
            "stage_states": self.stage_states,
        }

    @classmethod
    def from_json(cls, d: dict) -> "RunManifest":
        try:
            return cls(
                run_id=d["run_id"],
                config_fingerprint=d["config_fingerprint"],
                counts={lang: StageCounts.from_json(c) for lang, c in d.get("counts", {}).items()},
                started_at=d.get("started_at", utc_now_iso()),
                updated_at=d.get("updated_at", utc_now_iso()),
                stage_states=d.get("stage_states", {}),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestParseError(f"ill-formed manifest: {exc}") from exc

    def save(self, path: Path | str) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False, indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: Path | str) -> "RunManifest":
        try:
            raw = Path(path).read_text(encoding="utf-8")
            data = json.loads(raw)
        except (OSError, json.JSONDecodeError) as exc:
            raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ManifestParseError(f"manifest {path} is not a JSON object")
        return cls.from_json(data)


def validate_manifest(manifest: RunManifest) -> list[str]:
    """Empty list iff all manifest invariants hold; violations name the field."""
    violations = []
    if not manifest.run_id:
        violations.append("run_id: empty")
    if not manifest.config_fingerprint:
        violations.append("config_fingerprint: empty")
    for lang, c in sorted(manifest.counts.items()):
        for name in ("paragraphs", "sentences_raw", "sentences_after_langid", "sentences_after_decon", "pairs"):
            if getattr(c, name) < 0:
                violations.append(f"{lang}.{name}: negative count")
        if c.sentences_after_langid > c.sentences_raw:
            violations.append(f"{lang}.sentences_after_langid: exceeds sentences_raw")
        if c.sentences_after_decon > c.sentences_after_langid:
            violations.append(f"{lang}.sentences_after_decon: exceeds sentences_after_langid")
        if c.pairs > c.sentences_after_decon:
            violations.append(f"{lang}.pairs: exceeds sentences_after_decon")
    return violations


def validate_manifest_against_data(manifest: RunManifest, run_dir: Path | str) -> list[str]:
    """Check manifest counts against the actual record counts on disk."""
    run_dir = Path(run_dir)
    violations = validate_manifest(manifest)

    per_lang_paragraphs: dict[str, int] = {}
    paragraph_lang: dict[str, str] = {}
    ppath = run_dir / PARAGRAPHS_FILE
    if ppath.exists():
        for p in read_jsonl(ppath, GeneratedParagraph.from_json):
            per_lang_paragraphs[p.target_lang.code] = per_lang_paragraphs.get(p.target_lang.code, 0) + 1
            paragraph_lang[p.id] = p.target_lang.code

    raw: dict[str, int] = {}
    after_langid: dict[str, int] = {}
    kept: dict[str, int] = {}
    kept_sentence_ids: set[str] = set()
    spath = run_dir / SENTENCES_FILE
    if spath.exists():
        for s in read_jsonl(spath, SentenceRecord.from_json):
            if ppath.exists() and s.paragraph_id not in paragraph_lang:
                violations.append(f"sentence {s.sentence_id}: references unknown paragraph {s.paragraph_id}")
            lang = paragraph_lang.get(s.paragraph_id, s.langid_label.code)
            raw[lang] = raw.get(lang, 0) + 1
            if s.status in ("kept", "dropped_decontaminated"):
                after_langid[lang] = after_langid.get(lang, 0) + 1
            if s.status == "kept":
                kept[lang] = kept.get(lang, 0) + 1
                kept_sentence_ids.add(s.sentence_id)

    pairs: dict[str, int] = {}
    prpath = run_dir / PAIRS_FILE
    if prpath.exists():
        for pair in load_pairs(prpath)[0]:
            if spath.exists() and pair.sentence_ref not in kept_sentence_ids:
                violations.append(f"pair {pair.sentence_ref}: references no kept sentence record")
            lang = pair.direction[0].code
            pairs[lang] = pairs.get(lang, 0) + 1

    checks = [
        ("paragraphs", per_lang_paragraphs, ppath),
        ("sentences_raw", raw, spath),
        ("sentences_after_langid", after_langid, spath),
        ("sentences_after_decon", kept, spath),
        ("pairs", pairs, prpath),
    ]
    for name, actual, path in checks:
        if not path.exists():
            continue
        for lang, c in sorted(manifest.counts.items()):
            want = getattr(c, name)
            got = actual.get(lang, 0)
            if want != got:
                violations.append(f"{lang}.{name}: manifest says {want}, data has {got}")
    return violations


def write_jsonl(path: Path | str, records: Iterable[Any]) -> int:
    """Write records (objects with to_json() or plain dicts); returns count."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            d = rec.to_json() if hasattr(rec, "to_json") else rec
            fh.write(json.dumps(d, ensure_ascii=False) + "\n")
            n += 1
    return n


def append_jsonl(path: Path | str, record: Any) -> None:
    d = record.to_json() if hasattr(record, "to_json") else record
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(json.dumps(d, ensure_ascii=False) + "\n")


def read_jsonl(path: Path | str, parse=None) -> Iterator[Any]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            d = json.loads(line)
            yield parse(d) if parse else d


def load_pairs(path: Path | str) -> tuple[list[ParallelPair], list[BtFailureMarker]]:
    """Read a pairs file, separating valid pairs from failure markers."""
    pairs, failures = [], []
    for d in read_jsonl(path):
        if "bt_error" in d:
            failures.append(BtFailureMarker.from_json(d))
        else:
            pairs.append(ParallelPair.from_json(d))
    return pairs, failures
