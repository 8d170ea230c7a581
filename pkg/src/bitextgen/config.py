"""Run configuration: one YAML file fingerprints a whole run.

Backends are named profiles bound to roles (generator, backtranslator,
judge, student); CLI flags override config values. All resource files
(topics, seed paragraphs, seed sentences, eval sets) are referenced by path
and loaded here.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .gateway import BackendProfile, RetryPolicy
from .generation import GenerationConfig
from .metrics import BleuParams, BootstrapParams, ChrfParams
from .model import EvalSegmentSet, LangCode, SeedPools, Topic, stable_hash
from .textpipe import DEFAULT_TERMINATORS, SplitterRules
from .translate import BtConfig
from .gateway import DecodeParams

ROLE_NAMES = ("generator", "backtranslator", "judge", "student")
BT_MODE_ALIASES = {"mt": "supervised_mt", "fewshot": "fewshot_generator", "student": "student"}


@dataclass
class RunConfig:
    raw: dict
    fingerprint: str
    base_dir: Path
    master_seed: int
    hrl: LangCode
    target_langs: list[LangCode]
    runs_dir: Path
    language_names: dict[str, str]
    backends: dict[str, BackendProfile]
    roles: dict[str, str]
    generation: dict
    splitter: SplitterRules
    langid_confidence_threshold: float
    external_classifier: str | None
    bt: BtConfig
    bleu_params: BleuParams
    chrf_params: ChrfParams
    bootstrap_params: BootstrapParams
    paths: dict = field(default_factory=dict)

    @property
    def runs_path(self) -> Path:
        return self.resolve(self.runs_dir)

    def profile_for(self, role: str) -> BackendProfile:
        if role not in self.roles:
            raise ConfigurationError(f"no backend bound to role {role!r}")
        key = self.roles[role]
        if key not in self.backends:
            raise ConfigurationError(f"role {role!r} references unknown backend {key!r}")
        return self.backends[key]

    def generation_config(self, lang: LangCode, n_override: int | None = None) -> GenerationConfig:
        g = self.generation
        return GenerationConfig(
            target_lang=lang,
            n_target_paragraphs=n_override or int(g.get("n_target_paragraphs", 100)),
            rouge_threshold=float(g.get("rouge_threshold", 0.7)),
            temperature=float(g.get("temperature", 1.0)),
            max_attempts_per_slot=int(g.get("max_attempts_per_slot", 4)),
            seed=self.master_seed,
            k_seed_paragraphs=int(g.get("k_seed_paragraphs", 2)),
            m_seed_sentences=int(g.get("m_seed_sentences", 5)),
            max_new_tokens=int(g.get("max_new_tokens", 512)),
        )

    def resolve(self, path: str | Path) -> Path:
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    # -- resource loading ---------------------------------------------------

    def load_seed_pools(self) -> SeedPools:
        paths = self.paths
        topics = load_topics(self.resolve(paths["topics"]))
        paragraphs = load_seed_paragraphs(self.resolve(paths["seed_paragraphs"]))
        sentences = {
            lang: load_lines(self.resolve(p)) for lang, p in paths.get("seed_sentences", {}).items()
        }
        return SeedPools(topics=topics, seed_paragraphs=paragraphs, seed_sentences=sentences)

    def load_eval_sets(self) -> dict[str, list[EvalSegmentSet]]:
        out: dict[str, list[EvalSegmentSet]] = {}
        for lang, files in self.paths.get("eval_sets", {}).items():
            out[lang] = [load_eval_set(self.resolve(f)) for f in files]
        return out


def _parse_profile(key: str, d: dict) -> BackendProfile:
    retry = d.get("retry_policy", {})
    return BackendProfile(
        backend_id=key,
        kind=d["kind"],
        model_name=d.get("model_name", key),
        endpoint_url=d.get("endpoint_url"),
        auth_env_var=d.get("auth_env_var", ""),
        max_parallel_requests=int(d.get("max_parallel_requests", 4)),
        retry_policy=RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            base_backoff_ms=int(retry.get("base_backoff_ms", 250)),
        ),
        request_timeout_ms=int(d.get("request_timeout_ms", 60_000)),
    )


def load_config(path: str | Path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"config {path} is not a mapping")
    if overrides:
        raw = _merge(raw, overrides)
    return parse_config(raw, base_dir=path.parent)


def parse_config(raw: dict, base_dir: Path) -> RunConfig:
    if "master_seed" not in raw:
        raise ConfigurationError("config must set master_seed (all randomness derives from it)")

    backends = {key: _parse_profile(key, d) for key, d in raw.get("backends", {}).items()}
    roles = dict(raw.get("roles", {}))
    for role, key in roles.items():
        if role not in ROLE_NAMES:
            raise ConfigurationError(f"unknown backend role {role!r}")
        if key not in backends:
            raise ConfigurationError(f"role {role!r} references unknown backend {key!r}")

    spl = raw.get("splitter", {})
    abbreviations = {lang: frozenset(v) for lang, v in spl.get("abbreviations", {}).items()}
    splitter = SplitterRules(
        terminators=frozenset(spl.get("terminators", DEFAULT_TERMINATORS)),
        abbreviations=abbreviations,
        min_tokens=int(spl.get("min_tokens", 3)),
        max_tokens=int(spl.get("max_tokens", 150)),
    )

    bt_raw = raw.get("backtranslation", {})
    mode = bt_raw.get("mode", "mt")
    bt = BtConfig(
        mode=BT_MODE_ALIASES.get(mode, mode),
        decode=DecodeParams(
            temperature=0.0,
            beam_size=int(bt_raw.get("beam_size", 5)),
            max_new_tokens=int(bt_raw.get("max_new_tokens", 256)),
        ),
        shots=int(bt_raw.get("shots", 5)),
        pool_ref=bt_raw.get("pool"),
    )

    m = raw.get("metrics", {})
    bleu_raw, chrf_raw, boot_raw = m.get("bleu", {}), m.get("chrf", {}), m.get("bootstrap", {})
    filters = raw.get("filters", {})

    return RunConfig(
        raw=raw,
        fingerprint=stable_hash(raw),
        base_dir=base_dir,
        master_seed=int(raw["master_seed"]),
        hrl=LangCode(raw.get("hrl", "eng_Latn")),
        target_langs=[LangCode(code) for code in raw.get("languages", [])],
        runs_dir=Path(raw.get("runs_dir", "runs")),
        language_names=dict(raw.get("language_names", {})),
        backends=backends,
        roles=roles,
        generation=dict(raw.get("generation", {})),
        splitter=splitter,
        langid_confidence_threshold=float(filters.get("langid_confidence_threshold", 0.5)),
        external_classifier=filters.get("external_classifier"),
        bt=bt,
        bleu_params=BleuParams(
            max_order=int(bleu_raw.get("max_order", 4)),
            smoothing=bleu_raw.get("smoothing", "exp"),
        ),
        chrf_params=ChrfParams(
            char_order=int(chrf_raw.get("char_order", 6)),
            word_order=int(chrf_raw.get("word_order", 2)),
            beta=float(chrf_raw.get("beta", 2.0)),
        ),
        bootstrap_params=BootstrapParams(
            n_samples=int(boot_raw.get("n_samples", 300)),
            sample_size=int(boot_raw.get("sample_size", 500)),
            alpha=float(boot_raw.get("alpha", 0.05)),
            seed=int(boot_raw.get("seed", raw["master_seed"])),
        ),
        paths=dict(raw.get("paths", {})),
    )


def _merge(base: dict, overrides: dict) -> dict:
    out = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


# -- resource file loaders ---------------------------------------------------

def load_topics(path: Path) -> list[Topic]:
    """Topic list: either "id<TAB>label" lines or plain labels (line number
    becomes the id)."""
    topics = []
    for i, line in enumerate(load_lines(path)):
        if "\t" in line:
            tid, label = line.split("\t", 1)
            topics.append(Topic(int(tid), label.strip()))
        else:
            topics.append(Topic(i, line))
    return topics


def load_seed_paragraphs(path: Path) -> list[tuple[LangCode, str]]:
    """JSONL with {"lang": ..., "text": ...} records."""
    import json

    out = []
    for line in load_lines(path):
        d = json.loads(line)
        out.append((LangCode(d["lang"]), d["text"]))
    return out


def load_lines(path: Path) -> list[str]:
    try:
        return [ln.strip() for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc}") from exc


def load_eval_set(path: Path) -> EvalSegmentSet:
    """TSV with one "source<TAB>reference" segment per line."""
    segments = []
    for ln in load_lines(path):
        parts = ln.split("\t")
        if len(parts) != 2:
            raise ConfigurationError(f"eval set {path}: expected 2 tab-separated fields, got {len(parts)}")
        segments.append((parts[0], parts[1]))
    return EvalSegmentSet(name=path.stem, segments=segments)
