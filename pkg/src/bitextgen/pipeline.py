"""Stage orchestration: generate -> process -> backtranslate -> assemble ->
evaluate, with manifests, resumability, and the offline mock demo.

Every stage records completion in the manifest; re-running a completed stage
under --resume is a no-op (no backend calls). The default run id derives
from the config fingerprint, so the same config reproduces the same run
bit-for-bit.
"""
from __future__ import annotations

import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import mock_backend
from .config import RunConfig, load_eval_set
from .errors import ConfigurationError, PreconditionError
from .gateway import Gateway
from .generation import run_generation
from .metrics import chrf_pp, bleu, corpus_stats
from .model import (
    EvalSegmentSet,
    GeneratedParagraph,
    LangCode,
    BtFailureMarker,
    PAIRS_FILE,
    PARAGRAPHS_FILE,
    MANIFEST_FILE,
    SENTENCES_FILE,
    RunManifest,
    SentenceRecord,
    load_pairs,
    read_jsonl,
    write_jsonl,
)
from .prompting import emit_finetune_records, write_finetune_jsonl
from .textpipe import ExternalClassifier, NgramBlocklist, apply_filters, train_langid
from .translate import backtranslate, build_pool_index, decontaminate_pairs, fewshot_translate

logger = logging.getLogger(__name__)

STAGE_ORDER = ("generate", "process", "backtranslate", "assemble", "evaluate")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_SHORTFALL = 3
EXIT_PRECONDITION = 4

BLOCKLIST_FILE = "blocklist.bin"
FINETUNE_FILE = "finetune.jsonl"
EVALUATION_FILE = "evaluation.json"


@dataclass
class PipelineResult:
    manifest: RunManifest
    run_dir: Path
    exit_code: int = EXIT_OK
    shortfalls: dict[str, int] = field(default_factory=dict)


def default_run_id(cfg: RunConfig) -> str:
    return "run-" + cfg.fingerprint[:12]


def run_pipeline(
    cfg: RunConfig,
    stages: list[str] | None = None,
    run_id: str | None = None,
    resume: bool = False,
    gw: Gateway | None = None,
    langs: list[LangCode] | None = None,
) -> PipelineResult:
    stages = list(stages) if stages else list(STAGE_ORDER)
    for stage in stages:
        if stage not in STAGE_ORDER:
            raise ConfigurationError(f"unknown stage {stage!r}")
    stages = [s for s in STAGE_ORDER if s in stages]
    run_id = run_id or default_run_id(cfg)
    langs = langs or cfg.target_langs
    if not langs:
        raise ConfigurationError("no target languages configured")
    gw = gw or Gateway()

    run_dir = cfg.runs_path / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / MANIFEST_FILE
    if manifest_path.exists():
        manifest = RunManifest.load(manifest_path)
        if manifest.config_fingerprint != cfg.fingerprint:
            raise ConfigurationError(
                f"run {run_id} was created with a different config (fingerprint mismatch); "
                "use a new --run-id"
            )
    else:
        manifest = RunManifest(run_id=run_id, config_fingerprint=cfg.fingerprint)

    result = PipelineResult(manifest=manifest, run_dir=run_dir)
    runners = {
        "generate": _stage_generate,
        "process": _stage_process,
        "backtranslate": _stage_backtranslate,
        "assemble": _stage_assemble,
        "evaluate": _stage_evaluate,
    }
    for stage in stages:
        state = manifest.stage_states.get(stage, {})
        if resume and state.get("completed"):
            _log_event("stage_skipped", run_id=run_id, stage=stage)
            continue
        _log_event("stage_start", run_id=run_id, stage=stage)
        runners[stage](cfg, gw, run_dir, manifest, langs, result)
        manifest.stage_states.setdefault(stage, {})["completed"] = True
        manifest.touch()
        manifest.save(manifest_path)
        _log_event("stage_end", run_id=run_id, stage=stage)

    if result.shortfalls:
        result.exit_code = EXIT_SHORTFALL
    return result


def _log_event(event: str, **fields) -> None:
    logger.info(json.dumps({"event": event, **fields}, sort_keys=True))


def _require(run_dir: Path, filename: str, stage: str) -> Path:
    path = run_dir / filename
    if not path.exists():
        raise PreconditionError(f"stage {stage!r} needs {filename} in {run_dir}; run the earlier stages first")
    return path


def _stage_generate(cfg, gw, run_dir, manifest, langs, result) -> None:
    pools = cfg.load_seed_pools()
    profile = cfg.profile_for("generator")
    for lang in langs:
        gen_result = run_generation(cfg.generation_config(lang), pools, gw, profile, run_dir, manifest.run_id)
        manifest.counts_for(lang).paragraphs = gen_result.accepted
        manifest.stage_states.setdefault("generate", {})[lang.code] = {
            "attempts_used": gen_result.attempts_used,
            "shortfall": gen_result.shortfall,
        }
        if gen_result.shortfall > 0:
            result.shortfalls[lang.code] = gen_result.shortfall


def _stage_process(cfg, gw, run_dir, manifest, langs, result) -> None:
    paragraphs_path = _require(run_dir, PARAGRAPHS_FILE, "process")
    eval_sets = cfg.load_eval_sets()
    blocklist = NgramBlocklist.build(
        text
        for sets in eval_sets.values()
        for es in sets
        for seg in es.segments
        for text in seg
    )
    blocklist.save(run_dir / BLOCKLIST_FILE)

    if cfg.external_classifier:
        classifier = ExternalClassifier(cfg.external_classifier)
    else:
        pools = cfg.load_seed_pools()
        needed = {lang.code for lang in langs} | {cfg.hrl.code}
        classifier = train_langid({code: pools.seed_sentences.get(code, []) for code in sorted(needed)})

    paragraphs = list(read_jsonl(paragraphs_path, GeneratedParagraph.from_json))
    all_records: list[SentenceRecord] = []
    for lang in sorted(langs, key=lambda l: l.code):
        lang_paragraphs = [p for p in paragraphs if p.target_lang == lang]
        records, counts = apply_filters(
            lang_paragraphs,
            cfg.splitter,
            classifier,
            blocklist,
            lang,
            cfg.langid_confidence_threshold,
        )
        all_records.extend(records)
        c = manifest.counts_for(lang)
        c.sentences_raw = counts.sentences_raw
        c.sentences_after_langid = counts.sentences_after_langid
        c.sentences_after_decon = counts.sentences_after_decon
    write_jsonl(run_dir / SENTENCES_FILE, all_records)


def _stage_backtranslate(cfg, gw, run_dir, manifest, langs, result) -> None:
    sentences_path = _require(run_dir, SENTENCES_FILE, "backtranslate")
    paragraphs = {p.id: p for p in read_jsonl(run_dir / PARAGRAPHS_FILE, GeneratedParagraph.from_json)}
    records = list(read_jsonl(sentences_path, SentenceRecord.from_json))

    pool = None
    if cfg.bt.mode != "supervised_mt":
        if not cfg.bt.pool_ref:
            raise ConfigurationError(f"backtranslation mode {cfg.bt.mode} needs a pool file")
        pool, _ = load_pairs(cfg.resolve(cfg.bt.pool_ref))
    role = "backtranslator" if cfg.bt.mode != "student" else "student"
    profile = cfg.profile_for(role)

    rows = []
    for lang in sorted(langs, key=lambda l: l.code):
        kept = [
            r for r in records if r.status == "kept" and r.paragraph_id in paragraphs
            and paragraphs[r.paragraph_id].target_lang == lang
        ]
        if not kept:
            continue
        direction = (lang, cfg.hrl)
        lang_pool = None
        index = None
        if pool is not None:
            lang_pool = [p for p in pool if p.direction[0] == lang]
            if not lang_pool:
                raise ConfigurationError(f"retrieval pool has no pairs for language {lang.code}")
            index = build_pool_index(lang_pool, lang)
        bt_result = backtranslate(
            kept, cfg.bt, gw, profile, direction,
            pool=lang_pool, index=index, names=cfg.language_names,
        )
        rows.extend(bt_result.pairs)
        rows.extend(bt_result.failures)
        manifest.counts_for(lang).pairs = len(bt_result.pairs)
    write_jsonl(run_dir / PAIRS_FILE, rows)


def _stage_assemble(cfg, gw, run_dir, manifest, langs, result) -> None:
    pairs_path = _require(run_dir, PAIRS_FILE, "assemble")
    pairs, failures = load_pairs(pairs_path)

    pools = cfg.load_seed_pools()
    hrl_blocklist = NgramBlocklist.build(text for _, text in pools.seed_paragraphs)
    kept, dropped = decontaminate_pairs(pairs, hrl_blocklist)

    rows: list = list(kept)
    rows.extend(failures)
    rows.extend(
        BtFailureMarker(p.sentence_ref, p.bt_backend_id, "dropped_hrl_decontaminated") for p in dropped
    )
    tmp = pairs_path.with_suffix(".jsonl.tmp")
    write_jsonl(tmp, rows)
    tmp.replace(pairs_path)

    for lang in sorted(langs, key=lambda l: l.code):
        manifest.counts_for(lang).pairs = sum(1 for p in kept if p.direction[0] == lang)
    if kept:
        write_finetune_jsonl(emit_finetune_records(kept, cfg.language_names), run_dir / FINETUNE_FILE)


def _stage_evaluate(cfg, gw, run_dir, manifest, langs, result) -> None:
    pairs_path = _require(run_dir, PAIRS_FILE, "evaluate")
    pairs, _ = load_pairs(pairs_path)
    eval_sets = cfg.load_eval_sets()
    supervised = cfg.bt.mode == "supervised_mt"
    role = "student" if cfg.bt.mode == "student" else "backtranslator"
    profile = cfg.profile_for(role)

    report: dict[str, dict] = {}
    for lang in sorted(langs, key=lambda l: l.code):
        lang_pairs = [p for p in pairs if p.direction[0] == lang]
        entry: dict = {}
        if lang_pairs:
            stats = corpus_stats(lang_pairs)
            entry["corpus"] = {
                "n_pairs": stats.n_pairs,
                "source_mean_words": stats.source_mean_words,
                "target_mean_words": stats.target_mean_words,
            }
        for es in eval_sets.get(lang.code, []):
            if supervised:
                outputs = gw.translate_batch(profile, es.references, (lang, cfg.hrl), cfg.bt.decode)
            else:
                pool, _ = load_pairs(cfg.resolve(cfg.bt.pool_ref))
                lang_pool = [p for p in pool if p.direction[0] == lang]
                outputs = fewshot_translate(
                    es.references, lang, cfg.hrl, lang_pool, build_pool_index(lang_pool, lang),
                    cfg.bt.shots, gw, profile, cfg.language_names,
                )
            hyps = [o if isinstance(o, str) else "" for o in outputs]
            entry.setdefault("eval", {})[es.name] = {
                "bleu": bleu(hyps, es.sources, cfg.bleu_params),
                "chrf_pp": chrf_pp(hyps, es.sources, cfg.chrf_params),
            }
        report[lang.code] = entry
    (run_dir / EVALUATION_FILE).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")


def render_stats_table(manifest: RunManifest) -> str:
    """Per-language corpus statistics: paragraphs, sentences, sentences after
    decontamination (the shape used for dataset reporting)."""
    header = f"{'Language':<14} {'Paragraphs':>12} {'Sentences':>12} {'Sentences (after decon.)':>26}"
    lines = [header, "-" * len(header)]
    for lang in sorted(manifest.counts):
        c = manifest.counts[lang]
        lines.append(
            f"{lang:<14} {c.paragraphs:>12,} {c.sentences_raw:>12,} {c.sentences_after_decon:>26,}"
        )
    return "\n".join(lines)


# -- offline demo workspace ---------------------------------------------------

def make_demo_workspace(
    root: Path | str,
    seed: int = 42,
    target_lang: str = "hau_Latn",
    hrl: str = "eng_Latn",
    n_paragraphs: int = 200,
) -> Path:
    """Materialize synthetic seeds, eval sets and a mock-backend config so the
    whole pipeline runs offline; returns the config path."""
    root = Path(root)
    seeds = root / "seeds"
    seeds.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    eng_vocab = mock_backend.synthetic_vocabulary(hrl)
    topics = [f"{i}\t{rng.choice(eng_vocab)} {rng.choice(eng_vocab)}" for i in range(48)]
    (seeds / "topics.tsv").write_text("\n".join(topics) + "\n", encoding="utf-8")

    paragraphs = [
        json.dumps({"lang": hrl, "text": mock_backend.synthetic_paragraph(hrl, rng)}, ensure_ascii=False)
        for _ in range(24)
    ]
    (seeds / "paragraphs.jsonl").write_text("\n".join(paragraphs) + "\n", encoding="utf-8")

    for code in (hrl, target_lang):
        lines = [mock_backend.synthetic_sentence(code, rng) for _ in range(150)]
        (seeds / f"sentences.{code}.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")

    eval_lines = [
        f"{mock_backend.synthetic_sentence(hrl, rng)}\t{mock_backend.synthetic_sentence(target_lang, rng)}"
        for _ in range(40)
    ]
    (seeds / f"eval.{target_lang}.tsv").write_text("\n".join(eval_lines) + "\n", encoding="utf-8")

    from .prompting import DEFAULT_LANGUAGE_NAMES

    names = {
        code: code.split("_")[0].capitalize() + " (demo)"
        for code in (hrl, target_lang)
        if code not in DEFAULT_LANGUAGE_NAMES
    }
    config = {
        "master_seed": seed,
        "hrl": hrl,
        "languages": [target_lang],
        "runs_dir": "runs",
        "language_names": names,
        "backends": {
            "mock_gen": {"kind": "mock", "model_name": "pseudo-writer"},
            "mock_mt": {"kind": "mock", "model_name": "pseudo-mt"},
        },
        "roles": {"generator": "mock_gen", "backtranslator": "mock_mt", "judge": "mock_gen", "student": "mock_gen"},
        "generation": {
            "n_target_paragraphs": n_paragraphs,
            "rouge_threshold": 0.7,
            "temperature": 1.0,
            "max_attempts_per_slot": 4,
        },
        "paths": {
            "topics": "seeds/topics.tsv",
            "seed_paragraphs": "seeds/paragraphs.jsonl",
            "seed_sentences": {
                hrl: f"seeds/sentences.{hrl}.txt",
                target_lang: f"seeds/sentences.{target_lang}.txt",
            },
            "eval_sets": {target_lang: [f"seeds/eval.{target_lang}.tsv"]},
        },
    }
    config_path = root / "config.yaml"
    config_path.write_text(yaml.safe_dump(config, sort_keys=True), encoding="utf-8")
    return config_path
