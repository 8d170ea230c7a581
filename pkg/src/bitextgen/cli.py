"""Single entry point wiring all pipeline stages.

Logs are one JSON object per line on stderr; data goes to files only.
Global flags come before the subcommand:

    bitextgen --config run.yaml [--run-id ID] [--seed N] [--resume]
              [--backend role=name] <command> [options]
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline as pl
from .config import load_config, load_eval_set
from .errors import PipelineError, PreconditionError, ConfigurationError
from .gateway import Gateway
from .metrics import BleuParams, BootstrapParams, ChrfParams, bleu, chrf_pp, paired_bootstrap
from .model import (
    LangCode,
    MANIFEST_FILE,
    SENTENCES_FILE,
    RunManifest,
    SentenceRecord,
    load_pairs,
    read_jsonl,
    validate_manifest,
    validate_manifest_against_data,
)
from .retrieval import build_index, query
from .translate import SelfImproveConfig, self_improve

logger = logging.getLogger("bitextgen")


class _JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        msg = record.getMessage()
        if msg.startswith("{"):
            return msg
        return json.dumps({"event": "log", "level": record.levelname.lower(), "message": msg})


def _setup_logging() -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(_JsonLineFormatter())
    logging.basicConfig(level=logging.INFO, handlers=[handler])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bitextgen", description=__doc__)
    parser.add_argument("--config", help="run config file (YAML)")
    parser.add_argument("--run-id", help="run identifier (default: derived from the config fingerprint)")
    parser.add_argument("--seed", type=int, help="override the config's master seed")
    parser.add_argument(
        "--resume",
        nargs="?",
        const=True,
        default=False,
        metavar="RUN_ID",
        help="skip stages already marked completed; an optional value also sets the run id",
    )
    parser.add_argument(
        "--backend",
        action="append",
        default=[],
        metavar="ROLE=NAME",
        help="rebind a backend role to a named profile from the config",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate topic-guided paragraphs")
    p.add_argument("--lang", help="target language code (default: all configured)")
    p.add_argument("--n", type=int, help="target paragraph count override")

    p = sub.add_parser("process", help="split, language-filter and decontaminate")
    p.add_argument("--run", help="run id (same as --run-id)")
    p.add_argument("--lang", help="restrict to one language")
    p.add_argument("--eval-sets", nargs="*", help="extra eval-set TSV files for the blocklist")

    p = sub.add_parser("backtranslate", help="back-translate kept sentences")
    p.add_argument("--run", help="run id")
    p.add_argument("--mode", choices=["mt", "fewshot", "student"], help="override configured mode")
    p.add_argument("--pool", help="parallel pool (pairs.jsonl) for few-shot modes")

    p = sub.add_parser("assemble", help="HRL-side decontamination + fine-tune file")
    p.add_argument("--run", help="run id")

    p = sub.add_parser("select", help="BM25 few-shot example selection")
    p.add_argument("--pool", required=True, help="pairs.jsonl to index (HRL side)")
    p.add_argument("--queries", required=True, help="file with one query per line")
    p.add_argument("--k", type=int, default=5)

    p = sub.add_parser("evaluate", help="score hypothesis file(s) against a reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--hyp-b", help="second system for significance testing")
    p.add_argument("--significance", action="store_true")
    p.add_argument("--metric", choices=["bleu", "chrf"], default="bleu")

    p = sub.add_parser("selfloop", help="iterative self-improvement rounds")
    p.add_argument("--run", help="run id with processed sentences")
    p.add_argument("--rounds", type=int, required=True)
    p.add_argument("--trainer-cmd", required=True, help="external trainer command")
    p.add_argument("--eval", dest="eval_file", help="eval set TSV (source<TAB>reference)")
    p.add_argument("--pool", required=True, help="parallel pool for few-shot prompts")
    p.add_argument("--lang", help="target language (default: first configured)")

    p = sub.add_parser("stats", help="print per-language corpus statistics")
    p.add_argument("--run", help="run id")

    p = sub.add_parser("validate", help="check manifest invariants")
    p.add_argument("--run", help="run id")
    p.add_argument("--data", action="store_true", help="also check counts against the data files")

    p = sub.add_parser("pipeline", help="run several stages in order")
    p.add_argument("--stages", default=",".join(pl.STAGE_ORDER), help="comma-separated stage subset")

    p = sub.add_parser("demo", help="offline end-to-end demo on mock backends")
    p.add_argument("--out", required=True, help="directory for the demo workspace")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--demo-seed", type=int, default=42)
    p.add_argument("--lang", default="hau_Latn")

    return parser


def _load_cfg(args):
    if not args.config:
        raise ConfigurationError("--config is required for this command")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    roles = {}
    for binding in args.backend:
        if "=" not in binding:
            raise ConfigurationError(f"--backend expects ROLE=NAME, got {binding!r}")
        role, name = binding.split("=", 1)
        roles[role] = name
    if roles:
        overrides["roles"] = roles
    return load_config(args.config, overrides)


def _run_id(args, cfg) -> str:
    resumed = args.resume if isinstance(args.resume, str) else None
    return getattr(args, "run", None) or args.run_id or resumed or pl.default_run_id(cfg)


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except PreconditionError as exc:
        logger.error(str(exc))
        return pl.EXIT_PRECONDITION
    except PipelineError as exc:
        logger.error(str(exc))
        return pl.EXIT_ERROR


def _dispatch(args) -> int:
    cmd = args.command

    if cmd == "demo":
        config_path = pl.make_demo_workspace(Path(args.out), seed=args.demo_seed, target_lang=args.lang, n_paragraphs=args.n)
        cfg = load_config(config_path)
        result = pl.run_pipeline(cfg, run_id=args.run_id, resume=args.resume)
        print(pl.render_stats_table(result.manifest))
        return result.exit_code

    if cmd == "evaluate":
        return _cmd_evaluate(args)

    if cmd == "select":
        return _cmd_select(args)

    cfg = _load_cfg(args)
    run_id = _run_id(args, cfg)

    if cmd == "generate":
        langs = [LangCode(args.lang)] if args.lang else None
        if args.n is not None:
            cfg.generation["n_target_paragraphs"] = args.n
        result = pl.run_pipeline(cfg, stages=["generate"], run_id=run_id, resume=args.resume, langs=langs)
        return result.exit_code

    if cmd in ("process", "backtranslate", "assemble"):
        if cmd == "process" and args.eval_sets:
            lang = getattr(args, "lang", None) or (cfg.target_langs[0].code if cfg.target_langs else None)
            for path in args.eval_sets:
                cfg.paths.setdefault("eval_sets", {}).setdefault(lang, []).append(path)
        if cmd == "backtranslate":
            if args.mode:
                from .config import BT_MODE_ALIASES
                from dataclasses import replace as _replace

                cfg.bt = _replace(cfg.bt, mode=BT_MODE_ALIASES[args.mode])
            if args.pool:
                from dataclasses import replace as _replace

                cfg.bt = _replace(cfg.bt, pool_ref=args.pool)
        langs = [LangCode(args.lang)] if getattr(args, "lang", None) else None
        result = pl.run_pipeline(cfg, stages=[cmd], run_id=run_id, resume=args.resume, langs=langs)
        return result.exit_code

    if cmd == "pipeline":
        stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        result = pl.run_pipeline(cfg, stages=stages, run_id=run_id, resume=args.resume)
        return result.exit_code

    if cmd == "stats":
        manifest = RunManifest.load(cfg.runs_path / run_id / MANIFEST_FILE)
        print(pl.render_stats_table(manifest))
        return pl.EXIT_OK

    if cmd == "validate":
        run_dir = cfg.runs_path / run_id
        manifest = RunManifest.load(run_dir / MANIFEST_FILE)
        violations = (
            validate_manifest_against_data(manifest, run_dir) if args.data else validate_manifest(manifest)
        )
        for v in violations:
            print(v)
        return pl.EXIT_OK if not violations else pl.EXIT_ERROR

    if cmd == "selfloop":
        return _cmd_selfloop(args, cfg, run_id)

    raise ConfigurationError(f"unhandled command {cmd!r}")


def _cmd_evaluate(args) -> int:
    hyp = Path(args.hyp).read_text(encoding="utf-8").splitlines()
    ref = Path(args.ref).read_text(encoding="utf-8").splitlines()
    metric = (lambda h, r: bleu(h, r, BleuParams())) if args.metric == "bleu" else (
        lambda h, r: chrf_pp(h, r, ChrfParams())
    )
    out = {"metric": args.metric, "score": metric(hyp, ref)}
    if args.hyp_b:
        hyp_b = Path(args.hyp_b).read_text(encoding="utf-8").splitlines()
        out["score_b"] = metric(hyp_b, ref)
        if args.significance:
            outcome = paired_bootstrap(hyp, hyp_b, ref, metric, BootstrapParams())
            out["p_value"] = outcome.p_value
            out["win_counts"] = outcome.win_counts
    print(json.dumps(out, indent=2))
    return pl.EXIT_OK


def _cmd_select(args) -> int:
    pairs, _ = load_pairs(args.pool)
    if not pairs:
        raise ConfigurationError(f"pool {args.pool} holds no pairs")
    index = build_index([p.hrl_text for p in pairs])
    for q in Path(args.queries).read_text(encoding="utf-8").splitlines():
        if not q.strip():
            continue
        hits = query(index, q, args.k)
        print(
            json.dumps(
                {
                    "query": q,
                    "hits": [
                        {"doc_id": doc_id, "score": score, "hrl_text": pairs[doc_id].hrl_text,
                         "lrl_text": pairs[doc_id].lrl_text}
                        for doc_id, score in hits
                    ],
                },
                ensure_ascii=False,
            )
        )
    return pl.EXIT_OK


def _cmd_selfloop(args, cfg, run_id: str) -> int:
    run_dir = cfg.runs_path / run_id
    sentences_path = run_dir / SENTENCES_FILE
    if not sentences_path.exists():
        raise PreconditionError(f"selfloop needs {SENTENCES_FILE} in {run_dir}; run `process` first")
    lang = LangCode(args.lang) if args.lang else cfg.target_langs[0]
    kept = [r for r in read_jsonl(sentences_path, SentenceRecord.from_json) if r.status == "kept"]
    if not kept:
        raise PreconditionError("no kept sentences to self-improve on")
    pool, _ = load_pairs(args.pool)
    eval_set = load_eval_set(Path(args.eval_file)) if args.eval_file else None
    si_cfg = SelfImproveConfig(
        student_profile=cfg.profile_for("student"),
        direction=(lang, cfg.hrl),
        pool=[p for p in pool if p.direction[0] == lang] or pool,
        out_dir=run_dir / "selfloop",
        shots=cfg.bt.shots,
        names=cfg.language_names,
        evaluate_rounds=eval_set is not None,
    )
    states = self_improve(kept, args.rounds, args.trainer_cmd, Gateway(), eval_set, si_cfg)
    for state in states:
        print(json.dumps(state.to_json()))
    return pl.EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
