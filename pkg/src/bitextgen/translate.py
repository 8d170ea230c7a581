"""Back-translation of cleaned sentences and the iterative self-improvement
loop.

Back-translation modes: a supervised MT backend (batch, beam decode), the
generator prompted few-shot (greedy, examples picked by BM25 over a parallel
pool), or a student model handle (same few-shot path, provenance tagged with
the round). Failures are marked per sentence, never silently dropped; a run
with more than 5% failures is rejected.

The self-improvement loop alternates: back-translate the LRL corpus with the
current student, fine-tune the *base* student on the fresh pairs (both
directions) through an external trainer command, repeat with the new handle.
Round artifacts are append-only (one directory per round) and every trainer
invocation is logged.
"""
from __future__ import annotations

import json
import logging
import shlex
import subprocess
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import retrieval
from .errors import ContractError, PipelineError, RunFailureError, TrainerError
from .gateway import BackendProfile, BatchItemError, DecodeParams, Gateway
from .metrics import BleuParams, bleu
from .model import (
    BtFailureMarker,
    EvalSegmentSet,
    LangCode,
    ParallelPair,
    SentenceRecord,
    append_jsonl,
    load_pairs,
    write_jsonl,
)
from .prompting import build_few_shot_mt_prompt, emit_finetune_records, write_finetune_jsonl

logger = logging.getLogger(__name__)

BT_MODES = ("supervised_mt", "fewshot_generator", "student")
MAX_FAILURE_RATE = 0.05

GREEDY = DecodeParams(temperature=0.0, beam_size=1, max_new_tokens=256)


@dataclass(frozen=True)
class BtConfig:
    mode: str = "supervised_mt"
    decode: DecodeParams = field(default_factory=lambda: DecodeParams(temperature=0.0, beam_size=5))
    shots: int = 5
    pool_ref: str | None = None

    def __post_init__(self):
        if self.mode not in BT_MODES:
            raise ContractError(f"unknown back-translation mode: {self.mode!r}")
        if self.mode != "supervised_mt" and self.shots < 1:
            raise ContractError("few-shot back-translation requires shots >= 1")


@dataclass
class BtResult:
    pairs: list[ParallelPair]
    failures: list[BtFailureMarker]

    @property
    def failure_rate(self) -> float:
        total = len(self.pairs) + len(self.failures)
        return len(self.failures) / total if total else 0.0


def _fewshot_translate_one(
    text: str,
    src: LangCode,
    tgt: LangCode,
    pool: list[ParallelPair],
    index: retrieval.Bm25Index,
    shots: int,
    gw: Gateway,
    profile: BackendProfile,
    names: dict[str, str] | None,
) -> str:
    hits = retrieval.query(index, text, shots)
    examples = [pool[doc_id] for doc_id, _ in hits]
    prompt = build_few_shot_mt_prompt(examples, src, tgt, text, names)
    return gw.complete(profile, prompt, GREEDY).text.strip()


def fewshot_translate(
    texts: list[str],
    src: LangCode,
    tgt: LangCode,
    pool: list[ParallelPair],
    index: retrieval.Bm25Index,
    shots: int,
    gw: Gateway,
    profile: BackendProfile,
    names: dict[str, str] | None = None,
) -> list[str | BatchItemError]:
    """Few-shot prompted translation for a generator-style backend; greedy
    decoding, per-index failures marked like translate_batch's."""
    out: list[str | BatchItemError] = []
    for i, text in enumerate(texts):
        try:
            out.append(_fewshot_translate_one(text, src, tgt, pool, index, shots, gw, profile, names))
        except PipelineError as exc:
            out.append(BatchItemError(i, str(exc)))
    return out


def build_pool_index(pool: list[ParallelPair], query_lang: LangCode) -> retrieval.Bm25Index:
    """Index the pool side written in the language queries will arrive in."""
    return retrieval.build_index([pair.text_in(query_lang) for pair in pool])


def backtranslate(
    sentences: list[SentenceRecord],
    cfg: BtConfig,
    gw: Gateway,
    profile: BackendProfile,
    direction: tuple[LangCode, LangCode],
    pool: list[ParallelPair] | None = None,
    index: retrieval.Bm25Index | None = None,
    names: dict[str, str] | None = None,
    round_index: int | None = None,
) -> BtResult:
    """One pair per kept input sentence, in order.

    `direction` is (LRL, HRL): sentences are LRL, outputs are HRL. Few-shot
    modes decode greedily regardless of cfg.decode; supervised mode uses the
    configured beam decode through translate_batch.
    """
    if not sentences:
        raise ContractError("backtranslate needs at least one sentence")
    for s in sentences:
        if s.status != "kept":
            raise ContractError(f"backtranslate only accepts kept sentences, got status {s.status!r}")
    src, tgt = direction

    if cfg.mode == "supervised_mt":
        bt_mode = "supervised_mt"
        outputs = gw.translate_batch(profile, [s.text for s in sentences], direction, cfg.decode)
    else:
        if index is None or pool is None:
            raise ContractError(f"{cfg.mode} back-translation requires a parallel pool and its index")
        bt_mode = "fewshot_generator" if cfg.mode == "fewshot_generator" else f"student_round_{round_index or 0}"
        outputs = fewshot_translate([s.text for s in sentences], src, tgt, pool, index, cfg.shots, gw, profile, names)

    pairs: list[ParallelPair] = []
    failures: list[BtFailureMarker] = []
    for s, out in zip(sentences, outputs):
        if isinstance(out, BatchItemError):
            failures.append(BtFailureMarker(s.sentence_id, profile.backend_id, out.message))
        elif not out.strip():
            failures.append(BtFailureMarker(s.sentence_id, profile.backend_id, "empty translation"))
        else:
            pairs.append(
                ParallelPair(
                    lrl_text=s.text,
                    hrl_text=out,
                    direction=direction,
                    sentence_ref=s.sentence_id,
                    bt_backend_id=profile.backend_id,
                    bt_mode=bt_mode,
                )
            )
    result = BtResult(pairs=pairs, failures=failures)
    if result.failure_rate > MAX_FAILURE_RATE:
        raise RunFailureError(
            f"{len(failures)}/{len(sentences)} back-translations failed "
            f"({result.failure_rate:.1%} > {MAX_FAILURE_RATE:.0%})"
        )
    return result


def decontaminate_pairs(pairs: list[ParallelPair], blocklist) -> tuple[list[ParallelPair], list[ParallelPair]]:
    """HRL-side decontamination (against the seed-paragraph corpus): returns
    (kept, dropped) without mutating anything."""
    kept, dropped = [], []
    for pair in pairs:
        (dropped if blocklist.matched_ngrams(pair.hrl_text) else kept).append(pair)
    return kept, dropped


def run_trainer_hook(trainer_cmd: str, finetune_path: Path, base_handle: str) -> str:
    """Invoke the external trainer: argv = <cmd...> <finetune jsonl> <base
    handle>; the new model handle is the first stdout line."""
    argv = shlex.split(trainer_cmd) + [str(finetune_path), base_handle]
    proc = subprocess.run(argv, capture_output=True, text=True, check=False)
    if proc.returncode != 0:
        raise TrainerError(f"trainer exited {proc.returncode}: {proc.stderr.strip()}")
    handle = proc.stdout.strip().splitlines()[0].strip() if proc.stdout.strip() else ""
    if not handle:
        raise TrainerError("trainer produced no model handle on stdout")
    return handle


@dataclass
class RoundState:
    round_index: int
    student_model_ref: str
    pairs_path: str
    trainer_log: str
    new_model_ref: str
    eval_scores: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class SelfImproveConfig:
    student_profile: BackendProfile
    direction: tuple[LangCode, LangCode]
    pool: list[ParallelPair]
    out_dir: Path
    shots: int = 5
    names: dict[str, str] | None = None
    evaluate_rounds: bool = True


def self_improve(
    y_sentences: list[SentenceRecord],
    rounds: int,
    trainer_cmd: str,
    gw: Gateway,
    eval_set: EvalSegmentSet | None,
    cfg: SelfImproveConfig,
) -> list[RoundState]:
    """Iterative back-translation / fine-tuning.

    Round k back-translates Y with handle M_k (M_0 is the configured student
    model), emits 2|Y| fine-tune records, and asks the trainer to fine-tune
    M_0 (always the base) into M_{k+1}. Completed rounds are skipped on
    re-invocation; a failing trainer aborts with all prior state on disk.
    """
    if rounds < 1:
        raise ContractError("rounds must be >= 1")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    state_path = out_dir / "selfloop_state.json"
    trainer_log = out_dir / "trainer_invocations.jsonl"

    base_handle = cfg.student_profile.model_name
    handles = [base_handle]
    states: list[RoundState] = []
    if state_path.exists():
        saved = json.loads(state_path.read_text(encoding="utf-8"))
        handles = saved["handles"]
        states = [RoundState(**s) for s in saved["rounds"]]

    src, tgt = cfg.direction
    lrl_index = build_pool_index(cfg.pool, src)
    hrl_index = build_pool_index(cfg.pool, tgt) if (cfg.evaluate_rounds and eval_set) else None
    bt_cfg = BtConfig(mode="student", shots=cfg.shots)

    for k in range(len(states), rounds):
        round_dir = out_dir / f"round_{k}"
        round_dir.mkdir(parents=True, exist_ok=True)
        model_k = handles[k]
        profile_k = replace(cfg.student_profile, model_name=model_k)

        result = backtranslate(
            y_sentences, bt_cfg, gw, profile_k, cfg.direction,
            pool=cfg.pool, index=lrl_index, names=cfg.names, round_index=k,
        )
        pairs_path = round_dir / "pairs.jsonl"
        write_jsonl(pairs_path, result.pairs + result.failures)

        records = emit_finetune_records(result.pairs, cfg.names)
        finetune_path = round_dir / "finetune.jsonl"
        write_finetune_jsonl(records, finetune_path)

        try:
            new_handle = run_trainer_hook(trainer_cmd, finetune_path, base_handle)
        except TrainerError:
            _save_selfloop_state(state_path, handles, states)
            append_jsonl(
                trainer_log,
                {"round": k, "base_handle": base_handle, "finetune_path": str(finetune_path),
                 "n_records": len(records), "status": "failed"},
            )
            raise
        append_jsonl(
            trainer_log,
            {"round": k, "base_handle": base_handle, "finetune_path": str(finetune_path),
             "n_records": len(records), "new_handle": new_handle, "status": "ok"},
        )
        handles.append(new_handle)

        scores: dict[str, float] = {}
        if cfg.evaluate_rounds and eval_set is not None:
            scores = _evaluate_round(gw, cfg, new_handle, eval_set, lrl_index, hrl_index)
        states.append(
            RoundState(
                round_index=k,
                student_model_ref=model_k,
                pairs_path=str(pairs_path),
                trainer_log=str(trainer_log),
                new_model_ref=new_handle,
                eval_scores=scores,
            )
        )
        _save_selfloop_state(state_path, handles, states)
        logger.info("self-improvement round %d done: %s -> %s", k, model_k, new_handle)
    return states


def _save_selfloop_state(state_path: Path, handles: list[str], states: list[RoundState]) -> None:
    state_path.write_text(
        json.dumps({"handles": handles, "rounds": [s.to_json() for s in states]}, indent=2) + "\n",
        encoding="utf-8",
    )


def _evaluate_round(
    gw: Gateway,
    cfg: SelfImproveConfig,
    handle: str,
    eval_set: EvalSegmentSet,
    lrl_index: retrieval.Bm25Index,
    hrl_index: retrieval.Bm25Index,
) -> dict[str, float]:
    """BLEU for the freshly trained model in both directions, 5-shot.

    Eval segments are (HRL source, LRL reference): the forward direction
    translates sources, the reverse direction translates references.
    """
    lrl, hrl = cfg.direction
    profile = replace(cfg.student_profile, model_name=handle)
    params = BleuParams()

    def translate_all(texts, src, tgt, index):
        out = []
        for text in texts:
            try:
                out.append(_fewshot_translate_one(text, src, tgt, cfg.pool, index, cfg.shots, gw, profile, cfg.names))
            except PipelineError:
                out.append("")
        return out

    fwd_hyps = translate_all(eval_set.sources, hrl, lrl, hrl_index)
    rev_hyps = translate_all(eval_set.references, lrl, hrl, lrl_index)
    return {
        f"{hrl.code}->{lrl.code}_bleu": bleu(fwd_hyps, eval_set.references, params),
        f"{lrl.code}->{hrl.code}_bleu": bleu(rev_hyps, eval_set.sources, params),
    }
