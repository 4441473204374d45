"""Command line interface.

Results go to stdout as small tables, diagnostics to stderr. Exit codes: 0 on
success, 2 when an input file is bad, 3 when configuration is.
"""

from __future__ import annotations

import argparse
import datetime as dt
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Any

import orjson

from . import eld, lattice, metrics, quality, synth, understand
from .config import Config, ConfigError, init_config
from .model import ContextList, ModelError, read_context_csv, read_records, write_records
from .pipeline import (
    REGISTRY,
    CallbackSink,
    JobSettings,
    LifecycleError,
    LifecycleStore,
    PipelineConfig,
    PipelineError,
    Resources,
    default_config,
    mean_timing,
    read_events,
    run_batch,
    sink_from_spec,
    timing_report,
)
from .pipeline.timing import read_timings, write_timings
from .signal import SignalError
from .textnorm import MODES, AirlineTable, TextNormError, context_sequences

logger = logging.getLogger(__name__)

INPUT_ERRORS = (
    ModelError,
    SignalError,
    TextNormError,
    lattice.LatticeError,
    eld.EldError,
    metrics.MetricsError,
    quality.QualityError,
    LifecycleError,
    synth.SynthError,
    understand.GrammarError,
    PipelineError,
    OSError,
)
EVAL_TASKS = ("asr", "ner", "srd", "diar")
TRAIN_TASKS = ("eld", "role")
EXIT_INPUT = 2
EXIT_CONFIG = 3


def _fail(message: str, code: int = EXIT_INPUT) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _config(args: argparse.Namespace) -> Config:
    return Config.load(Path(args.project_root or Path.cwd()).resolve())


def _airlines(cfg: Config) -> AirlineTable:
    return AirlineTable.from_csv(cfg.airlines) if cfg.airlines else AirlineTable.builtin()


def _grammar(cfg: Config, airlines: AirlineTable) -> understand.PhraseologyGrammar:
    if cfg.grammar:
        return understand.PhraseologyGrammar.from_json(cfg.grammar, airlines)
    return understand.PhraseologyGrammar.builtin(airlines)


def _model(flag: str | None, configured: Path | None) -> eld.LinearTextModel | None:
    path = Path(flag) if flag else configured
    return eld.load_model(path) if path else None


def _eld_model(args: argparse.Namespace, cfg: Config) -> eld.LinearTextModel | None:
    """The configured language model, or with --bootstrap-eld one trained on synthetic data.

    A bootstrapped model is cached at the configured path, so the next run loads it.
    """
    path = Path(args.eld_model) if args.eld_model else cfg.eld_model
    if path is not None and (path.is_file() or not args.bootstrap_eld):
        return eld.load_model(path)
    if not args.bootstrap_eld:
        return None
    model = synth.bootstrap_model("eld")
    if path is not None:
        eld.save_model(model, path)
        print(f"bootstrapped eld model written to {path}", file=sys.stderr)
    else:
        print("bootstrapped eld model (not cached: no eld_model path)", file=sys.stderr)
    return model


def _sink(spec: str | None, cfg: Config) -> CallbackSink:
    return sink_from_spec(
        spec,
        retries=cfg.callback_retries,
        timeout_s=cfg.callback_timeout_s,
        backoff_s=cfg.callback_backoff_s,
    )


def _write_json(path: Path, payload: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(orjson.dumps(payload, option=orjson.OPT_INDENT_2))


def cmd_init(args: argparse.Namespace) -> int:
    path = init_config(Path(args.project_root or Path.cwd()).resolve(), force=args.force)
    print(f"wrote {path}")
    return 0


def cmd_gen(args: argparse.Namespace) -> int:
    spec = synth.SynthSpec.from_json(Path(args.spec)) if args.spec else synth.SynthSpec()
    overrides = {
        k: v for k, v in (
            ("seed", args.seed), ("utterances", args.utterances), ("noise", args.noise),
        ) if v is not None
    }
    if overrides:
        spec = synth.SynthSpec.model_validate({**spec.model_dump(), **overrides})
    corpus = synth.generate_corpus(spec, _airlines(_config(args)))
    paths = synth.write_corpus(corpus, Path(args.out))
    for name, path in paths.items():
        print(f"{name:<11} {path}")
    return 0


def cmd_process(args: argparse.Namespace) -> int:
    cfg = _config(args)
    try:
        config_path = Path(args.config) if args.config else cfg.pipeline_config
        pipeline = (
            PipelineConfig.from_json(config_path, REGISTRY) if config_path
            else default_config(REGISTRY)
        )
        settings_path = Path(args.settings) if args.settings else cfg.settings
        settings = JobSettings.from_json(settings_path) if settings_path else JobSettings.builtin()
    except PipelineError as exc:
        return _fail(str(exc), EXIT_CONFIG)

    airlines = _airlines(cfg)
    resources = Resources(
        airlines=airlines,
        grammar=_grammar(cfg, airlines),
        eld_model=_eld_model(args, cfg),
        role_model=_model(args.role_model, cfg.role_model),
        contexts=read_context_csv(Path(args.context)) if args.context else {},
        discount=cfg.discount,
        boost_mode=cfg.boost_mode,
        audio_root=Path(args.input).resolve().parent,
    )
    if resources.eld_model is None and any(b.op == "eld" for b in pipeline.blocks):
        return _fail(
            "the pipeline has an eld block but no model: pass --eld-model, set "
            "[paths] eld_model, or add --bootstrap-eld (train one with `atc2 train --task eld`)",
            EXIT_CONFIG,
        )

    records = read_records(Path(args.input))
    sink = _sink(args.callbacks, cfg)
    workers = args.workers or (cfg.workers if cfg.workers > 1 else pipeline.workers)
    try:
        results = run_batch(records, pipeline, settings, sink, resources, workers=workers)
    finally:
        close = getattr(sink, "close", None)
        if close is not None:
            close()
    write_records(Path(args.out), (r.record for r in results))
    if args.timing:
        write_timings(Path(args.timing), (r.timing for r in results))

    outcomes = Counter(r.event.reason or "OK" for r in results)
    print(f"{'outcome':<14} {'jobs':>6}")
    for outcome, n in sorted(outcomes.items()):
        print(f"{outcome:<14} {n:>6}")
    timed = [r.timing for r in results if r.timing.audio_len > 0 and r.timing.total > 0]
    if timed:
        rtf = mean_timing(timed).rtf
        if rtf is not None:
            print(f"\nmean rtf {rtf:.3f}")
    return 0


def cmd_rank(args: argparse.Namespace) -> int:
    records = read_records(Path(args.input))
    sel = quality.rank_and_select(records, args.top_hours)
    print(quality.funnel_table(sel.funnel))
    if args.out:
        write_records(Path(args.out), sel.selected)
    if args.report:
        _write_json(Path(args.report), quality.selection_report(sel))
    return 0


def cmd_boost(args: argparse.Namespace) -> int:
    """Rescore each record's lattice against its context list.

    The best path becomes the transcript.
    """
    cfg = _config(args)
    discount = args.discount if args.discount is not None else cfg.discount
    mode = args.mode or cfg.boost_mode
    if discount > 0:
        return _fail(f"discount must be <= 0, got {discount}", EXIT_CONFIG)
    airlines = _airlines(cfg)
    contexts = read_context_csv(Path(args.context))
    out = []
    boosted = 0
    for r in read_records(Path(args.input)):
        if r.lattice is None:
            out.append(r)
            continue
        ctx = contexts.get(r.id) or (ContextList(r.context) if r.context else None)
        decoded = r.lattice
        if ctx is not None and ctx.callsigns and ctx.covers(r.captured_at):
            fst = lattice.build_biasing_fst(
                context_sequences(ctx.callsigns, airlines, mode), discount
            )
            decoded = lattice.compose_bias(r.lattice, fst)
            boosted += 1
        words, confs, avg = lattice.best_path_confidences(decoded)
        out.append(r.evolve(transcript=list(zip(words, confs)), avg_word_conf=avg))
    write_records(Path(args.out), out)
    print(f"boosted {boosted} of {len(out)} records (discount {discount}, mode {mode})")
    return 0


def _hyp_words(records_path: Path) -> dict[str, list[str]]:
    out = {}
    for r in read_records(records_path):
        if r.transcript is not None:
            out[r.id] = r.words
        elif r.lattice is not None:
            out[r.id] = lattice.best_path(r.lattice)[0]
    return out


def _eval_asr(args: argparse.Namespace, cfg: Config) -> dict[str, Any]:
    refs = synth.read_references(Path(args.ref))
    hyps = _hyp_words(Path(args.hyp))
    missing = [r.id for r in refs if r.id not in hyps]
    if missing:
        raise metrics.MetricsError(
            f"no hypothesis for {len(missing)} references, e.g. {missing[0]}"
        )
    grammar = _grammar(cfg, _airlines(cfg))
    utterances = []
    for ref in refs:
        hyp = hyps[ref.id]
        utterances.append(metrics.utterance_report(ref.id, ref.transcript.tokens, hyp))
        if args.show_alignments:
            result, _ = metrics.wer(ref.transcript.tokens, hyp)
            print(f"{ref.id}\n{metrics.format_alignment(ref.transcript.tokens, hyp, result)}\n")
    total, rate = metrics.corpus_wer((r.transcript.tokens, hyps[r.id]) for r in refs)
    hyp_callsigns = []
    for ref in refs:
        spans = understand.tag_entities(hyps[ref.id], grammar).spans("callsign")
        hyp_callsigns.append(tuple(hyps[ref.id][spans[0].start:spans[0].end]) if spans else None)
    return {
        "task": "asr",
        "corpus": {
            "wer": rate,
            **total.as_dict(),
            "callsign_wer": metrics.entity_wer(
                [r.transcript for r in refs], [hyps[r.id] for r in refs]
            ),
            "callsign_accuracy": metrics.callsign_accuracy(
                [r.callsign for r in refs], hyp_callsigns, grammar.airlines
            ),
        },
        "utterances": utterances,
    }


def _eval_ner(args: argparse.Namespace, cfg: Config) -> dict[str, Any]:
    refs = synth.read_references(Path(args.ref))
    grammar = _grammar(cfg, _airlines(cfg))
    contexts = read_context_csv(Path(args.context)) if args.context else {}
    hyps = [understand.tag_entities(r.transcript.tokens, grammar, contexts.get(r.id)) for r in refs]
    gold = [r.transcript for r in refs]
    labels = {}
    for label in ("callsign", "command", "value"):
        p, r, f1 = metrics.corpus_span_prf(gold, hyps, label)
        labels[label] = {"precision": p, "recall": r, "f1": f1}
    return {"task": "ner", "labels": labels}


def _eval_srd(args: argparse.Namespace, cfg: Config) -> dict[str, Any]:
    refs = synth.read_references(Path(args.ref))
    model = _model(args.role_model, cfg.role_model)
    grammar = _grammar(cfg, _airlines(cfg))
    tp = fp = fn = correct = 0
    for ref in refs:
        tokens = ref.transcript.tokens
        if model is not None:
            try:
                role, _ = understand.detect_role(tokens, model)
            except eld.EmptyEvidence:
                role = understand.diarize_text(tokens, grammar)[0].role
        else:
            role = understand.diarize_text(tokens, grammar)[0].role
        correct += role == ref.role
        tp += role == "ATCO" and ref.role == "ATCO"
        fp += role == "ATCO" and ref.role != "ATCO"
        fn += role != "ATCO" and ref.role == "ATCO"
    if not refs:
        raise metrics.EmptySet("no references")
    p, r, f1 = metrics.prf(tp, fp, fn)
    return {
        "task": "srd",
        "accuracy": correct / len(refs),
        "atco": {"precision": p, "recall": r, "f1": f1},
    }


def _eval_diar(args: argparse.Namespace, cfg: Config) -> dict[str, Any]:
    dialogues = synth.read_dialogues(Path(args.ref))
    if not dialogues:
        raise metrics.EmptyReference("no dialogues")
    grammar = _grammar(cfg, _airlines(cfg))
    model = _model(args.role_model, cfg.role_model)
    scores = []
    for d in dialogues:
        hyp = understand.diarize_text(d.tokens, grammar, model)
        scores.append({"id": d.id, "jer": metrics.jer(d.turns, hyp)})
    return {
        "task": "diar",
        "jer": sum(s["jer"] for s in scores) / len(scores),
        "dialogues": scores,
    }


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _config(args)
    if args.task == "asr" and not args.hyp:
        return _fail("eval --task asr needs --hyp")
    handler = {"asr": _eval_asr, "ner": _eval_ner, "srd": _eval_srd, "diar": _eval_diar}
    report = handler[args.task](args, cfg)
    summary = {k: v for k, v in report.items() if k not in ("utterances", "dialogues")}
    print(orjson.dumps(summary, option=orjson.OPT_INDENT_2).decode())
    if args.report:
        _write_json(Path(args.report), report)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    if not args.timing and not args.events:
        return _fail("pass --timing, --events or both")
    if args.timing:
        timings = read_timings(Path(args.timing))
        timings = [t for t in timings if t.total > 0]
        if not timings:
            return _fail(f"{args.timing}: no timed jobs")
        print(timing_report(timings[0] if len(timings) == 1 else mean_timing(timings)))
    if args.events:
        events = read_events(Path(args.events))
        finished = {e.job_id: e for e in events if e.terminal}
        if not finished:
            return _fail(f"{args.events}: no finished jobs")
        # Jobs with progress but no OK or ERROR yet.
        open_jobs = {e.job_id for e in events} - set(finished)
        outcomes = Counter(e.reason or "OK" for e in finished.values())
        if args.timing:
            print()
        print(f"{'outcome':<14} {'jobs':>6}")
        for outcome, n in sorted(outcomes.items()):
            print(f"{outcome:<14} {n:>6}")
        if open_jobs:
            print(f"{'unfinished':<14} {len(open_jobs):>6}")
    return 0


def cmd_lifecycle(args: argparse.Namespace) -> int:
    cfg = _config(args)
    sink = _sink(args.callbacks, cfg) if args.callbacks else None
    store = LifecycleStore(
        sink,
        stale_after=dt.timedelta(days=cfg.stale_days),
        delete_after=dt.timedelta(days=cfg.delete_days),
    )
    try:
        store.replay_file(Path(args.replay))
        if args.now:
            store.tick(dt.datetime.fromisoformat(args.now.replace("Z", "+00:00")))
    finally:
        close = getattr(sink, "close", None)
        if close is not None:
            close()
    print(f"{'recording':<24} {'state':<16} {'thumbs':>6}")
    for rec, item in sorted(store.snapshot().items()):
        print(f"{rec:<24} {item.state.value:<16} {item.thumbs_down:>6}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    refs = synth.read_references(Path(args.ref))
    corpus = synth.training_corpus(args.task, refs)
    model = eld.train(args.task, corpus, seed=args.seed, epochs=args.epochs, l2=args.l2)
    eld.save_model(model, Path(args.out))
    print(f"{args.task} model: {len(model.vocabulary)} words, "
          f"training accuracy {eld.accuracy(model, corpus):.3f}, "
          f"loss {model.losses[0]:.4f} -> {model.losses[-1]:.4f}")
    print(f"written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="atc2",
        description="ATC speech data pipeline: gate, boost, understand, evaluate.",
    )
    p.add_argument("--project-root", help="defaults to the current directory")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    init = sub.add_parser("init", help="write a commented .atc2.toml")
    init.add_argument("--force", action="store_true", help="overwrite an existing file")
    init.set_defaults(func=cmd_init)

    gen = sub.add_parser("gen", help="write a synthetic corpus")
    gen.add_argument("--spec", help="SynthSpec JSON; defaults apply without it")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--seed", type=int)
    gen.add_argument("--utterances", type=int)
    gen.add_argument("--noise", type=float)
    gen.set_defaults(func=cmd_gen)

    proc = sub.add_parser("process", help="run records through the pipeline")
    proc.add_argument("--config", help="pipeline JSON; the built-in chain without it")
    proc.add_argument("--settings", help="job settings JSON")
    proc.add_argument("--in", dest="input", required=True, help="records JSONL")
    proc.add_argument("--out", required=True, help="processed records JSONL")
    proc.add_argument("--callbacks", help="JSONL path or http(s) URL")
    proc.add_argument("--context", help="context CSV (id,callsign)")
    proc.add_argument("--eld-model")
    proc.add_argument(
        "--bootstrap-eld", action="store_true",
        help="with no eld model file, train one on synthetic data and cache it at the model path",
    )
    proc.add_argument("--role-model")
    proc.add_argument("--workers", type=int)
    proc.add_argument("--timing", help="write per-job stage timings here (JSONL)")
    proc.set_defaults(func=cmd_process)

    rank = sub.add_parser("rank", help="rank scored records and select an annotation batch")
    rank.add_argument("--in", dest="input", required=True)
    rank.add_argument("--top-hours", type=float, required=True)
    rank.add_argument("--out", help="selected records JSONL")
    rank.add_argument("--report", help="funnel and selection JSON")
    rank.set_defaults(func=cmd_rank)

    boost = sub.add_parser("boost", help="rescore lattices with context callsigns")
    boost.add_argument("--in", dest="input", required=True)
    boost.add_argument("--context", required=True, help="context CSV (id,callsign)")
    boost.add_argument("--discount", type=float)
    boost.add_argument("--mode", choices=sorted(MODES))
    boost.add_argument("--out", required=True)
    boost.set_defaults(func=cmd_boost)

    ev = sub.add_parser("eval", help="score hypotheses against references")
    ev.add_argument("--task", choices=EVAL_TASKS, required=True)
    ev.add_argument("--ref", required=True, help="references JSONL (dialogues JSONL for diar)")
    ev.add_argument("--hyp", help="records JSONL with transcripts or lattices")
    ev.add_argument("--context", help="context CSV for the tagger")
    ev.add_argument("--role-model")
    ev.add_argument("--report", help="full JSON report")
    ev.add_argument("--show-alignments", action="store_true")
    ev.set_defaults(func=cmd_eval)

    rep = sub.add_parser("report", help="render stage timings and callback outcomes")
    rep.add_argument("--timing", help="timing JSON or JSONL")
    rep.add_argument("--events", help="callback events JSONL written by process")
    rep.set_defaults(func=cmd_report)

    life = sub.add_parser("lifecycle", help="replay annotation lifecycle events")
    life.add_argument("--replay", required=True, help="events JSONL")
    life.add_argument("--now", help="apply an age tick at this ISO time afterwards")
    life.add_argument("--callbacks", help="JSONL path or http(s) URL")
    life.set_defaults(func=cmd_lifecycle)

    train = sub.add_parser("train", help="train the language or role classifier")
    train.add_argument("--task", choices=TRAIN_TASKS, required=True)
    train.add_argument("--ref", required=True, help="references JSONL")
    train.add_argument("--out", required=True, help="model JSON")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--epochs", type=int, default=eld.DEFAULT_EPOCHS)
    train.add_argument("--l2", type=float, default=0.0)
    train.set_defaults(func=cmd_train)

    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s [%(name)s] %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_CONFIG)
    except INPUT_ERRORS as exc:
        return _fail(str(exc), EXIT_INPUT)


if __name__ == "__main__":
    sys.exit(main())
