"""``physrl`` command line: generate tasks, validate, score, evaluate, run the loop."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .benchmark import BENCHMARK_COUNTS, synthetic_benchmark
from .dataset import (
    DatasetError,
    McqItem,
    group_by_source,
    load_items,
    open_text,
    read_jsonl,
    save_items,
    validate_manifest,
    write_jsonl,
    write_manifest,
)
from .evalharness import EvalError, EvalReport, EvalRunSpec, load_report, render_report, run_eval
from .grpo.dispatch import InvalidBounds
from .grpo.loop import LoopConfig, LoopError, TickClock, run_loop
from .ontology import OntologyError
from .reward import RewardError, score_groups
from .rng import SeededRng
from .rollout.client import ChatClient, EndpointConfig, RolloutError
from .rollout.mock import MockEndpoint
from .taskgen.aot import ClipRecord, Playback, balance_playback, clip_to_mcq, reverse_clip
from .taskgen.permanence import InvalidLog, PermanenceConfig, gen_permanence_scene, permanence_to_mcq
from .taskgen.puzzle import Direction, DirectionTask, PuzzleError, SameImageTask, gen_puzzle, synthetic_grid

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("physrl")

DOMAIN_ERRORS = (
    DatasetError,
    OntologyError,
    RewardError,
    PuzzleError,
    InvalidLog,
    EvalError,
    RolloutError,
    LoopError,
    InvalidBounds,
    ValueError,
    KeyError,
    OSError,
)

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class CliError(Exception):
    """A domain failure worth a one-line message and exit status 1."""


# -- helpers -----------------------------------------------------------------------

def _sidecar(args) -> Optional[str]:
    if args.truth:
        return args.truth
    if args.out == "-":
        return None
    out = Path(args.out)
    return str(out.with_name(out.stem + ".truth.jsonl"))


def _format_for(path: str, explicit: Optional[str]) -> str:
    if explicit:
        return explicit
    suffix = Path(path).suffix.lower()
    return {".csv": "csv", ".json": "json"}.get(suffix, "markdown")


def _write_text(path: str, text: str) -> None:
    with open_text(path, "w") as fh:
        fh.write(text)


def _parse_weights(text: str) -> tuple[float, float]:
    try:
        a, f = (float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("weights must look like ACC,FMT (e.g. 1.0,0.1)") from None
    if a < 0 or f < 0:
        raise argparse.ArgumentTypeError("weights must be non-negative")
    return a, f


def _make_client(args, items: Sequence[McqItem]) -> tuple[ChatClient, Optional[MockEndpoint]]:
    if args.endpoint == "mock":
        mock = MockEndpoint.rigged(args.mock_accuracy, seed=args.mock_seed, items=items)
        cfg = EndpointConfig("http://mock.invalid", max_in_flight=args.max_in_flight, max_retries=0)
        return ChatClient(cfg, transport=mock.transport()), mock
    cfg = EndpointConfig(
        args.endpoint,
        model=args.model,
        auth_token_env=args.auth_env,
        timeout=args.timeout,
        max_retries=args.max_retries,
        max_in_flight=args.max_in_flight,
    )
    return ChatClient(cfg), None


# -- gen -------------------------------------------------------------------------

def _gen_puzzle(args, rng: SeededRng):
    tasks = {
        "direction": None,
        "same2": SameImageTask(2),
        "same3": SameImageTask(3),
    }
    items, truth = [], []
    directions = list(Direction)
    for i in range(args.count):
        kind = args.task if args.task != "mixed" else rng.choice(["direction", "same2", "same3"])
        task = tasks[kind] or DirectionTask(rng.choice(directions))
        target = synthetic_grid(f"img{i:05d}-0", rng)
        distractors = [synthetic_grid(f"img{i:05d}-{j + 1}", rng) for j in range(args.distractors)]
        inst = gen_puzzle(target, distractors, task, rng, item_id=f"puzzle-{i:05d}")
        items.append(inst.mcq)
        truth.append(inst.truth_record())
    return items, truth


def _gen_aot(args, rng: SeededRng):
    if args.clips:
        clips = [ClipRecord.from_dict(obj) for _, obj in read_jsonl(args.clips)]
    else:
        clips = [ClipRecord(f"clip{i:05d}", Playback.FORWARD) for i in range(args.count)]
    if args.with_reversed:
        clips = [c for clip in clips for c in (clip, reverse_clip(clip))]
    if not clips:
        raise CliError("no clips to convert")
    clips = balance_playback(clips, rng)
    items = [clip_to_mcq(c) for c in clips]
    truth = [{"id": it.id, **c.to_dict()} for it, c in zip(items, clips)]
    return items, truth


def _gen_permanence(args, rng: SeededRng):
    cfg = PermanenceConfig(args.objects, args.occlusion_prob, args.removal_prob)
    items, truth = [], []
    for i in range(args.count):
        scene = gen_permanence_scene(cfg, rng, scene_id=f"scene{i:05d}")
        item = permanence_to_mcq(scene)
        items.append(item)
        truth.append({"id": item.id, "violated": item.correct_label == "A", "log": scene.to_dict()})
    return items, truth


def _seed(args) -> int:
    return 0 if args.seed is None else args.seed


def cmd_gen(args) -> int:
    rng = SeededRng(_seed(args))
    if args.task_kind == "benchmark":
        items = synthetic_benchmark(_seed(args))
        write_manifest(args.out, items, BENCHMARK_COUNTS)
        log.info("wrote %d benchmark items", len(items))
        return 0
    make = {"puzzle": _gen_puzzle, "aot": _gen_aot, "permanence": _gen_permanence}[args.task_kind]
    items, truth = make(args, rng)
    save_items(args.out, items)
    side = _sidecar(args)
    if side:
        write_jsonl(side, truth)
    log.info("wrote %d %s items", len(items), args.task_kind)
    return 0


# -- validate / score --------------------------------------------------------------

def cmd_validate(args) -> int:
    report = validate_manifest(args.manifest)
    print(json.dumps(report.to_dict(), indent=2))
    for v in report.violations:
        print(f"line {v.line}: item {v.item_id}: {v.problem}", file=sys.stderr)
    for name, (e, a) in report.mismatches.items():
        print(f"source {name}: header expects {e}, found {a}", file=sys.stderr)
    return 0 if report.valid else 1


def cmd_score(args) -> int:
    items = {}
    for it in load_items(args.dataset):
        problems = it.problems()
        if problems:
            raise CliError(f"dataset item {it.id}: {problems[0]}")
        items[it.id] = it
    records = (obj for _, obj in read_jsonl(args.responses))
    out = score_groups(records, items, args.group_size, args.weights, args.answer_mode, args.format)
    write_jsonl(args.out, list(out))
    return 0


# -- eval / report -----------------------------------------------------------------

def cmd_eval(args) -> int:
    spec = EvalRunSpec(
        benchmark=args.manifest,
        n_runs=args.runs,
        temperature=args.temperature,
        top_p=args.top_p,
        max_tokens=args.max_tokens,
        answer_mode=args.answer_mode,
        extraction=args.extraction,
        shuffle=args.shuffle,
        base_seed=_seed(args),
        label=args.label,
    )
    items = load_items(args.manifest) if args.endpoint == "mock" else ()
    client, _ = _make_client(args, items)
    with client:
        report = run_eval(spec, client)
    _write_text(args.out, render_report(report, _format_for(args.out, args.format)))
    if args.json_out:
        _write_text(args.json_out, render_report(report, "json"))
    return 0


def _parse_components(text: str) -> dict[str, float]:
    out = {}
    for part in text.split(","):
        name, _, value = part.partition("=")
        if not name.strip() or not value.strip():
            raise CliError(f"bad component {part!r}; expected NAME=PERCENT")
        out[name.strip()] = float(value) / 100.0
    return out


def cmd_report(args) -> int:
    if args.components:
        report = EvalReport.from_means(_parse_components(args.components), args.label)
    elif args.input:
        report = load_report(args.input)
    else:
        raise CliError("report needs --input or --components")
    _write_text(args.out, render_report(report, _format_for(args.out, args.format)))
    return 0


# -- grpo --------------------------------------------------------------------------

_LOOP_FLAGS = ("iterations", "batch_questions", "group_size", "max_tokens", "learning_rate", "kl_coefficient")


def cmd_grpo(args) -> int:
    overrides = {name: getattr(args, name) for name in _LOOP_FLAGS}
    overrides["seed"] = args.seed
    if args.weights is not None:
        overrides["accuracy_weight"], overrides["format_weight"] = args.weights
    if args.format is not None:
        overrides["format_mode"] = args.format
    if args.reference != "none":
        overrides["request_logprobs"] = True
    if args.config:
        config = LoopConfig.from_toml(args.config, overrides)
    else:
        config = LoopConfig.from_mapping({k: v for k, v in overrides.items() if v is not None})

    if not args.dataset:
        raise CliError("grpo needs at least one --dataset")
    items = [it for path in args.dataset for it in load_items(path)]
    sources = group_by_source(items)

    client, mock = _make_client(args, items)
    ref_client = None
    if args.reference == "mock":
        if mock is None:
            raise CliError("--reference mock requires --endpoint mock")
        ref_client = client
    elif args.reference != "none":
        ref_client = ChatClient(EndpointConfig(args.reference, model=args.reference_model,
                                               auth_token_env=args.auth_env, timeout=args.timeout,
                                               max_in_flight=args.max_in_flight))

    out = Path(args.out)
    policy_log = args.policy_log or str(out.with_name(out.stem + ".policy.jsonl"))
    clock = TickClock() if mock is not None else None
    kwargs = {"clock": clock} if clock else {}
    try:
        done = run_loop(config, sources, client, out, args.checkpoint, policy_log, ref_client, **kwargs)
    finally:
        client.close()
        if ref_client is not None and ref_client is not client:
            ref_client.close()
    log.info("ran %d iterations", done)
    return 0


# -- parser ------------------------------------------------------------------------

def _endpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--endpoint", default="mock", help="base URL of a chat-completions server, or 'mock'")
    p.add_argument("--model", default="policy")
    p.add_argument("--auth-env", default=None, help="environment variable holding the bearer token")
    p.add_argument("--timeout", type=float, default=120.0)
    p.add_argument("--max-retries", type=int, default=3)
    p.add_argument("--max-in-flight", type=int, default=16)
    p.add_argument("--mock-accuracy", type=float, default=0.7, help="probability the mock answers correctly")
    p.add_argument("--mock-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    def globals_(default: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without clobbering values given earlier
        p = argparse.ArgumentParser(add_help=False)
        d = (lambda v: v) if default else (lambda v: argparse.SUPPRESS)
        p.add_argument("--seed", type=int, default=d(None), help="RNG seed (default 0)")
        p.add_argument("--config", default=d(None), help="TOML file; flags override its values")
        p.add_argument("--log-level", choices=sorted(LOG_LEVELS), default=d("warn"))
        return p

    common = globals_(False)
    parser = argparse.ArgumentParser(prog="physrl", parents=[globals_(True)], description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    gen = sub.add_parser("gen", parents=[common], help="generate task MCQs")
    gsub = gen.add_subparsers(dest="task_kind", required=True, metavar="TASK")
    for name, help_ in [
        ("puzzle", "spatial patch puzzles"),
        ("aot", "arrow-of-time questions"),
        ("permanence", "object-permanence questions"),
        ("benchmark", "synthetic benchmark manifest"),
    ]:
        g = gsub.add_parser(name, parents=[common], help=help_)
        g.add_argument("--out", default="-")
        g.add_argument("--truth", default=None, help="ground-truth sidecar JSONL (default: OUT.truth.jsonl)")
        g.add_argument("--count", type=int, default=10)
        g.set_defaults(func=cmd_gen)
        if name == "puzzle":
            g.add_argument("--distractors", type=int, default=7)
            g.add_argument("--task", choices=["direction", "same2", "same3", "mixed"], default="mixed")
        elif name == "aot":
            g.add_argument("--clips", default=None, help="JSONL of {clip_id, playback, motion_summary}")
            g.add_argument("--with-reversed", action="store_true", help="also emit each clip reversed")
        elif name == "permanence":
            g.add_argument("--objects", type=int, default=5)
            g.add_argument("--occlusion-prob", type=float, default=0.5)
            g.add_argument("--removal-prob", type=float, default=0.5)

    v = sub.add_parser("validate", parents=[common], help="check a benchmark manifest")
    v.add_argument("--manifest", required=True)
    v.set_defaults(func=cmd_validate)

    s = sub.add_parser("score", parents=[common], help="reward and advantage for response cohorts")
    s.add_argument("--responses", required=True, help="JSONL of {question_id, response_text}")
    s.add_argument("--dataset", required=True)
    s.add_argument("--group-size", type=int, default=9)
    s.add_argument("--format", choices=["strict", "lenient"], default="strict")
    s.add_argument("--answer-mode", choices=["letter_or_text", "exact_set"], default="letter_or_text")
    s.add_argument("--weights", type=_parse_weights, default=(1.0, 0.1))
    s.add_argument("--out", default="-")
    s.set_defaults(func=cmd_score)

    e = sub.add_parser("eval", parents=[common], help="multi-run benchmark evaluation")
    e.add_argument("--manifest", required=True)
    _endpoint_flags(e)
    e.add_argument("--runs", type=int, default=5)
    e.add_argument("--temperature", type=float, default=0.6)
    e.add_argument("--top-p", type=float, default=0.95)
    e.add_argument("--max-tokens", type=int, default=6144)
    e.add_argument("--answer-mode", choices=["letter_or_text", "exact_set"], default="letter_or_text")
    e.add_argument("--extraction", choices=["strict", "lenient"], default="lenient")
    e.add_argument("--shuffle", action="store_true", help="reshuffle options per run")
    e.add_argument("--label", default="model")
    e.add_argument("--out", default="-")
    e.add_argument("--format", choices=["markdown", "csv", "json"], default=None)
    e.add_argument("--json-out", default=None, help="also write the full JSON report here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", parents=[common], help="render a saved report")
    r.add_argument("--input", default=None, help="JSON report written by eval")
    r.add_argument("--components", default=None, help="NAME=PERCENT,... column means")
    r.add_argument("--label", default="model")
    r.add_argument("--format", choices=["markdown", "csv", "json"], default=None)
    r.add_argument("--out", default="-")
    r.set_defaults(func=cmd_report)

    q = sub.add_parser("grpo", parents=[common], help="simulate GRPO iterations")
    q.add_argument("--dataset", action="append", default=[], help="item JSONL (repeatable)")
    _endpoint_flags(q)
    q.add_argument("--reference", default="none", help="reference endpoint URL, 'mock' or 'none'")
    q.add_argument("--reference-model", default="reference")
    q.add_argument("--out", default="metrics.jsonl")
    q.add_argument("--checkpoint", default=None, help="default: loop.ckpt next to --out")
    q.add_argument("--policy-log", default=None)
    for name in _LOOP_FLAGS:
        kind = float if name in ("learning_rate", "kl_coefficient") else int
        q.add_argument("--" + name.replace("_", "-"), type=kind, default=None)
    q.add_argument("--weights", type=_parse_weights, default=None)
    q.add_argument("--format", choices=["strict", "lenient"], default=None)
    q.set_defaults(func=cmd_grpo)
    return parser


def _config_defaults(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Apply ``[command]`` tables from a TOML config as parser defaults."""
    pre, _ = parser.parse_known_args(argv)
    if not pre.config:
        return
    with open(pre.config, "rb") as fh:
        data = tomllib.load(fh)
    chain = [pre.command] + ([pre.task_kind] if getattr(pre, "task_kind", None) else [])
    values = {}
    table = data
    for name in chain:
        table = table.get(name, {}) if isinstance(table, dict) else {}
        values.update({k.replace("-", "_"): v for k, v in table.items() if not isinstance(v, dict)})
    if not values:
        return
    actions = parser._subparsers._group_actions[0].choices[pre.command]
    if chain[1:]:
        actions = actions._subparsers._group_actions[0].choices[chain[1]]
    known = {a.dest for a in actions._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CliError(f"unknown keys in [{'.'.join(chain)}] of {pre.config}: {unknown}")
    actions.set_defaults(**values)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _config_defaults(parser, argv)
    except (CliError, OSError, tomllib.TOMLDecodeError) as exc:
        print(f"physrl: error: {exc}", file=sys.stderr)
        return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=LOG_LEVELS[args.log_level], stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SystemExit:
        raise
    except CliError as exc:
        print(f"physrl: error: {exc}", file=sys.stderr)
        return 1
    except DOMAIN_ERRORS as exc:
        print(f"physrl: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
