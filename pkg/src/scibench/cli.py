"""Command-line entry points.

Subcommands mirror the pipeline stages plus evaluation utilities:

  clean, dedup, balance, sequence   one pipeline stage (reads --config)
  pipeline                          all four stages in order
  eval                              score prediction files against gold
  judge                             pairwise position-swapped comparison
  dpo-check                         loss/gradient/schedule verification
  report                            render a stored report (markdown/csv)
  validate-manifest                 audit a dataset manifest

Exit codes: 0 success, 1 validation failure (bad config, malformed
records, failed checks), 2 stage failure (a pipeline stage or an external
service blew up mid-run).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import random
import sys
from pathlib import Path

from . import __version__
from .cleaning import ClassifierMalformedReply, ClassifierUnavailable
from .dpo import (
    DpoHyperparams,
    PairLogProbs,
    dpo_grad,
    dpo_loss,
    lr_schedule,
)
from .errors import ScibenchError, StageFailure
from .judge import (
    FixtureJudge,
    HttpJudge,
    JudgeCase,
    JudgeUnavailable,
    MalformedJudgeReply,
    judge_many,
    tally,
    write_verdicts,
)
from .manifest import DEFAULT_PROPORTION_TOLERANCE, load_manifest, validate_manifest
from .pipeline import (
    PipelineConfig,
    bootstrap_interval,
    emit_report,
    load_config,
    report_from_json,
    report_to_json,
    run_eval,
    run_pipeline,
    stage_balance,
    stage_clean,
    stage_dedup,
    stage_sequence,
)
from .records import MalformedRecord, atomic_write_text

logger = logging.getLogger(__name__)

_STAGE_COMMANDS = {
    "clean": stage_clean,
    "dedup": stage_dedup,
    "balance": stage_balance,
    "sequence": stage_sequence,
}


def _load_cli_config(args) -> PipelineConfig:
    return load_config(args.config, seed=args.seed, jobs=args.jobs)


def _print_stage(summary) -> None:
    print(f"{summary.stage}: {summary.count_in} in, {summary.count_out} out")
    for reason, count in sorted(summary.rejections.items()):
        print(f"  rejected {count} ({reason})")


# ----- stage subcommands -----

def cmd_stage(args) -> int:
    config = _load_cli_config(args)
    Path(config.output_dir).mkdir(parents=True, exist_ok=True)
    stage_fn = _STAGE_COMMANDS[args.command]
    try:
        summary = stage_fn(config)
    except ScibenchError as exc:
        raise StageFailure(args.command, exc) from exc
    _print_stage(summary)
    return 0


def cmd_pipeline(args) -> int:
    config = _load_cli_config(args)
    result = run_pipeline(config)
    for name in ("clean", "dedup", "balance", "sequence"):
        _print_stage(result.stages[name])
    print(f"config {result.config_hash} seed {result.seed}")
    return 0


# ----- eval / report -----

def cmd_eval(args) -> int:
    config = _load_cli_config(args) if args.config else None
    report, details = run_eval(
        args.pred,
        args.gold,
        config=config,
        model_name=args.model_name,
        collect_details=True,
    )
    if args.out:
        atomic_write_text(args.out, report_to_json(report))
        print(f"wrote {args.out}")
    print(emit_report(report, format=args.format), end="")
    if args.bootstrap:
        seed = args.seed if args.seed is not None else (config.seed if config else 0)
        for task, task_score in sorted(details.items()):
            low, high = bootstrap_interval(
                task_score, iterations=args.bootstrap, seed=seed
            )
            print(f"bootstrap 95% interval {task}: {low:.4f}..{high:.4f}")
    return 0


def cmd_report(args) -> int:
    with open(args.infile, "r", encoding="utf-8") as handle:
        report = report_from_json(handle.read())
    rendered = emit_report(report, format=args.format)
    if args.out:
        atomic_write_text(args.out, rendered)
        print(f"wrote {args.out}")
    else:
        print(rendered, end="")
    return 0


# ----- judge -----

def _load_judge_cases(path) -> list[JudgeCase]:
    cases = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                cases.append(
                    JudgeCase(
                        question_id=obj["question_id"],
                        question=obj["question"],
                        answer_a=obj["answer_a"],
                        answer_b=obj["answer_b"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise MalformedRecord(f"{path}:{lineno}: bad judge case: {exc}") from exc
    return cases


def _load_judge_fixture(path) -> FixtureJudge:
    with open(path, "r", encoding="utf-8") as handle:
        entries = json.load(handle)
    table = {}
    try:
        for question_id, order, score_1, score_2 in entries:
            table[(question_id, order)] = (score_1, score_2)
    except (TypeError, ValueError) as exc:
        raise MalformedRecord(
            f"{path}: fixture must be a list of [question_id, order, score_1, score_2]"
        ) from exc
    return FixtureJudge(table)


def cmd_judge(args) -> int:
    config = _load_cli_config(args) if args.config else None
    tie_margin = args.tie_margin
    if tie_margin is None:
        tie_margin = config.judge.tie_margin if config else 0.0
    fixture_path = args.fixture or (config.judge.fixture_path if config else None)
    jobs = args.jobs or (config.jobs if config else 1)

    cases = _load_judge_cases(args.cases)
    if fixture_path:
        judge = _load_judge_fixture(fixture_path)
    else:
        judge = HttpJudge(max_in_flight=jobs)

    verdicts = judge_many(cases, judge, tie_margin=tie_margin, jobs=jobs)
    if args.out:
        write_verdicts(args.out, verdicts)
        print(f"wrote {args.out}")
    counts = tally(verdicts)
    print(
        f"wins_a={counts.wins_a} wins_b={counts.wins_b} ties={counts.ties} "
        f"total={counts.total}"
    )
    return 0


# ----- dpo-check -----

def _check(name: str, ok: bool, detail: str, failures: list[str]) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"{status} {name}: {detail}")
    if not ok:
        failures.append(name)


def cmd_dpo_check(args) -> int:
    config = _load_cli_config(args) if args.config else None
    hp = config.dpo if config else DpoHyperparams()
    seed = args.seed if args.seed is not None else (config.seed if config else 0)
    rng = random.Random(seed)
    failures: list[str] = []

    equal = dpo_loss(PairLogProbs(-1.0, -1.0), hp.beta, gap_scaling=hp.gap_scaling)
    _check(
        "loss_at_equal_logprobs",
        abs(equal - math.log(2.0)) <= 1e-12,
        f"loss={equal!r} vs ln2={math.log(2.0)!r}",
        failures,
    )

    h = 1e-5
    worst = 0.0
    for _ in range(args.samples):
        w = rng.uniform(-8.0, -0.05)
        l = rng.uniform(-8.0, -0.05)
        grad_w, grad_l = dpo_grad(PairLogProbs(w, l), hp.beta, gap_scaling=hp.gap_scaling)
        fd_w = (
            dpo_loss(PairLogProbs(w + h, l), hp.beta, gap_scaling=hp.gap_scaling)
            - dpo_loss(PairLogProbs(w - h, l), hp.beta, gap_scaling=hp.gap_scaling)
        ) / (2 * h)
        fd_l = (
            dpo_loss(PairLogProbs(w, l + h), hp.beta, gap_scaling=hp.gap_scaling)
            - dpo_loss(PairLogProbs(w, l - h), hp.beta, gap_scaling=hp.gap_scaling)
        ) / (2 * h)
        for analytic, numeric in ((grad_w, fd_w), (grad_l, fd_l)):
            rel = abs(numeric - analytic) / max(abs(analytic), 1e-12)
            worst = max(worst, rel)
    _check(
        "gradient_finite_difference",
        worst < 1e-6,
        f"worst relative error {worst:.3e} over {args.samples} samples",
        failures,
    )

    worst_shift = 0.0
    for _ in range(args.samples):
        w = rng.uniform(-8.0, -0.05)
        l = rng.uniform(-8.0, -0.05)
        shift = rng.uniform(-5.0, 5.0)
        base = dpo_loss(PairLogProbs(w, l), hp.beta, gap_scaling=hp.gap_scaling)
        moved = dpo_loss(PairLogProbs(w + shift, l + shift), hp.beta, gap_scaling=hp.gap_scaling)
        worst_shift = max(worst_shift, abs(base - moved))
    _check(
        "translation_invariance",
        worst_shift <= 1e-12,
        f"worst |delta| {worst_shift:.3e}",
        failures,
    )

    total = args.total_steps
    lr0 = lr_schedule(0, total, hp)
    lr_warm = lr_schedule(hp.warmup_steps, total, hp)
    midpoint = hp.warmup_steps + (total - hp.warmup_steps) // 2
    lr_mid = lr_schedule(midpoint, total, hp)
    lr_end = lr_schedule(total, total, hp)
    nonincreasing = all(
        lr_schedule(step, total, hp) >= lr_schedule(step + 1, total, hp)
        for step in range(hp.warmup_steps, total)
    )
    _check("lr_at_step_0", lr0 == 0.0, f"lr(0)={lr0!r}", failures)
    _check(
        "lr_at_warmup_end",
        lr_warm == hp.lr_init,
        f"lr({hp.warmup_steps})={lr_warm!r} vs lr_init={hp.lr_init!r}",
        failures,
    )
    _check(
        "lr_at_cosine_midpoint",
        abs(lr_mid - hp.lr_init / 2) <= 1e-12,
        f"lr({midpoint})={lr_mid!r} vs {hp.lr_init / 2!r}",
        failures,
    )
    _check("lr_at_total_steps", lr_end == 0.0, f"lr({total})={lr_end!r}", failures)
    _check(
        "lr_nonincreasing_after_warmup",
        nonincreasing,
        f"checked steps {hp.warmup_steps}..{total}",
        failures,
    )

    if failures:
        print(f"{len(failures)} check(s) failed")
        return 1
    print("all checks passed")
    return 0


# ----- validate-manifest -----

def cmd_validate_manifest(args) -> int:
    manifest = load_manifest(args.manifest)
    report = validate_manifest(manifest, tolerance=args.tolerance)
    for line in report.summary_lines():
        print(line)
    return 1 if report.has_failures() else 0


# ----- parser / main -----

def _add_config_flags(parser, config_required: bool) -> None:
    parser.add_argument(
        "--config", required=config_required, help="TOML pipeline config path"
    )
    parser.add_argument("--seed", type=int, default=None, help="override config seed")
    parser.add_argument(
        "--jobs", type=int, default=None, help="worker cap for HTTP clients"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scibench",
        description="Corpus curation and benchmark evaluation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("clean", "rule filters, PII scrubbing, optional classifier"),
        ("dedup", "exact and near-duplicate removal"),
        ("balance", "downsample to configured category proportions"),
        ("sequence", "order records into a training schedule"),
    ):
        stage = sub.add_parser(name, help=help_text)
        _add_config_flags(stage, config_required=True)
        stage.set_defaults(func=cmd_stage)

    pipe = sub.add_parser("pipeline", help="run clean, dedup, balance, sequence")
    _add_config_flags(pipe, config_required=True)
    pipe.set_defaults(func=cmd_pipeline)

    ev = sub.add_parser("eval", help="score prediction files against gold files")
    _add_config_flags(ev, config_required=False)
    ev.add_argument("--pred", action="append", required=True, help="prediction JSONL (repeatable)")
    ev.add_argument("--gold", action="append", required=True, help="gold JSONL (repeatable)")
    ev.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    ev.add_argument("--out", help="write the report as JSON to this path")
    ev.add_argument("--model-name", default="model_a")
    ev.add_argument("--bootstrap", type=int, default=0, help="bootstrap iterations (0 = off)")
    ev.set_defaults(func=cmd_eval)

    jd = sub.add_parser("judge", help="position-swapped pairwise judging")
    _add_config_flags(jd, config_required=False)
    jd.add_argument("--cases", required=True, help="JSONL of judge cases")
    jd.add_argument("--fixture", help="offline judge fixture table (JSON)")
    jd.add_argument("--tie-margin", type=float, default=None)
    jd.add_argument("--out", help="write verdicts JSONL to this path")
    jd.set_defaults(func=cmd_judge)

    dc = sub.add_parser("dpo-check", help="verify loss, gradient, and LR schedule")
    _add_config_flags(dc, config_required=False)
    dc.add_argument("--samples", type=int, default=200, help="random triples per suite")
    dc.add_argument("--total-steps", type=int, default=5000)
    dc.set_defaults(func=cmd_dpo_check)

    rp = sub.add_parser("report", help="render a stored report")
    rp.add_argument("--in", dest="infile", required=True, help="report JSON path")
    rp.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    rp.add_argument("--out", help="write rendered report to this path")
    rp.set_defaults(func=cmd_report)

    vm = sub.add_parser("validate-manifest", help="audit a dataset manifest")
    vm.add_argument("manifest", help="manifest JSON path")
    vm.add_argument(
        "--tolerance",
        type=float,
        default=DEFAULT_PROPORTION_TOLERANCE,
        help="allowed |computed - declared| per category proportion",
    )
    vm.set_defaults(func=cmd_validate_manifest)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (
        JudgeUnavailable,
        MalformedJudgeReply,
        ClassifierUnavailable,
        ClassifierMalformedReply,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ScibenchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
