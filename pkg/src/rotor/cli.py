"""Command-line entry point.

Exit codes: 0 success, 1 at least one failed invariance certification,
2 usage or input-format errors. All randomness is seed-controlled, so a
re-run with identical flags produces byte-identical reports.
"""

import argparse
import sys

from .accounting import analytic_cost, instrumented_forward
from .arrangement import distinct_layout_count
from .baselines import collision_rate, ordering_collision_stats, pine_plan
from .errors import RotorError
from .harness import (
    REPORT_SCHEMA,
    SHUFFLE_SEEDS,
    build_plan,
    certify_invariance,
    make_plan_builder,
    render_report,
    shuffle_study,
    write_report,
)
from .inputs import decode, parse_prompt_file
from .model import ModelConfig, ToyLM, init_seeded, load_weights, save_weights
from .ordering import STRATEGIES, lexical_order
from .routing import ALPHA_GRID, DEFAULT_ALPHA, alpha_sweep, route

PLAN_CHOICES = ("original", "pcw", "pine", "rotor")


def _add_model_args(p: argparse.ArgumentParser):
    p.add_argument("--weights", help="weight manifest produced by gen-weights")
    p.add_argument("--seed", type=int, default=0,
                   help="weight init seed when no --weights is given")


def _add_common(p: argparse.ArgumentParser):
    _add_model_args(p)
    p.add_argument("--order", choices=STRATEGIES, default="lexical")
    p.add_argument("--report", help="write the JSON report to this path")


def _load_model(args) -> ToyLM:
    if args.weights:
        return load_weights(args.weights)
    return init_seeded(ModelConfig(), args.seed)


def _emit(report: dict, args, out=sys.stdout) -> None:
    text = render_report(report)
    if getattr(args, "report", None):
        write_report(report, args.report)
    out.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rotor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-weights", help="create a seeded weight file pair")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--vocab-size", type=int, default=260)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--n-layers", type=int, default=4)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--max-position", type=int, default=2048)
    p.add_argument("--rope-base", type=float, default=10000.0)

    p = sub.add_parser("certify", help="brute-force order-invariance certification")
    p.add_argument("--prompt", required=True)
    p.add_argument("--plan", choices=PLAN_CHOICES, required=True)
    mode = p.add_mutually_exclusive_group()
    mode.add_argument("--exhaustive", action="store_true")
    mode.add_argument("--samples", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=1e-9)
    p.add_argument("--sample-seed", type=int, default=0)
    _add_common(p)

    p = sub.add_parser("shuffle", help="paired before/after-shuffle study")
    p.add_argument("--prompts", nargs="+", required=True)
    p.add_argument("--plans", nargs="+", choices=PLAN_CHOICES, default=["original", "rotor"])
    p.add_argument("--seeds", nargs="+", type=int, default=list(SHUFFLE_SEEDS))
    p.add_argument("--max-new", type=int, default=8)
    _add_common(p)

    p = sub.add_parser("route", help="selective routing on one prompt")
    p.add_argument("--prompt", required=True)
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--invariant", choices=("rotor", "pcw", "pine"), default="rotor")
    _add_common(p)

    p = sub.add_parser("sweep-alpha", help="accuracy over an alpha grid")
    p.add_argument("--prompts", nargs="+", required=True)
    p.add_argument("--alphas", nargs="+", type=float, default=list(ALPHA_GRID))
    p.add_argument("--invariant", choices=("rotor", "pcw", "pine"), default="rotor")
    _add_common(p)

    p = sub.add_parser("cost", help="analytic vs instrumented cost accounting")
    p.add_argument("--prompt", required=True)
    p.add_argument("--plan", choices=PLAN_CHOICES, required=True)
    _add_common(p)

    p = sub.add_parser("collide", help="pine tie collisions at float64 vs bfloat16")
    p.add_argument("--prompt", required=True)
    _add_common(p)

    p = sub.add_parser("dump-plan", help="emit a plan description as JSON")
    p.add_argument("--prompt", required=True)
    p.add_argument("--plan", choices=PLAN_CHOICES, required=True)
    p.add_argument("--out", help="output path (default stdout)")
    _add_model_args(p)
    p.add_argument("--order", choices=STRATEGIES, default="lexical")

    return parser


def _cmd_gen_weights(args) -> int:
    config = ModelConfig(
        vocab_size=args.vocab_size, d_model=args.d_model, n_heads=args.n_heads,
        n_layers=args.n_layers, head_dim=args.head_dim,
        max_position=args.max_position, rope_base=args.rope_base,
    )
    save_weights(init_seeded(config, args.seed), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_certify(args) -> int:
    model = _load_model(args)
    prompt = parse_prompt_file(args.prompt)
    mode = "exhaustive" if args.exhaustive or args.samples is None else "sampled"
    report = certify_invariance(
        model, prompt, args.plan, mode=mode,
        samples=args.samples if args.samples is not None else 20,
        tolerance=args.tolerance, seed=args.sample_seed, order_strategy=args.order,
    )
    _emit(report, args)
    return 0 if report["summary"]["pass"] else 1


def _cmd_shuffle(args) -> int:
    model = _load_model(args)
    prompts = [parse_prompt_file(p) for p in args.prompts]
    report = shuffle_study(model, prompts, args.plans, seeds=args.seeds,
                           order_strategy=args.order, max_new_tokens=args.max_new)
    _emit(report, args)
    return 0


def _cmd_route(args) -> int:
    model = _load_model(args)
    prompt = parse_prompt_file(args.prompt)
    if not prompt.candidates:
        raise RotorError("routing needs answer_candidates in the prompt file")
    builder = make_plan_builder(args.invariant, model, args.order, prompt.scores)
    decision = route(model, prompt.input, prompt.candidates, args.alpha, builder)
    report = {
        "schema": REPORT_SCHEMA,
        "experiment": "route",
        "params": {"alpha": args.alpha, "invariant": args.invariant, "order": args.order},
        "decision": decision.as_dict(),
        "chosen_answer_text": decode([decision.chosen_answer]).decode("utf-8"),
    }
    _emit(report, args)
    return 0


def _cmd_sweep_alpha(args) -> int:
    model = _load_model(args)
    examples = []
    for path in args.prompts:
        prompt = parse_prompt_file(path)
        examples.append((prompt.input, prompt.candidates, prompt.gold))
    builder = make_plan_builder(args.invariant, model, args.order)
    result = alpha_sweep(model, examples, builder, alphas=tuple(args.alphas))
    report = {
        "schema": REPORT_SCHEMA,
        "experiment": "sweep-alpha",
        "params": {"invariant": args.invariant, "order": args.order,
                   "prompts": len(examples)},
        "sweep": result.as_dict(),
    }
    _emit(report, args)
    return 0


def _cmd_cost(args) -> int:
    model = _load_model(args)
    prompt = parse_prompt_file(args.prompt)
    inp = prompt.input
    instrumented, _ = instrumented_forward(model, inp, args.plan, args.order, prompt.scores)
    analytic = analytic_cost(args.plan, model.config, len(inp.prefix),
                             [len(s) for s in inp.segments], len(inp.suffix))
    report = {
        "schema": REPORT_SCHEMA,
        "experiment": "cost",
        "params": {"plan": args.plan, "order": args.order},
        "analytic": analytic.as_dict(),
        "instrumented": instrumented.as_dict(),
        "multiplies_match": (
            analytic.attention_multiplies == instrumented.attention_multiplies
            and analytic.extra_multiplies == instrumented.extra_multiplies
        ),
    }
    _emit(report, args)
    return 0


def _cmd_collide(args) -> int:
    model = _load_model(args)
    prompt = parse_prompt_file(args.prompt)
    inp = prompt.input
    _, stats64 = pine_plan(model, inp, score_precision="float64")
    _, stats16 = pine_plan(model, inp, score_precision="bfloat16")
    rotor_stats = ordering_collision_stats(lexical_order(inp.segments))
    report = {
        "schema": REPORT_SCHEMA,
        "experiment": "collide",
        "params": {"k": inp.k},
        "pine_float64": {**stats64.as_dict(), "collision_rate": collision_rate(stats64)},
        "pine_bfloat16": {**stats16.as_dict(), "collision_rate": collision_rate(stats16)},
        "rotor_lexical": {
            **rotor_stats.as_dict(),
            "collision_rate": collision_rate(rotor_stats) if rotor_stats.total_pairs else None,
        },
    }
    _emit(report, args)
    return 0


def _cmd_dump_plan(args) -> int:
    prompt = parse_prompt_file(args.prompt)
    model = _load_model(args) if args.plan == "pine" else None
    plan = build_plan(args.plan, prompt.input, (), model, args.order, prompt.scores)
    dump = plan.to_dump_dict()
    dump["distinct_layouts"] = distinct_layout_count(plan)
    text = render_report(dump)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


_COMMANDS = {
    "gen-weights": _cmd_gen_weights,
    "certify": _cmd_certify,
    "shuffle": _cmd_shuffle,
    "route": _cmd_route,
    "sweep-alpha": _cmd_sweep_alpha,
    "cost": _cmd_cost,
    "collide": _cmd_collide,
    "dump-plan": _cmd_dump_plan,
}


def run_cli(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on usage errors and 0 on --help
        return int(e.code) if e.code else 0
    try:
        return _COMMANDS[args.command](args)
    except (RotorError, FileNotFoundError, IsADirectoryError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
