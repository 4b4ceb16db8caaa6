"""Experiment drivers: invariance certification, shuffle robustness, reports.

Reports are plain dicts under the versioned schema ``rotor-report/1`` and
serialize byte-identically for identical flags and seeds.
"""

import itertools
import json
import math

import numpy as np

from .arrangement import SUFFIX, original_plan, rotor_plan
from .baselines import pcw_plan, pine_plan
from .errors import DomainError
from .inputs import PromptFile, SegmentedInput, make_input, shuffle_permutation
from .model import ToyLM, answer_token_distribution, forward, greedy_decode
from .numerics import OpCounter
from .ordering import compute_order
from .rng import Xorshift64Star

REPORT_SCHEMA = "rotor-report/1"
DEFAULT_TOLERANCE = 1e-9
EXHAUSTIVE_MAX_K = 6
SHUFFLE_SEEDS = (0, 1, 2)

# paired-t reference thresholds echoed into shuffle reports (not re-derived)
T_TEST_REFERENCE = {"df": 8, "critical_value": 2.306, "alpha": 0.05}


def build_plan(kind: str, inp: SegmentedInput, generated: tuple[int, ...] = (),
               model: ToyLM | None = None, order_strategy: str = "lexical",
               scores=None, counter: OpCounter | None = None):
    """Construct a plan of the given kind for this input."""
    if kind == "original":
        return original_plan(inp, len(generated))
    if kind == "pcw":
        return pcw_plan(inp, len(generated))
    if kind == "rotor":
        order = compute_order(order_strategy, inp.segments, scores, counter)
        return rotor_plan(inp, order, len(generated))
    if kind == "pine":
        if model is None:
            raise DomainError("pine plans need the model")
        plan, _ = pine_plan(model, inp, generated, counter=counter)
        return plan
    raise DomainError(f"unknown plan kind {kind!r}")


def make_plan_builder(kind: str, model: ToyLM | None = None,
                      order_strategy: str = "lexical", scores=None):
    """A ``builder(input, generated_tokens) -> plan`` closure for decoding APIs."""

    def builder(inp, generated):
        return build_plan(kind, inp, tuple(generated), model, order_strategy, scores)

    return builder


def _suffix_rows(plan) -> np.ndarray:
    rows = np.nonzero(plan.segment_id == SUFFIX)[0]
    if rows.size == 0:
        rows = np.array([plan.token_count - 1])
    return rows


def relative_deviation(a: np.ndarray, b: np.ndarray) -> float:
    """max |a - b| scaled by the largest magnitude in the reference ``a``."""
    diff = float(np.max(np.abs(a - b)))
    scale = float(np.max(np.abs(a)))
    if scale == 0.0:
        return diff
    return diff / scale


def suffix_logits(model: ToyLM, inp: SegmentedInput, kind: str,
                  order_strategy: str = "lexical", scores=None) -> np.ndarray:
    plan = build_plan(kind, inp, (), model, order_strategy, scores)
    result = forward(model, inp.tokens(), plan)
    return result.logits[_suffix_rows(plan)]


def certify_invariance(model: ToyLM, prompt, plan_kind: str,
                       mode: str = "exhaustive", samples: int = 20,
                       tolerance: float = DEFAULT_TOLERANCE, seed: int = 0,
                       order_strategy: str = "lexical") -> dict:
    """Brute-force invariance check over segment permutations.

    Runs the forward pass for each permutation of the parallel segments and
    passes iff all suffix-position logits agree with the unpermuted run
    within ``tolerance`` (relative).
    """
    if isinstance(prompt, PromptFile):
        inp, scores = prompt.input, prompt.scores
    else:
        inp, scores = prompt, None
    k = inp.k
    if mode == "exhaustive":
        if k > EXHAUSTIVE_MAX_K:
            raise DomainError(
                f"exhaustive mode supports k <= {EXHAUSTIVE_MAX_K} (got k={k}); "
                "use sampled mode"
            )
        perms = [list(p) for p in itertools.permutations(range(k))]
    elif mode == "sampled":
        rng = Xorshift64Star(seed)
        perms = [list(range(k))] + [rng.shuffled(list(range(k))) for _ in range(samples)]
    else:
        raise DomainError(f"unknown mode {mode!r}")

    baseline = suffix_logits(model, inp, plan_kind, order_strategy, scores)
    records = []
    for perm in perms:
        p_inp = inp.with_segments([inp.segments[i] for i in perm])
        p_scores = tuple(scores[i] for i in perm) if scores is not None else None
        logits = suffix_logits(model, p_inp, plan_kind, order_strategy, p_scores)
        dev = relative_deviation(baseline, logits)
        records.append({
            "permutation": perm,
            "max_deviation": dev,
            "pass": bool(dev <= tolerance),
        })
    n_pass = sum(r["pass"] for r in records)
    return {
        "schema": REPORT_SCHEMA,
        "experiment": "certify",
        "params": {
            "plan": plan_kind,
            "order": order_strategy,
            "mode": mode,
            "tolerance": tolerance,
            "seed": seed,
            "k": k,
        },
        "records": records,
        "summary": {
            "pass": n_pass == len(records),
            "pass_rate": n_pass / len(records),
            "max_deviation": max(r["max_deviation"] for r in records),
            "permutations": len(records),
        },
    }


def shuffle_study(model: ToyLM, prompts: list[PromptFile], plan_kinds,
                  seeds=SHUFFLE_SEEDS, order_strategy: str = "lexical",
                  max_new_tokens: int = 8) -> dict:
    """Paired before/after-shuffle comparison of outputs per plan kind.

    The per-record ``difference`` is the largest of: relative suffix-logit
    deviation, L1 distance between candidate answer distributions (when the
    prompt carries candidates), and 1.0 for a greedy-output mismatch.
    """
    records = []
    for pi, prompt in enumerate(prompts):
        inp, scores = prompt.input, prompt.scores
        for kind in plan_kinds:
            before_logits = suffix_logits(model, inp, kind, order_strategy, scores)
            before_greedy = greedy_decode(
                model, inp, make_plan_builder(kind, model, order_strategy, scores),
                max_new_tokens,
            )
            before_dist = None
            if prompt.candidates:
                before_dist, _ = answer_token_distribution(
                    model, inp, make_plan_builder(kind, model, order_strategy, scores),
                    prompt.candidates,
                )
            for seed in seeds:
                perm = shuffle_permutation(inp.k, seed)
                s_inp = inp.with_segments([inp.segments[i] for i in perm])
                s_scores = tuple(scores[i] for i in perm) if scores is not None else None
                after_logits = suffix_logits(model, s_inp, kind, order_strategy, s_scores)
                after_greedy = greedy_decode(
                    model, s_inp, make_plan_builder(kind, model, order_strategy, s_scores),
                    max_new_tokens,
                )
                logit_dev = relative_deviation(before_logits, after_logits)
                greedy_match = before_greedy == after_greedy
                dist_l1 = None
                if prompt.candidates:
                    after_dist, _ = answer_token_distribution(
                        model, s_inp,
                        make_plan_builder(kind, model, order_strategy, s_scores),
                        prompt.candidates,
                    )
                    dist_l1 = float(np.sum(np.abs(before_dist - after_dist)))
                difference = max(
                    logit_dev,
                    dist_l1 if dist_l1 is not None else 0.0,
                    0.0 if greedy_match else 1.0,
                )
                records.append({
                    "prompt": pi,
                    "plan": kind,
                    "seed": seed,
                    "suffix_logit_deviation": logit_dev,
                    "greedy_match": greedy_match,
                    "distribution_l1": dist_l1,
                    "difference": difference,
                })

    summary = {}
    for kind in plan_kinds:
        diffs = [r["difference"] for r in records if r["plan"] == kind]
        mean = sum(diffs) / len(diffs)
        if len(diffs) > 1:
            var = sum((d - mean) ** 2 for d in diffs) / (len(diffs) - 1)
            stdev = math.sqrt(var)
        else:
            stdev = 0.0
        summary[kind] = {
            "records": len(diffs),
            "mean_difference": mean,
            "stdev_difference": stdev,
            "all_zero_at_tolerance": all(d <= DEFAULT_TOLERANCE for d in diffs),
        }
    return {
        "schema": REPORT_SCHEMA,
        "experiment": "shuffle",
        "params": {
            "plans": list(plan_kinds),
            "seeds": list(seeds),
            "order": order_strategy,
            "max_new_tokens": max_new_tokens,
            "prompts": len(prompts),
        },
        "records": records,
        "summary": summary,
        "t_test_reference": dict(T_TEST_REFERENCE),
    }


# ---------------------------------------------------------------------------
# deterministic suite generation (used by tests and acceptance runs)
# ---------------------------------------------------------------------------


def generate_random_input(rng: Xorshift64Star, k: int, seg_len=(2, 4),
                          prefix_len=(2, 4), suffix_len=(2, 4),
                          alphabet=(97, 122), distinct: bool = True) -> SegmentedInput:
    """Random SegmentedInput over a byte alphabet; segments distinct by default."""

    def rand_len(bounds):
        lo, hi = bounds
        return lo + rng.randbelow(hi - lo + 1)

    def rand_tokens(ln):
        lo, hi = alphabet
        return [lo + rng.randbelow(hi - lo + 1) for _ in range(ln)]

    prefix = rand_tokens(rand_len(prefix_len))
    suffix = rand_tokens(rand_len(suffix_len))
    segments: list[tuple[int, ...]] = []
    while len(segments) < k:
        seg = tuple(rand_tokens(rand_len(seg_len)))
        if distinct and seg in segments:
            continue
        segments.append(seg)
    return make_input(prefix, segments, suffix)


def generate_choice_prompt(rng: Xorshift64Star, k: int = 4) -> PromptFile:
    """A multiple-choice style prompt with candidates A.. and a gold answer."""
    inp = generate_random_input(rng, k)
    candidates = tuple(range(65, 65 + min(k, 8)))
    gold = candidates[rng.randbelow(len(candidates))]
    return PromptFile(input=inp, candidates=candidates, scores=None, gold=gold)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def render_report(report: dict) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(_jsonable(report), indent=2, sort_keys=True) + "\n"


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(render_report(report))
