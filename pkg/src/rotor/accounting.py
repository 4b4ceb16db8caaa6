"""Cost accounting: analytic formulas versus instrumented counters.

The cost unit is the multiply. Attention multiplies cover the q.k score
dots and the prob*value sums over visible pairs; plan-construction extras
cover the rotary-free relevance dots that only the pine plan performs.
Sorting does no multiplies, so its work is reported as comparisons:
instrumented runs count actual comparator work, analytic reports give the
documented upper bound m*ceil(log2 m) per sort of m items (times the
maximum sequence length for token-sequence sorts).
"""

import math
from dataclasses import dataclass

from .arrangement import distinct_layout_count, original_plan, rotor_plan
from .baselines import pcw_plan, pine_plan
from .errors import DomainError
from .inputs import SegmentedInput
from .model import ModelConfig, ToyLM, forward
from .numerics import OpCounter
from .ordering import compute_order

PLAN_KINDS = ("original", "pcw", "pine", "rotor")


@dataclass(frozen=True)
class CostReport:
    plan_kind: str
    n: int
    k: int
    d: int
    attention_multiplies: int
    extra_multiplies: int
    extra_comparisons: int
    distinct_layouts: int
    comparisons_are_bound: bool

    def as_dict(self) -> dict:
        return {
            "plan_kind": self.plan_kind,
            "n": self.n,
            "k": self.k,
            "d": self.d,
            "attention_multiplies": self.attention_multiplies,
            "extra_multiplies": self.extra_multiplies,
            "extra_comparisons": self.extra_comparisons,
            "distinct_layouts": self.distinct_layouts,
            "comparisons_are_bound": self.comparisons_are_bound,
        }


def _sort_bound(m: int) -> int:
    """Comparator-call bound for sorting m items: m * ceil(log2 m)."""
    if m < 2:
        return 0
    return m * math.ceil(math.log2(m))


def _visible_total(plan_kind: str, p: int, lens: list[int], s: int, g: int) -> int:
    """Sum over queries of visible-key counts, mirroring plan construction."""
    total = sum(lens)
    n = p + total + s + g
    v = p * (p + 1) // 2  # causal prefix
    if plan_kind == "original":
        return n * (n + 1) // 2
    for ln in lens:
        if plan_kind == "pcw":
            v += ln * p + ln * (ln + 1) // 2
        else:  # rotor / pine: prefix + all other segments + own causal
            v += ln * (p + total - ln) + ln * (ln + 1) // 2
    for i in range(p + total, n):  # suffix and generated see everything prior
        v += i + 1
    return v


def analytic_cost(plan_kind: str, config: ModelConfig, prefix_len: int,
                  segment_lengths, suffix_len: int, n_generated: int = 0) -> CostReport:
    """Closed-form counts for a forward pass plus plan construction.

    Multiplies are exact (they equal the instrumented counters); sort
    comparisons are upper bounds; pine's distinct-layout figure is an upper
    bound since the realized layouts depend on the scores.
    """
    if plan_kind not in PLAN_KINDS:
        raise DomainError(f"unknown plan kind {plan_kind!r}")
    lens = [int(x) for x in segment_lengths]
    if not lens or any(x < 1 for x in lens):
        raise DomainError("segment lengths must be positive")
    k = len(lens)
    p, s, g = int(prefix_len), int(suffix_len), int(n_generated)
    total = sum(lens)
    n = p + total + s + g
    d = config.d_model
    L = config.n_layers

    attention = L * 2 * d * _visible_total(plan_kind, p, lens, s, g)

    extra_mults = 0
    comparisons = 0
    layouts = 1
    if plan_kind == "pine":
        per_layer = sum(ln * (total - ln) for ln in lens) + (s + g) * total
        extra_mults = L * d * per_layer
        events_sort = sum(ln * _sort_bound(k - 1) for ln in lens)
        events_sort += (s + g) * _sort_bound(k)
        comparisons = L * config.n_heads * events_sort
        qualifying = total + s + g
        layouts = 1 + min(
            L * config.n_heads * qualifying,
            k * math.factorial(k - 1) + math.factorial(k),
        )
    elif plan_kind == "rotor":
        comparisons = _sort_bound(k) * max(lens)
        layouts = k
    return CostReport(plan_kind, n, k, d, attention, extra_mults, comparisons,
                      layouts, comparisons_are_bound=True)


def instrumented_forward(model: ToyLM, inp: SegmentedInput, plan_kind: str,
                         order_strategy: str = "lexical", scores=None,
                         generated: tuple[int, ...] = ()) -> tuple[CostReport, object]:
    """Build the plan and run one forward pass with live counters."""
    if plan_kind not in PLAN_KINDS:
        raise DomainError(f"unknown plan kind {plan_kind!r}")
    counter = OpCounter()
    if plan_kind == "original":
        plan = original_plan(inp, len(generated))
    elif plan_kind == "pcw":
        plan = pcw_plan(inp, len(generated))
    elif plan_kind == "rotor":
        order = compute_order(order_strategy, inp.segments, scores, counter)
        plan = rotor_plan(inp, order, len(generated))
    else:
        plan, _ = pine_plan(model, inp, generated, counter=counter)
    result = forward(model, inp.tokens(tuple(generated)), plan, counter=counter)
    report = CostReport(
        plan_kind=plan_kind,
        n=plan.token_count,
        k=inp.k,
        d=model.config.d_model,
        attention_multiplies=counter.attention_multiplies,
        extra_multiplies=counter.extra_multiplies,
        extra_comparisons=counter.comparisons,
        distinct_layouts=distinct_layout_count(plan),
        comparisons_are_bound=False,
    )
    return report, result
