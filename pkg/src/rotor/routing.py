"""Selective routing between the original plan and an invariant plan.

Both routes answer with their most probable candidate token; the original
route wins whenever its confidence plus the bias ``alpha`` is at least the
invariant route's confidence (ties therefore go to the original model).
Confidences are candidate-restricted maximum probabilities.
"""

import math
from dataclasses import dataclass

from .arrangement import original_plan
from .errors import DomainError
from .inputs import SegmentedInput
from .model import ToyLM, answer_token_distribution

DEFAULT_ALPHA = 0.2
ALPHA_GRID = tuple(round(-0.5 + 0.1 * i, 1) for i in range(11))


@dataclass(frozen=True)
class RoutingDecision:
    original_confidence: float
    invariant_confidence: float
    alpha: float
    chosen: str  # "original" | "invariant"
    chosen_answer: int
    original_answer: int
    invariant_answer: int

    def as_dict(self) -> dict:
        return {
            "original_confidence": self.original_confidence,
            "invariant_confidence": self.invariant_confidence,
            "alpha": self.alpha,
            "chosen": self.chosen,
            "chosen_answer": self.chosen_answer,
            "original_answer": self.original_answer,
            "invariant_answer": self.invariant_answer,
        }


def decide(p_orig: float, ans_orig: int, p_inv: float, ans_inv: int,
           alpha: float) -> RoutingDecision:
    """The pure comparison step: original wins iff p_orig + alpha >= p_inv."""
    pick_original = p_orig + alpha >= p_inv
    return RoutingDecision(
        original_confidence=p_orig,
        invariant_confidence=p_inv,
        alpha=alpha,
        chosen="original" if pick_original else "invariant",
        chosen_answer=ans_orig if pick_original else ans_inv,
        original_answer=ans_orig,
        invariant_answer=ans_inv,
    )


def _both_routes(model: ToyLM, inp: SegmentedInput, candidates, invariant_plan_builder):
    def original_builder(i, generated):
        return original_plan(i, len(generated))

    probs_o, ans_o = answer_token_distribution(model, inp, original_builder, candidates)
    probs_i, ans_i = answer_token_distribution(model, inp, invariant_plan_builder, candidates)
    return float(probs_o.max()), ans_o, float(probs_i.max()), ans_i


def route(model: ToyLM, inp: SegmentedInput, candidates, alpha: float,
          invariant_plan_builder) -> RoutingDecision:
    """Run both routes and pick per the alpha-biased confidence comparison."""
    if not math.isfinite(alpha):
        raise DomainError("alpha must be finite")
    p_o, ans_o, p_i, ans_i = _both_routes(model, inp, candidates, invariant_plan_builder)
    return decide(p_o, ans_o, p_i, ans_i, alpha)


def oracle_route(model: ToyLM, inp: SegmentedInput, candidates, gold: int,
                 invariant_plan_builder, alpha: float = DEFAULT_ALPHA) -> RoutingDecision:
    """Upper-bound router: correct whenever either route's answer is correct.

    Picks the route whose answer matches ``gold`` (original preferred when
    both match); falls back to the standard comparison when neither does.
    """
    if gold is None:
        raise DomainError("oracle routing requires a gold answer")
    p_o, ans_o, p_i, ans_i = _both_routes(model, inp, candidates, invariant_plan_builder)
    if ans_o == gold:
        chosen, answer = "original", ans_o
    elif ans_i == gold:
        chosen, answer = "invariant", ans_i
    else:
        return decide(p_o, ans_o, p_i, ans_i, alpha)
    return RoutingDecision(p_o, p_i, alpha, chosen, answer, ans_o, ans_i)


@dataclass(frozen=True)
class SweepResult:
    alphas: tuple[float, ...]
    accuracies: tuple[float, ...]
    best_alpha: float
    original_accuracy: float
    invariant_accuracy: float
    oracle_accuracy: float
    invariant_fraction: tuple[float, ...]  # per alpha, = 1 - original fraction

    def as_dict(self) -> dict:
        return {
            "alphas": list(self.alphas),
            "accuracies": list(self.accuracies),
            "best_alpha": self.best_alpha,
            "original_accuracy": self.original_accuracy,
            "invariant_accuracy": self.invariant_accuracy,
            "oracle_accuracy": self.oracle_accuracy,
            "invariant_fraction": list(self.invariant_fraction),
        }


def alpha_sweep(model: ToyLM, examples, invariant_plan_builder,
                alphas=ALPHA_GRID) -> SweepResult:
    """Routing accuracy per alpha over (input, candidates, gold) examples.

    Both routes run once per example; the sweep re-decides from the recorded
    confidences. ``best_alpha`` is the first argmax over the grid.
    """
    examples = list(examples)
    if not examples:
        raise DomainError("alpha sweep needs at least one example")
    rows = []
    for inp, candidates, gold in examples:
        if gold is None:
            raise DomainError("alpha sweep requires gold answers")
        if candidates is None:
            raise DomainError("alpha sweep requires answer candidates")
        rows.append((_both_routes(model, inp, candidates, invariant_plan_builder), gold))

    accs, inv_frac = [], []
    for alpha in alphas:
        hits = routed_inv = 0
        for (p_o, ans_o, p_i, ans_i), gold in rows:
            d = decide(p_o, ans_o, p_i, ans_i, alpha)
            hits += d.chosen_answer == gold
            routed_inv += d.chosen == "invariant"
        accs.append(hits / len(rows))
        inv_frac.append(routed_inv / len(rows))
    best = alphas[max(range(len(alphas)), key=lambda i: accs[i])]
    orig_acc = sum(ans_o == gold for (_, ans_o, _, _), gold in rows) / len(rows)
    inv_acc = sum(ans_i == gold for (_, _, _, ans_i), gold in rows) / len(rows)
    oracle_acc = sum(
        (ans_o == gold) or (ans_i == gold) for (_, ans_o, _, ans_i), gold in rows
    ) / len(rows)
    return SweepResult(tuple(alphas), tuple(accs), best, orig_acc, inv_acc,
                       oracle_acc, tuple(inv_frac))
