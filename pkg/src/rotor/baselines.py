"""Baseline order-invariant plans: PCW isolation and PINE score reordering.

PCW gives every segment the same position block starting at |prefix| and
forbids cross-segment attention entirely. PINE keeps cross-segment
attention but re-sorts the key segments for every (layer, head, query)
by relevance scores computed without rotary embeddings; colliding (tied)
scores are the mechanism's known failure mode and are reported.
"""

import math
from collections import Counter as MultisetCounter
from dataclasses import dataclass, field
from functools import cmp_to_key

import numpy as np

from . import numerics
from .arrangement import (
    GENERATED,
    PREFIX,
    SUFFIX,
    AttentionPlan,
    _Geometry,
    _bidirectional_visibility,
    _dedup_rows,
    build_head_context,
)
from .errors import DomainError
from .inputs import SegmentedInput
from .model import ToyLM, _silu
from .numerics import OpCounter, matmul, rms_norm_rows, rotate_rows
from .ordering import GlobalOrder

SCORE_PRECISIONS = ("float64", "bfloat16")


@dataclass
class NoPoSScore:
    """Rotary-free relevance of each key segment for one (layer, head, query)."""

    layer: int
    head: int
    query: int
    scores: dict[int, float]


@dataclass
class CollisionStats:
    """Tie bookkeeping across all sorting events of one plan construction."""

    total_pairs: int = 0
    tied_pairs: int = 0
    unique_counts: list[int] = field(default_factory=list)

    def merge_event(self, values: list[float]) -> None:
        m = len(values)
        self.total_pairs += m * (m - 1) // 2
        for count in MultisetCounter(values).values():
            self.tied_pairs += count * (count - 1) // 2
        self.unique_counts.append(len(set(values)))

    def as_dict(self) -> dict:
        return {
            "total_pairs": self.total_pairs,
            "tied_pairs": self.tied_pairs,
            "events": len(self.unique_counts),
            "mean_unique_per_event": (
                sum(self.unique_counts) / len(self.unique_counts) if self.unique_counts else None
            ),
        }


def collision_rate(stats: CollisionStats) -> float:
    """Fraction of tied comparisons; undefined (domain error) when empty."""
    if stats.total_pairs == 0:
        raise DomainError("collision rate undefined: no comparisons")
    return stats.tied_pairs / stats.total_pairs


def ordering_collision_stats(order: GlobalOrder) -> CollisionStats:
    """The global-sort analogue: ties are identical-content groups."""
    stats = CollisionStats()
    k = order.k
    stats.total_pairs = k * (k - 1) // 2
    dup = 0
    for group in order.tie_report:
        g = len(group)
        stats.tied_pairs += g * (g - 1) // 2
        dup += g - 1
    stats.unique_counts.append(k - dup)
    return stats


def round_to_bfloat16(x: float) -> float:
    """float64 -> bfloat16 -> float64 (round to nearest even at both steps)."""
    u = int(np.float32(x).view(np.uint32))
    u = (u + 0x7FFF + ((u >> 16) & 1)) & 0xFFFFFFFF
    return float(np.uint32(u & 0xFFFF0000).view(np.float32))


# ---------------------------------------------------------------------------
# PCW
# ---------------------------------------------------------------------------


def pcw_plan(inp: SegmentedInput, n_generated: int = 0) -> AttentionPlan:
    """Isolated parallel processing: overlapping segment ids, no cross-attention."""
    geo = _Geometry(inp, n_generated)
    n = geo.n
    max_len = max(geo.lens)
    row = np.empty(n, dtype=np.int64)
    row[: geo.p] = np.arange(geo.p)
    for s, start in enumerate(geo.seg_start):
        row[start: start + geo.lens[s]] = np.arange(geo.p, geo.p + geo.lens[s])
    tail = n - geo.suffix_start
    row[geo.suffix_start:] = np.arange(geo.p + max_len, geo.p + max_len + tail)

    vis = np.zeros((n, n), dtype=bool)
    for i in range(geo.p):
        vis[i, : i + 1] = True
    for s, start in enumerate(geo.seg_start):
        for o in range(geo.lens[s]):
            q = start + o
            vis[q, : geo.p] = True
            vis[q, start: q + 1] = True
    for i in range(geo.suffix_start, n):
        vis[i, : i + 1] = True

    return AttentionPlan(
        kind="pcw",
        segment_id=geo.segment_ids(),
        query_pos=row.copy(),
        layouts=row[None, :].copy(),
        query_layout=np.zeros(n, dtype=np.int64),
        visibility=vis,
    )


# ---------------------------------------------------------------------------
# PINE
# ---------------------------------------------------------------------------


def _segment_token_ranges(geo: _Geometry) -> list[np.ndarray]:
    return [
        np.arange(start, start + geo.lens[s]) for s, start in enumerate(geo.seg_start)
    ]


def _nopos_segment_score(q_vec: np.ndarray, k_head: np.ndarray, token_idx,
                         sqrt_hd: float, counter: OpCounter | None) -> float:
    """Mean over the segment's tokens of dot(q, k) / sqrt(head_dim), no RoPE."""
    if counter is not None:
        counter.extra_multiplies += q_vec.shape[0] * len(token_idx)
    acc = 0.0
    for j in token_idx:
        acc += numerics.dot_ascending(q_vec, k_head[j]) / sqrt_hd
    return acc / len(token_idx)


def _pine_pass(model: ToyLM, inp: SegmentedInput, generated: tuple[int, ...],
               score_precision: str, counter: OpCounter | None,
               trace: dict | None):
    """Layer-by-layer PINE pass: score, sort, arrange, attend.

    Returns (plan, stats). Scores at layer L are computed from that layer's
    pre-attention hidden states, which already reflect PINE attention in the
    layers below, so the recorded plan replays to the identical computation.
    """
    if score_precision not in SCORE_PRECISIONS:
        raise DomainError(f"score_precision must be one of {SCORE_PRECISIONS}")
    cfg = model.config
    geo = _Geometry(inp, len(generated))
    n, k = geo.n, inp.k
    hd, H = cfg.head_dim, cfg.n_heads
    sqrt_hd = math.sqrt(hd)
    seg_tokens = _segment_token_ranges(geo)
    segment_id = geo.segment_ids()
    visibility = _bidirectional_visibility(geo)

    # query positions: own segment occupies the top of the segment range
    query_pos = np.arange(n, dtype=np.int64)
    for s, start in enumerate(geo.seg_start):
        own_start = geo.p + geo.total - geo.lens[s]
        query_pos[start: start + geo.lens[s]] = np.arange(own_start, own_start + geo.lens[s])

    base_row = geo.layout_for_segment_order(range(k))  # prefix queries only
    layout_table = [base_row]
    layout_index = {base_row.tobytes(): 0}
    dynamic: dict[tuple[int, int], np.ndarray] = {}
    stats = CollisionStats()

    ids = np.asarray(inp.tokens(tuple(generated)), dtype=np.int64)
    x = model["token_embedding"][ids].copy()
    queries = [q for q in range(n) if segment_id[q] != PREFIX]

    for layer in range(cfg.n_layers):
        h = rms_norm_rows(x, model[f"layer{layer}.attn_norm"])
        q_proj = matmul(h, model[f"layer{layer}.wq"])
        k_proj = matmul(h, model[f"layer{layer}.wk"])
        v_proj = matmul(h, model[f"layer{layer}.wv"])
        attn_out = np.empty_like(x)
        for head in range(H):
            sl = slice(head * hd, (head + 1) * hd)
            qh = np.ascontiguousarray(q_proj[:, sl])
            kh = np.ascontiguousarray(k_proj[:, sl])
            vh = np.ascontiguousarray(v_proj[:, sl])
            per_query = np.zeros(n, dtype=np.int64)
            for q in queries:
                own = int(segment_id[q])
                cand = [t for t in range(k) if t != own] if own >= 0 else list(range(k))
                scores = {}
                for t in cand:
                    sc = _nopos_segment_score(qh[q], kh, seg_tokens[t], sqrt_hd, counter)
                    if score_precision == "bfloat16":
                        sc = round_to_bfloat16(sc)
                    scores[t] = sc
                stats.merge_event(list(scores.values()))
                if trace is not None:
                    trace[(layer, head, q)] = dict(scores)

                def cmp(a, b):
                    if counter is not None:
                        counter.comparisons += 1
                    ka, kb = (scores[a], a), (scores[b], b)
                    return -1 if ka < kb else (1 if ka > kb else 0)

                seg_order = sorted(cand, key=cmp_to_key(cmp))
                if own >= 0:
                    seg_order.append(own)
                row = geo.layout_for_segment_order(seg_order)
                key = row.tobytes()
                slot = layout_index.get(key)
                if slot is None:
                    slot = len(layout_table)
                    layout_index[key] = slot
                    layout_table.append(row)
                per_query[q] = slot
            dynamic[(layer, head)] = per_query

            layouts_so_far = np.stack(layout_table)
            ctx = build_head_context(layouts_so_far, visibility, per_query)
            q_rot = rotate_rows(qh, query_pos, cfg.rope_base)
            k_stack = np.stack(
                [rotate_rows(kh, layouts_so_far[li], cfg.rope_base) for li in ctx.layout_ids]
            )
            attn_out[:, sl] = numerics.attention_head(
                q_rot, k_stack, vh, ctx.slots, ctx.vis_flat, ctx.vis_off, hd
            )
        x = x + matmul(attn_out, model[f"layer{layer}.wo"])
        h2 = rms_norm_rows(x, model[f"layer{layer}.mlp_norm"])
        g = matmul(h2, model[f"layer{layer}.gate"])
        u = matmul(h2, model[f"layer{layer}.up"])
        x = x + matmul(_silu(g) * u, model[f"layer{layer}.down"])

    plan = AttentionPlan(
        kind="pine",
        segment_id=segment_id,
        query_pos=query_pos,
        layouts=np.stack(layout_table),
        query_layout=np.zeros(n, dtype=np.int64),
        visibility=visibility,
        dynamic_layout=dynamic,
    )
    return plan, stats


def pine_plan(model: ToyLM, inp: SegmentedInput, generated: tuple[int, ...] = (),
              score_precision: str = "float64",
              counter: OpCounter | None = None) -> tuple[AttentionPlan, CollisionStats]:
    """Build the query-dependent PINE plan; returns the plan and its tie stats."""
    return _pine_pass(model, inp, tuple(generated), score_precision, counter, trace=None)


def pine_scores(model: ToyLM, inp: SegmentedInput, query: int, layer: int,
                head: int) -> NoPoSScore:
    """NoPoS relevance of every other key segment for one (layer, head, query)."""
    geo = _Geometry(inp, 0)
    if not (0 <= query < geo.n):
        raise DomainError(f"query index {query} out of range")
    if geo.segment_ids()[query] == PREFIX:
        raise DomainError("prefix queries do not participate in reordering")
    trace: dict = {}
    _pine_pass(model, inp, (), "float64", None, trace)
    return NoPoSScore(layer=layer, head=head, query=query, scores=trace[(layer, head, query)])
