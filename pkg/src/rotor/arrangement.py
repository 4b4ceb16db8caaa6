"""Attention plans: positional-ID layouts plus visibility masks.

An AttentionPlan tells the engine, for every query token, which keys it may
attend to and which position id each token carries while doing so. Tokens
always keep their physical order; only the ids are reassigned.

The rotor plan derives all of its layouts from one content-determined
global ordering by circular assignment: for the query segment at global
rank r the key segments are arranged as

    rank r+1, ..., rank k-1, rank 0, ..., rank r

so the query's own segment sits last (highest segment ids) and the relative
circular order of segments is the same in every layout. Prefix, suffix and
generated queries share a single layout that arranges segments in plain
rank order.
"""

import numpy as np

from .errors import ShapeError
from .inputs import SegmentedInput
from .ordering import GlobalOrder

PREFIX = -1
SUFFIX = -2
GENERATED = -3

_REGION_NAMES = {PREFIX: "prefix", SUFFIX: "suffix", GENERATED: "generated"}


class HeadContext:
    """Kernel-ready view of a plan for one (layer, head).

    ``layout_ids[s]`` maps stack row s to a plan layout; ``slots[q]`` picks
    the stack row for query q; ``vis_flat[vis_off[q]:vis_off[q+1]]`` lists
    q's visible keys sorted by assigned position id (ties by physical index).
    """

    __slots__ = ("layout_ids", "slots", "vis_flat", "vis_off")

    def __init__(self, layout_ids, slots, vis_flat, vis_off):
        self.layout_ids = layout_ids
        self.slots = slots
        self.vis_flat = vis_flat
        self.vis_off = vis_off


class AttentionPlan:
    """Per-token regions, query positions, key layouts and visibility."""

    def __init__(self, kind, segment_id, query_pos, layouts, query_layout,
                 visibility, dynamic_layout=None):
        self.kind = kind
        self.segment_id = segment_id
        self.query_pos = query_pos
        self.layouts = layouts  # (L, n) int64, rows deduplicated
        self.query_layout = query_layout  # (n,) layout index per query
        self.visibility = visibility  # (n, n) bool
        self.dynamic_layout = dynamic_layout  # {(layer, head): (n,) layout index}
        self.token_count = int(segment_id.shape[0])
        self._ctx_cache: dict = {}

    @property
    def max_position_used(self) -> int:
        return max(int(self.layouts.max()), int(self.query_pos.max()))

    def layout_index_for(self, layer: int, head: int) -> np.ndarray:
        if self.dynamic_layout is not None and (layer, head) in self.dynamic_layout:
            return self.dynamic_layout[(layer, head)]
        return self.query_layout

    def head_context(self, layer: int, head: int) -> HeadContext:
        per_query = self.layout_index_for(layer, head)
        key = per_query.tobytes()
        ctx = self._ctx_cache.get(key)
        if ctx is None:
            ctx = build_head_context(self.layouts, self.visibility, per_query)
            self._ctx_cache[key] = ctx
        return ctx

    def region_names(self) -> list[str]:
        return [
            _REGION_NAMES.get(int(s), f"segment:{int(s)}") for s in self.segment_id
        ]

    def equals(self, other: "AttentionPlan") -> bool:
        """Structural equality ignoring the plan-kind tag."""
        static = (
            self.token_count == other.token_count
            and np.array_equal(self.segment_id, other.segment_id)
            and np.array_equal(self.query_pos, other.query_pos)
            and np.array_equal(self.layouts, other.layouts)
            and np.array_equal(self.query_layout, other.query_layout)
            and np.array_equal(self.visibility, other.visibility)
        )
        if not static:
            return False
        a, b = self.dynamic_layout or {}, other.dynamic_layout or {}
        if set(a) != set(b):
            return False
        return all(np.array_equal(a[k], b[k]) for k in a)

    def to_dump_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "token_count": self.token_count,
            "regions": self.region_names(),
            "query_positions": self.query_pos.tolist(),
            "layouts": self.layouts.tolist(),
            "query_layout": self.query_layout.tolist(),
            "visibility_rle": [_rle(row) for row in self.visibility],
        }
        if self.dynamic_layout is not None:
            out["dynamic_layouts"] = {
                f"{layer},{head}": v.tolist()
                for (layer, head), v in sorted(self.dynamic_layout.items())
            }
        return out


def build_head_context(layouts: np.ndarray, visibility: np.ndarray,
                       per_query: np.ndarray) -> HeadContext:
    """Pack per-query visible keys, sorted into canonical reduction order.

    The canonical order for a query is ascending assigned position id under
    its layout, with physical index breaking the (rare, PCW-only) id ties.
    """
    n = visibility.shape[0]
    used = sorted(set(int(v) for v in per_query))
    remap = {li: s for s, li in enumerate(used)}
    slots = np.array([remap[int(v)] for v in per_query], dtype=np.int64)
    flat_parts = []
    off = np.zeros(n + 1, dtype=np.int64)
    for q in range(n):
        js = np.nonzero(visibility[q])[0]
        pos = layouts[per_query[q]][js]
        order = np.lexsort((js, pos))
        flat_parts.append(js[order])
        off[q + 1] = off[q] + len(js)
    flat = np.concatenate(flat_parts) if flat_parts else np.zeros(0, dtype=np.int64)
    return HeadContext(tuple(used), slots, flat.astype(np.int64), off)


def _rle(row: np.ndarray) -> list[list[int]]:
    """Runs of visible keys as [start, length] pairs."""
    runs = []
    start = None
    for j, v in enumerate(row.tolist() + [False]):
        if v and start is None:
            start = j
        elif not v and start is not None:
            runs.append([start, j - start])
            start = None
    return runs


def distinct_layout_count(plan: AttentionPlan) -> int:
    """Number of distinct key layouts materialized by the plan."""
    return len({row.tobytes() for row in plan.layouts})


# ---------------------------------------------------------------------------
# shared structure helpers
# ---------------------------------------------------------------------------


class _Geometry:
    """Physical index ranges of an input: prefix | segments | suffix | generated."""

    def __init__(self, inp: SegmentedInput, n_generated: int):
        self.p = len(inp.prefix)
        self.lens = [len(s) for s in inp.segments]
        self.total = sum(self.lens)
        self.s = len(inp.suffix)
        self.g = n_generated
        self.n = self.p + self.total + self.s + self.g
        self.seg_start = []
        pos = self.p
        for ln in self.lens:
            self.seg_start.append(pos)
            pos += ln
        self.suffix_start = self.p + self.total

    def segment_ids(self) -> np.ndarray:
        out = np.empty(self.n, dtype=np.int64)
        out[: self.p] = PREFIX
        for i, ln in enumerate(self.lens):
            out[self.seg_start[i]: self.seg_start[i] + ln] = i
        out[self.suffix_start: self.suffix_start + self.s] = SUFFIX
        out[self.suffix_start + self.s:] = GENERATED
        return out

    def layout_for_segment_order(self, seg_order) -> np.ndarray:
        """Identity outside the segment range; blocks assigned in seg_order."""
        row = np.arange(self.n, dtype=np.int64)
        pos = self.p
        for seg in seg_order:
            ln = self.lens[seg]
            row[self.seg_start[seg]: self.seg_start[seg] + ln] = np.arange(pos, pos + ln)
            pos += ln
        return row


def _dedup_rows(rows: list[np.ndarray]) -> tuple[np.ndarray, list[int]]:
    """Unique rows preserving first occurrence; returns (table, index per row)."""
    table = []
    index = {}
    mapping = []
    for row in rows:
        key = row.tobytes()
        if key not in index:
            index[key] = len(table)
            table.append(row)
        mapping.append(index[key])
    return np.stack(table), mapping


def _bidirectional_visibility(geo: _Geometry) -> np.ndarray:
    """Segment queries see prefix, all other segments, own segment causally;
    prefix/suffix/generated queries are plain causal."""
    vis = np.zeros((geo.n, geo.n), dtype=bool)
    for i in range(geo.p):
        vis[i, : i + 1] = True
    for s, start in enumerate(geo.seg_start):
        for o in range(geo.lens[s]):
            q = start + o
            vis[q, : geo.p] = True
            vis[q, geo.p: geo.suffix_start] = True
            # own segment stays causal: hide later own-segment tokens
            vis[q, start + o + 1: start + geo.lens[s]] = False
    for i in range(geo.suffix_start, geo.n):
        vis[i, : i + 1] = True
    return vis


# ---------------------------------------------------------------------------
# plan constructors
# ---------------------------------------------------------------------------


def original_plan(inp: SegmentedInput, n_generated: int = 0) -> AttentionPlan:
    """Plain causal plan: identity position ramp, strict causal visibility."""
    geo = _Geometry(inp, n_generated)
    n = geo.n
    layouts = np.arange(n, dtype=np.int64)[None, :]
    vis = np.tril(np.ones((n, n), dtype=bool))
    return AttentionPlan(
        kind="original",
        segment_id=geo.segment_ids(),
        query_pos=np.arange(n, dtype=np.int64),
        layouts=layouts,
        query_layout=np.zeros(n, dtype=np.int64),
        visibility=vis,
    )


def rotor_plan(inp: SegmentedInput, order: GlobalOrder, n_generated: int = 0) -> AttentionPlan:
    """Circular assignment of a global ordering (see module docstring)."""
    if order.k != inp.k:
        raise ShapeError(f"order over {order.k} segments, input has {inp.k}")
    geo = _Geometry(inp, n_generated)
    k = inp.k
    ranks = list(order.ranks)

    rows = []
    for r in range(k):
        rotation = ranks[r + 1:] + ranks[: r + 1]  # own segment last
        rows.append(geo.layout_for_segment_order(rotation))
    rows.append(geo.layout_for_segment_order(ranks))  # prefix/suffix/generated
    table, mapping = _dedup_rows(rows)

    query_layout = np.empty(geo.n, dtype=np.int64)
    query_layout[:] = mapping[k]  # shared layout
    rank_of = {seg: r for r, seg in enumerate(ranks)}
    for s, start in enumerate(geo.seg_start):
        query_layout[start: start + geo.lens[s]] = mapping[rank_of[s]]

    query_pos = np.arange(geo.n, dtype=np.int64)
    for s, start in enumerate(geo.seg_start):
        own_start = geo.p + geo.total - geo.lens[s]
        query_pos[start: start + geo.lens[s]] = np.arange(own_start, own_start + geo.lens[s])

    return AttentionPlan(
        kind="rotor",
        segment_id=geo.segment_ids(),
        query_pos=query_pos,
        layouts=table,
        query_layout=query_layout,
        visibility=_bidirectional_visibility(geo),
    )
