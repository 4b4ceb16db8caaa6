"""Query-agnostic global segment orderings: lexical, reversed, frequency, score.

Every strategy is content-determined: recomputing the order on any
permutation of the same segments (with paired scores) yields the same
sequence of segment contents by rank. Ties are therefore never broken by
anything that depends on arrival order, except *within* groups of fully
identical content where the choice is unobservable.
"""

from dataclasses import dataclass
from functools import cmp_to_key

from .errors import DomainError
from .numerics import OpCounter

STRATEGIES = ("lexical", "rev-lexical", "freq", "score")


@dataclass(frozen=True)
class GlobalOrder:
    """ranks[r] = index of the segment placed at global rank r."""

    ranks: tuple[int, ...]
    strategy: str
    tie_report: tuple[tuple[int, ...], ...]

    @property
    def k(self) -> int:
        return len(self.ranks)


def _seq_cmp(a, b, counter: OpCounter | None) -> int:
    """Lexicographic token-sequence compare counting element comparisons."""
    for x, y in zip(a, b):
        if counter is not None:
            counter.comparisons += 1
        if x != y:
            return -1 if x < y else 1
    if len(a) == len(b):
        return 0
    return -1 if len(a) < len(b) else 1


def _sorted_ranks(segments, key_seqs, counter) -> tuple[list[int], list[list[int]]]:
    """Sort indices by key sequence; ties (equal keys) break by index ascending."""
    idx = list(range(len(segments)))

    def cmp(i, j):
        c = _seq_cmp(key_seqs[i], key_seqs[j], counter)
        if c != 0:
            return c
        return -1 if i < j else (1 if i > j else 0)

    ranks = sorted(idx, key=cmp_to_key(cmp))
    groups = []
    start = 0
    for pos in range(1, len(ranks) + 1):
        if pos == len(ranks) or _seq_cmp(key_seqs[ranks[pos]], key_seqs[ranks[start]], None) != 0:
            if pos - start > 1:
                groups.append(sorted(ranks[start:pos]))
            start = pos
    return ranks, groups


def _check_nonempty(segments):
    if len(segments) == 0:
        raise DomainError("ordering requires at least one segment")


def lexical_order(segments, counter: OpCounter | None = None) -> GlobalOrder:
    """Sort by token-id sequences; shorter prefix precedes longer."""
    _check_nonempty(segments)
    seqs = [tuple(s) for s in segments]
    ranks, groups = _sorted_ranks(seqs, seqs, counter)
    return GlobalOrder(tuple(ranks), "lexical", tuple(tuple(g) for g in groups))


def reversed_lexical_order(segments, counter: OpCounter | None = None) -> GlobalOrder:
    """Exact reversal of the lexical order."""
    base = lexical_order(segments, counter)
    return GlobalOrder(tuple(reversed(base.ranks)), "rev-lexical", base.tie_report)


def frequency_order(segments, counter: OpCounter | None = None) -> GlobalOrder:
    """Lexical sort after remapping ids by frequency over this input.

    Token ids are remapped to their rank under (frequency descending,
    original id ascending), so the most frequent token becomes 0; the
    remapped sequences are then sorted lexically. The remap is a bijection
    on the tokens present, so ties coincide with identical segments.
    """
    _check_nonempty(segments)
    seqs = [tuple(s) for s in segments]
    freq: dict[int, int] = {}
    for seq in seqs:
        for t in seq:
            freq[t] = freq.get(t, 0) + 1

    def freq_cmp(a, b):
        if counter is not None:
            counter.comparisons += 1
        ka, kb = (-freq[a], a), (-freq[b], b)
        return -1 if ka < kb else (1 if ka > kb else 0)

    by_freq = sorted(freq, key=cmp_to_key(freq_cmp))
    remap = {t: r for r, t in enumerate(by_freq)}
    remapped = [tuple(remap[t] for t in seq) for seq in seqs]
    ranks, groups = _sorted_ranks(seqs, remapped, counter)
    return GlobalOrder(tuple(ranks), "freq", tuple(tuple(g) for g in groups))


def score_order(segments, scores, counter: OpCounter | None = None) -> GlobalOrder:
    """Sort by external score descending; exact ties fall back to lexical.

    Tie groups report segments with exactly equal scores. Within a tie the
    order is decided by segment content (never original index), keeping the
    result content-determined.
    """
    _check_nonempty(segments)
    if len(scores) != len(segments):
        raise DomainError(f"got {len(scores)} scores for {len(segments)} segments")
    seqs = [tuple(s) for s in segments]
    vals = [float(s) for s in scores]

    def cmp(i, j):
        if counter is not None:
            counter.comparisons += 1
        if vals[i] != vals[j]:
            return -1 if vals[i] > vals[j] else 1
        c = _seq_cmp(seqs[i], seqs[j], counter)
        if c != 0:
            return c
        return -1 if i < j else (1 if i > j else 0)

    ranks = sorted(range(len(seqs)), key=cmp_to_key(cmp))
    groups = []
    start = 0
    for pos in range(1, len(ranks) + 1):
        if pos == len(ranks) or vals[ranks[pos]] != vals[ranks[start]]:
            if pos - start > 1:
                groups.append(sorted(ranks[start:pos]))
            start = pos
    return GlobalOrder(tuple(ranks), "score", tuple(tuple(g) for g in groups))


def compute_order(strategy: str, segments, scores=None,
                  counter: OpCounter | None = None) -> GlobalOrder:
    """Dispatch by strategy name (the --order CLI flag values)."""
    if strategy == "lexical":
        return lexical_order(segments, counter)
    if strategy == "rev-lexical":
        return reversed_lexical_order(segments, counter)
    if strategy == "freq":
        return frequency_order(segments, counter)
    if strategy == "score":
        if scores is None:
            raise DomainError("score ordering requires segment_scores")
        return score_order(segments, scores, counter)
    raise DomainError(f"unknown ordering strategy {strategy!r}")
