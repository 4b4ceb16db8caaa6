"""Byte-level tokenization and the prefix / parallel-segments / suffix input model."""

import json
from dataclasses import dataclass, field

from .errors import DomainError, PromptFormatError
from .rng import Xorshift64Star

BOS = 256
EOS = 257
PAD = 258
VOCAB_MIN = 259  # 256 bytes + 3 specials


class Tokenizer:
    """Byte-level tokenizer: ids 0-255 are raw bytes, 256-258 are specials.

    ``encode`` never emits specials; ``decode`` drops them, so
    decode(encode(s)) == s for every byte string.
    """

    def encode(self, text) -> list[int]:
        if isinstance(text, str):
            text = text.encode("utf-8")
        return list(text)

    def decode(self, ids) -> bytes:
        out = bytearray()
        for i in ids:
            i = int(i)
            if i >= VOCAB_MIN or i < 0:
                raise DomainError(f"token id {i} outside vocabulary [0, {VOCAB_MIN})")
            if i < 256:
                out.append(i)
        return bytes(out)


_TOKENIZER = Tokenizer()


def encode(text) -> list[int]:
    return _TOKENIZER.encode(text)


def decode(ids) -> bytes:
    return _TOKENIZER.decode(ids)


@dataclass(frozen=True)
class SegmentedInput:
    """prefix / ordered parallel segments / suffix, all as token-id tuples.

    The parallel segments are the order-interchangeable region. Total-length
    versus max_position is enforced where a model config is in scope (at
    forward time), not here.
    """

    prefix: tuple[int, ...]
    segments: tuple[tuple[int, ...], ...]
    suffix: tuple[int, ...]

    def __post_init__(self):
        if len(self.segments) == 0:
            raise DomainError("an input needs at least one segment")
        if any(len(s) == 0 for s in self.segments):
            raise DomainError("segments must be non-empty")

    @property
    def k(self) -> int:
        return len(self.segments)

    def tokens(self, generated: tuple[int, ...] = ()) -> list[int]:
        out = list(self.prefix)
        for seg in self.segments:
            out.extend(seg)
        out.extend(self.suffix)
        out.extend(generated)
        return out

    def with_segments(self, segments) -> "SegmentedInput":
        return SegmentedInput(self.prefix, tuple(tuple(s) for s in segments), self.suffix)


def make_input(prefix, segments, suffix) -> SegmentedInput:
    return SegmentedInput(
        tuple(int(t) for t in prefix),
        tuple(tuple(int(t) for t in seg) for seg in segments),
        tuple(int(t) for t in suffix),
    )


@dataclass(frozen=True)
class PromptFile:
    """A parsed prompt file: the input plus optional evaluation extras.

    ``candidates`` are single-token answer ids, ``scores`` are external
    per-segment relevance scores (stand-ins for a reranker), ``gold`` is the
    single-token gold answer used by routing evaluation.
    """

    input: SegmentedInput
    candidates: tuple[int, ...] | None = None
    scores: tuple[float, ...] | None = None
    gold: int | None = None
    raw: dict = field(default_factory=dict, compare=False)


def _require(obj: dict, name: str, typ, optional: bool = False):
    if name not in obj:
        if optional:
            return None
        raise PromptFormatError(name, "missing")
    val = obj[name]
    if not isinstance(val, typ):
        raise PromptFormatError(name, f"expected {typ.__name__}, got {type(val).__name__}")
    return val


def parse_prompt(obj: dict) -> PromptFile:
    """Parse a prompt JSON object; errors name the offending field."""
    prefix = _require(obj, "prefix", str)
    segments = _require(obj, "segments", list)
    suffix = _require(obj, "suffix", str)
    if len(segments) == 0:
        raise PromptFormatError("segments", "must be a non-empty list")
    seg_tokens = []
    for i, seg in enumerate(segments):
        if not isinstance(seg, str):
            raise PromptFormatError("segments", f"segments[{i}] is not a string")
        toks = encode(seg)
        if not toks:
            raise PromptFormatError("segments", f"segments[{i}] is empty")
        seg_tokens.append(toks)

    candidates = None
    cand_raw = _require(obj, "answer_candidates", list, optional=True)
    if cand_raw is not None:
        candidates = []
        for i, c in enumerate(cand_raw):
            if not isinstance(c, str):
                raise PromptFormatError("answer_candidates", f"entry {i} is not a string")
            toks = encode(c)
            if len(toks) != 1:
                raise PromptFormatError(
                    "answer_candidates", f"entry {i!r} must encode to exactly one token"
                )
            candidates.append(toks[0])
        if len(set(candidates)) != len(candidates):
            raise PromptFormatError("answer_candidates", "candidate tokens must be distinct")

    scores = None
    scores_raw = _require(obj, "segment_scores", list, optional=True)
    if scores_raw is not None:
        if len(scores_raw) != len(segments):
            raise PromptFormatError(
                "segment_scores",
                f"length {len(scores_raw)} does not match {len(segments)} segments",
            )
        if not all(isinstance(s, (int, float)) and not isinstance(s, bool) for s in scores_raw):
            raise PromptFormatError("segment_scores", "entries must be numbers")
        scores = tuple(float(s) for s in scores_raw)

    gold = None
    gold_raw = _require(obj, "gold_answer", str, optional=True)
    if gold_raw is not None:
        toks = encode(gold_raw)
        if len(toks) != 1:
            raise PromptFormatError("gold_answer", "must encode to exactly one token")
        gold = toks[0]
        if candidates is not None and gold not in candidates:
            raise PromptFormatError("gold_answer", "gold answer is not among the candidates")

    inp = make_input(encode(prefix), seg_tokens, encode(suffix))
    return PromptFile(inp, tuple(candidates) if candidates else None, scores, gold, dict(obj))


def parse_prompt_file(path) -> PromptFile:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as e:
            raise PromptFormatError("<json>", f"invalid JSON: {e}") from e
    if not isinstance(obj, dict):
        raise PromptFormatError("<root>", "prompt file must hold a JSON object")
    return parse_prompt(obj)


def serialize_prompt(prompt: PromptFile) -> str:
    """Inverse of parse for text fields; parse(serialize(p)) is a fixed point."""
    obj = {
        "prefix": decode(prompt.input.prefix).decode("utf-8"),
        "segments": [decode(s).decode("utf-8") for s in prompt.input.segments],
        "suffix": decode(prompt.input.suffix).decode("utf-8"),
    }
    if prompt.candidates is not None:
        obj["answer_candidates"] = [decode([c]).decode("utf-8") for c in prompt.candidates]
    if prompt.scores is not None:
        obj["segment_scores"] = list(prompt.scores)
    if prompt.gold is not None:
        obj["gold_answer"] = decode([prompt.gold]).decode("utf-8")
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def shuffle_permutation(k: int, seed: int) -> list[int]:
    """The Fisher-Yates permutation of range(k) produced by the documented PRNG."""
    return Xorshift64Star(seed).shuffled(list(range(k)))


def shuffle_segments(inp: SegmentedInput, seed: int) -> SegmentedInput:
    """Shuffle segments with the documented PRNG; prefix/suffix untouched."""
    perm = shuffle_permutation(inp.k, seed)
    return inp.with_segments([inp.segments[i] for i in perm])
