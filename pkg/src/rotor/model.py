"""Toy decoder-only transformer with RoPE whose attention consumes an AttentionPlan.

Architecture: pre-norm RMSNorm, multi-head attention with rotary position
embeddings applied at plan-assigned ids, SwiGLU MLP (gate/up/down with
hidden width 2*d_model), untied output head. Everything is float64 and the
forward pass is a pure function of (weights, tokens, plan).
"""

import json
import math
import os
from dataclasses import asdict, dataclass

import numpy as np

from . import numerics
from .arrangement import AttentionPlan
from .errors import ConfigError, DomainError, ShapeError, WeightFormatError
from .inputs import VOCAB_MIN, SegmentedInput
from .numerics import OpCounter, matmul, rms_norm_rows, rotate_rows, softmax
from .rng import Xorshift64Star

WEIGHT_SCHEMA = "rotor-weights/1"
DEFAULT_MAX_NEW_TOKENS = 32
INIT_STDEV = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int = 260
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 4
    head_dim: int = 16
    max_position: int = 2048
    rope_base: float = 10000.0

    def __post_init__(self):
        if self.vocab_size < VOCAB_MIN:
            raise ConfigError(f"vocab_size must be >= {VOCAB_MIN}, got {self.vocab_size}")
        if self.head_dim <= 0 or self.head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be even and positive, got {self.head_dim}")
        if self.d_model != self.n_heads * self.head_dim:
            raise ConfigError(
                f"d_model {self.d_model} != n_heads {self.n_heads} * head_dim {self.head_dim}"
            )
        if self.n_layers < 1 or self.max_position < 1:
            raise ConfigError("n_layers and max_position must be positive")

    @property
    def d_ff(self) -> int:
        return 2 * self.d_model


def weight_shapes(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Tensor names and shapes in their canonical (fill and file) order."""
    d, ff, v = config.d_model, config.d_ff, config.vocab_size
    shapes: list[tuple[str, tuple[int, ...]]] = [("token_embedding", (v, d))]
    for i in range(config.n_layers):
        shapes += [
            (f"layer{i}.attn_norm", (d,)),
            (f"layer{i}.wq", (d, d)),
            (f"layer{i}.wk", (d, d)),
            (f"layer{i}.wv", (d, d)),
            (f"layer{i}.wo", (d, d)),
            (f"layer{i}.mlp_norm", (d,)),
            (f"layer{i}.gate", (d, ff)),
            (f"layer{i}.up", (d, ff)),
            (f"layer{i}.down", (ff, d)),
        ]
    shapes += [("final_norm", (d,)), ("output_head", (d, v))]
    return shapes


class ToyLM:
    """Immutable-by-convention weight container."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = dict(weight_shapes(config))
        if set(tensors) != set(expected):
            missing = set(expected) - set(tensors)
            extra = set(tensors) - set(expected)
            raise ShapeError(f"tensor set mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for name, arr in tensors.items():
            if arr.shape != expected[name]:
                raise ShapeError(f"{name}: shape {arr.shape} != expected {expected[name]}")
            if not np.all(np.isfinite(arr)):
                raise DomainError(f"{name}: non-finite entries")
        self.config = config
        self.tensors = {k: np.asarray(v, dtype=np.float64) for k, v in tensors.items()}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]


def init_seeded(config: ModelConfig, seed: int) -> ToyLM:
    """Seeded init: norm gains are ones, everything else is N(0, 0.02).

    Normals are drawn from the documented xorshift64* stream in canonical
    tensor order, row-major within each tensor.
    """
    rng = Xorshift64Star(seed)
    tensors = {}
    for name, shape in weight_shapes(config):
        if name.endswith("_norm"):
            tensors[name] = np.ones(shape)
        else:
            flat = np.array([rng.normal(0.0, INIT_STDEV) for _ in range(int(np.prod(shape)))])
            tensors[name] = flat.reshape(shape)
    return ToyLM(config, tensors)


# ---------------------------------------------------------------------------
# weight file pair: JSON manifest + raw little-endian float64 payload
# ---------------------------------------------------------------------------


def save_weights(model: ToyLM, path) -> None:
    """Write ``path`` (manifest JSON) and its sibling ``.bin`` payload."""
    path = str(path)
    payload_path = os.path.splitext(path)[0] + ".bin"
    manifest = {
        "schema": WEIGHT_SCHEMA,
        "dtype": "<f8",
        "payload": os.path.basename(payload_path),
        "config": asdict(model.config),
        "tensors": {},
    }
    blob = bytearray()
    for name, _ in weight_shapes(model.config):
        arr = model[name]
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        manifest["tensors"][name] = {
            "shape": list(arr.shape),
            "offset": len(blob),
            "length": len(raw),
        }
        blob.extend(raw)
    with open(payload_path, "wb") as fh:
        fh.write(bytes(blob))
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_weights(path) -> ToyLM:
    """Bit-exact inverse of save_weights."""
    path = str(path)
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        manifest = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        offset = getattr(e, "pos", getattr(e, "start", 0))
        raise WeightFormatError(f"manifest is not valid JSON: {e}", offset) from e
    for field in ("schema", "dtype", "payload", "config", "tensors"):
        if field not in manifest:
            raise WeightFormatError(f"manifest missing field {field!r}", 0)
    if manifest["schema"] != WEIGHT_SCHEMA:
        raise WeightFormatError(f"unsupported schema {manifest['schema']!r}", 0)
    if manifest["dtype"] != "<f8":
        raise WeightFormatError(f"unsupported dtype {manifest['dtype']!r}", 0)
    try:
        config = ModelConfig(**manifest["config"])
    except (TypeError, ConfigError) as e:
        raise WeightFormatError(f"bad config: {e}", 0) from e
    payload_path = os.path.join(os.path.dirname(path), manifest["payload"])
    with open(payload_path, "rb") as fh:
        blob = fh.read()
    tensors = {}
    for name, shape in weight_shapes(config):
        meta = manifest["tensors"].get(name)
        if meta is None:
            raise WeightFormatError(f"manifest missing tensor {name!r}", 0)
        offset, length = int(meta["offset"]), int(meta["length"])
        want = int(np.prod(shape)) * 8
        if list(meta["shape"]) != list(shape):
            raise WeightFormatError(f"tensor {name!r} shape {meta['shape']} != {list(shape)}", offset)
        if length != want:
            raise WeightFormatError(f"tensor {name!r} length {length} != {want}", offset)
        if offset + length > len(blob):
            raise WeightFormatError(
                f"payload truncated for tensor {name!r}: need {offset + length}, have {len(blob)}",
                len(blob),
            )
        arr = np.frombuffer(blob, dtype="<f8", count=length // 8, offset=offset)
        tensors[name] = arr.reshape(shape).astype(np.float64)
    return ToyLM(config, tensors)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


@dataclass
class ForwardResult:
    """logits per token position, plus optional inspection hooks.

    ``pre_attn_hiddens[layer]`` holds the normed hidden states feeding that
    layer's q/k/v projections (the states that relevance scores without
    positional embeddings are computed from). ``attn_probs[(layer, head)]``
    is the dense (n, n) attention probability matrix.
    """

    logits: np.ndarray
    pre_attn_hiddens: list[np.ndarray] | None = None
    attn_probs: dict[tuple[int, int], np.ndarray] | None = None


def _silu(x: np.ndarray) -> np.ndarray:
    return x / (1.0 + np.exp(-x))


def forward(model: ToyLM, tokens, plan: AttentionPlan, counter: OpCounter | None = None,
            collect_hiddens: bool = False, collect_attention: bool = False) -> ForwardResult:
    """Run the decoder under ``plan``; pure function of (weights, tokens, plan)."""
    cfg = model.config
    ids = np.asarray(list(tokens), dtype=np.int64)
    n = ids.shape[0]
    if n == 0:
        raise DomainError("forward needs at least one token")
    if n != plan.token_count:
        raise ShapeError(f"{n} tokens but plan covers {plan.token_count}")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise DomainError("token id outside vocabulary")
    if plan.max_position_used >= cfg.max_position:
        raise ConfigError(
            f"plan uses position {plan.max_position_used} >= max_position {cfg.max_position}"
        )

    hd, H = cfg.head_dim, cfg.n_heads
    x = model["token_embedding"][ids].copy()
    hiddens = [] if collect_hiddens else None
    probs = {} if collect_attention else None

    for layer in range(cfg.n_layers):
        h = rms_norm_rows(x, model[f"layer{layer}.attn_norm"])
        if hiddens is not None:
            hiddens.append(h.copy())
        q = matmul(h, model[f"layer{layer}.wq"], counter)
        k = matmul(h, model[f"layer{layer}.wk"], counter)
        v = matmul(h, model[f"layer{layer}.wv"], counter)
        attn_out = np.empty_like(x)
        for head in range(H):
            sl = slice(head * hd, (head + 1) * hd)
            qh = np.ascontiguousarray(q[:, sl])
            kh = np.ascontiguousarray(k[:, sl])
            vh = np.ascontiguousarray(v[:, sl])
            ctx = plan.head_context(layer, head)
            q_rot = rotate_rows(qh, plan.query_pos, cfg.rope_base)
            k_stack = np.stack(
                [rotate_rows(kh, plan.layouts[li], cfg.rope_base) for li in ctx.layout_ids]
            )
            probs_out = None
            if probs is not None:
                probs_out = np.zeros((n, n))
                probs[(layer, head)] = probs_out
            attn_out[:, sl] = numerics.attention_head(
                q_rot, k_stack, vh, ctx.slots, ctx.vis_flat, ctx.vis_off, hd,
                counter=counter, probs_out=probs_out,
            )
        x = x + matmul(attn_out, model[f"layer{layer}.wo"], counter)
        h2 = rms_norm_rows(x, model[f"layer{layer}.mlp_norm"])
        g = matmul(h2, model[f"layer{layer}.gate"], counter)
        u = matmul(h2, model[f"layer{layer}.up"], counter)
        x = x + matmul(_silu(g) * u, model[f"layer{layer}.down"], counter)

    h = rms_norm_rows(x, model["final_norm"])
    logits = matmul(h, model["output_head"], counter)
    return ForwardResult(logits=logits, pre_attn_hiddens=hiddens, attn_probs=probs)


# ---------------------------------------------------------------------------
# decoding & evaluation
# ---------------------------------------------------------------------------


def _argmax_lowest(row: np.ndarray) -> int:
    """argmax with ties broken toward the lowest token id."""
    return int(np.argmax(row))


def greedy_decode(model: ToyLM, inp: SegmentedInput, plan_builder,
                  max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS) -> list[int]:
    """Append argmax tokens one at a time; generated tokens extend the suffix.

    ``plan_builder(input, generated_tokens)`` must return a plan covering the
    input plus the already-generated tokens.
    """
    if max_new_tokens < 1:
        raise DomainError("max_new_tokens must be >= 1")
    generated: list[int] = []
    for _ in range(max_new_tokens):
        plan = plan_builder(inp, tuple(generated))
        result = forward(model, inp.tokens(tuple(generated)), plan)
        generated.append(_argmax_lowest(result.logits[-1]))
    return generated


def answer_token_distribution(model: ToyLM, inp: SegmentedInput, plan_builder,
                              candidate_tokens) -> tuple[np.ndarray, int]:
    """Softmax over the candidates' final-position logits.

    Returns (probabilities aligned with candidate_tokens, winning token);
    exact probability ties go to the lowest token id.
    """
    cands = [int(c) for c in candidate_tokens]
    if len(cands) == 0:
        raise DomainError("candidate list is empty")
    if len(set(cands)) != len(cands):
        raise DomainError("candidate tokens must be distinct")
    plan = plan_builder(inp, ())
    result = forward(model, inp.tokens(), plan)
    row = result.logits[-1]
    probs = softmax([row[c] for c in cands])
    best = max(range(len(cands)), key=lambda i: (probs[i], -cands[i]))
    return probs, cands[best]


def perplexity(model: ToyLM, inp: SegmentedInput, plan_builder, continuation) -> float:
    """exp(mean NLL) of the continuation under teacher forcing."""
    cont = [int(t) for t in continuation]
    if len(cont) == 0:
        raise DomainError("continuation is empty")
    plan = plan_builder(inp, tuple(cont))
    tokens = inp.tokens(tuple(cont))
    result = forward(model, tokens, plan)
    base = len(tokens) - len(cont)
    nll = 0.0
    for i, tok in enumerate(cont):
        probs = softmax(result.logits[base + i - 1])
        nll += -math.log(probs[tok])
    return math.exp(nll / len(cont))
