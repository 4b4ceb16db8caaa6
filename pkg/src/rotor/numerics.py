"""Deterministic numeric kernels: matmul, softmax, RoPE rotation, RMS norm.

Every reduction in this module runs in a documented, fixed order so that a
whole forward pass is a pure function of its inputs down to the last bit:

  * ``matmul`` accumulates over the shared dimension in ascending index
    order (exactly the naive triple loop, never BLAS).
  * ``softmax`` subtracts the max and sums the exponentials following an
    explicit ``order`` over the inputs; the default order is ascending.
  * RoPE cos/sin tables are built once in numpy and shared by every code
    path, so no kernel evaluates a transcendental on its own.

When numba is importable the hot loops run as jitted strict-IEEE machine
code; the pure numpy/Python fallbacks perform the identical sequence of
rounded operations, so both paths produce the same bits.
"""

import math

import numpy as np

from .errors import ConfigError, DomainError, ShapeError

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def deco(f):
            return f

        return deco


DEFAULT_ROPE_BASE = 10000.0


class OpCounter:
    """Per-forward-call operation counters (no global mutable state).

    attention_multiplies: q.k score and prob*value multiplies over visible pairs
    extra_multiplies:     plan-construction multiplies (PINE NoPoS dots)
    comparisons:          plan-construction comparison work (sorting)
    matmul_multiplies:    projection/MLP multiplies (informational)
    """

    __slots__ = ("attention_multiplies", "extra_multiplies", "comparisons",
                 "matmul_multiplies")

    def __init__(self):
        self.attention_multiplies = 0
        self.extra_multiplies = 0
        self.comparisons = 0
        self.matmul_multiplies = 0


# ---------------------------------------------------------------------------
# matmul
# ---------------------------------------------------------------------------


@njit(cache=True)
def _matmul_jit(a, b):  # pragma: no cover - compiled
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for t in range(kk):
                acc += a[i, t] * b[t, j]
            out[i, j] = acc
    return out


def _matmul_fallback(a, b):
    # outer-product accumulation: same rounding sequence as the triple loop
    m, kk = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for t in range(kk):
        out += np.outer(a[:, t], b[t])
    return out


def as_matrix(x) -> np.ndarray:
    """Validate/convert to a finite 2-D float64 array."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise DomainError("matrix entries must be finite")
    return arr


def matmul(a, b, counter: OpCounter | None = None) -> np.ndarray:
    """Matrix product with ascending-index reduction over the shared dim."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if counter is not None:
        counter.matmul_multiplies += a.shape[0] * a.shape[1] * b.shape[1]
    if HAS_NUMBA:
        return _matmul_jit(np.ascontiguousarray(a), np.ascontiguousarray(b))
    return _matmul_fallback(a, b)


# ---------------------------------------------------------------------------
# softmax with explicit reduction order
# ---------------------------------------------------------------------------


def softmax(scores, order=None) -> np.ndarray:
    """Numerically stable softmax whose reductions follow ``order``.

    ``order`` must be a permutation of the score indices; both the running
    max and the denominator sum are left folds over the scores visited in
    that order. The output is aligned with the input positions. Default
    order is ascending index.
    """
    vals = [float(v) for v in scores]
    n = len(vals)
    if n == 0:
        raise DomainError("softmax of an empty sequence")
    if order is None:
        order = range(n)
    idx = [int(i) for i in order]
    if sorted(idx) != list(range(n)):
        raise DomainError("order must be a permutation of the score indices")
    m = vals[idx[0]]
    for i in idx[1:]:
        if vals[i] > m:
            m = vals[i]
    exps = [math.exp(v - m) for v in vals]
    den = 0.0
    for i in idx:
        den += exps[i]
    return np.array([e / den for e in exps])


# ---------------------------------------------------------------------------
# rotary position embedding
# ---------------------------------------------------------------------------


class RotationSpec:
    """Rotation parameters: even head_dim, positive base, position id.

    The cap ``position_id < max_position`` is enforced by the model config
    at the call site, not here.
    """

    def __init__(self, head_dim: int, position_id: int, base: float = DEFAULT_ROPE_BASE):
        if head_dim <= 0 or head_dim % 2 != 0:
            raise ConfigError(f"head_dim must be a positive even count, got {head_dim}")
        if base <= 0.0:
            raise ConfigError(f"rope base must be positive, got {base}")
        if position_id < 0:
            raise DomainError(f"position_id must be non-negative, got {position_id}")
        self.head_dim = head_dim
        self.position_id = position_id
        self.base = base


_ROPE_TABLES: dict[tuple[int, float], tuple[np.ndarray, np.ndarray]] = {}


def _rope_table(head_dim: int, base: float, max_pos: int):
    """cos/sin tables of shape (>=max_pos+1, head_dim/2); grown on demand.

    Angles are position * base**(-2i/head_dim). The table is the single
    source of trig values for every rotation path.
    """
    key = (head_dim, float(base))
    cos, sin = _ROPE_TABLES.get(key, (None, None))
    if cos is None or cos.shape[0] <= max_pos:
        size = max(max_pos + 1, 256)
        inv_freq = base ** (-2.0 * np.arange(head_dim // 2) / head_dim)
        angles = np.arange(size)[:, None] * inv_freq[None, :]
        cos, sin = np.cos(angles), np.sin(angles)
        _ROPE_TABLES[key] = (cos, sin)
    return cos, sin


def rope_rotate(vector, spec: RotationSpec) -> np.ndarray:
    """Rotate consecutive pairs (2i, 2i+1) by position_id * base^(-2i/d)."""
    v = np.asarray(vector, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != spec.head_dim:
        raise ShapeError(f"vector length {v.shape} does not match head_dim {spec.head_dim}")
    cos, sin = _rope_table(spec.head_dim, spec.base, spec.position_id)
    c, s = cos[spec.position_id], sin[spec.position_id]
    x, y = v[0::2], v[1::2]
    out = np.empty_like(v)
    out[0::2] = x * c - y * s
    out[1::2] = x * s + y * c
    return out


def rotate_rows(mat: np.ndarray, positions: np.ndarray, base: float) -> np.ndarray:
    """Rotate every row of (n, head_dim) at its own position id (vectorized)."""
    head_dim = mat.shape[1]
    cos, sin = _rope_table(head_dim, base, int(positions.max()) if len(positions) else 0)
    c, s = cos[positions], sin[positions]
    x, y = mat[:, 0::2], mat[:, 1::2]
    out = np.empty_like(mat)
    out[:, 0::2] = x * c - y * s
    out[:, 1::2] = x * s + y * c
    return out


# ---------------------------------------------------------------------------
# RMS normalization
# ---------------------------------------------------------------------------

RMS_EPS = 1e-6


@njit(cache=True)
def _rms_rows_jit(x, gain, eps):  # pragma: no cover - compiled
    n, d = x.shape
    out = np.empty_like(x)
    for i in range(n):
        acc = 0.0
        for t in range(d):
            acc += x[i, t] * x[i, t]
        denom = math.sqrt(acc / d + eps)
        for t in range(d):
            out[i, t] = (x[i, t] / denom) * gain[t]
    return out


def _rms_rows_fallback(x, gain, eps):
    n, d = x.shape
    out = np.empty_like(x)
    for i in range(n):
        sq = x[i] * x[i]
        acc = 0.0
        for v in sq.tolist():
            acc += v
        denom = math.sqrt(acc / d + eps)
        out[i] = (x[i] / denom) * gain
    return out


def rms_norm_rows(x: np.ndarray, gain: np.ndarray, eps: float = RMS_EPS) -> np.ndarray:
    """Row-wise RMS normalization with an ascending-index square sum."""
    if x.shape[1] != gain.shape[0]:
        raise ShapeError(f"rms gain length {gain.shape[0]} != width {x.shape[1]}")
    if HAS_NUMBA:
        return _rms_rows_jit(np.ascontiguousarray(x), np.ascontiguousarray(gain), eps)
    return _rms_rows_fallback(x, gain, eps)


# ---------------------------------------------------------------------------
# plan-driven attention for one head
# ---------------------------------------------------------------------------


@njit(cache=True)
def _attn_head_jit(q_rot, k_stack, v, slots, vis_flat, vis_off, sqrt_hd):  # pragma: no cover
    n, hd = q_rot.shape
    out = np.zeros((n, hd))
    scratch = np.empty(vis_flat.shape[0] if vis_flat.shape[0] > 0 else 1)
    for q in range(n):
        lo, hi = vis_off[q], vis_off[q + 1]
        m = hi - lo
        if m == 0:
            continue
        sl = slots[q]
        for ii in range(m):
            j = vis_flat[lo + ii]
            acc = 0.0
            for t in range(hd):
                acc += q_rot[q, t] * k_stack[sl, j, t]
            scratch[ii] = acc / sqrt_hd
        mx = scratch[0]
        for ii in range(1, m):
            if scratch[ii] > mx:
                mx = scratch[ii]
        den = 0.0
        for ii in range(m):
            e = math.exp(scratch[ii] - mx)
            scratch[ii] = e
            den += e
        for ii in range(m):
            p = scratch[ii] / den
            j = vis_flat[lo + ii]
            for t in range(hd):
                out[q, t] += p * v[j, t]
    return out


def _attn_head_python(q_rot, k_stack, v, slots, vis_flat, vis_off, sqrt_hd, probs_out=None):
    """Reference path; identical rounding to the jitted kernel.

    When ``probs_out`` (an (n, n) array) is given, the attention
    probabilities are scattered into it for inspection.
    """
    n, hd = q_rot.shape
    out = np.zeros((n, hd))
    for q in range(n):
        lo, hi = int(vis_off[q]), int(vis_off[q + 1])
        if hi == lo:
            continue
        idx = vis_flat[lo:hi]
        prods = q_rot[q] * k_stack[slots[q]][idx]
        scores = []
        for row in prods:
            acc = 0.0
            for p in row.tolist():
                acc += p
            scores.append(acc / sqrt_hd)
        probs = softmax(scores)
        for ii, j in enumerate(idx):
            out[q] += probs[ii] * v[j]
        if probs_out is not None:
            probs_out[q, idx] = probs
    return out


def attention_head(q_rot, k_stack, v, slots, vis_flat, vis_off, head_dim: int,
                   counter: OpCounter | None = None, probs_out=None) -> np.ndarray:
    """One head of plan-driven attention.

    ``k_stack[s]`` holds the keys rotated under layout slot ``s``;
    ``slots[q]`` selects the slot for query ``q``; ``vis_flat[vis_off[q]:
    vis_off[q+1]]`` lists q's visible keys already sorted into the canonical
    reduction order (ascending assigned position id).
    """
    sqrt_hd = math.sqrt(head_dim)
    if counter is not None:
        counter.attention_multiplies += 2 * head_dim * int(vis_flat.shape[0])
    if HAS_NUMBA and probs_out is None:
        return _attn_head_jit(q_rot, k_stack, v, slots, vis_flat, vis_off, sqrt_hd)
    return _attn_head_python(q_rot, k_stack, v, slots, vis_flat, vis_off, sqrt_hd, probs_out)


def dot_ascending(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product accumulated in ascending index order."""
    acc = 0.0
    for p in (a * b).tolist():
        acc += p
    return acc
