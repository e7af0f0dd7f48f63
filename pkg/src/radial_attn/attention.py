"""Reference softmax attention in float64, dense and masked, plus error metrics.

Instances either carry ``Q, K`` (logits are ``Q K^T / sqrt(d)``) or carry the
logit matrix directly; the synthetic decay instances use the latter because
the decay assumption constrains post-softmax scores, not embeddings, and the
logits are used as given without the ``sqrt(d)`` scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Union

import numpy as np

from .blocksparse import BlockLayout, blockify
from .grid import GridShape, PatternSpec, TokenMask, keep_tokens

L1_AGREEMENT_TOL = 1e-10
# query/key tile used when a pattern is evaluated block-sparsely
_TILE = 64


class FullyMaskedRowError(ValueError):
    def __init__(self, row: int):
        super().__init__(
            f"query row {row} keeps no keys; the pattern needs a sink or a wider window"
        )
        self.row = row


@dataclass(frozen=True, eq=False)
class AttentionInstance:
    shape: GridShape
    v: np.ndarray = field(repr=False)
    q: np.ndarray | None = field(default=None, repr=False)
    k: np.ndarray | None = field(default=None, repr=False)
    logits: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        n = self.shape.n
        v = np.asarray(self.v, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] != n:
            raise ValueError(f"V must be {n} x d, got {v.shape}")
        object.__setattr__(self, "v", v)
        if self.logits is None:
            if self.q is None or self.k is None:
                raise ValueError("instance needs either Q and K or explicit logits")
            for name in ("q", "k"):
                arr = np.asarray(getattr(self, name), dtype=np.float64)
                if arr.shape != v.shape:
                    raise ValueError(f"{name.upper()} must be {v.shape}, got {arr.shape}")
                object.__setattr__(self, name, arr)
        else:
            logits = np.asarray(self.logits, dtype=np.float64)
            if logits.shape != (n, n):
                raise ValueError(f"logits must be {n} x {n}, got {logits.shape}")
            object.__setattr__(self, "logits", logits)
        for name in ("v", "q", "k", "logits"):
            arr = getattr(self, name)
            if arr is not None:
                if not np.all(np.isfinite(arr)):
                    raise ValueError(f"{name} contains non-finite entries")
                arr.setflags(write=False)

    @property
    def head_dim(self) -> int:
        return self.v.shape[1]

    @property
    def n(self) -> int:
        return self.shape.n

    def scores(self, rows=slice(None), cols=slice(None)) -> np.ndarray:
        """Logits for the requested query rows and key columns."""
        if self.logits is not None:
            return self.logits[rows][:, cols]
        return self.q[rows] @ self.k[cols].T / math.sqrt(self.head_dim)


def random_instance(shape: GridShape, head_dim: int, seed=None, scale: float = 1.0):
    rng = np.random.default_rng(seed)
    n = shape.n
    q, k, v = (scale * rng.standard_normal((n, head_dim)) for _ in range(3))
    return AttentionInstance(shape, v=v, q=q, k=k)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def attention_probs(instance: AttentionInstance) -> np.ndarray:
    return _softmax_rows(instance.scores())


def dense_attention(instance: AttentionInstance) -> np.ndarray:
    return attention_probs(instance) @ instance.v


MaskLike = Union[PatternSpec, BlockLayout, TokenMask, np.ndarray]


def _masked_softmax(logits: np.ndarray, keep: np.ndarray, row_offset: int = 0) -> np.ndarray:
    z = np.where(keep, logits, -np.inf)
    top = z.max(axis=1, keepdims=True)
    dead = np.flatnonzero(~np.isfinite(top[:, 0]))
    if len(dead):
        raise FullyMaskedRowError(row_offset + int(dead[0]))
    z -= top
    np.exp(z, out=z)
    z /= z.sum(axis=1, keepdims=True)
    return z


def _block_sparse(instance, layout: BlockLayout, pattern: PatternSpec | None) -> np.ndarray:
    n, B = instance.n, layout.block_size
    out = np.empty((n, instance.head_dim))
    key_idx = np.arange(n)
    offsets = np.arange(B)
    for I in range(layout.grid_rows):
        r0, r1 = I * B, min(n, (I + 1) * B)
        blocks = layout.row(I)
        if len(blocks) == 0:
            raise FullyMaskedRowError(r0)
        cols = (blocks[:, None] * B + offsets[None, :]).ravel()
        if blocks[-1] == layout.grid_rows - 1:
            cols = cols[cols < n]
        logits = instance.scores(slice(r0, r1), cols)
        if pattern is None:
            logits -= logits.max(axis=1, keepdims=True)
            np.exp(logits, out=logits)
            logits /= logits.sum(axis=1, keepdims=True)
            p = logits
        else:
            keep = keep_tokens(instance.shape, pattern, key_idx[r0:r1, None], cols[None, :])
            p = _masked_softmax(logits, keep, r0)
        out[r0:r1] = p @ instance.v[cols]
    return out


def masked_attention(instance: AttentionInstance, mask: MaskLike) -> np.ndarray:
    """Softmax attention restricted to kept key positions.

    ``mask`` may be a pattern (exact token-level mask, evaluated over the
    blocks it touches), a block layout (every token in a kept block is kept),
    a materialized ``TokenMask`` or a boolean ``n x n`` array.
    """
    if isinstance(mask, PatternSpec):
        layout = blockify(instance.shape, mask, _TILE)
        return _block_sparse(instance, layout, mask)
    if isinstance(mask, BlockLayout):
        if mask.shape != instance.shape:
            raise ValueError(f"layout shape {mask.shape} != instance shape {instance.shape}")
        return _block_sparse(instance, mask, None)
    bits = mask.bits if isinstance(mask, TokenMask) else np.asarray(mask, dtype=bool)
    if bits.shape != (instance.n, instance.n):
        raise ValueError(f"mask must be {instance.n} x {instance.n}, got {bits.shape}")
    return _masked_softmax(instance.scores(), bits) @ instance.v


def output_mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


# -- per-row error -----------------------------------------------------------

class Normalizers(NamedTuple):
    z: float
    z_keep: float
    z_out: float


def _l1_pair(a: np.ndarray, keep: np.ndarray, row: int) -> tuple[float, float]:
    z_keep = float(a[keep].sum())
    z_out = float(a[~keep].sum())
    z = z_keep + z_out
    if z_keep <= 0.0:
        raise FullyMaskedRowError(row)
    p = a / z
    p_masked = np.where(keep, a, 0.0) / z_keep
    return float(np.abs(p_masked - p).sum()), 2.0 * z_out / z


def _checked(direct: float, mass: float) -> float:
    if abs(direct - mass) > L1_AGREEMENT_TOL:
        raise ArithmeticError(
            f"l1 disagreement: direct {direct!r} vs 2*Z_out/Z {mass!r}"
        )
    return direct


def row_l1_pair(instance: AttentionInstance, pattern: PatternSpec, u: int) -> tuple[float, float]:
    """``||p~ - p||_1`` for query ``u``, computed directly and as ``2 Z_out / Z``."""
    if not 0 <= u < instance.n:
        raise IndexError(f"query {u} outside [0, {instance.n})")
    logits = instance.scores(slice(u, u + 1))[0]
    a = np.exp(logits - logits.max())
    keep = keep_tokens(instance.shape, pattern, u, np.arange(instance.n))
    return _l1_pair(a, keep, u)


def row_l1_error(instance: AttentionInstance, pattern: PatternSpec, u: int) -> float:
    return _checked(*row_l1_pair(instance, pattern, u))


def all_rows_l1(instance: AttentionInstance, mask: np.ndarray) -> np.ndarray:
    """``2 Z_out / Z`` for every query row under a dense boolean mask."""
    logits = instance.scores()
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    z_out = np.where(mask, 0.0, a).sum(axis=1)
    z_keep = np.where(mask, a, 0.0).sum(axis=1)
    dead = np.flatnonzero(z_keep <= 0)
    if len(dead):
        raise FullyMaskedRowError(int(dead[0]))
    return 2.0 * z_out / (z_keep + z_out)


# -- synthetic decay rows and instances --------------------------------------

@dataclass(frozen=True, eq=False)
class ScoreRow:
    """Unnormalized scores ``a[j, l]`` seen by query (frame ``i0``, position ``k0``)."""

    shape: GridShape
    i0: int
    k0: int
    scores: np.ndarray = field(repr=False)

    @property
    def anchor(self) -> float:
        return float(self.scores[self.i0, self.k0])

    @property
    def query(self) -> int:
        return self.i0 * self.shape.s + self.k0

    def keep(self, pattern: PatternSpec) -> np.ndarray:
        keys = np.arange(self.shape.n)
        return keep_tokens(self.shape, pattern, self.query, keys).reshape(self.scores.shape)

    def normalizers(self, pattern: PatternSpec) -> Normalizers:
        keep = self.keep(pattern)
        z_keep = float(self.scores[keep].sum())
        z_out = float(self.scores[~keep].sum())
        return Normalizers(z_keep + z_out, z_keep, z_out)

    def l1_pair(self, pattern: PatternSpec) -> tuple[float, float]:
        return _l1_pair(self.scores.ravel(), self.keep(pattern).ravel(), self.query)

    def l1_error(self, pattern: PatternSpec) -> float:
        return _checked(*self.l1_pair(pattern))


def _check_rates(alpha, beta, c_rel):
    if not (alpha > 0 and beta > 0):
        raise ValueError(f"decay rates must be positive, got alpha={alpha}, beta={beta}")
    if not c_rel > 0:
        raise ValueError(f"c_rel must be positive, got {c_rel}")


def decay_envelope(shape: GridShape, i0: int, k0: int, alpha: float, beta: float, c_rel: float):
    dt = np.abs(np.arange(shape.f) - i0)[:, None]
    dx = np.abs(np.arange(shape.s) - k0)[None, :]
    return c_rel * np.exp(-alpha * dt - beta * dx)


def synth_decay_row(
    shape: GridShape,
    i0: int,
    k0: int,
    alpha: float,
    beta: float,
    c_rel: float = 1.0,
    mode: str = "worst_case",
    seed=None,
) -> ScoreRow:
    """Score row obeying ``a[j,l] <= c_rel * exp(-alpha|j-i0| - beta|l-k0|) * a0``.

    ``worst_case`` sits exactly on the envelope; ``random`` scales each entry
    by an independent uniform factor in (0, 1]. The anchor is stored as
    ``a0 = 1`` in both modes.
    """
    _check_rates(alpha, beta, c_rel)
    if not (0 <= i0 < shape.f and 0 <= k0 < shape.s):
        raise IndexError(f"anchor ({i0}, {k0}) outside the grid")
    a = decay_envelope(shape, i0, k0, alpha, beta, c_rel)
    if mode == "random":
        rng = np.random.default_rng(seed)
        a *= 1.0 - rng.random(a.shape)
    elif mode != "worst_case":
        raise ValueError(f"mode must be 'worst_case' or 'random', got {mode!r}")
    a[i0, k0] = 1.0
    a.setflags(write=False)
    return ScoreRow(shape, i0, k0, a)


def synth_decay_instance(
    shape: GridShape,
    alpha: float,
    beta: float,
    c_rel: float = 1.0,
    head_dim: int = 16,
    seed=None,
    mode: str = "random",
) -> AttentionInstance:
    """Full instance whose every row is a decay row anchored at its own query.

    Logits are ``log c_rel - alpha*dt - beta*dx + log(U)`` with the diagonal
    pinned to 0; with ``c_rel >= 1`` every softmax row satisfies the decay
    bound relative to its anchor exactly. V is standard normal.
    """
    _check_rates(alpha, beta, c_rel)
    if mode not in ("worst_case", "random"):
        raise ValueError(f"mode must be 'worst_case' or 'random', got {mode!r}")
    rng = np.random.default_rng(seed)
    f, s, n = shape.f, shape.s, shape.n
    frame = np.repeat(np.arange(f), s)
    pos = np.tile(np.arange(s), f)
    logits = (
        math.log(c_rel)
        - alpha * np.abs(frame[:, None] - frame[None, :])
        - beta * np.abs(pos[:, None] - pos[None, :])
    )
    if mode == "random":
        logits += np.log1p(-rng.random((n, n)))
    np.fill_diagonal(logits, 0.0)
    v = rng.standard_normal((n, head_dim))
    return AttentionInstance(shape, v=v, logits=logits)
