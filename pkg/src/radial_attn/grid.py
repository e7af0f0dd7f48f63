"""Frame/token geometry and keep predicates for radial and baseline masks.

A video latent of ``f`` frames with ``s`` tokens each is flattened row-major
into ``n = f * s`` tokens: token ``u = i * s + k`` is spatial position ``k``
of frame ``i``. A pattern decides, for every query token ``u`` and key token
``v``, whether the pair is computed.

Every kind except ``power`` factorizes over frame distance: a frame pair at
distance ``d`` keeps exactly the spatial offsets ``|k - l| <= halfwidth[d]``
(``-1`` keeps nothing), optionally OR-ed with the sink (``j == 0``). That
table drives the closed-form counting and the block layouts; the token
predicates below evaluate the defining formulas directly so the two paths
can check each other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

DEFAULT_MATERIALIZE_CAP = 16384


class PatternKind(str, enum.Enum):
    RADIAL = "radial"
    DENSE = "dense"
    SPATIAL = "spatial"
    TEMPORAL = "temporal"
    STA = "sta"
    POWER = "power"
    HARMONIC = "harmonic"


# wire codes for the .ramk header; append only
KIND_CODES = {
    PatternKind.RADIAL: 0,
    PatternKind.DENSE: 1,
    PatternKind.SPATIAL: 2,
    PatternKind.TEMPORAL: 3,
    PatternKind.STA: 4,
    PatternKind.POWER: 5,
    PatternKind.HARMONIC: 6,
}
KINDS_BY_CODE = {code: kind for kind, code in KIND_CODES.items()}

DEFAULT_WINDOWS = {
    PatternKind.SPATIAL: {"temporal_window": 1},
    PatternKind.TEMPORAL: {"spatial_window": 0},
    PatternKind.STA: {"temporal_window": 2, "spatial_window": 2},
}


class MaskSizeError(ValueError):
    """Raised when a dense token mask would exceed the materialization cap."""


@dataclass(frozen=True)
class GridShape:
    frames: int
    tokens_per_frame: int

    def __post_init__(self):
        for name in ("frames", "tokens_per_frame"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def total_tokens(self) -> int:
        return self.frames * self.tokens_per_frame

    @property
    def f(self) -> int:
        return self.frames

    @property
    def s(self) -> int:
        return self.tokens_per_frame

    @property
    def n(self) -> int:
        return self.total_tokens


@dataclass(frozen=True)
class PatternSpec:
    """Which mask family to build, plus its window parameters.

    ``temporal_window`` bounds ``|i - j|`` (spatial and sta kinds) and
    ``spatial_window`` bounds ``|k - l|`` (temporal and sta kinds). Window
    fields are ignored by the kinds that do not read them. ``sink=None``
    resolves to True for radial and False for everything else.
    """

    kind: PatternKind = PatternKind.RADIAL
    sink: bool | None = None
    temporal_window: int | None = None
    spatial_window: int | None = None

    def __post_init__(self):
        kind = PatternKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if self.sink is None:
            object.__setattr__(self, "sink", kind is PatternKind.RADIAL)
        else:
            object.__setattr__(self, "sink", bool(self.sink))
        if kind in (PatternKind.SPATIAL, PatternKind.STA) and self.temporal_window is None:
            raise ValueError(f"pattern {kind.value!r} requires temporal_window")
        if kind in (PatternKind.TEMPORAL, PatternKind.STA) and self.spatial_window is None:
            raise ValueError(f"pattern {kind.value!r} requires spatial_window")
        for name in ("temporal_window", "spatial_window"):
            value = getattr(self, name)
            if value is not None:
                if value < 0:
                    raise ValueError(f"{name} must be >= 0, got {value}")
                object.__setattr__(self, name, int(value))

    @classmethod
    def make(cls, kind, sink=None, **windows) -> "PatternSpec":
        """Build a pattern, filling unspecified windows with the defaults."""
        kind = PatternKind(kind)
        params = dict(DEFAULT_WINDOWS.get(kind, {}))
        params.update({k: v for k, v in windows.items() if v is not None})
        return cls(kind=kind, sink=sink, **params)

    def describe(self) -> str:
        parts = [self.kind.value]
        if self.temporal_window is not None:
            parts.append(f"tw={self.temporal_window}")
        if self.spatial_window is not None:
            parts.append(f"sw={self.spatial_window}")
        if self.sink:
            parts.append("sink")
        return "/".join(parts)


RADIAL = PatternSpec(PatternKind.RADIAL)
DENSE = PatternSpec(PatternKind.DENSE)


# -- band arithmetic ---------------------------------------------------------

def _floor_log2(x: int) -> int:
    return int(x).bit_length() - 1


def _band_exponent(d: int) -> int:
    return _floor_log2(max(d, 1))


def _check_frames(shape_or_frames, *frames):
    limit = shape_or_frames.frames if isinstance(shape_or_frames, GridShape) else shape_or_frames
    for i in frames:
        if not 0 <= i < limit:
            raise IndexError(f"frame index {i} outside [0, {limit})")


def band_index(i: int, j: int, frames: int | None = None) -> int:
    """Signed band of the frame pair: ``sign(j - i) * floor(log2(max(|i-j|, 1)))``."""
    if frames is not None:
        _check_frames(frames, i, j)
    d = j - i
    sign = (d > 0) - (d < 0)
    return sign * _band_exponent(abs(d))


def num_bands(frames: int) -> int:
    if frames < 1:
        raise ValueError("frames must be >= 1")
    return 2 * math.ceil(math.log2(max(frames, 2))) - 1


def diagonal_width(i: int, j: int, shape: GridShape) -> Fraction:
    """Exact spatial width ``s / 2**floor(log2(max(|i-j|, 1)))`` of a frame pair."""
    _check_frames(shape, i, j)
    return Fraction(shape.s, 2 ** _band_exponent(abs(i - j)))


def keep_period(i: int, j: int, shape: GridShape) -> int:
    """Frame stride at which same-position diagonals survive once the width drops below 1."""
    _check_frames(shape, i, j)
    p2 = 2 ** _band_exponent(abs(i - j))
    return -(-p2 // shape.s)


def radial_keep(i: int, j: int, k: int, l: int, shape: GridShape, sink: bool = True) -> bool:
    _check_frames(shape, i, j)
    for pos in (k, l):
        if not 0 <= pos < shape.s:
            raise IndexError(f"spatial index {pos} outside [0, {shape.s})")
    d = abs(i - j)
    p2 = 2 ** _band_exponent(d)
    if p2 <= shape.s and (abs(k - l) + 1) * p2 <= shape.s:
        return True
    if d % -(-p2 // shape.s) == 0 and k == l:
        return True
    return bool(sink and j == 0)


def baseline_keep(pattern: PatternSpec, i: int, j: int, k: int, l: int, shape: GridShape) -> bool:
    """Keep predicate for the non-radial kinds (dense and all baselines)."""
    _check_frames(shape, i, j)
    for pos in (k, l):
        if not 0 <= pos < shape.s:
            raise IndexError(f"spatial index {pos} outside [0, {shape.s})")
    kind = pattern.kind
    if kind is PatternKind.RADIAL:
        raise ValueError("use radial_keep for the radial pattern")
    if pattern.sink and j == 0:
        return True
    d, dx = abs(i - j), abs(k - l)
    if kind is PatternKind.DENSE:
        return True
    if kind is PatternKind.SPATIAL:
        return d <= pattern.temporal_window
    if kind is PatternKind.TEMPORAL:
        return dx <= pattern.spatial_window
    if kind is PatternKind.STA:
        return d <= pattern.temporal_window and dx <= pattern.spatial_window
    if kind is PatternKind.POWER:
        t = abs((i * shape.s + k) - (j * shape.s + l))
        return t & (t - 1) == 0
    if kind is PatternKind.HARMONIC:
        dd = max(d, 1)
        if (dx + 1) * dd <= shape.s:
            return True
        return dx == 0 and d % -(-dd // shape.s) == 0
    raise ValueError(f"unknown pattern kind {kind!r}")


def keep(pattern: PatternSpec, i: int, j: int, k: int, l: int, shape: GridShape) -> bool:
    if pattern.kind is PatternKind.RADIAL:
        return radial_keep(i, j, k, l, shape, sink=pattern.sink)
    return baseline_keep(pattern, i, j, k, l, shape)


# -- vectorized predicates ---------------------------------------------------

def _np_floor_log2(x: np.ndarray) -> np.ndarray:
    # frexp is exact for integers below 2**53
    _, exp = np.frexp(np.maximum(x, 1).astype(np.float64))
    return (exp - 1).astype(np.int64)


def keep_tokens(shape: GridShape, pattern: PatternSpec, u, v) -> np.ndarray:
    """Vectorized keep predicate over flat query tokens ``u`` and key tokens ``v``.

    ``u`` and ``v`` broadcast against each other; the result has the broadcast
    shape. Indices are not range-checked.
    """
    s = shape.s
    u = np.asarray(u, dtype=np.int64)
    v = np.asarray(v, dtype=np.int64)
    i, k = np.divmod(u, s)
    j, l = np.divmod(v, s)
    d = np.abs(i - j)
    dx = np.abs(k - l)
    kind = pattern.kind

    if kind is PatternKind.RADIAL:
        p2 = np.left_shift(1, _np_floor_log2(d))
        out = (p2 <= s) & ((dx + 1) * p2 <= s)
        out |= (dx == 0) & (d % -(-p2 // s) == 0)
    elif kind is PatternKind.DENSE:
        out = np.ones(np.broadcast(u, v).shape, dtype=bool)
    elif kind is PatternKind.SPATIAL:
        out = d <= pattern.temporal_window
    elif kind is PatternKind.TEMPORAL:
        out = dx <= pattern.spatial_window
    elif kind is PatternKind.STA:
        out = (d <= pattern.temporal_window) & (dx <= pattern.spatial_window)
    elif kind is PatternKind.POWER:
        t = np.abs(u - v)
        out = (t & (t - 1)) == 0
    elif kind is PatternKind.HARMONIC:
        dd = np.maximum(d, 1)
        out = (dx + 1) * dd <= s
        out |= (dx == 0) & (d % -(-dd // s) == 0)
    else:
        raise ValueError(f"unknown pattern kind {kind!r}")

    out = np.broadcast_to(out, np.broadcast(u, v).shape)
    if pattern.sink:
        out = out | (j == 0)
    return np.asarray(out, dtype=bool)


def band_halfwidths(shape: GridShape, pattern: PatternSpec) -> np.ndarray:
    """Largest kept ``|k - l|`` for each frame distance ``d``, ``-1`` when none.

    The sink is not folded in. Undefined for the power kind, whose rule does
    not factor over frame pairs.
    """
    f, s = shape.f, shape.s
    d = np.arange(f, dtype=np.int64)
    kind = pattern.kind
    if kind is PatternKind.RADIAL:
        p2 = np.left_shift(1, _np_floor_log2(d))
        wide = p2 <= s
        # largest integer m with (m + 1) * p2 <= s
        m = np.where(wide, s // p2 - 1, -1)
        periodic = ~wide & (d % -(-p2 // s) == 0)
        return np.where(periodic, 0, m)
    if kind is PatternKind.HARMONIC:
        dd = np.maximum(d, 1)
        wide = dd <= s
        m = np.where(wide, s // dd - 1, -1)
        periodic = ~wide & (d % -(-dd // s) == 0)
        return np.where(periodic, 0, m)
    if kind is PatternKind.DENSE:
        return np.full(f, s - 1, dtype=np.int64)
    if kind is PatternKind.SPATIAL:
        return np.where(d <= pattern.temporal_window, s - 1, -1)
    if kind is PatternKind.TEMPORAL:
        return np.full(f, min(pattern.spatial_window, s - 1), dtype=np.int64)
    if kind is PatternKind.STA:
        return np.where(d <= pattern.temporal_window, min(pattern.spatial_window, s - 1), -1)
    raise ValueError(f"pattern kind {kind.value!r} has no per-distance halfwidth")


def _band_pair_count(m: np.ndarray, s: int) -> np.ndarray:
    # pairs (k, l) in [0, s)^2 with |k - l| <= m
    m = np.minimum(m, s - 1)
    return np.where(m < 0, 0, s * (2 * m + 1) - m * (m + 1))


# -- materialization and counting --------------------------------------------

@dataclass(frozen=True)
class TokenMask:
    shape: GridShape
    pattern: PatternSpec
    bits: np.ndarray = field(repr=False)

    @property
    def kept(self) -> int:
        return int(np.count_nonzero(self.bits))


def materialize_mask(
    shape: GridShape, pattern: PatternSpec, cap: int = DEFAULT_MATERIALIZE_CAP
) -> TokenMask:
    n = shape.n
    if n > cap:
        raise MaskSizeError(
            f"refusing to materialize {n}x{n} token mask "
            f"({n * n / 2**20:.1f} MiB as bool); cap is {cap} tokens"
        )
    idx = np.arange(n, dtype=np.int64)
    bits = keep_tokens(shape, pattern, idx[:, None], idx[None, :])
    bits = np.ascontiguousarray(bits)
    bits.setflags(write=False)
    return TokenMask(shape, pattern, bits)


def _power_count(n: int, s: int, sink: bool) -> int:
    total = n  # t = 0
    in_sink = min(s, n)  # t = 0 pairs with v < s
    t = 1
    while t < n:
        total += 2 * (n - t)
        in_sink += max(0, min(s, n - t)) + max(0, s - t)
        t <<= 1
    if sink:
        total += s * n - in_sink
    return total


def count_kept(shape: GridShape, pattern: PatternSpec) -> int:
    """Exact number of kept token pairs, without materializing the mask."""
    f, s = shape.f, shape.s
    if pattern.kind is PatternKind.POWER:
        return _power_count(shape.n, s, pattern.sink)
    per_pair = _band_pair_count(band_halfwidths(shape, pattern), s)
    d = np.arange(f, dtype=np.int64)
    n_pairs = np.where(d == 0, f, 2 * (f - d))
    total = sum(int(c) * int(p) for c, p in zip(per_pair, n_pairs) if c)
    if pattern.sink:
        # frame pair (i, 0) sits at distance i and becomes fully dense
        total += sum(s * s - int(c) for c in per_pair)
    return total
