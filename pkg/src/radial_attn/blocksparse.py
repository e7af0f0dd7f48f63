"""Block-sparse layouts of token masks, FLOPs accounting and the ``.ramk`` format.

A layout tiles the ``n x n`` attention map into ``B x B`` blocks and stores,
CSR-style, which blocks are computed. A block is kept when any token pair
inside it is kept, so layouts over-approximate the token mask; the power
pattern is the exception and is defined directly on block distances.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import (
    KIND_CODES,
    KINDS_BY_CODE,
    GridShape,
    PatternKind,
    PatternSpec,
    band_halfwidths,
)

MAGIC = b"RAMK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIBBI")
MAX_PGM_GRID = 8192

# caps the (block rows x frames) work arrays built per chunk
_CHUNK_ELEMS = 1 << 22


class MaskFormatError(ValueError):
    """A ``.ramk`` payload could not be parsed; ``field`` names the culprit."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True, eq=False)
class BlockLayout:
    shape: GridShape
    block_size: int
    kind: PatternKind
    sink: bool
    row_ptr: np.ndarray = field(repr=False)
    col_idx: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.block_size < 1:
            raise ValueError("block_size must be >= 1")
        object.__setattr__(self, "kind", PatternKind(self.kind))
        row_ptr = np.asarray(self.row_ptr, dtype=np.int64)
        col_idx = np.asarray(self.col_idx, dtype=np.int64)
        R = self.grid_rows
        if row_ptr.shape != (R + 1,):
            raise ValueError(f"row_ptr must have {R + 1} entries, got {row_ptr.shape}")
        if row_ptr[0] != 0 or np.any(np.diff(row_ptr) < 0) or row_ptr[-1] != len(col_idx):
            raise ValueError("row_ptr must start at 0, be nondecreasing and end at len(col_idx)")
        if len(col_idx) and (col_idx.min() < 0 or col_idx.max() >= R):
            raise ValueError(f"col_idx entries must lie in [0, {R})")
        steps = np.diff(col_idx)
        row_starts = row_ptr[1:-1]
        # a non-increasing step is only legal where a new row begins
        bad = np.flatnonzero(steps <= 0) + 1
        if len(bad) and not np.all(np.isin(bad, row_starts)):
            raise ValueError("col_idx must be strictly increasing within each row")
        for arr in (row_ptr, col_idx):
            arr.setflags(write=False)
        object.__setattr__(self, "row_ptr", row_ptr)
        object.__setattr__(self, "col_idx", col_idx)

    @property
    def grid_rows(self) -> int:
        return -(-self.shape.n // self.block_size)

    @property
    def kept_blocks(self) -> int:
        return int(self.row_ptr[-1])

    def row(self, I: int) -> np.ndarray:
        return self.col_idx[self.row_ptr[I]:self.row_ptr[I + 1]]

    def to_dense(self) -> np.ndarray:
        R = self.grid_rows
        grid = np.zeros((R, R), dtype=bool)
        rows = np.repeat(np.arange(R), np.diff(self.row_ptr))
        grid[rows, self.col_idx] = True
        return grid

    @classmethod
    def from_dense(cls, shape, block_size, grid, kind=PatternKind.DENSE, sink=False):
        grid = np.asarray(grid, dtype=bool)
        rows, cols = np.nonzero(grid)
        row_ptr = np.zeros(grid.shape[0] + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=grid.shape[0]), out=row_ptr[1:])
        return cls(shape, block_size, kind, sink, row_ptr, cols)

    def __eq__(self, other):
        if not isinstance(other, BlockLayout):
            return NotImplemented
        return (
            self.shape == other.shape
            and self.block_size == other.block_size
            and self.kind == other.kind
            and self.sink == other.sink
            and np.array_equal(self.row_ptr, other.row_ptr)
            and np.array_equal(self.col_idx, other.col_idx)
        )

    __hash__ = None


def _band_rows_to_diff(diff, I_rel, i, ka, kb, halfwidth, shape, B):
    """Accumulate kept block-column ranges for row segments into a difference array.

    Each segment is the token rows of block row ``I_rel`` that fall in frame
    ``i`` with spatial positions ``ka..kb``. For every key frame ``j`` the
    kept key positions form the contiguous range ``[ka - m, kb + m]`` clipped
    to the frame, hence a contiguous range of block columns.
    """
    f, s = shape.f, shape.s
    j = np.arange(f, dtype=np.int64)[None, :]
    m = halfwidth[np.abs(i[:, None] - j)]
    live = m >= 0
    lo = np.maximum(ka[:, None] - m, 0)
    hi = np.minimum(kb[:, None] + m, s - 1)
    J_lo = (j * s + lo) // B
    J_hi = (j * s + hi) // B
    rows = np.broadcast_to(I_rel[:, None], m.shape)[live]
    width = diff.shape[1]
    np.add.at(diff.reshape(-1), rows * width + J_lo[live], 1)
    np.add.at(diff.reshape(-1), rows * width + J_hi[live] + 1, -1)


def _row_segments(shape: GridShape, B: int, I0: int, I1: int):
    """Split token rows of block rows ``[I0, I1)`` at frame boundaries."""
    n, s = shape.n, shape.s
    starts = np.arange(I0, I1, dtype=np.int64) * B
    ends = np.minimum(starts + B, n)
    first = starts // s
    last = (ends - 1) // s
    counts = last - first + 1
    I = np.repeat(np.arange(I0, I1, dtype=np.int64), counts)
    offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    i = np.repeat(first, counts) + offs
    lo = np.maximum(np.repeat(starts, counts), i * s) - i * s
    hi = np.minimum(np.repeat(ends, counts), (i + 1) * s) - 1 - i * s
    return I, i, lo, hi


def blockify(shape: GridShape, pattern: PatternSpec, block_size: int) -> BlockLayout:
    """Block layout of ``pattern``: block (I, J) is kept iff any token pair in it is kept.

    For the power pattern the rule is applied to block distances directly:
    ``|I - J|`` in ``{0, 1, 2, 4, 8, ...}``.
    """
    B = int(block_size)
    if B < 1:
        raise ValueError("block_size must be >= 1")
    R = -(-shape.n // B)
    sink_cols = (shape.s - 1) // B + 1
    kind = pattern.kind

    if kind is PatternKind.DENSE:
        row_ptr = np.arange(R + 1, dtype=np.int64) * R
        col_idx = np.tile(np.arange(R, dtype=np.int64), R)
        return BlockLayout(shape, B, kind, pattern.sink, row_ptr, col_idx)

    if kind is PatternKind.POWER:
        offsets = [0, 1]
        t = 2
        while t < R:
            offsets.append(t)
            t <<= 1
        offsets = np.array(sorted(set(offsets) | {-o for o in offsets}), dtype=np.int64)
        I = np.arange(R, dtype=np.int64)[:, None]
        J = I + offsets[None, :]
        ok = (J >= 0) & (J < R)
        grid_rows = np.broadcast_to(I, J.shape)[ok]
        grid_cols = J[ok]
        if pattern.sink:
            sink_I = np.repeat(np.arange(R, dtype=np.int64), sink_cols)
            sink_J = np.tile(np.arange(sink_cols, dtype=np.int64), R)
            grid_rows = np.concatenate([grid_rows, sink_I])
            grid_cols = np.concatenate([grid_cols, sink_J])
        keys = np.unique(grid_rows * R + grid_cols)
        rows, cols = np.divmod(keys, R)
        row_ptr = np.zeros(R + 1, dtype=np.int64)
        np.cumsum(np.bincount(rows, minlength=R), out=row_ptr[1:])
        return BlockLayout(shape, B, kind, pattern.sink, row_ptr, cols)

    halfwidth = band_halfwidths(shape, pattern)
    per_row_segments = -(-B // shape.s) + 1
    chunk = max(1, _CHUNK_ELEMS // max(R + 1, per_row_segments * shape.f))
    counts, cols = [], []
    for I0 in range(0, R, chunk):
        I1 = min(R, I0 + chunk)
        diff = np.zeros((I1 - I0, R + 1), dtype=np.int32)
        I, i, lo, hi = _row_segments(shape, B, I0, I1)
        _band_rows_to_diff(diff, I - I0, i, lo, hi, halfwidth, shape, B)
        if pattern.sink:
            diff[:, 0] += 1
            diff[:, sink_cols] -= 1
        grid = np.cumsum(diff[:, :R], axis=1) > 0
        r, c = np.nonzero(grid)
        counts.append(np.bincount(r, minlength=I1 - I0))
        cols.append(c)
    row_ptr = np.zeros(R + 1, dtype=np.int64)
    np.cumsum(np.concatenate(counts), out=row_ptr[1:])
    col_idx = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    return BlockLayout(shape, B, kind, pattern.sink, row_ptr, col_idx)


def blockify_mask(bits: np.ndarray, block_size: int) -> np.ndarray:
    """Any-reduction of a dense token mask onto its ``B x B`` block grid."""
    n = bits.shape[0]
    B = block_size
    R = -(-n // B)
    padded = np.zeros((R * B, R * B), dtype=bool)
    padded[:n, :n] = bits
    return padded.reshape(R, B, R, B).any(axis=(1, 3))


def sparsity(layout: BlockLayout) -> float:
    R = layout.grid_rows
    return 1.0 - layout.kept_blocks / (R * R)


def _kept_block_area(layout: BlockLayout) -> int:
    """Token pairs covered by kept blocks; ragged edge blocks count their real size."""
    n, B, R = layout.shape.n, layout.block_size, layout.grid_rows
    edge = n - (R - 1) * B
    rows = np.repeat(np.arange(R), np.diff(layout.row_ptr))
    h = np.where(rows == R - 1, edge, B)
    w = np.where(layout.col_idx == R - 1, edge, B)
    return int(np.dot(h, w))


@dataclass(frozen=True)
class FlopsReport:
    dense_flops: int
    sparse_flops: int
    reduction_ratio: float

    def as_dict(self) -> dict:
        return {
            "dense_flops": self.dense_flops,
            "sparse_flops": self.sparse_flops,
            "reduction_ratio": self.reduction_ratio,
        }


def attention_flops(layout: BlockLayout, head_dim: int, num_heads: int = 1) -> FlopsReport:
    """FLOPs of the two attention matmuls (QK^T and PV), 2 FLOPs per multiply-add.

    Softmax cost is not counted.
    """
    if head_dim < 1 or num_heads < 1:
        raise ValueError("head_dim and num_heads must be >= 1")
    n = layout.shape.n
    dense = 4 * n * n * head_dim * num_heads
    sparse = 4 * _kept_block_area(layout) * head_dim * num_heads
    ratio = dense / sparse if sparse else float("inf")
    return FlopsReport(dense, sparse, ratio)


# -- serialization -----------------------------------------------------------

def serialize(layout: BlockLayout) -> bytes:
    shape = layout.shape
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        shape.f,
        shape.s,
        layout.block_size,
        KIND_CODES[layout.kind],
        int(layout.sink),
        layout.grid_rows,
    )
    return b"".join(
        [
            header,
            layout.row_ptr.astype("<u8").tobytes(),
            layout.col_idx.astype("<u4").tobytes(),
        ]
    )


def deserialize(data: bytes) -> BlockLayout:
    data = bytes(data)
    if len(data) < 4:
        raise MaskFormatError("magic", f"truncated: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise MaskFormatError("magic", f"expected {MAGIC!r}, got {data[:4]!r}")
    if len(data) < _HEADER.size:
        raise MaskFormatError("header", f"truncated: need {_HEADER.size} bytes, got {len(data)}")
    _, version, f, s, B, kind_code, sink, R = _HEADER.unpack_from(data)
    if version != FORMAT_VERSION:
        raise MaskFormatError("version", f"unsupported version {version}")
    for name, value in (("frames", f), ("tokens_per_frame", s), ("block_size", B)):
        if value < 1:
            raise MaskFormatError(name, f"must be >= 1, got {value}")
    if kind_code not in KINDS_BY_CODE:
        raise MaskFormatError("kind", f"unknown kind code {kind_code}")
    if sink not in (0, 1):
        raise MaskFormatError("sink", f"expected 0 or 1, got {sink}")
    shape = GridShape(f, s)
    expected_R = -(-shape.n // B)
    if R != expected_R:
        raise MaskFormatError("grid_rows", f"header says {R}, shape implies {expected_R}")

    offset = _HEADER.size
    ptr_bytes = 8 * (R + 1)
    if len(data) < offset + ptr_bytes:
        raise MaskFormatError("row_ptr", f"truncated: need {ptr_bytes} bytes")
    row_ptr = np.frombuffer(data, dtype="<u8", count=R + 1, offset=offset)
    offset += ptr_bytes
    if row_ptr[0] != 0 or np.any(row_ptr[1:] < row_ptr[:-1]):
        raise MaskFormatError("row_ptr", "must start at 0 and be nondecreasing")
    nnz = int(row_ptr[-1])
    if nnz > R * R:
        raise MaskFormatError("row_ptr", f"claims {nnz} blocks in a {R}x{R} grid")
    if len(data) - offset != 4 * nnz:
        what = "truncated" if len(data) - offset < 4 * nnz else "trailing bytes after"
        raise MaskFormatError("col_idx", f"{what} {nnz} entries")
    col_idx = np.frombuffer(data, dtype="<u4", count=nnz, offset=offset)
    try:
        return BlockLayout(
            shape,
            B,
            KINDS_BY_CODE[kind_code],
            bool(sink),
            row_ptr.astype(np.int64),
            col_idx.astype(np.int64),
        )
    except ValueError as exc:
        raise MaskFormatError("col_idx", str(exc)) from None


def render_pgm(layout: BlockLayout) -> bytes:
    """Binary PGM with one pixel per block: kept blocks black, skipped blocks white."""
    R = layout.grid_rows
    if R > MAX_PGM_GRID:
        raise ValueError(f"block grid {R}x{R} exceeds the {MAX_PGM_GRID} pixel limit")
    pixels = np.where(layout.to_dense(), 0, 255).astype(np.uint8)
    return f"P5\n{R} {R}\n255\n".encode("ascii") + pixels.tobytes()
