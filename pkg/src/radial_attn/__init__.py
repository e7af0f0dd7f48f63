"""Radial sparse attention masks for video diffusion transformers.

The radial mask lets a token in frame ``i`` attend to frame ``j`` with a
spatial band whose width halves every time the frame distance doubles, and
falls back to strided same-position diagonals once that band is narrower than
one token. Total kept pairs grow as ``O(n log n)`` in the number of frames.
"""

from .grid import (
    DENSE,
    RADIAL,
    GridShape,
    MaskSizeError,
    PatternKind,
    PatternSpec,
    TokenMask,
    band_index,
    baseline_keep,
    count_kept,
    diagonal_width,
    keep,
    keep_period,
    keep_tokens,
    materialize_mask,
    num_bands,
    radial_keep,
)
from .blocksparse import (
    BlockLayout,
    FlopsReport,
    MaskFormatError,
    attention_flops,
    blockify,
    deserialize,
    render_pgm,
    serialize,
    sparsity,
)
from .attention import (
    AttentionInstance,
    FullyMaskedRowError,
    ScoreRow,
    dense_attention,
    masked_attention,
    output_mse,
    random_instance,
    row_l1_error,
    synth_decay_instance,
    synth_decay_row,
)
from .analysis import (
    BudgetMatch,
    DecayFit,
    DecayParams,
    RegionBounds,
    budget_match,
    decay_curves,
    error_bound,
    fit_exponential,
    region_zero_bounds,
    verify_complexity,
    verify_error_bound,
)
from .presets import Preset, get_preset, load_presets

__version__ = "0.1.0"

__all__ = [
    "DENSE",
    "RADIAL",
    "GridShape",
    "MaskSizeError",
    "PatternKind",
    "PatternSpec",
    "TokenMask",
    "band_index",
    "baseline_keep",
    "count_kept",
    "diagonal_width",
    "keep",
    "keep_period",
    "keep_tokens",
    "materialize_mask",
    "num_bands",
    "radial_keep",
    "BlockLayout",
    "FlopsReport",
    "MaskFormatError",
    "attention_flops",
    "blockify",
    "deserialize",
    "render_pgm",
    "serialize",
    "sparsity",
    "AttentionInstance",
    "FullyMaskedRowError",
    "ScoreRow",
    "dense_attention",
    "masked_attention",
    "output_mse",
    "random_instance",
    "row_l1_error",
    "synth_decay_instance",
    "synth_decay_row",
    "BudgetMatch",
    "DecayFit",
    "DecayParams",
    "RegionBounds",
    "budget_match",
    "decay_curves",
    "error_bound",
    "fit_exponential",
    "region_zero_bounds",
    "verify_complexity",
    "verify_error_bound",
    "Preset",
    "get_preset",
    "load_presets",
]
