"""Complexity and error bounds, decay-curve regression and budget matching."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .attention import AttentionInstance, attention_probs, synth_decay_row
from .blocksparse import blockify
from .grid import GridShape, PatternKind, PatternSpec, RADIAL, count_kept


@dataclass(frozen=True)
class DecayParams:
    alpha: float
    beta: float
    c_rel: float = 1.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"decay rates must be positive, got {self.alpha}, {self.beta}")
        if not self.c_rel > 0:
            raise ValueError(f"c_rel must be positive, got {self.c_rel}")


# -- complexity --------------------------------------------------------------

@dataclass(frozen=True)
class RegionBounds:
    central_and_sink: int
    wide_bands: int
    narrow_bands: int
    total: int
    headline: float

    def as_dict(self) -> dict:
        return asdict(self)


def _log2_floor(x: int) -> int:
    return int(x).bit_length() - 1


def region_zero_bounds(shape: GridShape) -> RegionBounds:
    """Upper bounds on kept pairs per region of the radial mask.

    ``central_and_sink`` covers ``|i-j| <= 1`` plus frame 0, ``wide_bands``
    the bands whose diagonal width is at least one token, ``narrow_bands``
    the frame-subsampled bands. ``headline`` is ``4 s n (log2 n - log2 s)``.
    """
    f, s = shape.f, shape.s
    unit = 4 * s * s * f
    central = unit
    wide = unit * _log2_floor(s)
    narrow = max(0, _log2_floor(f) - _log2_floor(s)) * unit
    headline = 4.0 * s * shape.n * (math.log2(shape.n) - math.log2(s))
    return RegionBounds(central, wide, narrow, central + wide + narrow, headline)


@dataclass(frozen=True)
class ComplexityReport:
    frames: int
    tokens_per_frame: int
    actual_zeros: int
    region_total: int
    sink_slack: int
    headline_bound: int
    pass_region: bool
    pass_headline: bool | None

    @property
    def passed(self) -> bool:
        return self.pass_region and self.pass_headline is not False

    def as_dict(self) -> dict:
        d = asdict(self)
        d["headline_applicable"] = self.pass_headline is not None
        return d


def verify_complexity(shape: GridShape, pattern: PatternSpec = RADIAL) -> ComplexityReport:
    """Check the exact kept count against the region bounds.

    The headline bound ``4 s^2 f floor(log2 f)`` drops lower-order terms and
    is only checked once ``f >= 2 s``; below that ``pass_headline`` is None.
    """
    f, s = shape.f, shape.s
    actual = count_kept(shape, pattern)
    bounds = region_zero_bounds(shape)
    slack = 4 * s * s * f
    headline = 4 * s * s * f * _log2_floor(f)
    pass_headline = actual <= headline if f >= 2 * s else None
    return ComplexityReport(
        f, s, actual, bounds.total, slack, headline,
        actual <= bounds.total + slack, pass_headline,
    )


# -- error bound -------------------------------------------------------------

def error_bound(params: DecayParams, s: int) -> float:
    """Upper bound on ``||p~ - p||_1`` for one query row under the decay assumption."""
    if s < 1:
        raise ValueError("s must be >= 1")
    ea = math.exp(-params.alpha)
    eb = math.exp(-params.beta)
    spatial = 8.0 * math.exp(-params.beta * (s / 2 + 1)) / ((1 - ea) * (1 - eb))
    temporal = 4.0 * (1 + eb) / (1 - eb) * math.exp(-params.alpha * (s + 1)) / (1 - ea)
    return params.c_rel * (spatial + temporal)


def error_bound_value(alpha: float, beta: float, s: int, c_rel: float = 1.0) -> float:
    """Same as :func:`error_bound` but linear in ``c_rel`` down to ``c_rel = 0``."""
    if c_rel == 0:
        return 0.0
    return error_bound(DecayParams(alpha, beta, c_rel), s)


@dataclass
class ErrorBoundReport:
    trials: int
    rows_checked: int
    violations: int
    max_ratio: dict
    mean_ratio: dict
    max_l1: float
    max_agreement_gap: float
    worst: dict | None = None

    @property
    def passed(self) -> bool:
        return self.violations == 0 and self.max_agreement_gap <= 1e-10

    def as_dict(self) -> dict:
        d = asdict(self)
        d["passed"] = self.passed
        return d


def verify_error_bound(
    shape: GridShape,
    params: DecayParams | None = None,
    trials: int = 1000,
    seed: int = 0,
    pattern: PatternSpec = RADIAL,
    rate_range: tuple[float, float] = (0.1, 2.0),
    modes: tuple[str, ...] = ("worst_case", "random"),
) -> ErrorBoundReport:
    """Measure the masked-row error on synthetic decay rows against :func:`error_bound`.

    Each trial draws an anchor uniformly (and, when ``params`` is None, the
    rates uniformly from ``rate_range`` with ``c_rel = 1``) and checks one row
    per mode. Trial seeds are spawned from ``seed``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    children = np.random.SeedSequence(seed).spawn(trials)
    ratios = {m: [] for m in modes}
    violations = 0
    max_l1 = 0.0
    gap = 0.0
    worst = None
    worst_ratio = -1.0
    for child in children:
        rng = np.random.default_rng(child)
        if params is None:
            alpha, beta = rng.uniform(*rate_range, size=2)
            p = DecayParams(float(alpha), float(beta))
        else:
            p = params
        i0 = int(rng.integers(shape.f))
        k0 = int(rng.integers(shape.s))
        bound = error_bound(p, shape.s)
        for mode in modes:
            row = synth_decay_row(shape, i0, k0, p.alpha, p.beta, p.c_rel, mode, rng)
            direct, mass = row.l1_pair(pattern)
            gap = max(gap, abs(direct - mass))
            max_l1 = max(max_l1, direct)
            ratio = direct / bound
            ratios[mode].append(ratio)
            if direct > bound:
                violations += 1
            if ratio > worst_ratio:
                worst_ratio = ratio
                worst = {
                    "alpha": p.alpha, "beta": p.beta, "c_rel": p.c_rel,
                    "i0": i0, "k0": k0, "mode": mode,
                    "measured": direct, "bound": bound,
                }
    return ErrorBoundReport(
        trials=trials,
        rows_checked=trials * len(modes),
        violations=violations,
        max_ratio={m: float(np.max(r)) for m, r in ratios.items()},
        mean_ratio={m: float(np.mean(r)) for m, r in ratios.items()},
        max_l1=max_l1,
        max_agreement_gap=gap,
        worst=worst,
    )


# -- regression --------------------------------------------------------------

@dataclass(frozen=True)
class DecayFit:
    a: float
    b: float
    r2: float
    r2_linear: float

    def predict(self, x):
        return np.exp(-self.a * np.asarray(x, dtype=np.float64) + self.b)

    def as_dict(self) -> dict:
        return asdict(self)


def _r2(y, y_hat) -> float:
    ss_res = float(np.sum((y - y_hat) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        # constant data: a perfect fit by convention
        scale = max(float(np.max(np.abs(y))), 1.0)
        return 1.0 if ss_res <= (1e-12 * scale) ** 2 * len(y) else 0.0
    return 1.0 - ss_res / ss_tot


def fit_exponential(points) -> DecayFit:
    """Fit ``y = exp(-a x + b)`` by least squares on ``ln y``.

    ``r2`` is measured in log space, where the fit is solved; ``r2_linear``
    compares ``y`` against the fitted curve on the original scale.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be a sequence of (x, y) pairs")
    x, y = pts[:, 0], pts[:, 1]
    bad = np.flatnonzero(~(y > 0) | ~np.isfinite(y))
    if len(bad):
        raise ValueError(f"point {int(bad[0])} has nonpositive y={y[bad[0]]!r}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x values must be finite")
    if len(np.unique(x)) < 2:
        raise ValueError("need at least two distinct x values")
    ly = np.log(y)
    xm, lm = x.mean(), ly.mean()
    slope = float(np.sum((x - xm) * (ly - lm)) / np.sum((x - xm) ** 2))
    intercept = float(lm - slope * xm)
    a, b = -slope, intercept
    r2 = _r2(ly, b - a * x)
    r2_lin = _r2(y, np.exp(b - a * x))
    return DecayFit(a if a != 0 else 0.0, b, r2, r2_lin)


def decay_curves(source, shape: GridShape | None = None) -> dict:
    """Average attention score versus temporal and spatial distance.

    ``temporal[dt]`` averages ``p`` over same-position pairs whose frames are
    ``dt`` apart; ``spatial[dx]`` averages over same-frame pairs whose
    positions are ``dx`` apart. ``source`` is an instance or an ``n x n``
    row-stochastic matrix.
    """
    if isinstance(source, AttentionInstance):
        shape = shape or source.shape
        probs = attention_probs(source)
    else:
        if shape is None:
            raise ValueError("shape is required with a raw probability matrix")
        probs = np.asarray(source, dtype=np.float64)
    f, s = shape.f, shape.s
    if probs.shape != (shape.n, shape.n):
        raise ValueError(f"expected a {shape.n} x {shape.n} matrix, got {probs.shape}")
    p4 = probs.reshape(f, s, f, s)
    frame_pairs = np.einsum("ikjk->ij", p4) / s
    pos_pairs = np.einsum("ikil->kl", p4) / f
    dt = np.abs(np.subtract.outer(np.arange(f), np.arange(f)))
    dx = np.abs(np.subtract.outer(np.arange(s), np.arange(s)))
    temporal = np.bincount(dt.ravel(), frame_pairs.ravel()) / np.bincount(dt.ravel())
    spatial = np.bincount(dx.ravel(), pos_pairs.ravel()) / np.bincount(dx.ravel())
    return {
        "temporal": (np.arange(f), temporal),
        "spatial": (np.arange(s), spatial),
    }


# -- budget matching ---------------------------------------------------------

@dataclass(frozen=True)
class BudgetMatch:
    pattern: PatternSpec
    window: int
    kept_blocks: int
    reference_count: int
    under_budget: bool


def _with_window(pattern: PatternSpec, w: int) -> PatternSpec:
    kind = pattern.kind
    if kind is PatternKind.SPATIAL:
        return PatternSpec(kind, pattern.sink, temporal_window=w)
    if kind is PatternKind.TEMPORAL:
        return PatternSpec(kind, pattern.sink, spatial_window=w)
    if kind is PatternKind.STA:
        return PatternSpec(kind, pattern.sink, temporal_window=w, spatial_window=w)
    raise ValueError(f"pattern {kind.value!r} has no tunable window")


def _max_window(pattern: PatternSpec, shape: GridShape) -> int:
    kind = pattern.kind
    if kind is PatternKind.SPATIAL:
        return shape.f - 1
    if kind is PatternKind.TEMPORAL:
        return shape.s - 1
    return max(shape.f, shape.s) - 1


def budget_match(
    target: PatternSpec, reference_count: int, shape: GridShape, block_size: int
) -> BudgetMatch:
    """Window whose kept-block count is closest to ``reference_count``.

    Spatial tunes the temporal window, temporal tunes the spatial window and
    sta scales both windows together. Kept counts are nondecreasing in the
    window, so a bisection finds the first window reaching the reference;
    ties go to the smaller window. When even window 0 exceeds the reference,
    window 0 is returned with ``under_budget`` set.
    """
    _with_window(target, 0)  # rejects kinds without a window
    cache = {}

    def kept(w):
        if w not in cache:
            cache[w] = blockify(shape, _with_window(target, w), block_size).kept_blocks
        return cache[w]

    lo, hi = 0, _max_window(target, shape)
    if kept(lo) >= reference_count:
        w = lo
    elif kept(hi) <= reference_count:
        w = hi
    else:
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if kept(mid) >= reference_count:
                hi = mid
            else:
                lo = mid
        # kept(lo) < reference <= kept(hi)
        w = lo if reference_count - kept(lo) <= kept(hi) - reference_count else hi
    # equal counts are ties; prefer the smallest window
    while w > 0 and kept(w - 1) == kept(w):
        w -= 1
    return BudgetMatch(
        pattern=_with_window(target, w),
        window=w,
        kept_blocks=kept(w),
        reference_count=int(reference_count),
        under_budget=kept(0) > reference_count,
    )
