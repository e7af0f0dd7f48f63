"""Acceptance suite: one recorded PASS/FAIL line per criterion.

Lines are printed in the "acceptance criteria" section of the pytest summary.
Each test asserts at the stated tolerance; nothing is relaxed to make a
criterion pass.
"""

import time

import numpy as np

from radial_attn import (
    DENSE,
    RADIAL,
    BlockLayout,
    GridShape,
    MaskFormatError,
    PatternKind,
    PatternSpec,
    attention_flops,
    blockify,
    count_kept,
    decay_curves,
    dense_attention,
    deserialize,
    fit_exponential,
    get_preset,
    keep_tokens,
    masked_attention,
    materialize_mask,
    random_instance,
    region_zero_bounds,
    serialize,
    sparsity,
    synth_decay_instance,
    verify_error_bound,
)
from radial_attn.analysis import budget_match, error_bound_value
from radial_attn.attention import all_rows_l1

import oracles

COMPLEXITY_S = (4, 16, 64)
COMPLEXITY_F = tuple(2**e for e in range(2, 11))  # 4, 8, ..., 1024


def _log2_floor(x):
    return x.bit_length() - 1


# 1 -------------------------------------------------------------------------

def test_c01_mask_oracle_equivalence(criterion):
    t0 = time.perf_counter()
    mismatches = []
    for f in range(1, 13):
        for s in range(1, 13):
            shape = GridShape(f, s)
            for sink in (True, False):
                pattern = PatternSpec(PatternKind.RADIAL, sink=sink)
                bits = materialize_mask(shape, pattern).bits
                brute = oracles.radial_bits(f, s, sink)
                counted = count_kept(shape, pattern)
                brute_count = sum(map(sum, brute))
                if not (bits.tolist() == brute and counted == int(bits.sum()) == brute_count):
                    mismatches.append((f, s, sink))
    elapsed = time.perf_counter() - t0
    criterion(
        "C1 mask oracle equivalence",
        not mismatches and elapsed < 30,
        f"288 cases, mismatches={mismatches[:5]}, {elapsed:.1f}s",
    )


# 2 -------------------------------------------------------------------------

def _complexity_table():
    return {
        (s, f): count_kept(GridShape(f, s), RADIAL) for s in COMPLEXITY_S for f in COMPLEXITY_F
    }


def test_c02a_region_bound(criterion):
    t0 = time.perf_counter()
    table = _complexity_table()
    bad = [
        (s, f, c, region_zero_bounds(GridShape(f, s)).total)
        for (s, f), c in table.items()
        if c > region_zero_bounds(GridShape(f, s)).total
    ]
    elapsed = time.perf_counter() - t0
    criterion("C2a count <= region-bound total", not bad and elapsed < 60, f"violations={bad}, {elapsed:.2f}s")


def test_c02b_headline_bound(criterion):
    table = _complexity_table()
    bad = [
        (s, f, c)
        for (s, f), c in table.items()
        if f >= 2 * s and c > 4 * s * s * f * _log2_floor(f)
    ]
    checked = sum(1 for (s, f) in table if f >= 2 * s)
    criterion("C2b count <= 4 s^2 f floor(log2 f) for f >= 2s", not bad, f"{checked} cases, violations={bad}")


def test_c02c_doubling_ratio(criterion):
    table = _complexity_table()
    ratios = {
        (s, f): table[(s, 2 * f)] / table[(s, f)]
        for s in COMPLEXITY_S
        for f in COMPLEXITY_F[:-1]
    }
    bad = {k: round(v, 3) for k, v in ratios.items() if v > 2.3}
    worst = max(ratios.items(), key=lambda kv: kv[1])
    criterion(
        "C2c doubling f multiplies count by <= 2.3",
        not bad,
        f"{len(bad)}/{len(ratios)} doublings exceed 2.3; worst s={worst[0][0]} f={worst[0][1]}->"
        f"{2 * worst[0][1]} ratio {worst[1]:.3f}; exceeding: {bad}",
    )


# 3 -------------------------------------------------------------------------

def test_c03_error_bound(criterion):
    t0 = time.perf_counter()
    rep = verify_error_bound(GridShape(64, 16), trials=1000, seed=0, rate_range=(0.1, 2.0))
    elapsed = time.perf_counter() - t0
    ok = rep.violations == 0 and rep.max_agreement_gap <= 1e-10 and elapsed < 60
    w = rep.worst
    criterion(
        "C3 measured l1 <= error bound (1000 trials x 2 modes)",
        ok,
        f"violations={rep.violations}/{rep.rows_checked}, agreement gap={rep.max_agreement_gap:.1e}, "
        f"max ratio={rep.max_ratio}, worst: alpha={w['alpha']:.3f} beta={w['beta']:.3f} "
        f"i0={w['i0']} k0={w['k0']} {w['mode']} measured={w['measured']:.3e} bound={w['bound']:.3e}, "
        f"{elapsed:.1f}s",
    )


def test_c03b_l1_agreement(criterion):
    rep = verify_error_bound(GridShape(64, 16), trials=1000, seed=0)
    criterion(
        "C3b direct l1 vs 2 Z_out/Z agree to 1e-10",
        rep.max_agreement_gap <= 1e-10,
        f"max gap={rep.max_agreement_gap:.2e}",
    )


# 4 -------------------------------------------------------------------------

def test_c04_bound_point_value(criterion):
    value = error_bound_value(alpha=1, beta=1, s=8, c_rel=1)
    oracle = oracles.boxed_bound(1.0, 1.0, 8)
    ok = abs(value - 0.1366) <= 1e-3 and abs(value - oracle) <= 1e-12
    criterion("C4 error_bound(1, 1, 8, 1) ~ 0.1366", ok, f"value={value:.6f}, oracle={oracle:.6f}")


# 5 -------------------------------------------------------------------------

def test_c05_dense_mask_identity(criterion):
    rng = np.random.default_rng(5)
    t0 = time.perf_counter()
    worst = 0.0
    shapes = [GridShape(64, 64)]
    while len(shapes) < 20:
        f, s = int(rng.integers(1, 65)), int(rng.integers(1, 65))
        if f * s <= 4096:
            shapes.append(GridShape(f, s))
    for idx, shape in enumerate(shapes):
        inst = random_instance(shape, int(rng.integers(4, 65)), seed=idx, scale=float(rng.uniform(0.5, 2)))
        diff = np.max(np.abs(masked_attention(inst, DENSE) - dense_attention(inst)))
        worst = max(worst, float(diff))
    elapsed = time.perf_counter() - t0
    criterion(
        "C5 dense-pattern masked attention == dense attention",
        worst <= 1e-12 and elapsed < 30,
        f"max abs diff={worst:.2e} over 20 instances (largest n=4096), {elapsed:.1f}s",
    )


# 6 -------------------------------------------------------------------------

def test_c06_flops_reduction(criterion):
    t0 = time.perf_counter()
    preset = get_preset("hunyuan-509")
    layout = blockify(preset.shape, RADIAL, preset.block_size)
    ratio = attention_flops(layout, head_dim=128).reduction_ratio
    elapsed = time.perf_counter() - t0
    criterion(
        "C6 hunyuan-509 FLOPs reduction in [7, 11]",
        7 <= ratio <= 11 and elapsed < 120,
        f"f={preset.shape.f} s={preset.shape.s} B={preset.block_size}: reduction={ratio:.2f}, "
        f"sparsity={sparsity(layout):.4f}, {elapsed:.1f}s",
    )


# 7 -------------------------------------------------------------------------

REPORTED_SPARSITY = [("wan-161", 0.736), ("hunyuan-253", 0.808), ("hunyuan-509", 0.883)]


def _preset_sparsities():
    out = []
    for name, target in REPORTED_SPARSITY:
        preset = get_preset(name)
        layout = blockify(preset.shape, RADIAL, preset.block_size)
        out.append((name, preset.shape.n, sparsity(layout), target))
    return out


def test_c07a_sparsity_tolerance(criterion):
    rows = _preset_sparsities()
    misses = [(name, round(sp, 4), t) for name, _, sp, t in rows if abs(sp - t) > 0.05]
    detail = ", ".join(f"{name}: {sp:.3f} vs {t:.3f}" for name, _, sp, t in rows)
    criterion("C7a block sparsity within 5 pp of reported values", not misses, detail)


def test_c07b_sparsity_trend(criterion):
    rows = sorted(_preset_sparsities(), key=lambda r: r[1])
    sps = [sp for _, _, sp, _ in rows]
    ok = [name for name, *_ in rows] == [name for name, _ in REPORTED_SPARSITY] and all(
        a < b for a, b in zip(sps, sps[1:])
    )
    criterion(
        "C7b sparsity strictly increasing with n",
        ok,
        ", ".join(f"{name} n={n}: {sp:.4f}" for name, n, sp, _ in rows),
    )


# 8 -------------------------------------------------------------------------

def test_c08a_noiseless_fit(criterion):
    x = np.arange(20, dtype=float)
    fit = fit_exponential(np.column_stack([x, np.exp(-0.8 * x + 0.3)]))
    ok = abs(fit.r2 - 1) <= 1e-12 and abs(fit.a - 0.8) <= 1e-12 and abs(fit.b - 0.3) <= 1e-12
    criterion("C8a noiseless exponential recovered exactly", ok, f"a={fit.a!r} b={fit.b!r} r2={fit.r2!r}")


def test_c08b_decay_curve_fit(criterion):
    inst = synth_decay_instance(GridShape(16, 16), 0.5, 0.8, mode="worst_case", seed=0)
    curves = decay_curves(inst)
    fits = {axis: fit_exponential(np.column_stack(curves[axis])) for axis in ("temporal", "spatial")}
    ok = all(fit.r2 >= 0.985 for fit in fits.values())
    criterion(
        "C8b decay-curve fits on a worst-case instance reach r2 >= 0.985",
        ok,
        ", ".join(f"{axis}: r2={fit.r2:.4f} (linear {fit.r2_linear:.4f}), a={fit.a:.3f}" for axis, fit in fits.items()),
    )


# 9 -------------------------------------------------------------------------

def test_c09_radial_beats_sta_at_matched_budget(criterion):
    shape = GridShape(32, 16)
    B = 1
    ref = blockify(shape, RADIAL, B).kept_blocks
    match = budget_match(PatternSpec.make("sta"), ref, shape, B)
    idx = np.arange(shape.n)
    radial_bits = keep_tokens(shape, RADIAL, idx[:, None], idx[None, :])
    sta_bits = keep_tokens(shape, match.pattern, idx[:, None], idx[None, :])
    losses = []
    gaps = []
    for seed in range(100):
        inst = synth_decay_instance(shape, 0.05, 1.0, seed=seed)
        r = float(all_rows_l1(inst, radial_bits).mean())
        t = float(all_rows_l1(inst, sta_bits).mean())
        gaps.append(t - r)
        if not r < t:
            losses.append(seed)
    criterion(
        "C9 radial mean l1 < STA mean l1 at matched budget (100 trials)",
        not losses,
        f"radial kept={ref}, {match.pattern.describe()} kept={match.kept_blocks}; "
        f"trials lost={losses}, min gap={min(gaps):.3f}",
    )


# 10 ------------------------------------------------------------------------

def _random_layout(rng):
    shape = GridShape(int(rng.integers(1, 48)), int(rng.integers(1, 48)))
    B = int(rng.integers(1, 24))
    if rng.random() < 0.5:
        kind = list(PatternKind)[int(rng.integers(len(PatternKind)))]
        return blockify(shape, PatternSpec.make(kind, sink=bool(rng.integers(2))), B)
    R = -(-shape.n // B)
    grid = rng.random((R, R)) < rng.random()
    kind = list(PatternKind)[int(rng.integers(len(PatternKind)))]
    return BlockLayout.from_dense(shape, B, grid, kind=kind, sink=bool(rng.integers(2)))


def _corruptions(data, rng):
    yield data[: int(rng.integers(0, len(data)))]
    yield data + bytes(rng.integers(0, 256, size=int(rng.integers(1, 9)), dtype=np.uint8))
    for _ in range(6):
        buf = bytearray(data)
        pos = int(rng.integers(0, min(len(buf), 24)))
        buf[pos] = (buf[pos] + int(rng.integers(1, 256))) % 256
        yield bytes(buf)
    buf = bytearray(data)
    pos = int(rng.integers(0, len(buf)))
    buf[pos] ^= 0xFF
    yield bytes(buf)


def test_c10_serialization(criterion):
    rng = np.random.default_rng(10)
    mismatched = 0
    crashes = []
    structured = 0
    for _ in range(200):
        layout = _random_layout(rng)
        data = serialize(layout)
        back = deserialize(data)
        if not (back == layout and serialize(back) == data):
            mismatched += 1
        for bad in _corruptions(data, rng):
            try:
                deserialize(bad)
            except MaskFormatError:
                structured += 1
            except Exception as exc:  # anything else is a crash
                crashes.append(type(exc).__name__)
    criterion(
        "C10 round trip and structured errors on corruption",
        mismatched == 0 and not crashes,
        f"200 layouts, {mismatched} round-trip mismatches, {structured} structured errors, crashes={crashes[:5]}",
    )
