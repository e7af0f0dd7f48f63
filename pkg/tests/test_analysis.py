import math

import numpy as np
import pytest

from radial_attn import (
    RADIAL,
    DecayParams,
    GridShape,
    PatternSpec,
    blockify,
    budget_match,
    count_kept,
    decay_curves,
    error_bound,
    fit_exponential,
    region_zero_bounds,
    synth_decay_instance,
    verify_complexity,
    verify_error_bound,
)
from radial_attn.analysis import error_bound_value
from radial_attn.attention import attention_probs

import oracles


def test_region_bounds_example():
    b = region_zero_bounds(GridShape(8, 4))
    assert b.central_and_sink == 512
    assert b.wide_bands == 1024
    assert b.narrow_bands == 512
    assert b.total == 2048
    assert b.headline == pytest.approx(4 * 4 * 32 * (5 - 2))


def test_region_bounds_hold_against_bruteforce():
    for f in (1, 2, 5, 8, 12):
        for s in (1, 2, 4, 7):
            assert oracles.radial_count(f, s, True) <= region_zero_bounds(GridShape(f, s)).total + 4 * s * s * f


def test_verify_complexity_report():
    rep = verify_complexity(GridShape(16, 4))
    assert rep.actual_zeros == count_kept(GridShape(16, 4), RADIAL)
    assert rep.pass_region and rep.pass_headline is True
    assert verify_complexity(GridShape(4, 16)).pass_headline is None


def test_error_bound_point_value():
    assert error_bound(DecayParams(1.0, 1.0), 8) == pytest.approx(oracles.boxed_bound(1, 1, 8), rel=1e-14)
    assert error_bound(DecayParams(1.0, 1.0), 8) == pytest.approx(0.13659168761219274, abs=1e-12)


def test_error_bound_shape():
    base = error_bound(DecayParams(0.5, 0.5), 16)
    assert error_bound(DecayParams(0.5, 0.5, 3.0), 16) == pytest.approx(3 * base)
    assert error_bound(DecayParams(1.0, 0.5), 16) < base
    assert error_bound(DecayParams(0.5, 1.0), 16) < base
    assert error_bound(DecayParams(0.5, 0.5), 32) < base
    assert error_bound_value(0.5, 0.5, 16, c_rel=0) == 0.0
    with pytest.raises(ValueError):
        DecayParams(0.0, 1.0)


def test_verify_error_bound_is_deterministic_and_consistent():
    shape = GridShape(16, 8)
    a = verify_error_bound(shape, trials=20, seed=3)
    b = verify_error_bound(shape, trials=20, seed=3)
    assert a.as_dict() == b.as_dict()
    assert a.rows_checked == 40
    assert a.max_agreement_gap <= 1e-10


def test_verify_error_bound_dense_pattern_never_violates():
    from radial_attn import DENSE

    rep = verify_error_bound(GridShape(8, 4), trials=10, seed=0, pattern=DENSE)
    assert rep.violations == 0 and rep.max_l1 == 0.0


def test_fit_recovers_noiseless_exponential():
    x = np.arange(12, dtype=float)
    fit = fit_exponential(np.column_stack([x, np.exp(-0.37 * x + 1.5)]))
    assert fit.a == pytest.approx(0.37, abs=1e-12)
    assert fit.b == pytest.approx(1.5, abs=1e-12)
    assert fit.r2 == pytest.approx(1.0, abs=1e-12)
    assert fit.r2_linear == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(fit.predict(x), np.exp(-0.37 * x + 1.5))


def test_fit_hand_example():
    # ln y = [0, -1, -3]: slope -1.5, intercept 1/6
    pts = [(0, 1.0), (1, math.exp(-1)), (2, math.exp(-3))]
    fit = fit_exponential(pts)
    assert fit.a == pytest.approx(1.5)
    assert fit.b == pytest.approx(1 / 6)
    # residuals -1/6, 1/3, -1/6 against total 14/3
    assert fit.r2 == pytest.approx(1 - (1 / 6) / (14 / 3))


def test_fit_constant_data():
    fit = fit_exponential([(0, 2.0), (1, 2.0), (2, 2.0)])
    assert fit.a == 0.0 and fit.r2 == 1.0


def test_fit_errors():
    with pytest.raises(ValueError, match="point 1"):
        fit_exponential([(0, 1.0), (1, 0.0)])
    with pytest.raises(ValueError):
        fit_exponential([(1, 1.0), (1, 2.0)])
    with pytest.raises(ValueError):
        fit_exponential([1, 2, 3])


def test_decay_curves_against_loops():
    shape = GridShape(4, 3)
    inst = synth_decay_instance(shape, 0.5, 0.8, seed=1)
    curves = decay_curves(inst)
    p = attention_probs(inst)
    f, s = shape.f, shape.s
    for dt in range(f):
        vals = [p[i * s + k, j * s + k] for i in range(f) for j in range(f) for k in range(s) if abs(i - j) == dt]
        assert curves["temporal"][1][dt] == pytest.approx(np.mean(vals))
    for dx in range(s):
        vals = [p[i * s + k, i * s + l] for i in range(f) for k in range(s) for l in range(s) if abs(k - l) == dx]
        assert curves["spatial"][1][dx] == pytest.approx(np.mean(vals))
    assert list(curves["temporal"][0]) == list(range(f))


def test_decay_curves_needs_shape_for_matrix():
    with pytest.raises(ValueError):
        decay_curves(np.eye(4))
    out = decay_curves(np.eye(4), GridShape(2, 2))
    assert out["temporal"][1].tolist() == [1.0, 0.0]


def _scan(target, reference, shape, B, windows):
    best = None
    for w in windows:
        c = blockify(shape, target(w), B).kept_blocks
        if best is None or abs(c - reference) < abs(best[1] - reference):
            best = (w, c)
    return best


@pytest.mark.parametrize("kind", ["spatial", "temporal", "sta"])
@pytest.mark.parametrize("B", [1, 4])
def test_budget_match_against_linear_scan(kind, B):
    shape = GridShape(16, 8)
    reference = blockify(shape, RADIAL, B).kept_blocks
    key = {"spatial": "temporal_window", "temporal": "spatial_window"}
    if kind == "sta":
        make = lambda w: PatternSpec.make("sta", temporal_window=w, spatial_window=w)
        top = 15
    else:
        make = lambda w: PatternSpec.make(kind, **{key[kind]: w})
        top = 15 if kind == "spatial" else 7
    match = budget_match(make(0), reference, shape, B)
    w, c = _scan(make, reference, shape, B, range(top + 1))
    assert (match.window, match.kept_blocks) == (w, c)
    assert match.reference_count == reference


def test_budget_match_under_budget_flag():
    shape = GridShape(8, 8)
    sp = PatternSpec.make("spatial", temporal_window=0)
    match = budget_match(sp, 1, shape, 8)
    assert match.window == 0 and match.under_budget
    with pytest.raises(ValueError):
        budget_match(RADIAL, 10, shape, 8)
