"""Command-line entry point: ``radial-attn <subcommand> [flags]``.

Every subcommand prints one JSON object (or CSV for ``compare`` and
``curves``) on stdout. Exit codes: 0 success, 1 failed verification,
2 usage or input error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import time
from contextlib import nullcontext

import numpy as np

from . import analysis, attention, blocksparse, grid
from .grid import GridShape, PatternKind, PatternSpec
from .presets import DEFAULT_BLOCK_SIZE, get_preset, load_presets

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
_KINDS = [k.value for k in PatternKind]


class UsageError(Exception):
    pass


def _emit(obj, pretty: bool = False, stream=None):
    stream = stream or sys.stdout
    if pretty:
        width = max(len(k) for k in obj)
        for key, value in obj.items():
            if isinstance(value, float):
                value = f"{value:.6g}"
            elif isinstance(value, dict):
                value = json.dumps(value)
            stream.write(f"{key:<{width}}  {value}\n")
    else:
        stream.write(json.dumps(obj, separators=(",", ":")) + "\n")


# -- argument parsing --------------------------------------------------------

def _add_shape(p, frames=None, tokens=None, block=DEFAULT_BLOCK_SIZE):
    p.add_argument("--preset", choices=sorted(load_presets()), help="published model configuration")
    p.add_argument("--frames", type=int, default=frames, help="latent frames f")
    p.add_argument("--tokens", type=int, default=tokens, help="tokens per frame s")
    p.add_argument("--block", type=int, default=block, help="block size B")


def _add_pattern(p, default="radial"):
    p.add_argument("--pattern", choices=_KINDS, default=default)
    sink = p.add_mutually_exclusive_group()
    sink.add_argument("--sink", dest="sink", action="store_true", default=None)
    sink.add_argument("--no-sink", dest="sink", action="store_false")
    p.add_argument("--temporal-window", type=int, help="max |i-j| for spatial/sta")
    p.add_argument("--spatial-window", type=int, help="max |k-l| for temporal/sta")


def _add_decay(p, alpha=None, beta=None):
    p.add_argument("--alpha", type=float, default=alpha, help="temporal decay rate")
    p.add_argument("--beta", type=float, default=beta, help="spatial decay rate")
    p.add_argument("--c-rel", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radial-attn",
        description="Radial sparse attention masks: layouts, statistics and checks.",
    )
    parser.add_argument("--pretty", action="store_true", help="human-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mask", help="write a .ramk block layout (and optional PGM)")
    _add_shape(p)
    _add_pattern(p)
    p.add_argument("--out", required=True, help="output .ramk path")
    p.add_argument("--pgm", help="also write a PGM block image")

    p = sub.add_parser("stats", help="kept blocks, sparsity and FLOPs of a layout")
    _add_shape(p)
    _add_pattern(p)
    p.add_argument("--mask", help="read the layout from a .ramk file instead")
    p.add_argument("--head-dim", type=int, default=128)
    p.add_argument("--heads", type=int, default=1)

    p = sub.add_parser("verify", help="complexity, error-bound and oracle checks")
    p.add_argument("--complexity", action="store_true")
    p.add_argument("--error-bound", action="store_true")
    p.add_argument("--oracle", action="store_true")
    p.add_argument("--frames", type=int, help="grid frames (complexity: 512, error bound: 64)")
    p.add_argument("--tokens", type=int, help="tokens per frame (complexity: 64, error bound: 16)")
    p.add_argument("--trials", type=int, default=1000)
    _add_decay(p)
    p.add_argument("--max-frames", type=int, default=12)
    p.add_argument("--max-tokens", type=int, default=12)

    p = sub.add_parser("compare", help="budget-matched pattern errors on a synthetic instance")
    _add_shape(p, frames=32, tokens=16, block=1)
    p.add_argument("--patterns", default="radial,sta,spatial,temporal,power,harmonic,dense")
    _add_decay(p, alpha=0.05, beta=1.0)
    p.add_argument("--head-dim", type=int, default=16)
    p.add_argument("--mode", choices=["random", "worst_case"], default="random")
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("curves", help="decay curves of a synthetic instance as x,y CSV")
    _add_shape(p, frames=16, tokens=16)
    _add_decay(p, alpha=0.5, beta=0.8)
    p.add_argument("--axis", choices=["temporal", "spatial"], default="temporal")
    p.add_argument("--mode", choices=["random", "worst_case"], default="worst_case")
    p.add_argument("--out", help="write CSV here instead of stdout")

    p = sub.add_parser("fit", help="fit y = exp(-a x + b) to an x,y CSV")
    p.add_argument("--input", required=True, help="CSV with x,y columns ('-' for stdin)")

    p = sub.add_parser("bench", help="time dense vs block-sparse reference attention")
    _add_shape(p, frames=256, tokens=16, block=16)
    _add_pattern(p)
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeats", type=int, default=3)
    return parser


def _shape_from(args) -> tuple[GridShape, int]:
    frames, tokens, block = args.frames, args.tokens, args.block
    if getattr(args, "preset", None):
        preset = get_preset(args.preset)
        frames = frames or preset.latent_frames
        tokens = tokens or preset.tokens_per_frame
    if frames is None or tokens is None:
        raise UsageError("--frames and --tokens (or --preset) are required")
    if frames < 1 or tokens < 1:
        raise UsageError("--frames and --tokens must be >= 1")
    if block < 1:
        raise UsageError("--block must be >= 1")
    return GridShape(frames, tokens), block


def _pattern_from(args, kind=None) -> PatternSpec:
    kind = PatternKind(kind or args.pattern)
    tw, sw = args.temporal_window, args.spatial_window
    if kind not in (PatternKind.SPATIAL, PatternKind.STA) and tw is not None:
        raise UsageError(f"--temporal-window does not apply to --pattern {kind.value}")
    if kind not in (PatternKind.TEMPORAL, PatternKind.STA) and sw is not None:
        raise UsageError(f"--spatial-window does not apply to --pattern {kind.value}")
    return PatternSpec.make(kind, sink=args.sink, temporal_window=tw, spatial_window=sw)


def _decay_from(args) -> analysis.DecayParams | None:
    if args.alpha is None and args.beta is None:
        return None
    if args.alpha is None or args.beta is None:
        raise UsageError("--alpha and --beta must be given together")
    try:
        return analysis.DecayParams(args.alpha, args.beta, args.c_rel)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _write_bytes(path: str, data: bytes):
    try:
        with open(path, "wb") as fh:
            fh.write(data)
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


def _open_text_out(path):
    if not path:
        return nullcontext(sys.stdout)
    try:
        return open(path, "w", newline="")
    except OSError as exc:
        raise UsageError(f"cannot write {path}: {exc.strerror}") from None


# -- subcommands -------------------------------------------------------------

def layout_stats(layout: blocksparse.BlockLayout, head_dim: int = 128, heads: int = 1) -> dict:
    flops = blocksparse.attention_flops(layout, head_dim, heads)
    return {
        "f": layout.shape.f,
        "s": layout.shape.s,
        "B": layout.block_size,
        "kept_blocks": layout.kept_blocks,
        "sparsity": blocksparse.sparsity(layout),
        "dense_flops": flops.dense_flops,
        "sparse_flops": flops.sparse_flops,
        "reduction": flops.reduction_ratio,
    }


def cmd_mask(args) -> int:
    shape, block = _shape_from(args)
    pattern = _pattern_from(args)
    layout = blocksparse.blockify(shape, pattern, block)
    if args.pgm:
        try:
            image = blocksparse.render_pgm(layout)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    _write_bytes(args.out, blocksparse.serialize(layout))
    if args.pgm:
        _write_bytes(args.pgm, image)
    _emit(
        {
            "f": shape.f,
            "s": shape.s,
            "B": block,
            "pattern": pattern.describe(),
            "kept_blocks": layout.kept_blocks,
            "sparsity": blocksparse.sparsity(layout),
            "out": args.out,
            "pgm": args.pgm,
        },
        args.pretty,
    )
    return EXIT_OK


def cmd_stats(args) -> int:
    if args.mask:
        try:
            with open(args.mask, "rb") as fh:
                layout = blocksparse.deserialize(fh.read())
        except OSError as exc:
            raise UsageError(f"cannot read {args.mask}: {exc.strerror}") from None
        except blocksparse.MaskFormatError as exc:
            raise UsageError(f"{args.mask}: {exc}") from None
    else:
        shape, block = _shape_from(args)
        layout = blocksparse.blockify(shape, _pattern_from(args), block)
    if args.head_dim < 1 or args.heads < 1:
        raise UsageError("--head-dim and --heads must be >= 1")
    _emit(layout_stats(layout, args.head_dim, args.heads), args.pretty)
    return EXIT_OK


def _frame_pair_oracle(shape: GridShape, sink: bool) -> int:
    """Kept count from the exact width/period of each frame pair."""
    s = shape.s
    k = np.arange(s)[:, None]
    l = np.arange(s)[None, :]
    total = 0
    for i in range(shape.f):
        for j in range(shape.f):
            width = grid.diagonal_width(i, j, shape)
            # exact rational comparison: (|k-l| + 1) * 2^e <= s
            block = (width >= 1) & ((np.abs(k - l) + 1) * width.denominator <= width.numerator)
            if abs(i - j) % grid.keep_period(i, j, shape) == 0:
                block = block | (k == l)
            if sink and j == 0:
                block = np.ones((s, s), dtype=bool)
            total += int(np.count_nonzero(block))
    return total


def oracle_check(max_frames: int, max_tokens: int) -> dict:
    mismatches = []
    shapes = 0
    for f in range(1, max_frames + 1):
        for s in range(1, max_tokens + 1):
            shape = GridShape(f, s)
            for sink in (True, False):
                pattern = PatternSpec(PatternKind.RADIAL, sink=sink)
                counted = grid.count_kept(shape, pattern)
                materialized = grid.materialize_mask(shape, pattern).kept
                oracle = _frame_pair_oracle(shape, sink)
                shapes += 1
                if not counted == materialized == oracle:
                    mismatches.append([f, s, sink, counted, materialized, oracle])
    return {"passed": not mismatches, "cases": shapes, "mismatches": mismatches[:10]}


def complexity_check(shape: GridShape) -> dict:
    report = analysis.verify_complexity(shape)
    out = report.as_dict()
    out["passed"] = report.passed
    return out


def cmd_verify(args) -> int:
    selected = [args.complexity, args.error_bound, args.oracle]
    if not any(selected):
        args.complexity = args.error_bound = args.oracle = True
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    checks = {}
    if args.oracle:
        if args.max_frames < 1 or args.max_tokens < 1:
            raise UsageError("--max-frames and --max-tokens must be >= 1")
        checks["oracle"] = oracle_check(args.max_frames, args.max_tokens)
    if args.complexity:
        shape = GridShape(args.frames or 512, args.tokens or 64)
        checks["complexity"] = complexity_check(shape)
    if args.error_bound:
        shape = GridShape(args.frames or 64, args.tokens or 16)
        report = analysis.verify_error_bound(shape, _decay_from(args), args.trials, args.seed)
        checks["error_bound"] = report.as_dict()
    passed = all(c["passed"] for c in checks.values())
    _emit({"passed": passed, "checks": checks}, args.pretty)
    return EXIT_OK if passed else EXIT_FAIL


def _fmt(x: float) -> str:
    return repr(float(x))


def compare_rows(
    shape: GridShape,
    block: int,
    kinds: list[str],
    alpha: float,
    beta: float,
    c_rel: float = 1.0,
    seed: int = 0,
    head_dim: int = 16,
    mode: str = "random",
) -> list[dict]:
    """Per-pattern errors on one synthetic instance, budgets matched to radial."""
    inst = attention.synth_decay_instance(shape, alpha, beta, c_rel, head_dim, seed, mode)
    exact = attention.dense_attention(inst)
    radial_blocks = blocksparse.blockify(shape, grid.RADIAL, block).kept_blocks
    idx = np.arange(shape.n)
    rows = []
    for kind in kinds:
        kind = PatternKind(kind)
        pattern = PatternSpec.make(kind)
        if kind is PatternKind.RADIAL:
            budget = "reference"
        elif kind is PatternKind.DENSE:
            budget = "dense"
        elif kind in (PatternKind.SPATIAL, PatternKind.TEMPORAL, PatternKind.STA):
            match = analysis.budget_match(pattern, radial_blocks, shape, block)
            pattern = match.pattern
            budget = "under_budget" if match.under_budget else "matched"
        else:
            budget = "unmatched"
        layout = blocksparse.blockify(shape, pattern, block)
        keep = grid.keep_tokens(shape, pattern, idx[:, None], idx[None, :])
        l1 = attention.all_rows_l1(inst, keep)
        # the dense pattern is exact attention by definition
        out = exact if kind is PatternKind.DENSE else attention.masked_attention(inst, pattern)
        rows.append(
            {
                "pattern": pattern.describe(),
                "kept_blocks": layout.kept_blocks,
                "sparsity": blocksparse.sparsity(layout),
                "mean_l1": float(l1.mean()),
                "max_l1": float(l1.max()),
                "output_mse": attention.output_mse(out, exact),
                "budget": budget,
            }
        )
    return rows


COMPARE_COLUMNS = ["pattern", "kept_blocks", "sparsity", "mean_l1", "max_l1", "output_mse", "budget"]


def cmd_compare(args) -> int:
    shape, block = _shape_from(args)
    if shape.n > grid.DEFAULT_MATERIALIZE_CAP:
        raise UsageError(f"compare needs n <= {grid.DEFAULT_MATERIALIZE_CAP}, got {shape.n}")
    kinds = [k.strip() for k in args.patterns.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in _KINDS]
    if unknown or not kinds:
        raise UsageError(f"--patterns: unknown kind(s) {unknown}; choose from {_KINDS}")
    params = _decay_from(args)
    rows = compare_rows(
        shape, block, kinds, params.alpha, params.beta, params.c_rel,
        args.seed, args.head_dim, args.mode,
    )
    if args.pretty:
        for row in rows:
            _emit(row, pretty=True)
            sys.stdout.write("\n")
        return EXIT_OK
    with _open_text_out(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPARE_COLUMNS)
        for row in rows:
            writer.writerow(
                [row["pattern"], row["kept_blocks"]]
                + [_fmt(row[c]) for c in ("sparsity", "mean_l1", "max_l1", "output_mse")]
                + [row["budget"]]
            )
    return EXIT_OK


def cmd_curves(args) -> int:
    shape, _ = _shape_from(args)
    if shape.n > grid.DEFAULT_MATERIALIZE_CAP:
        raise UsageError(f"curves needs n <= {grid.DEFAULT_MATERIALIZE_CAP}, got {shape.n}")
    params = _decay_from(args)
    inst = attention.synth_decay_instance(
        shape, params.alpha, params.beta, params.c_rel, 1, args.seed, args.mode
    )
    x, y = analysis.decay_curves(inst)[args.axis]
    with _open_text_out(args.out) as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for xi, yi in zip(x, y):
            writer.writerow([int(xi), _fmt(yi)])
    return EXIT_OK


def read_points(text: str) -> list[tuple[float, float]]:
    points = []
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 2:
            raise UsageError(f"row {lineno}: expected x,y")
        try:
            x, y = float(row[0]), float(row[1])
        except ValueError:
            if not points and lineno == 1:
                continue  # header
            raise UsageError(f"row {lineno}: not numeric: {row[:2]}") from None
        if not y > 0:
            raise UsageError(f"row {lineno}: y must be positive, got {row[1].strip()}")
        points.append((x, y))
    return points


def cmd_fit(args) -> int:
    if args.input == "-":
        text = sys.stdin.read()
    else:
        try:
            with open(args.input, newline="") as fh:
                text = fh.read()
        except OSError as exc:
            raise UsageError(f"cannot read {args.input}: {exc.strerror}") from None
    points = read_points(text)
    try:
        fit = analysis.fit_exponential(points)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    _emit(fit.as_dict(), args.pretty)
    return EXIT_OK


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def cmd_bench(args) -> int:
    shape, block = _shape_from(args)
    if shape.n > grid.DEFAULT_MATERIALIZE_CAP:
        raise UsageError(f"bench needs n <= {grid.DEFAULT_MATERIALIZE_CAP}, got {shape.n}")
    if args.repeats < 1 or args.head_dim < 1:
        raise UsageError("--repeats and --head-dim must be >= 1")
    pattern = _pattern_from(args)
    layout = blocksparse.blockify(shape, pattern, block)
    inst = attention.random_instance(shape, args.head_dim, args.seed)
    dense = _best_time(lambda: attention.dense_attention(inst), args.repeats)
    masked = _best_time(lambda: attention.masked_attention(inst, layout), args.repeats)
    flops = blocksparse.attention_flops(layout, args.head_dim)
    _emit(
        {
            "dense_seconds": dense,
            "masked_seconds": masked,
            "speedup": dense / masked,
            "flops_reduction": flops.reduction_ratio,
        },
        args.pretty,
    )
    return EXIT_OK


COMMANDS = {
    "mask": cmd_mask,
    "stats": cmd_stats,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "curves": cmd_curves,
    "fit": cmd_fit,
    "bench": cmd_bench,
}


def _thread_limit():
    value = os.environ.get("RADIAL_THREADS")
    if not value:
        return nullcontext()
    try:
        limit = int(value)
    except ValueError:
        raise UsageError(f"RADIAL_THREADS must be an integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, limit))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        with _thread_limit():
            return COMMANDS[args.command](args)
    except (UsageError, grid.MaskSizeError, attention.FullyMaskedRowError) as exc:
        parser.exit(EXIT_USAGE, f"radial-attn {args.command}: error: {exc}\n")


if __name__ == "__main__":
    sys.exit(main())
