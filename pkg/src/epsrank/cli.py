"""Command-line harness: generate, rankbound, approx, scan.

Exit codes: 0 success, 2 usage or parse failure, 3 numerical failure,
4 capacity or capability limit.
"""

from __future__ import annotations

import argparse
import sys
import time
from dataclasses import dataclass

import numpy as np

from ._rng import derive_seed
from .errors import (
    CapabilityError,
    CapacityError,
    MatrixFormatError,
    NumericalError,
    RetriesExhaustedError,
    SpecFormatError,
)
from .jl import (
    save_compressed,
    theorem0_compress,
    theorem2_compress,
    theorem3_compress,
    theorem4_compress,
    factorize_piecewise,
)
from .lvm import (
    LvmSpec,
    PiecewiseLvmSpec,
    _draw_latents,
    _read_pairs,
    _build_single,
    generate_matrix,
    load_spec_file,
    rbf_spec,
    sample_latents,
)
from ._rng import ROLE_ALPHA
from .matcore import (
    max_abs_norm,
    rank_eps_upper_bound,
    read_matrix,
    spectral_norm,
    write_matrix,
)
from .taylor import save_factorization, taylor_factorize

CSV_HEADER = "epsilon,n,draw,rank_upper_bound,wall_time_seconds"

APPROX_METHODS = ("theorem0", "taylor", "theorem2", "theorem3", "theorem4")


# ---------------------------------------------------------------------------
# Scan configuration and execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanConfig:
    """One scaling scan: square n x n draws over a tolerance/size grid."""

    model: LvmSpec
    epsilons: tuple
    n_values: tuple
    draws_per_cell: int
    master_seed: int

    def __post_init__(self):
        if not self.epsilons or any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if list(self.epsilons) != sorted(self.epsilons):
            raise ValueError("epsilons must be sorted ascending")
        if not self.n_values or any(n < 1 for n in self.n_values):
            raise ValueError("n_values must be positive integers")
        if list(self.n_values) != sorted(self.n_values):
            raise ValueError("n_values must be sorted ascending")
        if self.draws_per_cell < 1:
            raise ValueError("draws_per_cell must be >= 1")


@dataclass(frozen=True)
class ScanRecord:
    """One (epsilon, n, draw) cell result; draw is an index or 'max'."""

    epsilon: float
    n: int
    draw: object
    rank_upper_bound: int
    wall_time_seconds: float


_SCAN_KEYS = ("epsilons", "n_values", "draws_per_cell", "master_seed")


def parse_scan_config(text: str) -> ScanConfig:
    """Parse a scan file: model keys plus the scan grid, one flat file."""
    pairs = _read_pairs(text)
    scan_fields = {}
    for key in _SCAN_KEYS:
        if key not in pairs:
            raise SpecFormatError(f"missing required key {key}")
        scan_fields[key] = pairs.pop(key)
    pairs.pop("seed", None)  # model files may carry a default seed; unused here
    model = _build_single(pairs)
    if not isinstance(model, LvmSpec):
        raise SpecFormatError("scan config requires a single (non-piecewise) model")

    def floats(key):
        value, line_no = scan_fields[key]
        try:
            return tuple(float(p) for p in value.split(","))
        except ValueError as exc:
            raise SpecFormatError(f"bad value for {key}: {value!r}", line_no) from exc

    def ints(key):
        value, line_no = scan_fields[key]
        try:
            return tuple(int(p) for p in value.split(","))
        except ValueError as exc:
            raise SpecFormatError(f"bad value for {key}: {value!r}", line_no) from exc

    try:
        return ScanConfig(
            model=model,
            epsilons=floats("epsilons"),
            n_values=ints("n_values"),
            draws_per_cell=ints("draws_per_cell")[0],
            master_seed=ints("master_seed")[0],
        )
    except ValueError as exc:
        raise SpecFormatError(str(exc)) from exc


def full_scale_config(master_seed: int = 0) -> ScanConfig:
    """The large reference scan (hours of SVD time; not for routine runs)."""
    return ScanConfig(
        model=rbf_spec(N=1000, R=1.0, distribution="sphere"),
        epsilons=(0.0001, 0.0003, 0.001, 0.003, 0.01, 0.03),
        n_values=(300, 600, 1000, 1500, 2000, 2500, 3000),
        draws_per_cell=5,
        master_seed=master_seed,
    )


def run_scan(config: ScanConfig) -> list:
    """Execute every (epsilon, n, draw) cell and append per-cell max rows.

    Cell seeds are hashed from (master_seed, eps index, n index, draw),
    so extending the grid never perturbs existing cells.  Rows come out
    sorted by (epsilon, n, draw) with the max row after the draws.
    """
    records = []
    for ei, eps in enumerate(config.epsilons):
        for ni, n in enumerate(config.n_values):
            ranks = []
            cell_time = 0.0
            for draw in range(config.draws_per_cell):
                seed = derive_seed(config.master_seed, ei, ni, draw)
                t0 = time.perf_counter()
                try:
                    sample = sample_latents(config.model, n, n, seed)
                    x = generate_matrix(config.model, sample)
                    bound = rank_eps_upper_bound(x, eps)
                except Exception as exc:
                    raise NumericalError(
                        f"scan aborted at cell epsilon={eps}, n={n}, "
                        f"draw={draw}: {exc}"
                    ) from exc
                elapsed = time.perf_counter() - t0
                cell_time += elapsed
                ranks.append(bound.rank_upper_bound)
                records.append(
                    ScanRecord(eps, n, draw, bound.rank_upper_bound, elapsed)
                )
            records.append(ScanRecord(eps, n, "max", max(ranks), cell_time))
    return records


def write_scan_csv(records, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(CSV_HEADER + "\n")
        for rec in records:
            fh.write(
                f"{rec.epsilon},{rec.n},{rec.draw},{rec.rank_upper_bound},"
                f"{rec.wall_time_seconds:.6f}\n"
            )


# ---------------------------------------------------------------------------
# Self-contained SVG plot of the scan
# ---------------------------------------------------------------------------

_SVG_W, _SVG_H = 900, 600
_ML, _MR, _MT, _MB = 80, 30, 40, 70
_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _nice_step(span: float) -> float:
    raw = span / 6.0
    mag = 10.0 ** np.floor(np.log10(max(raw, 1e-12)))
    for mult in (1, 2, 5, 10):
        if mult * mag >= raw:
            return mult * mag
    return 10 * mag


def render_scan_svg(records, path) -> None:
    """Line plot of max rank upper bound vs n, one curve per epsilon,
    log-scaled n axis, fixed 900 x 600 viewport, no external assets."""
    curves = {}
    for rec in records:
        if rec.draw == "max":
            curves.setdefault(rec.epsilon, []).append((rec.n, rec.rank_upper_bound))
    if not curves:
        raise ValueError("no max rows to plot")
    all_n = sorted({n for pts in curves.values() for n, _ in pts})
    max_rank = max(r for pts in curves.values() for _, r in pts)
    x_lo, x_hi = np.log10(all_n[0] * 0.9), np.log10(all_n[-1] * 1.1)
    y_hi = max(1.0, max_rank * 1.05)
    plot_w = _SVG_W - _ML - _MR
    plot_h = _SVG_H - _MT - _MB

    def sx(n):
        return _ML + plot_w * (np.log10(n) - x_lo) / (x_hi - x_lo)

    def sy(r):
        return _MT + plot_h * (1.0 - r / y_hi)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" '
        f'height="{_SVG_H}" viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<rect x="{_ML}" y="{_MT}" width="{plot_w}" height="{plot_h}" '
        f'fill="none" stroke="black"/>',
    ]
    font = 'font-family="sans-serif" font-size="13"'
    # x ticks at the sampled n values (log axis)
    for n in all_n:
        x = sx(n)
        parts.append(
            f'<line x1="{x:.1f}" y1="{_MT + plot_h}" x2="{x:.1f}" '
            f'y2="{_MT + plot_h + 6}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{x:.1f}" y="{_MT + plot_h + 22}" text-anchor="middle" '
            f"{font}>{n}</text>"
        )
    # y ticks
    step = _nice_step(y_hi)
    tick = 0.0
    while tick <= y_hi:
        y = sy(tick)
        parts.append(
            f'<line x1="{_ML - 6}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" '
            f'stroke="black"/>'
        )
        parts.append(
            f'<text x="{_ML - 10}" y="{y + 4:.1f}" text-anchor="end" '
            f"{font}>{int(tick)}</text>"
        )
        tick += step
    parts.append(
        f'<text x="{_ML + plot_w / 2:.1f}" y="{_SVG_H - 18}" '
        f'text-anchor="middle" {font}>n</text>'
    )
    parts.append(
        f'<text x="22" y="{_MT + plot_h / 2:.1f}" text-anchor="middle" {font} '
        f'transform="rotate(-90 22 {_MT + plot_h / 2:.1f})">rank upper bound</text>'
    )
    for idx, (eps, pts) in enumerate(sorted(curves.items())):
        color = _PALETTE[idx % len(_PALETTE)]
        pts = sorted(pts)
        coords = " ".join(f"{sx(n):.1f},{sy(r):.1f}" for n, r in pts)
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" '
            f'stroke-width="2"/>'
        )
        for n, r in pts:
            parts.append(
                f'<circle cx="{sx(n):.1f}" cy="{sy(r):.1f}" r="3" '
                f'fill="{color}"/>'
            )
        ly = _MT + 18 + 18 * idx
        parts.append(
            f'<line x1="{_ML + 12}" y1="{ly - 4}" x2="{_ML + 40}" '
            f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{_ML + 46}" y="{ly}" {font}>eps={eps}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(parts) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    spec_file = load_spec_file(args.spec)
    model = spec_file.model
    if isinstance(model, PiecewiseLvmSpec):
        from .lvm import generate_piecewise_matrix

        sample = sample_latents(model.sampling_spec(), args.m, args.n, _seed_of(args, spec_file))
        x = generate_piecewise_matrix(model, sample)
    else:
        sample = sample_latents(model, args.m, args.n, _seed_of(args, spec_file))
        x = generate_matrix(model, sample)
    write_matrix(x, args.out)
    print(f"rows={x.shape[0]}")
    print(f"cols={x.shape[1]}")
    print(f"max_abs_norm={max_abs_norm(x)!r}")
    print(f"spectral_norm={spectral_norm(x)!r}")
    return 0


def _seed_of(args, spec_file) -> int:
    if args.seed is not None:
        return args.seed
    if spec_file.seed is not None:
        return spec_file.seed
    return 0


def cmd_rankbound(args) -> int:
    x = read_matrix(args.matrix)
    bound = rank_eps_upper_bound(x, args.epsilon)
    print(f"rank_upper_bound={bound.rank_upper_bound}")
    print("r,mu_r")
    for r, mu in enumerate(bound.mu_curve):
        print(f"{r},{float(mu)!r}")
    return 0


def cmd_approx(args) -> int:
    method = args.method
    if method == "theorem0":
        if args.matrix is None:
            raise SpecFormatError("method theorem0 requires --matrix")
        x = read_matrix(args.matrix)
        approx = theorem0_compress(x, args.epsilon, args.seed,
                                   max_retries=args.max_retries)
        save_compressed(approx, args.out)
        return _print_approx(approx)
    if args.spec is None:
        raise SpecFormatError(f"method {method} requires --spec")
    spec_file = load_spec_file(args.spec)
    model = spec_file.model
    seed = args.seed
    if method == "theorem3":
        if not isinstance(model, PiecewiseLvmSpec):
            raise SpecFormatError("method theorem3 requires a piecewise model file")
        sample = sample_latents(model.sampling_spec(), args.m, args.n, seed)
        pfact = factorize_piecewise(model, sample, args.epsilon / 2.0)
        approx = theorem3_compress(pfact, args.epsilon, seed,
                                   max_retries=args.max_retries)
        save_compressed(approx, args.out)
        return _print_approx(approx)
    if isinstance(model, PiecewiseLvmSpec):
        raise SpecFormatError(f"method {method} requires a single-piece model file")
    if method == "taylor":
        sample = sample_latents(model, args.m, args.n, seed)
        fact = taylor_factorize(model, sample, args.epsilon)
        save_factorization(fact, args.out)
        print(f"achieved_max_error={fact.error_bound!r}")
        print(f"rank={fact.n_tilde}")
        print("retries=0")
        print(f"nontrivial={fact.n_tilde < min(args.m, args.n)}")
        return 0
    if method == "theorem2":
        sample = sample_latents(model, args.m, args.n, seed)
        fact = taylor_factorize(model, sample, args.epsilon / 2.0)
        approx = theorem2_compress(fact, args.epsilon, seed,
                                   max_retries=args.max_retries)
        save_compressed(approx, args.out)
        return _print_approx(approx)
    # theorem4
    alphas = _draw_latents(model, ROLE_ALPHA, args.n, seed)
    approx = theorem4_compress(model, alphas, args.epsilon, seed,
                               max_retries=args.max_retries)
    save_compressed(approx, args.out)
    return _print_approx(approx)


def _print_approx(approx) -> int:
    print(f"achieved_max_error={approx.achieved_max_error!r}")
    print(f"rank={approx.inner_dim}")
    print(f"retries={approx.retries_used}")
    print(f"nontrivial={approx.nontrivial}")
    return 0


def cmd_scan(args) -> int:
    if args.full_scale:
        master = 0
        if args.config is not None:
            with open(args.config, "r", encoding="utf-8") as fh:
                master = parse_scan_config(fh.read()).master_seed
        config = full_scale_config(master)
    else:
        if args.config is None:
            raise SpecFormatError("scan requires --config (or --full-scale)")
        with open(args.config, "r", encoding="utf-8") as fh:
            config = parse_scan_config(fh.read())
    records = run_scan(config)
    write_scan_csv(records, args.out_csv)
    if args.out_svg is not None:
        render_scan_svg(records, args.out_svg)
    cells = len(config.epsilons) * len(config.n_values)
    print(f"cells={cells}")
    print(f"rows={len(records)}")
    print(f"csv={args.out_csv}")
    if args.out_svg is not None:
        print(f"svg={args.out_svg}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and exit-code mapping
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epsrank",
        description="Entrywise low-rank approximation toolkit for latent "
        "variable model matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="draw a model matrix and write it")
    g.add_argument("--spec", required=True, help="model file")
    g.add_argument("--m", type=int, required=True, help="rows")
    g.add_argument("--n", type=int, required=True, help="columns")
    g.add_argument("--seed", type=int, default=None)
    g.add_argument("--out", required=True, help="output matrix path")
    g.set_defaults(func=cmd_generate)

    rb = sub.add_parser("rankbound", help="epsilon-rank upper bound of a matrix file")
    rb.add_argument("--matrix", required=True)
    rb.add_argument("--epsilon", type=float, required=True)
    rb.set_defaults(func=cmd_rankbound)

    ap = sub.add_parser("approx", help="build a factored approximation")
    ap.add_argument("--method", required=True, choices=APPROX_METHODS)
    ap.add_argument("--spec", default=None, help="model file (non-theorem0 methods)")
    ap.add_argument("--matrix", default=None, help="matrix file (theorem0)")
    ap.add_argument("--epsilon", type=float, required=True)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--m", type=int, default=None, help="rows (model methods)")
    ap.add_argument("--n", type=int, default=None, help="columns (model methods)")
    ap.add_argument("--out", required=True, help="output file prefix")
    ap.add_argument("--max-retries", type=int, default=20)
    ap.set_defaults(func=cmd_approx)

    sc = sub.add_parser("scan", help="rank-bound scaling scan with CSV/SVG output")
    sc.add_argument("--config", default=None, help="scan configuration file")
    sc.add_argument("--out-csv", required=True)
    sc.add_argument("--out-svg", default=None)
    sc.add_argument(
        "--full-scale",
        action="store_true",
        help="run the large reference scan instead of the config grid",
    )
    sc.set_defaults(func=cmd_scan)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "approx" and args.method != "theorem0":
        need_m = args.method in ("taylor", "theorem2", "theorem3")
        if args.n is None or (need_m and args.m is None):
            parser.error(f"method {args.method} requires --n"
                         + (" and --m" if need_m else ""))
    try:
        return args.func(args)
    except (SpecFormatError, MatrixFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CapacityError, CapabilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except (NumericalError, RetriesExhaustedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
