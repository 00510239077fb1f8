"""Command-line interface: ``fullflow flow``, ``fullflow grid``, ``fullflow bench``.

Exit codes: 0 success, 1 usage, 2 input error, 3 memory cap exceeded,
4 internal error.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import platform
import sys
import time

import numpy as np

from . import kernels
from .costvolume import MemoryBudgetError
from .flowio import (FlowFormatError, ImageFormatError, compute_metrics, error_map, flow_to_color,
                     read_flo, read_image, write_flo, write_image)
from .model import DATA_TERMS, PENALTY_KINDS, Penalty, SolverConfig
from .pipeline import PipelineError, estimate_flow, memory_estimate
from .postprocess import write_matches

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_MEMORY, EXIT_INTERNAL = 0, 1, 2, 3, 4

FLOW_FILE = "out.flo"
FLOW_PNG = "flow.png"
ERROR_PNG = "error.png"
MATCHES = "matches.txt"
MANIFEST = "manifest.json"
METRICS = "metrics.csv"


class UsageError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _tau(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'inf', got {text!r}") from None
    if math.isnan(v) or v <= 0:
        raise argparse.ArgumentTypeError("tau must be positive or 'inf'")
    return v


def _default_threads() -> int:
    env = os.environ.get("FULLFLOW_THREADS")
    if env is None or env.strip() == "":
        return 1
    try:
        n = int(env)
    except ValueError:
        raise UsageError(f"FULLFLOW_THREADS must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("FULLFLOW_THREADS must be >= 1")
    return n


def _add_solver_flags(p: argparse.ArgumentParser, threads_default: int, tuned: bool = True) -> None:
    d = SolverConfig()
    g = p.add_argument_group("model and solver")
    if tuned:
        g.add_argument("--lambda", dest="lam", type=float, default=d.lam, help="regularisation weight")
        g.add_argument("--tau", type=_tau, default=d.tau, help="truncation threshold (number or 'inf')")
        g.add_argument("--beta", type=float, default=d.beta, help="edge-weight bandwidth")
        g.add_argument("--zeta", type=float, default=d.zeta, help="cost of leaving the image")
        g.add_argument("--delta", type=float, default=d.delta, help="consistency threshold (squared px)")
        g.add_argument("--penalty", choices=PENALTY_KINDS, default=d.penalty.kind)
        g.add_argument("--data-term", choices=DATA_TERMS, default=d.data_term)
    g.add_argument("--radius", type=int, default=d.radius, help="label radius at solver resolution")
    g.add_argument("--iterations", type=int, default=d.iterations)
    g.add_argument("--charbonnier-eps", type=float, default=d.penalty.eps)
    g.add_argument("--patch-radius", type=int, default=d.patch_radius)
    g.add_argument("--scale", type=int, default=d.scale, help="downsampling factor")
    g.add_argument("--threads", type=int, default=threads_default,
                   help="worker threads (default: $FULLFLOW_THREADS or 1)")
    g.add_argument("--memory-cap-gb", type=float, default=d.memory_cap_gb)


def _config(args, **over) -> SolverConfig:
    kw = dict(
        lam=getattr(args, "lam", 1.0), tau=getattr(args, "tau", math.inf),
        beta=getattr(args, "beta", 0.1), zeta=getattr(args, "zeta", 1.0),
        delta=getattr(args, "delta", 2.0), radius=args.radius, iterations=args.iterations,
        penalty=Penalty(getattr(args, "penalty", "l1"), args.charbonnier_eps),
        patch_radius=args.patch_radius, scale=args.scale,
        data_term=getattr(args, "data_term", "ncc"), threads=args.threads,
        memory_cap_gb=args.memory_cap_gb,
    )
    kw.update(over)
    try:
        return SolverConfig(**kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    threads = _default_threads()
    p = _Parser(prog="fullflow", description="Global discrete optical flow with TRW-S.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("flow", help="estimate flow for one image pair")
    f.add_argument("image1")
    f.add_argument("image2")
    f.add_argument("--gt", help="ground-truth .flo for metrics and an error map")
    f.add_argument("--out", default="fullflow-out", help="output directory")
    f.add_argument("--quiet", action="store_true", help="no per-iteration progress")
    _add_solver_flags(f, threads)

    g = sub.add_parser("grid", help="data term x penalty x truncation grid with parameter search")
    g.add_argument("manifest", help="JSON list of {image1, image2, gt} or lines 'img1 img2 gt'")
    g.add_argument("--ranges", help="JSON file with lists for lambda, tau, beta, zeta, delta")
    g.add_argument("--out", default="fullflow-grid", help="output directory")
    g.add_argument("--quiet", action="store_true")
    _add_solver_flags(g, threads, tuned=False)

    b = sub.add_parser("bench", help="message-update scaling, thread scaling, backend comparison")
    b.add_argument("--radii", type=int, nargs="+", default=[10, 20, 40, 80])
    b.add_argument("--threads-list", type=int, nargs="+", default=None,
                   help="thread counts to time (default: 1, 2, max)")
    b.add_argument("--min-time", type=float, default=0.05, help="seconds per timing batch")
    b.add_argument("--rounds", type=int, default=5, help="interleaved timing rounds (minimum kept)")
    b.add_argument("--input", choices=("texture", "uniform"), default="texture",
                   help="message inputs: NCC cost rows of a textured pair, or i.i.d. noise")
    b.add_argument("--out", default="fullflow-bench", help="output directory")
    return p


# ---------------------------------------------------------------- flow

def _log(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg, file=sys.stderr, flush=True)


def _read_inputs(args):
    try:
        I1 = read_image(args.image1)
        I2 = read_image(args.image2)
        gt = read_flo(args.gt) if args.gt else None
    except (OSError, ImageFormatError, FlowFormatError) as exc:
        raise InputError(str(exc)) from exc
    if I1.shape != I2.shape:
        raise InputError(f"[input] image sizes differ: {I1.width}x{I1.height} vs {I2.width}x{I2.height}")
    if gt is not None and gt.shape != I1.shape:
        raise InputError(f"[input] ground truth is {gt.width}x{gt.height}, images are {I1.width}x{I1.height}")
    return I1, I2, gt


def check_memory(mem: dict, cfg: SolverConfig) -> int:
    """Peak bytes of the large buffers: both cost volumes plus one message store."""
    peak = 2 * mem["cost_volume_bytes"] + mem["message_bytes"]
    cap = int(cfg.memory_cap_gb * 2**30)
    if peak > cap:
        raise MemoryBudgetError("cost volumes + messages", peak, cap)
    return peak


def cmd_flow(args) -> int:
    cfg = _config(args)
    I1, I2, gt = _read_inputs(args)
    mem = memory_estimate(I1.width, I1.height, cfg)
    print(f"solver grid {mem['solver_width']}x{mem['solver_height']}, {mem['labels']} labels", file=sys.stderr)
    print(f"cost volume: {mem['cost_volume_bytes']} bytes per direction; "
          f"messages: {mem['message_bytes']} bytes", file=sys.stderr, flush=True)
    mem["peak_bytes"] = check_memory(mem, cfg)
    os.makedirs(args.out, exist_ok=True)

    def progress(direction, it, lb, dt):
        _log(args.quiet, f"{direction} iteration {it}: lower bound {lb:.6f} ({dt:.2f} s)")

    t0 = time.perf_counter()
    res = estimate_flow(I1, I2, cfg, progress)
    total = time.perf_counter() - t0

    write_flo(res.full, os.path.join(args.out, FLOW_FILE))
    write_image(flow_to_color(res.full), os.path.join(args.out, FLOW_PNG))
    n_matches = write_matches(os.path.join(args.out, MATCHES), res.consistent, cfg.scale)
    metrics = None
    if gt is not None:
        m = compute_metrics(res.full, gt)
        write_image(error_map(m.per_pixel_epe, gt.valid), os.path.join(args.out, ERROR_PNG))
        metrics = m.as_row()
        with open(os.path.join(args.out, METRICS), "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(metrics))
            wr.writeheader()
            wr.writerow(metrics)
        print(f"EPE {m.epe_all:.4f}, outliers {100 * m.outlier_rate:.2f}%", file=sys.stderr)

    manifest = {
        "config": cfg.to_dict(),
        "inputs": {"image1": os.path.abspath(args.image1), "image2": os.path.abspath(args.image2),
                   "gt": os.path.abspath(args.gt) if args.gt else None},
        "output_dir": os.path.abspath(args.out),
        "timings": {**res.timings, "total": total},
        "iterations": {"forward": [[it, lb] for it, lb, _ in res.forward.log],
                       "backward": [[it, lb] for it, lb, _ in res.backward.log]},
        "memory": mem,
        "matches": n_matches,
        "valid_fraction": float(res.consistent.valid.mean()),
        "metrics": metrics,
        "backend": res.backend,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    with open(os.path.join(args.out, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2)
    print(f"wrote {args.out}/ ({total:.1f} s)", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- grid

def cmd_grid(args) -> int:
    from .grid import GridRanges, ManifestError, load_manifest, run_grid

    base = _config(args)
    try:
        ranges = GridRanges.load(args.ranges) if args.ranges else GridRanges()
    except (OSError, ValueError) as exc:
        raise InputError(f"[ranges] {exc}") from exc
    try:
        pairs = load_manifest(args.manifest)
    except (OSError, ManifestError, ImageFormatError, FlowFormatError, ValueError) as exc:
        raise InputError(f"[manifest] {exc}") from exc
    for pr in pairs:
        check_memory(memory_estimate(pr.image1.width, pr.image1.height, base), base)
    os.makedirs(args.out, exist_ok=True)
    result = run_grid(pairs, base, ranges, progress=lambda s: _log(args.quiet, s))

    rows = result.table_rows()
    with open(os.path.join(args.out, "table.csv"), "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
        wr.writeheader()
        wr.writerows(rows)
    series = result.sorted_series()
    with open(os.path.join(args.out, "per_image.csv"), "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["condition", "rank", "epe"])
        for label, vals in series.items():
            for rank, v in enumerate(vals):
                wr.writerow([label, rank, v])
    for r in rows:
        print(f"{r['condition']:<26} {r['mean_epe']:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- bench

def cmd_bench(args) -> int:
    from . import bench

    os.makedirs(args.out, exist_ok=True)
    rows = bench.message_scaling(args.radii, min_time=args.min_time, rounds=args.rounds,
                                 input_kind=args.input)
    exps = bench.fitted_exponents(rows)
    bench.write_csv(os.path.join(args.out, "message_scaling.csv"), rows)
    bench.write_csv(os.path.join(args.out, "exponents.csv"),
                    [{"kernel": k, "exponent": v} for k, v in exps.items()])
    for k, v in exps.items():
        print(f"{k:<6} time ~ M^{v:.3f}  ({args.input} inputs)")
    trows = bench.thread_scaling(threads=args.threads_list)
    bench.write_csv(os.path.join(args.out, "thread_scaling.csv"), trows)
    for r in trows:
        print(f"threads {r['threads']:>3}: {r['seconds_per_iteration']:.4f} s/iter, "
              f"speedup {r['speedup']:.2f}, max diff {r['max_message_diff']:.3g}")
    brows = bench.backend_comparison()
    bench.write_csv(os.path.join(args.out, "backends.csv"), brows)
    for r in brows:
        print(f"backend {r['backend']:<7} {r['seconds_per_iteration']:.4f} s/iter "
              f"(x{r['relative_time']:.1f})")
    print(f"cores available: {os.cpu_count()}, OpenMP threads: {kernels.max_threads()}")
    return EXIT_OK


COMMANDS = {"flow": cmd_flow, "grid": cmd_grid, "bench": cmd_bench}


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"fullflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, or a usage error already reported by argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"fullflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"fullflow: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except MemoryBudgetError as exc:
        print(f"fullflow: memory cap exceeded: {exc}", file=sys.stderr)
        return EXIT_MEMORY
    except PipelineError as exc:
        if isinstance(exc.cause, MemoryBudgetError):
            print(f"fullflow: memory cap exceeded in stage {exc.stage}: {exc.cause}", file=sys.stderr)
            return EXIT_MEMORY
        print(f"fullflow: internal error in stage {exc.stage}: {exc.cause!r}", file=sys.stderr)
        return EXIT_INTERNAL
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # pragma: no cover - last-resort classification
        print(f"fullflow: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
