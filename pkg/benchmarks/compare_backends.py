"""Compiled core vs numpy fallback: per-kernel message-update times and a TRW-S iteration.

    python3 benchmarks/compare_backends.py [--radii 4 8 16] [--csv out.csv]

The fallback is the same algorithms vectorised with numpy; this script shows
what the compiled core buys and checks that both produce identical messages.
"""
from __future__ import annotations

import argparse
import sys

from fullflow import bench, kernels


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--radii", type=int, nargs="+", default=[4, 8, 16])
    ap.add_argument("--min-time", type=float, default=0.05)
    ap.add_argument("--rounds", type=int, default=3)
    ap.add_argument("--csv", help="write the per-kernel rows here")
    args = ap.parse_args(argv)

    names = sorted(kernels.available())
    if len(names) < 2:
        print(f"only the {names[0]!r} backend is available; build the extension to compare", file=sys.stderr)
    rows = []
    for name in names:
        for r in bench.message_scaling(args.radii, min_time=args.min_time, rounds=args.rounds,
                                       backend=kernels.get(name)):
            rows.append({"backend": name, **r})

    ref = {(r["kernel"], r["radius"]): r["seconds"] for r in rows if r["backend"] == names[0]}
    print(f"{'kernel':<7}{'radius':>7}{'labels':>8}  " + "".join(f"{n:>12}" for n in names) + "     ratio")
    for kernel, radius in sorted(ref, key=lambda k: (k[0], k[1])):
        secs = [next(r["seconds"] for r in rows if r["backend"] == n and r["kernel"] == kernel
                     and r["radius"] == radius) for n in names]
        labels = (2 * radius + 1) ** 2
        print(f"{kernel:<7}{radius:>7}{labels:>8}  " + "".join(f"{s * 1e3:>10.3f}ms" for s in secs)
              + f"  {secs[-1] / secs[0]:>8.1f}x")

    print()
    for r in bench.backend_comparison():
        print(f"TRW-S iteration, {r['backend']:<7} {r['seconds_per_iteration']:.4f} s "
              f"(x{r['relative_time']:.1f}), max message diff {r['max_message_diff']:.1e}")
    if args.csv:
        bench.write_csv(args.csv, rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
