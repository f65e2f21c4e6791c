"""Compiled vs pure-Python kernels: posing and full-frame rendering throughput.

    python3 benchmarks/bench_backends.py [--posing-n 187779] [--render-n 2304] [--size 64] [--reps 10]
"""
import argparse
import json

from avatarsplat.bench import bench_posing, bench_render
from avatarsplat.geometry import build_toy_head
from avatarsplat.renderer import available_backends


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--posing-n", type=int, default=187_779)
    ap.add_argument("--render-n", type=int, default=2304)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--reps", type=int, default=10)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()
    model = build_toy_head(0)
    rows = []
    for backend in available_backends():
        p = bench_posing(args.posing_n, args.reps, backend=backend, threads=args.threads, model=model)
        r = bench_render(args.render_n, args.size, args.reps, backend=backend, threads=args.threads, model=model)
        rows.append({"backend": backend, "poses_per_sec": p["poses_per_sec"], "render_fps": r["fps"]})
        print(json.dumps(rows[-1]), flush=True)
    if len(rows) == 2:
        print(json.dumps({"speedup_posing": rows[0]["poses_per_sec"] / rows[1]["poses_per_sec"],
                          "speedup_render": rows[0]["render_fps"] / rows[1]["render_fps"]}))


if __name__ == "__main__":
    main()
