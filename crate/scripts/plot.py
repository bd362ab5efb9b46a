#!/usr/bin/env python3
"""Plots for the simulator's output files.

    plot.py costmap out/cost_map.txt [--record out/record.json] [-o map.png]
    plot.py coverage out/coverage.csv [-o coverage.png]
    plot.py sweep out/sweep.csv --metric coverage [-o sweep.png]

Needs numpy and matplotlib.
"""

import argparse
import csv
import json
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def read_raster(path):
    with open(path) as f:
        if f.readline().strip() != "DMCOSTMAP 1":
            raise SystemExit(f"{path}: not a cost map raster")
        ox, oy, spacing, nx, ny, energy = f.readline().split()
        values = np.loadtxt(f, ndmin=2)
    nx, ny = int(nx), int(ny)
    if values.shape != (ny, nx):
        raise SystemExit(f"{path}: expected {ny}x{nx} values, got {values.shape}")
    return float(ox), float(oy), float(spacing), values, float(energy)


def costmap(args):
    ox, oy, spacing, values, energy = read_raster(args.file)
    ny, nx = values.shape
    extent = [ox - spacing / 2, ox + (nx - 0.5) * spacing, oy - spacing / 2, oy + (ny - 0.5) * spacing]
    explained = np.clip(energy - values, 1e-300, None)
    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(10 * np.log10(explained / explained.max()), origin="lower", extent=extent, cmap="viridis", vmin=-30)
    fig.colorbar(im, ax=ax, label="explained energy [dB rel. max]")
    if args.record:
        with open(args.record) as f:
            rec = json.load(f)
        aps = rec["assignment"]
        truth = [t["position"] for t in rec["targets"]]
        est = rec["estimation"]["refined_positions"]
        ax.plot([p["x"] for p in truth], [p["y"] for p in truth], "wo", mfc="none", ms=10, label="targets")
        ax.plot([p["x"] for p in est], [p["y"] for p in est], "r+", ms=10, label="estimates")
        ax.set_title(f"trial {rec['trial']}: {len(aps['receive_set'])} receive APs")
        ax.legend(loc="upper right")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


def coverage(args):
    data = np.genfromtxt(args.file, delimiter=",", names=True)
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(11, 4.5))
    sc = ax0.scatter(data["x"], data["y"], c=np.log10(data["peb"]), s=12, cmap="magma_r")
    fig.colorbar(sc, ax=ax0, label="log10 PEB [m]")
    ax0.set_xlabel("x [m]")
    ax0.set_ylabel("y [m]")
    ax0.set_aspect("equal")
    peb = np.sort(data["peb"])
    ax1.semilogx(peb, np.arange(1, len(peb) + 1) / len(peb))
    ax1.set_xlabel("PEB threshold [m]")
    ax1.set_ylabel("coverage f_SC")
    ax1.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


def sweep(args):
    series = defaultdict(list)
    axis = None
    with open(args.file) as f:
        for row in csv.DictReader(f):
            if row["metric"] != args.metric:
                continue
            axis = row["axis"]
            series[row["selection"]].append(
                (float(row["value"]), float(row["mean"]), float(row["ci_low"]), float(row["ci_high"]))
            )
    if not series:
        raise SystemExit(f"no rows for metric {args.metric}")
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, rows in sorted(series.items()):
        rows.sort()
        x, mean, lo, hi = map(np.array, zip(*rows))
        ax.plot(x, mean, "o-", label=label)
        ax.fill_between(x, lo, hi, alpha=0.2)
    if args.metric.startswith("peb") or args.metric == "position_error":
        ax.set_yscale("log")
    ax.set_xlabel(axis)
    ax.set_ylabel(args.metric)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.output, dpi=150)


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="kind", required=True)
    p = sub.add_parser("costmap")
    p.add_argument("file")
    p.add_argument("--record")
    p.add_argument("-o", "--output", default="cost_map.png")
    p.set_defaults(func=costmap)
    p = sub.add_parser("coverage")
    p.add_argument("file")
    p.add_argument("-o", "--output", default="coverage.png")
    p.set_defaults(func=coverage)
    p = sub.add_parser("sweep")
    p.add_argument("file")
    p.add_argument("--metric", default="sum_se")
    p.add_argument("-o", "--output", default="sweep.png")
    p.set_defaults(func=sweep)
    args = parser.parse_args()
    args.func(args)


if __name__ == "__main__":
    main()
