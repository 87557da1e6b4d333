"""Figure rendering for fit traces and bench tables.

Reads the delimited files a run wrote and drops PNGs next to them. Uses the
Agg backend so it works headless; nothing here is needed by the samplers.
"""

from __future__ import annotations

import csv
import glob
import os
import re

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .diagnostics import read_trace


def _trace_paths(out_dir: str, run_id: str) -> list:
    pattern = os.path.join(out_dir, f"{run_id}.*.trace.csv")
    rx = re.compile(re.escape(run_id) + r"\.(\d+)\.trace\.csv$")
    found = []
    for path in glob.glob(pattern):
        m = rx.search(os.path.basename(path))
        if m:
            found.append((int(m.group(1)), path))
    return [p for _, p in sorted(found)]


def _plot_traces(paths: list, out_dir: str, run_id: str) -> list:
    chains = [(os.path.basename(p), read_trace(p)) for p in paths]
    written = []

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, records in chains:
        ax.plot(
            [r.iteration for r in records],
            [r.log_posterior for r in records],
            label=name.removesuffix(".trace.csv"),
        )
    ax.set_xlabel("iteration")
    ax.set_ylabel("log posterior (unnormalized)")
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = os.path.join(out_dir, f"{run_id}.log_posterior.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    any_perp = False
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, records in chains:
        pts = [(r.iteration, r.perplexity) for r in records if r.perplexity is not None]
        if not pts:
            continue
        any_perp = True
        ax.plot(*zip(*pts), marker="o", markersize=3, label=name.removesuffix(".trace.csv"))
    if any_perp:
        ax.set_xlabel("iteration")
        ax.set_ylabel("held-out perplexity")
        ax.legend(fontsize="small")
        fig.tight_layout()
        path = os.path.join(out_dir, f"{run_id}.perplexity.png")
        fig.savefig(path, dpi=120)
        written.append(path)
    plt.close(fig)
    return written


def _plot_bench(bench_path: str, out_dir: str, run_id: str) -> list:
    by_sampler: dict = {}
    with open(bench_path, newline="") as fh:
        for row in csv.DictReader(fh):
            by_sampler.setdefault(row["sampler"], []).append(
                (int(row["K"]), float(row["mean_sec"]), float(row["sd_sec"]))
            )
    if not by_sampler:
        return []
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for sampler, rows in sorted(by_sampler.items()):
        rows.sort()
        ks = [r[0] for r in rows]
        means = [r[1] for r in rows]
        sds = [r[2] for r in rows]
        ax.errorbar(ks, means, yerr=sds, marker="o", markersize=4, capsize=3, label=sampler)
    ax.set_xscale("log", base=2)
    ax.set_yscale("log")
    ax.set_xlabel("topics K")
    ax.set_ylabel("seconds per sweep")
    ax.legend(fontsize="small")
    fig.tight_layout()
    path = os.path.join(out_dir, f"{run_id}.bench.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]


def render_report(out_dir: str, run_id: str = "run") -> list:
    """Render every figure the directory's delimited files support.

    Returns the list of files written; empty when neither traces nor a
    bench table are present.
    """
    written = []
    traces = _trace_paths(out_dir, run_id)
    if traces:
        written.extend(_plot_traces(traces, out_dir, run_id))
    bench_path = os.path.join(out_dir, f"{run_id}.bench.csv")
    if os.path.exists(bench_path):
        written.extend(_plot_bench(bench_path, out_dir, run_id))
    return written
