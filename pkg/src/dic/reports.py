"""Delimited report writers and the matplotlib figures rendered next to them.

All writers are byte-deterministic for identical inputs: fixed field order,
``repr`` float formatting, LF newlines, and PNG output stripped of the
renderer version tag.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVEFIG = dict(dpi=110, metadata={"Software": None})


def write_csv(path: str | Path, header: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row[k]) for k in header})
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_json(path: str | Path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                          encoding="utf-8")


def _new_axes(title: str, xlabel: str, ylabel: str):
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    return fig, ax


def _finish(fig, path: str | Path) -> None:
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG)
    plt.close(fig)


def plot_step_distances(path: str | Path, steps: list[dict]) -> None:
    """Per-step correction-distance norms of one edit run."""
    fig, ax = _new_axes("branch distance per step", "timestep", "||d|| (L2)")
    ts = [s["t"] for s in steps]
    for key, label in (("d_src", "source"), ("d_tgt", "target"), ("d_har", "harmonic")):
        values = [s.get(key) for s in steps]
        if any(v is not None for v in values):
            ax.plot(ts, [v if v is not None else np.nan for v in values], label=label)
    ax.invert_xaxis()
    ax.legend()
    _finish(fig, path)


def plot_error_accumulation(path: str | Path, rows: list[dict]) -> None:
    """Reconstruction MSE vs inverse guidance, one line per (method, T)."""
    fig, ax = _new_axes("reconstruction error vs inverse guidance", "inverse guidance", "MSE")
    ax.set_yscale("log")
    keys = sorted({(r["method"], r["steps"]) for r in rows})
    for method, steps in keys:
        pts = sorted((r["omega_inverse"], r["recon_mse"]) for r in rows
                     if r["method"] == method and r["steps"] == steps)
        ax.plot([p[0] for p in pts], [max(p[1], 1e-18) for p in pts],
                marker="o", label=f"{method} T={steps}")
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_policy_table(path: str | Path, rows: list[dict]) -> None:
    """Bar chart of the per-policy preservation/fidelity scores."""
    fig, ax = _new_axes("distance policy ablation", "policy", "score")
    labels = [r["policy"] for r in rows]
    x = np.arange(len(labels))
    ax.bar(x - 0.2, [r["structure_distance_e3"] for r in rows], width=0.4,
           label="structure distance x1e3")
    ax.bar(x + 0.2, [r["mse"] for r in rows], width=0.4, label="MSE")
    ax.set_xticks(x)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.legend(fontsize=8)
    _finish(fig, path)


def plot_guidance_grid(path: str | Path, rows: list[dict], value_key: str = "mse") -> None:
    """Heatmap over (inverse, forward) guidance pairs."""
    inv = sorted({r["omega_inverse"] for r in rows})
    fwd = sorted({r["omega_forward"] for r in rows})
    grid = np.full((len(inv), len(fwd)), np.nan)
    for r in rows:
        grid[inv.index(r["omega_inverse"]), fwd.index(r["omega_forward"])] = r[value_key]
    fig, ax = _new_axes(f"guidance-scale grid ({value_key})", "forward guidance", "inverse guidance")
    im = ax.imshow(grid, origin="lower", cmap="viridis", aspect="auto")
    ax.set_xticks(range(len(fwd)), [str(v) for v in fwd])
    ax.set_yticks(range(len(inv)), [str(v) for v in inv])
    for i in range(len(inv)):
        for j in range(len(fwd)):
            ax.text(j, i, f"{grid[i, j]:.3g}", ha="center", va="center", fontsize=7, color="w")
    fig.colorbar(im, ax=ax)
    _finish(fig, path)


def plot_type_spider(path: str | Path, aggregates: list[dict], value_key: str,
                     higher_better: bool) -> None:
    """Radar chart of per-editing-type means, one polygon per method."""
    type_ids = sorted({a["editing_type_id"] for a in aggregates})
    methods = sorted({a["method"] for a in aggregates})
    angles = np.linspace(0.0, 2.0 * np.pi, len(type_ids), endpoint=False)
    closed = np.concatenate([angles, angles[:1]])
    fig, ax = plt.subplots(figsize=(5.4, 5.4), subplot_kw={"projection": "polar"})
    for method in methods:
        by_type = {a["editing_type_id"]: a[value_key] for a in aggregates if a["method"] == method}
        values = [by_type.get(tid, np.nan) for tid in type_ids]
        values = values + values[:1]
        ax.plot(closed, values, marker="o", markersize=3, label=method)
    ax.set_xticks(angles)
    ax.set_xticklabels([f"type {tid}" for tid in type_ids], fontsize=8)
    direction = "higher is better" if higher_better else "lower is better"
    ax.set_title(f"{value_key} by editing type ({direction})", fontsize=10)
    ax.legend(loc="upper right", bbox_to_anchor=(1.25, 1.1), fontsize=8)
    _finish(fig, path)
