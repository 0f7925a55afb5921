"""Diagnostic artifact emission: false-color channel meshes and PNG plots.

Renders are for eyeballing runs, not part of the numeric contract; plots go
through the Agg backend so headless runs work.
"""

from __future__ import annotations

import json
import os

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .material import circular_hue_distance
from .mesh import load_mesh, save_mesh

_DEFAULT_CHANNELS = ("hue", "saturation", "concentration", "composition",
                     "curvature", "value", "patch_id")


def false_color_mesh(mesh, channel, cmap="viridis"):
    """Copy of the mesh with an rgb channel mapping the scalar through a
    colormap; integer label channels get a categorical map."""
    values = np.asarray(mesh.attribute(channel))
    out = mesh.copy()
    if np.issubdtype(values.dtype, np.integer):
        table = plt.get_cmap("tab20").colors
        rgb = np.asarray(table)[values % len(table)]
    else:
        v = values.astype(np.float64)
        lo, hi = float(v.min()), float(v.max())
        t = (v - lo) / (hi - lo) if hi - lo > 1e-12 else np.zeros_like(v)
        rgb = plt.get_cmap(cmap)(t)[:, :3]
    out.set_attribute("rgb", rgb)
    return out


def render_channels(mesh, out_dir, prefix, channels=None):
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for ch in channels or _DEFAULT_CHANNELS:
        if ch not in mesh.attributes:
            continue
        if np.asarray(mesh.attributes[ch]).ndim != 1:
            continue
        path = os.path.join(out_dir, f"{prefix}_{ch}.ply")
        save_mesh(false_color_mesh(mesh, ch), path, color_attr="rgb")
        written.append(path)
    return written


def plot_energy_traces(traces, out_png):
    """traces: {label: {"energy_trace": [...], "converged": bool}}."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, t in traces.items():
        e = t["energy_trace"]
        if not e:
            continue
        style = "-" if t.get("converged", True) else "--"
        ax.semilogy(range(len(e)), e, style, label=f"{label} ({len(e)} iters)")
    ax.set_xlabel("iteration")
    ax.set_ylabel("string energy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_cost_matrices(data, out_png):
    """data: the cost_matrices.json payload (tar_ids, src_ids, matrices)."""
    names = sorted(data["matrices"])
    fig, axes = plt.subplots(1, len(names), figsize=(3.2 * len(names), 3.2))
    if len(names) == 1:
        axes = [axes]
    for ax, name in zip(axes, names):
        mat = np.asarray(data["matrices"][name])
        im = ax.imshow(mat, cmap="magma")
        ax.set_title(name)
        ax.set_xticks(range(len(data["src_ids"])), data["src_ids"])
        ax.set_yticks(range(len(data["tar_ids"])), data["tar_ids"])
        ax.set_xlabel("source patch")
        if ax is axes[0]:
            ax.set_ylabel("target patch")
        fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def plot_error_histograms(result, ground_truth, out_png, bins=60):
    h_err = circular_hue_distance(np.asarray(result.attribute("hue")),
                                  np.asarray(ground_truth.attribute("hue")))
    s_err = np.abs(np.asarray(result.attribute("saturation"))
                   - np.asarray(ground_truth.attribute("saturation")))
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, err, label in ((axes[0], h_err, "hue (circular)"),
                           (axes[1], s_err, "saturation")):
        ax.hist(err, bins=bins, color="tab:blue")
        ax.set_yscale("log")
        ax.set_xlabel(f"{label} abs error")
        ax.set_title(f"mean {err.mean():.4f}")
    axes[0].set_ylabel("vertices")
    fig.tight_layout()
    fig.savefig(out_png, dpi=120)
    plt.close(fig)
    return out_png


def render_outputs(run_dir, out_dir=None):
    """Render whatever artifacts a pipeline run directory contains."""
    out_dir = out_dir or os.path.join(run_dir, "render")
    os.makedirs(out_dir, exist_ok=True)
    written = []

    traces_path = os.path.join(run_dir, "traces.json")
    if os.path.exists(traces_path):
        with open(traces_path) as fh:
            written.append(plot_energy_traces(
                json.load(fh), os.path.join(out_dir, "energy_traces.png")))

    costs_path = os.path.join(run_dir, "cost_matrices.json")
    if os.path.exists(costs_path):
        with open(costs_path) as fh:
            written.append(plot_cost_matrices(
                json.load(fh), os.path.join(out_dir, "cost_matrices.png")))

    result_path = os.path.join(run_dir, "result.ply")
    gt_path = os.path.join(run_dir, "gt.ply")
    result = None
    if os.path.exists(result_path):
        result = load_mesh(result_path, validate=False)
        written += render_channels(result, out_dir, "result")
    if result is not None and os.path.exists(gt_path):
        written.append(plot_error_histograms(
            result, load_mesh(gt_path, validate=False),
            os.path.join(out_dir, "error_histograms.png")))
    for name in ("src", "tar"):
        path = os.path.join(run_dir, f"{name}.ply")
        if os.path.exists(path):
            written += render_channels(load_mesh(path, validate=False),
                                       out_dir, name,
                                       channels=("concentration", "composition",
                                                 "hue", "saturation"))
    return written
