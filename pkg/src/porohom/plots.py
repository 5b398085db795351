"""Matplotlib figure rendering for CLI reports (Agg backend, files only)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import LineCollection, PolyCollection  # noqa: E402


def save_fig(fig, path, dpi=150):
    fig.savefig(path, dpi=dpi, bbox_inches="tight")
    plt.close(fig)
    return path


def network_figure(network, element_values=None, displacements=None,
                   title=None):
    """2D beam network, optionally deformed and colored per beam."""
    pts = network.nodes
    if displacements is not None:
        pts = pts + displacements
    segs = pts[network.elements]
    fig, ax = plt.subplots(figsize=(5, 5))
    lc = LineCollection(segs, linewidths=1.2)
    if element_values is not None:
        lc.set_array(np.asarray(element_values))
        lc.set_cmap("viridis")
        fig.colorbar(lc, ax=ax, label="von Mises [MPa]")
    else:
        lc.set_color("tab:blue")
    ax.add_collection(lc)
    ax.set_aspect("equal")
    ax.autoscale()
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    if title:
        ax.set_title(title)
    return fig


def packing_figure(packing, title=None):
    fig, ax = plt.subplots(figsize=(5, 5))
    for c, r in zip(packing.centers, packing.radii):
        ax.add_patch(plt.Circle(c, r, fill=False, color="tab:blue", lw=0.8))
    e = packing.domain_edge
    ax.plot([0, e, e, 0, 0], [0, 0, e, e, 0], "r-", lw=1)
    ax.set_aspect("equal")
    ax.set_xlim(-0.05 * e, 1.05 * e)
    ax.set_ylim(-0.05 * e, 1.05 * e)
    if title:
        ax.set_title(title)
    return fig


def field_figure_2d(mesh, u=None, nodal_values=None, title=None,
                    label="von Mises [MPa]"):
    """Deformed 2D mesh colored by a nodal scalar field."""
    pts = mesh.nodes + (u.reshape(-1, 2) if u is not None else 0.0)
    corners = {"q1": 4, "p1": 3, "p2": 3}[mesh.etype]
    polys = pts[mesh.elements[:, :corners]]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    pc = PolyCollection(polys, edgecolor="k", linewidths=0.15)
    if nodal_values is not None:
        vals = np.asarray(nodal_values)
        cell_vals = vals[mesh.elements[:, :corners]].mean(axis=1)
        pc.set_array(cell_vals)
        pc.set_cmap("viridis")
        fig.colorbar(pc, ax=ax, label=label)
    ax.add_collection(pc)
    ax.set_aspect("equal")
    ax.autoscale()
    if title:
        ax.set_title(title)
    return fig


def field_figure_3d(mesh, u=None, nodal_values=None, title=None,
                    label="von Mises [MPa]"):
    """Deformed 3D node cloud colored by a nodal scalar (lightweight view)."""
    pts = mesh.nodes + (u.reshape(-1, 3) if u is not None else 0.0)
    fig = plt.figure(figsize=(6, 5))
    ax = fig.add_subplot(projection="3d")
    sc = ax.scatter(pts[:, 0], pts[:, 1], pts[:, 2],
                    c=nodal_values, cmap="viridis", s=6)
    if nodal_values is not None:
        fig.colorbar(sc, ax=ax, label=label, shrink=0.7)
    if title:
        ax.set_title(title)
    return fig


def residual_history_figure(report, title=None):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    for k, hist in enumerate(report.residual_histories):
        lam = report.load_fractions[k] if k < len(report.load_fractions) else k
        ax.semilogy(range(len(hist)), np.asarray(hist) / hist[0],
                    marker="o", ms=3, label=f"step {k + 1} (load {lam:.3g})")
    ax.set_xlabel("iteration")
    ax.set_ylabel("relative residual")
    ax.axhline(1e-10, color="gray", ls="--", lw=0.8)
    ax.legend(fontsize=8)
    if title:
        ax.set_title(title)
    return fig


def loss_figure(train_report, title=None):
    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.semilogy(train_report.train_loss, label="training loss")
    if train_report.val_loss:
        ax.semilogy(train_report.val_loss, label="validation loss")
    ax.set_xlabel("epoch")
    ax.set_ylabel("MSE (normalized)")
    ax.legend()
    if title:
        ax.set_title(title)
    return fig


def grid_search_figure(result, title=None):
    """One heatmap panel per activation: width x depth, log10 loss."""
    n = len(result.activations)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.2), squeeze=False)
    vmin = np.nanmin(np.log10(result.losses))
    vmax = np.nanmax(np.log10(result.losses))
    for i, act in enumerate(result.activations):
        ax = axes[0, i]
        im = ax.imshow(np.log10(result.losses[i]), vmin=vmin, vmax=vmax,
                       cmap="viridis_r", aspect="auto")
        ax.set_title(act)
        ax.set_xticks(range(len(result.depths)),
                      [str(d) for d in result.depths])
        ax.set_yticks(range(len(result.widths)),
                      [str(w) for w in result.widths])
        ax.set_xlabel("hidden layers")
        if i == 0:
            ax.set_ylabel("neurons per layer")
    fig.colorbar(im, ax=axes.ravel().tolist(), label="log10 training loss")
    if title:
        fig.suptitle(title)
    return fig


def histogram_figure(values, names, title=None):
    """Per-component histograms of a flattened sample array (m, k)."""
    k = values.shape[1]
    ncol = min(3, k)
    nrow = (k + ncol - 1) // ncol
    fig, axes = plt.subplots(nrow, ncol, figsize=(3 * ncol, 2.2 * nrow),
                             squeeze=False)
    for c in range(k):
        ax = axes[c // ncol, c % ncol]
        ax.hist(values[:, c], bins=60, color="tab:blue")
        ax.set_title(names[c], fontsize=9)
        ax.tick_params(labelsize=7)
    for c in range(k, nrow * ncol):
        axes[c // ncol, c % ncol].axis("off")
    fig.tight_layout()
    if title:
        fig.suptitle(title, y=1.02)
    return fig


def correlation_figure(stats, title=None):
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(stats.correlation, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(stats.output_names())), stats.output_names(),
                  rotation=45, fontsize=8)
    ax.set_yticks(range(len(stats.input_names())), stats.input_names(),
                  fontsize=8)
    for i in range(stats.correlation.shape[0]):
        for j in range(stats.correlation.shape[1]):
            ax.text(j, i, f"{stats.correlation[i, j]:.2f}",
                    ha="center", va="center", fontsize=6)
    fig.colorbar(im, ax=ax, label="correlation")
    if title:
        ax.set_title(title)
    return fig


def benchmark_figure(result, title=None):
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    names = ["beam", "nn"]
    times = [result["beam_median_s"], result["nn_median_s"]]
    ax.bar(names, times, color=["tab:orange", "tab:green"])
    ax.set_yscale("log")
    ax.set_ylabel("median time per evaluation [s]")
    ax.set_title(title or f"speedup {result['speedup']:.0f}x")
    return fig


def comparison_figure_2d(mesh, u, diff_field, title=None):
    return field_figure_2d(mesh, u, diff_field, title=title,
                           label="|vM difference| [MPa]")
