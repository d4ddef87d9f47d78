"""Deterministic figure rendering from experiment CSV logs.

The renderer is presentation-only: every number it draws (including
fitted slopes and rates) is read from the CSV, never recomputed.  Styles
are fixed so byte-identical inputs produce pixel-identical images.

CSV contract (from the simulation harness): optional first line
``# config_hash=<hex>``, then a header row, then comma-separated rows
with shortest-roundtrip float formatting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

KINDS = ("convergence", "drift", "spectrum", "quotient")

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 120,
    "savefig.dpi": 120,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "lines.markersize": 5,
}

_COLORS = ("#1f4e79", "#c05131", "#3a7d44", "#7b5ea7", "#9c8412")


class PlotError(ValueError):
    pass


@dataclass
class FigureSpec:
    inputs: list
    kind: str
    out_path: str
    logx: bool | None = None       # None = kind default
    logy: bool | None = None
    title: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotError(f"unknown figure kind '{self.kind}'")
        if not self.inputs:
            raise PlotError("at least one input CSV is required")


@dataclass
class Table:
    config_hash: str
    columns: list
    rows: list

    def column(self, name: str):
        if name not in self.columns:
            raise PlotError(f"missing column '{name}'")
        idx = self.columns.index(name)
        return [r[idx] for r in self.rows]

    def has(self, name: str) -> bool:
        return name in self.columns


def _parse_cell(tok: str):
    try:
        return int(tok)
    except ValueError:
        pass
    try:
        return float(tok)
    except ValueError:
        pass
    return tok


def read_table(path) -> Table:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln]
    config_hash = ""
    if lines and lines[0].startswith("# config_hash="):
        config_hash = lines[0].split("=", 1)[1]
        lines = lines[1:]
    if not lines:
        raise PlotError(f"{path}: no header row")
    columns = lines[0].split(",")
    rows = [[_parse_cell(t) for t in ln.split(",")] for ln in lines[1:]]
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return Table(config_hash, columns, rows)


def _group_by_variant(tab: Table, xcol, ycol):
    """(label, x, y) series; one per value of the optional variant column."""
    xs = np.asarray(tab.column(xcol), dtype=float)
    ys = np.asarray(tab.column(ycol), dtype=float)
    if tab.has("variant"):
        variants = tab.column("variant")
        out = []
        for name in dict.fromkeys(variants):
            sel = np.array([v == name for v in variants])
            out.append((str(name), xs[sel], ys[sel]))
        return out
    return [("", xs, ys)]


def render(spec: FigureSpec) -> str:
    """Render one figure; returns the output path."""
    tables = [read_table(p) for p in spec.inputs]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if spec.kind == "convergence":
            _render_convergence(ax, tables)
        elif spec.kind == "drift":
            _render_drift(ax, tables)
        elif spec.kind == "spectrum":
            _render_spectrum(ax, tables)
        else:
            _render_quotient(ax, tables)
        if spec.logx is not None:
            ax.set_xscale("log" if spec.logx else "linear")
        if spec.logy is not None:
            ax.set_yscale("log" if spec.logy else "linear")
        if spec.title:
            ax.set_title(spec.title)
        hashes = sorted({t.config_hash for t in tables if t.config_hash})
        if hashes:
            fig.text(0.995, 0.005, "config " + ",".join(hashes),
                     ha="right", va="bottom", fontsize=6, color="#666666")
        fig.tight_layout()
        fig.savefig(spec.out_path, metadata={"Software": "anls-plot"})
        plt.close(fig)
    return spec.out_path


def _render_convergence(ax, tables):
    ci = 0
    for tab in tables:
        rate = tab.column("fitted_rate")[0]
        for label, xs, ys in _group_by_variant(tab, "eps", "diff"):
            ax.loglog(xs, ys, "o-", color=_COLORS[ci % len(_COLORS)],
                      label=label or "difference")
            ci += 1
        ax.annotate(f"fitted rate {rate:g}", xy=(0.05, 0.05),
                    xycoords="axes fraction", fontsize=9)
    ax.set_xlabel("mollification scale")
    ax.set_ylabel("coupled difference")
    ax.legend(loc="upper left", fontsize=8)


def _render_drift(ax, tables):
    quantities = ("mass", "energy", "h1", "l2mu")
    tab = tables[0]
    ts = np.asarray(tab.column("t"), dtype=float)
    for ci, name in enumerate(quantities):
        qs = np.asarray(tab.column(name), dtype=float)
        ref = qs[0] if qs[0] != 0 else 1.0
        dev = np.abs(qs - qs[0]) / abs(ref)
        ax.semilogy(ts, np.maximum(dev, 1e-17),
                    color=_COLORS[ci % len(_COLORS)], label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("relative drift")
    ax.legend(loc="upper right", fontsize=8)


def _render_spectrum(ax, tables):
    for ci, tab in enumerate(tables):
        ycol = "block_norm" if tab.has("block_norm") else "norm"
        if not tab.has(ycol):
            raise PlotError("missing column 'block_norm'")
        js = np.asarray(tab.column("j"), dtype=float)
        ys = np.asarray(tab.column(ycol), dtype=float)
        ax.semilogy(js, ys, "o-", color=_COLORS[ci % len(_COLORS)])
        if tab.has("fitted_slope"):
            slope = tab.column("fitted_slope")[0]
            ax.annotate(f"fitted slope {slope:g}", xy=(0.05, 0.05),
                        xycoords="axes fraction", fontsize=9)
    ax.set_xlabel("band index j")
    ax.set_ylabel("band norm")


def _render_quotient(ax, tables):
    for ci, tab in enumerate(tables):
        js = np.asarray(tab.column("j"), dtype=float)
        qs = np.asarray(tab.column("quotient"), dtype=float)
        ax.plot(js, qs, "s-", color=_COLORS[ci % len(_COLORS)])
    ax.set_xlabel("band index j")
    ax.set_ylabel("space-time quotient")
    ax.set_ylim(bottom=0.0)
