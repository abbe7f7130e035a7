"""Standalone SVG charts for PR curves and AR-vs-proposal-count curves."""
import csv


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "cedn"  # stable element ids across runs
    plt.rcParams["svg.fonttype"] = "none"
    return plt


def read_csv_columns(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return {k: [float(r[k]) for r in rows] for k in rows[0]}


def pr_svg(curves, path, title="Precision / recall"):
    """``curves`` maps a legend label to a list of PRPoint or a column dict."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    for label, c in curves.items():
        if isinstance(c, dict):
            r, p, f = c["recall"], c["precision"], c["f"]
        else:
            r, p, f = [x.recall for x in c], [x.precision for x in c], [x.f for x in c]
        ax.plot(r, p, lw=1.5, label=f"{label} [F={max(f):.3f}]")
    # iso-F contours
    import numpy as np

    rr = np.linspace(0.01, 1, 200)
    for fv in (0.2, 0.4, 0.6, 0.8):
        pp = fv * rr / (2 * rr - fv)
        ok = (pp > 0) & (pp <= 1)
        ax.plot(rr[ok], pp[ok], color="0.85", lw=0.7, zorder=0)
    ax.set(xlim=(0, 1), ylim=(0, 1), xlabel="Recall", ylabel="Precision", title=title)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def ar_svg(series, path, title="Average recall vs. candidates"):
    """``series`` maps a label to (counts, ar) sequences."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (counts, ar) in series.items():
        ax.plot(counts, ar, marker="o", ms=3, lw=1.5, label=label)
    ax.set_xscale("log")
    ax.set(ylim=(0, 1), xlabel="Number of candidates", ylabel="Average recall", title=title)
    ax.grid(alpha=0.3, which="both")
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_csv(csv_path, svg_path, label=None):
    """Chart a PR or AR-vs-count CSV, picked by its header."""
    cols = read_csv_columns(csv_path)
    label = label or str(csv_path).rsplit("/", 1)[-1].rsplit(".", 1)[0]
    if {"precision", "recall", "f"} <= set(cols):
        pr_svg({label: cols}, svg_path)
        return "pr"
    if {"num_proposals", "ar"} <= set(cols):
        ar_svg({label: (cols["num_proposals"], cols["ar"])}, svg_path)
        return "ar"
    raise ValueError(f"{csv_path}: unrecognised columns {sorted(cols)}")
