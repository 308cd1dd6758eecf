"""Figures written next to the delimited reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}

COLORS = {
    "YES": "#4c9a2a",
    "DOUBT": "#e0a030",
    "NO": "#b03a2e",
    "NOT AVAILABLE": "#8c8c8c",
    "PARSE FAILED": "#6a5acd",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_vote_distribution(report, path) -> Path:
    """Pie of LLM votes over the whole run (empty categories dropped)."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        items = [(k, v) for k, v in report.votes.items() if v]
        if items:
            labels, values = zip(*items)
            ax.pie(
                values,
                labels=[f"{k}\n{v}" for k, v in items],
                colors=[COLORS.get(k, "#cccccc") for k in labels],
                autopct="%1.1f%%",
                startangle=90,
                counterclock=False,
                wedgeprops={"linewidth": 0.8, "edgecolor": "white"},
            )
            ax.axis("equal")
        else:
            ax.text(0.5, 0.5, "no rows", ha="center", va="center")
            ax.axis("off")
        ax.set_title(f"Distribution of votes (n={report.total})")
        return _save(fig, path)


def plot_na_reasons(report, path) -> Path:
    with plt.rc_context(STYLE):
        reasons = report.na_reasons
        fig, ax = plt.subplots(figsize=(5.5, 0.4 * max(len(reasons), 1) + 1.2))
        if reasons:
            names = list(reasons)
            ax.barh(names, [reasons[n] for n in names], color=COLORS["NOT AVAILABLE"])
            ax.invert_yaxis()
            ax.set_xlabel("documents")
        else:
            ax.text(0.5, 0.5, "no unavailable documents", ha="center", va="center", transform=ax.transAxes)
            ax.set_yticks([])
        ax.set_title("Why documents were not available")
        return _save(fig, path)


def plot_ppa(report, path) -> Path:
    """Per-category PPA bars; categories with no reference items are marked n/a."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        cats = ["No", "Include", "Doubt"]
        values, labels = [], []
        for c in cats:
            v = report.ppa_by_category.get(c)
            ok = isinstance(v, float)
            values.append(v if ok else 0.0)
            labels.append(f"{v:.2f}" if ok else "n/a")
        bars = ax.bar(cats, values, color=[COLORS["NO"], COLORS["YES"], COLORS["DOUBT"]])
        for bar, label in zip(bars, labels):
            ax.annotate(label, (bar.get_x() + bar.get_width() / 2, bar.get_height()), ha="center", va="bottom",
                        xytext=(0, 2), textcoords="offset points")
        ax.set_ylim(0, 1.1)
        ax.set_ylabel("PPA (LLM vs human consensus)")
        ax.set_title(f"Positive percent agreement (n={report.n_items})")
        return _save(fig, path)
