"""Figure rendering for decay tables and reconstruction reports.

Rendering is headless and deterministic: the Agg backend is forced before
pyplot is imported and PNG metadata that varies between runs is stripped, so
identical inputs produce identical image bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=120, metadata=_PNG_META)
    plt.close(fig)
    return path


def decay_figure(study, path):
    """Semilog decay of one remainder quantity against its swept parameter,
    with the fitted geometric rate overlaid when the fit ran."""
    rows = study["rows"] if isinstance(study, dict) else study.rows
    fit = study["fit"] if isinstance(study, dict) else study.fit
    quantity = study["quantity"] if isinstance(study, dict) else study.quantity
    sweep = study["sweep"] if isinstance(study, dict) else study.sweep
    xs = np.array([row[sweep] for row in rows], dtype=float)
    ys = np.array([row[quantity] for row in rows], dtype=float)

    fig, ax = plt.subplots(figsize=(5.0, 3.4))
    if fit.get("skipped"):
        ax.plot(xs, ys, "o-", color="tab:gray")
        ax.set_title(f"{quantity} vs {sweep} ({fit.get('reason', 'fit skipped')})")
    else:
        ax.semilogy(xs, ys, "o", color="tab:blue", label="measured")
        grid = np.linspace(xs.min(), xs.max(), 64)
        ax.semilogy(
            grid,
            fit["base"] * fit["ratio"] ** grid,
            "-",
            color="tab:orange",
            label=f"rate {fit['ratio']:.3g}",
        )
        ax.legend(frameon=False)
        ax.set_title(f"{quantity} vs {sweep}")
    ax.set_xlabel(sweep)
    ax.set_ylabel(quantity)
    ax.set_xticks(xs)
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def reconstruction_figure(tables, path, column="rel_l2"):
    """Per-probe relative errors for one or more named reconstructions,
    log scale, probes along the x axis in census order."""
    fig, ax = plt.subplots(figsize=(7.0, 3.6))
    tiny = np.finfo(float).tiny
    for label, rows in sorted(tables.items()):
        keys = [k for k in rows[0] if k.startswith(column)]
        if not keys:
            continue
        ys = np.array([max(row[k] for k in keys) for row in rows], dtype=float)
        ax.semilogy(np.arange(len(rows)), np.maximum(ys, tiny), ".-", label=label)
    probes = [row["probe"] for row in next(iter(tables.values()))]
    step = max(1, len(probes) // 16)
    ax.set_xticks(np.arange(0, len(probes), step))
    ax.set_xticklabels(probes[::step], rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(f"{column} error")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
