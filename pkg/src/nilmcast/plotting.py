"""PNG renderings of the report data, used only by the command-line report path.

Figures are drawn with the non-interactive Agg backend and saved without
software or date metadata, so identical inputs give identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_META = {"Software": None}


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_series(t, measured, predicted, path, title: str, predicted_label: str = "model") -> None:
    """Measured against predicted total active power, in kW."""
    t = np.asarray(t, dtype=np.float64)
    fig, ax = plt.subplots(figsize=(9, 3.5))
    ax.plot(t / 3600.0, np.asarray(measured) / 1000.0, lw=0.8, label="measured")
    ax.plot(t / 3600.0, np.asarray(predicted) / 1000.0, lw=0.8, label=predicted_label)
    ax.set_xlabel("time [h]")
    ax.set_ylabel("total active power [kW]")
    ax.set_title(title)
    ax.legend(loc="upper right")
    _save(fig, path)


def plot_method_bars(names, means, spreads, path, metric: str = "RMSE [W]") -> None:
    """One bar per method with its spread as an error bar."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    x = np.arange(len(names))
    ax.bar(x, means, yerr=spreads, capsize=4, color="0.6", edgecolor="0.2")
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=15)
    ax.set_ylabel(metric)
    _save(fig, path)


def plot_profiles(profiles, path) -> None:
    """Total active power of each extracted profile over its duration."""
    fig, ax = plt.subplots(figsize=(7, 4))
    for p in profiles:
        ax.plot(np.arange(1, p.duration + 1), p.dynamic[:, :3].sum(axis=1) / 1000.0, lw=0.9, label=f"profile {p.id}")
    ax.set_xlabel("seconds after switch-on")
    ax.set_ylabel("total active power [kW]")
    if len(profiles) <= 12:
        ax.legend(fontsize=7, ncol=2)
    _save(fig, path)
