"""Force-magnitude and contact-count figures from a report directory."""

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .contact import N_TIPS, TIP_NAMES  # noqa: E402
from .io import DataError  # noqa: E402

PLOT_FIELDS = ["frame_index"] + [f"force_{n}" for n in TIP_NAMES] + ["contacts_before", "contacts_after"]


def read_report_rows(path):
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such report file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    needed = {"frame_index", "contacts_before", "contacts_after"} | {f"force_{i}" for i in range(N_TIPS)}
    missing = needed - set(reader.fieldnames or ())
    if missing:
        raise DataError(f"{path}:1: missing columns {sorted(missing)}")
    return rows


def plot_report(report_dir):
    """Write ``force_magnitude.png``, ``contact_count.png`` and ``plot_data.csv``."""
    report_dir = Path(report_dir)
    rows = read_report_rows(report_dir / "report.csv")
    try:
        frames = np.array([int(r["frame_index"]) for r in rows], dtype=int)
        forces = np.array([[float(r[f"force_{i}"]) for i in range(N_TIPS)] for r in rows]).reshape(-1, N_TIPS)
        before = np.array([int(r["contacts_before"]) for r in rows], dtype=int)
        after = np.array([int(r["contacts_after"]) for r in rows], dtype=int)
    except ValueError as exc:
        raise DataError(f"{report_dir / 'report.csv'}: {exc}") from None

    fig, ax = plt.subplots(figsize=(7, 3.5))
    for i, name in enumerate(TIP_NAMES):
        ax.plot(frames, forces[:, i], label=name)
    ax.set_xlabel("frame")
    ax.set_ylabel("|F| (N)")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(report_dir / "force_magnitude.png", dpi=100)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.step(frames, before, where="mid", label="kinematic")
    ax.step(frames, after, where="mid", label="refined")
    ax.axhline(2, color="grey", lw=0.8, ls="--")
    ax.set_xlabel("frame")
    ax.set_ylabel("tips in contact")
    ax.legend(loc="upper right", fontsize="small")
    fig.tight_layout()
    fig.savefig(report_dir / "contact_count.png", dpi=100)
    plt.close(fig)

    with open(report_dir / "plot_data.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLOT_FIELDS)
        for k in range(len(frames)):
            w.writerow([frames[k]] + [repr(float(v)) for v in forces[k]] + [before[k], after[k]])
    return [report_dir / n for n in ("force_magnitude.png", "contact_count.png", "plot_data.csv")]
