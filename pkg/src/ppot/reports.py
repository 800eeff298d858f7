"""Machine-readable outputs and companion figures.

Every file is self-describing: CSV payloads start with `# key=value` comment
lines (tool version, seed, config hash, creation command), JSON payloads
carry the same metadata under a "meta" key.  Figures are rendered with the
Agg backend next to the delimited output; the delimited payloads are the
byte-deterministic artifacts.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import __version__


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


def _git_hash() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5, cwd=Path(__file__).parent,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def standard_meta(config: dict, seed: int, command: str = "") -> dict:
    return {
        "tool": "ppot",
        "version": __version__,
        "git": _git_hash(),
        "seed": seed,
        "config_hash": config_hash(config),
        "command": command,
        "config": config,
    }


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def write_csv(path: str | Path, rows: list[dict], meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key in ("tool", "version", "git", "seed", "config_hash", "command"):
        if key in meta:
            lines.append(f"# {key}={meta[key]}")
    if "config" in meta:
        lines.append("# config=" + json.dumps(meta["config"], sort_keys=True, default=str))
    if rows:
        header = list(rows[0].keys())
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_fmt(row[h]) for h in header))
    path.write_text("\n".join(lines) + "\n")
    return path


def write_json(path: str | Path, payload, meta: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {"meta": meta, "data": payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=2, default=str) + "\n")
    return path


def render_curves(
    path: str | Path,
    x,
    series: dict,
    xlabel: str = "",
    ylabel: str = "",
    title: str = "",
    logy: bool = False,
) -> Path:
    """Error-bar curves; `series` maps label -> (values, errors-or-None)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=140)
    for label, (values, errors) in series.items():
        if errors is not None:
            ax.errorbar(x, values, yerr=errors, marker="o", capsize=3, label=label)
        else:
            ax.plot(x, values, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if logy:
        ax.set_yscale("log")
    if len(series) > 1:
        ax.legend(frameon=False)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "ppot"})
    plt.close(fig)
    return path


def render_points(path: str | Path, points, box_side: float | None = None, title: str = "") -> Path:
    """Scatter of a 1D/2D point pattern (1D patterns are shown on a line)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5.0, 5.0), dpi=140)
    if points.shape[1] == 1:
        ax.scatter(points[:, 0], [0.0] * len(points), s=12)
        ax.set_yticks([])
    else:
        ax.scatter(points[:, 0], points[:, 1], s=12)
        ax.set_aspect("equal")
    if box_side is not None:
        half = box_side / 2.0
        if points.shape[1] == 1:
            ax.axvline(-half, color="k", lw=0.8)
            ax.axvline(half, color="k", lw=0.8)
        else:
            ax.plot(
                [-half, half, half, -half, -half],
                [-half, -half, half, half, -half],
                color="k", lw=0.8,
            )
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "ppot"})
    plt.close(fig)
    return path
