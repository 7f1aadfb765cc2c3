"""Static SVG figures: position vs reference on top, actuator command below."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_traces(traces: Sequence, path, title: str = "") -> Path:
    path = Path(path)
    fig, (ax_x, ax_u) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
    for i, trace in enumerate(traces, start=1):
        t = [r.t for r in trace]
        label = f" FM{i}" if len(traces) > 1 else ""
        ax_x.plot(t, [r.x_true * 100 for r in trace], label=f"x{label}")
        ax_x.plot(t, [r.x_d * 100 for r in trace], "--", label=f"x_d{label}")
    ax_x.set_ylabel("position [cm]")
    ax_x.legend(loc="best", fontsize="small")
    if title:
        ax_x.set_title(title)

    trace = traces[0]
    t = [r.t for r in trace]
    if trace and trace[0].current is not None:
        ax_u.plot(t, [r.current for r in trace])
        ax_u.set_ylabel("coil current [A]")
    else:
        for name in ("theta1", "theta2"):
            vals = [getattr(r, name) for r in trace]
            if any(v is not None for v in vals):
                ax_u.plot(t, [v * 57.29577951308232 if v is not None else float("nan") for v in vals], label=name)
        ax_u.set_ylabel("magnet angle [deg]")
        ax_u.legend(loc="best", fontsize="small")
    ax_u.set_xlabel("t [s]")
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
