"""Static SVG line charts from result and trace CSVs (matplotlib, Agg backend)."""
from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import SchemaError, read_csv  # noqa: E402

# kind -> (x column, y column, series columns, x label, source)
PLOT_KINDS = {
    "iteration": ("iteration", "tau", ("algorithm", "b", "N"), "outer iteration", "trace"),
    "nt": ("N_t", "tau_extracted", ("algorithm", "b", "p_max_dbm", "topology"), "BS antennas $N_t$", "results"),
    "pmax": ("p_max_dbm", "tau_extracted", ("algorithm", "b", "topology"), "$P_{max}$ (dBm)", "results"),
    "n": ("N", "tau_extracted", ("algorithm", "b", "topology"), "RIS elements $N$", "results"),
    "algorithms": ("algorithm", "tau_extracted", ("topology", "b"), "algorithm", "results"),
}


def _series_label(keys, values):
    return ", ".join(f"{k}={v}" for k, v in zip(keys, values))


def _number(text):
    try:
        return float(text)
    except ValueError:
        return text


def curve_data(rows, kind):
    """``{series label: (xs, mean ys)}`` with only the series columns that vary."""
    x_col, y_col, series_cols, _, _ = PLOT_KINDS[kind]
    varying = [c for c in series_cols if c != x_col and len({r[c] for r in rows}) > 1]
    if kind == "iteration":
        # runs that stopped early keep their final value on later iterations
        runs = defaultdict(dict)
        for r in rows:
            key = tuple(r[c] for c in ("scenario_seed", "topology", "algorithm", "b", "N", "N_t", "p_max_dbm"))
            runs[key][int(r["iteration"])] = float(r[y_col])
        last = max(max(v) for v in runs.values())
        grouped = defaultdict(lambda: defaultdict(list))
        for key, seq in runs.items():
            row = dict(zip(("scenario_seed", "topology", "algorithm", "b", "N", "N_t", "p_max_dbm"), key))
            label = _series_label(varying, [row[c] for c in varying])
            val = np.nan
            for it in range(1, last + 1):
                val = seq.get(it, val)
                grouped[label][it].append(val)
    else:
        grouped = defaultdict(lambda: defaultdict(list))
        for r in rows:
            if r.get("status", "ok") != "ok":
                continue
            label = _series_label(varying, [r[c] for c in varying])
            grouped[label][_number(r[x_col])].append(float(r[y_col]))
    out = {}
    for label in sorted(grouped):
        xs = list(grouped[label])
        if all(isinstance(x, float) or isinstance(x, int) for x in xs):
            xs = sorted(xs)
        out[label] = (xs, [float(np.nanmean(grouped[label][x])) for x in xs])
    return out


def plot_csv(csv_path, kind, out_path, title=None):
    if kind not in PLOT_KINDS:
        raise SchemaError(f"unknown plot kind {kind!r}; expected one of {sorted(PLOT_KINDS)}")
    x_col, y_col, series_cols, xlabel, _ = PLOT_KINDS[kind]
    required = (x_col, y_col) + series_cols
    if kind == "iteration":
        required += ("scenario_seed", "topology", "N_t", "p_max_dbm")
    rows = read_csv(csv_path, required)
    if not rows:
        raise SchemaError(f"{csv_path}: no data rows")
    curves = curve_data(rows, kind)

    plt.rcParams["svg.hashsalt"] = "dualris"
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in curves.items():
        pos = xs if not any(isinstance(x, str) for x in xs) else list(range(len(xs)))
        ax.plot(pos, ys, marker="o", label=label or "all")
        if pos is not xs:
            ax.set_xticks(pos, [str(x) for x in xs])
    ax.set_xlabel(xlabel)
    ax.set_ylabel("max-min SINR")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(curves) > 1:
        ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return out_path
