# harness/plotting.py
"""
Loss-curve export.

Reads the CSV logs of a run directory and writes one (step, value) series
per loss curve, named train_<loss>_VS_step.csv, plus an SVG line chart per
series when matplotlib is available.
"""

import os

import pandas as pd

from ..constants import ENCODER_SERIES, LOG_FILES, SERIES_STEM, WORLD_MODEL_SERIES
from ..errors import UsageError
from ..utils import ensure_dir, log_info, log_warning
from .logs import read_log

try:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt
except ImportError:
    plt = None


def series_frames(log_dir):
    """
    Collect every loss series from the logs in `log_dir`.

    Returns:
        dict: loss name -> DataFrame with columns (step, value)
    """
    series = {}
    for log_key, names in (('world_model', WORLD_MODEL_SERIES), ('encoder', ENCODER_SERIES)):
        df = read_log(os.path.join(log_dir, LOG_FILES[log_key]))
        for name in names:
            if name not in df.columns:
                raise UsageError(f"Column '{name}' missing from {LOG_FILES[log_key]}")
            series[name] = pd.DataFrame({'step': df['step'], 'value': df[name]})
    return series


def write_svg(df, name, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(df['step'], df['value'], linewidth=1.2)
    ax.set_xlabel('step')
    ax.set_ylabel(name)
    ax.set_title(f"{name} vs step")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format='svg')
    plt.close(fig)


def emit_plots(log_dir, out_dir, svg=True):
    """
    Write the series files of a run.

    Args:
        log_dir (str): Directory holding encoder_log.csv and world_model_log.csv
        out_dir (str): Destination directory
        svg (bool): Also draw SVG charts

    Returns:
        list: Paths of the written CSV series
    """
    ensure_dir(out_dir)
    written = []
    series = series_frames(log_dir)
    if svg and plt is None:
        log_warning("matplotlib not available; writing CSV series only")
    for name, df in series.items():
        stem = SERIES_STEM.format(name=name)
        csv_path = os.path.join(out_dir, f"{stem}.csv")
        df.to_csv(csv_path, index=False)
        written.append(csv_path)
        if svg and plt is not None:
            write_svg(df, name, os.path.join(out_dir, f"{stem}.svg"))
    log_info(f"Wrote {len(written)} loss series to {out_dir}")
    return written
