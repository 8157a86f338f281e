# harness/logs.py
"""CSV loss logs, one row per logged step."""
import os

import pandas as pd

from ..errors import UsageError
from ..utils import ensure_dir, is_valid_file, log_error, log_info


class LossLog:
    """
    Accumulates metric rows in memory and writes them with pandas.

    Rows carry no timestamps so identical runs produce identical files.
    """

    def __init__(self, path, columns=None):
        self.path = path
        self.columns = list(columns) if columns else None
        self.rows = []

    def __len__(self):
        return len(self.rows)

    def append(self, step, metrics):
        row = {'step': int(step)}
        row.update({k: float(v) for k, v in metrics.items()})
        self.rows.append(row)

    def frame(self):
        df = pd.DataFrame(self.rows)
        if self.columns:
            df = df.reindex(columns=['step'] + [c for c in self.columns if c != 'step'])
        return df

    def write(self):
        """Rewrite the whole CSV file."""
        ensure_dir(os.path.dirname(self.path))
        try:
            self.frame().to_csv(self.path, index=False)
        except OSError as e:
            log_error(f"Error writing log {self.path}: {str(e)}")
            raise
        log_info(f"Wrote {len(self.rows)} rows to {self.path}")
        return self.path


def read_log(path):
    """
    Read a loss log written by LossLog.

    Raises:
        UsageError: Missing file or no rows
    """
    if not os.path.exists(path):
        raise UsageError(f"Log file not found: {path}")
    if not is_valid_file(path):
        raise UsageError(f"Log file is empty: {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise UsageError(f"Log file is empty: {path}")
    if df.empty:
        raise UsageError(f"Log file has no rows: {path}")
    if 'step' not in df.columns:
        raise UsageError(f"Log file {path} has no 'step' column")
    return df
