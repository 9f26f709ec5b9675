"""
Plots of the duality gap (log scale) against oracle calls, one panel per batch
size and one curve per method, medians across seeds. Figures are written as
SVG files that are byte-identical for identical inputs.

"""
import re
import logging
from typing import List, Sequence

import numpy as np
import pandas as pd
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import seaborn as sns
from matplotlib.ticker import FuncFormatter, LogLocator, NullFormatter

from bvi.solvers.base import TRACE_COLUMNS
from bvi.stats import aggregate

logger = logging.getLogger("bvi.plotting")

NUMERIC_COLUMNS = ["n", "b", "seed", "eta", "gamma", "oracle_calls", "gap",
                   "elapsed_s"]
GAP_FLOOR = 1e-16  # gaps at an exact saddle are drawn here on the log axis


class TraceFormatError(ValueError):
    """Raised when a trace CSV is malformed; carries the offending line."""

    def __init__(self, message: str, line: int = None):
        super().__init__(message if line is None else f"{message} (line {line})")
        self.line = line


def read_traces(csv_path: str) -> pd.DataFrame:
    """
    Read and validate a trace CSV. Line numbers in errors are 1-based file
    lines, the header being line 1.
    """
    try:
        raw_df = pd.read_csv(csv_path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise TraceFormatError(f"{csv_path} is empty", line=1)
    except pd.errors.ParserError as err:
        match = re.search(r"line (\d+)", str(err))
        raise TraceFormatError(f"{csv_path} is malformed: {err}",
                               line=int(match.group(1)) if match else None)

    missing = [column for column in TRACE_COLUMNS
               if column not in raw_df.columns]
    if missing:
        raise TraceFormatError(f"{csv_path} lacks columns {missing}", line=1)

    trace_df = raw_df[TRACE_COLUMNS].copy()
    for column in NUMERIC_COLUMNS:
        values = pd.to_numeric(raw_df[column], errors="coerce")
        invalid = values.isna() & (raw_df[column].str.lower() != "nan")
        if invalid.any():
            row = int(np.flatnonzero(invalid.to_numpy())[0])
            raise TraceFormatError(
                f"{csv_path}: invalid {column} value "
                f"{raw_df[column].iloc[row]!r}", line=row + 2)
        trace_df[column] = raw_df[column].map(float)  # exact round trip
    for column in ["n", "b", "seed", "oracle_calls"]:
        trace_df[column] = trace_df[column].astype(np.int64)
    return trace_df


def log_tick_label(value, _pos=None) -> str:
    """Decade labels: 1, 1e-1, 1e-2, ... and 1e1, 1e2, ..."""
    exponent = int(np.round(np.log10(value)))
    return "1" if exponent == 0 else f"1e{exponent}"


def plot_traces(trace_dfs: Sequence[pd.DataFrame], out_path: str) -> str:
    """
    Draw the median gap of every (method, batch size) against oracle calls.

    Parameters
    ----------
    trace_dfs : list of pd.DataFrame
        Trace tables, as read by `read_traces`.
    out_path : str
        Where the SVG file will be written.

    Returns
    -------
    out_path : str
        The path of the figure.

    """
    trace_dfs = [trace_df for trace_df in trace_dfs if len(trace_df) > 0]
    if len(trace_dfs) == 0:
        raise ValueError("Cannot plot: no data")
    summary = aggregate(pd.concat(trace_dfs, ignore_index=True))

    methods = sorted(summary["method"].unique())
    batches = sorted(summary["b"].unique())
    palette = dict(zip(methods, sns.color_palette("colorblind", len(methods))))

    with plt.rc_context({"svg.hashsalt": "bvi", "svg.fonttype": "none"}):
        fig, axes = plt.subplots(1, len(batches), squeeze=False, sharey=True,
                                 figsize=(4 * len(batches), 3.5))
        for ax, b in zip(axes[0], batches):
            for method in methods:
                curve = summary[(summary["method"] == method)
                                & (summary["b"] == b)]
                if len(curve) == 0:
                    continue
                ax.plot(curve["oracle_calls"],
                        np.maximum(curve["gap_median"], GAP_FLOOR),
                        color=palette[method], label=method,
                        gid=f"trace-{method}-b{b}")
            ax.set_yscale("log")
            ax.yaxis.set_major_locator(LogLocator(base=10))
            ax.yaxis.set_major_formatter(FuncFormatter(log_tick_label))
            ax.yaxis.set_minor_formatter(NullFormatter())
            ax.set_title(f"b = {b}")
            ax.set_xlabel("oracle calls")
        axes[0][0].set_ylabel("duality gap")
        axes[0][-1].legend()
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)

    logger.info(f"Figure with {len(batches)} panels written in {out_path}")
    return out_path


def plot_csv_files(csv_paths: List[str], out_path: str) -> str:
    return plot_traces([read_traces(path) for path in csv_paths], out_path)
