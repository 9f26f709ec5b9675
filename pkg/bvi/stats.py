"""
Aggregation of run traces across seeds: for every configuration and oracle
call checkpoint, the median gap and its interquartile range.

"""
import logging
from typing import Sequence, Union

import pandas as pd

from bvi.harness import records_to_frame
from bvi.solvers.base import RunRecord

logger = logging.getLogger("bvi.stats")

CONFIG_KEYS = ["method", "matrix", "n", "b", "eta", "gamma"]
SUMMARY_COLUMNS = CONFIG_KEYS + ["oracle_calls", "gap_median", "gap_q25",
                                 "gap_q75", "n_seeds"]


def _as_frame(records) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    return records_to_frame(records)


def aggregate(records: Union[Sequence[RunRecord], pd.DataFrame]
              ) -> pd.DataFrame:
    """
    Summarise traces across seeds: one row per configuration and checkpoint
    with the median, first and third quartiles of the gap.

    Parameters
    ----------
    records : list of RunRecord or pd.DataFrame
        Runs, or their trace table, to aggregate.

    Returns
    -------
    summary : pd.DataFrame
        The summary table, sorted by configuration and checkpoint.

    Raises
    ------
    ValueError
        If there is nothing to aggregate, or if the seeds of a configuration
        were traced at different checkpoints.

    """
    trace_df = _as_frame(records)
    if len(trace_df) == 0:
        raise ValueError("No records to aggregate")

    for key, config_df in trace_df.groupby(CONFIG_KEYS, sort=True):
        checkpoints = config_df.groupby("seed")["oracle_calls"].apply(tuple)
        if checkpoints.nunique() > 1:
            raise ValueError(f"Seeds of {dict(zip(CONFIG_KEYS, key))} were "
                             "traced at different checkpoints")

    grouped = trace_df.groupby(CONFIG_KEYS + ["oracle_calls"], sort=True)["gap"]
    summary = pd.DataFrame({
        "gap_median": grouped.median(),
        "gap_q25": grouped.quantile(.25),
        "gap_q75": grouped.quantile(.75),
        "n_seeds": grouped.size(),
    }).reset_index()
    logger.info(f"Aggregated {len(trace_df)} trace points into "
                f"{len(summary)} checkpoints")
    return summary[SUMMARY_COLUMNS]
