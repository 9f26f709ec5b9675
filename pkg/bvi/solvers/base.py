"""
Shared solver plumbing: validated solver parameters, the iterate state of the
optimistic method, run records, and the trace recorder that meters gap
evaluations separately from the solver's oracle budget.

"""
import time
import json
import hashlib
import logging
from enum import Enum
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from bvi.problems import OracleCounter, SamplingKind

logger = logging.getLogger("bvi.solvers")

# Columns of the trace CSV schema, in order
TRACE_COLUMNS = ["method", "matrix", "n", "b", "seed", "eta", "gamma",
                 "oracle_calls", "gap", "elapsed_s"]


class FeasibilityError(ValueError):
    """Raised when a batch size violates the bound of a parameter variant."""

    def __init__(self, message: str, bound: float, variant: str):
        super().__init__(message)
        self.bound = bound
        self.variant = variant

class InvalidSolverState(Exception):
    """Raised when a solver step is requested at the wrong point of an epoch."""
    pass


class Variant(Enum):
    EUCLIDEAN_LIP = "cor1"  # constants from the l2 assumptions
    DUAL_NORM_LIP = "cor2"  # constants from the dual-norm assumption


class SolverConfig(BaseModel):
    """
    Parameters of a solver run. The probability `p` is recorded for
    completeness (theory sets it equal to `gamma`) but drives no coin flip.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    eta: float = Field(..., gt=0, description="Step size.")
    gamma: float = Field(0., ge=0, le=1, description="Negative momentum.")
    p: float = Field(.5, gt=0, lt=1, description="Recorded probability.")
    b: int = Field(1, ge=1, description="Batch size.")
    K: int = Field(1, ge=1, description="Inner iterations per epoch.")
    S: int = Field(1, ge=1, description="Number of epochs.")
    seed: int = Field(0, ge=0, lt=2 ** 64, description="Random seed.")
    scheme: SamplingKind = Field(SamplingKind.UNIFORM,
                                 description="Index sampling scheme.")
    shared_batch: bool = Field(False, description="One batch for all blocks.")
    record_time: bool = Field(False, description="Record wall-clock seconds.")

    def fingerprint(self) -> str:
        """Short sha256 digest of the canonical JSON dump of the config."""
        payload = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


@dataclass
class SolverState:
    """
    Iterates of the optimistic method: current and previous points, the
    snapshot w with its cached operator value, the dual anchor grad h(w_bar),
    the running sum of all inner iterates, and the epoch accumulators needed
    to refresh the snapshot.
    """
    x_cur: np.ndarray
    x_prev: np.ndarray
    w: np.ndarray
    F_w: np.ndarray
    w_bar_dual: np.ndarray
    run_sum: np.ndarray
    epoch_primal_sum: np.ndarray
    epoch_dual_sum: np.ndarray
    counter: OracleCounter = field(default_factory=OracleCounter)
    n_run: int = 0  # iterates accumulated in run_sum
    k: int = 0
    s: int = 0
    n_refreshes: int = 0

    def running_average(self, fallback: np.ndarray = None) -> np.ndarray:
        if self.n_run == 0:
            return self.x_cur.copy() if fallback is None else fallback
        return self.run_sum / self.n_run


class TracePoint(NamedTuple):
    oracle_calls: int
    gap: float
    elapsed: float


@dataclass(frozen=True)
class RunRecord:
    """
    Outcome of a solver run: the (oracle calls, gap, elapsed) trace, the final
    averaged point, the oracle accounting and the configuration fingerprint.
    """
    method: str
    trace: Tuple[TracePoint, ...]
    x_S: np.ndarray
    fingerprint: str
    seed: int
    b: int
    eta: float
    gamma: float
    total_calls: int
    n_inner_steps: int
    n_refreshes: int
    gap_calls: int = 0
    matrix: str = "custom"
    n: int = 0
    iterates: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def final_gap(self) -> float:
        return self.trace[-1].gap

    @property
    def initial_gap(self) -> float:
        return self.trace[0].gap

    def to_frame(self) -> pd.DataFrame:
        """The trace as rows of the CSV schema."""
        trace_df = pd.DataFrame(self.trace, columns=[
            "oracle_calls", "gap", "elapsed_s"])
        for column, value in [("method", self.method), ("matrix", self.matrix),
                              ("n", self.n), ("b", self.b), ("seed", self.seed),
                              ("eta", self.eta), ("gamma", self.gamma)]:
            trace_df[column] = value
        return trace_df[TRACE_COLUMNS]


class TraceRecorder(object):
    """
    Records the merit (duality gap) of the running average every `gap_every`
    oracle units. Gap evaluations charge their own counter, so they never
    consume the solver's budget.
    """

    def __init__(self, merit: Callable, gap_every: int, record_time=False):
        if gap_every < 1:
            raise ValueError(f"Gap cadence must be positive, {gap_every} given")
        self.merit = merit
        self.gap_every = gap_every
        self.record_time = record_time
        self.gap_counter = OracleCounter()
        self.trace: List[TracePoint] = []
        self._start = time.perf_counter()
        self._next_checkpoint = 0

    def _elapsed(self) -> float:
        return time.perf_counter() - self._start if self.record_time else 0.

    def record(self, calls: int, point: np.ndarray):
        """Record unconditionally, unless no oracle call happened since."""
        if len(self.trace) > 0 and calls <= self.trace[-1].oracle_calls:
            return
        gap_value = float(self.merit(point, counter=self.gap_counter))
        self.trace.append(TracePoint(int(calls), gap_value, self._elapsed()))
        self._next_checkpoint = (calls // self.gap_every + 1) * self.gap_every

    def maybe_record(self, calls: int, point_fn: Callable[[], np.ndarray]):
        """Record when a checkpoint has been crossed; the point is lazy."""
        if calls >= self._next_checkpoint:
            self.record(calls, point_fn())


def make_record(method: str, recorder: TraceRecorder, x_S, config: SolverConfig,
                total_calls: int, n_inner_steps: int, n_refreshes: int,
                problem, iterates=None) -> RunRecord:
    return RunRecord(
        method=method,
        trace=tuple(recorder.trace),
        x_S=np.asarray(x_S),
        fingerprint=config.fingerprint(),
        seed=config.seed,
        b=config.b,
        eta=config.eta,
        gamma=config.gamma,
        total_calls=int(total_calls),
        n_inner_steps=int(n_inner_steps),
        n_refreshes=int(n_refreshes),
        gap_calls=recorder.gap_counter.calls,
        matrix=getattr(problem, "label", problem.name),
        n=getattr(problem, "n", problem.dim),
        iterates=None if iterates is None else tuple(iterates),
    )
