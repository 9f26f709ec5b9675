"""
Experiment harness: builds games from generators or matrix files, resolves the
parameters of each method, and runs batch-size sweeps and grid searches as
independent (method, batch, seed) cells, possibly in parallel. Traces are
exchanged as CSV files with the columns of `TRACE_COLUMNS`.

"""
import os
import logging
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field

from bvi.config import ExperimentSettings, Method
from bvi.generators import generate
from bvi.geometry import DomainError
from bvi.matrix_utils import load_matrix
from bvi.problems import Decomposition, MatrixGame
from bvi.solvers.base import (TRACE_COLUMNS, RunRecord, SolverConfig,
                              TracePoint, Variant)
from bvi.solvers.registry import get_method
from bvi.solvers.params import theoretical_params, vr_params
from bvi.utils import create_dir

logger = logging.getLogger("bvi.harness")

BUDGET_FACTOR = 200  # default budget, in multiples of M
TRACE_KEYS = ["method", "matrix", "n", "b", "seed", "eta", "gamma"]


class GridSearchError(RuntimeError):
    """Raised when every point of a grid diverged."""
    pass


class ExperimentPlan(BaseModel):
    """
    A resolved experiment: the cells of a sweep are the product of methods,
    batch sizes and seeds, all sharing the same budget and trace cadence.
    """
    model_config = ConfigDict(frozen=True, extra="forbid")

    settings: ExperimentSettings
    methods: List[Method] = Field(..., min_length=1)
    batches: List[int] = Field(..., min_length=1)
    seeds: List[int] = Field(..., min_length=1)
    budget: int = Field(..., gt=0)
    gap_every: int = Field(..., gt=0)
    out_dir: Optional[str] = None

    @property
    def cells(self) -> List[Tuple[str, int, int]]:
        return [(method, b, seed) for method in self.methods
                for b in self.batches for seed in self.seeds]


def make_problem(settings: ExperimentSettings) -> MatrixGame:
    """The matrix game of the settings, from a file or a generator."""
    decomposition = Decomposition(settings.decomposition)
    if settings.matrix is not None:
        A = load_matrix(settings.matrix)
        label = os.path.splitext(os.path.basename(settings.matrix))[0]
        return MatrixGame(A, decomposition, label=label)
    seed = settings.seed if settings.matrix_seed is None \
        else settings.matrix_seed
    A = generate(settings.generator, settings.n, seed=seed,
                 theta=settings.theta)
    return MatrixGame(A, decomposition, label=settings.generator)


def make_plan(settings: ExperimentSettings, problem: MatrixGame,
              out_dir: str = None) -> ExperimentPlan:
    return ExperimentPlan(
        settings=settings,
        methods=settings.methods,
        batches=settings.batches,
        seeds=settings.seeds,
        budget=budget_of(settings, problem),
        gap_every=gap_cadence(settings, problem),
        out_dir=out_dir,
    )


def budget_of(settings: ExperimentSettings, problem) -> int:
    return BUDGET_FACTOR * problem.M if settings.budget is None \
        else settings.budget


def gap_cadence(settings: ExperimentSettings, problem) -> int:
    return problem.M if settings.gap_every is None else settings.gap_every


def baseline_lipschitz(settings: ExperimentSettings) -> Variant:
    """
    Constants the baselines are tuned with, under the same Lipschitz
    assumption as the optimistic method: the l2 constants (L2, barL2) for
    `cor1`, the dual-norm constant L for `cor2` (or without a theory).
    """
    return Variant.DUAL_NORM_LIP if settings.theory in (None, "cor2") \
        else Variant.EUCLIDEAN_LIP


def resolve_config(problem: MatrixGame, method: str,
                   settings: ExperimentSettings, b: int = None,
                   seed: int = None) -> SolverConfig:
    """
    Solver parameters of a method. The optimistic method takes them from the
    theory unless `eta` is set, in which case `gamma` (default 0) and `K`
    (default M / 3b) are explicit too. Mirror Prox runs as many iterations as
    the budget allows, with step 1 / (2 L2) under `cor1` and 1 / (2L)
    otherwise unless `eta` is set; its batch size and seed only label the
    record. Plugged-in methods need an explicit `eta`.
    """
    get_method(method)
    b = settings.b if b is None else b
    seed = settings.seed if seed is None else seed
    M, lip, budget = problem.M, problem.lipschitz, budget_of(settings, problem)
    S = settings.S
    variant = baseline_lipschitz(settings)

    if method == "mirror-prox":
        if settings.eta is not None:
            eta = settings.eta
        elif variant == Variant.EUCLIDEAN_LIP:
            eta = 1. / (2 * lip.L2)
        else:
            eta = 1. / (2 * lip.L)
        return SolverConfig(eta=eta, gamma=0., b=b,
                            K=max(1, budget // (2 * M)), S=1, seed=seed,
                            record_time=settings.record_time)

    if method == "vr-mirror-prox":
        config = vr_params(M, b, lip, S=S or 1, seed=seed,
                           scheme=settings.scheme, variant=variant,
                           C=settings.C, record_time=settings.record_time)
        update = {"eta": settings.eta, "gamma": settings.gamma,
                  "K": settings.K}
    elif method == "optimistic" and settings.eta is None:
        if settings.theory is None:
            raise ValueError("Either eta or a theory variant must be given")
        config = theoretical_params(
            M, b, lip, variant=settings.theory, C=settings.C,
            S=S or 1, eta_scale=settings.eta_scale, seed=seed,
            scheme=settings.scheme, shared_batch=settings.shared_batch,
            record_time=settings.record_time)
        update = {"gamma": settings.gamma, "K": settings.K}
    elif settings.eta is None:
        raise ValueError(f"Method {method} needs an explicit eta")
    else:
        gamma = 0. if settings.gamma is None else settings.gamma
        K = max(1, int(round(M / (3 * b)))) if settings.K is None \
            else settings.K
        config = SolverConfig(
            eta=settings.eta, gamma=gamma, b=b, K=K, S=S or 1, seed=seed,
            scheme=settings.scheme, shared_batch=settings.shared_batch,
            record_time=settings.record_time)
        update = {}

    update = {key: value for key, value in update.items() if value is not None}
    if S is None:  # enough epochs to spend the budget, each costing >= M
        update["S"] = budget // M + 1
    return SolverConfig(**{**config.model_dump(), **update})


def run_method(problem: MatrixGame, method: str, settings: ExperimentSettings,
               b: int = None, seed: int = None,
               config: SolverConfig = None) -> RunRecord:
    """Run a registered method, with parameters from the settings."""
    runner = get_method(method)
    config = resolve_config(problem, method, settings, b, seed) \
        if config is None else config
    return runner(problem, config, gap_cadence(settings, problem),
                  budget_of(settings, problem))


def _run_cell(problem, method, settings, b, seed):
    logger.info(f"Cell {method} b={b} seed={seed}")
    return run_method(problem, method, settings, b=b, seed=seed)


def sweep_batches(plan: ExperimentPlan, problem: MatrixGame = None,
                  n_jobs: int = 1) -> List[RunRecord]:
    """
    Run every (method, batch, seed) cell of the plan with the same oracle
    budget, and write all traces in `sweep.csv` when the plan has an output
    directory. Records are returned in cell order, whatever `n_jobs` is.

    Parameters
    ----------
    plan : ExperimentPlan
        Methods, batch sizes, seeds, budget and cadence of the sweep.
    problem : MatrixGame, optional
        The game; built from the plan's settings if not given.
    n_jobs : int
        Number of cells run concurrently.

    Returns
    -------
    records : list of RunRecord
        One record per cell.

    """
    problem = make_problem(plan.settings) if problem is None else problem
    settings = plan.settings.model_copy(
        update={"budget": plan.budget, "gap_every": plan.gap_every})
    records = Parallel(n_jobs=n_jobs)(
        delayed(_run_cell)(problem, method, settings, b, seed)
        for method, b, seed in tqdm(plan.cells))

    if plan.out_dir is not None:
        out_path = os.path.join(create_dir(plan.out_dir), "sweep.csv")
        write_traces(records, out_path)
    return records


def _final_gap(problem, method, settings, config):
    try:
        return run_method(problem, method, settings, config=config).final_gap
    except (DomainError, FloatingPointError, OverflowError) as err:
        logger.warning(f"Grid point eta={config.eta} gamma={config.gamma} "
                       f"diverged: {err}")
        return np.nan


def grid_search(problem: MatrixGame, method: str, eta_grid: Sequence[float],
                gamma_grid: Sequence[float], budget: int,
                settings: ExperimentSettings = None, seeds=(0,), b: int = None,
                n_jobs: int = 1) -> Tuple[SolverConfig, pd.DataFrame]:
    """
    Evaluate the final gap at a fixed budget for every (eta, gamma) of the
    grid and seed, and select the point with the smallest median final gap.
    Ties go to the smaller eta, then the smaller gamma; points whose gap is not
    finite count as diverged.

    Returns
    -------
    best : SolverConfig
        Configuration of the selected point (with the first seed).
    leaderboard : pd.DataFrame
        One row per grid point, sorted from best to worst.

    """
    if len(eta_grid) == 0 or len(gamma_grid) == 0 or len(seeds) == 0:
        raise ValueError("Grids and seeds must be non-empty")
    settings = ExperimentSettings() if settings is None else settings
    settings = settings.model_copy(update={"budget": budget})
    if method == "mirror-prox":
        gamma_grid = [0.]  # no momentum to tune

    configs = {}
    for eta in eta_grid:
        for gamma in gamma_grid:
            point = settings.model_copy(update={"eta": eta, "gamma": gamma})
            configs[(eta, gamma)] = [
                resolve_config(problem, method, point, b=b, seed=seed)
                for seed in seeds]
    cells = [(key, config) for key, seed_configs in configs.items()
             for config in seed_configs]
    final_gaps = Parallel(n_jobs=n_jobs)(
        delayed(_final_gap)(problem, method, settings, config)
        for _, config in tqdm(cells))

    rows = {}
    for (key, _), final_gap in zip(cells, final_gaps):
        rows.setdefault(key, []).append(final_gap)
    leaderboard = pd.DataFrame([
        {"method": method, "eta": eta, "gamma": gamma,
         "median_final_gap": float(np.median(gaps))
         if np.all(np.isfinite(gaps)) else np.nan,
         "n_seeds": len(gaps)}
        for (eta, gamma), gaps in rows.items()])
    leaderboard = leaderboard.sort_values(
        ["median_final_gap", "eta", "gamma"], na_position="last",
        kind="mergesort").reset_index(drop=True)

    if not np.isfinite(leaderboard.loc[0, "median_final_gap"]):
        raise GridSearchError(f"All grid points diverged: eta in "
                              f"{list(eta_grid)}, gamma in {list(gamma_grid)}")
    best = leaderboard.loc[0]
    return configs[(best["eta"], best["gamma"])][0], leaderboard

# **************************************************************************** #
# Trace tables
# **************************************************************************** #

def records_to_frame(records: Sequence[RunRecord]) -> pd.DataFrame:
    if len(records) == 0:
        return pd.DataFrame(columns=TRACE_COLUMNS)
    return pd.concat([record.to_frame() for record in records],
                     ignore_index=True)


def frame_to_records(trace_df: pd.DataFrame) -> List[RunRecord]:
    """
    Rebuild records from a trace table, one per distinct run key in order of
    appearance. Points and accounting are not part of the table: `x_S` is
    empty and the totals are read off the last trace point.
    """
    records = []
    for key, run_df in trace_df.groupby(TRACE_KEYS, sort=False):
        meta = dict(zip(TRACE_KEYS, key))
        trace = tuple(TracePoint(int(calls), float(gap), float(elapsed))
                      for calls, gap, elapsed in zip(
                          run_df["oracle_calls"], run_df["gap"],
                          run_df["elapsed_s"]))
        records.append(RunRecord(
            method=meta["method"], trace=trace, x_S=np.empty(0),
            fingerprint="", seed=int(meta["seed"]), b=int(meta["b"]),
            eta=float(meta["eta"]), gamma=float(meta["gamma"]),
            total_calls=trace[-1].oracle_calls, n_inner_steps=0,
            n_refreshes=0, matrix=str(meta["matrix"]), n=int(meta["n"])))
    return records


def write_traces(records: Sequence[RunRecord], out_path: str) -> str:
    records_to_frame(records).to_csv(out_path, index=False)
    logger.info(f"Traces of {len(records)} runs written in {out_path}")
    return out_path


def batches_to_target(records: Sequence[RunRecord],
                      target_ratio=.1) -> pd.DataFrame:
    """
    Oracle calls each run needed to bring the gap to `target_ratio` times its
    initial value (NaN when never reached).
    """
    rows = []
    for record in records:
        target = target_ratio * record.initial_gap
        reached = [point.oracle_calls for point in record.trace
                   if point.gap <= target]
        rows.append({"method": record.method, "b": record.b,
                     "seed": record.seed,
                     "calls_to_target": reached[0] if reached else np.nan})
    return pd.DataFrame(rows, columns=["method", "b", "seed",
                                       "calls_to_target"])
