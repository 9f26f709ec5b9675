"""
The batched optimistic variance-reduced method with negative momentum. Each
epoch runs K inner steps, each sampling b component indices per block to form
the estimate of 2 F(x_k) - F(x_{k-1}) anchored at the snapshot w, followed by
a Bregman prox step pulled towards the dual-averaged snapshot w_bar. At the
end of an epoch the snapshot is refreshed with the primal average of the
epoch's iterates, and w_bar with their dual average.

"""
import logging
from typing import Callable, Optional

import numpy as np

from bvi.geometry import check_point, grad, prox_step
from bvi.problems import (FiniteSumProblem, OracleCounter, SamplingKind,
                          draw_batches, estimate_delta, importance_scheme,
                          uniform_scheme)
from bvi.solvers.base import (InvalidSolverState, RunRecord, SolverConfig,
                              SolverState, TraceRecorder, make_record)
from bvi.utils import make_rng

logger = logging.getLogger("bvi.solvers.optimistic")

METHOD_NAME = "optimistic"


def init_state(problem: FiniteSumProblem, config: SolverConfig, x0=None,
               counter: OracleCounter = None) -> SolverState:
    """
    Initialise the method with x_{-1} = x_0 = w_0 = x0 (the centre of the
    domain by default) and one full operator evaluation at w_0, charging M.
    """
    if config.b > problem.M:
        raise ValueError(f"Batch size {config.b} exceeds M={problem.M}")
    x0 = problem.initial_point() if x0 is None else x0
    x0 = check_point(problem.geometry, x0, interior=True, name="x0")
    counter = OracleCounter() if counter is None else counter

    F_w = problem.operator(x0)
    counter.charge(problem.M)
    return SolverState(
        x_cur=x0.copy(),
        x_prev=x0.copy(),
        w=x0.copy(),
        F_w=F_w,
        w_bar_dual=grad(problem.geometry, x0),
        run_sum=np.zeros_like(x0),
        epoch_primal_sum=np.zeros_like(x0),
        epoch_dual_sum=np.zeros_like(x0),
        counter=counter,
    )


def sampling_scheme(problem, state: SolverState, config: SolverConfig):
    """Distribution of the next batch, from d = 2 x_k - w - x_{k-1}."""
    if config.scheme == SamplingKind.IMPORTANCE:
        d = 2 * state.x_cur - state.w - state.x_prev
        return importance_scheme(problem, d, shared_batch=config.shared_batch)
    return uniform_scheme(problem)


def inner_step(state: SolverState, problem: FiniteSumProblem,
               config: SolverConfig, rng: np.random.Generator) -> SolverState:
    """
    One inner iteration: draw the batch(es), estimate the operator and take
    the prox step with momentum. The state is updated in place and returned;
    the counter is charged 3b units.
    """
    if state.k >= config.K:
        raise InvalidSolverState(f"Epoch {state.s} already has {state.k} "
                                 "steps: the snapshot must be refreshed")
    scheme = sampling_scheme(problem, state, config)
    batch = draw_batches(problem, scheme, config.b, rng,
                         shared_batch=config.shared_batch)
    delta = estimate_delta(problem, state.x_cur, state.x_prev, state.w,
                           state.F_w, batch, scheme, counter=state.counter)
    x_next = prox_step(problem.geometry, state.x_cur, state.w_bar_dual,
                       config.gamma, config.eta, delta)

    state.x_prev, state.x_cur = state.x_cur, x_next
    state.run_sum += x_next
    state.n_run += 1
    state.epoch_primal_sum += x_next
    state.epoch_dual_sum += grad(problem.geometry, x_next)
    state.k += 1
    return state


def epoch_end(state: SolverState, problem: FiniteSumProblem,
              K: int) -> SolverState:
    """
    Refresh the snapshot after K inner steps: w becomes the mean of the
    epoch's iterates, grad h(w_bar) the mean of their gradients, and F(w) is
    recomputed (charging M). The last two iterates carry over to the next
    epoch unchanged.
    """
    if state.k != K:
        raise InvalidSolverState(f"Cannot close epoch {state.s} after "
                                 f"{state.k} of {K} inner steps")
    state.w = state.epoch_primal_sum / K
    state.w_bar_dual = state.epoch_dual_sum / K
    state.F_w = problem.operator(state.w)
    state.counter.charge(problem.M)

    state.epoch_primal_sum = np.zeros_like(state.w)
    state.epoch_dual_sum = np.zeros_like(state.w)
    state.k = 0
    state.s += 1
    state.n_refreshes += 1
    logger.debug(f"Epoch {state.s} closed at {state.counter.calls} calls")
    return state


def run(problem: FiniteSumProblem, config: SolverConfig, gap_every: int,
        budget: int, x0=None, merit: Optional[Callable] = None,
        keep_iterates=False) -> RunRecord:
    """
    Run the method for S epochs or until the oracle budget is exhausted,
    whichever comes first, tracing the merit of the running average of all
    inner iterates.

    Parameters
    ----------
    problem : FiniteSumProblem
        The problem to solve.
    config : SolverConfig
        Step size, momentum, batch size, epoch length and count, seed.
    gap_every : int
        Cadence of the trace, in oracle units.
    budget : int
        Maximum number of oracle units, including the initial evaluation.
        A step (or snapshot refresh) that would exceed it is not taken.
    x0 : np.ndarray, optional
        Starting point; the centre of the domain by default.
    merit : callable, optional
        Function of (point, counter) traced along the run; defaults to the
        problem's gap. Its oracle calls are metered apart from the budget.
    keep_iterates : bool
        Whether to store every inner iterate in the record.

    Returns
    -------
    record : RunRecord
        The trace and the final running average x_S.

    """
    if budget <= 0:
        raise ValueError(f"The oracle budget must be positive, {budget} given")
    merit = problem.gap if merit is None else merit
    recorder = TraceRecorder(merit, gap_every, record_time=config.record_time)
    rng = make_rng(config.seed)
    b, M = config.b, problem.M

    state = init_state(problem, config, x0=x0)
    x_start = state.x_cur.copy()
    iterates = [] if keep_iterates else None
    recorder.record(state.counter.calls, x_start)
    logger.info(f"Running {METHOD_NAME} with eta={config.eta:.4g} "
                f"gamma={config.gamma:.4g} b={b} K={config.K} on M={M}")

    exhausted = False
    for _ in range(config.S):
        for _ in range(config.K):
            if state.counter.calls + 3 * b > budget:
                exhausted = True
                break
            inner_step(state, problem, config, rng)
            if keep_iterates:
                iterates.append(state.x_cur.copy())
            recorder.maybe_record(state.counter.calls, state.running_average)
        if exhausted or state.counter.calls + M > budget:
            break
        epoch_end(state, problem, config.K)
        recorder.maybe_record(state.counter.calls, state.running_average)

    x_S = state.running_average(fallback=x_start)
    recorder.record(state.counter.calls, x_S)
    logger.info(f"Run completed after {state.n_run} steps and "
                f"{state.n_refreshes} refreshes: {state.counter.calls} calls")

    return make_record(METHOD_NAME, recorder, x_S, config,
                       total_calls=state.counter.calls,
                       n_inner_steps=state.n_run,
                       n_refreshes=state.n_refreshes,
                       problem=problem, iterates=iterates)
