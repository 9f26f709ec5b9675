"""
Baseline methods sharing the oracle accounting of the optimistic method:
deterministic Mirror Prox (extragradient in Bregman geometry) and the
double-loop variance-reduced Mirror Prox with snapshot-anchored estimates.

"""
import logging

import numpy as np

from bvi.geometry import check_point, grad, prox_step
from bvi.problems import (FiniteSumProblem, OracleCounter, SamplingKind,
                          draw_batches, estimate_vr, importance_scheme,
                          uniform_scheme)
from bvi.solvers.base import (RunRecord, SolverConfig, TraceRecorder,
                              make_record)
from bvi.utils import make_rng

logger = logging.getLogger("bvi.solvers.baselines")


def mirror_prox(problem: FiniteSumProblem, eta: float, iters: int,
                gap_every: int = None, budget: int = None, x0=None,
                merit=None, record_time=False, keep_iterates=False, seed=0,
                b: int = None) -> RunRecord:
    """
    Deterministic Mirror Prox: y = prox(x, eta F(x)), x+ = prox(x, eta F(y)).
    Each iteration charges 2M units; the output is the average of the y's.

    Parameters
    ----------
    problem : FiniteSumProblem
        The problem to solve.
    eta : float
        Positive step size.
    iters : int
        Maximum number of iterations.
    gap_every : int, optional
        Trace cadence in oracle units; one point per iteration by default.
    budget : int, optional
        Maximum number of oracle units; unbounded by default.
    seed, b : int, optional
        Labels of the record only: the method is deterministic and always
        evaluates the full operator (b defaults to M).

    Returns
    -------
    record : RunRecord
        Trace and averaged point of the run.

    """
    if eta <= 0:
        raise ValueError(f"Step size must be positive, {eta} given")
    if iters < 1:
        raise ValueError(f"Number of iterations must be positive, {iters} given")
    M, geometry = problem.M, problem.geometry
    budget = np.inf if budget is None else budget
    if budget <= 0:
        raise ValueError(f"The oracle budget must be positive, {budget} given")
    config = SolverConfig(eta=eta, gamma=0., b=M if b is None else b,
                          K=iters, S=1, seed=seed, record_time=record_time)

    gap_every = 2 * M if gap_every is None else gap_every
    merit = problem.gap if merit is None else merit
    recorder = TraceRecorder(merit, gap_every, record_time=record_time)
    counter = OracleCounter()
    x = problem.initial_point() if x0 is None else x0
    x = check_point(geometry, x, interior=True, name="x0")
    no_anchor = np.zeros_like(x)
    recorder.record(counter.calls, x)

    y_sum, n_steps, iterates = np.zeros_like(x), 0, []
    for _ in range(iters):
        if counter.calls + 2 * M > budget:
            break
        F_x = problem.operator(x)
        y = prox_step(geometry, x, no_anchor, 0., eta, F_x)
        F_y = problem.operator(y)
        x = prox_step(geometry, x, no_anchor, 0., eta, F_y)
        counter.charge(2 * M)
        y_sum += y
        n_steps += 1
        if keep_iterates:
            iterates.append(y)
        recorder.maybe_record(counter.calls, lambda: y_sum / n_steps)

    x_avg = y_sum / n_steps if n_steps > 0 else x
    recorder.record(counter.calls, x_avg)
    logger.info(f"Mirror Prox: {n_steps} iterations, {counter.calls} calls")
    return make_record("mirror-prox", recorder, x_avg, config,
                       total_calls=counter.calls, n_inner_steps=n_steps,
                       n_refreshes=0, problem=problem,
                       iterates=iterates if keep_iterates else None)


def vr_mirror_prox(problem: FiniteSumProblem, config: SolverConfig,
                   gap_every: int, budget: int, x0=None, merit=None,
                   keep_iterates=False) -> RunRecord:
    """
    Double-loop variance-reduced Mirror Prox. With mixing weight
    `config.gamma` = 1 - alpha towards the snapshot w, each inner step takes

        y  = prox(x, w; gamma, tau F(w))
        x+ = prox(x, w; gamma, tau [F(w) + F_B(y) - F_B(w)])

    where F_B averages b sampled components (2b units per step). After K
    steps the snapshot moves to the epoch's average and F(w) is refreshed
    (M units). The output is the average of all extrapolated points y.
    """
    if budget <= 0:
        raise ValueError(f"The oracle budget must be positive, {budget} given")
    if config.b > problem.M:
        raise ValueError(f"Batch size {config.b} exceeds M={problem.M}")
    M, b, geometry = problem.M, config.b, problem.geometry
    merit = problem.gap if merit is None else merit
    recorder = TraceRecorder(merit, gap_every, record_time=config.record_time)
    rng = make_rng(config.seed)
    counter = OracleCounter()

    x = problem.initial_point() if x0 is None else x0
    x = check_point(geometry, x, interior=True, name="x0")
    w = x.copy()
    F_w = problem.operator(w)
    counter.charge(M)
    recorder.record(counter.calls, x)

    y_sum, n_steps, n_refreshes, iterates = np.zeros_like(x), 0, 0, []
    exhausted = False
    for _ in range(config.S):
        w_dual = grad(geometry, w)
        epoch_sum = np.zeros_like(x)
        for _ in range(config.K):
            if counter.calls + 2 * b > budget:
                exhausted = True
                break
            y = prox_step(geometry, x, w_dual, config.gamma, config.eta, F_w)
            if config.scheme == SamplingKind.IMPORTANCE:
                scheme = importance_scheme(problem, y - w)
            else:
                scheme = uniform_scheme(problem)
            batch = draw_batches(problem, scheme, b, rng)
            F_hat = estimate_vr(problem, y, w, F_w, batch, scheme,
                                counter=counter)
            x = prox_step(geometry, x, w_dual, config.gamma, config.eta, F_hat)
            epoch_sum += x
            y_sum += y
            n_steps += 1
            if keep_iterates:
                iterates.append(y)
            recorder.maybe_record(counter.calls, lambda: y_sum / n_steps)
        if exhausted or counter.calls + M > budget:
            break
        w = epoch_sum / config.K
        F_w = problem.operator(w)
        counter.charge(M)
        n_refreshes += 1
        recorder.maybe_record(counter.calls, lambda: y_sum / n_steps)

    x_avg = y_sum / n_steps if n_steps > 0 else x
    recorder.record(counter.calls, x_avg)
    logger.info(f"VR Mirror Prox: {n_steps} steps and {n_refreshes} "
                f"refreshes, {counter.calls} calls")
    return make_record("vr-mirror-prox", recorder, x_avg, config,
                       total_calls=counter.calls, n_inner_steps=n_steps,
                       n_refreshes=n_refreshes, problem=problem,
                       iterates=iterates if keep_iterates else None)
