"""
Methods the harness can run, by name. A method is a callable taking the
problem, a `SolverConfig`, the trace cadence and the oracle budget, and
returning a `RunRecord`; further baselines plug in with `register_method`.

"""
import logging
from typing import Callable, Dict, List

from bvi.problems import FiniteSumProblem
from bvi.solvers.base import RunRecord, SolverConfig
from bvi.solvers.baselines import mirror_prox, vr_mirror_prox
from bvi.solvers.optimistic import run

logger = logging.getLogger("bvi.solvers.registry")

MethodRunner = Callable[[FiniteSumProblem, SolverConfig, int, int], RunRecord]

METHODS: Dict[str, MethodRunner] = {}


class UnknownMethodError(ValueError):
    """Raised when a method name is not registered."""
    pass


def register_method(name: str, runner: MethodRunner = None,
                    overwrite=False):
    """
    Register `runner` under `name`. Without a runner, returns a decorator.

    Raises
    ------
    ValueError
        If the name is taken and `overwrite` is not set.

    """
    def decorator(func: MethodRunner) -> MethodRunner:
        if name in METHODS and not overwrite:
            raise ValueError(f"Method {name} is already registered")
        METHODS[name] = func
        logger.debug(f"Method {name} registered")
        return func

    return decorator if runner is None else decorator(runner)


def get_method(name: str) -> MethodRunner:
    if name not in METHODS:
        raise UnknownMethodError(f"Unknown method {name!r}, expected one of: "
                                 f"{', '.join(method_names())}")
    return METHODS[name]


def method_names() -> List[str]:
    return list(METHODS)


register_method("optimistic", run)
register_method("vr-mirror-prox", vr_mirror_prox)


@register_method("mirror-prox")
def run_mirror_prox(problem: FiniteSumProblem, config: SolverConfig,
                    gap_every: int, budget: int) -> RunRecord:
    """Mirror Prox with `config.eta` for at most `config.K` iterations."""
    return mirror_prox(problem, config.eta, config.K, gap_every=gap_every,
                       budget=budget, record_time=config.record_time,
                       seed=config.seed, b=config.b)
