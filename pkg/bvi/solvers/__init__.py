from bvi.solvers.base import (FeasibilityError, InvalidSolverState, RunRecord,
                              SolverConfig, SolverState, TracePoint, Variant)
from bvi.solvers.params import theoretical_params, vr_params
from bvi.solvers.optimistic import epoch_end, init_state, inner_step, run
from bvi.solvers.baselines import mirror_prox, vr_mirror_prox
from bvi.solvers.registry import (METHODS, UnknownMethodError, get_method,
                                  method_names, register_method)
