"""
Parameter selection from the convergence theory of the optimistic method, for
both Lipschitz assumptions (l2 constants, or a single dual-norm constant), and
the default parameters of the variance-reduced Mirror Prox baseline.

"""
import logging

import numpy as np

from bvi.problems import LipschitzInfo, SamplingKind
from bvi.solvers.base import FeasibilityError, SolverConfig, Variant

logger = logging.getLogger("bvi.solvers.params")

MAX_GAMMA = 1. / 16  # momentum ceiling
VR_STEP_SAFETY = .99


def feasibility_bound(M: int, lip: LipschitzInfo, variant: Variant) -> float:
    """
    Largest batch size covered by the complexity bounds of a variant:
    sqrt(M) barL2 / L2 with l2 constants, sqrt(M) with the dual-norm one.
    """
    variant = Variant(variant)
    if variant == Variant.EUCLIDEAN_LIP:
        if lip.L2 == 0:
            raise ValueError("L2 is 0: the operator is constant")
        return float(np.sqrt(M) * lip.barL2 / lip.L2)
    return float(np.sqrt(M))


def check_feasibility(M: int, b: int, lip: LipschitzInfo, variant: Variant):
    variant = Variant(variant)
    bound = feasibility_bound(M, lip, variant)
    if b > bound:
        law = "b ≤ √M·barL2/L2" if variant == Variant.EUCLIDEAN_LIP \
            else "b ≤ √M"
        raise FeasibilityError(
            f"Batch size b={b} violates {law} = {bound:.4g} "
            f"({variant.value})", bound=bound, variant=variant.value)
    if b > M:
        raise FeasibilityError(f"Batch size b={b} exceeds M={M}",
                               bound=float(M), variant=variant.value)


def theoretical_params(M: int, b: int, lip: LipschitzInfo,
                       variant=Variant.EUCLIDEAN_LIP, C=1., n=None, S=1,
                       eta_scale=8., seed=0, scheme=SamplingKind.UNIFORM,
                       shared_batch=False, record_time=False) -> SolverConfig:
    """
    Solver parameters prescribed by the complexity analysis: K = M / (3b)
    inner steps per epoch, gamma = p = 1/K (at most 1/16) and the step size of
    the chosen variant.

    Parameters
    ----------
    M : int
        Number of components of the finite sum.
    b : int
        Batch size, checked against the variant's feasibility bound.
    lip : LipschitzInfo
        Lipschitz constants of the problem.
    variant : Variant or str
        `cor1` uses eta = min(sqrt(gamma b) / (eta_scale barL2), 1 / (8 L2));
        `cor2` replaces both constants by L sqrt(1 + C ln n).
    C : float
        Absolute constant of the entropic diameter term 1 + C ln n.
    n : int, optional
        Dimension in the diameter term; defaults to M.
    S : int
        Number of epochs.
    eta_scale : float
        Denominator of the batch-dependent step size term only; the
        1 / (8 L2) cap (or its `cor2` counterpart) keeps its constant 8.

    Returns
    -------
    config : SolverConfig
        The validated solver configuration.

    Raises
    ------
    FeasibilityError
        If `b` exceeds the bound of the variant.

    """
    variant = Variant(variant)
    if b < 1:
        raise ValueError(f"Batch size must be positive, {b} given")
    if eta_scale <= 0:
        raise ValueError(f"The step scale must be positive, {eta_scale} given")
    check_feasibility(M, b, lip, variant)

    if M < 3 * b:
        logger.warning(f"M={M} < 3b={3 * b}: using a single inner step")
    K = max(1, int(round(M / (3 * b))))
    gamma = 1. / K
    if gamma > MAX_GAMMA:
        logger.warning(f"Momentum 1/K={gamma:.4g} clamped to {MAX_GAMMA}")
        gamma = MAX_GAMMA

    if variant == Variant.EUCLIDEAN_LIP:
        if lip.barL2 == 0:
            raise ValueError("barL2 is 0: the operator is constant")
        eta = min(np.sqrt(gamma * b) / (eta_scale * lip.barL2),
                  1. / (8 * lip.L2))
    else:
        n = M if n is None else n
        if lip.L == 0:
            raise ValueError("L is 0: the operator is constant")
        factor = lip.L * np.sqrt(1. + C * np.log(n))
        eta = min(np.sqrt(gamma * b) / (eta_scale * factor), 1. / (8 * factor))

    return SolverConfig(eta=float(eta), gamma=gamma, p=gamma, b=b, K=K, S=S,
                        seed=seed, scheme=scheme, shared_batch=shared_batch,
                        record_time=record_time)


def vr_params(M: int, b: int, lip: LipschitzInfo, S=1, seed=0,
              scheme=SamplingKind.UNIFORM, variant=Variant.EUCLIDEAN_LIP,
              C=1., n=None, record_time=False) -> SolverConfig:
    """
    Default parameters of variance-reduced Mirror Prox: K = M / (2b) steps per
    snapshot, alpha = 1 - 1/K and tau = 0.99 min(sqrt(b (1 - alpha)) / barL2,
    1 / L2). With `cor2` both constants become L sqrt(1 + C ln n), as for the
    optimistic method. The returned config stores tau as `eta` and 1 - alpha
    as `gamma`.
    """
    variant = Variant(variant)
    if b < 1 or b > M:
        raise ValueError(f"Batch size must be in [1, {M}], {b} given")
    if variant == Variant.EUCLIDEAN_LIP:
        spread, smooth = lip.barL2, lip.L2
    else:
        n = M if n is None else n
        spread = smooth = lip.L * np.sqrt(1. + C * np.log(n))
    if spread == 0 or smooth == 0:
        raise ValueError("Lipschitz constants are 0: the operator is constant")
    K = max(1, int(round(M / (2 * b))))
    mixing = 1. / K  # 1 - alpha
    tau = VR_STEP_SAFETY * min(np.sqrt(b * mixing) / spread, 1. / smooth)
    return SolverConfig(eta=float(tau), gamma=mixing, b=b, K=K, S=S,
                        seed=seed, scheme=scheme, record_time=record_time)
