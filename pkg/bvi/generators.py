"""
Generators of benchmark game matrices. All randomness comes from a Philox
generator seeded by the caller, and normal variates are obtained by inverting
the standard normal CDF on uniforms, so that matrices are reproducible
bit-for-bit from (n, seed, params).

"""
import logging

import numpy as np
from scipy.special import ndtri

from bvi.utils import make_rng

logger = logging.getLogger("bvi.generators")

UNIFORM_BITS = 53  # resolution of the uniform grid behind normal draws
DEFAULT_THETA = .8


def standard_normals(n: int, seed: int) -> np.ndarray:
    """
    Draw n standard normals as ndtri((k + 1/2) / 2^53), with k uniform on
    the integers below 2^53, so that both tails stay finite.
    """
    rng = make_rng(seed)
    k = rng.integers(0, 2 ** UNIFORM_BITS, size=n, dtype=np.uint64)
    uniforms = (k.astype(np.float64) + .5) / 2. ** UNIFORM_BITS
    return ndtri(uniforms)


def generate_policeman_burglar(n: int, seed: int, theta=DEFAULT_THETA
                               ) -> np.ndarray:
    """
    Policeman and burglar game: house i holds wealth |w_i|, with w_i standard
    normal, and a policeman watching house j catches a burglar in house i with
    probability exp(-theta |i - j|). The payoff of the burglar is

        A_ij = |w_i| (1 - exp(-theta |i - j|)).

    Parameters
    ----------
    n : int
        Number of houses, at least 2.
    seed : int
        Seed of the wealth draws.
    theta : float
        Positive decay rate of the catch probability with distance.

    Returns
    -------
    A : np.ndarray
        The n x n payoff matrix, nonnegative with a zero diagonal.

    """
    if n < 2:
        raise ValueError(f"Matrices need n >= 2, {n} given")
    if theta <= 0:
        raise ValueError(f"The decay rate must be positive, {theta} given")
    wealth = np.abs(standard_normals(n, seed))
    index = np.arange(n)
    distance = np.abs(index[:, None] - index[None, :])
    return wealth[:, None] * (1. - np.exp(-theta * distance))


def generate_ramp_matrix(n: int) -> np.ndarray:
    """Deterministic A_ij = (i + j - 1) / (2n - 1), with 1-based indices."""
    if n < 2:
        raise ValueError(f"Matrices need n >= 2, {n} given")
    index = np.arange(1, n + 1)
    return (index[:, None] + index[None, :] - 1.) / (2 * n - 1)


GENERATORS = {
    "policeman-burglar": generate_policeman_burglar,
    "ramp": generate_ramp_matrix,
}


def generate(kind: str, n: int, seed=0, theta=DEFAULT_THETA) -> np.ndarray:
    """Dispatch on the generator name; ramp matrices ignore seed and theta."""
    if kind not in GENERATORS:
        raise ValueError(f"Unknown generator {kind}: expected one of "
                         f"{', '.join(GENERATORS)}")
    if kind == "ramp":
        return generate_ramp_matrix(n)
    return generate_policeman_burglar(n, seed, theta=theta)
