"""
Finite-sum variational inequality problems F = (1/M) sum_m F_m, with component
access for stochastic oracles, and the bilinear matrix game on the product of
two simplices. Also provides the batched variance-reduced operator estimate,
sampling schemes (uniform and importance), the duality gap, and Lipschitz
constant estimation.

Oracle accounting follows the matrix-game convention: evaluating one component
(for every block at once) costs one unit, a full operator evaluation costs M.

"""
import logging
from enum import Enum
from dataclasses import dataclass, field
from abc import ABC, abstractmethod
from typing import Optional, Tuple

import numpy as np

from bvi.geometry import (AnyMap, DualVector, Domain, center, check_point,
                          euclidean, simplex_pair)

logger = logging.getLogger("bvi.problems")


class SamplingError(ValueError):
    """Raised for empty batches, zero-weight indices or unsupported schemes."""
    pass


@dataclass
class OracleCounter:
    """Oracle calls in component units; only ever increases."""
    calls: int = 0

    def charge(self, units: int):
        if units < 0:
            raise ValueError(f"Cannot charge a negative amount: {units}")
        self.calls += int(units)


@dataclass(frozen=True)
class LipschitzInfo:
    """
    Lipschitz metadata of a finite-sum operator: `L2` for F in the l2 norm,
    `barL2` with barL2^2 the mean of the squared component constants, and `L`
    for F in the geometry's primal/dual norm pair.
    """
    L2: float
    barL2: float
    L: float

    def __post_init__(self):
        for name in ("L2", "barL2", "L"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"Lipschitz constant {name} is {value}")


class SamplingKind(Enum):
    UNIFORM = "uniform"
    IMPORTANCE = "importance"


@dataclass(frozen=True)
class SamplingScheme:
    """
    Index distribution for each sampling block. `weights` holds one
    probability vector per block, or None for the uniform distribution.
    """
    kind: SamplingKind = SamplingKind.UNIFORM
    weights: Tuple[Optional[np.ndarray], ...] = field(default=())

    def probabilities(self, block: int, M: int) -> np.ndarray:
        if self.kind == SamplingKind.UNIFORM or len(self.weights) == 0 \
                or self.weights[block] is None:
            return np.full(M, 1. / M)
        return self.weights[block]


UNIFORM = SamplingScheme()


class Decomposition(Enum):
    ROWS = "rows"
    COLUMNS = "columns"

# **************************************************************************** #
# Problem interface
# **************************************************************************** #

class FiniteSumProblem(ABC):
    """
    A monotone operator F(z) = (1/M) sum_m F_m(z) over the domain of a mirror
    map. Components are evaluated per sampling block: for a saddle problem the
    x- and y-blocks each have their own batch of component indices.
    """
    name = "finite-sum"

    def __init__(self, M: int, geometry: AnyMap, lipschitz: LipschitzInfo):
        if M < 1:
            raise ValueError(f"Component count must be positive, {M} given")
        self.M = M
        self.geometry = geometry
        self.lipschitz = lipschitz

    @property
    def dim(self) -> int:
        return self.geometry.dim

    @property
    def blocks(self) -> Tuple[slice, ...]:
        return (slice(0, self.dim),)

    @abstractmethod
    def operator(self, z: np.ndarray) -> DualVector:
        """The full operator F(z)."""

    @abstractmethod
    def block_components(self, block: int, indices: np.ndarray,
                         z: np.ndarray) -> np.ndarray:
        """Stacked values of F_m(z) restricted to a block, one row per index."""

    def component(self, m: int, z: np.ndarray) -> DualVector:
        """The full component F_m(z), concatenated over blocks."""
        if not 0 <= m < self.M:
            raise IndexError(f"Component {m} out of range [0, {self.M})")
        indices = np.array([m])
        return np.concatenate([self.block_components(bi, indices, z)[0]
                               for bi in range(len(self.blocks))])

    def importance_vector(self, block: int, d: np.ndarray) -> np.ndarray:
        """The vector whose magnitudes drive importance weights of a block."""
        raise SamplingError(f"{self.name} does not support importance sampling")

    def gap(self, z: np.ndarray, counter: OracleCounter = None) -> float:
        raise NotImplementedError(f"No gap function for {self.name}")

    def initial_point(self) -> np.ndarray:
        return center(self.geometry)


class LinearFiniteSumProblem(FiniteSumProblem):
    """
    Affine components F_m(z) = B_m z + c_m on a Euclidean geometry. The merit
    function reported as `gap` is the residual ||F(z)||_2, since the duality
    gap is unbounded on the full space.
    """
    name = "linear"

    def __init__(self, matrices, offsets=None, domain=Domain.FULL_SPACE):
        matrices = np.asarray(matrices, dtype=np.float64)
        if matrices.ndim != 3 or matrices.shape[1] != matrices.shape[2]:
            raise ValueError(f"Expected (M, d, d) matrices, got {matrices.shape}")
        M, d, _ = matrices.shape
        offsets = np.zeros((M, d)) if offsets is None \
            else np.asarray(offsets, dtype=np.float64)
        if offsets.shape != (M, d):
            raise ValueError(f"Expected ({M}, {d}) offsets, got {offsets.shape}")

        self.matrices, self.offsets = matrices, offsets
        self.mean_matrix = matrices.mean(axis=0)
        self.mean_offset = offsets.mean(axis=0)
        component_norms = np.array([spectral_norm(B) for B in matrices])
        L2 = spectral_norm(self.mean_matrix)
        lipschitz = LipschitzInfo(
            L2=L2, barL2=float(np.sqrt(np.mean(component_norms ** 2))), L=L2)
        super().__init__(M, euclidean(d, domain), lipschitz)

    def operator(self, z):
        return self.mean_matrix @ z + self.mean_offset

    def block_components(self, block, indices, z):
        return self.matrices[indices] @ z + self.offsets[indices]

    def gap(self, z, counter=None):
        if counter is not None:
            counter.charge(self.M)
        return float(np.linalg.norm(self.operator(z)))


class MatrixGame(FiniteSumProblem):
    """
    The bilinear saddle problem min_x max_y <Ax, y> over two n-simplices, with
    operator F(x, y) = (A^T y, -A x) written as a sum of M = n components.

    With the `ROWS` decomposition the x-block component i is n y_i A_{i:}^T and
    the y-block component j is -n x_j A_{:j}, so that importance weights can be
    drawn from the opponent's coordinates. With `COLUMNS`, the x-block
    component j is n e_j <A_{:j}, y> and the y-block component i is
    -n e_i <A_{i:}, x>.
    """
    name = "matrix-game"

    def __init__(self, A, decomposition=Decomposition.ROWS, label="custom"):
        A = np.asarray(A, dtype=np.float64)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError(f"Expected a square matrix, got shape {A.shape}")
        if not np.all(np.isfinite(A)):
            raise ValueError("The game matrix has non-finite entries")
        self.A = A
        self.n = A.shape[0]
        self.decomposition = Decomposition(decomposition)
        self.label = label
        super().__init__(self.n, simplex_pair(self.n),
                         lipschitz_estimates(A, self.decomposition))

    @property
    def blocks(self):
        return self.geometry.blocks

    def split(self, z):
        z = np.asarray(z, dtype=np.float64)
        return z[:self.n], z[self.n:]

    def operator(self, z):
        return matrix_game_operator(self.A, z)

    def block_components(self, block, indices, z):
        x, y = self.split(z)
        indices = np.asarray(indices)
        n = self.n
        if self.decomposition == Decomposition.ROWS:
            if block == 0:  # rows weighted by the y coordinates
                return n * self.A[indices, :] * y[indices, None]
            return -n * self.A[:, indices].T * x[indices, None]

        values = np.zeros((len(indices), n))
        rows = np.arange(len(indices))
        if block == 0:  # output coordinates of A^T y
            values[rows, indices] = n * (self.A[:, indices].T @ y)
        else:
            values[rows, indices] = -n * (self.A[indices, :] @ x)
        return values

    def importance_vector(self, block, d):
        if self.decomposition != Decomposition.ROWS:
            raise SamplingError("Importance sampling needs the rows decomposition")
        dx, dy = self.split(d)
        return dy if block == 0 else dx

    def gap(self, z, counter=None):
        """
        Duality gap max_j (Ax)_j - min_i (A^T y)_i, i.e. the best-response
        values of both players. Charges one full operator when metered.
        """
        z = check_point(self.geometry, z, interior=False, name="z")
        x, y = self.split(z)
        if counter is not None:
            counter.charge(self.M)
        return float(np.max(self.A @ x) - np.min(self.A.T @ y))

# **************************************************************************** #
# Operations
# **************************************************************************** #

def matrix_game_operator(A, z) -> DualVector:
    """Returns (A^T y, -A x) for z = (x, y)."""
    A = np.asarray(A, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    n = A.shape[1]
    if A.ndim != 2 or z.shape != (A.shape[0] + n,):
        raise ValueError(f"Point of shape {z.shape} does not match a "
                         f"{A.shape} game")
    x, y = z[:n], z[n:]
    return np.concatenate([A.T @ y, -A @ x])


def importance_distribution(d) -> np.ndarray:
    """
    Importance weights r_i = |d_i| / ||d||_1, so that d_i / r_i equals
    ||d||_1 sign(d_i); the uniform distribution is returned for d = 0.
    """
    d = np.abs(np.asarray(d, dtype=np.float64))
    total = d.sum()
    if total == 0 or not np.isfinite(total):
        return np.full(d.shape[0], 1. / d.shape[0])
    return d / total


def uniform_scheme(problem: FiniteSumProblem) -> SamplingScheme:
    return SamplingScheme(SamplingKind.UNIFORM,
                          tuple(None for _ in problem.blocks))


def importance_scheme(problem: FiniteSumProblem, d,
                      shared_batch=False) -> SamplingScheme:
    """
    Importance weights per block from a difference vector d, e.g.
    d = 2 x_cur - w - x_prev for the optimistic estimate. A shared batch uses
    the mixture of the block distributions, which keeps every block estimate
    unbiased.
    """
    d = np.asarray(d, dtype=np.float64)
    weights = [importance_distribution(problem.importance_vector(bi, d))
               for bi in range(len(problem.blocks))]
    if shared_batch:
        mixture = np.mean(weights, axis=0)
        weights = [mixture for _ in weights]
    return SamplingScheme(SamplingKind.IMPORTANCE, tuple(weights))


def draw_batches(problem: FiniteSumProblem, scheme: SamplingScheme, b: int,
                 rng: np.random.Generator, shared_batch=False):
    """
    Sample b indices with replacement for every block (or a single batch used
    by all blocks when `shared_batch` is set).
    """
    if b < 1:
        raise SamplingError(f"Batch size must be positive, {b} given")
    n_blocks = len(problem.blocks)
    if shared_batch:
        batch = rng.choice(problem.M, size=b, replace=True,
                           p=scheme.probabilities(0, problem.M))
        return tuple(batch for _ in range(n_blocks))
    return tuple(rng.choice(problem.M, size=b, replace=True,
                            p=scheme.probabilities(bi, problem.M))
                 for bi in range(n_blocks))


def estimate_delta(problem: FiniteSumProblem, x_cur, x_prev, w, F_w, batch,
                   scheme: SamplingScheme = UNIFORM,
                   counter: OracleCounter = None) -> DualVector:
    """
    Batched optimistic variance-reduced estimate

        Delta = F(w) + 1/b sum_{j in B} 1/(M r_j) [2 F_j(x_cur) - F_j(w)
                                                   - F_j(x_prev)],

    evaluated block by block, whose expectation is 2 F(x_cur) - F(x_prev).

    Parameters
    ----------
    problem : FiniteSumProblem
        The problem providing component evaluations.
    x_cur, x_prev, w : np.ndarray
        Current and previous iterates, and the snapshot point.
    F_w : np.ndarray
        Cached full operator value at the snapshot.
    batch : np.ndarray or tuple of np.ndarray
        Sampled component indices: one array per block, or a single array
        shared by all blocks.
    scheme : SamplingScheme
        The distribution the batch was drawn from (for the 1/(M r_j) factors).
    counter : OracleCounter, optional
        Charged 3 units per sampled index.

    Returns
    -------
    delta : np.ndarray
        The operator estimate, a dual vector.

    """
    batch, b = _normalise_batch(problem, batch)
    delta = np.array(F_w, dtype=np.float64, copy=True)
    for bi, block in enumerate(problem.blocks):
        indices = np.asarray(batch[bi])
        probs = scheme.probabilities(bi, problem.M)[indices]
        if np.any(probs <= 0):
            raise SamplingError(f"Sampled indices {indices[probs <= 0]} "
                                "have zero probability")
        corrections = 2 * problem.block_components(bi, indices, x_cur) \
            - problem.block_components(bi, indices, w) \
            - problem.block_components(bi, indices, x_prev)
        scale = 1. / (problem.M * probs)
        delta[block] += (scale[:, None] * corrections).sum(axis=0) / b

    if counter is not None:
        counter.charge(3 * b)
    return delta


def _normalise_batch(problem, batch):
    n_blocks = len(problem.blocks)
    if isinstance(batch, np.ndarray) or (len(batch) > 0
                                         and np.isscalar(batch[0])):
        batch = tuple(np.asarray(batch) for _ in range(n_blocks))
    if len(batch) != n_blocks:
        raise SamplingError(f"Expected {n_blocks} batches, got {len(batch)}")
    b = len(batch[0])
    if b == 0 or any(len(block_batch) != b for block_batch in batch):
        raise SamplingError("Batches must be non-empty and of equal size")
    return batch, b


def estimate_vr(problem: FiniteSumProblem, y, w, F_w, batch,
                scheme: SamplingScheme = UNIFORM,
                counter: OracleCounter = None) -> DualVector:
    """
    Snapshot-anchored estimate F(w) + 1/b sum_j 1/(M r_j) [F_j(y) - F_j(w)],
    unbiased for F(y). Charges 2 units per sampled index.
    """
    batch, b = _normalise_batch(problem, batch)
    estimate = np.array(F_w, dtype=np.float64, copy=True)
    for bi, block in enumerate(problem.blocks):
        indices = np.asarray(batch[bi])
        probs = scheme.probabilities(bi, problem.M)[indices]
        if np.any(probs <= 0):
            raise SamplingError(f"Sampled indices {indices[probs <= 0]} "
                                "have zero probability")
        corrections = problem.block_components(bi, indices, y) \
            - problem.block_components(bi, indices, w)
        scale = 1. / (problem.M * probs)
        estimate[block] += (scale[:, None] * corrections).sum(axis=0) / b

    if counter is not None:
        counter.charge(2 * b)
    return estimate


def gap(game: FiniteSumProblem, z, counter: OracleCounter = None) -> float:
    """Duality gap (or the problem's merit function) at z."""
    return game.gap(z, counter=counter)


def spectral_norm(A, tol=1e-8, max_iter=10000) -> float:
    """
    Largest singular value by power iteration on A^T A, stopped when the
    relative change of the estimate falls below `tol`.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise ValueError("Cannot estimate norms of non-finite matrices")
    if not np.any(A):
        return 0.
    # Deterministic start, not orthogonal to any coordinate direction
    v = 1. + np.arange(A.shape[1]) / A.shape[1]
    v /= np.linalg.norm(v)
    sigma = 0.
    for _ in range(max_iter):
        Av = A @ v
        u = A.T @ Av
        u_norm = np.linalg.norm(u)
        if u_norm == 0:  # start vector in the null space
            v = np.roll(v, 1) + 1e-3
            v /= np.linalg.norm(v)
            continue
        v = u / u_norm
        new_sigma = float(np.sqrt(u_norm))
        if abs(new_sigma - sigma) <= tol * new_sigma:
            return float(np.linalg.norm(A @ v))
        sigma = new_sigma
    logger.warning(f"Power iteration stopped after {max_iter} iterations")
    return float(np.linalg.norm(A @ v))


def lipschitz_estimates(A, decomposition=Decomposition.ROWS) -> LipschitzInfo:
    """
    Lipschitz constants of the matrix game operator: L2 is the spectral norm
    of A, barL2 averages the squared norms n max(||A_{m:}||, ||A_{:m}||) of the
    rank-one component maps, and L = max |A_ij| is the l1 -> l_inf constant.
    """
    A = np.asarray(A, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise ValueError("The game matrix has non-finite entries")
    n = A.shape[0]
    row_norms = np.linalg.norm(A, axis=1)
    col_norms = np.linalg.norm(A, axis=0)
    # Both decompositions pair row m and column m in component m
    component_norms = n * np.maximum(row_norms, col_norms)
    return LipschitzInfo(
        L2=spectral_norm(A),
        barL2=float(np.sqrt(np.mean(component_norms ** 2))),
        L=float(np.abs(A).max()),
    )
