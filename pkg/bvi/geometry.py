"""
Mirror maps, Bregman distances and the composite Bregman prox step used by all
solvers. Points live in the primal space of a map, while operator values and
gradients of the distance-generating function h live in its dual space.

Two geometries are shipped: the half squared Euclidean norm (on the full space
or on the probability simplex) and the negative entropy on the simplex. Saddle
problems use a `ProductMirrorMap`, which applies its factors blockwise.

"""
import logging
from enum import Enum
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import kl_div, logsumexp, softmax

logger = logging.getLogger("bvi.geometry")

Point = npt.NDArray[np.float64]
DualVector = npt.NDArray[np.float64]

SIMPLEX_TOL = 1e-8  # tolerance on the unit-sum constraint
# Log-probabilities are floored here so that entropic iterates stay interior
LOG_FLOOR = float(np.log(np.finfo(np.float64).tiny))


class DomainError(ValueError):
    """Raised when a point is outside (or on the boundary of) a map's domain."""
    pass

class UnsupportedCompositeError(ValueError):
    """Raised when no prox step is available for a (map, composite) pair."""
    pass


class MapKind(Enum):
    HALF_SQUARED_EUCLIDEAN = "euclidean"
    NEGATIVE_ENTROPY = "entropy"

class Domain(Enum):
    FULL_SPACE = "full"
    SIMPLEX = "simplex"


@dataclass(frozen=True)
class MirrorMap:
    """
    A distance-generating function h on a domain. The negative entropy only
    lives on the simplex, where it is 1-strongly convex w.r.t. the l1 norm; the
    Euclidean map is 1-strongly convex w.r.t. the l2 norm on either domain.
    """
    kind: MapKind
    dim: int
    domain: Domain = Domain.FULL_SPACE

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Dimension must be positive, {self.dim} given")
        if self.kind == MapKind.NEGATIVE_ENTROPY \
                and self.domain != Domain.SIMPLEX:
            raise ValueError("The negative entropy pairs only with the simplex")

    @property
    def factors(self) -> Tuple["MirrorMap", ...]:
        return (self,)

    @property
    def blocks(self) -> Tuple[slice, ...]:
        return (slice(0, self.dim),)


@dataclass(frozen=True)
class ProductMirrorMap:
    """
    Cartesian product of mirror maps, e.g. the entropic setup on the product
    of two simplices used for matrix games. Every operation acts blockwise and
    the reference norm is the l2 combination of the factors' norms.
    """
    factors: Tuple[MirrorMap, ...]

    def __post_init__(self):
        if len(self.factors) == 0:
            raise ValueError("A product map needs at least one factor")

    @property
    def dim(self) -> int:
        return sum(factor.dim for factor in self.factors)

    @property
    def blocks(self) -> Tuple[slice, ...]:
        offsets = np.cumsum([0] + [factor.dim for factor in self.factors])
        return tuple(slice(int(start), int(stop))
                     for start, stop in zip(offsets[:-1], offsets[1:]))


AnyMap = Union[MirrorMap, ProductMirrorMap]


def entropic_simplex(n: int) -> MirrorMap:
    return MirrorMap(MapKind.NEGATIVE_ENTROPY, n, Domain.SIMPLEX)


def euclidean(n: int, domain: Domain = Domain.FULL_SPACE) -> MirrorMap:
    return MirrorMap(MapKind.HALF_SQUARED_EUCLIDEAN, n, domain)


def simplex_pair(n: int) -> ProductMirrorMap:
    """The entropic geometry on the product of two n-dimensional simplices."""
    return ProductMirrorMap((entropic_simplex(n), entropic_simplex(n)))


class CompositeTerm(object):
    """
    The composite term g of the VI. An implementation must admit a closed-form
    or iterative argmin for the prox step; the domain constraint itself is
    folded into the mirror map.
    """
    name = "abstract"

class ZeroComposite(CompositeTerm):
    """g = 0 (plus the indicator of the map's domain)."""
    name = "zero"


ZERO = ZeroComposite()

# **************************************************************************** #
# Validation
# **************************************************************************** #

def _as_vector(mmap: AnyMap, v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != mmap.dim:
        raise DomainError(f"{name} has shape {v.shape}, expected ({mmap.dim},)")
    if not np.all(np.isfinite(v)):
        raise DomainError(f"{name} has non-finite entries")
    return v


def _check_domain(mmap: MirrorMap, x: np.ndarray, name: str, interior: bool):
    if mmap.domain != Domain.SIMPLEX:
        return  # the full space has no boundary
    if abs(x.sum() - 1.) > SIMPLEX_TOL * max(1, mmap.dim):
        raise DomainError(f"{name} is not on the simplex: sums to {x.sum()}")
    if interior and mmap.kind == MapKind.NEGATIVE_ENTROPY \
            and np.any(x <= 0):
        raise DomainError(f"{name} is on the simplex boundary: "
                          f"min entry is {x.min()}")
    if np.any(x < 0):
        raise DomainError(f"{name} has negative entries: min is {x.min()}")


def check_point(mmap: AnyMap, x, interior=True, name="point") -> np.ndarray:
    """
    Validate a primal point against the map's dimension and domain, returning
    it as a float array. Entropic factors require strictly positive entries
    when `interior` is set.
    """
    x = _as_vector(mmap, x, name)
    for factor, block in zip(mmap.factors, mmap.blocks):
        _check_domain(factor, x[block], name, interior)
    return x


def project_simplex(v: np.ndarray) -> np.ndarray:
    """
    Euclidean projection onto the probability simplex (sort-based algorithm).
    """
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.
    ind = np.arange(1, v.shape[0] + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    tau = css[rho - 1] / rho
    return np.maximum(v - tau, 0.)

# **************************************************************************** #
# Single-map primitives
# **************************************************************************** #

def _bregman(mmap: MirrorMap, x: np.ndarray, y: np.ndarray) -> float:
    if mmap.kind == MapKind.HALF_SQUARED_EUCLIDEAN:
        return .5 * float(np.dot(x - y, x - y))
    # x log(x/y) - x + y, with 0 log 0 := 0
    return float(np.sum(kl_div(x, y)))


def _grad(mmap: MirrorMap, x: np.ndarray) -> np.ndarray:
    if mmap.kind == MapKind.HALF_SQUARED_EUCLIDEAN:
        return x.copy()
    return 1. + np.log(x)


def _grad_inverse(mmap: MirrorMap, theta: np.ndarray) -> np.ndarray:
    if mmap.kind == MapKind.HALF_SQUARED_EUCLIDEAN:
        return theta.copy()
    return softmax(theta)  # invariant to constant shifts of theta


def _entropic_point(logits: np.ndarray) -> np.ndarray:
    log_probs = logits - logsumexp(logits)
    point = np.exp(np.maximum(log_probs, LOG_FLOOR))
    return point / point.sum()


def _prox_step(mmap: MirrorMap, x, w_bar_dual, gamma, eta, delta):
    if mmap.kind == MapKind.NEGATIVE_ENTROPY:
        logits = (1. - gamma) * _grad(mmap, x) - eta * delta
        if gamma > 0:
            logits += gamma * w_bar_dual
        return _entropic_point(logits)

    anchor = (1. - gamma) * x - eta * delta
    if gamma > 0:
        anchor += gamma * _grad_inverse(mmap, w_bar_dual)
    if mmap.domain == Domain.SIMPLEX:
        return project_simplex(anchor)
    return anchor


def _norm(mmap: MirrorMap, v: np.ndarray) -> float:
    if mmap.kind == MapKind.NEGATIVE_ENTROPY:
        return float(np.abs(v).sum())
    return float(np.linalg.norm(v))


def _dual_norm(mmap: MirrorMap, v: np.ndarray) -> float:
    if mmap.kind == MapKind.NEGATIVE_ENTROPY:
        return float(np.abs(v).max())
    return float(np.linalg.norm(v))

# **************************************************************************** #
# Public operations: blockwise over the map's factors
# **************************************************************************** #

def bregman(mmap: AnyMap, x, y) -> float:
    """
    Bregman distance V(x, y) = h(x) - h(y) - <grad h(y), x - y>.

    Parameters
    ----------
    mmap : MirrorMap or ProductMirrorMap
        The geometry inducing the distance.
    x : array-like
        A point of the domain (boundary allowed, with 0 log 0 := 0).
    y : array-like
        An interior point of the domain.

    Returns
    -------
    distance : float
        The non-negative distance; a sum over blocks for product maps.

    """
    x = check_point(mmap, x, interior=False, name="x")
    y = check_point(mmap, y, interior=True, name="y")
    distance = sum(_bregman(factor, x[block], y[block])
                   for factor, block in zip(mmap.factors, mmap.blocks))
    return max(distance, 0.)


def grad(mmap: AnyMap, x) -> DualVector:
    """Gradient of h at an interior point: x (Euclidean) or 1 + log x."""
    x = check_point(mmap, x, interior=True, name="x")
    return np.concatenate([_grad(factor, x[block])
                           for factor, block in zip(mmap.factors, mmap.blocks)])


def grad_inverse(mmap: AnyMap, theta) -> np.ndarray:
    """
    Map a dual vector back to the primal domain. For the entropy this is the
    simplex point proportional to exp(theta), i.e. the minimiser of
    h(x) - <theta, x> over the simplex; adding a constant to theta (per block)
    leaves the result unchanged.
    """
    theta = _as_vector(mmap, theta, "theta")
    return np.concatenate([_grad_inverse(factor, theta[block])
                           for factor, block in zip(mmap.factors, mmap.blocks)])


def prox_step(mmap: AnyMap, x, w_bar_dual, gamma: float, eta: float, delta,
              g: CompositeTerm = ZERO) -> np.ndarray:
    """
    Composite Bregman prox step with negative momentum, returning

        argmin_u { g(u) + (1 - gamma)/eta V(u, x) + gamma/eta V(u, w_bar)
                   + <delta, u> },

    where w_bar is given through its dual image `w_bar_dual` = grad h(w_bar).

    Parameters
    ----------
    mmap : MirrorMap or ProductMirrorMap
        The geometry of the step.
    x : array-like
        The current (interior) point.
    w_bar_dual : array-like
        Dual anchor grad h(w_bar); ignored when gamma is 0.
    gamma : float
        Momentum weight in [0, 1].
    eta : float
        Positive step size.
    delta : array-like
        Operator estimate, a dual vector.
    g : CompositeTerm
        Composite term; only `ZeroComposite` is supported.

    Returns
    -------
    x_next : np.ndarray
        The unique minimiser. Entropic blocks are strictly positive and sum
        to one.

    """
    if eta <= 0:
        raise ValueError(f"Step size must be positive, {eta} given")
    if not 0. <= gamma <= 1.:
        raise ValueError(f"Momentum must be in [0, 1], {gamma} given")
    if not isinstance(g, ZeroComposite):
        raise UnsupportedCompositeError(
            f"No prox step for composite term {g.name}")

    x = check_point(mmap, x, interior=True, name="x")
    delta = _as_vector(mmap, delta, "delta")
    w_bar_dual = _as_vector(mmap, w_bar_dual, "w_bar_dual") if gamma > 0 \
        else np.zeros(mmap.dim)

    return np.concatenate([
        _prox_step(factor, x[block], w_bar_dual[block], gamma, eta, delta[block])
        for factor, block in zip(mmap.factors, mmap.blocks)])


def dual_average(mmap: AnyMap, points: Sequence) -> DualVector:
    """Coordinate-wise mean of grad h over a non-empty list of points."""
    if len(points) == 0:
        raise ValueError("Cannot average an empty list of points")
    return np.mean([grad(mmap, point) for point in points], axis=0)


def center(mmap: AnyMap) -> np.ndarray:
    """Uniform point on simplex blocks, origin on full-space blocks."""
    return np.concatenate([
        np.full(factor.dim, 1. / factor.dim)
        if factor.domain == Domain.SIMPLEX else np.zeros(factor.dim)
        for factor in mmap.factors])


def norm(mmap: AnyMap, v) -> float:
    """The reference (primal) norm of the geometry."""
    v = _as_vector(mmap, v, "v")
    return float(np.sqrt(sum(_norm(factor, v[block]) ** 2
                 for factor, block in zip(mmap.factors, mmap.blocks))))


def dual_norm(mmap: AnyMap, v) -> float:
    """The norm dual to `norm`, used for operator values."""
    v = _as_vector(mmap, v, "v")
    return float(np.sqrt(sum(_dual_norm(factor, v[block]) ** 2
                 for factor, block in zip(mmap.factors, mmap.blocks))))
