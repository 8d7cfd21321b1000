"""Parameter spaces, priors, criteria and the log quasi-posterior.

All posterior arithmetic stays in log space. The quasi-posterior density is
proportional to ``exp(L_n(theta)) * prior(theta)``; its normalising constant is
never computed.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import CriterionEvaluationError, InvalidArgumentError

logger = logging.getLogger(__name__)

NEG_INF = -math.inf


def _as_vector(values, name="theta") -> np.ndarray:
    arr = np.array(values, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class ParamSpace:
    """Closed box ``[lower, upper]`` in R^d."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _as_vector(self.lower, "lower")
        upper = _as_vector(self.upper, "upper")
        if lower.size < 1:
            raise InvalidArgumentError("parameter space needs d >= 1")
        if lower.shape != upper.shape:
            raise InvalidArgumentError("lower and upper bounds differ in length")
        if not np.all(lower < upper):
            raise InvalidArgumentError("need lower[j] < upper[j] for every j")
        lower.setflags(write=False)
        upper.setflags(write=False)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def dim(self) -> int:
        return self.lower.size

    @classmethod
    def around(cls, center, half_width=10.0) -> "ParamSpace":
        """Box ``center +/- half_width``, the Monte Carlo default."""
        center = _as_vector(center, "center")
        return cls(center - half_width, center + half_width)

    def contains(self, theta) -> bool:
        return contains(self, theta)


def contains(space: ParamSpace, theta) -> bool:
    """True iff every coordinate lies inside the closed box."""
    theta = theta.theta if isinstance(theta, ParamPoint) else _as_vector(theta)
    if theta.size != space.dim:
        raise InvalidArgumentError(
            f"dimension mismatch: point has {theta.size}, space has {space.dim}"
        )
    return bool(np.all(theta >= space.lower) and np.all(theta <= space.upper))


@dataclass(frozen=True)
class ParamPoint:
    """Immutable point in parameter space."""

    theta: np.ndarray

    def __post_init__(self):
        arr = _as_vector(self.theta).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "theta", arr)

    @property
    def dim(self) -> int:
        return self.theta.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.theta, dtype=dtype)

    def __len__(self):
        return self.theta.size

    def __eq__(self, other):
        if not isinstance(other, ParamPoint):
            return NotImplemented
        return np.array_equal(self.theta, other.theta)

    def __hash__(self):
        return hash(self.theta.tobytes())


class Prior:
    """Log prior density on a parameter space.

    ``flat`` priors return 0 inside the space and ``-inf`` outside. A user
    density is additionally truncated to the space.
    """

    def __init__(self, space: ParamSpace, log_density: Optional[Callable] = None):
        self.space = space
        self.kind = "flat-on-space" if log_density is None else "user-log-density"
        self._log_density = log_density

    @classmethod
    def flat(cls, space: ParamSpace) -> "Prior":
        return cls(space)

    def __call__(self, theta) -> float:
        theta = _as_vector(theta)
        if not contains(self.space, theta):
            return NEG_INF
        if self._log_density is None:
            return 0.0
        return float(self._log_density(theta))


class Criterion:
    """Log-criterion ``L_n(theta)`` bound to a dataset.

    ``fn`` maps a parameter vector to a real (or ``-inf``). With
    ``tolerant=True``, NaN results and :class:`CriterionEvaluationError` are
    logged and mapped to ``-inf``; otherwise they raise.
    """

    def __init__(self, fn: Callable[[np.ndarray], float], dim: int, n: int,
                 name: str = "criterion", tolerant: bool = False):
        if dim < 1:
            raise InvalidArgumentError("criterion dimension must be >= 1")
        self._fn = fn
        self.dim = int(dim)
        self.n = int(n)
        self.name = name
        self.tolerant = tolerant

    def __repr__(self):
        return f"Criterion({self.name!r}, dim={self.dim}, n={self.n})"

    def raw(self, theta: np.ndarray) -> float:
        return self._fn(theta)

    def __call__(self, theta) -> float:
        theta = theta.theta if isinstance(theta, ParamPoint) else _as_vector(theta)
        if theta.size != self.dim:
            raise InvalidArgumentError(
                f"dimension mismatch: theta has {theta.size}, criterion expects {self.dim}"
            )
        try:
            value = float(self._fn(theta))
        except CriterionEvaluationError as exc:
            if exc.theta is None:
                exc.theta = tuple(float(t) for t in theta)
            if not self.tolerant:
                raise
            logger.warning("%s: %s; treating as -inf", self.name, exc)
            return NEG_INF
        if math.isnan(value):
            if not self.tolerant:
                raise CriterionEvaluationError(f"{self.name} returned NaN", theta)
            logger.warning("%s returned NaN at %s; treating as -inf", self.name, theta)
            return NEG_INF
        return value

    def with_tolerance(self, tolerant: bool) -> "Criterion":
        return Criterion(self._fn, self.dim, self.n, self.name, tolerant)

    def tempered(self, lam: float) -> "Criterion":
        return temper(self, lam)

    def shifted(self, k: float) -> "Criterion":
        """Criterion plus a constant ``k``."""
        fn = self._fn
        return Criterion(lambda t: fn(t) + k, self.dim, self.n, self.name, self.tolerant)


def temper(c: Criterion, lam: float) -> Criterion:
    """Return the criterion scaled to ``lam * L_n(theta)``.

    Large fixed ``lam`` concentrates the quasi-posterior near the maximiser of
    ``L_n``; ``lam == 1`` returns ``c`` itself.
    """
    if not lam > 0:
        raise InvalidArgumentError("temperature multiplier must be positive")
    if lam == 1:
        return c
    fn = c.raw
    return Criterion(lambda t: lam * fn(t), c.dim, c.n, f"{c.name}^{lam:g}", c.tolerant)


def quadratic_criterion(center, curvature, n: int) -> Criterion:
    """``L(theta) = -n (theta - center)' A (theta - center) / 2``.

    The quasi-posterior under a flat prior is Gaussian with covariance
    ``(n A)^-1``, which makes this the reference target for tests.
    """
    center = _as_vector(center, "center")
    A = np.atleast_2d(np.asarray(curvature, dtype=float))
    if A.shape != (center.size, center.size):
        raise InvalidArgumentError("curvature must be d x d")

    def fn(theta):
        u = theta - center
        return -0.5 * n * float(u @ A @ u)

    return Criterion(fn, center.size, n, "quadratic")


def log_quasi_posterior(c: Criterion, p: Prior, theta) -> float:
    """``L_n(theta) + log prior(theta)``, the unnormalised log quasi-posterior."""
    theta = theta.theta if isinstance(theta, ParamPoint) else _as_vector(theta)
    if theta.size != c.dim:
        raise InvalidArgumentError(
            f"dimension mismatch: theta has {theta.size}, criterion expects {c.dim}"
        )
    lp = p(theta)
    if lp == NEG_INF:
        return NEG_INF
    value = c(theta)
    if value == NEG_INF:
        return NEG_INF
    return value + lp
