"""Generalized empirical likelihood criteria.

For moments ``m_i(theta)`` the criterion is
``L_n(theta) = sum_i [s(m_i' g) - s(0)]`` at ``g = argmin_gamma`` of the same
sum. The inner problem is convex and solved by damped Newton from zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import NEG_INF, Criterion
from .criteria import MomentFunction
from .dataset import Dataset
from .errors import DomainError, InnerSolveError, InvalidArgumentError

logger = logging.getLogger(__name__)

MAX_ITER = 100
FOC_TOL = 1e-9
EL_MARGIN = 1e-8


@dataclass(frozen=True)
class DivergenceKind:
    """Convex ``s`` normalised so that ``s'(0) = s''(0) = 1``.

    ``upper`` is the supremum of the open domain (``inf`` when unbounded).
    """

    name: str
    s: Callable
    ds: Callable
    d2s: Callable
    upper: float = np.inf

    def in_domain(self, v) -> bool:
        return bool(np.all(np.asarray(v) < self.upper))


def _el_s(v):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v < 1, -np.log1p(-np.minimum(v, 1.0)), np.inf)


EMPIRICAL_LIKELIHOOD = DivergenceKind(
    "empirical-likelihood",
    _el_s,
    lambda v: 1.0 / (1.0 - v),
    lambda v: 1.0 / (1.0 - v) ** 2,
    upper=1.0,
)
EXPONENTIAL_TILTING = DivergenceKind("exponential-tilting", np.exp, np.exp, np.exp)
CONTINUOUS_UPDATING = DivergenceKind(
    "continuous-updating",
    lambda v: 0.5 * (1.0 + v) ** 2,
    lambda v: 1.0 + v,
    lambda v: np.ones_like(v),
)

DIVERGENCES = {
    k.name: k for k in (EMPIRICAL_LIKELIHOOD, EXPONENTIAL_TILTING, CONTINUOUS_UPDATING)
}
ALIASES = {"el": "empirical-likelihood", "et": "exponential-tilting",
           "cue": "continuous-updating"}


def divergence(name) -> DivergenceKind:
    if isinstance(name, DivergenceKind):
        return name
    key = ALIASES.get(str(name).lower(), str(name).lower())
    try:
        return DIVERGENCES[key]
    except KeyError:
        raise InvalidArgumentError(f"unknown GEL divergence {name!r}") from None


@dataclass
class TiltSolution:
    gamma: np.ndarray
    converged: bool
    inner_iterations: int
    value: float


def _objective(kind, M, gamma):
    v = M @ gamma
    if not kind.in_domain(v):
        return np.inf
    return float(np.sum(kind.s(v) - kind.s(0.0)))


def gel_inner_solve(kind, moments) -> TiltSolution:
    """Minimise ``gamma -> sum_i [s(m_i' gamma) - s(0)]``.

    Convergence means ``|sum_i s'(v_i) m_i| / sum_i |s'(v_i)|`` is below
    ``1e-9 (1 + max|g_bar|)`` in every coordinate, with ``v_i = m_i' gamma``.

    Newton steps are halved until every ``m_i' gamma`` stays in the domain
    (with a ``1e-8`` margin for EL) and the objective does not increase.
    """
    kind = divergence(kind)
    M = np.asarray(moments, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("moments must be finite")
    n, p = M.shape
    if p < 1:
        raise InvalidArgumentError("need at least one moment")
    gbar = M.mean(axis=0)
    tol = FOC_TOL * (1.0 + np.max(np.abs(gbar)))
    limit = kind.upper - EL_MARGIN if np.isfinite(kind.upper) else np.inf

    gamma = np.zeros(p)
    value = 0.0
    H0 = M.T @ M
    eig = np.linalg.eigvalsh(H0)
    if eig[-1] <= 0 or eig[0] <= eig[-1] * 1e-14:
        raise InnerSolveError("GEL Hessian is singular at gamma = 0 (degenerate moments)")

    for it in range(MAX_ITER + 1):
        v = M @ gamma
        d1 = kind.ds(v)
        grad = M.T @ d1 / n
        # normalised by the mean of s', i.e. sum_i pi_i m_i; a raw gradient that
        # vanishes only because the objective runs off to -inf does not count
        scale = np.mean(np.abs(d1))
        if scale > 0 and np.max(np.abs(grad)) <= tol * scale:
            return TiltSolution(gamma, True, it, value)
        if it == MAX_ITER:
            break
        H = (M * kind.d2s(v)[:, None]).T @ M / n
        try:
            step = -np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while True:
            cand = gamma + t * step
            vc = M @ cand
            if np.all(vc <= limit):
                new_value = _objective(kind, M, cand)
                if new_value <= value + 1e-12 * max(1.0, abs(value)):
                    break
            t *= 0.5
            if t < 1e-12:
                return TiltSolution(gamma, False, it, value)
        gamma, value = cand, new_value
    return TiltSolution(gamma, False, MAX_ITER, value)


def implied_probabilities(kind, moments, tilt: TiltSolution,
                          allow_negative: bool = False) -> np.ndarray:
    """``pi_i = s'(gamma' m_i) / sum_j s'(gamma' m_j)``.

    CUE tilts can give ``s' <= 0`` for some rows; that raises
    :class:`DomainError` unless ``allow_negative`` is set, in which case the
    signed weights are returned (they still sum to one).
    """
    kind = divergence(kind)
    if not tilt.converged:
        raise InvalidArgumentError("implied probabilities need a converged tilt")
    M = np.asarray(moments, dtype=float)
    if M.ndim == 1:
        M = M[:, None]
    d = kind.ds(M @ tilt.gamma)
    if np.any(d <= 0) and not allow_negative:
        raise DomainError(f"s'(gamma' m_i) <= 0 for {int(np.sum(d <= 0))} rows")
    return d / d.sum()


def gel_criterion(kind, m: MomentFunction, data: Dataset, dim=None,
                  tolerant: bool = False) -> Criterion:
    """``L_n(theta) = sum_i [s(m_i(theta)' g(theta)) - s(0)]``.

    The value is at most 0. When the inner problem has no minimiser (for EL
    this means zero lies outside the convex hull of the moments) the
    criterion is ``-inf``.
    """
    kind = divergence(kind)

    def fn(theta):
        tilt = gel_inner_solve(kind, m.matrix(theta))
        if not tilt.converged:
            logger.debug("GEL inner solve did not converge at %s", theta)
            return NEG_INF
        return tilt.value

    crit = Criterion(fn, dim if dim is not None else m.p, data.n, f"gel[{kind.name}]", tolerant)

    def probs(theta):
        M = m.matrix(theta)
        return implied_probabilities(kind, M, gel_inner_solve(kind, M))

    crit.implied_probabilities = probs
    crit.divergence = kind
    return crit


def predictive_probability(draws, event, implied) -> float:
    """Average over draws of ``sum_i pi_i(theta) 1{X_i in A}``.

    ``draws`` is a :class:`~quasibayes.sampler.Chain` or a ``B x d`` array;
    ``event`` a boolean vector over rows; ``implied(theta)`` returns the
    implied probabilities (e.g. ``gel_criterion(...).implied_probabilities``).
    """
    draws = np.asarray(getattr(draws, "draws", draws), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] == 0:
        raise InvalidArgumentError("chain is empty")
    ind = np.asarray(event, dtype=float)
    total = 0.0
    for theta in draws:
        total += float(implied(theta) @ ind)
    return total / draws.shape[0]
