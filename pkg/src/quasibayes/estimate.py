"""Point estimates that minimise quasi-posterior risk estimated from a chain."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

N_BATCHES = 50
GOLDEN = (math.sqrt(5) - 1) / 2


def _draws(chain) -> np.ndarray:
    draws = np.asarray(getattr(chain, "draws", chain), dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if draws.shape[0] == 0:
        raise InvalidArgumentError("chain is empty")
    return draws


def type1_quantile(x: np.ndarray, tau: float, axis: int = 0):
    """Left-continuous empirical quantile ``inf{x : F(x) >= tau}``, no interpolation."""
    x = np.sort(np.asarray(x, dtype=float), axis=axis)
    m = x.shape[axis]
    k = min(max(int(math.ceil(tau * m - 1e-12)) - 1, 0), m - 1)
    return np.take(x, k, axis=axis)


def batch_means_se(values, stat: Callable = None, n_batches: int = N_BATCHES) -> np.ndarray:
    """Monte Carlo standard error of ``stat`` by non-overlapping batches."""
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    stat = stat or (lambda v: v.mean(axis=0))
    nb = min(n_batches, values.shape[0])
    if nb < 2:
        return np.full(values.shape[1], np.nan)
    per = np.array([stat(b) for b in np.array_split(values, nb)])
    return per.std(axis=0, ddof=1) / math.sqrt(nb)


@dataclass
class LossSpec:
    """Loss choice for a Laplace-type estimator.

    ``kind`` is ``squared``, ``absolute``, ``check`` (with ``tau`` per
    coordinate) or ``user-convex`` (with ``eval`` mapping a ``B x d`` array of
    deviations to ``B`` nonnegative losses).
    """

    kind: str
    tau: Optional[np.ndarray] = None
    eval: Optional[Callable] = None
    separable: bool = True

    def __post_init__(self):
        if self.kind not in ("squared", "absolute", "check", "user-convex"):
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}")
        if self.kind == "check":
            tau = np.atleast_1d(np.asarray(self.tau, dtype=float))
            if not np.all((tau > 0) & (tau < 1)):
                raise InvalidArgumentError("check-loss levels must lie in (0, 1)")
            self.tau = tau
        if self.kind == "user-convex" and self.eval is None:
            raise InvalidArgumentError("user-convex loss needs eval")

    @classmethod
    def check(cls, tau):
        return cls("check", tau=tau)

    @classmethod
    def user(cls, fn, separable=True):
        return cls("user-convex", eval=fn, separable=separable)


@dataclass
class PointEstimate:
    theta_hat: np.ndarray
    loss_kind: str
    mc_se: np.ndarray
    converged: bool = True


def posterior_mean(chain) -> PointEstimate:
    draws = _draws(chain)
    return PointEstimate(draws.mean(axis=0), "squared", batch_means_se(draws))


def posterior_quantiles(chain, tau) -> PointEstimate:
    """Coordinatewise quantiles; ``tau`` is a scalar or one level per coordinate."""
    draws = _draws(chain)
    tau = np.broadcast_to(np.asarray(tau, dtype=float), (draws.shape[1],))
    if not np.all((tau > 0) & (tau < 1)):
        raise InvalidArgumentError("quantile levels must lie in (0, 1)")

    def stat(block):
        return np.array([type1_quantile(block[:, j], tau[j]) for j in range(block.shape[1])])

    kind = "absolute" if np.all(tau == 0.5) else "check"
    return PointEstimate(stat(draws), kind, batch_means_se(draws, stat))


def posterior_median(chain) -> PointEstimate:
    return posterior_quantiles(chain, 0.5)


def _golden_section(f, a, b, tol):
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def risk_minimizer(chain, loss: LossSpec, n: int = 1, tol: float = 1e-10,
                   max_cycles: int = 200) -> PointEstimate:
    """Minimise ``zeta -> mean_j rho(sqrt(n) (theta_j - zeta))`` over the chain.

    Squared, absolute and check losses use their closed forms (mean,
    median, quantiles). User losses go through cyclic coordinate descent with
    golden-section line searches over the range of the draws.
    """
    draws = _draws(chain)
    if loss.kind == "squared":
        return posterior_mean(draws)
    if loss.kind == "absolute":
        return posterior_median(draws)
    if loss.kind == "check":
        return posterior_quantiles(draws, loss.tau)

    if not loss.separable:
        warnings.warn("non-separable loss: coordinate descent may converge slowly",
                      RuntimeWarning, stacklevel=2)
    root_n = math.sqrt(n)

    def risk(zeta):
        return float(np.mean(loss.eval(root_n * (draws - zeta))))

    lo, hi = draws.min(axis=0), draws.max(axis=0)
    zeta = draws.mean(axis=0)
    span = float(np.max(hi - lo)) or 1.0
    step_tol = tol * span
    converged = False
    for _ in range(max_cycles):
        prev = zeta.copy()
        for k in range(draws.shape[1]):
            if hi[k] == lo[k]:
                zeta[k] = lo[k]
                continue

            def line(v, k=k):
                z = zeta.copy()
                z[k] = v
                return risk(z)

            zeta[k] = _golden_section(line, lo[k], hi[k], step_tol)
        if np.max(np.abs(zeta - prev)) <= 10 * step_tol:
            converged = True
            break
    if not converged:
        warnings.warn("risk minimisation hit the cycle cap; returning best iterate",
                      RuntimeWarning, stacklevel=2)
    return PointEstimate(zeta, "user-convex", batch_means_se(draws), converged)
