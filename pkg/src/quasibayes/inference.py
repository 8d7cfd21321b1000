"""Confidence intervals from quasi-posterior chains.

Two routes: quantiles of ``g(theta)`` along the chain, valid when the
criterion satisfies the generalised information equality, and Delta-method
intervals built on the sandwich ``J^-1 Omega J^-1`` with ``J^-1`` estimated
as ``n`` times the chain covariance.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .criteria import MomentFunction, WeightPolicy, resolve_weight
from .estimate import _draws, batch_means_se, type1_quantile
from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)


def fd_step(theta: np.ndarray) -> np.ndarray:
    return np.maximum(1e-6, 1e-6 * np.abs(theta))


def numerical_gradient(g: Callable, theta, step=None) -> np.ndarray:
    """Central differences of a scalar or vector map, one column per coordinate."""
    theta = np.asarray(theta, dtype=float)
    h = fd_step(theta) if step is None else np.broadcast_to(np.asarray(step, float), theta.shape)
    cols = []
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = h[j]
        cols.append((np.asarray(g(theta + e), float) - np.asarray(g(theta - e), float)) / (2 * h[j]))
    return np.stack(cols, axis=-1)


@dataclass
class Functional:
    """Smooth real functional ``g(theta)`` with optional analytic gradient."""

    g: Callable
    grad_g: Optional[Callable] = None
    name: str = "g"

    def __call__(self, theta) -> float:
        return float(self.g(np.asarray(theta, dtype=float)))

    def gradient(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if self.grad_g is not None:
            return np.asarray(self.grad_g(theta), dtype=float)
        return numerical_gradient(self.g, theta)

    def values(self, draws: np.ndarray) -> np.ndarray:
        return np.array([self.g(row) for row in draws], dtype=float)

    @classmethod
    def coordinate(cls, j: int, name: Optional[str] = None) -> "Functional":
        return cls.linear(None, j=j, name=name or f"theta[{j}]")

    @classmethod
    def linear(cls, c, j: Optional[int] = None, name: str = "c'theta") -> "Functional":
        """``c' theta``; with ``j`` given, the ``j``-th coordinate."""
        if j is not None:
            functional = cls(lambda t: t[j], None, name)
            functional.grad_g = lambda t: np.eye(t.size)[j]
            functional._batch = lambda D: D[:, j]
            return functional
        c = np.asarray(c, dtype=float)
        functional = cls(lambda t: float(c @ t), lambda t: c.copy(), name)
        functional._batch = lambda D: D @ c
        return functional


def _functional_values(f: Functional, draws: np.ndarray) -> np.ndarray:
    batch = getattr(f, "_batch", None)
    return batch(draws) if batch is not None else f.values(draws)


@dataclass
class IntervalReport:
    method: str
    level: float
    lo: float
    hi: float
    ingredients: dict = field(default_factory=dict)
    information_equality_asserted: bool = False
    warnings: list = field(default_factory=list)

    @property
    def length(self) -> float:
        return self.hi - self.lo

    def contains(self, value: float) -> bool:
        return self.lo <= value <= self.hi


def _check_alpha(alpha):
    if not 0 < alpha < 1:
        raise InvalidArgumentError("alpha must lie in (0, 1)")


def quantile_interval(chain, f: Functional, alpha: float = 0.10,
                      information_equality: bool = False) -> IntervalReport:
    """Equal-tailed ``[q_{alpha/2}, q_{1-alpha/2}]`` of ``g`` along the chain.

    Frequentist validity needs the information equality (optimal GMM or IVQR
    weighting, efficient M-estimation weights). The caller's claim is stored
    in the report, never checked.
    """
    _check_alpha(alpha)
    draws = _draws(chain)
    values = _functional_values(f, draws)
    lo = float(type1_quantile(values, alpha / 2))
    hi = float(type1_quantile(values, 1 - alpha / 2))
    se = batch_means_se(values, lambda v: np.array(
        [type1_quantile(v[:, 0], alpha / 2), type1_quantile(v[:, 0], 1 - alpha / 2)]))
    return IntervalReport("quantile", 1 - alpha, lo, hi,
                          {"mc_se": se.tolist()}, information_equality)


def j_inverse_from_chain(chain, center=None, n: int = 1) -> np.ndarray:
    """``n * mean_j (theta_j - center)(theta_j - center)'``; center defaults to the mean."""
    draws = _draws(chain)
    center = draws.mean(axis=0) if center is None else np.asarray(center, dtype=float)
    dev = draws - center
    S = n * (dev.T @ dev) / draws.shape[0]
    return 0.5 * (S + S.T)


def sandwich_interval(theta_hat, J_inv, Omega, f: Functional, alpha: float = 0.10,
                      n: int = 1) -> IntervalReport:
    """``g(theta_hat) + q * sqrt(grad' J^-1 Omega J^-1 grad) / sqrt(n)`` at both tails."""
    _check_alpha(alpha)
    theta_hat = np.asarray(theta_hat, dtype=float)
    J_inv = np.atleast_2d(np.asarray(J_inv, dtype=float))
    Omega = np.atleast_2d(np.asarray(Omega, dtype=float))
    d = theta_hat.size
    if J_inv.shape != (d, d) or Omega.shape != (d, d):
        raise InvalidArgumentError("J_inv and Omega must be d x d")
    grad = f.gradient(theta_hat)
    V = J_inv @ Omega @ J_inv
    var = float(grad @ V @ grad)
    notes = []
    if var < 0:
        msg = f"negative sandwich variance {var:.3g} floored at 0"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        var = 0.0
    center = f(theta_hat)
    half = math.sqrt(var) / math.sqrt(n)
    lo = center + norm.ppf(alpha / 2) * half
    hi = center + norm.ppf(1 - alpha / 2) * half
    return IntervalReport(
        "sandwich", 1 - alpha, float(lo), float(hi),
        {"theta_hat": theta_hat.tolist(), "J_inv": J_inv.tolist(), "Omega": Omega.tolist(),
         "se": half},
        warnings=notes,
    )


def sandwich_from_chain(chain, Omega, f: Functional, alpha: float = 0.10, n: int = 1,
                        center: str = "mean") -> IntervalReport:
    """Sandwich interval centred at the chain mean (or ``center="median"``)."""
    draws = _draws(chain)
    if center == "mean":
        theta_hat = draws.mean(axis=0)
    elif center == "median":
        theta_hat = type1_quantile(draws, 0.5)
    else:
        raise InvalidArgumentError("center must be 'mean' or 'median'")
    J_inv = j_inverse_from_chain(draws, theta_hat, n)
    return sandwich_interval(theta_hat, J_inv, Omega, f, alpha, n)


@dataclass
class OmegaEstimate:
    Omega: np.ndarray
    G: np.ndarray
    rank_deficient: bool = False


def omega_gmm(m: MomentFunction, data, theta_hat, W, step=None) -> OmegaEstimate:
    """``G' W G`` with ``G`` the central-difference Jacobian of the mean moments.

    ``W`` is a matrix or a :class:`WeightPolicy` (``ivqr`` gives the
    ``[tau(1-tau)]^-1 [(1/n) sum Z Z']^-1`` form). For step-function moments
    such as IVQR pass a ``step`` wide enough to span many observations.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if isinstance(W, WeightPolicy):
        W = resolve_weight(W, m, data)
        if W is None:
            from .criteria import optimal_weight
            W = optimal_weight(m, data, theta_hat)
    G = numerical_gradient(m.mean, theta_hat, step)
    if G.ndim == 1:
        G = G[None, :]
    rank_deficient = np.linalg.matrix_rank(G) < theta_hat.size
    if rank_deficient:
        warnings.warn("moment Jacobian is rank deficient at theta_hat", RuntimeWarning,
                      stacklevel=2)
    Omega = G.T @ W @ G
    return OmegaEstimate(0.5 * (Omega + Omega.T), G, rank_deficient)


def omega_from_scores(scores) -> np.ndarray:
    """Outer-product estimate ``(1/n) sum_i s_i s_i'``."""
    S = np.asarray(scores, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    return S.T @ S / S.shape[0]


def powell_scores(criterion, data, theta, tau: float = 0.5, weights=None,
                  y_col: str = "y") -> np.ndarray:
    """Per-row ``w_i (tau - 1{Y_i < q_i}) dq_i/dtheta`` for a linear-index Powell fit."""
    X = criterion.design
    y = data[y_col]
    idx = X @ np.asarray(theta, dtype=float)
    q = np.maximum(idx, 0.0)
    grad_q = X * (idx > 0)[:, None]
    w = 1.0 if weights is None else np.asarray(weights, dtype=float)[:, None]
    return w * (tau - (y < q))[:, None] * grad_q


def var_scores(model, tau: float, params, weights=None, step=None) -> np.ndarray:
    """Per-period scores ``w_t (tau - 1{Y_t < Q_t}) dQ_t/dparams`` for ``t >= s``."""
    params = np.asarray(params, dtype=float)
    q = model.post_warmup_quantiles(params, tau)
    if model.recursive:
        h = np.full(params.size, 1e-6) if step is None else step
        grad_q = numerical_gradient(lambda p: model.post_warmup_quantiles(p, tau), params, h)
    else:
        grad_q = model._X_lag
    y = model.y[model.s:]
    w = 1.0 if weights is None else np.asarray(weights, dtype=float)[model.s:, None]
    return w * (tau - (y < q))[:, None] * grad_q
