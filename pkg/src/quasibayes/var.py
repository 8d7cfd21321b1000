"""Two-step value-at-risk estimation for linear and recursive quantile models."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import ParamSpace, Prior
from .criteria import VarModel, default_bandwidth, flat_var_weights, two_step_var_weights
from .dataset import Dataset
from .errors import DataTooShortError
from .estimate import posterior_quantiles
from .inference import Functional, omega_from_scores, sandwich_from_chain, var_scores
from .montecarlo import ols
from .sampler import Chain, SamplerConfig, run_chain

MIN_EXTRA_ROWS = 50


def gen_ar_location(n: int, rng: np.random.Generator, phi: float = 0.5,
                    burn: int = 200) -> Dataset:
    """``Y_t = phi Y_{t-1} + e_t`` with standard normal ``e``; column ``y``."""
    e = rng.standard_normal(n + burn)
    y = np.empty(n + burn)
    prev = 0.0
    for t in range(n + burn):
        prev = phi * prev + e[t]
        y[t] = prev
    return Dataset({"y": y[burn:]}, layout="time-series")


def start_values(model: VarModel) -> np.ndarray:
    """OLS of ``Y_t`` on ``X_{t-1}``, with ``rho = 0`` appended for recursive models."""
    start = ols(model._X_lag, model.y[model.s:])
    return np.append(start, 0.0) if model.recursive else start


def fit(model: VarModel, tau: float, weights=None, *, n_keep: int = 2000, n_burn: int = 2000,
        adapt_every: int = 100, init_scale: float = 0.05, half_width: float = 10.0,
        seed: int = 0, replication: Optional[int] = None, tolerant: bool = False) -> Chain:
    """Sample the quasi-posterior of one VaR model at level ``tau``."""
    crit = model.criterion(tau, weights, tolerant)
    start = start_values(model)
    space = ParamSpace.around(start, half_width)
    cfg = SamplerConfig(start, init_scale, n_keep=n_keep, n_burn=n_burn,
                        adapt_every=adapt_every, seed=seed, replication=replication)
    return run_chain(cfg, crit, Prior.flat(space), space)


def sandwich_intervals(model: VarModel, tau: float, chain: Chain, weights,
                       alpha: float = 0.10) -> list:
    """Per-parameter sandwich intervals with outer-product ``Omega`` at the chain mean."""
    Omega = omega_from_scores(var_scores(model, tau, chain.draws.mean(axis=0), weights))
    return [sandwich_from_chain(chain, Omega, Functional.coordinate(j), alpha, model.n_eff)
            for j in range(model.dim)]


@dataclass
class VarFit:
    tau: float
    step1: Chain
    step1_intervals: list
    step2: Optional[Chain] = None
    step2_quantiles: Optional[np.ndarray] = None
    weights_floored: int = 0
    diagnostics: dict = field(default_factory=dict)


def two_step(model: VarModel, tau: float, alpha: float = 0.10, C: float = 1.0,
             refit_shifted: bool = True, seed: int = 0, replication: int = 0,
             **sampler) -> VarFit:
    """Flat-weight fit with sandwich intervals, then a density-weighted refit.

    The second-step quasi-posterior quantiles at ``alpha/2``, ``0.5`` and
    ``1 - alpha/2`` are returned as a ``3 x dim`` array.
    """
    if model.data.n < model.s + MIN_EXTRA_ROWS:
        raise DataTooShortError(
            f"need at least s + {MIN_EXTRA_ROWS} = {model.s + MIN_EXTRA_ROWS} rows")
    n = model.data.n
    flat = flat_var_weights(n, tau)
    chain1 = fit(model, tau, flat, seed=seed, replication=4 * replication, **sampler)
    intervals = sandwich_intervals(model, tau, chain1, flat, alpha)

    h = default_bandwidth(model.n_eff, C)
    shifted = None
    if refit_shifted:
        lo = fit(model, tau - h / 2, flat_var_weights(n, tau - h / 2), seed=seed,
                 replication=4 * replication + 1, **sampler)
        hi = fit(model, tau + h / 2, flat_var_weights(n, tau + h / 2), seed=seed,
                 replication=4 * replication + 2, **sampler)
        shifted = (posterior_quantiles(lo, 0.5).theta_hat, posterior_quantiles(hi, 0.5).theta_hat)
    tw = two_step_var_weights(model, tau, posterior_quantiles(chain1, 0.5).theta_hat, h,
                              shifted_params=shifted)
    chain2 = fit(model, tau, tw.weights, seed=seed, replication=4 * replication + 3, **sampler)
    qs = np.array([posterior_quantiles(chain2, p).theta_hat
                   for p in (alpha / 2, 0.5, 1 - alpha / 2)])
    return VarFit(tau, chain1, intervals, chain2, qs, tw.n_floored,
                  {"bandwidth": h, "refit_shifted": refit_shifted})


def surface(model: VarModel, fits: dict) -> np.ndarray:
    """Fitted ``Q_t`` by level (rows ordered like ``sorted(fits)``), from second-step medians."""
    return np.array([model.quantile_path(fits[t].step2_quantiles[1], t) for t in sorted(fits)])


def crossings(surf: np.ndarray, s: int) -> int:
    """Count of (t, adjacent level) pairs where the surface decreases in ``tau``."""
    if surf.shape[0] < 2:
        return 0
    return int(np.sum(np.diff(surf[:, s:], axis=0) < 0))

