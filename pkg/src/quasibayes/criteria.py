"""Criterion builders: GMM, instrumental quantile regression, Powell's
censored quantile regression and the (recursive) VaR check-loss criterion.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.signal import lfilter

from .core import NEG_INF, Criterion
from .dataset import Dataset
from .errors import (
    DataValidationError,
    InvalidArgumentError,
    SchemaError,
    SingularWeightingError,
)

logger = logging.getLogger(__name__)

RIDGE_SCALE = 1e-10
COND_THRESHOLD = 1e12


def check_loss(u, tau: float):
    """Koenker-Bassett check function ``(tau - 1{u < 0}) u``."""
    u = np.asarray(u, dtype=float)
    return u * (tau - (u < 0))


def _check_tau(tau):
    if not 0 < tau < 1:
        raise InvalidArgumentError(f"quantile level must lie in (0, 1), got {tau}")


def empirical_quantile(values, tau: float) -> float:
    """Left-continuous inverse ``inf{x : F(x) >= tau}`` of the empirical cdf."""
    x = np.sort(np.asarray(values, dtype=float))
    k = int(np.ceil(tau * x.size - 1e-12)) - 1
    return float(x[min(max(k, 0), x.size - 1)])


class MomentFunction:
    """Moment conditions ``m_i(theta)`` evaluated for all rows at once.

    ``fn(theta)`` must return an ``n x p`` array whose row ``i`` is
    ``m_i(theta)``.
    """

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n: int, p: int,
                 instruments: Optional[np.ndarray] = None, tau: Optional[float] = None):
        self._fn = fn
        self.n = int(n)
        self.p = int(p)
        self.instruments = instruments
        self.tau = tau

    def matrix(self, theta) -> np.ndarray:
        M = np.asarray(self._fn(np.asarray(theta, dtype=float)), dtype=float)
        if M.ndim == 1:
            M = M[:, None]
        return M

    def eval(self, i: int, theta) -> np.ndarray:
        return self.matrix(theta)[i]

    def mean(self, theta) -> np.ndarray:
        return self.matrix(theta).mean(axis=0)

    @classmethod
    def from_rows(cls, row_fn, data: Dataset, p: int) -> "MomentFunction":
        """Wrap a per-row callable ``row_fn(i, theta)``; slow but general."""
        n = data.n
        return cls(lambda theta: np.array([row_fn(i, theta) for i in range(n)]), n, p)


def _regularised_inverse(S: np.ndarray, theta=None) -> np.ndarray:
    S = 0.5 * (S + S.T)
    p = S.shape[0]
    eig = np.linalg.eigvalsh(S)
    top = eig[-1]
    if top <= 0 or eig[0] <= top / COND_THRESHOLD:
        lam = RIDGE_SCALE * np.trace(S) / p
        S = S + lam * np.eye(p)
        eig = eig + lam
        if top + lam <= 0 or eig[0] <= 0 or eig[0] <= (top + lam) * 1e-15:
            raise SingularWeightingError("second-moment matrix is singular", theta)
    return np.linalg.inv(S)


def optimal_weight(m: MomentFunction, data: Optional[Dataset], theta) -> np.ndarray:
    """Inverse of the (uncentred) second-moment matrix ``(1/n) sum m_i m_i'``.

    A ridge of ``1e-10 * trace / p`` is added when the matrix is
    ill-conditioned; a matrix that stays singular raises
    :class:`SingularWeightingError`.
    """
    M = m.matrix(theta)
    return _regularised_inverse(M.T @ M / M.shape[0], theta)


@dataclass(frozen=True)
class WeightPolicy:
    """How ``W_n(theta)`` is chosen for a GMM criterion.

    kinds: ``identity``; ``fixed`` (given SPD matrix); ``optimal-at-theta``
    (recomputed at every theta, continuous-updating); ``optimal-at-fixed``
    (optimal weight evaluated once at ``theta_tilde``, for two-step GMM);
    ``ivqr`` (``[tau (1 - tau)]^-1 [(1/n) sum Z Z']^-1``).
    """

    kind: str
    matrix: Optional[np.ndarray] = None
    tau: Optional[float] = None
    theta_tilde: Optional[np.ndarray] = None

    KINDS = ("identity", "fixed", "optimal-at-theta", "optimal-at-fixed", "ivqr")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise InvalidArgumentError(f"unknown weighting kind {self.kind!r}")
        if self.kind == "fixed":
            W = np.atleast_2d(np.asarray(self.matrix, dtype=float))
            if not np.allclose(W, W.T):
                raise InvalidArgumentError("fixed weighting matrix must be symmetric")
            if np.linalg.eigvalsh(W)[0] <= 0:
                raise InvalidArgumentError("fixed weighting matrix must be positive definite")
            object.__setattr__(self, "matrix", W)
        if self.kind == "ivqr" and self.tau is not None:
            _check_tau(self.tau)
        if self.kind == "optimal-at-fixed" and self.theta_tilde is None:
            raise InvalidArgumentError("optimal-at-fixed needs theta_tilde")

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def fixed(cls, matrix):
        return cls("fixed", matrix=matrix)

    @classmethod
    def optimal(cls):
        return cls("optimal-at-theta")

    @classmethod
    def optimal_at(cls, theta_tilde):
        return cls("optimal-at-fixed", theta_tilde=np.asarray(theta_tilde, dtype=float))

    @classmethod
    def ivqr(cls, tau=None):
        return cls("ivqr", tau=tau)


def ivqr_weight(instruments: np.ndarray, tau: float) -> np.ndarray:
    Z = np.asarray(instruments, dtype=float)
    return _regularised_inverse(Z.T @ Z / Z.shape[0]) / (tau * (1 - tau))


def resolve_weight(policy: WeightPolicy, m: MomentFunction, data: Dataset):
    """Return a fixed matrix, or ``None`` when W depends on theta."""
    if policy.kind == "identity":
        return np.eye(m.p)
    if policy.kind == "fixed":
        if policy.matrix.shape != (m.p, m.p):
            raise InvalidArgumentError("weighting matrix does not match moment dimension")
        return policy.matrix
    if policy.kind == "optimal-at-fixed":
        return optimal_weight(m, data, policy.theta_tilde)
    if policy.kind == "ivqr":
        tau = policy.tau if policy.tau is not None else m.tau
        if tau is None or m.instruments is None:
            raise InvalidArgumentError("ivqr weighting needs IVQR moments (instruments and tau)")
        return ivqr_weight(m.instruments, tau)
    return None


def gmm_criterion(m: MomentFunction, w: WeightPolicy, data: Dataset,
                  dim: Optional[int] = None, tolerant: bool = False) -> Criterion:
    """``L_n(theta) = -(n/2) g_n(theta)' W_n(theta) g_n(theta)``.

    ``dim`` is the parameter dimension; it must not exceed the number of
    moments.
    """
    n = data.n
    if dim is not None and m.p < dim:
        raise InvalidArgumentError(f"{m.p} moments cannot identify {dim} parameters")
    W_fixed = resolve_weight(w, m, data)

    if W_fixed is not None:
        def fn(theta):
            g = m.mean(theta)
            return -0.5 * n * float(g @ W_fixed @ g)
    else:
        def fn(theta):
            M = m.matrix(theta)
            g = M.mean(axis=0)
            W = _regularised_inverse(M.T @ M / M.shape[0], theta)
            return -0.5 * n * float(g @ W @ g)

    return Criterion(fn, dim if dim is not None else m.p, n, f"gmm[{w.kind}]", tolerant)


def linear_index(*blocks: np.ndarray) -> Callable[[np.ndarray], np.ndarray]:
    """Index ``[1, blocks...] @ theta``."""
    parts = [np.ones(blocks[0].shape[0])] + [np.atleast_2d(b.T).T for b in blocks]
    X = np.column_stack(parts)
    return lambda theta: X @ theta


def ivqr_moments(data: Dataset, tau: float, q: Optional[Callable] = None,
                 y_col: str = "y", d_cols: Sequence[str] = (), x_cols: Sequence[str] = (),
                 z_cols: Optional[Sequence[str]] = None, z_intercept: bool = True
                 ) -> MomentFunction:
    """Moments ``(tau - 1{Y_i <= q(D_i, X_i, theta)}) Z_i``.

    ``q(D, X, theta)`` receives the full ``D`` and ``X`` matrices and returns
    the ``n`` structural quantiles; the default is the linear index
    ``theta_0 + D' theta_D + X' theta_X``. ``Z`` defaults to ``(1, D, X)``.
    """
    _check_tau(tau)
    d_cols, x_cols = list(d_cols), list(x_cols)
    z_cols = d_cols + x_cols if z_cols is None else list(z_cols)
    for name in [y_col] + d_cols + x_cols + z_cols:
        if name not in data:
            raise SchemaError(f"missing column {name!r}", column=name)
    y = data[y_col]
    D = data.matrix(d_cols) if d_cols else np.empty((data.n, 0))
    X = data.matrix(x_cols) if x_cols else np.empty((data.n, 0))
    Z = data.matrix(z_cols, intercept=z_intercept) if (z_cols or z_intercept) else None
    if Z is None:
        raise InvalidArgumentError("no instruments")

    if q is None:
        R = np.column_stack([np.ones(data.n), D, X])

        def quantiles(theta):
            return R @ theta
    else:
        def quantiles(theta):
            return np.asarray(q(D, X, theta), dtype=float)

    def fn(theta):
        ind = y <= quantiles(theta)
        return (tau - ind)[:, None] * Z

    return MomentFunction(fn, data.n, Z.shape[1], instruments=Z, tau=tau)


def powell_criterion(data: Dataset, tau: float = 0.5, g: Optional[Callable] = None,
                     weights=None, y_col: str = "y", x_cols: Sequence[str] = (),
                     intercept: bool = True, tolerant: bool = False) -> Criterion:
    """``L_n(theta) = -sum_i w_i rho_tau(Y_i - max(0, g(X_i, theta)))``.

    The default index is linear, ``g = [1, X] @ theta``.
    """
    _check_tau(tau)
    y = data[y_col]
    if np.any(y < 0):
        raise DataValidationError("censored-at-zero model needs Y >= 0 for every row")
    X = data.matrix(list(x_cols), intercept=intercept)
    if weights is None:
        w = None
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != y.shape:
            raise InvalidArgumentError("one weight per row required")
    index = (lambda theta: X @ theta) if g is None else (lambda theta: np.asarray(g(X, theta)))
    dim = X.shape[1]

    def fn(theta):
        u = y - np.maximum(index(theta), 0.0)
        r = u * (tau - (u < 0))
        return -float(r.sum() if w is None else w @ r)

    crit = Criterion(fn, dim, data.n, "powell", tolerant)
    crit.design = X
    return crit


@dataclass
class VarModel:
    """Linear or recursive conditional-quantile model for a time series.

    ``Q_t = X_{t-1}' theta + rho * Q_{t-1}`` for rows ``t >= s``; the first
    ``s`` rows are warm-up, with ``Q`` fixed at the empirical marginal
    quantile of ``Y`` over those rows. The parameter vector is ``theta``
    followed by ``rho`` when ``recursive`` is set.
    """

    data: Dataset
    y_col: str = "y"
    x_cols: Sequence[str] = ()
    s: int = 100
    recursive: bool = True
    intercept: bool = True
    diagnostics: dict = field(default_factory=lambda: {"explosive_evaluations": 0})

    def __post_init__(self):
        if self.data.layout != "time-series":
            raise InvalidArgumentError("VaR criterion needs time-series data")
        n = self.data.n
        if not 1 <= self.s < n:
            raise InvalidArgumentError(f"warm-up length s={self.s} must satisfy 1 <= s < n={n}")
        self.y = self.data[self.y_col]
        self.X = self.data.matrix(list(self.x_cols), intercept=self.intercept)
        # regressors dated t-1 for every t >= s
        self._X_lag = self.X[self.s - 1:-1]
        self._y_post = self.y[self.s:]

    @property
    def k(self) -> int:
        return self.X.shape[1]

    @property
    def dim(self) -> int:
        return self.k + int(self.recursive)

    @property
    def n_eff(self) -> int:
        return self.y.size - self.s

    def initial_quantile(self, level: float) -> float:
        return empirical_quantile(self.y[: self.s], level)

    def split(self, params):
        params = np.asarray(params, dtype=float)
        if params.size != self.dim:
            raise InvalidArgumentError(f"expected {self.dim} parameters, got {params.size}")
        if self.recursive:
            return params[:-1], float(params[-1])
        return params, 0.0

    def post_warmup_quantiles(self, params, level: float) -> np.ndarray:
        """``Q_t`` for ``t = s, ..., n-1``."""
        theta, rho = self.split(params)
        a = self._X_lag @ theta
        if rho == 0.0:
            return a
        q0 = self.initial_quantile(level)
        with np.errstate(over="ignore", invalid="ignore"):
            return lfilter([1.0], [1.0, -rho], a, zi=[rho * q0])[0]

    def quantile_path(self, params, level: float) -> np.ndarray:
        """Full ``Q_t`` path, warm-up rows included."""
        head = np.full(self.s, self.initial_quantile(level))
        return np.concatenate([head, self.post_warmup_quantiles(params, level)])

    def criterion(self, tau: float, weights=None, tolerant: bool = False) -> Criterion:
        _check_tau(tau)
        if weights is None:
            w = None
        else:
            w = np.asarray(weights, dtype=float)
            if w.size != self.y.size:
                raise InvalidArgumentError("one weight per row required")
            w = w[self.s:]
        y = self._y_post
        diag = self.diagnostics

        def fn(params):
            if self.recursive and abs(params[-1]) >= 1:
                diag["explosive_evaluations"] += 1
            q = self.post_warmup_quantiles(params, tau)
            u = y - q
            with np.errstate(invalid="ignore"):
                r = u * (tau - (u < 0))
                total = float(r.sum() if w is None else w @ r)
            if not np.isfinite(total):
                return NEG_INF
            return -total

        name = "var-recursive" if self.recursive else "var-linear"
        crit = Criterion(fn, self.dim, self.n_eff, name, tolerant)
        crit.model = self
        crit.tau = tau
        return crit


def var_criterion(data: Dataset, tau: float, s: int = 100, recursive: bool = True,
                  weights=None, y_col: str = "y", x_cols: Sequence[str] = (),
                  intercept: bool = True, tolerant: bool = False) -> Criterion:
    """Check-loss criterion ``-sum_{t>=s} w_t rho_tau(Y_t - Q_t)`` of a VaR model.

    With ``weights=None`` every row gets unit weight.
    """
    model = VarModel(data, y_col, list(x_cols), s, recursive, intercept)
    return model.criterion(tau, weights, tolerant)


def flat_var_weights(n: int, tau: float) -> np.ndarray:
    _check_tau(tau)
    return np.full(n, 1.0 / (tau * (1 - tau)))


def default_bandwidth(n: int, C: float = 1.0) -> float:
    return C * n ** (-1.0 / 3.0)


@dataclass
class TwoStepWeights:
    weights: np.ndarray
    h: float
    n_floored: int


def two_step_var_weights(model: VarModel, tau: float, params, h: float,
                         shifted_params=None, eps: float = 1e-6) -> TwoStepWeights:
    """Difference-quotient density weights for the second VaR step.

    ``w_t = h / [Q_t(tau + h/2) - Q_t(tau - h/2)] / (tau (1 - tau))``.

    With ``shifted_params=None`` both shifted-level paths reuse ``params``
    and only the imputed initial quantile moves. Pass
    ``shifted_params=(params_lo, params_hi)`` from fits at ``tau -/+ h/2`` to
    get the refitted version. Non-positive spreads get weight ``eps``.
    """
    _check_tau(tau)
    lo, hi = tau - h / 2, tau + h / 2
    if not (0 < lo and hi < 1):
        raise InvalidArgumentError("tau +/- h/2 must stay inside (0, 1)")
    p_lo, p_hi = (params, params) if shifted_params is None else shifted_params
    spread = model.quantile_path(p_hi, hi) - model.quantile_path(p_lo, lo)
    base = 1.0 / (tau * (1 - tau))
    with np.errstate(divide="ignore", invalid="ignore"):
        w = h / spread * base
    bad = ~(spread > 0) | ~np.isfinite(w)
    w = np.where(bad, eps, np.maximum(w, eps))
    # warm-up rows never enter the criterion
    bad[: model.s] = False
    w[: model.s] = base
    n_floored = int(bad.sum())
    if n_floored:
        logger.info("two-step VaR weights: %d rows floored at eps=%g", n_floored, eps)
    return TwoStepWeights(w, h, n_floored)
