"""Random-walk Gibbs-Metropolis sampling of quasi-posteriors.

Each sweep proposes a normal move for every coordinate in turn and accepts it
with probability ``min(1, exp(delta))``, where ``delta`` is the difference of
log quasi-posteriors. Proposal scales adapt during burn-in only.

Random stream discipline (stream version 1): a chain owns one
``numpy.random.Generator`` (PCG64) seeded from ``SeedSequence(seed,
spawn_key=(replication,))``. Variates are drawn in blocks of
``RNG_BLOCK`` sweeps: first a ``block x d`` array of standard normals, then a
``block x d`` array of uniforms. Every acceptance decision consumes exactly
one uniform, including proposals that fall outside the parameter space.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import NEG_INF, Criterion, ParamPoint, ParamSpace, Prior, temper
from .errors import (
    CriterionEvaluationError,
    InvalidArgumentError,
    InvalidStateError,
    StartupError,
)

logger = logging.getLogger(__name__)

RNG_STREAM_VERSION = 1
RNG_BLOCK = 1024
DEFAULT_N = 5000

__all__ = [
    "SamplerConfig", "Chain", "make_rng", "adapt_scale", "mh_coordinate_update",
    "run_chain", "temper", "save_chain", "load_chain",
]


def make_rng(seed: int, replication: Optional[int] = None) -> np.random.Generator:
    key = () if replication is None else (int(replication),)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


@dataclass
class SamplerConfig:
    """Chain settings; ``n_keep``/``n_burn``/``adapt_every`` count sweeps.

    A sweep is one update of every coordinate, so ``N`` sweeps amount to
    ``N * d`` coordinate updates.
    """

    init: np.ndarray
    init_scale: Optional[np.ndarray] = None
    n_keep: int = DEFAULT_N
    n_burn: int = DEFAULT_N
    adapt_every: int = 100
    target_accept: float = 0.5
    seed: int = 0
    replication: Optional[int] = None
    lam: float = 1.0

    def __post_init__(self):
        self.init = np.array(self.init, dtype=float, ndmin=1)
        d = self.init.size
        if self.init_scale is None:
            self.init_scale = np.full(d, 0.1)
        self.init_scale = np.broadcast_to(
            np.asarray(self.init_scale, dtype=float), (d,)).copy()
        if self.n_keep < 1:
            raise InvalidArgumentError("n_keep must be >= 1")
        if self.n_burn < 0:
            raise InvalidArgumentError("n_burn must be >= 0")
        if self.adapt_every < 1:
            raise InvalidArgumentError("adapt_every must be >= 1")
        if not 0 < self.target_accept < 1:
            raise InvalidArgumentError("target_accept must lie in (0, 1)")
        if not np.all(self.init_scale > 0):
            raise InvalidArgumentError("proposal scales must be positive")
        if not self.lam > 0:
            raise InvalidArgumentError("lam must be positive")

    @classmethod
    def from_updates(cls, init, N: int = DEFAULT_N, **kwargs) -> "SamplerConfig":
        """Burn-in and retained lengths given as ``N * d`` coordinate updates each."""
        return cls(init, n_keep=N, n_burn=N, **kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["init"] = self.init.tolist()
        out["init_scale"] = self.init_scale.tolist()
        return out


@dataclass
class Chain:
    """Post-burn-in draws, one state per sweep."""

    draws: np.ndarray
    logpost: np.ndarray
    accept_count: np.ndarray
    final_scales: np.ndarray
    seed: int
    burn_accept_count: np.ndarray = field(default_factory=lambda: np.zeros(0))
    config: dict = field(default_factory=dict)

    @property
    def B(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    @property
    def acceptance_rates(self) -> np.ndarray:
        return self.accept_count / max(self.B, 1)

    def metadata(self) -> dict:
        return {
            "rng_stream_version": RNG_STREAM_VERSION,
            "seed": int(self.seed),
            "shape": [self.B, self.dim],
            "acceptance_rates": self.acceptance_rates.tolist(),
            "accept_count": self.accept_count.tolist(),
            "final_scales": self.final_scales.tolist(),
            "config": self.config,
        }


def adapt_scale(scale: float, window_accept_rate: float, target: float) -> float:
    """``scale * exp(clip(rate - target, -1, 1))``."""
    if not scale > 0:
        raise InvalidArgumentError("scale must be positive")
    return scale * math.exp(min(max(window_accept_rate - target, -1.0), 1.0))


def _log_target(c: Criterion, p: Prior, theta: np.ndarray) -> float:
    lp = p(theta)
    if lp == NEG_INF:
        return NEG_INF
    value = c(theta)
    if value == NEG_INF:
        return NEG_INF
    return value + lp


def mh_coordinate_update(state, k: int, scale: float, c: Criterion, p: Prior,
                         rng: np.random.Generator, current_logpost: Optional[float] = None):
    """One Metropolis update of coordinate ``k``.

    Draws one standard normal and then one uniform from ``rng``. Returns the
    new :class:`ParamPoint` and whether the move was accepted.
    """
    x = np.array(getattr(state, "theta", state), dtype=float, ndmin=1)
    lp = _log_target(c, p, x) if current_logpost is None else current_logpost
    if lp == NEG_INF or not p.space.contains(x):
        raise InvalidStateError(f"state {x.tolist()} lies outside the support")
    z = rng.standard_normal()
    u = rng.random()
    prop = x.copy()
    prop[k] += scale * z
    lp_new = _log_target(c, p, prop)
    delta = lp_new - lp
    if u < math.exp(min(delta, 0.0)):
        return ParamPoint(prop), True
    return ParamPoint(x), False


def run_chain(cfg: SamplerConfig, c: Criterion, p: Prior,
              space: Optional[ParamSpace] = None) -> Chain:
    """Run burn-in (with scale adaptation) and then ``n_keep`` frozen-scale sweeps."""
    space = p.space if space is None else space
    x = cfg.init.copy()
    d = x.size
    if d != c.dim or d != space.dim:
        raise InvalidArgumentError("init, criterion and parameter space dimensions differ")
    if not space.contains(x):
        raise StartupError(f"initial point {x.tolist()} lies outside the parameter space", x)
    if cfg.lam != 1:
        c = temper(c, cfg.lam)
    flat_prior = p.kind == "flat-on-space" and p.space is space
    lo, hi = space.lower, space.upper
    crit = c.__call__

    def target(theta):
        if flat_prior:
            return crit(theta)
        return _log_target(c, p, theta)

    try:
        lp = target(x)
    except CriterionEvaluationError as exc:
        raise StartupError(f"criterion failed at the initial point: {exc}", x) from exc
    if not lp > NEG_INF:
        raise StartupError(f"log quasi-posterior is -inf at the initial point {x.tolist()}", x)

    rng = make_rng(cfg.seed, cfg.replication)
    scales = cfg.init_scale.copy()
    total = cfg.n_burn + cfg.n_keep
    draws = np.empty((cfg.n_keep, d))
    logpost = np.empty(cfg.n_keep)
    accept_keep = np.zeros(d, dtype=np.int64)
    accept_burn = np.zeros(d, dtype=np.int64)
    window = np.zeros(d, dtype=np.int64)
    lo_l, hi_l = lo.tolist(), hi.tolist()

    sweep = 0
    while sweep < total:
        block = min(RNG_BLOCK, total - sweep)
        Z = rng.standard_normal((block, d))
        U = rng.random((block, d))
        for b in range(block):
            burning = sweep < cfg.n_burn
            z_row, u_row = Z[b], U[b]
            for k in range(d):
                old = x[k]
                new = old + scales[k] * z_row[k]
                if new < lo_l[k] or new > hi_l[k]:
                    continue  # -inf target: rejected, uniform already consumed
                x[k] = new
                lp_new = target(x)
                delta = lp_new - lp
                if u_row[k] < math.exp(delta if delta < 0.0 else 0.0):
                    lp = lp_new
                    if burning:
                        window[k] += 1
                    else:
                        accept_keep[k] += 1
                else:
                    x[k] = old
            if burning:
                if (sweep + 1) % cfg.adapt_every == 0:
                    rates = window / cfg.adapt_every
                    for k in range(d):
                        scales[k] = adapt_scale(scales[k], rates[k], cfg.target_accept)
                    accept_burn += window
                    window[:] = 0
            else:
                j = sweep - cfg.n_burn
                draws[j] = x
                logpost[j] = lp
            sweep += 1
    accept_burn += window

    return Chain(draws, logpost, accept_keep, scales, cfg.seed, accept_burn, cfg.to_dict())


def save_chain(chain: Chain, path, fmt: str = "binary") -> Path:
    """Write draws and log posteriors plus a ``.json`` sidecar.

    ``binary``: row-major little-endian float64, ``B x (d + 1)`` with the log
    quasi-posterior in the last column. ``csv``: header ``theta_1..theta_d,
    logpost``.
    """
    path = Path(path)
    table = np.column_stack([chain.draws, chain.logpost])
    meta = chain.metadata()
    meta["format"] = fmt
    if fmt == "binary":
        table.astype("<f8").tofile(path)
    elif fmt == "csv":
        header = ",".join([f"theta_{j + 1}" for j in range(chain.dim)] + ["logpost"])
        np.savetxt(path, table, delimiter=",", header=header, comments="", fmt="%.17g")
    else:
        raise InvalidArgumentError(f"unknown chain format {fmt!r}")
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))
    return path


def load_chain(path) -> Chain:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    B, d = meta["shape"]
    if meta["format"] == "binary":
        table = np.fromfile(path, dtype="<f8").reshape(B, d + 1)
    else:
        table = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return Chain(
        draws=table[:, :d].astype(float),
        logpost=table[:, d].astype(float),
        accept_count=np.asarray(meta["accept_count"], dtype=np.int64),
        final_scales=np.asarray(meta["final_scales"], dtype=float),
        seed=meta["seed"],
        config=meta.get("config", {}),
    )
