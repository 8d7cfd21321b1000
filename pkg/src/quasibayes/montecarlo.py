"""Monte Carlo replication harness for the censored-median and IVQR designs.

Each replication draws a dataset, builds the criterion, runs a chain from
the OLS start and scores point estimates and intervals against the truth.
"""
from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .core import ParamSpace, Prior, quadratic_criterion
from .criteria import WeightPolicy, gmm_criterion, ivqr_moments, powell_criterion
from .dataset import Dataset
from .errors import InvalidArgumentError, QuasiBayesError
from .estimate import posterior_mean, posterior_median, type1_quantile
from .inference import (
    Functional,
    omega_from_scores,
    omega_gmm,
    powell_scores,
    quantile_interval,
    sandwich_from_chain,
)
from .sampler import SamplerConfig, make_rng, run_chain

logger = logging.getLogger(__name__)

DGPS = ("censored-ex1", "ivqr-ex2", "conjugate-gaussian")
CENSORED_TRUTH = np.array([-6.0, 3.0, 3.0, 3.0])
IVQR_TRUTH = np.zeros(4)
CONJUGATE_TRUTH = np.array([1.0, -1.0])

ESTIMATOR_COLUMNS = ("rmse", "mad", "mean_bias", "median_bias", "median_abs_dev")
INTERVAL_COLUMNS = ("coverage", "length")


def gen_censored_ex1(n: int, rng: np.random.Generator) -> Dataset:
    """``Y = max(0, -6 + 3 (X1 + X2 + X3) + X1^2 e)``, ``X ~ N(0, I3)``, ``e ~ N(0, 1)``."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    X = rng.standard_normal((n, 3))
    u = X[:, 0] ** 2 * rng.standard_normal(n)
    y_star = CENSORED_TRUTH[0] + X @ CENSORED_TRUTH[1:] + u
    return Dataset({"y": np.maximum(0.0, y_star), "x1": X[:, 0], "x2": X[:, 1], "x3": X[:, 2]})


def gen_ivqr_ex2(n: int, rng: np.random.Generator) -> Dataset:
    """``Y = sigma(D) e`` with ``D = exp N(0, I3)`` and ``sigma(D) = (1 + sum D) / 5``.

    The true intercept and slopes are zero; instruments are ``Z = (1, D)``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    D = np.exp(rng.standard_normal((n, 3)))
    sigma = (1.0 + D.sum(axis=1)) / 5.0
    y = IVQR_TRUTH[0] + D @ IVQR_TRUTH[1:] + sigma * rng.standard_normal(n)
    return Dataset({"y": y, "d1": D[:, 0], "d2": D[:, 1], "d3": D[:, 2]})


def gen_conjugate(n: int, rng: np.random.Generator) -> Dataset:
    """Bivariate ``N(truth, I)`` sample for the Gaussian-mean reference design."""
    Y = CONJUGATE_TRUTH + rng.standard_normal((n, 2))
    return Dataset({"y1": Y[:, 0], "y2": Y[:, 1]})


def ols(X: np.ndarray, y: np.ndarray, ridge: float = 1e-8) -> np.ndarray:
    """Normal-equations least squares with a small ridge."""
    XtX = X.T @ X
    return np.linalg.solve(XtX + ridge * np.eye(XtX.shape[0]), X.T @ y)


@dataclass
class ReplicationSpec:
    dgp: str
    n: int
    R: int = 100
    seed: int = 0
    n_keep: int = 2000
    n_burn: int = 2000
    adapt_every: Optional[int] = None
    target_accept: float = 0.5
    init_scale: float = 0.1
    alpha: float = 0.10
    half_width: float = 10.0
    workers: int = 1
    tolerant: bool = False

    def __post_init__(self):
        if self.dgp not in DGPS:
            raise InvalidArgumentError(f"dgp must be one of {DGPS}")
        if self.R < 1:
            raise InvalidArgumentError("R must be >= 1")
        if self.n < 10:
            raise InvalidArgumentError("n must be >= 10")
        if self.adapt_every is None:
            self.adapt_every = 200 if self.dgp == "censored-ex1" else 100

    @property
    def truth(self) -> np.ndarray:
        return {"censored-ex1": CENSORED_TRUTH, "ivqr-ex2": IVQR_TRUTH,
                "conjugate-gaussian": CONJUGATE_TRUTH}[self.dgp]

    @property
    def reported(self) -> list:
        """Coordinates entering the tables: slopes, or both means for the Gaussian design."""
        return [0, 1] if self.dgp == "conjugate-gaussian" else [1, 2, 3]


@dataclass
class MetricsTable:
    spec: dict
    estimators: dict
    intervals: dict
    n_collapsed: int = 0
    n_failed: int = 0
    per_replication: list = field(default_factory=list)
    elapsed: float = 0.0

    def to_dict(self, include_replications: bool = False) -> dict:
        out = {"spec": self.spec, "estimators": self.estimators, "intervals": self.intervals,
               "n_collapsed": self.n_collapsed, "n_failed": self.n_failed}
        if include_replications:
            out["per_replication"] = self.per_replication
        return out


def summarize(estimates, truth, coords=None) -> dict:
    """Bias and dispersion metrics per coordinate, averaged over ``coords``.

    Medians of an even number of replications take the lower middle value.
    """
    E = np.atleast_2d(np.asarray(estimates, dtype=float))
    truth = np.asarray(truth, dtype=float)
    coords = list(range(E.shape[1])) if coords is None else list(coords)
    err = E[:, coords] - truth[coords]
    row = {
        "rmse": np.sqrt(np.mean(err ** 2, axis=0)),
        "mad": np.mean(np.abs(err), axis=0),
        "mean_bias": np.mean(err, axis=0),
        "median_bias": type1_quantile(err, 0.5),
        "median_abs_dev": type1_quantile(np.abs(err), 0.5),
    }
    return {k: float(np.mean(v)) for k, v in row.items()}


def _symmetric_interval(values: np.ndarray, center: float, alpha: float):
    half = float(type1_quantile(np.abs(values - center), 1 - alpha))
    return center - half, center + half


def _build(spec: ReplicationSpec, data: Dataset):
    """Criterion, OLS start and an Omega estimator for one dataset."""
    if spec.dgp == "ivqr-ex2":
        m = ivqr_moments(data, 0.5, d_cols=["d1", "d2", "d3"])
        crit = gmm_criterion(m, WeightPolicy.ivqr(0.5), data, dim=4, tolerant=spec.tolerant)
        X = data.matrix(["d1", "d2", "d3"], intercept=True)
        start = ols(X, data["y"])

        def omega(chain):
            step = 2.0 * chain.draws.std(axis=0) + 1e-6
            return omega_gmm(m, data, chain.draws.mean(axis=0), WeightPolicy.ivqr(0.5),
                             step=step).Omega
        return crit, start, omega, True
    if spec.dgp == "censored-ex1":
        crit = powell_criterion(data, 0.5, x_cols=["x1", "x2", "x3"], tolerant=spec.tolerant)
        start = ols(crit.design, data["y"])

        def omega(chain):
            return omega_from_scores(powell_scores(crit, data, chain.draws.mean(axis=0), 0.5))
        return crit, start, omega, False
    Y = data.matrix(["y1", "y2"])
    crit = quadratic_criterion(Y.mean(axis=0), np.eye(2), data.n)
    start = Y.mean(axis=0)
    return crit, start, (lambda chain: np.eye(2)), True


def replicate(spec: ReplicationSpec, r: int) -> dict:
    """Run replication ``r``; the dataset and chain streams derive from ``(seed, r)``."""
    data_rng = make_rng(spec.seed, 2 * r)
    gen = {"censored-ex1": gen_censored_ex1, "ivqr-ex2": gen_ivqr_ex2,
           "conjugate-gaussian": gen_conjugate}[spec.dgp]
    data = gen(spec.n, data_rng)
    crit, start, omega_fn, info_eq = _build(spec, data)
    space = ParamSpace.around(spec.truth, spec.half_width)
    start = np.clip(start, space.lower + 1e-9, space.upper - 1e-9)
    cfg = SamplerConfig(start, spec.init_scale, n_keep=spec.n_keep, n_burn=spec.n_burn,
                        adapt_every=spec.adapt_every, target_accept=spec.target_accept,
                        seed=spec.seed, replication=2 * r + 1)
    chain = run_chain(cfg, crit, Prior.flat(space), space)

    mean = posterior_mean(chain).theta_hat
    median = posterior_median(chain).theta_hat
    Omega = omega_fn(chain)
    out = {"replication": r, "mean": mean.tolist(), "median": median.tolist(),
           "acceptance": chain.acceptance_rates.tolist(), "intervals": {}}
    for j in spec.reported:
        f = Functional.coordinate(j)
        vals = chain.draws[:, j]
        q = quantile_interval(chain, f, spec.alpha, info_eq)
        s = _symmetric_interval(vals, float(mean[j]), spec.alpha)
        w = sandwich_from_chain(chain, Omega, f, spec.alpha, n=crit.n)
        out["intervals"][j] = {"equal-tailed": [q.lo, q.hi], "symmetric": list(s),
                               "sandwich": [w.lo, w.hi]}
    if spec.dgp == "censored-ex1":
        index = crit.design @ mean
        out["collapsed"] = bool(np.all(index <= 0))
    return out


def _safe_replicate(args):
    spec, r = args
    try:
        return replicate(spec, r)
    except QuasiBayesError as exc:
        if not spec.tolerant:
            raise QuasiBayesError(f"replication {r} failed: {exc}") from exc
        logger.warning("replication %d skipped: %s", r, exc)
        return {"replication": r, "failed": str(exc)}


def run_replications(spec: ReplicationSpec) -> MetricsTable:
    t0 = time.perf_counter()
    jobs = [(spec, r) for r in range(spec.R)]
    if spec.workers > 1:
        with ProcessPoolExecutor(spec.workers) as pool:
            results = list(pool.map(_safe_replicate, jobs))
    else:
        results = [_safe_replicate(job) for job in jobs]
    results.sort(key=lambda res: res["replication"])
    ok = [res for res in results if "failed" not in res]
    if not ok:
        raise QuasiBayesError("every replication failed")

    truth = spec.truth
    estimators = {
        "Q-posterior-mean": summarize([res["mean"] for res in ok], truth, spec.reported),
        "Q-posterior-median": summarize([res["median"] for res in ok], truth, spec.reported),
    }
    intervals = {}
    for method in ("equal-tailed", "symmetric", "sandwich"):
        cover, length = [], []
        for j in spec.reported:
            bounds = np.array([res["intervals"][j][method] for res in ok])
            cover.append(np.mean((bounds[:, 0] <= truth[j]) & (truth[j] <= bounds[:, 1])))
            length.append(np.mean(bounds[:, 1] - bounds[:, 0]))
        intervals[method] = {"coverage": float(np.mean(cover)), "length": float(np.mean(length))}

    return MetricsTable(
        spec=asdict(spec), estimators=estimators, intervals=intervals,
        n_collapsed=sum(bool(res.get("collapsed")) for res in ok),
        n_failed=len(results) - len(ok), per_replication=results,
        elapsed=time.perf_counter() - t0,
    )


INTERVAL_LABELS = {
    "equal-tailed": "Quasi-posterior interval, equal tailed",
    "symmetric": "Quasi-posterior interval, symmetric (around mean)",
    "sandwich": "Sandwich interval (n x chain covariance)",
}


def format_table(table: MetricsTable) -> str:
    """Aligned plain-text rendering of the estimator and interval rows."""
    spec = table.spec
    level = int(round(100 * (1 - spec["alpha"])))
    lines = [f"dgp={spec['dgp']}  n={spec['n']}  R={spec['R']}  seed={spec['seed']}", ""]
    header = ["Estimator", "RMSE", "MAD", "Mean Bias", "Median Bias", "Median Abs. Dev."]
    width = 36
    lines.append(f"{header[0]:<{width}}" + "".join(f"{h:>18}" for h in header[1:]))
    for name, row in table.estimators.items():
        lines.append(f"{name:<{width}}" + "".join(f"{row[c]:>18.4f}" for c in ESTIMATOR_COLUMNS))
    if spec["dgp"] == "ivqr-ex2":
        lines.append(f"{'Standard Quantile Regression':<{width}}" + f"{'(comparator not computed)':>36}")
    lines.append("")
    lines.append(f"{'Inference method (' + str(level) + '%)':<{width + 16}}{'coverage':>12}{'length':>12}")
    for method, row in table.intervals.items():
        lines.append(f"{INTERVAL_LABELS[method]:<{width + 16}}{row['coverage']:>12.3f}{row['length']:>12.4f}")
    if spec["dgp"] == "censored-ex1":
        lines.append("")
        lines.append(f"replications collapsed to the all-zero fit: {table.n_collapsed}")
    if table.n_failed:
        lines.append(f"replications skipped: {table.n_failed}")
    return "\n".join(lines) + "\n"


def write_table(table: MetricsTable, out_dir) -> dict:
    """Write ``table.txt``, ``table.json`` and per-replication ``estimates.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "table.txt").write_text(format_table(table))
    (out / "table.json").write_text(json.dumps(table.to_dict(), indent=2, sort_keys=True))
    with (out / "estimates.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        d = 2 if table.spec["dgp"] == "conjugate-gaussian" else 4
        writer.writerow(["replication"] + [f"mean_{j}" for j in range(d)]
                        + [f"median_{j}" for j in range(d)])
        for res in table.per_replication:
            if "failed" in res:
                continue
            writer.writerow([res["replication"]] + [repr(v) for v in res["mean"]]
                            + [repr(v) for v in res["median"]])
    return {"text": out / "table.txt", "json": out / "table.json", "csv": out / "estimates.csv"}
