"""Command-line front end.

    quasibayes estimate   --config run.json [--data d.csv] [--out report.json]
    quasibayes montecarlo --config mc.json  [--out outdir]
    quasibayes var        --config var.json [--data returns.csv] [--out outdir]

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy

from . import __version__
from .core import ParamSpace, Prior, quadratic_criterion
from .criteria import (
    MomentFunction,
    VarModel,
    WeightPolicy,
    default_bandwidth,
    gmm_criterion,
    ivqr_moments,
    powell_criterion,
)
from .dataset import Dataset, load_csv
from .errors import (
    CriterionEvaluationError,
    DataTooShortError,
    DataValidationError,
    DomainError,
    InvalidArgumentError,
    InvalidStateError,
    QuasiBayesError,
    SchemaError,
    StartupError,
)
from .estimate import LossSpec, risk_minimizer
from .gel import gel_criterion
from .inference import (
    Functional,
    omega_from_scores,
    omega_gmm,
    powell_scores,
    quantile_interval,
    sandwich_from_chain,
)
from .montecarlo import ReplicationSpec, ols, run_replications, write_table
from .sampler import Chain, SamplerConfig, run_chain, save_chain

logger = logging.getLogger("quasibayes")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


class UsageError(QuasiBayesError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@contextlib.contextmanager
def stage(name: str):
    """Tag package errors raised inside the block with the pipeline stage."""
    try:
        yield
    except QuasiBayesError as exc:
        if not hasattr(exc, "stage"):
            exc.stage = name
        raise


@dataclass
class RunConfig:
    command: str
    criterion: dict = field(default_factory=dict)
    sampler: dict = field(default_factory=dict)
    losses: list = field(default_factory=lambda: ["squared", "absolute"])
    intervals: dict = field(default_factory=dict)
    data: Optional[str] = None
    layout: str = "cross-section"
    chain_out: Optional[str] = None
    chain_format: str = "binary"
    out: Optional[str] = None
    seed: int = 0
    chains: int = 1
    tolerant: bool = False
    montecarlo: dict = field(default_factory=dict)
    var: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict, command: str) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(raw) - known
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        raw = dict(raw)
        raw.setdefault("command", command)
        if raw["command"] != command:
            raise UsageError(f"config is for {raw['command']!r}, not {command!r}")
        return cls(**raw)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


@dataclass
class EstimationReport:
    point_estimates: dict
    intervals: dict
    diagnostics: dict
    provenance: dict

    def check(self):
        for name, per_method in self.intervals.items():
            for method, iv in per_method.items():
                if not iv["lo"] <= iv["hi"]:
                    raise InvalidStateError(f"interval {name}/{method} has lo > hi")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def provenance(cfg: RunConfig) -> dict:
    h = hashlib.sha256(cfg.canonical().encode())
    if cfg.data:
        h.update(Path(cfg.data).read_bytes())
    return {
        "config_hash": h.hexdigest(),
        "seed": cfg.seed,
        "versions": {"quasibayes": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
    }


def _check_prob(value, name):
    if not 0 < float(value) < 1:
        raise UsageError(f"{name} must lie in (0, 1), got {value}")
    return float(value)


# ---------------------------------------------------------------------------
# criterion construction


@dataclass
class Built:
    criterion: object
    start: np.ndarray
    names: list
    omega: object
    information_equality: bool


def _linear_iv_moments(data: Dataset, y: str, x: list, z: list, intercept: bool):
    X = data.matrix(x, intercept=intercept)
    Z = data.matrix(z, intercept=intercept)
    yv = data[y]
    return MomentFunction(lambda t: Z * (yv - X @ t)[:, None], data.n, Z.shape[1], instruments=Z)


def build_criterion(spec: dict, data: Optional[Dataset], tolerant: bool = False) -> Built:
    kind = spec.get("kind")
    if kind == "quadratic":
        center = np.asarray(spec["center"], dtype=float)
        A = np.asarray(spec.get("curvature", np.eye(center.size)), dtype=float)
        n = int(spec.get("n", 100))
        crit = quadratic_criterion(center, A, n)
        names = spec.get("names") or [f"theta_{j + 1}" for j in range(center.size)]
        return Built(crit, center.copy(), names, lambda chain: A, True)

    if data is None:
        raise UsageError(f"criterion {kind!r} needs a data file")
    y = spec.get("y", "y")
    intercept = bool(spec.get("intercept", True))
    tau = _check_prob(spec.get("tau", 0.5), "tau")

    if kind in ("ivqr", "gmm", "gel"):
        moments = spec.get("moments", "ivqr" if kind != "gmm" else "linear-iv")
        d_cols = list(spec.get("d", []))
        x_cols = list(spec.get("x", []))
        z_cols = spec.get("z")
        names = (["const"] if intercept else []) + d_cols + x_cols
        if moments == "ivqr":
            m = ivqr_moments(data, tau, y_col=y, d_cols=d_cols, x_cols=x_cols, z_cols=z_cols,
                             z_intercept=intercept)
            if not intercept:
                raise UsageError("ivqr moments require an intercept")
        elif moments == "linear-iv":
            m = _linear_iv_moments(data, y, d_cols + x_cols,
                                   list(z_cols) if z_cols else d_cols + x_cols, intercept)
        else:
            raise UsageError(f"unknown moments {moments!r}")
        dim = len(names)
        start = ols(data.matrix(d_cols + x_cols, intercept=intercept), data[y])
        if kind == "gel":
            crit = gel_criterion(spec.get("divergence", "el"), m, data, dim=dim, tolerant=tolerant)
            policy = WeightPolicy.optimal()
        else:
            weighting = spec.get("weighting", "ivqr" if kind == "ivqr" else "optimal")
            policy = {"ivqr": lambda: WeightPolicy.ivqr(tau),
                      "optimal": WeightPolicy.optimal,
                      "identity": WeightPolicy.identity}.get(weighting)
            if policy is None:
                raise UsageError(f"unknown weighting {weighting!r}")
            policy = policy()
            crit = gmm_criterion(m, policy, data, dim=dim, tolerant=tolerant)
        smooth = moments == "linear-iv"

        def omega(chain):
            center = chain.draws.mean(axis=0)
            step = None if smooth else 2.0 * chain.draws.std(axis=0) + 1e-6
            return omega_gmm(m, data, center, policy, step=step).Omega

        info_eq = policy.kind in ("ivqr", "optimal-at-theta", "optimal-at-fixed")
        return Built(crit, start, names, omega, info_eq)

    if kind == "powell":
        x_cols = list(spec.get("x", []))
        weights = spec.get("weights_column")
        w = data[weights] if weights else None
        crit = powell_criterion(data, tau, weights=w, y_col=y, x_cols=x_cols,
                                intercept=intercept, tolerant=tolerant)
        names = (["const"] if intercept else []) + x_cols
        start = ols(crit.design, data[y])

        def omega(chain):
            return omega_from_scores(
                powell_scores(crit, data, chain.draws.mean(axis=0), tau, w, y))
        return Built(crit, start, names, omega, False)

    raise UsageError(f"unknown criterion kind {kind!r}")


def _space(sampler: dict, start: np.ndarray) -> ParamSpace:
    box = sampler.get("space", {})
    if "lower" in box:
        return ParamSpace(box["lower"], box["upper"])
    center = np.asarray(box.get("center", start), dtype=float)
    return ParamSpace.around(center, float(box.get("half_width", 10.0)))


def _sampler_config(sampler: dict, start, seed: int, replication: Optional[int]) -> SamplerConfig:
    init = sampler.get("init", "ols")
    init = start if init in ("ols", None) else np.asarray(init, dtype=float)
    return SamplerConfig(
        init=init,
        init_scale=sampler.get("init_scale", 0.1),
        n_keep=int(sampler.get("n_keep", 5000)),
        n_burn=int(sampler.get("n_burn", 5000)),
        adapt_every=int(sampler.get("adapt_every", 100)),
        target_accept=float(sampler.get("target_accept", 0.5)),
        seed=seed,
        replication=replication,
        lam=float(sampler.get("lam", 1.0)),
    )


def run_pooled(sampler: dict, crit, start, seed: int, chains: int) -> Chain:
    """Run ``chains`` independent chains and pool their draws in order."""
    space = _space(sampler, start)
    prior = Prior.flat(space)
    start = np.clip(start, space.lower, space.upper)
    runs = []
    for c in range(chains):
        cfg = _sampler_config(sampler, start, seed, c if chains > 1 else None)
        runs.append(run_chain(cfg, crit, prior, space))
    if len(runs) == 1:
        return runs[0]
    return Chain(
        draws=np.concatenate([r.draws for r in runs]),
        logpost=np.concatenate([r.logpost for r in runs]),
        accept_count=sum(r.accept_count for r in runs),
        final_scales=np.mean([r.final_scales for r in runs], axis=0),
        seed=seed,
        config={"chains": [r.config for r in runs]},
    )


def _loss_spec(entry, d: int):
    if isinstance(entry, str):
        return entry, LossSpec(entry)
    if isinstance(entry, dict) and "check" in entry:
        tau = np.broadcast_to(np.asarray(entry["check"], dtype=float), (d,))
        return f"check{[float(t) for t in tau]}", LossSpec.check(tau)
    raise UsageError(f"unsupported loss entry {entry!r}")


def _functionals(spec: dict, names: list) -> dict:
    out = {name: Functional.coordinate(j, name) for j, name in enumerate(names)}
    for name, coefs in spec.get("functionals", {}).items():
        c = np.asarray(coefs, dtype=float)
        if c.size != len(names):
            raise UsageError(f"functional {name!r} needs {len(names)} coefficients")
        out[name] = Functional.linear(c, name=name)
    return out


def _interval_dict(report) -> dict:
    return {"lo": report.lo, "hi": report.hi, "level": report.level,
            "information_equality_asserted": report.information_equality_asserted,
            "warnings": report.warnings}


def cmd_estimate(cfg: RunConfig) -> EstimationReport:
    with stage("load"):
        data = load_csv(cfg.data, layout=cfg.layout) if cfg.data else None
    with stage("criterion"):
        built = build_criterion(cfg.criterion, data, cfg.tolerant)
    with stage("sampling"):
        chain = run_pooled(cfg.sampler, built.criterion, built.start, cfg.seed, cfg.chains)
    with stage("estimation"):
        n = built.criterion.n
        points = {}
        for entry in cfg.losses:
            label, loss = _loss_spec(entry, chain.dim)
            est = risk_minimizer(chain, loss, n=n)
            points[label] = {"theta_hat": dict(zip(built.names, est.theta_hat.tolist())),
                             "mc_se": dict(zip(built.names, est.mc_se.tolist()))}
    with stage("inference"):
        alpha = _check_prob(cfg.intervals.get("alpha", 0.10), "alpha")
        methods = cfg.intervals.get("methods", ["quantile", "sandwich"])
        info_eq = bool(cfg.intervals.get("information_equality", built.information_equality))
        Omega = built.omega(chain) if "sandwich" in methods else None
        intervals = {}
        for name, f in _functionals(cfg.intervals, built.names).items():
            per = {}
            if "quantile" in methods:
                per["quantile"] = _interval_dict(quantile_interval(chain, f, alpha, info_eq))
            if "sandwich" in methods:
                per["sandwich"] = _interval_dict(sandwich_from_chain(chain, Omega, f, alpha, n))
            intervals[name] = per
    with stage("report"):
        diagnostics = {
            "acceptance_rates": chain.acceptance_rates.tolist(),
            "final_scales": chain.final_scales.tolist(),
            "draws": chain.B,
            "chains": cfg.chains,
        }
        report = EstimationReport(points, intervals, diagnostics, provenance(cfg))
        report.check()
        if cfg.chain_out:
            save_chain(chain, cfg.chain_out, cfg.chain_format)
        if cfg.out:
            Path(cfg.out).write_text(report.to_json())
    report.chain = chain
    return report


def cmd_montecarlo(cfg: RunConfig):
    mc = dict(cfg.montecarlo)
    mc.setdefault("seed", cfg.seed)
    mc.setdefault("tolerant", cfg.tolerant)
    with stage("montecarlo"):
        try:
            spec = ReplicationSpec(**mc)
        except TypeError as exc:
            raise UsageError(f"bad montecarlo config: {exc}") from None
        table = run_replications(spec)
    if cfg.out:
        with stage("report"):
            write_table(table, cfg.out)
    return table


def _var_sampler_kwargs(sampler: dict, tolerant: bool) -> dict:
    kw = {"tolerant": tolerant}
    for key, cast in (("n_keep", int), ("n_burn", int), ("adapt_every", int),
                      ("init_scale", float)):
        if key in sampler:
            kw[key] = cast(sampler[key])
    if "half_width" in sampler.get("space", {}):
        kw["half_width"] = float(sampler["space"]["half_width"])
    return kw


def cmd_var(cfg: RunConfig) -> dict:
    """Two-step VaR estimation over a grid of quantile levels."""
    from . import var as varmod

    v = cfg.var
    with stage("load"):
        if not cfg.data:
            raise UsageError("var needs --data")
        y_col = v.get("y", "y")
        x_cols = list(v.get("x", []))
        data = load_csv(cfg.data, [y_col] + [c for c in x_cols if c != y_col],
                        layout="time-series")
        s = int(v.get("s", 100))
        if data.n < s + varmod.MIN_EXTRA_ROWS:
            raise DataTooShortError(
                f"need at least s + {varmod.MIN_EXTRA_ROWS} = {s + varmod.MIN_EXTRA_ROWS} rows,"
                f" got {data.n}")
    taus = [_check_prob(t, "tau") for t in v.get("taus", [0.2, 0.4, 0.6, 0.8])]
    alpha = _check_prob(v.get("alpha", 0.10), "alpha")
    recursive = bool(v.get("recursive", True))
    refit = bool(v.get("refit_shifted", True))
    C = float(v.get("bandwidth_C", 1.0))
    model = VarModel(data, y_col, x_cols, s, recursive, bool(v.get("intercept", True)))
    names = (["const"] if model.intercept else []) + x_cols + (["rho"] if recursive else [])
    kw = _var_sampler_kwargs(cfg.sampler, cfg.tolerant)

    coef_rows, fits, diag = [], {}, {}
    for i, tau in enumerate(taus):
        with stage(f"var tau={tau}"):
            fit = varmod.two_step(model, tau, alpha, C, refit, seed=cfg.seed, replication=i, **kw)
        fits[tau] = fit
        mean1 = fit.step1.draws.mean(axis=0)
        mean2 = fit.step2.draws.mean(axis=0)
        for j, name in enumerate(names):
            iv = fit.step1_intervals[j]
            coef_rows.append({"tau": tau, "step": 1, "param": name, "mean": float(mean1[j]),
                              "lo": iv.lo, "hi": iv.hi, "method": "sandwich"})
        for j, name in enumerate(names):
            lo, med, hi = fit.step2_quantiles[:, j]
            coef_rows.append({"tau": tau, "step": 2, "param": name, "mean": float(mean2[j]),
                              "median": float(med), "lo": float(lo), "hi": float(hi),
                              "method": "quantile"})
        diag[tau] = {"acceptance_step1": fit.step1.acceptance_rates.tolist(),
                     "acceptance_step2": fit.step2.acceptance_rates.tolist(),
                     "weights_floored": fit.weights_floored}

    grid = varmod.surface(model, fits)
    h = default_bandwidth(model.n_eff, C)
    result = {"coefficients": coef_rows, "bandwidth": h, "bandwidth_C": C,
              "bandwidth_rule": "h = C * n^(-1/3); C set in config",
              "refit_shifted": refit, "fits": diag,
              "quantile_crossings": varmod.crossings(grid, s),
              "provenance": provenance(cfg)}
    if cfg.out:
        with stage("report"):
            out = Path(cfg.out)
            out.mkdir(parents=True, exist_ok=True)
            (out / "var_report.json").write_text(json.dumps(result, indent=2, sort_keys=True))
            with (out / "coefficients.csv").open("w") as fh:
                cols = ["tau", "step", "param", "mean", "median", "lo", "hi", "method"]
                fh.write(",".join(cols) + "\n")
                for row in coef_rows:
                    fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
            with (out / "surface.csv").open("w") as fh:
                fh.write("t,tau,q\n")
                for k, tau in enumerate(sorted(fits)):
                    for t in range(s, data.n):
                        fh.write(f"{t},{tau},{grid[k, t]!r}\n")
    result["surface"] = {tau: grid[k] for k, tau in enumerate(sorted(fits))}
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="quasibayes", description="Laplace-type estimation via MCMC")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("estimate", "montecarlo", "var"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--data")
        p.add_argument("--out")
        p.add_argument("--chains", type=int)
        p.add_argument("--tolerant", action="store_true", default=None)
    return parser


def load_config(args) -> RunConfig:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from None
    try:
        cfg = RunConfig.from_dict(raw, args.command)
    except TypeError as exc:
        raise UsageError(str(exc)) from None
    for key in ("seed", "data", "out", "chains", "tolerant"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.chains < 1:
        raise UsageError("--chains must be >= 1")
    return cfg


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (SchemaError, DataValidationError, FileNotFoundError)):
        return EXIT_DATA
    if isinstance(exc, (CriterionEvaluationError, StartupError, InvalidStateError, DomainError)):
        return EXIT_NUMERICAL
    if isinstance(exc, (UsageError, InvalidArgumentError, KeyError)):
        return EXIT_USAGE
    if isinstance(exc, (QuasiBayesError, np.linalg.LinAlgError, FloatingPointError)):
        return EXIT_NUMERICAL
    return EXIT_USAGE


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        runner = {"estimate": cmd_estimate, "montecarlo": cmd_montecarlo, "var": cmd_var}
        result = runner[cfg.command](cfg)
    except (QuasiBayesError, FileNotFoundError, KeyError, np.linalg.LinAlgError) as exc:
        where = getattr(exc, "stage", None)
        prefix = f"[{where}] " if where else ""
        print(f"quasibayes: {prefix}{type(exc).__name__}: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    if cfg.command == "montecarlo" and not cfg.out:
        from .montecarlo import format_table
        sys.stdout.write(format_table(result))
    elif cfg.command == "estimate" and not cfg.out:
        sys.stdout.write(result.to_json() + "\n")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
