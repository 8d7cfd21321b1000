import json

import numpy as np
import pytest

from quasibayes import cli
from quasibayes.dataset import sample_path, write_csv
from quasibayes.sampler import load_chain, make_rng
from quasibayes.var import gen_ar_location

QUICK = {"n_keep": 2000, "n_burn": 1000}


def _run(tmp_path, config, *extra):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    return cli.main([config.get("command", "estimate"), "--config", str(path), *extra])


def test_quadratic_smoke(tmp_path):
    out = tmp_path / "report.json"
    config = {"criterion": {"kind": "quadratic", "center": [1.0, -1.0], "n": 100},
              "sampler": {"n_keep": 20_000, "n_burn": 2000}}
    assert _run(tmp_path, config, "--out", str(out), "--seed", "3") == 0
    report = json.loads(out.read_text())
    point = report["point_estimates"]["squared"]
    for name, truth in (("theta_1", 1.0), ("theta_2", -1.0)):
        assert abs(point["theta_hat"][name] - truth) <= 3 * point["mc_se"][name]
    assert report["provenance"]["seed"] == 3
    assert len(report["provenance"]["config_hash"]) == 64
    iv = report["intervals"]["theta_1"]
    assert iv["quantile"]["lo"] < 1.0 < iv["quantile"]["hi"]


def test_ivqr_on_bundled_sample(tmp_path):
    out = tmp_path / "report.json"
    config = {"data": str(sample_path()),
              "criterion": {"kind": "ivqr", "d": ["d1", "d2", "d3"], "tau": 0.5},
              "sampler": QUICK}
    assert _run(tmp_path, config, "--out", str(out)) == 0
    theta = json.loads(out.read_text())["point_estimates"]["squared"]["theta_hat"]
    for name in ("d1", "d2", "d3"):
        assert abs(theta[name]) < 0.25


def test_cue_config_reproduces_optimal_gmm_chain(tmp_path):
    chains = {}
    for label, crit in (("gel", {"kind": "gel", "divergence": "cue", "moments": "linear-iv"}),
                        ("gmm", {"kind": "gmm", "weighting": "optimal"})):
        crit.update({"d": ["d1"], "z": ["d1", "d2"]})
        config = {"data": str(sample_path()), "criterion": crit,
                  "sampler": {"n_keep": 500, "n_burn": 200},
                  "chain_out": str(tmp_path / f"{label}.bin"), "intervals": {"methods": []}}
        assert _run(tmp_path, config) == 0
        chains[label] = load_chain(tmp_path / f"{label}.bin")
    np.testing.assert_allclose(chains["gel"].draws, chains["gmm"].draws, rtol=1e-10)


def test_multiple_chains_pool(tmp_path):
    out = tmp_path / "r.json"
    config = {"criterion": {"kind": "quadratic", "center": [0.0]},
              "sampler": {"n_keep": 300, "n_burn": 100}}
    assert _run(tmp_path, config, "--chains", "3", "--out", str(out)) == 0
    assert json.loads(out.read_text())["diagnostics"]["draws"] == 900


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("y,d1\n1,2\n3,NA\n")
    ivqr = {"criterion": {"kind": "ivqr", "d": ["d1"]}, "sampler": QUICK}
    assert _run(tmp_path, dict(ivqr, data=str(bad))) == cli.EXIT_DATA
    assert "line 3" in capsys.readouterr().err
    assert _run(tmp_path, dict(ivqr, data=str(tmp_path / "missing.csv"))) == cli.EXIT_DATA
    assert _run(tmp_path, {"criterion": {"kind": "quadratic", "center": [0.0]},
                           "bogus": 1}) == cli.EXIT_USAGE
    assert _run(tmp_path, {"criterion": {"kind": "nope"}}) == cli.EXIT_USAGE
    outside = {"criterion": {"kind": "quadratic", "center": [0.0]},
               "sampler": {"init": [50.0], "n_keep": 10, "n_burn": 0}}
    assert _run(tmp_path, outside) == cli.EXIT_NUMERICAL
    assert "[sampling]" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        cli.main(["estimate"])
    assert info.value.code == cli.EXIT_USAGE


def test_montecarlo_command(tmp_path):
    config = {"command": "montecarlo",
              "montecarlo": {"dgp": "conjugate-gaussian", "n": 100, "R": 3,
                             "n_keep": 300, "n_burn": 200}}
    out = tmp_path / "mc"
    assert _run(tmp_path, config, "--out", str(out)) == 0
    table = json.loads((out / "table.json").read_text())
    assert table["spec"]["R"] == 3
    assert (out / "table.txt").exists() and (out / "estimates.csv").exists()


def _ar_csv(tmp_path, n):
    path = tmp_path / "returns.csv"
    write_csv(gen_ar_location(n, make_rng(4)), path)
    return path


def test_var_command(tmp_path):
    config = {"command": "var", "data": str(_ar_csv(tmp_path, 400)),
              "var": {"x": ["y"], "taus": [0.25, 0.5], "recursive": True},
              "sampler": {"n_keep": 400, "n_burn": 400}}
    out = tmp_path / "var"
    assert _run(tmp_path, config, "--out", str(out)) == 0
    report = json.loads((out / "var_report.json").read_text())
    assert report["refit_shifted"] is True
    assert report["bandwidth"] == pytest.approx(300 ** (-1 / 3))
    rows = (out / "coefficients.csv").read_text().splitlines()
    assert rows[0] == "tau,step,param,mean,median,lo,hi,method"
    assert len(rows) == 1 + 2 * 2 * 3
    surface = (out / "surface.csv").read_text().splitlines()
    assert len(surface) == 1 + 2 * 300


def test_var_too_short(tmp_path):
    config = {"command": "var", "data": str(_ar_csv(tmp_path, 120)), "var": {"x": ["y"]}}
    assert _run(tmp_path, config) == cli.EXIT_DATA
