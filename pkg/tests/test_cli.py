import json

import numpy as np
import pytest

from levelset_abc import cli
from levelset_abc.cli import EXIT_INVALID, EXIT_IO, EXIT_NUMERICAL, EXIT_OK, load_config, main, parse_override
from levelset_abc.design import read_design_csv
from levelset_abc.errors import NumericalError
from levelset_abc.sampler import read_chain
from levelset_abc.surrogate import load_gp
from levelset_abc.targets import get_target

BASE = """
[target]
fn = "two_bump"
c = [0.6]
tol = [0.01]

[design]
n = 50
seed = 1

[sampler]
algorithm = "lsmcmc-mean"
n_iter = 3000
seed = 3
theta0 = [0.0, 0.0]

[proposal]
diag = [2.0, 2.0]

[diagnose]
pairs = [[1, 2]]
burn_in = 500
"""


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text(BASE)
    return p


def run(config, *args):
    return main([args[0], "-c", str(config), *args[1:]])


class TestConfig:
    def test_flattened_keys(self, config):
        cfg = load_config(str(config))
        assert cfg["target.fn"] == "two_bump"
        assert cfg["proposal.diag"] == [2.0, 2.0]

    @pytest.mark.parametrize(
        "text, expected",
        [("a.b=1", ("a.b", 1)), ("x=[1, 2.5]", ("x", [1, 2.5])), ("t.fn=two_bump", ("t.fn", "two_bump")), ("k=true", ("k", True))],
    )
    def test_override_parsing(self, text, expected):
        assert parse_override(text) == expected

    def test_override_wins(self, config):
        assert load_config(str(config), ["design.n=7"])["design.n"] == 7

    def test_bad_override(self, config):
        assert run(config, "design", "--set", "design.n") == EXIT_INVALID

    def test_malformed_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("target = [unclosed")
        assert main(["design", "-c", str(p)]) == EXIT_IO

    def test_missing_config_file(self, tmp_path):
        assert main(["design", "-c", str(tmp_path / "nope.toml")]) == EXIT_IO


class TestDesignCommand:
    def test_fifty_rows(self, config, tmp_path):
        assert run(config, "design") == EXIT_OK
        d = read_design_csv(tmp_path / "design.csv", get_target("two_bump").bounds)
        assert d.n == 50 and d.responses.shape == (50, 1)

    def test_zero_points(self, config, capsys):
        assert run(config, "design", "--set", "design.n=0") == EXIT_INVALID
        assert "design.n" in capsys.readouterr().err

    def test_deterministic(self, config, tmp_path):
        run(config, "design", "--set", "design.output=a.csv")
        run(config, "design", "--set", "design.output=b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_unknown_target(self, config):
        assert run(config, "design", "--set", "target.fn=nope") == EXIT_INVALID


class TestFitCommand:
    def test_fit_and_reload(self, config, tmp_path):
        assert run(config, "design") == EXIT_OK
        assert run(config, "fit") == EXIT_OK
        gp = load_gp(tmp_path / "model.json")
        d = read_design_csv(tmp_path / "design.csv", gp.bounds)
        pred = np.array([gp.mean_at(p) for p in d.points])
        assert np.max(np.abs(pred - d.responses[:, 0])) < 0.05
        again = load_gp(tmp_path / "model.json")
        assert again.mean_at([0.3, -0.2]) == pytest.approx(gp.mean_at([0.3, -0.2]), abs=1e-10)

    def test_missing_responses(self, config):
        assert run(config, "design", "--set", "design.evaluate=false") == EXIT_OK
        assert run(config, "fit") == EXIT_INVALID

    def test_missing_design(self, config):
        assert run(config, "fit", "--design", "absent.csv") == EXIT_IO

    def test_numerical_failure_exit_code(self, config, monkeypatch):
        run(config, "design")

        def boom(*a, **k):
            raise NumericalError("covariance matrix is not positive definite")

        monkeypatch.setattr(cli, "fit_gp", boom)
        assert run(config, "fit") == EXIT_NUMERICAL

    def test_multi_response_writes_one_model_each(self, config, tmp_path):
        run(config, "design", "--set", "target.fn=synthetic_breach", "--set", "design.n=20")
        assert run(config, "fit", "--set", "target.fn=synthetic_breach", "--set", "fit.starts=2") == EXIT_OK
        assert sorted(p.name for p in tmp_path.glob("model.*.json")) == [
            "model.duration.json", "model.max_flow.json", "model.time_to_peak.json"
        ]


class TestSampleCommand:
    @pytest.mark.parametrize(
        "extra",
        [
            [],
            ["sampler.algorithm=abc-hard", "sampler.epsilon=0.2"],
            ["sampler.algorithm=mh"],
            ["sampler.algorithm=generalized", "target.c=[0, 0]", "target.tol=1"],
            ["proposal.mode=componentwise"],
        ],
    )
    def test_algorithms(self, config, tmp_path, extra):
        sets = [a for e in extra for a in ("--set", e)]
        assert run(config, "sample", *sets) == EXIT_OK
        ch = read_chain(tmp_path / "chain.csv")
        assert ch.N == 3001
        meta = json.loads((tmp_path / "chain.json").read_text())
        assert meta["seed"] == 3 and meta["n_evals"] == ch.n_evals

    def test_smoothed_on_surrogate(self, config, tmp_path):
        run(config, "design")
        run(config, "fit")
        assert run(config, "sample", "--set", "sampler.algorithm=lsmcmc-smoothed", "--set", "target.fn=surrogate:model.json") == EXIT_OK
        assert read_chain(tmp_path / "chain.csv").algorithm == "lsmcmc-smoothed"

    @pytest.mark.parametrize(
        "extra",
        [
            ["sampler.theta0=[9, 9]"],
            ["proposal.diag=[1, 1, 1]"],
            ["target.c=[0.6, 0.1]"],
            ["sampler.algorithm=abc-hard"],
            ["sampler.algorithm=lsmcmc-smoothed"],
            ["sampler.algorithm=hmc"],
            ["sampler.n_iter=0"],
            ["target.tol=[0]"],
        ],
    )
    def test_validation_errors(self, config, tmp_path, extra):
        sets = [a for e in extra for a in ("--set", e)]
        assert run(config, "sample", *sets) == EXIT_INVALID
        assert not (tmp_path / "chain.csv").exists()

    def test_rerun_identical(self, config, tmp_path):
        run(config, "sample", "--set", "output.chain=a.csv")
        run(config, "sample", "--set", "output.chain=b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


class TestDiagnoseCommand:
    def test_report(self, config, tmp_path):
        run(config, "sample")
        assert run(config, "diagnose") == EXIT_OK
        report = json.loads((tmp_path / "chain.report.json").read_text())
        assert set(report["correlations"]) == {"1,2"}
        assert 0.0 <= report["summary"]["coverage_2sigma"][0] <= 1.0
        hist = (tmp_path / "chain.report.response_1.hist.csv").read_text().splitlines()
        assert hist[0] == "value_bin_lo,value_bin_hi,count"

    def test_ks_for_generalized(self, config, tmp_path):
        sets = ["--set", "sampler.algorithm=generalized", "--set", "target.c=[0, 0]", "--set", "target.tol=1"]
        run(config, "sample", *sets)
        assert run(config, "diagnose", *sets, "--set", "diagnose.ks=true") == EXIT_OK
        report = json.loads((tmp_path / "chain.report.json").read_text())
        assert len(report["ks"]) == 2

    def test_empty_chain(self, config, tmp_path):
        (tmp_path / "empty.csv").write_text("")
        assert run(config, "diagnose", "--chain", str(tmp_path / "empty.csv")) == EXIT_IO

    def test_burn_in_too_large(self, config):
        run(config, "sample")
        assert run(config, "diagnose", "--set", "diagnose.burn_in=5000") == EXIT_INVALID

    def test_bad_pair(self, config):
        run(config, "sample")
        assert run(config, "diagnose", "--set", "diagnose.pairs=[[1, 3]]") == EXIT_INVALID


class TestDemoCommand:
    def test_unknown_lists_available(self, tmp_path, capsys):
        assert main(["demo", "fig99", "-o", str(tmp_path / "x")]) == EXIT_INVALID
        err = capsys.readouterr().err
        for name in ("fig5", "fig6", "fig7", "fig10-12", "multiresponse-synthetic"):
            assert name in err

    def test_fig6(self, tmp_path):
        out = tmp_path / "fig6"
        assert main(["demo", "fig6", "-o", str(out)]) == EXIT_OK
        a, b = read_chain(out / "chain_tol_0.01.csv"), read_chain(out / "chain_tol_0.1.csv")
        assert a.meta["target"]["tol_diag"] == [pytest.approx(1e-4)]
        assert b.meta["target"]["tol_diag"] == [pytest.approx(1e-2)]
        assert a.meta["seed"] == b.meta["seed"] and a.meta["theta0"] == b.meta["theta0"]
        assert a.meta["proposal"] == b.meta["proposal"]
        # diagnose the tight-tolerance chain: |f - 0.6| <= 0.02 for most rows
        assert main(["diagnose", "--chain", str(out / "chain_tol_0.01.csv")]) == EXIT_OK
        cov = json.loads((out / "chain_tol_0.01.report.json").read_text())["summary"]["coverage_2sigma"][0]
        assert 0.90 <= cov <= 0.99

    def test_fig7(self, tmp_path):
        out = tmp_path / "fig7"
        assert main(["demo", "fig7", "-o", str(out)]) == EXIT_OK
        small, large = read_chain(out / "chain_pro_0.2.csv"), read_chain(out / "chain_pro_2.csv")
        assert small.meta["proposal"]["pro_diag"] == [0.2, 0.2] and large.meta["proposal"]["pro_diag"] == [2.0, 2.0]
        assert small.n_iter == large.n_iter == 5000

    def test_fig5(self, tmp_path):
        out = tmp_path / "fig5"
        assert main(["demo", "fig5", "-o", str(out)]) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        bumps = report["chains"]["chain_smoothed"]["bumps"]
        assert bumps["local_2_2"]["fraction"] > 0.05 and bumps["global_m2_m2"]["fraction"] > 0.05
        assert bumps["local_2_2"]["mean_radial_dev"] > bumps["global_m2_m2"]["mean_radial_dev"]
        meta = read_chain(out / "chain_smoothed.csv").meta
        assert meta["target"] == {"c": [0.6], "tol_diag": [0.1]} and meta["proposal"]["pro_diag"] == [3.0, 3.0]

    def test_fig10_12_smoke(self, tmp_path):
        out = tmp_path / "g"
        assert main(["demo", "fig10-12", "-o", str(out), "--set", "demo.n_iter=100"]) == EXIT_OK
        meta = json.loads((out / "chain.json").read_text())
        assert meta["n_evals"] + meta["n_out_of_support"] == 100 * 100
        assert meta["proposals_per_iter"] == 100
        assert (out / "hist_response.csv").exists()

    def test_multiresponse(self, tmp_path):
        out = tmp_path / "m"
        assert main(["demo", "multiresponse-synthetic", "-o", str(out), "--set", "demo.n_iter=4000"]) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        ch = report["chains"]
        assert ch["chain_three_overlap"]["summary"]["n_unique"] < ch["chain_flow_only"]["summary"]["n_unique"]
        twin = ch["chain_twin_compromise"]
        assert twin["theta_1_expected"] == pytest.approx(0.32)
        assert set(report["sobol"]) == {"max_flow", "time_to_peak", "duration"}

    def test_bad_demo_option(self, tmp_path):
        assert main(["demo", "fig6", "-o", str(tmp_path / "x"), "--set", "demo.n_iter=-5"]) == EXIT_INVALID
