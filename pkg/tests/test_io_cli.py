import json
import subprocess
import sys
import time

import numpy as np
import pytest

from irtsae import io
from irtsae.cli import main
from irtsae.errors import RankError, SchemaError, ValidationError
from irtsae.fayherriot import AreaDesign
from irtsae.irt import ItemBank, LatentRegression, PlausibleValueSet, ResponseMatrix

TINY_TOML = """\
N = 200
D = 10
I = 8
R = 1
L = 2
burn_in = 20
thin = 2
em_max_iter = 200
f_d = 0.5
f_n = 0.3
"""


def write(path, text):
    path.write_text(text)
    return str(path)


def data_lines(path):
    return [line for line in open(path) if not line.startswith("#")]


@pytest.fixture
def fixture_csv(tmp_path):
    path = tmp_path / "areas.csv"
    io.write_area_csv(path, io.pisa_area_design())
    return path


class TestIngest:
    def test_fixture(self, fixture_csv):
        design = io.ingest_area_csv(fixture_csv)
        assert design.D == 55
        assert design.p == 2
        np.testing.assert_array_equal(design.X[:, 0], 1.0)

    def test_nonpositive_variance_names_row(self, tmp_path):
        path = write(tmp_path / "a.csv", "domain_id,gamma_hat,sigma2_d,x_1\nA,1,1,0\nB,2,0,1\nC,3,1,2\nD,3,1,5\n")
        with pytest.raises(ValueError, match="row 2") as info:
            io.ingest_area_csv(path)
        assert "sigma2_d" in str(info.value)

    def test_non_numeric_cell(self, tmp_path):
        path = write(tmp_path / "a.csv", "domain_id,gamma_hat,sigma2_d,x_1\nA,1,1,0\nB,two,1,1\nC,3,1,2\n")
        with pytest.raises(ValidationError, match="row 2, column 'gamma_hat'"):
            io.ingest_area_csv(path)

    def test_missing_column(self, tmp_path):
        path = write(tmp_path / "a.csv", "domain_id,gamma_hat,x_1\nA,1,0\nB,2,1\nC,3,2\n")
        with pytest.raises(SchemaError, match="sigma2_d"):
            io.ingest_area_csv(path)

    def test_unknown_column(self, tmp_path):
        path = write(tmp_path / "a.csv", "domain_id,gamma_hat,sigma2_d,weight\nA,1,1,0\nB,2,1,1\nC,3,1,2\n")
        with pytest.raises(SchemaError):
            io.ingest_area_csv(path)

    def test_rank_deficient(self, tmp_path):
        path = write(tmp_path / "a.csv", "domain_id,gamma_hat,sigma2_d,x_1,x_2\nA,1,1,0,0\nB,2,1,1,2\nC,3,1,2,4\nD,3,1,3,6\n")
        with pytest.raises(RankError):
            io.ingest_area_csv(path)


class TestRoundTrip:
    def test_area_design(self, tmp_path):
        rng = np.random.default_rng(0)
        X = np.column_stack([np.ones(7), rng.normal(size=(7, 2))])
        design = AreaDesign(X, rng.normal(500, 30, 7), rng.uniform(1, 20, 7), np.array([f"d{k}" for k in range(7)]))
        io.write_area_csv(tmp_path / "a.csv", design)
        back = io.ingest_area_csv(tmp_path / "a.csv")
        np.testing.assert_array_equal(back.X, design.X)
        np.testing.assert_array_equal(back.gamma_hat, design.gamma_hat)
        np.testing.assert_array_equal(back.sigma2, design.sigma2)
        assert list(back.domain_ids) == list(design.domain_ids)

    def test_responses(self, tmp_path):
        y = np.array([[1, 0, np.nan], [np.nan, 1, 1]])
        r = ResponseMatrix(y, np.array(["a", "b"]), np.array(["p1", "p2"]))
        io.write_responses(tmp_path / "r.csv", r)
        back = io.read_responses(tmp_path / "r.csv")
        np.testing.assert_array_equal(back.values, y)
        assert list(back.person_ids) == ["p1", "p2"]

    def test_bank_with_regression(self, tmp_path):
        bank = ItemBank([0.7, 1.9], [-1.25, 0.3], [0.0, 0.2])
        reg = LatentRegression([0.1, 0.45, -0.2], 0.63)
        io.write_item_bank(tmp_path / "b.csv", bank, reg)
        bank2, reg2 = io.read_item_bank(tmp_path / "b.csv")
        for attr in ("a", "b", "c"):
            np.testing.assert_array_equal(getattr(bank2, attr), getattr(bank, attr))
        np.testing.assert_array_equal(reg2.gamma, reg.gamma)
        assert reg2.sigma2 == reg.sigma2

    def test_pvs(self, tmp_path):
        draws = np.random.default_rng(1).normal(size=(4, 3))
        pvs = PlausibleValueSet(draws, np.array(["p1", "p2", "p3", "p4"]), np.array(["x", "x", "y", "y"]))
        io.write_pvs(tmp_path / "pv.csv", pvs)
        back = io.read_pvs(tmp_path / "pv.csv")
        np.testing.assert_array_equal(back.draws, draws)
        assert list(back.domain_of) == ["x", "x", "y", "y"]

    def test_bad_response_cell(self, tmp_path):
        path = write(tmp_path / "r.csv", "person_id,domain_id,item_1\np1,a,2\n")
        with pytest.raises(ValidationError, match="row 1"):
            io.read_responses(path)


class TestFixture:
    def test_integrity(self):
        rows = io.load_pisa_fixture()
        assert len(rows) == 55
        for r in rows:
            values = [getattr(r, f) for f in io.PisaFixtureRow.__dataclass_fields__ if f != "country"]
            assert all(np.isfinite(values))
            assert r.sigma2_d / (io.PISA_SIGMA2_U + r.sigma2_d) == pytest.approx(r.B_d, abs=0.005), r.country
            assert r.B_d + r.one_minus_B_d == pytest.approx(1.0, abs=1e-9)

    def _row(self, country):
        return next(r for r in io.replay_pisa_fixture() if r["country"] == country)

    def test_albania(self):
        r = self._row("Albania")
        assert round(r["gamma_P"]) == 413
        assert r["g1"] == pytest.approx(11.7606, rel=0.01)

    def test_vietnam(self):
        r = self._row("Vietnam")
        assert r["gamma_P"] == pytest.approx(494, abs=1)

    def test_turkey(self):
        r = self._row("Turkey")
        assert r["eer_pct"] == pytest.approx(0.9738, abs=0.02)
        assert r["dif_rel_pct"] == pytest.approx(1.5146, abs=0.05)


class TestCli:
    def test_fit_fh(self, fixture_csv, tmp_path):
        out = tmp_path / "fit.csv"
        assert main(["fit-fh", "--in", str(fixture_csv), "--method", "reml", "--out", str(out)]) == 0
        comments, header, rows = io.read_table(out)
        assert header == list(io.FIT_COLUMNS)
        assert len(rows) == 55
        assert any(c.startswith("sigma2_u:") for c in comments)
        assert any(c.startswith("manifest:") for c in comments)
        manifest = json.loads(io.RunManifest.path_for(out).read_text())
        assert manifest["seed"] == 0 and str(out) in manifest["outputs"]

    def test_fit_fh_at_published_variance(self, fixture_csv, tmp_path):
        out = tmp_path / "fit.csv"
        assert main(["fit-fh", "--in", str(fixture_csv), "--sigma2-u", "986.58", "--out", str(out)]) == 0
        _, header, rows = io.read_table(out)
        albania = dict(zip(header, next(r for r in rows if r[0] == "Albania")))
        assert float(albania["B"]) == pytest.approx(0.0119, abs=5e-5)

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_file(self, tmp_path):
        assert main(["fit-fh", "--in", str(tmp_path / "nope.csv")]) == 1

    def test_numerical_failure(self, tmp_path):
        x = 1e5 + np.arange(6) * 1e-2
        lines = ["domain_id,gamma_hat,sigma2_d,x_1"] + [f"d{k},{500 + k},{1 + k % 2},{float(v)!r}" for k, v in enumerate(x)]
        path = write(tmp_path / "a.csv", "\n".join(lines) + "\n")
        assert main(["fit-fh", "--in", path, "--out", str(tmp_path / "o.csv")]) == 2

    def test_simulate_smoke(self, tmp_path):
        cfg = write(tmp_path / "sim.toml", TINY_TOML)
        out = tmp_path / "sim.csv"
        t = time.perf_counter()
        assert main(["simulate", "--config", cfg, "--out", str(out), "--emit-plots"]) == 0
        assert time.perf_counter() - t < 10
        _, header, rows = io.read_table(out)
        assert header[:9] == ["missing_rate", "corr_level", "f_d", "f_n", "eerp_dir", "eerp_cal", "eerp_comp", "eerp_p", "sbr_p"]
        assert len(rows) == 1
        plots = list((tmp_path / "sim_plots").glob("cell_*.csv"))
        assert len(plots) == 1
        assert io.read_table(plots[0])[1] == ["replicate", "estimator", "metric", "value"]

    def test_manifest_determinism(self, tmp_path):
        cfg = write(tmp_path / "sim.toml", TINY_TOML + "seed = 4\n")
        a, b = tmp_path / "a" / "out.csv", tmp_path / "b" / "out.csv"
        for out in (a, b):
            out.parent.mkdir()
            assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
        assert a.read_bytes() == b.read_bytes()
        ma = json.loads(io.RunManifest.path_for(a).read_text())
        mb = json.loads(io.RunManifest.path_for(b).read_text())
        assert ma["config_hash"] == mb["config_hash"]

    def test_seed_precedence(self, tmp_path, monkeypatch):
        cfg = write(tmp_path / "sim.toml", TINY_TOML)
        monkeypatch.setenv(io.SEED_ENV, "11")
        outs = {}
        for name, extra in (("env", []), ("flag", ["--seed", "11"]), ("other", ["--seed", "12"])):
            out = tmp_path / f"{name}.csv"
            assert main(["simulate", "--config", cfg, "--out", str(out), *extra]) == 0
            outs[name] = data_lines(out)
            assert json.loads(io.RunManifest.path_for(out).read_text())["seed"] == int(extra[-1] if extra else 11)
        assert outs["env"] == outs["flag"]
        assert outs["env"] != outs["other"]

    def test_unknown_config_key(self, tmp_path):
        cfg = write(tmp_path / "sim.toml", TINY_TOML + "replicas = 3\n")
        assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o.csv")]) == 1

    def test_replay_and_report(self, tmp_path, capsys):
        out, areas = tmp_path / "replay.csv", tmp_path / "areas.csv"
        assert main(["replay-pisa", "--out", str(out), "--export-areas", str(areas)]) == 0
        _, header, rows = io.read_table(out)
        assert len(rows) == 55 and "mse_delta" in header
        assert io.ingest_area_csv(areas).D == 55
        assert main(["report", "--in", str(out), "--format", "md"]) == 0
        assert capsys.readouterr().out.count("\n| ") >= 55

    def test_pipeline(self, tmp_path):
        rng = np.random.default_rng(3)
        n, items, domains = 400, 12, 8
        bank = ItemBank(rng.uniform(0.7, 1.8, items), rng.uniform(-1.5, 1.5, items))
        dom = np.repeat([f"D{k}" for k in range(domains)], n // domains)
        z = rng.normal(size=(n, 1))
        theta = 0.1 * np.repeat(rng.normal(size=domains), n // domains) + 0.5 * z[:, 0] + rng.normal(0, 0.8, n)
        y = (rng.random((n, items)) < bank.prob(theta)).astype(float)
        y[rng.random(y.shape) < 0.1] = np.nan
        pids = np.array([f"p{k}" for k in range(n)])
        io.write_responses(tmp_path / "resp.csv", ResponseMatrix(y, dom, pids))
        io.write_table(tmp_path / "z.csv", ["person_id", "z_1"], [[p, v] for p, v in zip(pids, z[:, 0])])
        totals = [[d, n // domains, float(z[dom == d, 0].sum())] for d in dict.fromkeys(dom)]
        io.write_table(tmp_path / "pop.csv", ["domain_id", "N_d", "t_1"], [[d, 2 * N, 2 * t] for d, N, t in totals])
        io.write_table(tmp_path / "x.csv", ["domain_id", "x_1"], [[d, float(k)] for k, d in enumerate(dict.fromkeys(dom))])

        p = lambda name: str(tmp_path / name)  # noqa: E731
        assert main(["calibrate", "--responses", p("resp.csv"), "--covariates", p("z.csv"), "--out", p("bank.csv")]) == 0
        assert main(["pv", "--responses", p("resp.csv"), "--bank", p("bank.csv"), "--covariates", p("z.csv"),
                     "--burn-in", "50", "--thin", "5", "--seed", "1", "--out", p("pv.csv")]) == 0
        assert main(["combine", "--pv", p("pv.csv"), "--offset", "500", "--factor", "100", "--out", p("areas.csv")]) == 0
        assert main(["estimate", "--pv", p("pv.csv"), "--population", p("pop.csv"), "--person-covariates", p("z.csv"),
                     "--area-covariates", p("x.csv"), "--out", p("est.csv")]) == 0
        assert main(["fit-fh", "--in", p("areas.csv"), "--out", p("fit.csv")]) == 0
        _, header, rows = io.read_table(p("est.csv"))
        assert header == list(io.ESTIMATE_COLUMNS) and len(rows) == domains
        _, header, rows = io.read_table(p("fit.csv"))
        assert len(rows) == domains
        eblup = np.array([float(r[1]) for r in rows])
        assert np.all(np.abs(eblup - 500) < 60)

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "irtsae.cli", "replay-pisa", "--format", "csv"],
                              capture_output=True, text=True)
        assert proc.returncode == 0
        assert proc.stdout.count("\n") >= 56
