import json
import math
import shutil

import numpy as np
import pytest

from sagnacsim.cli import main
from sagnacsim.io import fixture_path, load_density, write_counts
from sagnacsim.measurement import AnalyzerSetting, CoincidenceRecord
from sagnacsim.chsh import chsh_settings
from sagnacsim.states import bell_density, fidelity


@pytest.fixture
def bundle_dir(tmp_path):
    dst = tmp_path / "bundle"
    shutil.copytree(fixture_path("bundle"), dst)
    return dst


def _report(path):
    return json.loads(path.read_text())


def test_simulate_requires_seed(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["simulate", "--out", str(tmp_path / "b")])
    assert exc.value.code == 2


def test_noiseless_ideal_bundle(tmp_path):
    src = tmp_path / "src.json"
    src.write_text(json.dumps({"params": {"dark_rate": 0.0}}))
    out = tmp_path / "b"
    assert main(["simulate", "--seed", "1", "--out", str(out), "--source", str(src),
                 "--noiseless"]) == 0
    assert main(["report-all", "--bundle", str(out), "--seed", "1", "--mc-trials", "100",
                 "--bootstrap", "100", "--out", str(tmp_path / "r.json")]) == 0
    rep = _report(tmp_path / "r.json")
    assert rep["visibility"]["HV"]["V"] == pytest.approx(1, abs=1e-9)
    assert rep["visibility"]["PM"]["V"] == pytest.approx(1, abs=1e-9)
    assert rep["chsh"]["abs_S"] == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    m = rep["tomography"]["metrics"]
    assert m["concurrence"] == pytest.approx(1, abs=1e-4)
    assert m["fidelity"] == pytest.approx(1, abs=1e-6)
    assert m["purity"] == pytest.approx(1, abs=1e-4)


def test_report_all_fixture_bundle(tmp_path):
    out = tmp_path / "r.json"
    text = tmp_path / "r.txt"
    assert main(["report-all", "--seed", "7", "--out", str(out), "--text", str(text)]) == 0
    rep = _report(out)
    assert all(row["within"] for row in rep["table"])
    prov = rep["provenance"]
    assert prov["seed"] == 7 and prov["version"]
    assert set(prov["input_sha256"]) >= {"source", "chsh", "tomography", "published_rho"}
    assert rep["brightness"]["delta_lambda"] == pytest.approx(0.368)
    assert rep["brightness"]["delta_lambda_printed_nm"] == 0.4
    assert "abs_S" in text.read_text()


def test_missing_tomography_file_names_stage(bundle_dir, tmp_path, caplog):
    (bundle_dir / "tomography.csv").unlink()
    code = main(["report-all", "--bundle", str(bundle_dir), "--seed", "1",
                 "--out", str(tmp_path / "r.json")])
    assert code == 2
    assert "[tomography]" in caplog.text


def test_stage_numerical_error_exit_code(bundle_dir, tmp_path):
    zeros = [CoincidenceRecord(a, b, 0, 0, 0, 1.0) for a, b in chsh_settings()]
    write_counts(bundle_dir / "chsh.csv", zeros)
    code = main(["report-all", "--bundle", str(bundle_dir), "--seed", "1",
                 "--out", str(tmp_path / "r.json")])
    assert code == 3


def test_chsh_command(tmp_path):
    rep = tmp_path / "c.json"
    inp = fixture_path("bundle") / "chsh.csv"
    assert main(["chsh", "--input", str(inp), "--angles", "0,45,22.5,67.5", "--mc-trials", "500",
                 "--seed", "3", "--coinc-window", "3e-8", "--report", str(rep)]) == 0
    r = _report(rep)
    assert r["abs_S"] == pytest.approx(2.684, abs=0.05)
    assert r["dS_montecarlo"] == pytest.approx(r["dS"], rel=0.1)
    # seed is mandatory for Monte-Carlo
    assert main(["chsh", "--input", str(inp), "--mc-trials", "500"]) == 2


def test_chsh_bad_input_exit_codes(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nonsense\n")
    assert main(["chsh", "--input", str(bad)]) == 2
    assert main(["chsh", "--input", str(tmp_path / "missing.csv")]) == 2
    zeros = [CoincidenceRecord(a, b, 0, 0, 0, 1.0) for a, b in chsh_settings()]
    write_counts(tmp_path / "z.csv", zeros)
    assert main(["chsh", "--input", str(tmp_path / "z.csv")]) == 3


def test_visibility_command(tmp_path):
    inp = fixture_path("bundle") / "visibility_hv.csv"
    rep, plot = tmp_path / "v.json", tmp_path / "plot.csv"
    assert main(["visibility", "--input", str(inp), "--coinc-window", "3e-8", "--bootstrap", "200",
                 "--seed", "1", "--plot-out", str(plot), "--report", str(rep)]) == 0
    r = _report(rep)
    assert r["V"] == pytest.approx(0.989, abs=3 * r["dV"])
    assert "fit" in r and "dV_bootstrap" in r
    assert len(plot.read_text().splitlines()) == 17
    assert main(["visibility", "--input", str(inp), "--bootstrap", "10"]) == 2


def test_tomo_and_metrics_commands(tmp_path):
    inp = fixture_path("bundle") / "tomography.csv"
    rho_path, rep = tmp_path / "rho.json", tmp_path / "t.json"
    assert main(["tomo", "--input", str(inp), "--set", "james16", "--likelihood", "poisson",
                 "--target", "psi-minus", "--coinc-window", "3e-8",
                 "--out", str(rho_path), "--report", str(rep)]) == 0
    rho = load_density(rho_path)
    assert np.linalg.eigvalsh(rho).min() >= -1e-10
    assert fidelity(rho, bell_density("psi-minus")) == pytest.approx(_report(rep)["metrics"]["fidelity"])
    assert main(["tomo", "--input", str(inp), "--set", "bogus"]) == 2
    mrep = tmp_path / "m.json"
    assert main(["metrics", "--input", str(fixture_path("published_rho_ml.json")),
                 "--report", str(mrep)]) == 0
    m = _report(mrep)
    assert m["concurrence"] == pytest.approx(0.951, abs=0.02)
    assert m["fidelity"] == pytest.approx(0.9743, abs=0.02)
    assert m["purity"] == pytest.approx(0.953, abs=0.02)
    assert m["projection"]["flagged"]


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--seed", "5", "--out", str(tmp_path / name)]) == 0
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


def test_fixture_bundle_is_regenerable(tmp_path):
    # the packaged bundle is exactly the documented simulate invocation
    fx = fixture_path("")
    proj = tmp_path / "pub.json"
    from sagnacsim.io import save_density
    from sagnacsim.report import published_state
    save_density(proj, published_state())
    out = tmp_path / "bundle"
    assert main(["simulate", "--seed", "2022", "--out", str(out), "--source",
                 str(fx / "published_source.json"), "--tomo-state", str(proj),
                 "--operating-point", str(fx / "published_operating_point.json"),
                 "--published-rho", str(fx / "published_rho_ml.json")]) == 0
    for f in fixture_path("bundle").iterdir():
        assert f.read_bytes() == (out / f.name).read_bytes(), f.name
