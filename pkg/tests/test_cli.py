import csv
import json

import numpy as np
import pytest

from cvcluster.cli import main
from cvcluster.experiment import preset
from cvcluster.gaussian import shot_normalized, vacuum_covariance
from cvcluster.io import write_matrix_bin


@pytest.fixture(scope="module")
def demo(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert main(["simulate", "--preset", "demo", "--out", str(out)]) == 0
    assert main(["analyze", str(out)]) == 0
    return out


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


class TestSimulate:
    def test_manifest(self, demo):
        m = json.loads((demo / "manifest.json").read_text())
        cfg = preset("demo")
        signal = [f for f in m["files"] if f["role"] == "signal" and f["eom"] == "on"]
        assert len(signal) == cfg.runs["signal"] * 3
        assert {f["label"] for f in signal} == {"XX", "PP", "XP"}
        for f in m["files"]:
            assert (demo / f["path"]).exists()
            assert len(f["sha256"]) == 64
        assert json.loads((demo / "config.json").read_text())["name"] == "demo"

    def test_zero_runs_gives_shot_only(self, tmp_path):
        assert main(["simulate", "--preset", "demo", "--runs", "0", "--out", str(tmp_path)]) == 0
        m = json.loads((tmp_path / "manifest.json").read_text())
        assert m["files"]
        assert {f["role"] for f in m["files"]} == {"shot"}

    def test_shot_only_manifest_is_zero_db(self, tmp_path):
        main(["simulate", "--preset", "demo", "--runs", "0", "--out", str(tmp_path)])
        assert main(["analyze", str(tmp_path)]) == 0
        rows = read_csv(tmp_path / "analysis" / "squeezing_spectrum.csv")
        vals = np.array([float(r["shot_db"]) for r in rows])
        # Two 2 ms shot runs: about 0.15 dB per-bin scatter.
        assert np.all(np.abs(vals) < 0.6)

    def test_config_and_preset_conflict(self, tmp_path, capsys):
        cfgfile = tmp_path / "c.json"
        cfgfile.write_text(preset("demo").to_json())
        assert main(["simulate", "--config", str(cfgfile), "--preset", "demo", "--out", str(tmp_path)]) == 2

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"version": 1}')
        assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
        assert "invalid config" in capsys.readouterr().err


class TestAnalyze:
    def test_outputs(self, demo):
        out = demo / "analysis"
        for name in ("covariance.cvl", "covariance.csv", "nullifiers.csv", "squeezing_spectrum.csv",
                     "fig_curves.csv", "lockin_phases.csv", "graph.json", "analysis.json"):
            assert (out / name).exists(), name

    def test_nullifiers_both_methods(self, demo):
        rows = read_csv(demo / "analysis" / "nullifiers.csv")
        assert {r["method"] for r in rows} == {"matrix", "lockin"}
        assert list(rows[0]) == ["mode", "mode_center_hz", "epr_x_db", "epr_p_db", "null_x_db", "null_p_db", "method"]

    def test_four_curves(self, demo):
        rows = read_csv(demo / "analysis" / "fig_curves.csv")
        for col in ("red_x_db", "blue_x_db", "gold_x_db", "circle_x_db"):
            assert col in rows[0]
        gold = np.array([float(r["gold_x_db"]) for r in rows])
        assert abs(np.median(gold) + 3.0) < 0.5

    def test_delay_estimated(self, demo):
        summary = json.loads((demo / "analysis" / "analysis.json").read_text())
        assert summary["delay_source"] == "estimated"
        assert summary["delay_s"] == pytest.approx(10.4e-9, abs=0.5e-9)

    def test_missing_xp_names_sector(self, demo, tmp_path, capsys):
        m = json.loads((demo / "manifest.json").read_text())
        m["files"] = [f for f in m["files"] if not (f["label"] == "XP" and f["eom"] == "on")]
        for f in m["files"]:
            f["path"] = str(demo / f["path"])
        (tmp_path / "config.json").write_text((demo / "config.json").read_text())
        (tmp_path / "manifest.json").write_text(json.dumps(m))
        assert main(["analyze", str(tmp_path)]) == 2
        assert "XpPc" in capsys.readouterr().err

    def test_missing_manifest(self, tmp_path):
        assert main(["analyze", str(tmp_path)]) == 2


class TestTheoryAndVerify:
    def test_theory_3d_offsets(self, tmp_path, capsys):
        assert main(["theory", "--preset", "fig3-3d", "--out", str(tmp_path)]) == 0
        summary = json.loads((tmp_path / "theory.json").read_text())
        assert summary["edge_offsets"] == [1, 3, 9]
        for name in ("theory_covariance.cvl", "nullifiers.csv", "V.csv", "U.csv", "error_vector.csv"):
            assert (tmp_path / name).exists()

    def test_theory_m0_is_epr_only(self, tmp_path):
        d = preset("demo").to_dict()
        for t in d["drive"]["tones"]:
            t["mod_index"] = 0.0
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps(d))
        assert main(["theory", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
        summary = json.loads((tmp_path / "t" / "theory.json").read_text())
        assert summary["edge_offsets"] == []
        assert summary["nullifier_median_db"]["x"] == pytest.approx(summary["epr_median_db"]["x"])

    def test_verify_analytic_passes(self, tmp_path):
        main(["theory", "--preset", "fig3-3d", "--out", str(tmp_path)])
        rc = main(["verify", str(tmp_path / "theory_covariance.cvl"), "--preset", "fig3-3d", "--out", str(tmp_path / "v")])
        assert rc == 0
        rep = json.loads((tmp_path / "v" / "structure.json").read_text())
        assert rep["extraneous"] == []
        assert (tmp_path / "v" / "graph.dot").exists()

    def test_verify_vacuum_fails(self, tmp_path):
        cfg = preset("demo")
        path = tmp_path / "vac.cvl"
        write_matrix_bin(path, shot_normalized(vacuum_covariance(cfg.layout)), cfg.layout, "shot-normalized")
        assert main(["verify", str(path), "--preset", "demo"]) == 1

    def test_verify_wrong_shape(self, tmp_path):
        path = tmp_path / "m.cvl"
        write_matrix_bin(path, np.eye(8))
        assert main(["verify", str(path), "--preset", "demo"]) == 2


def test_presets_listing(capsys):
    assert main(["presets"]) == 0
    assert "fig3-3d" in capsys.readouterr().out


def test_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["simulate", "--preset", "demo", "--out", str(d)]) == 0
        assert main(["analyze", str(d)]) == 0
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel
