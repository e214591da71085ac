import json
import shutil

import pytest
import yaml

from lorentzlab import cli
from lorentzlab.config import parse_config
from lorentzlab.errors import ConfigError, Mismatch


def write(tmp_path, data, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(data))
    return str(p)


def test_corridors_scenario(tmp_path):
    cfg = write(tmp_path, {"scenario": "corridors", "lattice": {"centers": [[0.5, 0.5]], "radii": [0.4]}})
    out = tmp_path / "out"
    assert cli.main(["corridors", "--config", cfg, "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["results"]["corridor_classes"] == 2
    assert (out / "corridors.png").exists()
    man = json.loads((out / "manifest.json").read_text())
    assert {a["path"] for a in man["artifacts"]} >= {"report.json", "corridors.csv", "corridors.png", "summary.txt"}


def test_rw_oracle_table(tmp_path):
    out = tmp_path / "rw"
    assert cli.main(["rw-oracle", "--d", "1", "--n", "10000", "--k", "0", "--out", str(out)]) == 0
    rows = (out / "rw_oracle.csv").read_text().splitlines()
    value = float(rows[1].split(",")[4])
    assert abs(value - 0.7979) < 0.01


def test_missing_radius_names_field(tmp_path, capsys):
    cfg = write(tmp_path, {"scenario": "corridors", "lattice": {"centers": [[0.5, 0.5]]}})
    assert cli.main(["corridors", "--config", cfg]) == 2
    assert "lattice.radii" in capsys.readouterr().err
    with pytest.raises(ConfigError) as exc:
        parse_config({"scenario": "corridors", "lattice": {"centers": [[0.5, 0.5]]}})
    assert exc.value.field == "lattice.radii"


def test_unknown_fields_rejected():
    with pytest.raises(ConfigError):
        parse_config({"scenario": "rw-oracle", "options": {"bogus": 1}})
    with pytest.raises(ConfigError):
        parse_config({"scenario": "nope"})


def test_defaults_are_echoed():
    cfg = parse_config({"scenario": "clt", "lattice": {"centers": [[0.5, 0.5]], "radii": [0.4]}})
    assert cfg.ensemble["trajectories"] > 0
    assert cfg.tolerances["drift"] == 0.10


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    cfg = write(tmp, {"scenario": "simulate", "seed": 9,
                      "lattice": {"centers": [[0.0, 0.0], [0.5, 0.5]], "radii": [0.4, 0.2]},
                      "ensemble": {"trajectories": 5000, "n_schedule": [20, 80]}})
    out = tmp / "out"
    assert cli.main(["run", "--config", cfg, "--out", str(out), "--workers", "1"]) == 0
    return out


def test_replay_identical(simulated):
    assert cli.replay(simulated / "manifest.json")["status"] == "identical"


def test_replay_other_worker_count(simulated):
    assert cli.replay(simulated / "manifest.json", workers=4)["status"] == "identical"


def test_replay_altered_seed(simulated):
    with pytest.raises(Mismatch) as exc:
        cli.replay(simulated / "manifest.json", seed=10)
    assert exc.value.path.endswith(".csv") or exc.value.path.endswith(".json")


def test_replay_detects_tampering(simulated, tmp_path):
    copy = tmp_path / "copy"
    shutil.copytree(simulated, copy)
    p = copy / "moments.csv"
    p.write_text(p.read_text().replace("5000", "4999", 1))
    with pytest.raises(Mismatch) as exc:
        cli.replay(copy / "manifest.json")
    assert exc.value.path == "moments.csv"


def test_recurrence_ssrw3_converges(tmp_path):
    out = tmp_path / "rec"
    code = cli.main(["recurrence", "--d", "3", "--trajectories", "4000", "--n", "512", "--out", str(out)])
    rep = json.loads((out / "report.json").read_text())
    verdict = [e for e in rep["estimators"] if e["estimator"] == "divergence_verdict"][0]
    assert verdict["checks"][0]["passed"]
    assert code in (0, 1)
