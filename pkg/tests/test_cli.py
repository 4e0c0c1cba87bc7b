import argparse
import json

import pytest

from flowerreach.cli import EXIT_INPUT, EXIT_MISSION, EXIT_OK, main, parse_seed_range
from flowerreach.perception import NoiseParams
from flowerreach.scenario import load_scenario, save_scenario


@pytest.fixture
def noiseless(tmp_path):
    path = tmp_path / "noiseless.json"
    save_scenario(load_scenario("default").replace(noise=NoiseParams()), path)
    return path


def test_seed_range():
    assert parse_seed_range("3..6") == [3, 4, 5, 6]
    assert parse_seed_range("7") == [7]
    for bad in ("6..3", "a..b", "1-3"):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_seed_range(bad)


def test_simulate_done(noiseless, tmp_path, capsys):
    code = main(["simulate", "--scenario", str(noiseless), "--seed", "0", "--out", str(tmp_path / "o")])
    assert code == EXIT_OK
    assert "Done" in capsys.readouterr().out
    assert (tmp_path / "o" / "trial_0.csv").exists()


def test_simulate_short_duration_fails(noiseless, tmp_path):
    code = main(["simulate", "--scenario", str(noiseless), "--seed", "0", "--out", str(tmp_path),
                 "--duration", "0.5"])
    assert code == EXIT_MISSION


def test_batch_and_report(noiseless, tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["batch", "--scenario", str(noiseless), "--seeds", "0..1", "--out", str(out)]) == EXIT_OK
    data = json.loads((out / "batch.json").read_text())
    assert [t["seed"] for t in data["trials"]] == [0, 1]
    capsys.readouterr()
    assert main(["report", "--in", str(out)]) == EXIT_OK
    assert "success rate" in capsys.readouterr().out
    assert (out / "extracts" / "approach_1.csv").exists()


def test_missing_scenario(tmp_path, capsys):
    code = main(["simulate", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)])
    assert code == EXIT_INPUT
    assert "error" in capsys.readouterr().err


def test_invalid_scenario(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"model": {"mass_kg": -1}}))
    assert main(["batch", "--scenario", str(path), "--seeds", "0..1", "--out", str(tmp_path)]) == EXIT_INPUT


def test_report_without_batch(tmp_path):
    assert main(["report", "--in", str(tmp_path)]) == EXIT_INPUT


def test_bad_seed_range_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["batch", "--scenario", "default", "--seeds", "5..1", "--out", str(tmp_path)])
    assert exc.value.code == 2
