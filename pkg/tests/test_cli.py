import filecmp
import json

import pytest

from presto_emu.cli import main
from presto_emu.sequencer import EventSchedule, MatchWindow

SMALL = {
    "rb": {"lengths": [1, 50, 200], "realizations": 2, "shots": 100},
    "iswap": {"detunings": [0.0, 1e6], "max_duration": 100e-9, "shots": 64},
    "qutrit_reset": {"shots": 600},
    "reset": {"shots": 2000, "tune_noise": False,
              "device": {"noise_sigma": 0.0715, "qubits": [{"base": 2, "p_therm": 0.058}]}},
    "readout_calibrate": {"shots": 2000, "tune_noise": False, "device": {"noise_sigma": 0.0715}},
    "characterize": {"shots": 20},
    "cw_demo": {"pump_frequencies": [-50e6, 10e6, 60e6], "window": 1000},
}


@pytest.fixture
def small_config(tmp_path):
    p = tmp_path / "small.json"
    p.write_text(json.dumps(SMALL))
    return str(p)


def same_tree(a, b) -> bool:
    cmp = filecmp.dircmp(a, b)

    def walk(c):
        if c.left_only or c.right_only or c.funny_files:
            return False
        _, mismatch, errors = filecmp.cmpfiles(c.left, c.right, c.common_files, shallow=False)
        if mismatch or errors:
            return False
        return all(walk(s) for s in c.subdirs.values())

    return walk(cmp)


def write_schedule(path, duration):
    path.write_text(EventSchedule([MatchWindow(0, 0, duration)], 1, period=600).to_json())
    return str(path)


def test_validate_reports_match_window_limit(tmp_path, capsys):
    assert main(["validate", write_schedule(tmp_path / "bad.json", 512)]) == 1
    assert "exceeds 1022 ns" in capsys.readouterr().err


def test_validate_accepts_legal_schedule(tmp_path, capsys):
    assert main(["validate", write_schedule(tmp_path / "ok.json", 511)]) == 0
    assert capsys.readouterr().out.strip() == "ok"


def test_validate_bad_json_and_missing_file(tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text("{not json")
    assert main(["validate", str(bad)]) == 1
    assert main(["validate", str(tmp_path / "missing.json")]) == 2


def test_unknown_flag_prints_usage(capsys):
    assert main(["rb", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [[], ["rb", "--seed", "-1"], ["rb", "--seed", str(1 << 64)], ["rb", "--jobs", "0"],
                                  ["rb", "--scale", "huge"], ["nope"]])
def test_bad_invocations(argv):
    assert main(argv) == 1


def test_config_errors_exit_1(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"rb": {"shotz": 3}}))
    assert main(["rb", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    p.write_text(json.dumps({"reset": {"latency": 1e-6}}))
    assert main(["reset", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert not (tmp_path / "o").exists()


def test_reset_twice_is_identical(tmp_path, small_config):
    for name in ("a", "b"):
        assert main(["reset", "--seed", "7", "--config", small_config, "--out", str(tmp_path / name)]) == 0
    assert same_tree(tmp_path / "a", tmp_path / "b")
    for name in ("thermal", "reset_g", "reset_e"):
        assert (tmp_path / "a" / "reset" / f"{name}.svg").read_text().startswith("<svg")
        rows = (tmp_path / "a" / "reset" / f"{name}.csv").read_text().splitlines()
        assert rows[0] == "bin_low,bin_high,count" and len(rows) == 317
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["command"] == "reset" and man["seed"] == 7
    assert "reset/thermal.csv" in man["files"]


def test_rb_writes_quartiles(tmp_path, small_config):
    assert main(["rb", "--config", small_config, "--out", str(tmp_path / "r"), "--jobs", "2"]) == 0
    rows = (tmp_path / "r" / "rb" / "survival.csv").read_text().splitlines()
    assert rows[0] == "length,q25,median,q75,mean"
    assert [r.split(",")[0] for r in rows[1:]] == ["1", "50", "200"]
    for r in rows[1:]:
        q25, med, q75 = map(float, r.split(",")[1:4])
        assert q25 <= med <= q75


def test_empty_parameter_list_writes_manifest_only(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"rb": {"lengths": []}}))
    out = tmp_path / "o"
    assert main(["rb", "--config", str(p), "--out", str(out)]) == 0
    assert sorted(x.name for x in out.iterdir()) == ["manifest.json"]
    assert json.loads((out / "manifest.json").read_text())["files"] == []


def test_io_failure_exits_2_and_cleans_up(tmp_path, small_config):
    blocker = tmp_path / "file"
    blocker.write_text("")
    out = blocker / "sub"
    assert main(["cw-demo", "--config", small_config, "--out", str(out)]) == 2
    assert blocker.read_text() == ""
    # a directory that becomes unwritable half-way: pre-create a file where a
    # subdirectory must go
    out2 = tmp_path / "o2"
    out2.mkdir()
    (out2 / "sdram").write_text("x")
    assert main(["readout-calibrate", "--config", small_config, "--out", str(out2)]) == 2
    assert sorted(x.name for x in out2.iterdir()) == ["sdram"]


def test_cw_demo_output(tmp_path, small_config, capsys):
    assert main(["cw-demo", "--config", small_config, "--out", str(tmp_path / "c")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["max_error"] < 1e-4
    rows = (tmp_path / "c" / "cw-demo" / "sweep.csv").read_text().splitlines()
    assert len(rows) == 4
