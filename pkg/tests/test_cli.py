import io
import json
import sys

import pytest

from gazeload.cli import COMMANDS, main
from gazeload.ivt import read_fixations_csv
from gazeload.synth import SynthConfig, generate_session
from gazeload.core import save_session

SMALL = ["--duration", "12", "--n-low", "2", "--n-high", "2", "--window-len", "400",
         "--stride", "200"]


def _exit_code(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    return info.value.code


@pytest.mark.parametrize("command", [None, *COMMANDS])
def test_help_exits_zero(command, capsys):
    argv = ["--help"] if command is None else [command, "--help"]
    assert _exit_code(argv) == 0
    assert "usage" in capsys.readouterr().out


def test_evaluate_without_model_is_usage_error(capsys):
    assert _exit_code(["evaluate", "--dataset", "d.glds", "--out", "x"]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert _exit_code(["pipeline", "--out", "x", "--bogus"]) == 1
    assert "usage" in capsys.readouterr().err
    assert _exit_code(["no-such-command"]) == 1


def test_data_error_exits_two(tmp_path, capsys):
    bad = tmp_path / "s.csv"
    bad.write_text("timestamp_us\n1\n")
    (tmp_path / "s.manifest").write_text("participant_id=a\ntlx_mental=3\n")
    code = main(["fixations", "--in", str(bad), "--manifest", str(tmp_path / "s.manifest"),
                 "--out", str(tmp_path / "f.csv")])
    assert code == 2
    assert main(["evaluate", "--model", str(tmp_path / "missing.glmn"), "--dataset", "x",
                 "--out", str(tmp_path)]) == 2


def test_source_choice_is_usage_error(tmp_path):
    assert main(["dataset", "--out", str(tmp_path / "d.glds")]) == 1


def test_fixations_command(tmp_path):
    s, truth = generate_session(SynthConfig(duration_s=5, seed=2))
    save_session(s, tmp_path / "s.csv", tmp_path / "m.txt")
    out = tmp_path / "fix.csv"
    assert main(["fixations", "--in", str(tmp_path / "s.csv"), "--manifest",
                 str(tmp_path / "m.txt"), "--out", str(out)]) == 0
    header = out.read_text().splitlines()[0]
    assert header == "start_us,end_us,duration_ms,mean_pupil,centroid_x,centroid_y,centroid_z"
    events = read_fixations_csv(out)
    assert abs(len(events) - len(truth)) <= 1
    assert (tmp_path / "run_manifest.json").exists()


def test_preprocess_command(tmp_path):
    s, _ = generate_session(SynthConfig(duration_s=3, seed=1))
    save_session(s, tmp_path / "s.csv", tmp_path / "m.txt")
    assert main(["preprocess", "--in", str(tmp_path / "s.csv"), "--manifest",
                 str(tmp_path / "m.txt"), "--out", str(tmp_path / "p.csv")]) == 0
    rows = (tmp_path / "p.csv").read_text().splitlines()
    assert rows[0] == "timestamp_us,left_pupil,right_pupil" and len(rows) == 601
    values = [float(v) for r in rows[1:] for v in r.split(",")[1:]]
    assert min(values) == 0.0 and max(values) == 1.0


def test_stepwise_commands_and_rerun(tmp_path, capsys):
    data = tmp_path / "data"
    assert main(["synth", "--out", str(data), "--seed", "3", *SMALL[:6]]) == 0
    assert len(list(data.glob("*.csv"))) == 4
    ds = tmp_path / "ds" / "d.glds"
    assert main(["dataset", "--data", str(data), "--out", str(ds), "--window-len", "400",
                 "--stride", "200", "--csv", str(tmp_path / "ds" / "d.csv")]) == 0
    assert json.loads((tmp_path / "ds" / "d.glds.json").read_text())["pipeline"]["window_len"] == 400
    mlp = tmp_path / "m" / "mlp.glmn"
    assert main(["train-mlp", "--dataset", str(ds), "--out", str(mlp), "--epochs", "3",
                 "--lr", "1e-3", "--batch", "32"]) == 0
    grid = tmp_path / "grid.json"
    grid.write_text(json.dumps({"n_trees": [5], "max_depth": [None, 3]}))
    rf = tmp_path / "r" / "rf.glrf"
    assert main(["train-rf", "--dataset", str(ds), "--out", str(rf), "--grid", str(grid)]) == 0
    assert len((tmp_path / "r" / "grid_scores.csv").read_text().splitlines()) == 3
    for model in (mlp, rf):
        out = tmp_path / ("ev_" + model.stem)
        assert main(["evaluate", "--model", str(model), "--dataset", str(ds),
                     "--out", str(out)]) == 0
        assert (out / "report.csv").read_text().startswith("model,accuracy,precision,recall,f1\n")
    first = (tmp_path / "ev_rf" / "report.csv").read_bytes()
    manifest = tmp_path / "ev_rf" / "run_manifest.json"
    assert json.loads(manifest.read_text())["command"] == "evaluate"
    assert main(["rerun", str(manifest), "--out", str(tmp_path / "again")]) == 0
    assert (tmp_path / "again" / "report.csv").read_bytes() == first


def test_serve_pipe(tmp_path, monkeypatch, capsys):
    out = tmp_path / "run"
    assert main(["pipeline", "--synthetic", "--seed", "1", *SMALL, "--epochs", "2",
                 "--grid", _tiny_grid(tmp_path), "--out", str(out)]) == 0
    from gazeload.stream import sample_record
    s, _ = generate_session(SynthConfig(duration_s=3, seed=4))
    lines = "".join(json.dumps(sample_record(x)) + "\n" for x in s.samples)
    monkeypatch.setattr(sys, "stdin", io.StringIO(lines + "oops\n"))
    capsys.readouterr()
    assert main(["serve", "--model", str(out / "rf.glrf"), "--pipe"]) == 0
    recs = [json.loads(x) for x in capsys.readouterr().out.splitlines()]
    assert len(recs) == 1 + (600 - 400) // 200 + 1
    assert recs[-1] == {"error": recs[-1]["error"], "line": 601}


def _tiny_grid(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps({"n_trees": [5]}))
    return str(p)


def test_pipeline_twice_identical(tmp_path):
    runs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        assert main(["pipeline", "--synthetic", "--seed", "7", *SMALL, "--epochs", "2",
                     "--grid", _tiny_grid(tmp_path), "--out", str(out)]) == 0
        runs.append(out)
    for name in ("dataset.glds", "mlp.glmn", "rf.glrf", "grid_scores.csv", "report.csv",
                 "report.txt"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name
    doc = json.loads((runs[0] / "run_manifest.json").read_text())
    assert doc["seed"] == 7 and doc["config"]["epochs"] == 2
    assert main(["rerun", str(runs[0] / "run_manifest.json"), "--out", str(tmp_path / "re")]) == 0
    assert (tmp_path / "re" / "mlp.glmn").read_bytes() == (runs[0] / "mlp.glmn").read_bytes()
