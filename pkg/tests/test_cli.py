import csv
import io
import json

import pytest

from subgroup_forge import cli


def _write(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


TINY = {
    "schema_version": 1,
    "task": {"kind": "polynomial", "n": 8, "k": 4, "n_train": 16, "n_val": 8, "n_test": 8},
    "methods": ["proposed"],
    "train": {"epochs": 0, "trials": 1},
}


def _raw(path):
    return path.read_bytes().decode("utf-8")


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"]


def test_verify_default_prints_pass(tmp_path, capsys):
    assert cli.main(["verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "cond1 PASS, cond2 PASS" in out
    body = json.loads((tmp_path / "verify.json").read_text(encoding="utf-8"))
    assert body["summary"] == "cond1 PASS, cond2 PASS"
    manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "verify" and "verify.json" in manifest["files"]


def test_verify_dense_mask_fails(tmp_path, capsys):
    cfg = dict(TINY, verify={"H": {"family": "Zk", "cycle": [0, 1, 2, 3], "n": 8},
                             "G": {"family": "Zk", "cycle": list(range(8)), "n": 8},
                             "M": [[1.0 + i * 8 + j for j in range(8)] for i in range(8)]})
    assert cli.main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 4
    assert "cond1 FAIL" in capsys.readouterr().out


def test_verify_sk_task(tmp_path, capsys):
    cfg = {"schema_version": 1, "task": {"kind": "digitsum", "n": 4, "k": 2}}
    assert cli.main(["verify", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 0
    assert "cond1 PASS, cond2 PASS" in capsys.readouterr().out


def test_train_zero_epochs(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", _write(tmp_path, TINY), "--out", str(out)]) == 0
    reports = list((out / "reports").glob("*.json"))
    assert len(reports) == 1
    rep = json.loads(reports[0].read_text(encoding="utf-8"))
    assert rep["train_loss"] == []
    rows = list(csv.DictReader(io.StringIO((out / "metrics.csv").read_text(encoding="utf-8"))))
    assert {r["epoch"] for r in rows} == {"0"}
    assert list(rows[0]) == ["run_id", "method", "seed", "split", "epoch", "mae"]
    agg = _raw(out / "aggregate.csv")
    assert agg.startswith("method,split,mean,std,n_trials,n_failed\r\n")
    assert (out / "checkpoints" / "proposed_seed0" / "manifest.json").is_file()
    assert (out / "masks" / "proposed_seed0_M.pgm").read_bytes().startswith(b"P5")


def test_flag_overrides(tmp_path):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", _write(tmp_path, TINY), "--out", str(out), "--seed", "5",
                     "--trials", "2"]) == 0
    names = sorted(p.name for p in (out / "reports").glob("*.json"))
    assert names == ["proposed_seed5.json", "proposed_seed6.json"]


def test_threads_env(monkeypatch):
    monkeypatch.setenv("SUBGROUP_FORGE_THREADS", "3")
    assert cli._resolve_threads(None) == 3
    assert cli._resolve_threads(2) == 2
    monkeypatch.setenv("SUBGROUP_FORGE_THREADS", "many")
    with pytest.raises(cli.ConfigError):
        cli._resolve_threads(None)
    monkeypatch.delenv("SUBGROUP_FORGE_THREADS")
    assert cli._resolve_threads(None) == 1


def test_gen_data_then_train_from_dataset(tmp_path):
    cfg_path = _write(tmp_path, TINY)
    assert cli.main(["gen-data", "--config", cfg_path, "--out", str(tmp_path / "g")]) == 0
    assert (tmp_path / "g" / "dataset" / "train.csv").read_text(encoding="utf-8").startswith("x0,")
    cfg = dict(TINY, dataset=str(tmp_path / "g" / "dataset"))
    assert cli.main(["train", "--config", _write(tmp_path, cfg, "c2.json"), "--out", str(tmp_path / "t")]) == 0


def test_missing_dataset(tmp_path, capsys):
    cfg = dict(TINY, dataset=str(tmp_path / "absent"))
    code = cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")])
    assert code == 3
    err = _error(capsys)
    assert err["type"] == "missing_data" and "dataset not found" in err["message"]
    assert json.loads((tmp_path / "o" / "error.json").read_text(encoding="utf-8"))["error"]["type"] == "missing_data"


@pytest.mark.parametrize("patch, field", [
    ({"train": {"epochs": "ten"}}, "train.epochs"),
    ({"train": {"learning_rate": 0.1}}, "train.learning_rate"),
    ({"task": {"kind": "polynomial", "n": 8, "k": 3.5}}, "task.k"),
    ({"task": {"kind": "images", "n": 8, "k": 2}}, "task.kind"),
    ({"methods": ["lstm"]}, "methods[0]"),
    ({"schema_version": 2}, "schema_version"),
    ({"colour": "blue"}, "colour"),
    ({"sizes": [16, -1]}, "sizes"),
])
def test_malformed_config_names_field(tmp_path, capsys, patch, field):
    cfg = dict(TINY, **patch)
    assert cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    err = _error(capsys)
    assert err["type"] == "config_error" and err["field"] == field


def test_missing_schema_version(tmp_path, capsys):
    cfg = {k: v for k, v in TINY.items() if k != "schema_version"}
    assert cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert _error(capsys)["field"] == "schema_version"


def test_invalid_json(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{\"schema_version\": 1,", encoding="utf-8")
    assert cli.main(["train", "--config", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "invalid JSON" in _error(capsys)["message"]


def test_missing_config_file(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 3


def test_estimate_and_report(tmp_path, capsys):
    cfg = dict(TINY, train={"epochs": 2, "trials": 2}, sizes=[16, 32])
    est_dir = tmp_path / "est"
    assert cli.main(["estimate", "--config", _write(tmp_path, cfg), "--out", str(est_dir)]) == 0
    blob = json.loads((est_dir / "estimates.json").read_text(encoding="utf-8"))
    assert len(blob["trials"]) == 4
    assert _raw(est_dir / "accuracy.csv").startswith("Zk:Zn,16,32\r\n")
    report_cfg = dict(TINY, report={"inputs": [str(est_dir)]})
    rep_dir = tmp_path / "rep"
    assert cli.main(["report", "--config", _write(tmp_path, report_cfg, "r.json"), "--out", str(rep_dir)]) == 0
    lines = _raw(rep_dir / "accuracy_table.csv").split("\r\n")
    assert lines[0] == "Zk:Zn,16,32"
    assert lines[1].startswith("Z4:Z8,")
    assert len(list((rep_dir / "heatmaps").glob("*.pgm"))) == 4


def test_report_default_layout(tmp_path):
    est_dir = tmp_path / "est"
    cfg = dict(TINY, train={"epochs": 1, "trials": 1})
    assert cli.main(["estimate", "--config", _write(tmp_path, cfg), "--out", str(est_dir)]) == 0
    assert cli.main(["report", "--out", str(est_dir)]) == 0
    header = _raw(est_dir / "accuracy_table.csv").split("\r\n")[0]
    assert header == "Zk:Zn,16,32,64"


def test_report_mae_table(tmp_path):
    run = tmp_path / "run"
    cfg = dict(TINY, methods=["known", "simple_fc"], train={"epochs": 1, "trials": 1})
    assert cli.main(["train", "--config", _write(tmp_path, cfg), "--out", str(run)]) == 0
    rep_cfg = dict(TINY, report={"inputs": [str(run)]})
    assert cli.main(["report", "--config", _write(tmp_path, rep_cfg, "r.json"), "--out", str(tmp_path / "r")]) == 0
    rows = _raw(tmp_path / "r" / "mae_table.csv").split("\r\n")
    assert rows[0] == "method,task,mean_x1e-2,std_x1e-2,median_x1e-2"
    assert rows[1].startswith("known,Z4:Z8,")


def test_report_without_inputs(tmp_path, capsys):
    assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 3
    assert "no estimates.json" in _error(capsys)["message"]


def test_console_script_parser():
    parser = cli.build_parser()
    args = parser.parse_args(["estimate", "--config", "c.json", "--out", "o", "--seed", "1", "--threads", "2",
                              "--trials", "3"])
    assert (args.command, args.config, args.out, args.seed, args.threads, args.trials) == \
        ("estimate", "c.json", "o", 1, 2, 3)
