import json

import pytest

from spikereset.cli import main


def cfg_file(tmp_path, **kw):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(kw))
    return str(p)


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", "--config", cfg_file(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True


def test_validate_rejects_bad_model(tmp_path):
    bad = cfg_file(tmp_path, model={"family": "linear", "params": [1.0, 1.0, 1.0]})
    assert main(["validate", "--config", bad]) != 0
    unknown = cfg_file(tmp_path, model={"family": "cubic", "params": [1.0]})
    assert main(["validate", "--config", unknown]) != 0


def test_malformed_config(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert main(["validate", "--config", str(p)]) == 1


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["verify", "--suite", "nope"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    assert main(["validate", "--threads", "0"]) == 2


def test_simulate_is_reproducible(tmp_path):
    cfg = cfg_file(tmp_path, eps=[0.01], horizon=5.0, grid_n=50)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out", str(a)]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(b)]) == 0
    for name in ["points_eps0.01.csv", "trajectory_eps0.01.csv", "simulate_meta.json"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    c = tmp_path / "c"
    main(["simulate", "--config", cfg, "--out", str(c), "--seed", "5"])
    assert (c / "points_eps0.01.csv").read_bytes() != (a / "points_eps0.01.csv").read_bytes()


def test_simulate_zero_horizon(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg_file(tmp_path, eps=[0.01], horizon=0.0), "--out", str(out)]) == 0
    assert (out / "points_eps0.01.csv").read_text() == "kind,t,x\n"


def test_simulate_has_spikes_and_epochs(tmp_path):
    out = tmp_path / "o"
    assert main(["simulate", "--config", cfg_file(tmp_path, eps=[1e-3], horizon=20.0, grid_n=100),
                 "--out", str(out)]) == 0
    rows = (out / "points_eps0.001.csv").read_text().splitlines()[1:]
    kinds = {r.split(",")[0] for r in rows}
    assert kinds == {"spike", "e_odd", "e_even"}
    ts = [float(r.split(",")[1]) for r in rows]
    assert ts == sorted(ts)
    assert len((out / "trajectory_eps0.001.csv").read_text().splitlines()) == 101


def small_e1(tmp_path):
    return cfg_file(tmp_path, e1_eps=[1e-1, 3e-2, 1e-2], replicas=2000)


def test_verify_exit_code_matches_reports(tmp_path):
    out = tmp_path / "v"
    code = main(["verify", "--suite", "e1", "--config", small_e1(tmp_path), "--out", str(out), "--threads", "1"])
    reps = [json.loads(l) for l in (out / "e1_reports.jsonl").read_text().splitlines()]
    assert reps and all({"config_hash", "seed", "pass", "suite"} <= set(r) for r in reps)
    assert code == (0 if all(r["pass"] for r in reps) else 1)
    assert main(["report", "--out", str(out)]) == code
    assert (out / "summary.csv").exists()


def test_verify_ignores_thread_count(tmp_path):
    cfg = small_e1(tmp_path)
    outs = []
    for threads in ("1", "3"):
        out = tmp_path / f"t{threads}"
        main(["verify", "--suite", "e1", "--config", cfg, "--out", str(out), "--threads", threads])
        outs.append(sorted((p.name, p.read_bytes()) for p in out.iterdir()))
    assert outs[0] == outs[1]


def test_report_without_files(tmp_path):
    assert main(["report", "--out", str(tmp_path / "empty")]) == 1
