import json

import pytest

from qpkam.cli import config_hash, effective_workers, load_config, main, task_seed

SMALL = """\
energies: {start: -2.5, stop: 2.5, num: 6}
budget: {n_iters: 500, samples: 4, ids_iters: 2000}
"""


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


def test_no_group_exits_2(capsys):
    assert main([]) == 2


def test_bad_arguments_exit_2():
    with pytest.raises(SystemExit) as e:
        main(["kam", "jump"])
    assert e.value.code == 2


def test_empty_config_exits_2(tmp_path):
    cfg = tmp_path / "empty.yaml"
    cfg.write_text("")
    assert run(tmp_path / "o", "ledger", "--config", str(cfg)) == 2


def test_bad_mode_exits_2(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text("mode: fast\n")
    assert run(tmp_path / "o", "ledger", "--config", str(cfg)) == 2
    assert run(tmp_path / "o", "ledger", "--preset", "nope") == 2


def test_arith_dc(capsys):
    assert main(["arith", "dc", "--alpha", "0.6180339887498949", "--tau", "1.2"]) == 0
    assert "kappa=" in capsys.readouterr().out
    assert main(["arith", "dc", "--alpha", "0.5", "--tau", "1.2"]) == 1


def test_ledger_paper_faithful(tmp_path, capsys):
    assert run(tmp_path, "ledger", "--preset", "paper-faithful") == 0
    out = capsys.readouterr().out
    assert "all chains hold" in out
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "ok" and man["config_hash"] in (tmp_path / "ledger.txt").read_text()


def test_dyn_le_csv(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    assert run(tmp_path / "o", "dyn", "le", "--config", str(cfg)) == 0
    lines = (tmp_path / "o" / "dyn_le.csv").read_text().splitlines()
    h = config_hash(load_config(str(cfg)))
    assert lines[0] == f"# config_hash={h}"
    assert lines[1] == "parameter,value,error_bar,n_iters" and len(lines) == 8
    # |E| = 2.5 lies outside the spectrum of the lam = 0.5 operator
    assert float(lines[2].split(",")[1]) > 0.1


def test_workers_do_not_change_bytes(tmp_path, monkeypatch):
    monkeypatch.delenv("QPKAM_MAX_THREADS", raising=False)
    cfg = tmp_path / "c.yaml"
    cfg.write_text(SMALL)
    outs = []
    for w in ("1", "3"):
        d = tmp_path / f"w{w}"
        assert run(d, "dyn", "rot", "--config", str(cfg), "--workers", w) == 0
        outs.append((d / "dyn_rot.csv").read_bytes())
    assert outs[0] == outs[1]


def test_kam_step(tmp_path):
    assert run(tmp_path, "kam", "step") == 0
    text = (tmp_path / "step.txt").read_text()
    assert "branch " in text and "violations -" in text


def test_seed_split_and_hash():
    assert task_seed(1, 0) != task_seed(1, 1) and task_seed(1, 0) == task_seed(1, 0)
    a = load_config(None, "free")
    assert config_hash(a) == config_hash(load_config(None, "free"))
    assert config_hash(a) != config_hash(load_config(None, "amo-half"))


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("QPKAM_MAX_THREADS", "2")
    assert effective_workers(8) == 2
