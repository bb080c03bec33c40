import json
import os
import subprocess
import sys

import pytest

from sumweight.cli import main
from sumweight.graph import from_edge_list
from sumweight.models import bwgossip_set

P3 = {"type": "edges", "n": 3, "edges": [[0, 1], [1, 2]]}


def write_cfg(tmp_path, name="cfg.json", **kw):
    doc = {"version": 1, "graph": P3, "output_dir": str(tmp_path / "out")}
    doc.update(kw)
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def files_under(root):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*") if p.is_file())


def test_check_p3(tmp_path, capsys):
    assert main(["check", str(write_cfg(tmp_path))]) == 0
    out = capsys.readouterr().out
    assert "A1 ✓ A2 ✓ B ✓" in out and "m_K = 1/3" in out
    rep = json.loads((tmp_path / "out" / "assumptions.json").read_text())
    assert rep["B"] is True and rep["m_K"] == pytest.approx(1 / 3)


def test_check_disconnected_reports_failure(tmp_path, capsys):
    cfg = write_cfg(tmp_path, graph={"type": "edges", "n": 4, "edges": [[0, 1], [2, 3]]})
    assert main(["check", str(cfg)]) == 1
    assert "error" in capsys.readouterr().err


def test_spectral_pushsum(tmp_path, capsys):
    cfg = write_cfg(tmp_path, graph={"type": "complete", "n": 4}, algorithm="pushsum")
    assert main(["spectral", str(cfg)]) == 0
    rep = json.loads((tmp_path / "out" / "spectral.json").read_text())
    assert rep["rho_R"] == pytest.approx(0.4375, abs=1e-12)
    assert "0.4375" in capsys.readouterr().out


def test_simulate_zero_ticks(tmp_path):
    assert main(["simulate", str(write_cfg(tmp_path, ticks=0))]) == 0
    lines = (tmp_path / "out" / "trace.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("0,")


def test_simulate_replicas_and_manifest(tmp_path):
    cfg = write_cfg(tmp_path, ticks=50, replicas=4, diagnostics=True)
    assert main(["simulate", str(cfg)]) == 0
    assert files_under(tmp_path / "out") == ["manifest.json", "mse.csv", "trace.csv"]
    man = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert set(man["outputs"]) == {"mse.csv", "trace.csv"}
    assert man["config"]["seed"] == 0


def test_seed_override(tmp_path):
    cfg = write_cfg(tmp_path, ticks=40, seed=5)
    outs = {}
    for tag, extra in (("a", []), ("b", ["--seed", "5"]), ("c", ["--seed", "6"]), ("d", ["--seed", "6"])):
        assert main(["simulate", str(cfg), "--output-dir", str(tmp_path / tag), *extra]) == 0
        outs[tag] = (tmp_path / tag / "trace.csv").read_text()
    assert outs["a"] == outs["b"]
    assert outs["c"] == outs["d"] != outs["a"]


def test_gen_graph_roundtrip(tmp_path):
    cfg = write_cfg(tmp_path, graph={"type": "rgg", "n": 12, "r0": 4.0, "seed": 3})
    assert main(["gen-graph", str(cfg)]) == 0
    doc = json.loads((tmp_path / "out" / "graph.json").read_text())
    assert doc["n"] == 12
    again = write_cfg(tmp_path, "again.json", graph={"type": "edges", "n": 12, "edges": doc["edges"]})
    assert main(["check", str(again)]) == 0


def test_family_path_relative_to_config(tmp_path):
    sub = tmp_path / "cfgs"
    sub.mkdir()
    (sub / "fam.json").write_text(bwgossip_set(from_edge_list(3, [(0, 1), (1, 2)])).to_json())
    doc = {"version": 1, "family_path": "fam.json", "output_dir": str(tmp_path / "out")}
    (sub / "c.json").write_text(json.dumps(doc))
    assert main(["spectral", str(sub / "c.json")]) == 0


def test_studies_write_only_to_output_dir(tmp_path):
    cfg = write_cfg(
        tmp_path,
        graph={"type": "rgg", "n": 6, "r0": 4.0, "seed": 1},
        replicas=10,
        ticks=60,
        study={"n_values": [4, 5], "ticks": 60, "p_e_values": [0.0, 0.2], "alphas": [1.0, 0.5]},
    )
    before = set(files_under(tmp_path))
    for sub in ("slope-study", "failure-study", "clock-sweep"):
        assert main([sub, str(cfg)]) == 0
    new = set(files_under(tmp_path)) - before
    assert new == {"out/manifest.json", "out/slope_study.csv", "out/failure_study.csv", "out/clock_sweep.csv"}


@pytest.mark.parametrize(
    "argv",
    [["frobnicate", "x.json"], ["check"], ["check", "x.json", "--bogus"], []],
)
def test_usage_errors_exit_1(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 1
    assert "usage" in capsys.readouterr().err


def test_invalid_configs_exit_1(tmp_path):
    assert main(["check", str(tmp_path / "missing.json")]) == 1
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["check", str(bad)]) == 1
    bad.write_text("[1, 2]")
    assert main(["check", str(bad)]) == 1
    assert main(["check", str(write_cfg(tmp_path, typo_key=1))]) == 1
    assert main(["check", str(write_cfg(tmp_path, version=2))]) == 1


def test_module_entry_point(tmp_path):
    cfg = write_cfg(tmp_path)
    env = dict(os.environ)
    proc = subprocess.run([sys.executable, "-m", "sumweight", "check", str(cfg)], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and "B ✓" in proc.stdout
