import json
import re

import numpy as np
import pytest

from pumpsched import cli
from pumpsched.config import ExperimentConfig
from pumpsched.model import RANDERS_A_D, RANDERS_B_D1, RANDERS_B_D2, RANDERS_E_M

from datasets import synthetic_rows, true_continuous, write_rows
from test_config import SHIPPED


def err_record(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def small_config(tmp_path, **over):
    d = {"horizon": 6,
         "controllers": [{"kind": "NoMPC"}, {"kind": "CTMPC", "k": 1.0}],
         "scenarios": [{"name": "normal", "box": "normal", "days": 1, "block_days": 1, "seed": 1},
                       {"name": "extreme", "box": "extreme", "days": 1, "block_days": 1, "seed": 3}],
         "bench": {"horizons": [4, 8]},
         "output_dir": "out"}
    d.update(over)
    p = tmp_path / "cfg.json"
    p.write_text("// test configuration\n" + json.dumps(d, indent=1))
    return p


def test_identify_synthetic_recovers_generators(tmp_path):
    rows, _ = synthetic_rows(np.random.default_rng(0), samples=30)
    write_rows(tmp_path / "d.csv", rows)
    assert cli.main(["identify", str(tmp_path / "d.csv"), "--out", str(tmp_path / "m.json")]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    for key, ref in zip(("A", "B1", "B2"), true_continuous()):
        got = np.array(doc["continuous"][key])
        assert np.max(np.abs(got - ref)) <= 1e-8 * np.max(np.abs(ref))
    np.testing.assert_allclose(doc["E_m"], np.zeros((2, 2)), atol=1e-12)
    assert doc["samples"] == 30 and doc["discrete"]["A_d"]


def test_identify_builtin_verbatim(tmp_path):
    assert cli.main(["identify", "randers-paper", "--out", str(tmp_path / "m.json")]) == 0
    doc = json.loads((tmp_path / "m.json").read_text())
    assert doc["discrete"]["A_d"] == RANDERS_A_D
    assert doc["discrete"]["B_d1"] == RANDERS_B_D1
    assert doc["discrete"]["B_d2"] == RANDERS_B_D2
    assert doc["E_m"] == RANDERS_E_M
    assert doc["dt"] == 1.0


def test_identify_malformed_row(tmp_path, capsys):
    rows, _ = synthetic_rows(np.random.default_rng(1), samples=5)
    write_rows(tmp_path / "d.csv", rows)
    lines = (tmp_path / "d.csv").read_text().splitlines()
    lines[4] = lines[4].replace(lines[4].split(",")[3], "abc", 1)
    (tmp_path / "d.csv").write_text("\n".join(lines) + "\n")
    assert cli.main(["identify", str(tmp_path / "d.csv"), "--out", str(tmp_path / "m.json")]) == cli.EXIT_INVALID
    rec = err_record(capsys)
    assert rec["line"] == 5 and rec["error"] == "DatasetParseError" and "row 5" in rec["message"]
    assert not (tmp_path / "m.json").exists()


def test_identify_missing_file(tmp_path, capsys):
    assert cli.main(["identify", str(tmp_path / "none.csv"), "--out", str(tmp_path / "m.json")]) == cli.EXIT_IO
    assert err_record(capsys)["code"] == cli.EXIT_IO


def test_run_writes_outputs_and_is_reproducible(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "b"), "--workers", "2"]) == 0
    a = (tmp_path / "a" / "summary.csv").read_bytes()
    assert a == (tmp_path / "b" / "summary.csv").read_bytes()
    rows = a.decode().splitlines()
    assert len(rows) == 1 + 4
    assert sorted(p.name for p in (tmp_path / "a" / "traces").iterdir())[0] == "extreme_CTMPC1_block0.csv"
    timing = (tmp_path / "a" / "timing.csv").read_text().splitlines()
    assert timing[0].startswith("scenario,controller,steps") and len(timing) == 5
    saved = ExperimentConfig.load(tmp_path / "a" / "config.json")
    assert saved.controllers == ExperimentConfig.load(cfg).controllers
    # seed override changes the random scenario only
    assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "c"), "--seed", "5"]) == 0
    c = (tmp_path / "c" / "summary.csv").read_text().splitlines()
    assert c[3:] == rows[3:] and c[1] != rows[1]


def test_run_shipped_config_shape(tmp_path):
    # the shipped matrix, shortened to one day and a short horizon
    d = ExperimentConfig.load(SHIPPED).to_dict()
    d["horizon"] = 6
    for s in d["scenarios"]:
        s["days"] = s["block_days"] = 1
    cfg = ExperimentConfig.from_dict(d)
    summary = cli.cmd_run(cfg, tmp_path)
    rows = summary.splitlines()
    assert len(rows) == 16
    assert [r.split(",")[1] for r in rows[1::5]] == ["normal", "challenging", "extreme"]


def test_run_empty_controller_list(tmp_path, capsys):
    cfg = small_config(tmp_path, controllers=[])
    assert cli.main(["run", "--config", str(cfg)]) == cli.EXIT_INVALID
    rec = err_record(capsys)
    assert rec["error"] == "ConfigError" and "empty" in rec["message"]


def test_run_missing_config(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "nope.json")]) == cli.EXIT_IO
    assert err_record(capsys)["file"].endswith("nope.json")


def test_bench_sweep_and_cross_check(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert cli.main(["bench", "--config", str(cfg), "--out", str(tmp_path / "bench")]) == 0
    out = capsys.readouterr().out
    assert "sparse log-log slope:" in out and "agree" in out
    rep = json.loads((tmp_path / "bench" / "bench.json").read_text())
    assert rep["cross_check"]["N"] == 4 and rep["cross_check"]["agree"]
    assert rep["sparse_slope"] is not None


def test_bench_single_horizon_slope_undefined(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert cli.main(["bench", "--config", str(cfg), "--horizons", "4"]) == 0
    out = capsys.readouterr().out
    assert "sparse log-log slope: undefined" in out


def test_bench_dense_size_guard(tmp_path):
    cfg = ExperimentConfig.load(small_config(tmp_path, solver={"dense_max_vars": 500}))
    rows, report = cli.cmd_bench(cfg, [4, 8])
    dense = [r for r in rows if r[1] == "dense"]
    assert dense[0][6] == "optimal" and dense[1][6].startswith("skipped")
    assert report["dense_slope"] is None


def test_loglog_slope():
    assert cli.loglog_slope([8], [1.0]) is None
    assert cli.loglog_slope([2, 4, 8], [4.0, 32.0, 256.0]) == pytest.approx(3.0)


def _trace_file(tmp_path, levels):
    h = np.asarray(levels, float)
    cols = ["t", "h1", "h2", "hn1", "hn2"]
    lines = [",".join(cols)]
    for t in range(len(h) - 1):
        lines.append(",".join([str(t)] + [repr(float(x)) for x in (*h[t], *h[t + 1])]))
    p = tmp_path / "trace.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def test_plot_bounds_and_violation_markers(tmp_path):
    levels = [[2.0, 2.0], [2.5, 2.5], [3.05, 2.6], [2.9, 2.9], [2.0, 2.0]]
    tr = _trace_file(tmp_path, levels)
    assert cli.main(["plot", str(tr), "--out", str(tmp_path / "f.svg")]) == 0
    svg = (tmp_path / "f.svg").read_text()
    for gid in ("bounds-h1-max", "bounds-h1-min", "bounds-h2-max", "bounds-h2-min", "violations-h1",
                "violations-h2"):
        assert f'id="{gid}"' in svg
    assert len(re.findall(r'id="axes_\d+"', svg)) == 2


def test_plot_clean_trace_has_no_markers(tmp_path):
    tr = _trace_file(tmp_path, [[2.0, 2.0], [2.1, 2.0], [2.2, 2.1]])
    cli.cmd_plot(tr, tmp_path / "f.svg", [1.5, 1.4], [3.0, 2.8])
    assert "violations-h" not in (tmp_path / "f.svg").read_text()


def test_plot_empty_trace(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("t,h1,h2,hn1,hn2\n")
    assert cli.main(["plot", str(p), "--out", str(tmp_path / "f.svg")]) == cli.EXIT_INVALID
    assert "no rows" in err_record(capsys)["message"]


def test_module_entry_point():
    import subprocess
    import sys
    res = subprocess.run([sys.executable, "-m", "pumpsched", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "identify" in res.stdout
