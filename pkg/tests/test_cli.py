import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lpvdelay.cli import main
from lpvdelay.config import example_config_path, load_config
from lpvdelay.ddesim import l2_gain_estimate, simulate
from lpvdelay.iqc import realize_filter
from lpvdelay.synthesis import synthesize

DATA = Path(example_config_path()).parent
SCHED_CONFIG = DATA / "scheduled_delay.json"


def write_config(tmp_path, base, **changes):
    raw = json.loads(Path(base).read_text())
    for dotted, value in changes.items():
        node = raw
        keys = dotted.split("__")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
        node[keys[-1]] = value
    path = tmp_path / "config.json"
    path.write_text(json.dumps(raw))
    return path


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), (json.loads(err) if err.strip() else None)


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["synthesize", "--config", str(SCHED_CONFIG), "--out", str(out), "--figures"]) == 0
    return out


def test_synthesize_outputs(synth_dir):
    data = json.loads((synth_dir / "synthesis.json").read_text())
    assert data["gamma"] == pytest.approx(2.0953, rel=0.10)
    assert data["config"]["delay"] == {"tau_bar": 2.0, "r": 1.2}
    with open(synth_dir / "diagnostics.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "grid_point" and len(rows) == 12
    assert (synth_dir / "gains.png").stat().st_size > 0


def test_bundled_config_gamma(tmp_path, capsys):
    code, summary, _ = run(["synthesize", "--config", example_config_path(), "--out", tmp_path], capsys)
    assert code == 0
    assert summary["gamma"] == pytest.approx(3.6859, rel=0.05)


def test_pi1_with_large_delay_rate_is_config_error(tmp_path, capsys):
    cfg = write_config(tmp_path, example_config_path(), delay__r=1.5, multipliers__use=["pi1"])
    code, _, err = run(["synthesize", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 1
    assert "pi1 requires r<1" in err["message"]


def test_huge_delay_bound_is_infeasible(tmp_path, capsys):
    cfg = write_config(tmp_path, example_config_path(), delay__tau_bar=1e6)
    code, _, _ = run(["synthesize", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 2


def test_schema_violation(tmp_path, capsys):
    cfg = write_config(tmp_path, SCHED_CONFIG, delay__tau_bar="two")
    code, _, err = run(["synthesize", "--config", cfg], capsys)
    assert code == 1 and err["error"] == "config"


def test_unknown_basis_function(tmp_path, capsys):
    cfg = write_config(tmp_path, SCHED_CONFIG, synthesis__r_basis=[[0], [-1]])
    code, _, _ = run(["synthesize", "--config", cfg], capsys)
    assert code == 1


def test_missing_config(tmp_path, capsys):
    code, _, _ = run(["synthesize", "--config", tmp_path / "nope.json"], capsys)
    assert code == 1


def test_analyze_near_optimal_gamma(synth_dir, tmp_path, capsys):
    gamma = json.loads((synth_dir / "synthesis.json").read_text())["gamma"]
    code, summary, _ = run(["analyze", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                            "--gamma", 1.05 * gamma, "--out", tmp_path], capsys)
    assert code == 0 and summary["feasible"]
    assert json.loads((tmp_path / "certificate.json").read_text())["feasible"] is True


def test_analyze_default_gamma(synth_dir, tmp_path, capsys):
    code, summary, _ = run(["analyze", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                            "--out", tmp_path], capsys)
    assert code == 0


def test_analyze_tenfold_tighter_gamma(synth_dir, tmp_path, capsys):
    gamma = json.loads((synth_dir / "synthesis.json").read_text())["gamma"]
    code, _, err = run(["analyze", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                        "--gamma", 0.1 * gamma, "--out", tmp_path], capsys)
    assert code == 2 and err["error"] == "infeasible"


def test_analyze_missing_gains(tmp_path, capsys):
    code, _, err = run(["analyze", "--config", SCHED_CONFIG, "--gains", tmp_path / "missing.json"], capsys)
    assert code == 1
    assert "not found" in err["message"]


def test_simulate_pulse_scenario(synth_dir, tmp_path, capsys):
    code, summary, _ = run(["simulate", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                            "--scenario", "pulse", "--out", tmp_path, "--figures"], capsys)
    assert code == 0
    assert summary["l2_ratio"] <= 2.0953
    assert summary["ratio_le_gamma"]
    with open(summary["trace"], newline="") as fh:
        header = next(csv.reader(fh))
    assert header[:3] == ["t", "x_p1", "x_p2"] and header[-2:] == ["tau", "rho"]
    assert Path(summary["figures"][0]).exists()


def test_simulate_delay_above_bound(synth_dir, tmp_path, capsys):
    bad = {"rho": [{"kind": "constant", "params": {"value": 0.0}}],
           "tau": {"kind": "constant", "params": {"value": 2.5}},
           "d": [{"kind": "pulse", "params": {}}], "T": 5.0}
    cfg = write_config(tmp_path, SCHED_CONFIG, scenarios={"long": bad})
    code, _, err = run(["simulate", "--config", cfg, "--gains", synth_dir / "synthesis.json",
                        "--scenario", "long", "--out", tmp_path], capsys)
    assert code == 4 and err["error"] == "scenario"


def test_simulate_zero_disturbance(synth_dir, tmp_path, capsys):
    quiet = {"rho": [{"kind": "constant", "params": {"value": 0.0}}],
             "tau": {"kind": "constant", "params": {"value": 1.0}},
             "d": [{"kind": "constant", "params": {"value": 0.0}}], "T": 5.0}
    cfg = write_config(tmp_path, SCHED_CONFIG, scenarios={"quiet": quiet})
    code, _, err = run(["simulate", "--config", cfg, "--gains", synth_dir / "synthesis.json",
                        "--scenario", "quiet", "--out", tmp_path], capsys)
    assert code == 4
    assert "zero disturbance energy" in err["message"]


def test_simulate_unknown_scenario(synth_dir, tmp_path, capsys):
    code, _, _ = run(["simulate", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                      "--scenario", "nonsense", "--out", tmp_path], capsys)
    assert code == 1


def test_round_trip_matches_in_memory(synth_dir, tmp_path, capsys):
    cfg = load_config(SCHED_CONFIG)
    real = realize_filter(cfg.multipliers, cfg.plant.n_x)
    result = synthesize(cfg.plant, real, cfg.synthesis)
    trace = simulate(cfg.plant, real, result.gains, cfg.scenario("pulse"))
    code, summary, _ = run(["simulate", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                            "--out", tmp_path], capsys)
    assert code == 0
    assert summary["l2_ratio"] == l2_gain_estimate(trace)
    assert summary["max_abs_u"] == trace.max_abs_u


def test_commands_are_deterministic(synth_dir, tmp_path, capsys):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        code, summary, _ = run(["simulate", "--config", SCHED_CONFIG, "--gains", synth_dir / "synthesis.json",
                                "--scenario", "random", "--seed", 11, "--out", d], capsys)
        assert code == 0
        outs.append((summary["l2_ratio"], (d / Path(summary["trace"]).name).read_bytes()))
    assert outs[0] == outs[1]


def test_validate_iqc(tmp_path, capsys):
    code, summary, _ = run(["validate-iqc", "--config", SCHED_CONFIG, "--trials", 3, "--out", tmp_path,
                            "--figures"], capsys)
    assert code == 0
    with open(tmp_path / "factorization.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 101
    assert json.loads((tmp_path / "iqc_report.json").read_text())["pass"] is True


def test_reproduce_table_small(tmp_path, capsys):
    cfg = write_config(tmp_path, example_config_path(),
                       table={"columns": [[0.9, 1.0], [1.7, 2.5]], "rates": [0.1, 10.0], "grid": 5})
    code, summary, _ = run(["reproduce-table", "--config", cfg, "--out", tmp_path], capsys)
    assert code == 0
    with open(tmp_path / "table.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert [r[0] for r in rows[1:]] == ["quadratic", "pd_nu=0.1", "pd_nu=10"]
    values = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert np.all(np.isfinite(values))
    assert summary["monotonicity_violations"] == []
    assert "lft_exact_memory" in summary["omitted_rows"]


def test_bad_arguments(capsys):
    assert main(["synthesize"]) == 1
    assert main(["frobnicate"]) == 1
    capsys.readouterr()
