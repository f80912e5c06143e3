import json
import subprocess
import sys

import pytest

from gibbsgap.cli import ConfigError, estimate_resources, load_config, build_parser, main, parse_range

ISING_TOML = """
model = "ising1d"

[params]
J = 1.0
h = 0.0

[run]
sampler = "heatbath"
beta = [0.5, 1.0]
sizes = "3..4"
seed = 7
"""


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_range():
    assert parse_range("3..6") == [3, 4, 5, 6]
    assert parse_range("0:1:0.25", float) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert parse_range("1,2,5") == [1, 2, 5]
    with pytest.raises(ConfigError):
        parse_range("6..3")
    with pytest.raises(ConfigError):
        parse_range("0:1:0", float)


def test_gap_scan_csv(capsys):
    code, out, _ = run(["gap", "--model", "ising1d", "--beta", "1.0", "--sizes", "3..4", "--rayleigh", "2"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "# schema=gibbsgap-report/1 kind=gap"
    assert lines[1] == "model,sampler,beta,size,region,gap,method,residual,seconds"
    rows = [l.split(",") for l in lines[2:]]
    assert [r[3] for r in rows] == ["3", "4"]
    assert all(r[6] == "dense" and r[8] == "" for r in rows)
    assert float(rows[0][5]) == pytest.approx(0.1431, abs=1e-3)


def test_conditional_gap_csv(capsys):
    code, out, _ = run(["gap", "--model", "ising1d", "--beta", "0", "--sizes", "4", "--kind", "conditional",
                        "--region", "1"], capsys)
    assert code == 0
    row = out.splitlines()[2].split(",")
    assert float(row[5]) == pytest.approx(1.0)
    assert row[6] == "pencil-patch"


def test_non_commuting_model_rejected(capsys):
    code, _, err = run(["gap", "--model", "tfim"], capsys)
    assert code == 1
    assert "do not commute" in err and "(0,1)" in err


def test_invalid_inputs(capsys):
    assert run(["gap", "--model", "nosuch"], capsys)[0] == 1
    assert run(["gap", "--model", "toric", "--sizes", "3"], capsys)[0] == 1
    assert run(["gap", "--model", "ising1d", "--sizes", "4", "--beta", "-1"], capsys)[0] == 1
    assert run(["gap", "--config", "/nonexistent.toml"], capsys)[0] == 1
    with pytest.raises(SystemExit):
        main(["gap", "--sampler", "metropolis"])


def test_certify_reports(capsys):
    code, out, _ = run(["certify", "--model", "ising1d", "--sampler", "davies", "--beta", "0.7",
                        "--sizes", "3"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert json.loads(lines[0]) == {"schema": "gibbsgap-report/1", "kind": "certify"}
    records = [json.loads(l) for l in lines[1:]]
    assert all(r["pass"] for r in records)
    kinds = {r["record"] for r in records}
    assert kinds == {"sampler", "conditional_expectation", "kms"}
    radii = [r["locality_radius"] for r in records if "locality_radius" in r]
    assert radii and max(radii) <= 1


def test_dry_run_estimates(capsys):
    code, out, _ = run(["gap", "--model", "ising1d", "--sizes", "4", "--dry-run"], capsys)
    assert code == 0
    point = json.loads(out.splitlines()[1])["points"][0]
    assert point["doubled_dim"] == 256 and point["dense_entries"] == 256 ** 2 and point["mode"] == "dense"
    code, out, _ = run(["gap", "--model", "ising1d", "--sizes", "9", "--dry-run"], capsys)
    assert code == 0
    assert json.loads(out.splitlines()[1])["points"][0]["mode"] == "implicit"
    code, out, err = run(["gap", "--model", "ising1d", "--sizes", "9", "--force-dense"], capsys)
    assert code == 3 and "implicit" in err
    assert run(["detect", "--model", "ising1d", "--sizes", "9"], capsys)[0] == 3


def test_toml_config(tmp_path, capsys):
    cfg_path = tmp_path / "ising.toml"
    cfg_path.write_text(ISING_TOML)
    args = build_parser().parse_args(["gap", "--config", str(cfg_path)])
    cfg = load_config(args)
    assert cfg.model == "ising1d" and cfg.betas == [0.5, 1.0] and cfg.sizes == [3, 4] and cfg.seed == 7
    assert estimate_resources(cfg)["refusal"] is None
    out = tmp_path / "gaps.csv"
    code, _, _ = run(["gap", "--config", str(cfg_path), "--rayleigh", "0", "--out", str(out)], capsys)
    assert code == 0
    assert len(out.read_text().splitlines()) == 2 + 4


def test_toml_term_list(tmp_path, capsys):
    path = tmp_path / "custom.toml"
    path.write_text("""
name = "pair"
[lattice]
side_lengths = [3]
[[terms]]
pauli = "Z0 Z1"
coefficient = -1.0
[[terms]]
pauli = "Z1 Z2"
coefficient = -1.0
[run]
beta = 0.0
""")
    code, out, _ = run(["gap", "--config", str(path), "--rayleigh", "0"], capsys)
    assert code == 0
    assert float(out.splitlines()[2].split(",")[5]) == pytest.approx(1.0)


def test_threads_env_and_determinism(tmp_path, monkeypatch, capsys):
    argv = ["cluster", "--model", "ising1d", "--beta", "0.3,0.6", "--sizes", "5", "--seed", "3"]
    first = run(argv, capsys)[1]
    monkeypatch.setenv("GIBBSGAP_THREADS", "2")
    second = run(argv, capsys)[1]
    assert first == second
    assert "kind=cluster-weak" in first.splitlines()[0]


def test_gnuplot_script(tmp_path, capsys):
    csv = tmp_path / "mix.csv"
    gp = tmp_path / "mix.gp"
    code, _, _ = run(["mix", "--model", "ising1d", "--sizes", "3", "--beta", "0.5", "--times", "0:2:1",
                      "--samples", "1", "--out", str(csv), "--gnuplot-script", str(gp)], capsys)
    assert code == 0
    script = gp.read_text()
    assert str(csv) in script and "set logscale y" in script and "every ::1" in script
    rows = csv.read_text().splitlines()[2:]
    assert all(float(r.split(",")[6]) <= float(r.split(",")[7]) for r in rows)


def test_other_subcommands(capsys):
    code, out, _ = run(["detect", "--model", "ising1d", "--sizes", "4", "--beta", "0.5"], capsys)
    assert code == 0 and json.loads(out.splitlines()[1])["pass"]
    code, out, _ = run(["knabe", "--model", "ising1d", "--sizes", "4", "--beta", "0",
                        "--threshold-scan", "0:1:0.5"], capsys)
    assert code == 0
    recs = [json.loads(l) for l in out.splitlines()[1:]]
    assert recs[0]["certified"] and recs[-1]["record"] == "threshold"
    code, out, _ = run(["decompose", "--shape", "16", "--pairs", "2", "--overlap", "1"], capsys)
    assert code == 0 and len(json.loads(out.splitlines()[1])["pairs"]) == 2
    assert run(["decompose", "--shape", "3", "--pairs", "2", "--overlap", "1"], capsys)[0] == 1


def test_toric_certify_skips_oversized_expectations(capsys):
    code, out, _ = run(["certify", "--model", "toric", "--beta", "0.3", "--sampler", "heatbath"], capsys)
    assert code == 0
    records = [json.loads(l) for l in out.splitlines()[1:]]
    assert records[0]["record"] == "sampler" and records[0]["pass"]
    assert any("skipped" in r for r in records if r["record"] == "conditional_expectation")


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "gibbsgap", "decompose", "--shape", "9", "--pairs", "1",
                           "--overlap", "2"], capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and proc.stdout.startswith('{"schema"')
