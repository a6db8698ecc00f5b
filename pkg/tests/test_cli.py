import json
import subprocess
import sys
import textwrap

import pytest

from shearkin import cli
from shearkin import diagnostics as dg


def write(tmp_path, text, name="cfg.toml"):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text).lstrip())
    return p


def run_main(args, tmp_path, capsys):
    code = cli.main(args + ["--out", str(tmp_path / "runs")])
    return code, capsys.readouterr()


def run_dir(out):
    line = [x for x in out.out.splitlines() if x.startswith("run directory:")][-1]
    return line.split(":", 1)[1].strip()


# ------------------------------------------------------------- config parsing


def test_minimal_config_defaults(tmp_path):
    cfg = cli.parse_config(write(tmp_path, '[shear]\nmu = 0.5\n'), overrides={"mode": "dsmc"})
    assert cfg.mu == 0.5 and cfg.alpha == (1.0, 0.0) and cfg.seed == 0
    r = cfg.resolved()
    assert (r.t_start, r.t_end, r.n_out) == (0.0, 5.0, 26)
    assert cli.ExperimentConfig(mode="fp").resolved().t_start == 1.0
    assert cli.ExperimentConfig(mode="fp", mu=0.0).resolved().t_end == 10.0


def test_non_unit_alpha_named(tmp_path):
    p = write(tmp_path, """
        [shear]
        mu = 1.0
        alpha = [1.0, 0.5]
    """)
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(p)
    (e,) = ei.value.errors
    assert e.line == 3 and e.field == "shear.alpha" and "unit" in e.message


def test_unknown_key_suggests_nearest(tmp_path):
    p = write(tmp_path, "[grid]\nnn = 64\n")
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(p)
    e = ei.value.errors[0]
    assert e.line == 2 and e.field == "grid.nn" and "did you mean 'n'" in e.message


def test_unknown_section_and_criterion(tmp_path):
    p = write(tmp_path, """
        [shaer]
        mu = 1
        [tolerances]
        "fp.covarience" = 1e-3
    """)
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(p)
    msgs = [str(e) for e in ei.value.errors]
    assert "did you mean 'shear'" in msgs[0]
    assert "fp.covariance" in msgs[1] and "line 4" in msgs[1]


def test_all_errors_collected_in_line_order(tmp_path):
    p = write(tmp_path, """
        [ensemble]
        seed = -1
        particles = 10
        [shear]
        beta = [1.0, 0.0]
        [time]
        t_start = 5.0
        t_end = 1.0
    """)
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(p)
    lines = [e.line for e in ei.value.errors]
    fields = {e.field for e in ei.value.errors}
    assert lines == sorted(lines) and len(lines) == 4
    assert fields == {"ensemble.seed", "ensemble.particles", "shear.beta", "time.t_end"}


def test_bad_toml_reports_line(tmp_path):
    p = write(tmp_path, "[shear]\nmu = = 1\n")
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(p)
    assert ei.value.errors[0].line == 2


def test_flags_override_config(tmp_path):
    p = write(tmp_path, "[shear]\nmu = 0.5\n[ensemble]\nseed = 3\n")
    cfg = cli.parse_config(p, overrides={"seed": 9, "mu": None})
    assert cfg.seed == 9 and cfg.mu == 0.5


def test_bad_flag_value_is_config_error(tmp_path):
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config(None, overrides={"alpha": [2.0, 0.0]})
    assert ei.value.errors[0].line is None and ei.value.errors[0].field == "--alpha"


def test_science_hash_ignores_output_location():
    a = cli.ExperimentConfig(out_root="x", run_id="a").science_dict()
    b = cli.ExperimentConfig(out_root="y").science_dict()
    assert dg.config_hash(a) == dg.config_hash(b)


# ------------------------------------------------------------- exit codes


def test_usage_errors_exit_2(tmp_path, capsys):
    assert cli.main(["nonsense"]) == 2
    assert cli.main(["fp", "--grid-n", "abc"]) == 2
    p = write(tmp_path, "[shear]\nalpha = [3, 0]\n")
    assert cli.main(["fp", "--config", str(p)]) == 2
    assert "shear.alpha" in capsys.readouterr().err
    assert cli.main(["report", "--input", str(tmp_path)]) == 2


def test_failing_check_exits_1(tmp_path, capsys):
    p = write(tmp_path, '[tolerances]\n"moments.consistency" = 1e-30\n')
    code, out = run_main(["moments", "--config", str(p)], tmp_path, capsys)
    assert code == 1
    assert "FAIL  moments.consistency" in out.out


def test_moments_run_passes(tmp_path, capsys):
    code, out = run_main(["moments"], tmp_path, capsys)
    assert code == 0, out.out
    rd = run_dir(out)
    man = json.loads(open(f"{rd}/manifest.json").read())
    ids = [v["id"] for v in man["verdicts"]]
    assert ids == sorted(dg.criteria_for("moments", dg.load_criteria()))
    assert all(v["status"] == "PASS" for v in man["verdicts"])


def test_short_window_skips(tmp_path, capsys):
    code, out = run_main(["moments", "--t-end", "100"], tmp_path, capsys)
    assert code == 0
    assert "SKIP  moments.h4_exponent" in out.out


def test_fp_mu0_maxwellian(tmp_path, capsys):
    p = write(tmp_path, """
        [shear]
        mu = 0.0
        [grid]
        n = 48
        [time]
        t_end = 2.0
        outputs = 11
        [fp]
        init = "maxwellian"
    """)
    code, out = run_main(["fp", "--config", str(p)], tmp_path, capsys)
    assert code == 0, out.out
    for cid in ("fp0.mass", "fp0.momentum", "fp0.energy", "fp0.maxwellian_drift"):
        assert f"PASS  {cid}" in out.out
    rd = run_dir(out)
    values, L, t = dg.read_field(f"{rd}/fields/final.bin")
    assert values.shape == (48, 48) and L == 8.0 and t == 2.0


# ------------------------------------------------------------- dsmc, determinism, report


@pytest.fixture(scope="module")
def dsmc_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("dsmc")
    args = ["dsmc", "--seed", "7", "--n", "3000", "--t-end", "0.4", "--outputs", "3", "--mu", "0.5"]
    dirs = []
    for k in range(2):
        assert cli.main(args + ["--out", str(root / f"r{k}")]) == 0
        (d,) = (root / f"r{k}").iterdir()
        dirs.append(d)
    return dirs


def test_dsmc_bit_identical(dsmc_runs):
    a, b = dsmc_runs
    assert a.name == b.name  # same config hash
    for rel in ("fields/particles.bin", "series/dsmc.csv", "manifest.json"):
        assert (a / rel).read_bytes() == (b / rel).read_bytes()


def test_report_reproduces(dsmc_runs, capsys):
    man, same = cli.report(dsmc_runs[0])
    assert same
    assert cli.main(["report", "--input", str(dsmc_runs[0])]) == 0
    assert "identical" in capsys.readouterr().out


def test_report_with_stricter_criteria(dsmc_runs, tmp_path, capsys):
    reg = (tmp_path / "c.toml")
    reg.write_text('[criteria."dsmc.mass"]\nmode = "dsmc"\ncheck = "max_abs_below"\nthreshold = 0.0\n'
                   '[criteria."dsmc.theta_bound"]\nmode = "dsmc"\ncheck = "at_most"\nthreshold = -1e9\n')
    assert cli.main(["report", "--input", str(dsmc_runs[0]), "--criteria", str(reg)]) == 1
    assert "FAIL  dsmc.theta_bound" in capsys.readouterr().out


def test_env_output_root(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "envroot"))
    assert cli.main(["moments", "--t-end", "10", "--run-id", "quick"]) == 0
    assert (tmp_path / "envroot" / "quick" / "manifest.json").is_file()


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "shearkin", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "moments" in r.stdout
