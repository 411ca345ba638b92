import csv
import json

import pytest

from levy_mv.cli import SUBCOMMANDS, build_parser, main

FLAGS = ["--config", "--seed", "--out", "--threads", "--paper-scale", "--levels", "--reps",
         "--particles"]


def write_config(tmp_path, **data):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(data))
    return path


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_every_flag(sub, capsys):
    with pytest.raises(SystemExit) as info:
        build_parser().parse_args([sub, "--help"])
    assert info.value.code == 0
    text = capsys.readouterr().out
    for flag in FLAGS:
        assert flag in text
    # every registered option is documented in --help
    sub_parser = build_parser()._subparsers._group_actions[0].choices[sub]
    for action in sub_parser._actions:
        for opt in action.option_strings:
            assert opt in text


def test_simulate_zero_model_writes_zeros(tmp_path):
    cfg = write_config(tmp_path, model="zero", x0=[0.0], N=5, T=1.0)
    out = tmp_path / "sim.csv"
    assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out)
    assert rows[0] == ["particle", "x1"]
    assert len(rows) == 6
    assert all(float(r[1]) == 0.0 for r in rows[1:])
    assert (tmp_path / "sim.manifest.json").exists()


def test_convergence_degenerate_fit_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, model="zero", x0=[0.0], N=2, T=1.0, M=2, levels=[1, 2])
    out = tmp_path / "conv.csv"
    assert main(["convergence", "--config", str(cfg), "--out", str(out)]) == 2
    assert "degenerate" in capsys.readouterr().err
    assert out.exists()


@pytest.mark.parametrize("argv", [
    ["simulate", "--bogus"],
    ["teleport"],
    [],
    ["steps", "--levels", "3..1"],
    ["steps", "--threads", "0"],
    ["steps", "--seed", "-1"],
])
def test_usage_errors_exit_1(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_config_errors_exit_1(tmp_path):
    bad = write_config(tmp_path, N=-1)
    assert main(["simulate", "--config", str(bad)]) == 1
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 1


def test_numeric_failure_exits_2(tmp_path):
    cfg = write_config(tmp_path, x0=[1e200], N=2, T=1.0, level=1)
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")]) == 2


def test_seed_precedence(tmp_path, monkeypatch):
    from levy_mv.cli import resolve_config
    parser = build_parser()
    monkeypatch.setenv("LEVY_MV_SEED", "77")
    assert resolve_config(parser.parse_args(["steps"]), "steps").seed == 77
    assert resolve_config(parser.parse_args(["steps", "--seed", "3"]), "steps").seed == 3
    cfg = write_config(tmp_path, seed=9)
    assert resolve_config(parser.parse_args(["steps", "--config", str(cfg)]), "steps").seed == 9
    monkeypatch.delenv("LEVY_MV_SEED")
    assert resolve_config(parser.parse_args(["steps"]), "steps").seed == 0


def test_overrides(tmp_path):
    from levy_mv.cli import resolve_config
    args = build_parser().parse_args(["convergence", "--paper-scale", "--reps", "7",
                                      "--levels", "2..4"])
    cfg = resolve_config(args, "convergence")
    assert (cfg.N, cfg.M, cfg.levels, cfg.experiment) == (500, 7, [2, 3, 4], "convergence")
    args = build_parser().parse_args(["steps", "--levels", "1,3", "--particles", "9"])
    cfg = resolve_config(args, "steps")
    assert (cfg.N, cfg.levels) == (9, [1, 3])


def test_repeat_invocation_identical_files(tmp_path):
    args = ["steps", "--seed", "4", "--reps", "3", "--particles", "3", "--levels", "1..2"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b), "--threads", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_convergence_prints_beta_and_svg(tmp_path, capsys):
    out, svg = tmp_path / "c.csv", tmp_path / "c.svg"
    cfg = write_config(tmp_path, T=1.0)
    code = main(["convergence", "--config", str(cfg), "--seed", "2", "--reps", "3",
                 "--particles", "4", "--levels", "1..3", "--out", str(out), "--svg", str(svg)])
    assert code == 0
    assert "beta =" in capsys.readouterr().out
    header = read_rows(out)[0]
    assert {"level", "mse", "log2_mse", "fitted_log2_mse"} <= set(header)
    assert svg.read_text().startswith("<svg")


def test_validate_prints_each_condition(capsys):
    assert main(["validate", "--points", "300"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 9 and all(line.startswith("PASS") for line in lines)
