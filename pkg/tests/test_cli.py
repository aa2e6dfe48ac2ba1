import json

import pytest

from asmc.cli import load_config, main, render
from asmc.errors import ConfigError
from asmc.experiments import resolve_config, run_experiment

SMALL_FIG3 = {"N": 100, "steps": 20, "trace_every": 10, "replicates": 3}
SMALL_SWEEP = {"N_list": [50, 100], "steps": 10, "replicates": 3}


def _write(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


def _run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_fig3_success_and_layout(tmp_path, capsys):
    code, out, _ = _run(["fig3_2d", "--config", _write(tmp_path, "c.json", SMALL_FIG3), "--seed", "7"], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "schema,asmc.fig3_2d/v1"
    assert lines[1].startswith("# config: ")
    cfg = json.loads(lines[1][len("# config: "):])
    assert cfg["seed"] == 7 and cfg["N"] == 100
    assert lines[2].split(",")[0] == "method"
    methods = {ln.split(",")[0] for ln in lines[3:]}
    assert methods == {"asmc", "lmc"}


def test_byte_identical_across_threads(tmp_path):
    cfg = _write(tmp_path, "c.json", SMALL_SWEEP)
    outs = []
    for t in ("1", "3"):
        path = tmp_path / f"out{t}.csv"
        assert main(["sweep_n", "--config", cfg, "--threads", t, "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_replay_from_csv(tmp_path):
    first = tmp_path / "a.csv"
    second = tmp_path / "b.csv"
    assert main(["fig3_2d", "--config", _write(tmp_path, "c.json", SMALL_FIG3), "--out", str(first)]) == 0
    assert main(["fig3_2d", "--config", str(first), "--out", str(second)]) == 0
    assert first.read_bytes() == second.read_bytes()


def test_seed_changes_output(tmp_path, capsys):
    cfg = _write(tmp_path, "c.json", SMALL_FIG3)
    _, a, _ = _run(["fig3_2d", "--config", cfg, "--seed", "1"], capsys)
    _, b, _ = _run(["fig3_2d", "--config", cfg, "--seed", "2"], capsys)
    assert a.splitlines()[3:] != b.splitlines()[3:]


@pytest.mark.parametrize("argv_extra,cfg", [
    ([], {"bogus": 1}),
    (["--seed", "-1"], {}),
    (["--replicates", "0"], {}),
    ([], {"eta1": 0.5}),
    ([], {"weights": [0.5]}),
    (["--threads", "0"], {}),
])
def test_config_errors_exit_2(tmp_path, capsys, argv_extra, cfg):
    code, out, err = _run(["fig3_2d", "--config", _write(tmp_path, "c.json", cfg), *argv_extra], capsys)
    assert code == 2 and out == "" and "config error" in err


def test_malformed_and_missing_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert _run(["fig3_2d", "--config", str(bad)], capsys)[0] == 2
    assert _run(["fig3_2d", "--config", str(tmp_path / "nope.json")], capsys)[0] == 2


def test_config_for_other_experiment(tmp_path, capsys):
    path = _write(tmp_path, "c.json", {"experiment": "sweep_n"})
    assert _run(["fig3_2d", "--config", path], capsys)[0] == 2


def test_numeric_abort_exit_3(tmp_path, capsys):
    cfg = {"variances": [[1e-5, 1e-5], [1e-5, 1e-5]], "dt": 0.1, "N": 10, "steps": 200,
           "replicates": 2, "eta1": 2.0, "M": 2}
    out = tmp_path / "o.csv"
    code, _, err = _run(["fig3_2d", "--config", _write(tmp_path, "c.json", cfg), "--out", str(out)], capsys)
    assert code == 3 and "non-finite" in err
    assert out.read_text().startswith("schema,asmc.fig3_2d/aborted")


def test_sweep_n_single_value_has_no_slope():
    t = run_experiment("sweep_n", {"N_list": [50], "steps": 10, "replicates": 2})
    assert [r[0] for r in t.rows] == [50]


def test_sweep_n_duplicates_merged_and_slope_row():
    t = run_experiment("sweep_n", {"N_list": [100, 50, 100], "steps": 10, "replicates": 2})
    assert [r[0] for r in t.rows] == [50, 100, "slope"]


def test_sweep_mt_rejects_non_divisor():
    with pytest.raises(ConfigError):
        run_experiment("sweep_mt", {"M_list": [3], "budget_steps": 10, "replicates": 1})


def test_sweep_mt_small(capsys):
    t = run_experiment("sweep_mt", {"dimension": 2, "M_list": [1, 2], "budget_steps": 20, "N": 50,
                                    "replicates": 2})
    assert [r[0] for r in t.rows] == [1, 2]
    assert all(r[2] == 20 for r in t.rows)


def test_local_model_theorem_row():
    t = run_experiment("local_model_theorem", {"replicates": 3})
    row = dict(zip(t.columns, t.rows[0]))
    assert row["C_r"] >= 1 and row["within_bound"] in (0, 1)
    assert row["reference"] == pytest.approx(0.5)


def test_resolve_config_rejects_unknown_experiment():
    with pytest.raises(ConfigError):
        resolve_config("nope", {})


def test_render_float_roundtrip():
    t = run_experiment("sweep_n", {"N_list": [50], "steps": 5, "replicates": 2})
    text = render(t)
    value = float(text.splitlines()[3].split(",")[1])
    assert value == t.rows[0][1]


def test_load_config_csv_without_comment(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("schema,asmc.fig3_2d/v1\nmethod\n")
    with pytest.raises(ConfigError):
        load_config(str(p))


def test_fig3_single_replicate_bands_collapse():
    t = run_experiment("fig3_2d", {"N": 50, "steps": 10, "trace_every": 5, "replicates": 1, "lmc": False})
    for row in t.rows:
        _, _, _, mean, q25, q50, q75, *_ = row
        assert mean == q25 == q50 == q75
