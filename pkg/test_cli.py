# test_cli.py
import io
import json
import math

import pandas as pd
import pytest

from app import cli
from app.services import export_service, linres_service, meanfield_service


@pytest.fixture(autouse=True)
def _in_tmp(tmp_path, monkeypatch):
    # keeps reservoirforge.log out of the checkout
    monkeypatch.chdir(tmp_path)


def _run(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _table(text: str) -> pd.DataFrame:
    return pd.read_csv(io.StringIO(text), skiprows=1)


# --- Grids ---

def test_parse_grid_forms():
    assert cli.parse_grid("0:1:5") == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert cli.parse_grid("0.2,1,inf") == [0.2, 1.0, math.inf]
    for bad in ("0:1", "a,b", "0:1:0"):
        with pytest.raises(cli.ParameterError) as excinfo:
            cli.parse_grid(bad, "mu")
        assert excinfo.value.codes == ["BadGrid"]


# --- Datasets ---

def test_phase_diagram_file_output(tmp_path):
    out = tmp_path / "pd.csv"
    code = cli.main(["phase-diagram", "--mu", "0:2:5", "--kappa", "0.2,1.0", "--out", str(out)])
    assert code == 0
    text = out.read_text()
    meta = export_service.read_metadata(text)
    assert meta["command"] == "phase-diagram" and meta["tool"] == "reservoirforge"
    assert meta["params"]["gammaP"] == 100.0
    table = _table(text)
    assert list(table.columns) == cli.COLUMNS["phase-diagram"]
    assert len(table) == 10
    assert list(table["kappa"][:5]) == [0.2] * 5, "rows must be kappa-major"
    assert set(table["phase"]) == {"disordered", "u1", "u1xz2"}


def test_reruns_are_byte_identical(tmp_path):
    argv = ["variances", "--mu", "0.25,0.5", "--kappa", "0.5,inf"]
    out = tmp_path / "v.csv"
    assert cli.main(argv + ["--out", str(out)]) == 0
    first = out.read_bytes()
    assert cli.main(argv + ["--out", str(out)]) == 0
    assert out.read_bytes() == first


def test_steady_state_on_stdout(capsys):
    code, out, err = _run(capsys, "steady-state", "--mu", "2", "--kappa", "1")
    assert code == 0, err
    row = _table(out).iloc[0]
    assert row["phase"] == "u1"
    assert row["amp_signal"] == pytest.approx(1.0, abs=1e-9)
    assert row["pump_im"] == pytest.approx(1.0, abs=1e-9)


def test_params_file_and_flag_precedence(tmp_path, capsys):
    path = tmp_path / "point.params"
    path.write_text("# a U1 point\nmu = 2\nkappa = 1\n")
    code, out, _ = _run(capsys, "steady-state", "--params-file", str(path))
    assert code == 0 and _table(out).iloc[0]["phase"] == "u1"
    code, out, _ = _run(capsys, "steady-state", "--params-file", str(path), "--mu", "0.5")
    assert code == 0 and _table(out).iloc[0]["phase"] == "disordered"


def test_variances_json(capsys):
    code, out, _ = _run(capsys, "variances", "--mu", "0.5", "--kappa", "1", "--method", "closed-form",
                          "--format", "json")
    assert code == 0
    payload = json.loads(out)
    assert payload["metadata"]["command"] == "variances"
    rows = {r["quadrature"]: r for r in payload["rows"]}
    assert set(rows) == {"x+", "x-", "y+", "y-"}
    assert rows["x+"]["normalized"] == pytest.approx(8.0 / 15.0, rel=1e-9)


def test_eigenflow_branches(capsys):
    code, out, _ = _run(capsys, "eigenflow", "--kappa", "0.5", "--mu", "0.5,1.5", "--phases", "disordered,u1")
    assert code == 0
    table = _table(out)
    counts = table.groupby(["mu", "phase"]).size().to_dict()
    assert counts == {(0.5, "disordered"): 10, (1.5, "disordered"): 10, (1.5, "u1"): 10}, \
        "u1 below threshold is out of regime and skipped"


def test_eigenflow_rows_carry_threshold_and_exceptional_point(capsys):
    code, out, _ = _run(capsys, "eigenflow", "--kappa", "0.2,2.5", "--mu", "0.3", "--phases", "disordered")
    assert code == 0
    table = _table(out)
    for kappa, group in table.groupby("kappa"):
        assert group["mu_cr"].nunique() == 1 and group["mu_ep"].nunique(dropna=False) == 1
        assert group["mu_cr"].iloc[0] == pytest.approx(meanfield_service.critical_drive(kappa))
        mu_ep = linres_service.exceptional_point_drive(kappa)
        if mu_ep is None:
            assert group["mu_ep"].isna().all(), f"kappa={kappa} has no exceptional point"
        else:
            assert group["mu_ep"].iloc[0] == pytest.approx(mu_ep)
    low = table[table["kappa"] == 0.2].iloc[0]
    assert low["mu_cr"] == pytest.approx(0.4)
    assert low["mu_ep"] == pytest.approx(math.sqrt(1.6) - 0.4)
    assert table[table["kappa"] == 2.5]["mu_ep"].isna().all()


def test_negativity_with_comparator(capsys):
    code, out, _ = _run(capsys, "negativity", "--mu", "0.5,1.0", "--nth", "0", "--markovian-comparator")
    assert code == 0
    table = _table(out)
    assert len(table) == 4
    assert (table["kappa"] == math.inf).sum() == 2
    memory = table[table["kappa"] == 0.2]
    assert (memory["e_n"] > 0).all()


def test_simulate_with_dump(tmp_path, capsys):
    dump = tmp_path / "traj.csv"
    code, out, err = _run(
        capsys, "simulate", "--gammaP", "10", "--g", "0.1", "--kappa", "1", "--mu", "2", "--dt", "0.01",
        "--t-burn", "60", "--t-sample", "25", "--n-traj", "2", "--seed", "5", "--dump-trajectory", str(dump),
    )
    assert code == 0, err
    meta = export_service.read_metadata(out)
    assert meta["seed"] == 5 and meta["sim_config"]["n_traj"] == 2
    table = _table(out)
    assert list(table.columns) == cli.COLUMNS["simulate"] and len(table) == 1
    assert table.iloc[0]["amp_mean"] == pytest.approx(1.0, abs=0.05)
    assert dump.exists() and pd.read_csv(dump).shape[1] == 7


# --- Exit codes ---

def test_bad_parameter_exits_2(capsys):
    code, out, err = _run(capsys, "steady-state", "--gammaP", "-1")
    assert code == 2 and out == ""
    payload = json.loads(err)
    assert payload["error"] == "ParameterError"
    assert "NonPositiveRate" in [v["code"] for v in payload["violations"]]


def test_bad_grid_exits_2(capsys):
    code, _, err = _run(capsys, "phase-diagram", "--mu", "0:1:x")
    assert code == 2
    assert json.loads(err)["violations"][0]["code"] == "BadGrid"


def test_step_too_large_exits_2(capsys):
    code, _, err = _run(capsys, "simulate", "--kappa", "1", "--mu", "2")
    assert code == 2
    assert "StepTooLarge" in [v["code"] for v in json.loads(err)["violations"]]


def test_unwritable_output_exits_4(tmp_path, capsys):
    code, _, err = _run(capsys, "steady-state", "--out", str(tmp_path / "missing" / "x.csv"))
    assert code == 4
    assert json.loads(err)["error"] == "OutputError"


def test_missing_params_file_exits_4(tmp_path, capsys):
    code, _, _ = _run(capsys, "steady-state", "--params-file", str(tmp_path / "nope.params"))
    assert code == 4


def test_usage_errors_exit_2(capsys):
    assert _run(capsys, "no-such-command")[0] == 2
    assert _run(capsys, "steady-state", "--kappa", "1", "--tau-r", "1")[0] == 2


# --- Help ---

@pytest.mark.parametrize("command", sorted(cli.COLUMNS))
def test_help_documents_every_column(command, capsys):
    code, out, _ = _run(capsys, command, "--help")
    assert code == 0
    for column in cli.COLUMNS[command]:
        assert column in out, f"{command} --help does not mention {column}"


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
