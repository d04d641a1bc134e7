import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from dgns import cli
from dgns.cli_io import (ConfigError, RunConfig, TableRow, fields_to_vtu, fitted_order, format_table,
                         observed_orders, read_table, round_sig, run_table, table_to_csv, write_fields)
from dgns.forms import Discretization
from dgns.problems import get_problem
from dgns.projection import ProjectionConfig, Projector
from dgns.verify import Check, unit_mesh

REFERENCE_DTS = (0.2, 0.1, 0.05, 0.025, 0.0125, 0.00625)


# configuration -------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(dts=()), dict(dts=(0.1, 0.2)), dict(dts=(0.1, 0.1)), dict(dts=(-0.1,)),
                                dict(degree=0), dict(problem="nope"), dict(scheme="pisoo"),
                                dict(projector="l2"), dict(dims=(0, 4)), dict(T=0.0)])
def test_invalid_configs_rejected(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_omega_override_guard():
    with pytest.raises(ConfigError):
        RunConfig(omega=1.0)
    assert RunConfig(omega=1.5).omega == 1.5
    assert RunConfig(stepper="implicit_euler", omega=1.0).omega == 1.0
    assert RunConfig(omega=1.0, allow_omega_override=True).scheme_config(0.1, 1.0).omega_value == 1.0


def test_ini_round_trip():
    cfg = RunConfig(problem="mixed", dims=(8, 8), dts=(0.2, 0.1, 0.05), projector="rt", rt_degree=0,
                    tau_d=0.01, seed=3, T=0.5)
    assert RunConfig.from_ini(cfg.to_ini()) == cfg


def test_ini_sections_and_errors():
    text = "[problem]\nproblem = dirichlet\n[scheme]\ndts = 0.1, 0.05\nscheme = ipcs\n[mesh]\ndims = 4 4\n"
    cfg = RunConfig.from_ini(text)
    assert (cfg.problem, cfg.dts, cfg.scheme, cfg.dims) == ("dirichlet", (0.1, 0.05), "ipcs", (4, 4))
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[physics]\nre = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[scheme]\nsteps = 3\n")
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[discretization]\ndegree = two\n")


# tables ------------------------------------------------------------------

def _rows():
    rows = [TableRow(dt, round_sig(e), round_sig(2 * e), round_sig(3 * e))
            for dt, e in zip(REFERENCE_DTS[:4], (3.89336e-2, 1.00443e-2, 2.54563e-3, 6.40802e-4 * math.pi))]
    rows.append(TableRow(0.0125, status="failed: solver"))
    observed_orders(rows)
    return rows


def test_order_columns():
    rows = _rows()
    assert rows[0].order_l2_v is None
    assert rows[1].order_l2_v == pytest.approx(math.log2(3.89336e-2 / 1.00443e-2), abs=1e-5)
    assert rows[4].order_l2_v is None and rows[4].failed


def test_two_rows_give_one_order():
    rows = [TableRow(0.2, 1.0, 1.0, 1.0), TableRow(0.1, 0.25, 0.5, 0.5)]
    observed_orders(rows)
    assert rows[0].order_l2_v is None and rows[1].order_l2_v == 2.0 and rows[1].order_h1_v == 1.0


def test_csv_round_trip_is_exact():
    rows = _rows()
    back = read_table(table_to_csv(rows))
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        for key in ("dt", "l2_v", "h1_v", "l2_p", "order_l2_v", "status"):
            x, y = getattr(a, key), getattr(b, key)
            assert (x == y) or (isinstance(x, float) and math.isnan(x) and math.isnan(y))
    assert "2.54563e-03" in table_to_csv(rows)
    assert "failed: solver" in format_table(rows)


def test_fitted_order():
    dts = np.array([0.2, 0.1, 0.05])
    assert fitted_order(dts, 3 * dts ** 1.5) == pytest.approx(1.5)


def test_table_sweep_emits_one_row_per_dt(tmp_path):
    cfg = RunConfig(problem="taylor_green_2d", dims=(2, 2), degree=1, dts=REFERENCE_DTS, T=0.2,
                    output=str(tmp_path))
    rows = run_table(cfg)
    assert [r.dt for r in rows] == list(REFERENCE_DTS)
    assert all(not r.failed for r in rows)


def test_table_needs_exact_solution():
    with pytest.raises(ConfigError):
        run_table(RunConfig(problem="taylor_green_3d", dims=(2, 2, 2), dts=(0.1,), T=0.1))


def test_failed_run_marks_row_and_continues(monkeypatch):
    from dgns import cli_io

    real = cli_io.run_simulation

    def flaky(disc, problem, scheme, projection):
        if scheme.dt == 0.1:
            raise ArithmeticError("diverged")
        return real(disc, problem, scheme, projection)

    monkeypatch.setattr(cli_io, "run_simulation", flaky)
    rows = run_table(RunConfig(problem="dirichlet", dims=(2, 2), degree=1, dts=(0.2, 0.1, 0.05), T=0.2))
    assert [r.failed for r in rows] == [False, True, False]
    assert rows[2].order_l2_v is None


# VTK -----------------------------------------------------------------------

def _rt_fields():
    disc = Discretization(unit_mesh((2, 2), "dirichlet"), 1)
    proj = Projector(disc, ProjectionConfig("rt"))
    w = np.random.default_rng(0).standard_normal(disc.vspace.ndofs)
    g = get_problem("dirichlet").g
    v = proj.project_rt(w, g, 0.0).v
    p = np.random.default_rng(1).standard_normal(disc.pspace.ndofs)
    return disc, v, p, g


def test_vtu_structure_on_2x2_mesh():
    disc, v, p, g = _rt_fields()
    root = ET.fromstring(fields_to_vtu(disc, v, p, g, 0.0))
    piece = root.find("UnstructuredGrid/Piece")
    assert piece.get("NumberOfCells") == "4" and piece.get("NumberOfPoints") == "16"
    arrays = {a.get("Name"): np.array(a.text.split(), float) for a in root.iter("DataArray")}
    np.testing.assert_array_equal(arrays["connectivity"], np.arange(16))
    np.testing.assert_array_equal(arrays["offsets"], [4, 8, 12, 16])
    np.testing.assert_array_equal(arrays["types"], [9] * 4)
    pts = arrays["Points"].reshape(-1, 3)
    # the first cell is [0, 0.5]^2 with corners in counter-clockwise order
    np.testing.assert_allclose(pts[:4, :2], [[0, 0], [0.5, 0], [0.5, 0.5], [0, 0.5]])
    assert {"velocity", "pressure", "divergence", "divergence_max", "mass_residual"} <= set(arrays)
    assert arrays["velocity"].size == 48 and arrays["mass_residual"].size == 4
    assert np.abs(arrays["mass_residual"]).max() <= 1e-11


def test_vtu_output_is_deterministic(tmp_path):
    texts = []
    for name in ("a.vtu", "b.vtu"):
        disc, v, p, g = _rt_fields()
        path = write_fields(tmp_path / name, disc, v, p, g, 0.0)
        texts.append(open(path, "rb").read())
    assert texts[0] == texts[1]


# command line ----------------------------------------------------------------

def test_cli_run_and_export(tmp_path, capsys):
    args = ["--problem", "dirichlet", "--dims", "2,2", "--degree", "1", "--dts", "0.1", "--T", "0.2",
            "--output", str(tmp_path)]
    assert cli.main(["run"] + args) == 0
    assert (tmp_path / "history_dt0.1.csv").exists() and (tmp_path / "config.ini").exists()
    assert "l2_v=" in capsys.readouterr().out
    assert cli.main(["export", "--every", "1"] + args) == 0
    assert sorted(p.name for p in tmp_path.glob("*.vtu")) == ["fields_00001.vtu", "fields_00002.vtu"]
    assert RunConfig.from_file(tmp_path / "config.ini").problem == "dirichlet"


def test_cli_table(tmp_path):
    args = ["table", "--problem", "dirichlet", "--dims", "2,2", "--degree", "1", "--dts", "0.2,0.1",
            "--T", "0.2", "--output", str(tmp_path)]
    assert cli.main(args) == 0
    assert len(read_table(str(tmp_path / "table.csv"))) == 2


def test_cli_rejects_abbreviated_flags():
    with pytest.raises(SystemExit):
        cli.main(["run", "--t", "0.2"])


def test_cli_config_errors_exit_2(capsys):
    assert cli.main(["run", "--omega", "2"]) == 2
    assert cli.main(["run", "--dts", "0.1,0.2"]) == 2
    assert "config error" in capsys.readouterr().err


def test_cli_verify_exit_code(monkeypatch, capsys):
    from dgns import verify

    monkeypatch.setattr(verify, "run_checks", lambda seed: [Check("ok", 0.0, 1.0, True)])
    assert cli.main(["verify"]) == 0
    monkeypatch.setattr(verify, "run_checks", lambda seed: [Check("ok", 0.0, 1.0, True),
                                                            Check("bad", 2.0, 1.0, False)])
    assert cli.main(["verify"]) == 1
    assert "FAIL" in capsys.readouterr().out
