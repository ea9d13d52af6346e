import csv
import subprocess
import sys

import numpy as np
import pytest

from thetaflow.cli import main, parse_grid_spec
from thetaflow.config import RunConfig, dump_config, parse_config, parse_config_text
from thetaflow.errors import ConfigurationError
from thetaflow.evolve import checkpoint_save
from thetaflow.initial import make_initial, single_mode_index
from thetaflow.ledger import energy_functional, theorem_norm
from thetaflow.littlewood_paley import build_filter_bank

SMALL = "N = 32\nT = 0.02\nc0 = 1e-3\nband_lo = -2\nband_hi = 1\nresidual_stride = 5\n"


def test_empty_file_gives_defaults():
    cfg = parse_config_text("")
    assert (cfg.n, cfg.N, cfg.L, cfg.gamma, cfg.mu, cfg.lam, cfg.A, cfg.j0, cfg.dt, cfg.T) == \
        (2, 128, 4.0, 1.4, 1.0, 0.0, 1.0, 1, 1e-3, 10.0)


@pytest.mark.parametrize("text,where", [
    ("gamma=0.9", "adiabatic"),
    ("N = 32\nfoo = 1", ":2:"),
    ("N = 32\nN = 64", "duplicate"),
    ("N = abc", ":1:"),
    ("justtext", ":1:"),
    ("c0 = -1", "c0"),
    ("kind = vortex", "kind"),
    ("band_lo = 3\nband_hi = 1", "band"),
    ("kind = checkpoint", "checkpoint"),
    ("dt = 0", "dt"),
])
def test_config_errors(text, where):
    with pytest.raises(ConfigurationError, match=where):
        parse_config_text(text, "cfg")


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "nope.cfg")


def test_lambda_alias_and_comments():
    cfg = parse_config_text("# header\nlambda = 0.5   # bulk\n\nmu = 2\n")
    assert cfg.lam == 0.5 and cfg.mu == 2.0


def test_dump_round_trip():
    cfg = RunConfig(N=64, L=2.5, gamma=1.1, c0=1.0 / 3.0, seed=9, kind="taylor-green", T=0.1, dt=1e-3)
    text = dump_config(cfg)
    assert parse_config_text(text) == cfg
    assert dump_config(parse_config_text(text)) == text


def test_dump_config_command(tmp_path, capsys):
    path = tmp_path / "c.cfg"
    path.write_text(dump_config(RunConfig(c0=0.1 + 0.2)))
    assert main(["dump-config", str(path)]) == 0
    assert capsys.readouterr().out == path.read_text()


@pytest.mark.parametrize("kind", ["random-band", "slow-branch", "taylor-green", "single-mode"])
def test_initial_normalization(kind):
    cfg = RunConfig(N=32, kind=kind, c0=1e-3, band_lo=-1, band_hi=0, seed=4)
    st = make_initial(cfg)
    bank = build_filter_bank(cfg.grid(), cfg.j0)
    E0 = energy_functional([(0.0, st)], bank, cfg.params())[0].E
    assert E0 == pytest.approx(1e-3, rel=1e-10)
    assert st.a.coeffs[cfg.grid().zero] == 0 and st.b.coeffs[cfg.grid().zero] == 0
    assert max(x.hermitian_defect() for x in (st.a, st.u, st.b)) < 1e-14


def test_initial_deterministic_and_zero():
    cfg = RunConfig(N=32, seed=3, band_lo=-1, band_hi=0)
    a, b = make_initial(cfg), make_initial(cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays(), b.arrays()))
    z = make_initial(cfg.replace(c0=0.0))
    assert all(np.abs(x).max() == 0 for x in z.arrays())


def test_single_mode_occupies_one_annulus():
    cfg = RunConfig(N=32, kind="single-mode", band_lo=0, band_hi=0, c0=1e-3)
    st = make_initial(cfg)
    bank = build_filter_bank(cfg.grid(), cfg.j0)
    active = np.flatnonzero(bank.block_norms(st.b.coeffs) > 0)
    assert len(active) == 1 and bank.js[active[0]] == 0
    m = single_mode_index(cfg.grid(), 0)
    assert 4 / 3 <= np.hypot(*m) / cfg.L <= 1.5


def test_band_outside_grid():
    with pytest.raises(ConfigurationError):
        make_initial(RunConfig(N=32, band_lo=-2, band_hi=9))


def test_checkpoint_initial(tmp_path):
    cfg = RunConfig(N=32, band_lo=-1, band_hi=0)
    st = make_initial(cfg)
    checkpoint_save(st, 0.5, tmp_path / "s.thfl")
    back = make_initial(cfg.replace(kind="checkpoint", checkpoint=str(tmp_path / "s.thfl")))
    assert np.array_equal(back.b.coeffs, st.b.coeffs)
    with pytest.raises(ConfigurationError):
        make_initial(cfg.replace(N=64, kind="checkpoint", checkpoint=str(tmp_path / "s.thfl")))


def test_floor_violation_rejected():
    with pytest.raises(Exception, match="floor"):
        make_initial(RunConfig(N=32, c0=50.0, band_lo=-1, band_hi=0))


def write(tmp_path, text, name="c.cfg"):
    p = tmp_path / name
    p.write_text(text + f"output = {tmp_path / 'out'}\n")
    return p


def test_run_command_outputs(tmp_path):
    cfg = write(tmp_path, SMALL)
    assert main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    for name in ("energy.csv", "blocks.csv", "rates.csv", "constants.csv", "final.thfl"):
        assert (out / name).is_file()
    first = (out / "energy.csv").read_text()
    assert main(["run", str(cfg)]) == 0
    assert (out / "energy.csv").read_text() == first


def test_run_zero_data(tmp_path):
    cfg = write(tmp_path, SMALL.replace("c0 = 1e-3", "c0 = 0"))
    assert main(["run", str(cfg)]) == 0
    with open(tmp_path / "out" / "energy.csv") as fh:
        rows = list(csv.reader(fh))[2:]
    assert rows and all(float(r[-1]) == 0 for r in rows)


def test_run_blowup_exit_code(tmp_path, capsys):
    text = "N = 16\nL = 1.0\nT = 2.0\ndt = 1e-2\nkind = taylor-green\nc0 = 100\n"
    cfg = write(tmp_path, text)
    assert main(["run", str(cfg)]) == 2
    assert capsys.readouterr().out.startswith("blowup:")
    assert (tmp_path / "out" / "final.thfl").is_file()


def test_config_error_exit_code(tmp_path, capsys):
    cfg = write(tmp_path, "bogus = 1\n")
    assert main(["run", str(cfg)]) == 1
    assert "line 1" in capsys.readouterr().err.replace(":1:", "line 1")


def test_linear_command(tmp_path):
    cfg = write(tmp_path, "N = 32\n")
    assert main(["linear", str(cfg)]) == 0
    with open(tmp_path / "out" / "dispersion.csv") as fh:
        assert fh.readline().startswith("# thetaflow dispersion")
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["r", "re_slow", "im_slow", "re_fast", "im_fast"]
    assert len(rows) - 1 == len(RunConfig(N=32).grid().moduli())


def test_check_command_and_negative_control(tmp_path, capsys):
    cfg = write(tmp_path, "N = 64\n")
    assert main(["check", str(cfg), "--trials", "3"]) == 0
    assert "FAIL" not in capsys.readouterr().out
    assert main(["check", str(cfg), "--trials", "3", "--corrupt-bank"]) == 1
    assert "FAIL partition of unity" in capsys.readouterr().out


def test_norms_command(tmp_path, capsys):
    cfg = RunConfig(N=32, band_lo=-1, band_hi=0, c0=1e-3)
    st = make_initial(cfg)
    checkpoint_save(st, 0.25, tmp_path / "s.thfl")
    assert main(["norms", str(tmp_path / "s.thfl"), "--s", "0.5", "--j0", "1"]) == 0
    out = capsys.readouterr().out
    assert "t = 0.25" in out
    bank = build_filter_bank(cfg.grid(), 1)
    assert f"{theorem_norm(bank, st):.10e}" in out


def test_parse_grid_spec():
    cells = parse_grid_spec("c0=1e-3,1e-2;gamma=1.1,1.4")
    assert len(cells) == 4 and cells[0] == {"c0": "1e-3", "gamma": "1.1"}
    assert parse_grid_spec("") == [{}]
    with pytest.raises(Exception):
        parse_grid_spec("c0")


def test_sweep_two_by_two(tmp_path, monkeypatch):
    monkeypatch.setenv("THETAFLOW_THREADS", "2")
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", str(cfg), "--grid", "c0=1e-3,1e-2;gamma=1.1,1.4"]) == 0
    out = tmp_path / "out"
    cells = sorted(p.name for p in out.iterdir() if p.is_dir())
    assert len(cells) == 4
    with open(out / "summary.csv") as fh:
        assert fh.readline().startswith("# thetaflow summary")
        rows = list(csv.reader(fh))
    assert rows[0] == ["cell", "E0", "max_E", "fitted_C", "exit_reason"]
    assert all(r[-1] == "completed" for r in rows[1:])


def test_one_cell_sweep_equals_run(tmp_path, monkeypatch):
    monkeypatch.setenv("THETAFLOW_THREADS", "1")
    cfg = write(tmp_path, SMALL)
    assert main(["sweep", str(cfg), "--grid", "c0=1e-3"]) == 0
    cell = next(p for p in (tmp_path / "out").iterdir() if p.is_dir())
    assert main(["run", str(cfg), "--output", str(tmp_path / "single")]) == 0
    assert (cell / "energy.csv").read_text() == (tmp_path / "single" / "energy.csv").read_text()


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "thetaflow.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("run", "linear", "check", "sweep", "norms"):
        assert sub in res.stdout
    assert "corrupt" not in res.stdout
