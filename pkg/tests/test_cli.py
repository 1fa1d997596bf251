"""End-to-end runs of the command line through ``main(argv)``.

PERA demos use shortened horizons and a coarser step to keep the suite
quick; the 20 s convergence run is done at the default step.
"""
import numpy as np
import pytest

from phstab.certify import Certificate
from phstab.cli import main


def read_csv(path):
    lines = path.read_text().splitlines()
    return lines[0].split(","), np.array([[float(v) for v in row.split(",")] for row in lines[1:]])


class TestCertify:
    def test_pera_s1(self, tmp_path, capsys):
        code = main(["certify", "--model", "pera", "--gains", "s1", "--qr", "0.3", "--pr", "0.5",
                     "--out", str(tmp_path)])
        out = capsys.readouterr().out
        assert code == 0 and "rate_paper" in out and "rate_sound" in out
        text = (tmp_path / "certificate.txt").read_text()
        assert "# gains = S1" in text and "# I1 = 0.02" in text
        cert = Certificate.from_text(text)
        assert cert.rate_paper > 0 and cert.samples == 15625

    def test_deterministic(self, tmp_path):
        args = ["certify", "--model", "msd1", "--extra", "8", "--seed", "4"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        assert (tmp_path / "a" / "certificate.txt").read_bytes() == (tmp_path / "b" / "certificate.txt").read_bytes()
        assert "seed 4" in (tmp_path / "a" / "certificate.txt").read_text()

    def test_gravity_dominated_is_infeasible(self, tmp_path, capsys):
        assert main(["certify", "--model", "pendulum", "--ki", "0.1", "--qr", "3.2", "--out", str(tmp_path)]) == 2
        assert "infeasible" in capsys.readouterr().out

    def test_malformed_config(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[model]\nname = pera\nbogus = 1\n")
        assert main(["certify", "--config", str(cfg)]) == 1
        assert f"{cfg}:3:1:" in capsys.readouterr().err

    def test_config_driven(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"[model]\nname = msd1\nstiffness = 6\n[gains]\nkp = 2\nki = 3\n"
                       f"[region]\nqr = 0.5\npr = 0.5\nphi = ainv\n[output]\ndir = {tmp_path / 'o'}\n")
        assert main(["certify", "--config", str(cfg)]) == 0
        assert "phi_choice = A_inverse" in (tmp_path / "o" / "certificate.txt").read_text()

    def test_custom_model(self, tmp_path):
        cfg = tmp_path / "arm.cfg"
        cfg.write_text("[model]\nname = custom\nn = 2\nM11 = 3 + 2*cos(q2)\nM12 = 1 + cos(q2)\nM22 = 1\n"
                       "U = 9.81*(3 - 2*cos(q1) - cos(q1 + q2))\n[gains]\nkp = 1\nki = 40\n"
                       "[region]\nqr = 0.2\npr = 0.2\ngrid = 3\n")
        assert main(["certify", "--config", str(cfg), "--out", str(tmp_path)]) == 0

    def test_bad_expression(self, tmp_path, capsys):
        cfg = tmp_path / "arm.cfg"
        cfg.write_text("[model]\nname = custom\nn = 1\nM11 = 1\nU = q1 *\n")
        assert main(["certify", "--config", str(cfg)]) == 1
        assert "column" in capsys.readouterr().err

    def test_unknown_scenario(self, capsys):
        assert main(["certify", "--model", "pera", "--gains", "s9"]) == 1
        assert "available: s1, s2, s3" in capsys.readouterr().err


class TestSimulate:
    def test_zero_horizon(self, tmp_path, capsys):
        assert main(["simulate", "--model", "pera", "--gains", "s1", "--horizon", "0", "--out", str(tmp_path)]) == 1
        assert "horizon must be positive" in capsys.readouterr().err

    def test_canonical_matches_default(self, tmp_path):
        from phstab.pera import build_pera, pera_scenarios
        from phstab.pidpbc import build_closed_loop
        from phstab.plvcc import inverse_map_state
        from phstab.core import State
        common = ["--model", "pera", "--gains", "s1", "--horizon", "0.2"]
        assert main(["simulate", *common, "--out", str(tmp_path / "m")]) == 0
        assert main(["simulate", *common, "--canonical", "--out", str(tmp_path / "c")]) == 0
        head, mech = read_csv(tmp_path / "m" / "trajectory.csv")
        _, can = read_csv(tmp_path / "c" / "trajectory.csv")
        assert head == ["t", "q1", "q2", "q3", "p1", "p2", "p3", "Hd", "S", "normx"]
        cl = build_closed_loop(build_pera(), pera_scenarios()[0]["S1"])
        back = np.array([inverse_map_state(cl, State(r[1:4], r[4:7])).vector() for r in can])
        assert np.max(np.abs(back - mech[:, 1:7])) <= 1e-6

    def test_controller_and_lyapunov(self, tmp_path):
        assert main(["simulate", "--model", "msd1", "--controller", "--lyapunov", "--horizon", "2",
                     "--out", str(tmp_path)]) == 0
        _, data = read_csv(tmp_path / "trajectory.csv")
        assert np.all(np.isfinite(data[:, -2])) and data[-1, -2] < data[0, -2]

    def test_every(self, tmp_path):
        assert main(["simulate", "--model", "msd1", "--horizon", "1", "--every", "100", "--out", str(tmp_path)]) == 0
        _, data = read_csv(tmp_path / "trajectory.csv")
        assert len(data) == 11

    def test_pera_converges_in_twenty_seconds(self, tmp_path, capsys):
        assert main(["simulate", "--model", "pera", "--gains", "s1", "--horizon", "20", "--out", str(tmp_path)]) == 0
        head, data = read_csv(tmp_path / "trajectory.csv")
        assert data[-1, 0] == pytest.approx(20.0)
        assert np.linalg.norm(data[-1, 1:4] - [-1.8, 1.57, 0.78]) <= 1e-3

    def test_exclusive_representations(self):
        with pytest.raises(SystemExit) as info:
            main(["simulate", "--canonical", "--controller"])
        assert info.value.code == 1


class TestTune:
    def test_pera_sets(self, tmp_path, capsys):
        assert main(["tune", "--model", "pera", "--sets", "s1,s2,s3", "--out", str(tmp_path)]) == 0
        assert "ordering = S1" in capsys.readouterr().out
        lines = (tmp_path / "tuning.csv").read_text().splitlines()
        assert lines[0].startswith("label,beta_max") and len(lines) == 4

    def test_msd1_default_grid(self, tmp_path, capsys):
        assert main(["tune", "--model", "msd1", "--grid", "default", "--out", str(tmp_path)]) == 0
        assert "best = kp=0.5;ki=2;kd=0" in capsys.readouterr().out

    def test_infeasible_grid(self, tmp_path):
        assert main(["tune", "--model", "pendulum", "--qr", "3.2", "--out", str(tmp_path)]) == 2

    def test_default_grid_only_for_msd1(self, tmp_path, capsys):
        assert main(["tune", "--model", "pera", "--grid", "default", "--out", str(tmp_path)]) == 1


class TestDemo:
    def test_unknown(self, capsys):
        assert main(["demo", "unknown"]) == 1
        err = capsys.readouterr().err
        assert "pera-fig2a" in err and "pera-fig2b" in err

    def test_short_fig2a(self, tmp_path, capsys):
        assert main(["demo", "pera-fig2a", "--out", str(tmp_path), "--h", "2e-4", "--horizon", "1.0"]) == 0
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == ["certificate_S1.txt", "certificate_S2.txt", "summary.txt", "trajectory_S1.csv",
                         "trajectory_S2.csv", "tuning.csv"]
        assert "S1 faster than S2" in (tmp_path / "summary.txt").read_text()

    def test_short_fig2b(self, tmp_path):
        assert main(["demo", "pera-fig2b", "--out", str(tmp_path), "--h", "2e-4", "--horizon", "1.0"]) == 0
        summary = (tmp_path / "summary.txt").read_text()
        assert "S1 faster than S3" in summary and "predicted ordering = S1 > S3" in summary


def test_invalid_subcommand():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 1
