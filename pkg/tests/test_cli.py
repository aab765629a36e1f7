import numpy as np
import pytest

from pairbridge.cli import main, parse_config_text, parse_header, ConfigError


def read_csv(path):
    lines = path.read_text().splitlines()
    header = [l for l in lines if l.startswith("#")]
    body = [l for l in lines if not l.startswith("#")]
    cols = body[0].split(",")
    rows = [r.split(",") for r in body[1:]]
    return header, cols, rows


def run(tmp_path, command, *flags, name=None):
    out = tmp_path / (name or f"{command}.csv")
    code = main([command, f"--out_path={out}", *flags])
    return code, out


class TestSchedule:
    def test_header_and_boundaries(self, tmp_path):
        code, out = run(tmp_path, "schedule", "--schedule.points=11")
        assert code == 0
        header, cols, rows = read_csv(out)
        assert header[0] == "# command = schedule"
        assert "# schedule.kind = gmax" in header
        assert cols[:2] == ["t", "f"]
        first = dict(zip(cols, map(float, rows[0])))
        assert (first["w0"], first["w1"], first["std"]) == (1.0, 0.0, 0.0)
        assert len(rows) == 11

    def test_gmax_peak_after_half(self, tmp_path):
        _, out = run(tmp_path, "schedule", "--schedule.points=201")
        _, cols, rows = read_csv(out)
        data = np.array(rows, float)
        t, std = data[:, 0], data[:, cols.index("std")]
        assert t[np.argmax(std)] > 0.5

    def test_constant_g_symmetric(self, tmp_path):
        _, out = run(tmp_path, "schedule", "--schedule.kind=constant", "--schedule.points=101")
        _, cols, rows = read_csv(out)
        std = np.array(rows, float)[:, cols.index("std")]
        np.testing.assert_allclose(std, std[::-1], atol=1e-12)

    def test_vp_default_beta1(self, tmp_path):
        _, out = run(tmp_path, "schedule", "--schedule.kind=vp", "--schedule.points=3")
        assert "# schedule.beta1 = 20.0" in out.read_text()

    def test_rerun_byte_identical(self, tmp_path):
        _, out = run(tmp_path, "schedule")
        first = out.read_bytes()
        run(tmp_path, "schedule")
        assert out.read_bytes() == first


class TestConfig:
    def test_unknown_key_in_file(self, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\nschedule.kind = gmax\nschedule.gamma = 3\n")
        assert main(["schedule", f"--config={cfg}"]) == 2
        assert f"{cfg}:3" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert main(["schedule", "--bogus=1"]) == 2
        assert "bogus" in capsys.readouterr().err

    def test_bad_value(self, capsys):
        assert main(["schedule", "--schedule.kind=cosine", "--out_path=-"]) == 2

    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("schedule.points = 5\n")
        out = tmp_path / "s.csv"
        assert main(["schedule", f"--config={cfg}", "--schedule.points=7", f"--out_path={out}"]) == 0
        assert len(read_csv(out)[2]) == 7

    def test_replay_reproduces_output(self, tmp_path):
        _, first = run(tmp_path, "sample", "--sample.n=5", "--sampler.nfe=8", "--seed=4", name="first.csv")
        again = tmp_path / "again.csv"
        text = first.read_text().replace(str(first), str(again))
        replay = tmp_path / "replay.csv"
        replay.write_text(text)
        assert main(["sample", f"--replay={replay}"]) == 0
        assert again.read_text().split("\n", 1)[1] == text.split("\n", 1)[1]

    def test_replay_wrong_command(self, tmp_path):
        _, first = run(tmp_path, "schedule", "--schedule.points=3")
        assert main(["sample", f"--replay={first}"]) == 2

    def test_parse_helpers(self):
        assert parse_config_text("seed = 3\n\n# x\n") == {"seed": "3"}
        with pytest.raises(ConfigError):
            parse_config_text("seed 3")
        assert parse_header("# command = sweep\n# seed = 1\nnfe\n") == ("sweep", {"seed": "1"})

    def test_output_dir_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("PAIRBRIDGE_OUT_DIR", str(tmp_path / "outs"))
        assert main(["schedule", "--schedule.points=3", "--out_path=s.csv"]) == 0
        assert (tmp_path / "outs" / "s.csv").exists()

    def test_stdout_output(self, capsys):
        assert main(["schedule", "--schedule.points=3", "--out_path=-"]) == 0
        assert capsys.readouterr().out.startswith("# command = schedule")


class TestCommands:
    def test_marginal_check_passes(self, tmp_path):
        code, out = run(tmp_path, "marginal-check", "--marginal.t=0.5")
        assert code == 0
        _, cols, rows = read_csv(out)
        assert max(float(r[cols.index("emp_var_rel_err")]) for r in rows) <= 0.02

    def test_single_step_sample_is_the_mean(self, tmp_path):
        code, out = run(tmp_path, "sample", "--sampler.nfe=1", "--sample.n=3")
        assert code == 0
        _, _, rows = read_csv(out)
        np.testing.assert_allclose(np.array(rows, float)[:, 1:], [[1.0, 2.0]] * 3, atol=1e-12)

    def test_odd_nfe_second_order_rejected(self, tmp_path):
        code, _ = run(tmp_path, "sample", "--sampler.kind=ode2", "--sampler.nfe=3")
        assert code == 2

    def test_sweep_deterministic_without_timing(self, tmp_path):
        flags = ("--sweep.nfe=1,2,4", "--sweep.chains=50", "--sweep.timing=false")
        _, out = run(tmp_path, "sweep", *flags)
        first = out.read_bytes()
        run(tmp_path, "sweep", *flags)
        assert out.read_bytes() == first
        _, cols, rows = read_csv(out)
        assert cols == ["nfe", "kind", "tau_b", "mean_err", "var_rel_err", "wall_ns"]
        # second-order kinds skip the odd budget
        assert not any(r[0] == "1" and r[1] in ("sde2", "ode2") for r in rows)
        assert all(r[-1] == "0" for r in rows)

    def test_train_smoke(self, tmp_path):
        code, out = run(tmp_path, "train", "--train.steps=5", "--train.eval_samples=0", "--task.n_train=30",
                        "--train.warmup_steps=50")
        assert code == 0
        text = out.read_text()
        assert "step,loss" in text and "# final_loss = " in text

    def test_selftest_failure_exit_code(self, tmp_path, capsys):
        code, _ = run(tmp_path, "selftest", "--selftest.checks=3")
        assert code == 1
        assert "FAIL 3.one_step[em]" in capsys.readouterr().out

    def test_selftest_pass(self, tmp_path):
        code, out = run(tmp_path, "selftest", "--selftest.checks=1,5")
        assert code == 0
        assert ",pass," in out.read_text()

    def test_selftest_unknown_check(self, tmp_path):
        code, _ = run(tmp_path, "selftest", "--selftest.checks=42")
        assert code == 2
