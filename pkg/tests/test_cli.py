import json

import pytest

from steal_lab.cli import main
from steal_lab.config import parse_config
from steal_lab.errors import ConfigError, DataFormatError
from steal_lab.network import load_checkpoint
from steal_lab.reporting import plot_curves
from steal_lab.server import serve

TINY_CONFIG = """
# tiny end-to-end run
dataset = blobs
classes = 3
dims = 2
train_points = 240
test_points = 120
epochs = 3
bnn_epochs = 4
members = 3
m_values = 6,2
families = baseline,mcd
trunks = arch_B
target_sizes = small
seeds = 0
out = {out}
"""


def write_config(tmp_path, out=None, extra=""):
    out = out or (tmp_path / "run")
    path = tmp_path / "exp.cfg"
    path.write_text(TINY_CONFIG.format(out=out) + extra)
    return path, out


class TestParseConfig:
    def test_minimal_defaults_match_protocol(self, tmp_path):
        path = tmp_path / "min.cfg"
        path.write_text("dataset = blobs\nout = somewhere\n")
        config = parse_config(path)
        # protocol defaults: 50 forward passes with the 6-pass ablation,
        # 30 epochs (50 for the BNN), six ensemble members, 50% dropout
        assert config.m_values == (50, 6)
        assert config.epochs == 30
        assert config.bnn_epochs == 50
        assert config.members == 6
        assert config.dropout_rate == 0.5
        assert config.families == ("baseline", "mcd", "cd", "bnn",
                                   "deep_ensemble", "het_ensemble")
        assert config.oracle == "in_process"

    def test_unknown_key_named(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("dataset = blobs\nout = x\nfoo = 1\n")
        with pytest.raises(DataFormatError) as err:
            parse_config(path)
        assert "foo" in str(err.value)
        assert err.value.line == 3

    def test_m_bounds(self, tmp_path):
        path = tmp_path / "m.cfg"
        path.write_text("dataset = blobs\nout = x\nm_values = 1\n")
        assert parse_config(path).m_values == (1,)
        path.write_text("dataset = blobs\nout = x\nm_values = 0\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "m.cfg"
        path.write_text("out = x\n")
        with pytest.raises(ConfigError) as err:
            parse_config(path)
        assert "dataset" in str(err.value)

    def test_wrong_type_names_key_and_line(self, tmp_path):
        path = tmp_path / "t.cfg"
        path.write_text("dataset = blobs\nout = x\nepochs = many\n")
        with pytest.raises(DataFormatError) as err:
            parse_config(path)
        assert "epochs" in str(err.value)

    def test_duplicate_key_rejected(self, tmp_path):
        path = tmp_path / "d.cfg"
        path.write_text("dataset = blobs\ndataset = spirals\nout = x\n")
        with pytest.raises(DataFormatError):
            parse_config(path)

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "o.cfg"
        path.write_text("dataset = blobs\nout = x\n")
        config = parse_config(path, {"out": "elsewhere", "seeds": (7,)})
        assert config.out == "elsewhere"
        assert config.seeds == (7,)


@pytest.fixture(scope="module")
def finished_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, out = write_config(tmp)
    code = main(["run-all", "--config", str(cfg)])
    assert code == 0
    return tmp, cfg, out


class TestRunAll:
    def test_artifacts_exist(self, finished_run):
        _, _, out = finished_run
        for name in ("report.csv", "curves.csv", "curves_raw.csv",
                     "timings.csv", "summary.txt"):
            assert (out / name).exists(), name
        assert list((out / "plots").glob("*.svg"))
        assert list((out / "checkpoints").glob("target_*.json"))

    def test_report_schema(self, finished_run):
        _, _, out = finished_run
        header = (out / "report.csv").read_text().splitlines()[0]
        assert header == "dataset,target_size,family,trunk,M,seed,fidelity,target_acc,queries"
        timing_header = (out / "timings.csv").read_text().splitlines()[0]
        assert timing_header == "dataset,target_size,family,trunk,seed,train_seconds"
        curves_header = (out / "curves.csv").read_text().splitlines()[0]
        assert curves_header == "family,trunk,epoch,variance"

    def test_rerun_is_idempotent_outside_timings(self, finished_run, tmp_path):
        # timings.csv and summary.txt carry wall-clock values and are the
        # only artifacts allowed to differ between identical runs
        tmp, cfg, out = finished_run
        deterministic = ["report.csv", "curves.csv", "curves_raw.csv"]
        before = {n: (out / n).read_bytes() for n in deterministic}
        plots_before = {p.name: p.read_bytes()
                        for p in (out / "plots").glob("*.svg")}
        assert main(["run-all", "--config", str(cfg)]) == 0
        for name, blob in before.items():
            assert (out / name).read_bytes() == blob, name
        for p in (out / "plots").glob("*.svg"):
            assert p.read_bytes() == plots_before[p.name]

    def test_cross_process_byte_determinism(self, tmp_path):
        # fresh interpreters with randomized hash seeds must still agree
        import subprocess
        import sys
        outs = []
        for run in ("a", "b"):
            out = tmp_path / run
            cfg, _ = write_config(tmp_path, out=out)
            proc = subprocess.run(
                [sys.executable, "-m", "steal_lab.cli", "run-all",
                 "--config", str(cfg)],
                env={"PYTHONHASHSEED": "random", "PATH": "/usr/bin:/bin",
                     "HOME": str(tmp_path)},
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            outs.append(out)
        for name in ("report.csv", "curves.csv", "curves_raw.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_writes_only_under_out(self, tmp_path, monkeypatch):
        workdir = tmp_path / "cwd"
        workdir.mkdir()
        monkeypatch.chdir(workdir)
        cfg, out = write_config(tmp_path, out=tmp_path / "sandboxed")
        assert main(["run-all", "--config", str(cfg)]) == 0
        assert list(workdir.iterdir()) == []


class TestOtherCommands:
    def test_gen_data_writes_csvs(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert main(["gen-data", "--config", str(cfg)]) == 0
        assert (out / "train_seed0.csv").exists()
        assert (out / "test_seed0.csv").exists()

    def test_train_target_then_evaluate_identity(self, tmp_path, capsys):
        cfg, out = write_config(tmp_path)
        assert main(["train-target", "--config", str(cfg)]) == 0
        ckpt = out / "checkpoints" / "target_small_seed0.json"
        assert ckpt.exists()
        code = main(["evaluate", "--config", str(cfg), "--surrogate",
                     str(ckpt), "--checkpoint", str(ckpt)])
        assert code == 0
        assert "fidelity 1.0000" in capsys.readouterr().out

    def test_steal_remote_matches_in_process(self, tmp_path):
        cfg, out = write_config(tmp_path)
        assert main(["train-target", "--config", str(cfg)]) == 0
        ckpt = out / "checkpoints" / "target_small_seed0.json"

        local_out = tmp_path / "local"
        cfg_local, _ = write_config(tmp_path, out=local_out)
        assert main(["steal", "--config", str(cfg_local), "--checkpoint",
                     str(ckpt)]) == 0

        server = serve(load_checkpoint(ckpt), name=load_checkpoint(ckpt).name)
        try:
            remote_out = tmp_path / "remote"
            cfg_remote, _ = write_config(tmp_path, out=remote_out)
            assert main(["steal", "--config", str(cfg_remote), "--oracle",
                         server.endpoint]) == 0
        finally:
            server.stop()
        local_report = (local_out / "report.csv").read_bytes()
        remote_report = (remote_out / "report.csv").read_bytes()
        assert local_report == remote_report
        local_set = (local_out / "surrogate_set.csv").read_bytes()
        remote_set = (remote_out / "surrogate_set.csv").read_bytes()
        assert local_set == remote_set

    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as err:
            main(["frobnicate"])
        assert err.value.code == 2

    def test_unknown_flag_exits_2(self, tmp_path):
        cfg, _ = write_config(tmp_path)
        with pytest.raises(SystemExit) as err:
            main(["run-all", "--config", str(cfg), "--frob"])
        assert err.value.code == 2

    def test_bad_config_exits_1(self, tmp_path, capsys):
        path = tmp_path / "bad.cfg"
        path.write_text("dataset = blobs\nout = x\nfoo = 1\n")
        assert main(["run-all", "--config", str(path)]) == 1
        assert "foo" in capsys.readouterr().err

    def test_missing_config_file_exits_1(self, tmp_path, capsys):
        assert main(["run-all", "--config", str(tmp_path / "nope.cfg")]) == 1

    def test_log_level_env_var(self, tmp_path, monkeypatch):
        from steal_lab.cli import LOG_LEVELS
        assert set(LOG_LEVELS) == {"error", "info", "debug"}
        monkeypatch.setenv("STEAL_LAB_LOG", "debug")
        cfg, out = write_config(tmp_path)
        assert main(["gen-data", "--config", str(cfg)]) == 0
        monkeypatch.setenv("STEAL_LAB_LOG", "not-a-level")
        assert main(["gen-data", "--config", str(cfg)]) == 0


class TestPlot:
    def test_flat_baseline_and_per_family_files(self, tmp_path):
        curves = tmp_path / "curves.csv"
        curves.write_text("family,trunk,epoch,variance\n"
                          "baseline,arch_A,0,0.0\nbaseline,arch_A,1,0.0\n"
                          "mcd,arch_A,0,0.01\nmcd,arch_A,1,0.02\n")
        out = tmp_path / "plots"
        assert main(["plot", "--curves", str(curves), "--out", str(out)]) == 0
        files = sorted(p.name for p in out.glob("*.svg"))
        assert files == ["variance_baseline_arch_A.svg",
                         "variance_mcd_arch_A.svg"]

    def test_regenerated_svg_byte_identical(self, tmp_path):
        curves = tmp_path / "curves.csv"
        curves.write_text("family,trunk,epoch,variance\n"
                          "cd,arch_B,0,0.004\ncd,arch_B,1,0.003\n")
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        plot_curves(curves, out_a)
        plot_curves(curves, out_b)
        a = (out_a / "variance_cd_arch_B.svg").read_bytes()
        b = (out_b / "variance_cd_arch_B.svg").read_bytes()
        assert a == b

    def test_empty_curves_csv_is_error(self, tmp_path):
        curves = tmp_path / "curves.csv"
        curves.write_text("family,trunk,epoch,variance\n")
        with pytest.raises(DataFormatError):
            plot_curves(curves, tmp_path / "out")

    def test_missing_header_is_error(self, tmp_path):
        curves = tmp_path / "curves.csv"
        curves.write_text("")
        with pytest.raises(DataFormatError):
            plot_curves(curves, tmp_path / "out")
