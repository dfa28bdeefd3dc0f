import csv
import subprocess
import sys

import numpy as np
import pytest

from crae import cli
from crae import diagnostics as diag
from crae.cli import ConfigError, parse_config
from crae.methods import Method, TrainConfig

TINY = {"n_per_class": "24", "n_labeled": "8", "n_test": "16", "epochs": "1", "batch_size": "16",
        "confusion_size": "32"}


def write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text)
    return path


class TestParseConfig:
    def test_empty_file_gives_defaults(self, tmp_path):
        spec = parse_config(write(tmp_path, ""))
        assert spec.train == TrainConfig()
        assert spec.data == cli.DataConfig()
        assert spec.methods == (Method.CRAE,) and spec.seeds == (0,)

    def test_no_file(self):
        assert parse_config(None).train == TrainConfig()

    def test_values_and_comments(self, tmp_path):
        spec = parse_config(write(tmp_path, """
            # a sweep
            method = CRAE, s4l   # two methods
            seed = 0,1,2
            eta = 0.5
            use_aux = false
            alpha_range = 0.6, 0.9
            n_labeled = 80
        """))
        assert spec.methods == (Method.CRAE, Method.S4L)
        assert spec.seeds == (0, 1, 2)
        assert spec.train.eta == 0.5 and spec.train.use_aux is False
        assert spec.train.alpha_range == (0.6, 0.9)
        assert spec.data.n_labeled == 80

    def test_flag_overrides_file(self, tmp_path):
        spec = parse_config(write(tmp_path, "epochs = 5\n"), {"epochs": "7"})
        assert spec.train.epochs == 7

    @pytest.mark.parametrize("text,key", [
        ("temp = 0", "temp"),
        ("temp = 1.5", "temp"),
        ("epochs = many", "epochs"),
        ("bogus = 1", "bogus"),
        ("method = mixmatch", "method"),
        ("use_aux = maybe", "use_aux"),
    ])
    def test_errors_name_the_key(self, tmp_path, text, key):
        with pytest.raises(ConfigError, match=key):
            parse_config(write(tmp_path, text))

    def test_line_without_equals(self, tmp_path):
        with pytest.raises(ConfigError, match="key = value"):
            parse_config(write(tmp_path, "epochs 5"))

    def test_keys_cover_train_and_data(self):
        expected = {f for f in TrainConfig.__dataclass_fields__} | set(cli.DataConfig.__dataclass_fields__)
        assert set(cli.KEYS) == expected | {"method", "out"}

    def test_cli_flags(self, tmp_path):
        args = cli.make_parser().parse_args(["--method", "CRAE,S4L", "--seed", "3", "--labels", "12",
                                             "--eta2", "0.2", "--proj-dim", "8", "--no-aux",
                                             "--out", str(tmp_path)])
        spec = parse_config(None, cli.overrides_from_args(args))
        assert spec.methods == (Method.CRAE, Method.S4L) and spec.seeds == (3,)
        assert spec.data.n_labeled == 12
        assert (spec.train.eta2, spec.train.proj_dim, spec.train.use_aux) == (0.2, 8, False)
        assert spec.out == tmp_path


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    spec = parse_config(None, {**TINY, "method": "CRAE,LabeledOnly", "seed": "0,1,2", "out": str(out)})
    assert cli.run(spec) == 0
    return spec, out


class TestRun:
    def test_file_layout(self, sweep):
        _, out = sweep
        names = sorted(p.name for p in out.iterdir())
        assert len(names) == 13 and "summary.csv" in names
        for m in ("CRAE", "LabeledOnly"):
            for s in range(3):
                assert f"{m}_{s}_metrics.csv" in names and f"{m}_{s}_confusion.csv" in names

    def test_summary_is_mean_of_runs(self, sweep):
        _, out = sweep
        with open(out / "summary.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert [r["method"] for r in rows] == ["CRAE", "LabeledOnly"]
        for row in rows:
            finals = [diag.read_metrics(out / f"{row['method']}_{s}_metrics.csv")[-1].test_error for s in range(3)]
            assert float(row["mean_test_error"]) == np.mean(finals)
            assert float(row["std_test_error"]) == np.std(finals)

    def test_metrics_have_epoch_rows(self, sweep):
        _, out = sweep
        records = diag.read_metrics(out / "CRAE_0_metrics.csv")
        assert [r.epoch for r in records] == [0, 1]

    def test_rerun_is_bit_identical(self, sweep, tmp_path):
        spec, out = sweep
        again = parse_config(None, {**TINY, "method": "CRAE,LabeledOnly", "seed": "0,1,2", "out": str(tmp_path)})
        assert cli.run(again) == 0
        for p in out.iterdir():
            assert (tmp_path / p.name).read_bytes() == p.read_bytes()

    def test_parallel_matches_serial(self, sweep, tmp_path):
        _, out = sweep
        spec = parse_config(None, {**TINY, "method": "CRAE", "seed": "0,1", "out": str(tmp_path)})
        assert cli.run(spec, jobs=2) == 0
        for s in (0, 1):
            name = f"CRAE_{s}_metrics.csv"
            assert (tmp_path / name).read_bytes() == (out / name).read_bytes()

    def test_failure_gives_nonzero_exit(self, tmp_path):
        # more test examples than the dataset holds
        spec = parse_config(None, {**TINY, "n_test": "5000", "out": str(tmp_path)})
        assert cli.run(spec) != 0
        assert not (tmp_path / "summary.csv").exists()


def test_main_reports_config_errors(tmp_path, capsys):
    assert cli.main(["--config", str(write(tmp_path, "temp = 0"))]) == 2
    assert "temp" in capsys.readouterr().err


def test_module_entry_point(tmp_path):
    cfg = write(tmp_path, "\n".join(f"{k} = {v}" for k, v in TINY.items()))
    result = subprocess.run([sys.executable, "-m", "crae", "--config", str(cfg), "--method", "S4L",
                             "--epochs", "0", "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert result.returncode == 0, result.stderr
    assert (tmp_path / "o" / "S4L_0_metrics.csv").exists()
