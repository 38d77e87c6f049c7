import numpy as np
import pytest

from efs_depth.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_OK, EXIT_SELFCHECK, main
from efs_depth.config import KEYS, ConfigError, RunConfig
from efs_depth.flatconfig import FlatConfigError, dump_flat, parse_flat
from efs_depth.model import EDFFModel
from efs_depth.pipeline import DatasetManifest
from efs_depth.tensorio import read_ten1

SMALL_RUN = """\
# tiny end-to-end run
scene.count = 3
scene.height = 16
scene.width = 16
scene.num_objects = 2
sweep.num_samples = 16
encoding.num_bins = 4
model.base_channels = 4
model.attention_dim = 4
model.rdb_layers = 1
model.rdb_growth = 4
model.depth_bias_init = 5.0
train.epochs = 2
train.batch_size = 2
train.val_fraction = 0.34
ablation.seeds = 0
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL_RUN)
    return path


@pytest.fixture
def dataset(tmp_path, run_config):
    out = tmp_path / "data"
    assert main(["generate", "--config", str(run_config), "--out", str(out)]) == EXIT_OK
    return out


def test_flat_parser_round_trip():
    items = [("a.b", 1), ("c", True), ("d", 2.5), ("e", (0, 1)), ("f", None), ("g", "text")]
    text = dump_flat(items, header="hdr")
    assert text.startswith("# hdr")
    assert parse_flat(text) == {"a.b": "1", "c": "true", "d": "2.5", "e": "0, 1", "f": "none", "g": "text"}


@pytest.mark.parametrize("text", ["novalue\n", "= 3\n", "a = 1\na = 2\n"])
def test_flat_parser_rejects_malformed(text):
    with pytest.raises(FlatConfigError):
        parse_flat(text)


def test_defaults_validate_and_round_trip():
    cfg = RunConfig()
    back = RunConfig.from_text(cfg.to_text())
    assert back.values == cfg.values
    assert cfg.train().lr == 5e-4
    assert (cfg.loss().alpha, cfg.loss().beta) == (128.0, 1.0)


def test_config_errors_name_the_key():
    with pytest.raises(ConfigError, match="lens.focal_lenght"):
        RunConfig.from_text("lens.focal_lenght = 0.05\n")
    with pytest.raises(ConfigError, match="train.lr"):
        RunConfig.from_text("train.lr = fast\n")
    with pytest.raises(ConfigError, match="lens"):
        RunConfig.from_text("lens.f_number = -2\n")
    with pytest.raises(ConfigError, match="divisible"):
        RunConfig.from_text("scene.height = 30\n")
    with pytest.raises(ConfigError):
        RunConfig.from_text("scene.wall_depth_m = 20\n")


def test_help_lists_every_key_with_units(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for key, spec in KEYS.items():
        assert key in out
        assert f"[{spec.unit}]" in out
    assert "exit codes" in out


def test_generate_writes_manifest(dataset, capsys):
    m = DatasetManifest.load(dataset)
    assert len(m) == 3
    assert m.encoding.num_bins == 4 and m.sweep.num_samples == 16


def test_generate_unknown_key_exit_1(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("lens.focal_lenght = 0.05\n")
    assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    assert "lens.focal_lenght" in capsys.readouterr().err
    assert not (tmp_path / "d").exists()


def test_generate_refuses_existing_output(dataset, run_config):
    before = (dataset / "manifest.txt").read_bytes()
    assert main(["generate", "--config", str(run_config), "--out", str(dataset)]) == EXIT_IO
    assert (dataset / "manifest.txt").read_bytes() == before
    assert main(["generate", "--config", str(run_config), "--out", str(dataset), "--force"]) == EXIT_OK


def test_missing_config_file_is_config_error(tmp_path):
    assert main(["generate", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "d")]) == EXIT_CONFIG


def _param_blobs(ckpt):
    return {p.name: read_ten1(p) for p in sorted(ckpt.glob("p*.ten1"))}


def test_train_is_deterministic_and_writes_trace(tmp_path, dataset, run_config, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["train", "--config", str(run_config), "--manifest", str(dataset), "--out", str(out)]) == EXIT_OK
    pa, pb = _param_blobs(a), _param_blobs(b)
    assert pa.keys() == pb.keys() and pa
    for k in pa:
        np.testing.assert_array_equal(pa[k], pb[k])
    assert (a / "trace.csv").read_text() == (b / "trace.csv").read_text()
    rows = (a / "trace.csv").read_text().splitlines()
    assert rows[0] == "iteration,epoch,loss,masked_rmse,val_rmse"
    assert len(rows) == 1 + 2  # 2 training samples, batch 2, 2 epochs
    assert main(["train", "--config", str(run_config), "--manifest", str(dataset), "--out", str(a)]) == EXIT_IO


def test_zero_epochs_checkpoint_equals_initialization(tmp_path, dataset, run_config):
    cfg = tmp_path / "zero.cfg"
    cfg.write_text(SMALL_RUN.replace("train.epochs = 2", "train.epochs = 0"))
    out = tmp_path / "ckpt"
    assert main(["train", "--config", str(cfg), "--manifest", str(dataset), "--out", str(out)]) == EXIT_OK
    init = EDFFModel(RunConfig.load(cfg).model())
    blobs = _param_blobs(out)
    for i, (_, p) in enumerate(init.named_parameters()):
        np.testing.assert_array_equal(blobs[f"p{i:04d}.ten1"], p.data)


def test_train_num_bins_mismatch_is_config_error(tmp_path, dataset):
    cfg = tmp_path / "mismatch.cfg"
    cfg.write_text(SMALL_RUN.replace("encoding.num_bins = 4", "encoding.num_bins = 6"))
    assert main(["train", "--config", str(cfg), "--manifest", str(dataset), "--out", str(tmp_path / "c")]) == EXIT_CONFIG


def test_train_divergence_exit_3(tmp_path, dataset, capsys):
    cfg = tmp_path / "diverge.cfg"
    cfg.write_text(SMALL_RUN.replace("model.depth_bias_init = 5.0", "model.depth_bias_init = nan"))
    assert main(["train", "--config", str(cfg), "--manifest", str(dataset), "--out", str(tmp_path / "c")]) == EXIT_DIVERGED
    assert "last finite loss" in capsys.readouterr().err
    assert not (tmp_path / "c").exists()


def test_eval_both_modes(tmp_path, dataset, run_config, capsys):
    ckpt = tmp_path / "ckpt"
    assert main(["train", "--config", str(run_config), "--manifest", str(dataset), "--out", str(ckpt)]) == EXIT_OK
    capsys.readouterr()
    base_report, model_report = tmp_path / "base.csv", tmp_path / "model.csv"
    assert main(["eval", "--baseline", "--manifest", str(dataset), "--report", str(base_report)]) == EXIT_OK
    base_out = capsys.readouterr().out.splitlines()
    assert main(["eval", "--checkpoint", str(ckpt), "--manifest", str(dataset), "--report", str(model_report)]) == EXIT_OK
    model_out = capsys.readouterr().out.splitlines()
    assert base_out[0] == model_out[0] == "method,rmse_m,absrel,delta1,delta2,delta3,pixels"
    base_row, model_row = base_out[1].split(","), model_out[1].split(",")
    assert base_row[0] == "classical" and model_row[0] == "edff"
    sweep = DatasetManifest.load(dataset).sweep
    assert float(base_row[1]) <= sweep.step_m
    assert np.isfinite(float(model_row[1])) and int(model_row[-1]) > 0
    assert base_report.read_text().startswith("# method classical")
    assert model_report.exists()


def test_eval_unreadable_inputs_exit_2(tmp_path, dataset):
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--manifest", str(dataset),
                 "--report", str(tmp_path / "r.csv")]) == EXIT_IO
    assert main(["eval", "--baseline", "--manifest", str(tmp_path / "nothing"),
                 "--report", str(tmp_path / "r.csv")]) == EXIT_IO
    (dataset / "scene_0001" / "mask.ten1").write_bytes(b"junk")
    assert main(["eval", "--baseline", "--manifest", str(dataset), "--report", str(tmp_path / "r.csv")]) == EXIT_IO


def test_ablate_writes_four_rows(tmp_path, dataset, run_config, capsys):
    report = tmp_path / "ablation.csv"
    assert main(["ablate", "--config", str(run_config), "--manifest", str(dataset), "--report", str(report)]) == EXIT_OK
    lines = [ln for ln in report.read_text().splitlines() if not ln.startswith("#")]
    assert [ln.split(",")[0] for ln in lines[1:5]] == ["baseline", "fdcm", "mdfb", "fdcm+mdfb"]


def test_selfcheck_pass_and_fault(capsys):
    assert main(["selfcheck"]) == EXIT_OK
    assert main(["selfcheck", "--inject-fault", "conv2d"]) == EXIT_SELFCHECK
    assert "conv2d" in capsys.readouterr().err
