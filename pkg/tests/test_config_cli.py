import numpy as np
import pytest

from caswit import netpbm
from caswit.checkpoint import load_checkpoint, save_checkpoint
from caswit.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main, parse_args
from caswit.config import ConfigFileError, RunConfig, load_config, parse_config_text
from caswit.metrics import parse_report
from caswit.model import CASWiT
from caswit.synthetic import shape_tiles
from caswit.tiling import save_tiles


# -- configuration ----------------------------------------------------------------------


def test_defaults():
    cfg = RunConfig()
    assert (cfg.lr, cfg.lr_min, cfg.weight_decay, cfg.epochs, cfg.alpha) == (6e-5, 1e-6, 0.01, 20, 0.5)
    assert (cfg.r_hr, cfg.r_lr) == (0.75, 0.5)
    assert not cfg.augment and cfg.clip_grad == 0.0


def test_parse_config_text():
    values = parse_config_text("# comment\nalpha = 0.25  # inline\n\ngated = true\nfusion-stages = 1,4\nbatch=8\n")
    assert values == {"alpha": 0.25, "gated": True, "fusion_stages": "1,4", "batch": 8}


def test_unknown_key_rejected_with_line():
    with pytest.raises(ConfigFileError, match="line 2"):
        parse_config_text("alpha = 0.5\nlearning_rate = 1\n")
    with pytest.raises(ConfigFileError, match="line 1"):
        parse_config_text("just words\n")


@pytest.mark.parametrize("text", ["alpha = -1", "r_hr = 1.0", "r_lr = 0", "batch = 0", "fusion_stages = 5",
                                  "gated = maybe", "epochs = 2.5", "biou_absent = nan", "init_mode = loose"])
def test_invalid_values(text):
    with pytest.raises(ConfigFileError):
        RunConfig(**parse_config_text(text))


def test_model_config_translation():
    mc = RunConfig(fusion_stages="none", ppm_bins="1, 2").model_config()
    assert mc.fusion_stages == set() and mc.ppm_bins == [1, 2]
    assert RunConfig(fusion_stages="2,4").model_config().fusion_stages == {2, 4}


def test_cli_overrides_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("alpha = 0.25\nseed = 3\n")
    cfg = parse_args(["train", "--config", str(path), "--alpha", "0.75", "--max-steps=4"])
    assert (cfg.mode, cfg.alpha, cfg.seed, cfg.max_steps) == ("train", 0.75, 3, 4)
    assert load_config(path).alpha == 0.25


@pytest.mark.parametrize("argv", [[], ["fly"], ["train", "--bogus", "1"], ["train", "--alpha"], ["train", "stray"]])
def test_usage_errors_exit_1(argv):
    assert main(argv) == EXIT_USAGE


# -- commands ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    return save_tiles(shape_tiles(2, 64), root)


def _train_args(corpus, out, *extra):
    return ["train", "--manifest", str(corpus), "--out", str(out), "--max_steps", "2", "--batch", "2",
            "--lr", "1e-3", "--log_every", "0", *extra]


def test_train_eval_infer_tile_attnmap(tmp_path, corpus, capsys):
    ck = tmp_path / "model.ckpt"
    assert main(_train_args(corpus, ck, "--val_manifest", str(corpus), "--epochs", "1")) == EXIT_OK
    ckpt = load_checkpoint(ck)
    assert ckpt.snapshot["config"]["max_steps"] == 2 and "optimizer" in ckpt.snapshot
    assert (tmp_path / "model.epoch1.txt").exists()

    capsys.readouterr()
    report_path = tmp_path / "report.txt"
    assert main(["eval", "--manifest", str(corpus), "--checkpoint", str(ck), "--out", str(report_path)]) == EXIT_OK
    printed = capsys.readouterr().out
    assert printed == report_path.read_text()
    assert sorted(parse_report(printed)["classes"]) == [0, 1, 2, 3]

    pred_dir = tmp_path / "pred"
    assert main(["infer", "--manifest", str(corpus), "--checkpoint", str(ck), "--out", str(pred_dir)]) == EXIT_OK
    pred = netpbm.read(pred_dir / "scene000_pred.pgm")
    assert pred.shape == (64, 64) and pred.max() < 4

    lr_dir = tmp_path / "lr"
    assert main(["tile", "--manifest", str(corpus), "--out", str(lr_dir)]) == EXIT_OK
    assert netpbm.read(lr_dir / "scene000_lr.ppm").shape == (64, 64, 3)
    assert len(list(lr_dir.glob("*.ppm"))) == 18

    amap = tmp_path / "attn" / "map.pgm"
    args = ["attnmap", "--manifest", str(corpus), "--checkpoint", str(ck), "--out", str(amap),
            "--tile_id", "scene000", "--stage", "2", "--query_x", "5", "--query_y", "7"]
    assert main(args) == EXIT_OK
    img = netpbm.read(amap)
    assert img.shape == (8, 8) and img.max() == 255
    assert amap.with_suffix(".txt").read_text() == "stage=2 query_pixel=7,5 lr_grid=8x8\n"


def test_pretrain_then_finetune(tmp_path, corpus):
    ssl_ck = tmp_path / "ssl.ckpt"
    assert main(["pretrain", "--manifest", str(corpus), "--out", str(ssl_ck), "--max_steps", "1", "--batch", "2",
                 "--log_every", "0"]) == EXIT_OK
    assert any("recon_head" in n for n in load_checkpoint(ssl_ck).params)
    assert main(_train_args(corpus, tmp_path / "ft.ckpt", "--checkpoint", str(ssl_ck))) == EXIT_OK
    assert main(_train_args(corpus, tmp_path / "ft2.ckpt", "--checkpoint", str(ssl_ck), "--init_mode", "strict")) == EXIT_USAGE


def test_data_errors_exit_2(tmp_path, corpus):
    assert main(_train_args(tmp_path / "missing.tsv", tmp_path / "x.ckpt")) == EXIT_DATA
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\ta.ppm\t-\t0\t0\n")
    assert main(_train_args(bad, tmp_path / "x.ckpt")) == EXIT_DATA
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"CSWT\x01\x00")
    assert main(["eval", "--manifest", str(corpus), "--checkpoint", str(broken)]) == EXIT_DATA
    # a label outside the configured class range
    assert main(_train_args(corpus, tmp_path / "x.ckpt", "--num_classes", "2")) == EXIT_DATA


def test_class_count_mismatch_exit_1(tmp_path, corpus):
    ck = tmp_path / "k2.ckpt"
    save_checkpoint(ck, CASWiT(RunConfig(num_classes=2).model_config()))
    assert main(["eval", "--manifest", str(corpus), "--checkpoint", str(ck), "--num_classes", "2"]) == EXIT_USAGE


def test_numeric_error_exit_3(tmp_path, corpus):
    model = CASWiT(RunConfig().model_config())
    for p in model.parameters():
        p.data[...] = np.nan
    ck = tmp_path / "nan.ckpt"
    save_checkpoint(ck, model)
    assert main(_train_args(corpus, tmp_path / "x.ckpt", "--checkpoint", str(ck))) == EXIT_NUMERIC
    assert not (tmp_path / "x.ckpt").exists()
