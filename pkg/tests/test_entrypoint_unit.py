import json

import pytest
from typer.testing import CliRunner

from transamba import __version__
from transamba.entrypoint.main import app

runner = CliRunner()

TINY = """\
seed = 4
variant = V3
layers = 1
model_dim = 8
heads = 2
patch_size = 4
image_height = 8
image_width = 8
planes = 2
d_state = 4
d_conv = 2
epochs = 1
batch_volumes = 2
val_fraction = 0.25
volumes = 4
test_volumes = 2
depth = 4
height = 8
width = 8
radius_min = 1
radius_max = 2
plane_counts = 1,2,4
trials = 1
warmup = 0
volumes_per_pass = 1
total_planes = 4
pin_cpu = false
"""


@pytest.fixture
def tiny_conf(tmp_path):
    path = tmp_path / "tiny.conf"
    path.write_text(TINY, encoding="utf-8")
    return path


def invoke(*args):
    return runner.invoke(app, [str(a) for a in args])


def manifest_commands(directory):
    data = json.loads((directory / "manifest.json").read_text(encoding="utf-8"))
    return [run["command"] for run in data["runs"]]


def test_version():
    result = invoke("version")
    assert result.exit_code == 0
    assert f"transamba version: {__version__}" in result.stdout


def test_info_lists_commands():
    result = invoke("info")
    assert result.exit_code == 0
    for command in ("gen", "train", "infer", "eval", "bench", "complexity"):
        assert command in result.stdout


def test_unknown_config_key_exits_with_2(tmp_path):
    result = invoke("gen", "--out", tmp_path / "data", "--override", "colour=red")
    assert result.exit_code == 2


def test_missing_dataset_exits_with_3(tiny_conf, tmp_path):
    result = invoke("train", "--data", tmp_path / "nothing", "--config", tiny_conf, "--out", tmp_path / "run")
    assert result.exit_code == 3


def test_complexity_tables():
    result = invoke("complexity", "--reference-scale")
    assert result.exit_code == 0
    assert "transamba_layer" in result.stdout
    assert "V5" in result.stdout


def test_complexity_rejects_partial_volumes(tiny_conf):
    assert invoke("complexity", "--config", tiny_conf, "--N", 3).exit_code == 2
    assert invoke("complexity", "--M", 0).exit_code == 2


def test_bench_unknown_target(tiny_conf, tmp_path):
    result = invoke("bench", "--config", tiny_conf, "--target", "cross_RNN", "--out", tmp_path)
    assert result.exit_code == 2


def test_bench_writes_tables(tiny_conf, tmp_path):
    result = invoke("bench", "--config", tiny_conf, "--target", "cross_SSM", "--out", tmp_path)
    assert result.exit_code == 0, result.stdout
    rows = (tmp_path / "bench.tsv").read_text(encoding="utf-8").splitlines()
    assert rows[0] == "N\ttime_ns\tpeak_bytes"
    assert [r.split("\t")[0] for r in rows[1:]] == ["1", "2", "4"]
    fit = (tmp_path / "bench_fit.tsv").read_text(encoding="utf-8").splitlines()
    assert fit[0].startswith("series\tc0\tc1\tc2")
    assert [r.split("\t")[0] for r in fit[1:]] == ["time", "memory"]
    assert any(line.startswith("fit\t") for line in result.stdout.splitlines())
    assert manifest_commands(tmp_path) == ["bench"]


def test_bench_rejects_uneven_plane_split(tiny_conf, tmp_path):
    result = invoke("bench", "--config", tiny_conf, "--target", "cross_SA", "--override", "total_planes=6", "--out", tmp_path)
    assert result.exit_code == 2


def test_gen_train_infer_eval(tiny_conf, tmp_path):
    data, run, pred, scores = (tmp_path / name for name in ("data", "run", "pred", "eval"))

    assert invoke("gen", "--config", tiny_conf, "--out", data).exit_code == 0
    assert (data / "train" / "dataset.json").exists()
    assert len(list((data / "test").glob("*.tsvl"))) == 2
    assert manifest_commands(data) == ["gen"]

    result = invoke("train", "--config", tiny_conf, "--data", data, "--out", run)
    assert result.exit_code == 0, result.stdout
    assert (run / "checkpoint_final.tsck").exists()
    assert manifest_commands(run) == ["train"]

    result = invoke("infer", "--run", run, "--data", data, "--out", pred, "--override", "export_pgm=true")
    assert result.exit_code == 0, result.stdout
    assert len(list((pred / "masks").glob("*.tsvl"))) == 2
    assert (pred / "maps" / "vol_0000" / "plane_000.pgm").exists()

    result = invoke("eval", "--pred", pred, "--truth", data, "--out", scores)
    assert result.exit_code == 0, result.stdout
    metrics = dict(line.split("\t") for line in (scores / "metrics.tsv").read_text(encoding="utf-8").splitlines())
    assert set(metrics) == {"volumes", "dsc", "hd95", "iou"}
    assert metrics["volumes"] == "2"
    assert 0.0 <= float(metrics["dsc"]) <= 1.0


@pytest.mark.slow
def test_pipeline_is_reproducible(tiny_conf, tmp_path):
    for name in ("a", "b"):
        root = tmp_path / name
        assert invoke("gen", "--config", tiny_conf, "--out", root / "data").exit_code == 0
        assert invoke("train", "--config", tiny_conf, "--data", root / "data", "--out", root / "run").exit_code == 0
        assert invoke("infer", "--run", root / "run", "--data", root / "data", "--out", root / "pred").exit_code == 0
        assert invoke("eval", "--pred", root / "pred", "--truth", root / "data", "--out", root / "eval").exit_code == 0
    for rel in (
        "data/train/vol_0000.tsvl",
        "run/checkpoint_final.tsck",
        "run/train_log.tsv",
        "pred/masks/vol_0001.tsvl",
        "eval/metrics.tsv",
        "eval/per_volume.tsv",
    ):
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_seed_flag_changes_the_data(tiny_conf, tmp_path):
    assert invoke("gen", "--config", tiny_conf, "--out", tmp_path / "a").exit_code == 0
    assert invoke("gen", "--config", tiny_conf, "--seed", 5, "--out", tmp_path / "b").exit_code == 0
    a = (tmp_path / "a" / "train" / "vol_0000.tsvl").read_bytes()
    b = (tmp_path / "b" / "train" / "vol_0000.tsvl").read_bytes()
    assert a != b
    assert json.loads((tmp_path / "b" / "manifest.json").read_text(encoding="utf-8"))["runs"][0]["seed"] == 5
