from pathlib import Path

import pytest
from typer.testing import CliRunner

from transamba.entrypoint.main import app

pytestmark = [pytest.mark.slow, pytest.mark.bench]

DESK_CONF = Path(__file__).resolve().parents[1] / "meta" / "benchmarks" / "configs" / "desk.conf"

runner = CliRunner()


def invoke(*args):
    result = runner.invoke(app, [str(a) for a in args])
    assert result.exit_code == 0, result.stdout
    return result


def read_tsv(path):
    rows = [line.split("\t") for line in path.read_text(encoding="utf-8").splitlines()]
    return [dict(zip(rows[0], row)) for row in rows[1:]]


@pytest.fixture(scope="module")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    data = root / "data"
    invoke("gen", "--config", DESK_CONF, "--out", data)
    runs = {}
    for variant in ("V1", "V3"):
        run, pred, scores = (root / f"{name}_{variant}" for name in ("run", "pred", "eval"))
        invoke("train", "--config", DESK_CONF, "--data", data, "--out", run, "--override", f"variant={variant}")
        invoke("infer", "--run", run, "--data", data, "--out", pred, "--config", DESK_CONF)
        invoke("eval", "--pred", pred, "--truth", data, "--out", scores)
        metrics = dict(line.split("\t") for line in (scores / "metrics.tsv").read_text(encoding="utf-8").splitlines())
        runs[variant] = {
            "log": read_tsv(run / "train_log.tsv"),
            "metrics": {k: float(v) for k, v in metrics.items()},
        }
    return runs


@pytest.mark.parametrize("variant", ["V1", "V3"])
def test_training_loss_drops(desk_runs, variant):
    log = desk_runs[variant]["log"]
    assert len(log) == 20
    assert float(log[-1]["loss"]) < float(log[0]["loss"])


def test_cross_plane_context_beats_in_plane_only(desk_runs):
    v1, v3 = desk_runs["V1"]["metrics"], desk_runs["V3"]["metrics"]
    assert v1["volumes"] == v3["volumes"] == 20
    assert v3["dsc"] >= v1["dsc"] + 0.05, (v1, v3)
    assert v3["iou"] >= v1["iou"] + 0.03, (v1, v3)
