import json
import os

import pandas as pd
import pytest

import main
from domain import CheckpointError, DatasetError, MapFileError, ValidationError
from latent_model import load_checkpoint

TINY_FLAGS = [
    "--num-aisles", "2", "--aisle-length", "3", "--frames-per-meter", "3",
    "--num-sequences", "1", "--loops-per-sequence", "2",
    "--image-height", "16", "--image-width", "16", "--image-channels", "1", "--action-dim", "2",
    "--latent-dim", "4", "--conv-channels", "4,8", "--hidden-dim", "16",
    "--batch-size", "4", "--sequence-length", "8", "--learning-rate", "0.001",
    "--grid-x", "16", "--grid-y", "16", "--grid-theta", "12",
]


@pytest.fixture(autouse=True)
def clean_environment(monkeypatch):
    for key in list(os.environ):
        if key.startswith("LATENTSLAM_"):
            monkeypatch.delenv(key)


@pytest.mark.parametrize("error, code", [
    (ValidationError("x"), 2),
    (DatasetError("d", "missing frame", missing=True), 2),
    (MapFileError("map file not found", missing=True), 2),
    (CheckpointError("checkpoint not found", missing=True), 2),
    (DatasetError("d", "unreadable frame"), 1),
    (MapFileError("malformed map file"), 1),
    (CheckpointError("unreadable checkpoint"), 1),
    (OSError("disk full"), 1),
])
def test_exit_codes(error, code):
    assert main.exit_code_for(error) == code


def test_corrupt_dataset_is_a_runtime_failure(tmp_path):
    dataset = tmp_path / "data"
    dataset.mkdir()
    (dataset / "manifest.json").write_text("{ not json")
    code = main.main(["slam", "--dataset", str(dataset), "--checkpoint", str(tmp_path / "m.npz"),
                      "--out", str(tmp_path / "slam")])
    assert code == 1


def test_truncated_map_is_a_runtime_failure(tmp_path):
    broken = tmp_path / "map.json"
    broken.write_text('{"version": 1, "map": ')
    assert main.main(["eval", "--map", str(broken), "--dataset", str(tmp_path / "data"),
                      "--checkpoint", str(tmp_path / "m.npz"), "--out", str(tmp_path / "m.json")]) == 1


@pytest.mark.parametrize("name, content", [
    ("map.json", '{"version": 1, "map": '),
    ("reports.jsonl", "{not a report}\n"),
])
def test_malformed_plot_input(tmp_path, name, content):
    source = tmp_path / name
    source.write_text(content)
    assert main.main(["plot", "--input", str(source), "--out", str(tmp_path / "fig.svg")]) == 2
    assert not (tmp_path / "fig.svg").exists()


def test_missing_dataset(tmp_path, capsys):
    code = main.main(["slam", "--dataset", str(tmp_path / "none"), "--checkpoint", str(tmp_path / "m.npz"),
                      "--out", str(tmp_path / "slam")])
    assert code == 2
    assert "❌" in capsys.readouterr().out


def test_invalid_configuration(tmp_path):
    assert main.main(["simulate", "--out", str(tmp_path / "d"), "--match-threshold", "3"]) == 2


def test_config_file_and_environment(tmp_path, monkeypatch):
    config = tmp_path / "run.env"
    config.write_text("NUM_AISLES=1\nAISLE_LENGTH=2\n")
    monkeypatch.setenv("LATENTSLAM_FRAMES_PER_METER", "2")
    out = tmp_path / "data"
    code = main.main(["simulate", "--config", str(config), "--out", str(out), "--num-sequences", "1",
                      "--loops-per-sequence", "1", "--image-height", "16", "--image-width", "16",
                      "--image-channels", "1"])
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["spec"]["warehouse"]["num_aisles"] == 1
    assert manifest["spec"]["frames_per_meter"] == 2.0


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main.main([])


def test_bench(tmp_path):
    out = tmp_path / "bench.json"
    code = main.main(["bench", *TINY_FLAGS, "--warmup", "1", "--repeats", "2", "--out", str(out)])
    assert code == 0
    result = json.loads(out.read_text())
    assert result["latent_dim"] == 4 and result["obs_shape"] == [16, 16, 1]
    assert result["grid_shape"] == [16, 16, 12]
    assert result["encode_ms"] >= 0.0 and result["process_frame_ms"] >= 0.0


@pytest.mark.slow
def test_full_workflow(tmp_path, capsys):
    data, model, slam = tmp_path / "data", tmp_path / "model.npz", tmp_path / "slam"
    assert main.main(["simulate", *TINY_FLAGS, "--out", str(data)]) == 0

    assert main.main(["train", *TINY_FLAGS, "--dataset", str(data), "--out", str(tmp_path / "half.npz"),
                      "--epochs", "1"]) == 0
    assert main.main(["train", *TINY_FLAGS, "--dataset", str(data), "--out", str(model),
                      "--resume", str(tmp_path / "half.npz"), "--epochs", "2"]) == 0
    assert load_checkpoint(str(model)).epoch == 2
    history = pd.read_csv(tmp_path / "model_loss.csv")
    assert list(history["epoch"]) == [2]

    assert main.main(["slam", *TINY_FLAGS, "--dataset", str(data), "--checkpoint", str(model),
                      "--out", str(slam), "--grid-snapshot", str(tmp_path / "grid.json"), "--pipelined"]) == 0
    assert "loop_closures=" in capsys.readouterr().out
    for name in ("map.json", "reports.jsonl", "edges.csv"):
        assert (slam / name).is_file()
    assert (tmp_path / "grid.json").is_file()

    again = tmp_path / "slam_again"
    assert main.main(["slam", *TINY_FLAGS, "--dataset", str(data), "--checkpoint", str(model),
                      "--out", str(again)]) == 0
    for name in ("map.json", "edges.csv"):
        assert (again / name).read_bytes() == (slam / name).read_bytes()

    threshold = tmp_path / "threshold.env"
    assert main.main(["calibrate", *TINY_FLAGS, "--dataset", str(data), "--checkpoint", str(model),
                      "--out", str(threshold)]) == 0
    assert threshold.read_text().startswith("match_threshold=")
    assert main.main(["slam", *TINY_FLAGS, "--config", str(threshold), "--dataset", str(data),
                      "--checkpoint", str(model), "--out", str(tmp_path / "calibrated")]) == 0

    metrics_path = tmp_path / "metrics.json"
    assert main.main(["eval", *TINY_FLAGS, "--map", str(slam / "map.json"), "--dataset", str(data),
                      "--checkpoint", str(model), "--out", str(metrics_path)]) == 0
    metrics = json.loads(metrics_path.read_text())
    assert set(metrics) == {"sequence", "topology", "dead_reckoning", "pixel_separation", "latent_separation"}
    assert metrics["sequence"] == "seq_000"
    assert metrics["topology"]["revisit_frames"] >= 0
    assert metrics["topology"]["recognized_frames"] <= metrics["topology"]["revisit_frames"]

    for source, target in ((slam / "map.json", "map.svg"), (slam / "reports.jsonl", "reports.svg")):
        assert main.main(["plot", "--input", str(source), "--dataset", str(data), "--out",
                          str(tmp_path / target), "--size", "300"]) == 0
        assert (tmp_path / target).read_text().startswith("<svg")

    # the model expects 16x16 frames, a 32x32 dataset is refused
    other = tmp_path / "other"
    assert main.main(["simulate", *TINY_FLAGS, "--image-height", "32", "--image-width", "32",
                      "--out", str(other)]) == 0
    assert main.main(["slam", *TINY_FLAGS, "--dataset", str(other), "--checkpoint", str(model),
                      "--out", str(tmp_path / "slam2")]) == 2


@pytest.mark.slow
def test_latency_at_default_sizes(tmp_path):
    out = tmp_path / "bench.json"
    assert main.main(["bench", "--warmup", "5", "--repeats", "30", "--out", str(out)]) == 0
    result = json.loads(out.read_text())
    assert result["latent_dim"] == 32 and result["obs_shape"] == [64, 64, 3]
    assert result["grid_shape"] == [40, 40, 36]
    assert result["encode_ms"] < 25.0
    assert result["process_frame_ms"] < 50.0

