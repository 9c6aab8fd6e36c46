import json
import os
import time

import pytest

from dpqhd import cli, container, cost_model
from dpqhd.cost_model import CostReport

from .test_datasets import make_mnist_dir

BLOBS = os.path.join(os.path.dirname(__file__), "..", "configs", "blobs.yaml")


def run(tmp_path, *args, sub="out"):
    out = tmp_path / sub
    out.mkdir(exist_ok=True)
    code = cli.main([*args, "--config", BLOBS, "--out", str(out),
                     "--metrics", str(out / "metrics.jsonl")])
    return code, out


def records(out):
    return [json.loads(line) for line in (out / "metrics.jsonl").read_text().splitlines()]


def test_train_blobs(tmp_path, capsys):
    code, out = run(tmp_path, "train")
    assert code == 0
    assert (out / cli.MODEL_FILE).exists()
    rec = records(out)[-1]
    assert rec["record"] == "train" and rec["accuracy"] >= 99.0
    assert "baseline accuracy" in capsys.readouterr().out


def test_train_is_deterministic(tmp_path):
    _, a = run(tmp_path, "train", sub="a")
    _, b = run(tmp_path, "train", sub="b")
    assert (a / cli.MODEL_FILE).read_bytes() == (b / cli.MODEL_FILE).read_bytes()
    _, c = run(tmp_path, "train", "--seed", "5", sub="c")
    assert (a / cli.MODEL_FILE).read_bytes() != (c / cli.MODEL_FILE).read_bytes()


def test_missing_data_exits_2(tmp_path, capsys):
    missing = tmp_path / "no_such_dir"
    code = cli.main(["train", "--dataset", "mnist", "--data-dir", str(missing),
                     "--out", str(tmp_path)])
    assert code == 2
    assert str(missing) in capsys.readouterr().err


def test_malformed_data_exits_2(tmp_path):
    make_mnist_dir(tmp_path)
    name = os.path.join(tmp_path, cli.datasets.MNIST_FILES["train"][0])
    with open(name, "r+b") as fh:
        fh.truncate(100)
    assert cli.main(["train", "--dataset", "mnist", "--data-dir", str(tmp_path),
                     "--out", str(tmp_path), "--set", "dim=50"]) == 2


@pytest.mark.parametrize("argv", [
    [],
    ["frobnicate"],
    ["train", "--seed", "x"],
    ["train", "--set", "nonsense"],
    ["train", "--set", "compression.colour=3"],
    ["train", "--set", "dim=0"],
    ["eval", "--mode", "sometimes"],
])
def test_usage_errors_exit_1(argv, tmp_path):
    assert cli.main(argv + ["--out", str(tmp_path)] if argv else argv) == 1


def test_missing_config_file_exits_1(tmp_path):
    assert cli.main(["train", "--config", str(tmp_path / "x.yaml")]) == 1


def test_mnist_layout_runs_end_to_end(tmp_path):
    data = tmp_path / "mnist"
    data.mkdir()
    make_mnist_dir(data, n_train=60, n_test=20)
    out = tmp_path / "out"
    out.mkdir()
    args = ["--dataset", "mnist", "--data-dir", str(data), "--out", str(out),
            "--set", "dim=200", "--set", "compression.rank=16",
            "--set", "calibration.subset_size=20", "--set", "calibration.num_subsets=2"]
    assert cli.main(["train", *args]) == 0
    assert cli.main(["compress", *args]) == 0
    assert cli.main(["eval", *args]) == 0


def test_compress_stage_table(tmp_path, capsys):
    run(tmp_path, "train")
    capsys.readouterr()
    code, out = run(tmp_path, "compress")
    assert code == 0
    stages = [r for r in records(out) if r["record"] == "stage"]
    assert [r["stage"] for r in stages] == ["baseline", "D", "D+P", "D+P+Q"]
    text = capsys.readouterr().out
    for name in ("baseline", "D+P+Q"):
        assert name in text
    loaded = container.load(str(out / cli.COMPRESSED_FILE))
    assert loaded.threshold is not None
    cal = json.loads((out / cli.CALIBRATION_FILE).read_text())
    assert cal[-1]["threshold"] == pytest.approx(loaded.threshold)


def test_identity_grids_keep_baseline_accuracy(tmp_path):
    run(tmp_path, "train")
    code, out = run(tmp_path, "compress", "--set", "calibration.rank_grid=[full]",
                    "--set", "calibration.prune_grid=[0]",
                    "--set", "compression.quantize_p1=false",
                    "--set", "compression.quantize_p2=false",
                    "--set", "compression.quantize_model=false")
    assert code == 0
    rec = [r for r in records(out) if r["record"] == "compress"][-1]
    assert rec["prune_ratio"] == 0 and rec["rank"] == 16
    assert rec["accuracy"] == pytest.approx(rec["accuracy_baseline"], abs=1e-9)


def test_eval_full_mode_and_reload(tmp_path):
    run(tmp_path, "train")
    run(tmp_path, "compress")
    code, out = run(tmp_path, "eval", "--mode", "full", "--artifact",
                    str(tmp_path / "out" / cli.MODEL_FILE))
    assert code == 0
    rec = records(out)[-1]
    assert rec["mode"] == "full" and rec["reduction_percent"] == 0.0
    assert rec["accuracy"] == rec["accuracy_full"] and rec["accuracy_gap"] == 0.0
    code, out = run(tmp_path, "eval")
    rec = records(out)[-1]
    assert code == 0 and rec["mode"] == "adaptive"
    for key in ("accuracy", "accuracy_full", "accuracy_gap", "reduction_percent",
                "macs_mean", "macs_p50", "macs_p90", "early_exit_rate", "tau"):
        assert key in rec
    assert rec["macs_p50"] <= rec["macs_p90"]


def test_eval_feature_mismatch_exits_2(tmp_path):
    run(tmp_path, "train")
    code, _ = run(tmp_path, "eval", "--artifact", str(tmp_path / "out" / cli.MODEL_FILE),
                  "--set", "task.num_features=8")
    assert code == 2


def test_eval_rejects_corrupt_artifact(tmp_path):
    bad = tmp_path / "bad.dpqh"
    bad.write_bytes(b"nope")
    code, _ = run(tmp_path, "eval", "--artifact", str(bad))
    assert code == 2


def test_bench_smoke(tmp_path):
    t0 = time.perf_counter()
    code, out = run(tmp_path, "bench", sub="a")
    elapsed = time.perf_counter() - t0
    assert code == 0 and elapsed < 10.0
    report = json.loads((out / cli.REPORT_FILE).read_text())
    fields = set(CostReport.__dataclass_fields__)
    assert fields <= set(report["baseline"]) and fields <= set(report["compressed"])
    assert report["memory_reduction"] > 1 and report["speedup_proxy"] > 1
    _, again = run(tmp_path, "bench", sub="b")
    assert (again / cli.REPORT_FILE).read_text() == (out / cli.REPORT_FILE).read_text()
    assert records(again) == records(out)
    for name in (cli.MODEL_FILE, cli.COMPRESSED_FILE):
        assert (again / name).read_bytes() == (out / name).read_bytes()


def test_metrics_are_jsonl(tmp_path):
    _, out = run(tmp_path, "bench")
    lines = (out / "metrics.jsonl").read_text().splitlines()
    assert len(lines) > 5
    kinds = {json.loads(line)["record"] for line in lines}
    assert {"train", "stage", "compress", "eval", "bench"} <= kinds


def test_payload_matches_cost(tmp_path):
    _, out = run(tmp_path, "bench")
    for name in (cli.MODEL_FILE, cli.COMPRESSED_FILE):
        path = str(out / name)
        art = container.load(path)
        assert container.payload_size(path) == \
            cost_model.account(art.encoder, art.model).total_bytes


def test_compress_feature_mismatch_exits_2(tmp_path):
    run(tmp_path, "train")
    code, _ = run(tmp_path, "compress", "--set", "task.num_features=8")
    assert code == 2
