import json
import math

import pytest

import dmix


def tiny_config(tmp_path):
    c = dmix.default_config()
    c["corpus"]["clips_per_class"] = 10
    c["train"].update(initial_lr=3e-3, epochs_per_task=2, batch_size=8)
    c["model"].update(d_model=16, heads=2, bottleneck=4, encoder_blocks=1, decoder_blocks=1, ffn_hidden=32)
    c["output_dir"] = str(tmp_path / "runs")
    c["seeds"] = [1]
    return c


def test_metric_oracle():
    assert dmix.mean_of([81.00, 76.85, 67.87, 69.38, 66.52]) == pytest.approx(72.32, abs=0.01)
    rows = [[0.9], [0.5, 0.8], [0.4, 0.6, 0.7]]
    assert dmix.avg_accuracy(rows) == pytest.approx((0.4 + 0.6 + 0.7) / 3)
    assert dmix.avg_forgetting(rows) == pytest.approx((0.5 + 0.2 + 0.0) / 3)
    with pytest.raises(dmix.MetricsError):
        dmix.avg_accuracy([[0.9], [0.5]])


def test_loss_and_baseline_math():
    assert dmix.data_loss(2.0, 1.0, 0.5) == 1.5
    assert dmix.total_loss(1.5, 0.2, 0.1) == pytest.approx(1.52)
    assert dmix.agem_project([1.0, -1.0], [0.0, 1.0]) == [1.0, 0.0]
    assert dmix.ewc_penalty([2.0], [1.0], [1.0], 1.0) == 0.5
    assert dmix.ewc_penalty([2.0], [1.0], [2.0], 1.0) == 0.0
    assert dmix.lwf_loss([0.3, -1.0], [0.3, -1.0], 0.25, 1.0, 2.0) == pytest.approx(0.25)
    s = 1 / (1 + math.exp(-1))
    assert dmix.lwf_loss([0.0, 1.0], [1.0, 0.0], 0.0, 1.0, 1.0) == pytest.approx(2 * s - 1)


def test_splice_is_additive():
    a, b, spliced, overlaid = dmix.splice_lengths(1, 2, 1.3, 0.7, 5)
    assert spliced == a + b
    assert overlaid == max(a, b)


def test_config_validation():
    assert "double_mixture" in dmix.methods()
    c = dmix.default_config()
    c["train"]["lamda"] = 0.3
    with pytest.raises(dmix.ConfigError):
        dmix.stream_summary(c)


def test_stream_and_run(tmp_path):
    c = tiny_config(tmp_path)
    s = dmix.stream_summary(c)
    assert s["ok"] and len(s["tasks"]) == 3
    c["task_order"] = [2, 0, 1]
    r = dmix.run_seed(c, 1)
    assert r["task_order"] == [2, 0, 1]
    assert len(r["matrix"]) == 3 and len(r["matrix"][2]) == 3
    assert r["avg_acc"] == pytest.approx(sum(r["per_task"]) / 3)
    assert r == dmix.run_seed(c, 1)


def test_experiment_writes_runs(tmp_path):
    c = tiny_config(tmp_path)
    c["method"] = "ft"
    (tmp_path / "cfg.json").write_text(json.dumps(c))
    assert dmix.load_config(tmp_path / "cfg.json")["method"] == "ft"
    runs = dmix.run_experiment(c)
    assert len(runs) == 1
    seed_dir = tmp_path / "runs" / "ft" / "seed_1"
    assert sorted(p.name for p in seed_dir.iterdir()) == sorted(
        ["config.json", "r_matrix.csv", "metrics.json", "train_log.jsonl", "plot_data.csv"])
    report = dmix.report_csv(tmp_path / "runs").splitlines()
    assert report[0].startswith("method,dataset,avg_acc_mean")
    assert report[1].startswith("ft,synthetic,")


def test_grad_check():
    r = dmix.grad_check(2)
    assert r["checked"] > 500
    assert r["max_relative_error"] < 1e-4
