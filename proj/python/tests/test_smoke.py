import math

import numpy as np
import pytest

import pfedlvm

TINY = """
data.total_images = 30
scene.image_size = 8
train.epochs = 1
train.batch_size = 4
model.backbone_depth = 4
"""


def test_comm_formulas_match_closed_form():
    p = pfedlvm.CommParams(S_max=100, N_b=10, B_s=8, F_b=1000, M_b=1_000_000, sigma=2, V=3)
    assert pfedlvm.m_pfl(p) == 10 * (1000 * (100 // 8) * 2) * 3
    assert pfedlvm.m_fl(p) == (10 // 2) * 1_000_000 * 2 * 3
    exact, approx = pfedlvm.savings(p)
    assert exact == pytest.approx(1 - pfedlvm.m_pfl(p) / pfedlvm.m_fl(p))
    assert approx == pytest.approx(1 - 1000 / 1_000_000 * (100 // 8) * 2)


def test_bad_params_raise():
    with pytest.raises(pfedlvm.ConfigError):
        pfedlvm.CommParams(S_max=100, N_b=10, B_s=0, F_b=1, M_b=1, sigma=1, V=1)


def test_partition_counts_sum():
    counts = pfedlvm.partition_counts(200, [848 / 2975, 1046 / 2975, 1081 / 2975])
    assert sum(counts) == 200
    assert len(counts) == 3


def test_summarize_two_by_two():
    gt = np.array([[[0, 1], [1, 1]]])
    pred = np.array([[[0, 1], [0, 1]]])
    s = pfedlvm.summarize_masks(pred, gt, 2)
    # class 0: tp 1, fp 1 -> iou 1/2; class 1: tp 2, fn 1 -> iou 2/3
    assert s["per_class"][0]["iou"] == pytest.approx(0.5)
    assert s["per_class"][1]["iou"] == pytest.approx(2 / 3)
    assert s["mean_iou"] == pytest.approx((0.5 + 2 / 3) / 2)


def test_tiny_run_writes_outputs(tmp_path):
    r = pfedlvm.run_config(TINY, tmp_path / "run")
    assert len(r["per_vehicle"]) == 3
    assert r["rounds"] > 0
    assert all(0.0 <= v["mean_iou"] <= 1.0 for v in r["per_vehicle"])
    assert (tmp_path / "run" / "summary.csv").exists()
    again = pfedlvm.run_config(TINY)
    assert again["pooled"]["mean_iou"] == r["pooled"]["mean_iou"]


def test_config_error_names_key():
    with pytest.raises(pfedlvm.ConfigError, match="nope"):
        pfedlvm.run_config("nope = 1\n")
    assert not math.isnan(pfedlvm.run_config(TINY)["pooled"]["mean_iou"])
