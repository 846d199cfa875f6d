import math

import numpy as np
import pytest

import hiervis


def test_token_count():
    assert hiervis.token_count(100) == 6
    assert hiervis.token_count(250) == 36
    with pytest.raises(hiervis.HiervisError):
        hiervis.token_count(10)


def test_binarize_is_strict():
    s = np.array([[0.2, 0.5], [0.51, 0.9]], dtype=np.float32)
    assert hiervis.binarize(s, 0.5).tolist() == [[0, 0], [1, 1]]


def test_infonce_aligned_pairs():
    eye = np.eye(4, dtype=np.float32)
    got = hiervis.infonce_loss(eye, eye, math.log(2.0))
    assert got == pytest.approx(math.log1p(3 * math.exp(-2.0)), abs=1e-6)


def test_topk_ties_go_to_lower_index():
    g = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], dtype=np.float32)
    q = np.array([[1.0, 0.1]], dtype=np.float32)
    assert hiervis.topk_accuracy(q, g, [0], [1]) == {1: 1.0}
    assert hiervis.topk_accuracy(q, g, [2], [1, 2]) == {1: 0.0, 2: 1.0}


def test_accounting_reconciles():
    rep = hiervis.accounting_report()
    assert rep["total"] == hiervis.count_parameters()
    assert rep["flops"]["flops"] == 2 * rep["flops"]["macs"]


def test_strict_config():
    with pytest.raises(hiervis.HiervisError):
        hiervis.count_parameters({"bogus": 1})


def test_synthetic_train(tmp_path):
    spec = {"n_concepts": 12, "n_test_concepts": 4, "n_images_per_concept": 2, "channels": 8, "embed_dim": 32,
            "n_subjects": 1}
    hiervis.generate_synthetic(tmp_path / "data", spec)
    cfg = {"training": {"batch_size": 8, "max_epochs": 2, "val_size": 4, "seed": 3}}
    a = hiervis.train(tmp_path / "data", cfg, out=tmp_path / "run")
    b = hiervis.train(tmp_path / "data", cfg)
    assert (tmp_path / "run" / "checkpoint" / "manifest.json").exists()
    assert a == b
    assert a["protocol"] == "subject_dependent"
    assert a["seeds"] == [3]
    assert a["config"]["encoder"]["channels"] == 8
    assert 0.0 <= a["overall"]["mean"]["Triple"]["top1"] <= 1.0
