import numpy as np
import pytest

import egsa


def test_scene_arrays():
    s = egsa.generate_scene(3, height=32, width=32)
    assert s["rgb"].shape == (3, 32, 32)
    assert s["depth"].shape == (32, 32)
    assert s["depth"].min() >= 0.1
    assert set(np.unique(s["seg"])) <= {0, 1, 2}
    np.testing.assert_array_equal(s["transparent"] == 1, s["seg"] == 2)
    again = egsa.generate_scene(3, height=32, width=32)
    np.testing.assert_array_equal(s["rgb"], again["rgb"])


def test_canny_step_and_constant():
    img = np.zeros((64, 64), np.float32)
    img[:, 32:] = 1.0
    e = egsa.canny(img)
    ys, xs = np.nonzero(e[5:-5, 5:-5])
    assert len(xs) > 0
    assert np.all(np.abs(xs + 5 - 31.5) <= 1.0)
    assert egsa.canny(np.full((16, 16), 0.4, np.float32)).sum() == 0


def test_metrics():
    gt = np.array([1, 2, 3, 4], np.float32)
    assert egsa.delta_accuracy(gt, gt, 1.25) == 100.0
    e = egsa.depth_errors(np.ones(5, np.float32), np.full(5, 2.0, np.float32))
    assert e == pytest.approx({"rmse": 1.0, "mae": 1.0, "rel": 0.5})
    assert egsa.miou(np.array([0, 1, 2]), np.array([0, 1, 2]), 3) == 100.0
    with pytest.raises(egsa.DataError):
        egsa.delta_accuracy(np.array([1, 0], np.float32), gt[:2], 1.25)


def test_zero_edges_match_modest():
    rng = np.random.default_rng(0)
    fs = rng.standard_normal((4, 6, 6)).astype(np.float32)
    fd = rng.standard_normal((4, 6, 6)).astype(np.float32)
    base = egsa.egsa_fuse(fs, fd, variant="MODEST_SA", beta=0.0, seed=2)
    gated = egsa.egsa_fuse(fs, fd, np.zeros((6, 6), np.float32), variant="EGSA_SA", beta=1.5, seed=2)
    np.testing.assert_array_equal(base[0], gated[0])
    np.testing.assert_array_equal(base[1], gated[1])
    with pytest.raises(ValueError):
        egsa.egsa_fuse(fs, fd[:2], np.zeros((6, 6), np.float32))


def test_cli_usage_error():
    code, _, err = egsa.run_cli(["frobnicate"])
    assert code == 2
    assert err
