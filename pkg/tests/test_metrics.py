import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bgan.metrics import InfinitePSNRError, MetricsConfig, mse, psnr, report, ssim
from oracles import psnr_ref, ssim_two_factor

images = arrays(np.float64, (4, 5), elements=st.floats(0, 1))


def naive_mse(x, y):
    total = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            total += (x[i, j] - y[i, j]) ** 2
    return total / (x.shape[0] * x.shape[1])


def test_config_constants():
    cfg = MetricsConfig()
    assert (cfg.K1, cfg.K2, cfg.L, cfg.t) == (0.01, 0.03, 1.0, 1.0)
    assert cfg.c1 == pytest.approx(1e-4) and cfg.c2 == pytest.approx(9e-4)
    assert cfg.c3 == cfg.c2 / 2


def test_mse_trivial(rng):
    x = rng.random((8, 8))
    assert mse(x, x) == 0.0
    assert mse(x, x + 0.1) == pytest.approx(0.01)
    with pytest.raises(ValueError, match="differ"):
        mse(x, x[:, :7])


def test_mse_matches_double_loop(rng):
    for _ in range(5):
        x, y = rng.random((9, 7)), rng.random((9, 7))
        assert mse(x, y) == pytest.approx(naive_mse(x, y), abs=1e-12)


def test_psnr_trivial(rng):
    x = rng.random((8, 8))
    assert psnr(x, x + 0.1) == pytest.approx(20.0)
    with pytest.raises(InfinitePSNRError):
        psnr(x, x)


def test_psnr_identity_oracle(rng):
    for _ in range(20):
        x, y = rng.random((6, 6)), rng.random((6, 6))
        assert psnr(x, y) == pytest.approx(psnr_ref(x, y), abs=1e-12)


def test_ssim_trivial(rng):
    x = rng.random((8, 8))
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    c = np.full((8, 8), 0.3)
    assert ssim(c, c) == pytest.approx(1.0, abs=1e-12)


def test_ssim_three_factor_equals_collapsed_form():
    gen = np.random.default_rng(0)
    for _ in range(100):
        x, y = gen.random((16, 16)), gen.random((16, 16))
        assert ssim(x, y) == pytest.approx(ssim_two_factor(x, y), abs=1e-9)


def _unique_perm(seed, n):
    return np.random.default_rng(seed).permutation(n)


@given(images, images, st.integers(0, 1000))
def test_metric_invariants(x, y, seed):
    assert mse(x, y) == mse(y, x)
    s = ssim(x, y)
    assert -1 - 1e-12 <= s <= 1 + 1e-12
    perm = _unique_perm(seed, x.size)
    xp, yp = x.ravel()[perm].reshape(x.shape), y.ravel()[perm].reshape(y.shape)
    assert mse(xp, yp) == pytest.approx(mse(x, y), rel=1e-12, abs=1e-15)
    assert ssim(xp, yp) == pytest.approx(s, rel=1e-9, abs=1e-12)


@given(images, images)
def test_ssim_reaches_one_only_at_equality(x, y):
    if not np.array_equal(x, y) and mse(x, y) > 1e-6:
        assert ssim(x, y) < 1.0


@given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
def test_psnr_decreasing_in_mse(a, b):
    if a == b:
        return
    x = np.zeros((2, 2))
    pa, pb = psnr(x, x + math.sqrt(a)), psnr(x, x + math.sqrt(b))
    assert (pa > pb) == (a < b)


def test_report_recomputes(rng, tmp_path):
    refs, tests = rng.random((5, 6, 6)), rng.random((5, 6, 6))
    rep = report(refs, tests)
    per = [mse(refs[i], tests[i]) for i in range(5)]
    np.testing.assert_allclose(rep.mse, per)
    np.testing.assert_allclose(rep.ssim, [ssim(refs[i], tests[i]) for i in range(5)])
    assert rep.summary["mse_mean"] == pytest.approx(np.mean(per))
    assert rep.summary["mse_std"] == pytest.approx(np.std(per, ddof=1))
    rep.write_csv(tmp_path / "m.csv")
    rep.write_json(tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text())["count"] == 5
    assert (tmp_path / "m.csv").read_text().count("\n") == 6


def test_report_single_image_and_identical(rng):
    x = rng.random((1, 4, 4))
    rep = report(x, x * 0.5)
    assert rep.summary["mse_std"] == 0.0 and rep.summary["std_defined"] is False
    same = report(np.vstack([x, x]), np.vstack([x, x]))
    assert same.summary["mse_mean"] == 0.0
    assert same.summary["psnr_mean"] == math.inf
