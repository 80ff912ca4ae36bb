import numpy as np
import pytest

from lqkd.stats import binomial_sigma, chi2_uniform_pvalue, mutual_information, total_variation


def test_mutual_information_extremes():
    rng = np.random.default_rng(0)
    x = rng.integers(0, 4, 200_000)
    assert mutual_information(x, x) == pytest.approx(2.0, abs=1e-3)
    y = rng.integers(0, 4, 200_000)
    assert mutual_information(x, y) < 1e-3
    assert mutual_information(x, x % 2) == pytest.approx(1.0, abs=1e-3)
    assert mutual_information([], []) == 0.0
    with pytest.raises(ValueError):
        mutual_information([0, 1], [0])


def test_mutual_information_joint_rows():
    a = np.array([[0, 0], [0, 1], [1, 0], [1, 1]] * 1000)
    assert mutual_information(a, a[:, 0] ^ a[:, 1]) == pytest.approx(1.0)
    assert mutual_information(a[:, 0], a[:, 0] ^ a[:, 1]) == pytest.approx(0.0, abs=1e-12)


def test_chi2_uniform():
    rng = np.random.default_rng(1)
    assert chi2_uniform_pvalue(rng.integers(0, 8, 50_000), 8) > 1e-3
    skewed = np.concatenate([np.zeros(600, int), np.ones(400, int)])
    assert chi2_uniform_pvalue(skewed, 2) < 1e-9
    # values never drawn still count as empty bins
    assert chi2_uniform_pvalue(np.zeros(100, int), 3) < 1e-9


def test_sigma_and_tv():
    assert binomial_sigma(0.5, 100) == pytest.approx(0.05)
    assert binomial_sigma(0.0, 10) == 0.0
    assert total_variation([1, 1, 2], [0.25, 0.25, 0.5]) == pytest.approx(0.0)
    assert total_variation([1, 0], [0, 1]) == pytest.approx(1.0)
