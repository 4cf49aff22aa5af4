import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reflectpriv.metrics import MetricError, QualityScore, levenshtein, psnr, quality, ssim, ssim_map
from synth import brute_distance


def test_psnr_examples():
    a = np.random.default_rng(0).random((16, 16, 3)) * 0.5
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, a + 0.5) - 6.0206) < 1e-4
    with pytest.raises(MetricError):
        psnr(a, a[:8])


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(1)
    a = rng.random((32, 32))
    u = rng.uniform(-1, 1, a.shape)
    vals = [psnr(a, a + amp * u) for amp in np.linspace(0.01, 0.5, 12)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def direct_ssim(a, b):
    """Window-by-window SSIM straight from the definition."""
    x = np.arange(11) - 5
    g = np.exp(-x ** 2 / (2 * 1.5 ** 2))
    w = np.outer(g, g) / np.outer(g, g).sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(a.shape[0] - 10):
        for j in range(a.shape[1] - 10):
            pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
            ma, mb = (w * pa).sum(), (w * pb).sum()
            va, vb = (w * (pa - ma) ** 2).sum(), (w * (pb - mb) ** 2).sum()
            cov = (w * (pa - ma) * (pb - mb)).sum()
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_ssim_matches_direct_oracle():
    rng = np.random.default_rng(2)
    a = rng.random((64, 64))
    b = np.clip(a + rng.normal(0, 0.2, a.shape), 0, 1)
    assert abs(ssim(a, b) - direct_ssim(a, b)) < 1e-6
    c = rng.random((64, 64))
    assert abs(ssim(a, c) - direct_ssim(a, c)) < 1e-6


def test_ssim_identity_and_errors():
    a = np.random.default_rng(3).random((20, 24, 3))
    assert abs(ssim(a, a) - 1.0) < 1e-9
    with pytest.raises(MetricError):
        ssim(a[:10], a[:10])
    with pytest.raises(MetricError):
        ssim(a, a[:, :20])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((2, 16, 16, 3))
    assert abs(ssim(a, b) - ssim(b, a)) < 1e-9
    assert -1 <= ssim(a, b) <= 1


def test_ssim_detects_permutation_within_window():
    rng = np.random.default_rng(4)
    a = rng.random((33, 33))
    b = a.copy()
    for i in range(0, 33, 11):
        for j in range(0, 33, 11):
            blk = b[i:i + 11, j:j + 11].ravel()
            b[i:i + 11, j:j + 11] = rng.permutation(blk).reshape(11, 11)
    assert ssim(a, b) < 1


def test_masked_metrics():
    rng = np.random.default_rng(5)
    a = rng.random((40, 40))
    b = a.copy()
    b[:, 30:] = 0
    m = np.zeros((40, 40), bool)
    m[:, :15] = True
    assert ssim(a, b, m) == pytest.approx(1.0) and psnr(a, b, m) == math.inf
    assert ssim_map(a, b).shape == (30, 30, 1)
    with pytest.raises(MetricError):
        ssim(a, b, np.zeros((40, 40), bool))


def test_quality_score_invariants():
    a = np.random.default_rng(6).random((16, 16))
    q = quality(a, a * 0.9)
    assert q.psnr > 0 and -1 <= q.ssim <= 1
    with pytest.raises(MetricError):
        QualityScore(-1.0, 0.5)
    with pytest.raises(MetricError):
        QualityScore(10.0, 1.5)


SMALL = ["".join(p) for n in range(5) for p in itertools.product("ab", repeat=n)]


def test_levenshtein_examples():
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "abc") == 0
    assert levenshtein("kitten", "sitting") == 3


def test_levenshtein_exhaustive_oracle():
    for a in SMALL:
        for b in SMALL:
            assert levenshtein(a, b) == brute_distance(a, b), (a, b)


def test_levenshtein_is_a_metric():
    d = {(a, b): levenshtein(a, b) for a in SMALL for b in SMALL}
    for a in SMALL:
        for b in SMALL:
            assert d[a, b] == d[b, a]
            assert (d[a, b] == 0) == (a == b)
            for c in SMALL:
                assert d[a, c] <= d[a, b] + d[b, c]


@settings(max_examples=100, deadline=None)
@given(st.text("abc", max_size=8), st.text("abc", max_size=8))
def test_levenshtein_bounds(a, b):
    d = levenshtein(a, b)
    assert abs(len(a) - len(b)) <= d <= max(len(a), len(b))
