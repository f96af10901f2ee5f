import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sdtgan.data import encode_text
from sdtgan.metrics import (FeatureSet, SingularCovarianceWarning, StubClassifier, StubEmbedder,
                            frechet_distance, frechet_from_moments, inception_score, kl_metric, timing_report)
from sdtgan.models import Generator

from conftest import small_model

scipy_linalg = pytest.importorskip("scipy.linalg")


def test_frechet_identity_and_1d():
    x = np.random.default_rng(0).standard_normal((200, 8))
    a = FeatureSet(x)
    assert abs(frechet_distance(a, FeatureSet(x.copy()))) < 1e-6
    assert abs(frechet_from_moments([0.0], [[1.0]], [1.0], [[1.0]]) - 1.0) < 1e-12
    # (mu diff)^2 + (sigma_a - sigma_b)^2 for 1-D
    assert abs(frechet_from_moments([0.0], [[4.0]], [0.0], [[1.0]]) - 1.0) < 1e-12


def _random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.1 * np.eye(d)


@pytest.mark.parametrize("seed", range(10))
def test_frechet_matches_sqrtm_oracle(seed):
    rng = np.random.default_rng(seed)
    d = 6
    mu_a, mu_b = rng.standard_normal(d), rng.standard_normal(d)
    sa, sb = _random_spd(rng, d), _random_spd(rng, d)
    root = scipy_linalg.sqrtm(sa @ sb).real
    ref = float(((mu_a - mu_b) ** 2).sum() + np.trace(sa + sb - 2 * root))
    assert abs(frechet_from_moments(mu_a, sa, mu_b, sb) - ref) < 1e-8 * max(1, abs(ref))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_frechet_symmetric_and_rotation_invariant(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((80, 5)), rng.standard_normal((80, 5)) * 1.5 + 0.3
    fa, fb = FeatureSet(a), FeatureSet(b)
    d = frechet_distance(fa, fb)
    assert d >= -1e-9
    assert abs(d - frechet_distance(fb, fa)) < 1e-8
    q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    assert abs(d - frechet_distance(FeatureSet(a @ q), FeatureSet(b @ q))) < 1e-8


def test_frechet_dimension_mismatch():
    with pytest.raises(ValueError):
        frechet_distance(FeatureSet(np.zeros((10, 3))), FeatureSet(np.zeros((10, 4))))


def test_small_sample_regularized_with_warning():
    x = np.random.default_rng(1).standard_normal((5, 8))
    with pytest.warns(SingularCovarianceWarning):
        d = frechet_distance(FeatureSet(x), FeatureSet(x + 0.1))
    assert np.isfinite(d)


@pytest.mark.parametrize("k", [2, 5, 10])
def test_inception_score_cases(k):
    assert abs(inception_score(np.eye(k)) - k) < 1e-9
    assert abs(inception_score(np.tile(np.full(k, 1.0 / k), (7, 1))) - 1.0) < 1e-12


@pytest.mark.parametrize("k", [2, 5, 16])
def test_kl_cases(k):
    p = np.eye(k)
    assert kl_metric(p, p) == 0.0
    assert abs(kl_metric(p, np.full((k, k), 1.0 / k)) - math.log(k)) < 1e-12


def test_kl_validation():
    with pytest.raises(ValueError):
        kl_metric(np.eye(3), np.eye(4))
    with pytest.raises(ValueError):
        inception_score(np.full((2, 3), 0.5))


def test_stubs_deterministic():
    mels = np.random.default_rng(2).uniform(size=(4, 16, 16, 1))
    a = StubEmbedder(16, 16, 32, 3)(mels).features
    assert a.tobytes() == StubEmbedder(16, 16, 32, 3)(mels).features.tobytes()
    p = StubClassifier(16, 16, 8, 3)(mels)
    np.testing.assert_allclose(p.sum(1), 1.0)


def test_timing_report():
    G = Generator(small_model())
    rep = timing_report(G, [encode_text([i], 16) for i in range(3)], 10)
    assert set(rep) == {"mean_ms", "median_ms", "p95_ms", "params"}
    assert rep["p95_ms"] >= rep["median_ms"] > 0
    with pytest.raises(ValueError):
        timing_report(G, [encode_text([0], 16)], 5)
