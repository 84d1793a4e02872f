import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eoptshrinkq import shrinkage
from eoptshrinkq.shrinkage import (ComponentEstimate, apply_shrinker, estimate_component, shrink,
                                   theta_map)
from eoptshrinkq.spectral import NoiseSpectrumEstimate
from eoptshrinkq.spiked_synth import CovarianceSpec, SpikedModelSpec, sample_block


def spiked(strengths, seed, n=128, d=128, **kw):
    return sample_block(SpikedModelSpec(n, d, tuple(strengths), seed=seed, **kw))


def test_zero_matrix():
    result, resid = shrink(np.zeros((32, 32)))
    assert result.rank == 0
    assert np.array_equal(resid, np.zeros((32, 32)))
    assert result.estimate().shape == (32, 32)


def test_pure_noise_rank_zero():
    zero = 0
    for s in range(60):
        block, _ = spiked((), s)
        result, resid = shrink(block)
        if result.rank == 0:
            zero += 1
            assert np.array_equal(resid, block)
    assert zero / 60 >= 0.95


def test_residual_is_exact_difference():
    block, _ = spiked((5.0, 3.0), 2)
    result, resid = shrink(block)
    assert result.rank == 2
    assert np.array_equal(resid, block - result.estimate())


def test_white_noise_estimates_match_theory():
    # beta = 1: squared overlaps 1 - 1/d^2, Frobenius shrinker d - 1/d
    d_hat, a1, phi = [], [], []
    for s in range(50):
        result, _ = shrink(spiked((3.0,), s)[0])
        c = result.components[0]
        d_hat.append(c.d_hat)
        a1.append(c.a1_hat)
        phi.append(c.phi_hat)
    assert np.mean(d_hat) == pytest.approx(3.0, abs=0.05)
    assert np.mean(a1) == pytest.approx(1 - 1 / 9, abs=0.02)
    assert np.mean(phi) == pytest.approx(3 - 1 / 3, abs=0.06)


def test_beats_rank_one_truncation():
    wins = 0
    for s in range(100):
        block, truth = spiked((3.0,), 100 + s)
        result, _ = shrink(block)
        u, sv, vt = np.linalg.svd(block)
        trunc = sv[0] * np.outer(u[:, 0], vt[0])
        if np.sum((result.estimate() - truth.signal) ** 2) < np.sum((trunc - truth.signal) ** 2):
            wins += 1
    assert wins >= 90


@pytest.mark.parametrize("factor", [1.5, 2.0, 4.0])
def test_dominates_oracle_rank_truncation(factor):
    shrink_loss, trunc_loss = [], []
    for s in range(100):
        block, truth = spiked((factor,), 1000 + s)
        result, _ = shrink(block)
        u, sv, vt = np.linalg.svd(block)
        trunc = sv[0] * np.outer(u[:, 0], vt[0])
        shrink_loss.append(np.sum((result.estimate() - truth.signal) ** 2))
        trunc_loss.append(np.sum((trunc - truth.signal) ** 2))
    assert np.mean(shrink_loss) <= np.mean(trunc_loss)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(1.2, 12.0), min_size=1, max_size=4), st.integers(0, 10_000),
       st.sampled_from(["frobenius", "operator", "nuclear"]))
def test_shrinkage_never_inflates(strengths, seed, loss):
    block, _ = spiked(sorted(strengths, reverse=True), seed, 96, 128)
    result, _ = shrink(block, loss)
    sigma = np.linalg.svd(block, compute_uv=False)
    for c in result.components:
        assert 0.0 <= c.phi_hat <= sigma[c.index - 1]
        assert 0.0 <= c.a1_hat <= 1.0 and 0.0 <= c.a2_hat <= 1.0


def test_colored_noise_shrinkage():
    cov = CovarianceSpec.toeplitz(128, 0.4)
    block, truth = spiked((8.0, 5.0), 3, noise_col_cov=cov)
    result, _ = shrink(block)
    assert result.rank == 2
    err = np.linalg.norm(result.estimate() - truth.signal) / np.linalg.norm(truth.signal)
    assert err < 0.35


def test_shrinker_formulas():
    est = ComponentEstimate(1, 10.0, 4.0, 0.81, 0.64)
    assert apply_shrinker("frobenius", est) == pytest.approx(4 * 0.72)
    assert apply_shrinker("operator", est) == pytest.approx(4 * math.sqrt(0.64 / 0.81))
    assert apply_shrinker("nuclear", est) == pytest.approx(4 * (0.72 - math.sqrt(0.19 * 0.36)))
    weak = ComponentEstimate(1, 5.0, 1.0, 0.3, 0.2)
    assert apply_shrinker("nuclear", weak) == 0.0
    with pytest.raises(ValueError):
        apply_shrinker("spectral", est)
    with pytest.raises(ValueError):
        shrink(np.eye(20), "spectral")


def test_demoted_component_has_zero_value():
    est = ComponentEstimate(1, 3.0, float("nan"), 0.0, 0.0, 0.0, True)
    assert apply_shrinker("frobenius", est) == 0.0


def test_transform_positive_above_bulk():
    noise = NoiseSpectrumEstimate(np.array([1.0, 0.9, 0.8]), 400, 3)
    assert not estimate_component(noise, 1.5).demoted


def test_nonpositive_transform_demotes(monkeypatch):
    real = shrinkage.d_transform_at

    def flipped(noise, z):
        pt = real(noise, z)
        return type(pt)(pt.z, pt.m1, -pt.m2, pt.m1_prime, pt.m2_prime, -pt.t_value, pt.t_prime)

    monkeypatch.setattr(shrinkage, "d_transform_at", flipped)
    block, _ = spiked((6.0, 4.0), 5)
    result, resid = shrink(block)
    assert result.rank == 0 and result.demoted == 2
    assert np.array_equal(resid, block)


def test_theta_map_inverts_estimates():
    block, _ = spiked((4.0,), 8)
    result, _ = shrink(block)
    c = result.components[0]
    assert theta_map(result.noise, c.d_hat) == pytest.approx(c.observed_eigenvalue, rel=1e-8)
    assert theta_map(result.noise, 2.0) < theta_map(result.noise, 3.0) < c.observed_eigenvalue
