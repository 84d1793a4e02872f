"""Optimal singular value shrinkage under colored noise.

``shrink`` runs the whole estimator: SVD, bulk edge and rank, noise-spectrum
imputation, plug-in strength/overlap estimates from the D-transform, and the
loss-specific shrinker.  It returns the low-rank estimate in factored form
together with the residual ``R = block - S_hat``.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq

from .spectral import (SpectrumError, d_transform_at, decompose,
                       estimate_bulk_edge, impute_noise_spectrum)

logger = logging.getLogger(__name__)

LOSSES = ("frobenius", "operator", "nuclear")


@dataclass(frozen=True)
class ComponentEstimate:
    index: int
    observed_eigenvalue: float
    d_hat: float
    a1_hat: float
    a2_hat: float
    phi_hat: float = None
    demoted: bool = False


@dataclass(frozen=True)
class ShrinkageResult:
    left: np.ndarray
    right: np.ndarray
    values: np.ndarray
    rank: int
    components: tuple
    loss: str
    edge: object = None
    noise: object = None

    @property
    def demoted(self):
        return sum(c.demoted for c in self.components)

    def estimate(self):
        """The dense low-rank estimate ``S_hat``."""
        return (self.left * self.values) @ self.right.T


def estimate_component(noise, lambda_i, index=1):
    """Plug-in strength and overlap estimates at an outlier eigenvalue.

    A non-positive D-transform at ``lambda_i`` contradicts the outlier
    characterisation; the component is returned with ``demoted=True``.
    """
    pt = d_transform_at(noise, lambda_i)
    if not pt.t_value > 0 or not pt.t_prime != 0:
        return ComponentEstimate(index, float(lambda_i), float("nan"), 0.0, 0.0, 0.0, True)
    d_hat = 1.0 / np.sqrt(pt.t_value)
    scale = d_hat ** 2 * pt.t_prime
    a1, a2 = pt.m1 / scale, pt.m2 / scale
    if a1 < 0 or a2 < 0:
        logger.warning("negative overlap estimate (%.3g, %.3g) at eigenvalue %.4g clamped to 0",
                       a1, a2, lambda_i)
    return ComponentEstimate(index, float(lambda_i), float(d_hat),
                             float(np.clip(a1, 0.0, 1.0)), float(np.clip(a2, 0.0, 1.0)))


def apply_shrinker(loss, est):
    """Shrunken singular value for ``loss`` in {frobenius, operator, nuclear}."""
    d, a1, a2 = est.d_hat, est.a1_hat, est.a2_hat
    if est.demoted:
        return 0.0
    if loss == "frobenius":
        phi = d * np.sqrt(a1 * a2)
    elif loss == "operator":
        hi = max(a1, a2)
        phi = d * np.sqrt(min(a1, a2) / hi) if hi > 0 else 0.0
    elif loss == "nuclear":
        phi = d * (np.sqrt(a1 * a2) - np.sqrt((1.0 - a1) * (1.0 - a2)))
    else:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    return float(max(phi, 0.0))


def _empty_result(block, loss, edge=None, noise=None, components=()):
    n, d = block.shape
    return ShrinkageResult(np.zeros((n, 0)), np.zeros((d, 0)), np.zeros(0), 0,
                           tuple(components), loss, edge, noise)


def shrink(block, loss="frobenius"):
    """Denoise ``block``; returns ``(ShrinkageResult, residual)``."""
    if loss not in LOSSES:
        raise ValueError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    block = np.asarray(block, dtype=np.float64)
    sd = decompose(block)
    if not np.any(sd.singular_values > 0):
        return _empty_result(block, loss), block.copy()
    try:
        edge = estimate_bulk_edge(sd)
    except SpectrumError as exc:
        if "degenerate" not in str(exc):
            raise
        logger.warning("no noise bulk in block (%s); skipping shrinkage", exc)
        return _empty_result(block, loss), block.copy()
    if edge.r_plus_hat == 0:
        return _empty_result(block, loss, edge), block.copy()

    noise = impute_noise_spectrum(sd, edge)
    lam = sd.eigenvalues
    components = []
    keep = []
    for i in range(edge.r_plus_hat):
        est = estimate_component(noise, lam[i], index=i + 1)
        phi = apply_shrinker(loss, est)
        est = replace(est, phi_hat=phi)
        components.append(est)
        if not est.demoted:
            keep.append(i)
    if len(keep) < edge.r_plus_hat:
        logger.warning("%d component(s) demoted: non-positive D-transform",
                       edge.r_plus_hat - len(keep))
    if not keep:
        return _empty_result(block, loss, edge, noise, components), block.copy()

    keep = np.array(keep)
    values = np.array([components[i].phi_hat for i in keep])
    result = ShrinkageResult(sd.left_vectors[:, keep], sd.right_vectors[:, keep], values,
                             len(keep), tuple(components), loss, edge, noise)
    return result, block - result.estimate()


def theta_map(noise, d_hat, upper=None):
    """Outlier location ``T^-1(1 / d_hat**2)`` for a strength ``d_hat``.

    Diagnostic only.  The empirical ``T`` has a pole at the top noise
    eigenvalue and decreases to 0, so a root always exists.
    """
    target = 1.0 / d_hat ** 2
    lo = noise.eigenvalues[0] * (1.0 + 1e-6)
    f = lambda z: d_transform_at(noise, z).t_value - target
    hi = upper or max(2.0 * lo, 1.0)
    while f(hi) > 0:
        hi *= 2.0
    return float(brentq(f, lo, hi, xtol=1e-12))

