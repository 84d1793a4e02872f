"""Synthetic spiked blocks ``S~ = S + Z`` with separable noise ``Z = A^1/2 X B^1/2``.

The generator is the ground-truth laboratory for everything else in the
package: it returns the observed block together with the signal, the noise
and the planted singular vectors, so that estimators can be checked against
known answers.

Conventions
-----------
* ``X`` has i.i.d. symmetric entries with variance exactly ``1/d``.
* Signal singular vectors come from the QR factorisation of independent
  standard Gaussian matrices, sign-fixed so that ``diag(R) > 0``.
* White noise (``A = I``, ``B = I``) therefore has Marchenko-Pastur bulk
  edge ``(1 + sqrt(beta))**2`` with ``beta = n/d``.
"""

from dataclasses import dataclass, field

import numpy as np

from .seeding import derive_seed, generator

DEFAULT_TAU = 0.05

_COV_KINDS = ("identity", "diagonal", "toeplitz", "explicit")
_ENTRY_DISTS = ("gaussian", "rademacher_scaled")


@dataclass(frozen=True)
class CovarianceSpec:
    """Row or column covariance of the noise.

    Use the ``identity``/``diagonal``/``toeplitz``/``explicit`` constructors
    rather than filling the fields by hand.
    """

    kind: str
    dim: int
    values: tuple = ()
    rho: float = 0.0
    matrix: np.ndarray = field(default=None, repr=False, compare=False)
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if self.kind not in _COV_KINDS:
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.dim < 2:
            raise ValueError("covariance dimension must be at least 2")
        if self.kind == "diagonal" and len(self.values) != self.dim:
            raise ValueError("diagonal covariance needs exactly `dim` values")
        if self.kind == "toeplitz" and not 0.0 <= self.rho < 1.0:
            raise ValueError("toeplitz rho must lie in [0, 1)")
        eig = np.linalg.eigvalsh(_covariance_matrix(self))
        if eig[0] <= 0:
            raise ValueError(
                f"{self.kind} covariance is not positive definite "
                f"(smallest eigenvalue {eig[0]:.3e})")
        if eig[-1] > 1.0 / self.tau:
            raise ValueError(
                f"largest covariance eigenvalue {eig[-1]:.3g} exceeds 1/tau = {1 / self.tau:.3g}")
        if np.mean(eig <= self.tau) > 1.0 - self.tau:
            raise ValueError("too much covariance spectral mass in [0, tau]")

    @classmethod
    def identity(cls, dim, tau=DEFAULT_TAU):
        return cls("identity", int(dim), tau=tau)

    @classmethod
    def diagonal(cls, values, tau=DEFAULT_TAU):
        values = tuple(float(v) for v in values)
        return cls("diagonal", len(values), values=values, tau=tau)

    @classmethod
    def toeplitz(cls, dim, rho, tau=DEFAULT_TAU):
        return cls("toeplitz", int(dim), rho=float(rho), tau=tau)

    @classmethod
    def explicit(cls, matrix, tau=DEFAULT_TAU):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("explicit covariance must be a square matrix")
        if not np.allclose(matrix, matrix.T, rtol=0, atol=1e-12 * np.abs(matrix).max()):
            raise ValueError("explicit covariance must be symmetric")
        matrix.setflags(write=False)
        return cls("explicit", matrix.shape[0], matrix=matrix, tau=tau)

    @property
    def is_identity(self):
        return self.kind == "identity"


def _covariance_matrix(spec):
    if spec.kind == "identity":
        return np.eye(spec.dim)
    if spec.kind == "diagonal":
        return np.diag(np.asarray(spec.values, dtype=np.float64))
    if spec.kind == "toeplitz":
        idx = np.arange(spec.dim)
        return spec.rho ** np.abs(idx[:, None] - idx[None, :])
    return np.array(spec.matrix, dtype=np.float64)


def realize_covariance(spec):
    """Materialise a covariance and its symmetric square root.

    Returns ``(matrix, root)`` with ``root @ root == matrix``.
    """
    matrix = _covariance_matrix(spec)
    if spec.kind == "identity":
        return matrix, np.eye(spec.dim)
    if spec.kind == "diagonal":
        return matrix, np.diag(np.sqrt(np.diag(matrix)))
    w, q = np.linalg.eigh(matrix)
    if w[0] <= 0:
        raise ValueError(f"covariance is not positive definite (eigenvalue {w[0]:.3e})")
    root = (q * np.sqrt(w)) @ q.T
    return matrix, 0.5 * (root + root.T)


@dataclass(frozen=True)
class SpikedModelSpec:
    n: int
    d: int
    signal_strengths: tuple = ()
    noise_row_cov: CovarianceSpec = None
    noise_col_cov: CovarianceSpec = None
    entry_dist: str = "gaussian"
    seed: int = 0
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        strengths = tuple(float(s) for s in self.signal_strengths)
        object.__setattr__(self, "signal_strengths", strengths)
        if self.noise_row_cov is None:
            object.__setattr__(self, "noise_row_cov", CovarianceSpec.identity(self.n, self.tau))
        if self.noise_col_cov is None:
            object.__setattr__(self, "noise_col_cov", CovarianceSpec.identity(self.d, self.tau))

        beta = self.n / self.d
        if not self.tau < beta < 1.0 / self.tau:
            raise ValueError(f"aspect ratio n/d = {beta:.3g} outside ({self.tau}, {1 / self.tau})")
        if self.entry_dist not in _ENTRY_DISTS:
            raise ValueError(f"unknown entry distribution {self.entry_dist!r}")
        if any(s <= 0 for s in strengths):
            raise ValueError("signal strengths must be positive")
        if list(strengths) != sorted(strengths, reverse=True):
            raise ValueError("signal strengths must be sorted in descending order")
        if strengths and strengths[0] >= 1.0 / self.tau:
            raise ValueError(f"signal strength {strengths[0]} not below 1/tau")
        if len(strengths) >= min(self.n, self.d):
            raise ValueError("signal rank must be strictly smaller than min(n, d)")
        if self.noise_row_cov.dim != self.n or self.noise_col_cov.dim != self.d:
            raise ValueError("noise covariance dimensions do not match (n, d)")

    @property
    def rank(self):
        return len(self.signal_strengths)

    @property
    def beta(self):
        return self.n / self.d


@dataclass(frozen=True)
class SpikedGroundTruth:
    signal: np.ndarray
    noise: np.ndarray
    left_vectors: np.ndarray
    right_vectors: np.ndarray
    strengths: tuple
    per_token_snr: np.ndarray


def random_orthonormal(rng, rows, cols):
    """Orthonormal ``rows x cols`` frame from QR of a Gaussian matrix, sign-fixed."""
    if cols == 0:
        return np.zeros((rows, 0))
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _noise_core(rng, n, d, dist):
    if dist == "gaussian":
        return rng.standard_normal((n, d)) / np.sqrt(d)
    return (2.0 * rng.integers(0, 2, size=(n, d)) - 1.0) / np.sqrt(d)


def sample_block(spec):
    """Draw ``(block, truth)`` for a spiked model spec; deterministic in ``spec.seed``."""
    n, d = spec.n, spec.d
    x = _noise_core(generator(derive_seed(spec.seed, "noise")), n, d, spec.entry_dist)
    noise = x
    if not spec.noise_row_cov.is_identity:
        noise = realize_covariance(spec.noise_row_cov)[1] @ noise
    if not spec.noise_col_cov.is_identity:
        noise = noise @ realize_covariance(spec.noise_col_cov)[1]

    u = random_orthonormal(generator(derive_seed(spec.seed, "left")), n, spec.rank)
    v = random_orthonormal(generator(derive_seed(spec.seed, "right")), d, spec.rank)
    strengths = np.asarray(spec.signal_strengths, dtype=np.float64)
    signal = (u * strengths) @ v.T

    noise_energy = np.einsum("ij,ij->i", noise, noise)
    snr = np.einsum("ij,ij->i", signal, signal) / noise_energy
    truth = SpikedGroundTruth(signal, noise, u, v, spec.signal_strengths, snr)
    return signal + noise, truth


def mp_edge(beta):
    """Upper Marchenko-Pastur edge for entry variance ``1/d`` and ``beta = n/d``."""
    return (1.0 + np.sqrt(beta)) ** 2


def mp_stieltjes(z, beta):
    """Stieltjes transforms ``(m1, m2)`` of the white-noise limits of ``ZZ^T`` and ``Z^T Z``.

    Valid for real ``z >= mp_edge(beta)``.  ``m1`` is the transform of the
    ``n``-point spectrum (with its atom at zero when ``n > d``); ``m2``
    follows from ``n*m1 - d*m2 = (n - d) * (-1/z)``.
    """
    z = np.asarray(z, dtype=np.float64)
    disc = np.maximum((z - 1.0 - beta) ** 2 - 4.0 * beta, 0.0)
    m1 = (1.0 - beta - z + np.sqrt(disc)) / (2.0 * beta * z)
    m2 = beta * m1 + (beta - 1.0) / z
    return m1, m2


def white_noise_alpha(beta):
    """BBP threshold ``1/sqrt(T(lambda_+))`` for white noise at aspect ratio ``beta``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    edge = mp_edge(beta)
    m1, m2 = mp_stieltjes(edge, beta)
    return float(1.0 / np.sqrt(edge * m1 * m2))
