"""Gaussian kernels on the graph spectrum and the dictionaries they generate.

A bank of J kernels is carried around as a flat parameter vector
``psi = [mu_1 .. mu_J, scale_1 .. scale_J]``.  Kernel j evaluated at graph
frequency lam is exp(-(lam - mu_j)^2 / scale_j^2); applying it to a graph's
eigendecomposition yields one N x N subdictionary per kernel.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .graphs import SpectralDecomposition

# Scale parameters are floored here; optimizers clamp to this value so kernel
# evaluations and derivatives stay finite.
SCALE_FLOOR = 1e-3


@dataclass(frozen=True)
class KernelParams:
    """Center frequency and scale of one Gaussian spectral kernel."""

    mu: float
    scale: float

    def __post_init__(self):
        if not self.scale > 0.0:
            raise ValueError("kernel scale must be positive")


def eval_kernel(params, lam):
    """Gaussian kernel value exp(-(lam - mu)^2 / scale^2), in (0, 1]."""
    d = (lam - params.mu) / params.scale
    return float(np.exp(-d * d))


def split_psi(psi):
    """Split a flat parameter vector into (mu, scale) arrays of length J."""
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 1 or psi.size % 2 != 0 or psi.size == 0:
        raise ValueError("psi must be a flat vector of even positive length")
    j = psi.size // 2
    return psi[:j], psi[j:]


def join_psi(mu, scale):
    return np.concatenate([np.asarray(mu, dtype=float), np.asarray(scale, dtype=float)])


def validate_psi(psi):
    mu, scale = split_psi(psi)
    if not np.all(np.isfinite(mu)) or not np.all(np.isfinite(scale)):
        raise ValueError("psi must be finite")
    if np.any(scale < SCALE_FLOOR):
        raise ValueError(f"kernel scales must be >= {SCALE_FLOOR}")
    return mu, scale


def clamp_scales(psi):
    """Return psi with scale entries floored at SCALE_FLOOR."""
    mu, scale = split_psi(psi)
    return join_psi(mu, np.maximum(scale, SCALE_FLOOR))


def kernel_gains(psi, eigenvalues):
    """Gains (J, N): kernel j evaluated at every eigenvalue."""
    mu, scale = validate_psi(psi)
    d = (eigenvalues[None, :] - mu[:, None]) / scale[:, None]
    return np.exp(-d * d)


def kernel_gain_derivatives(psi, eigenvalues):
    """Partial derivatives of the gains, shape (J, N) each.

    d/dmu   = g * 2 (lam - mu) / scale^2
    d/dscale = g * 2 (lam - mu)^2 / scale^3
    """
    mu, scale = validate_psi(psi)
    delta = eigenvalues[None, :] - mu[:, None]
    g = np.exp(-((delta / scale[:, None]) ** 2))
    dmu = g * 2.0 * delta / (scale[:, None] ** 2)
    dscale = g * 2.0 * delta * delta / (scale[:, None] ** 3)
    return dmu, dscale


@dataclass(frozen=True)
class Dictionary:
    """Concatenated spectral dictionary [D_1 .. D_J] for one graph.

    Each block D_j = U diag(g_j) U^T is symmetric and PSD with spectral norm
    at most 1.  ``gains`` keeps the kernel values at the eigenvalues (J, N);
    ``key`` identifies the generating parameters for caching.
    """

    matrix: np.ndarray
    gains: np.ndarray
    psi: np.ndarray
    decomposition: SpectralDecomposition

    @property
    def node_count(self):
        return self.matrix.shape[0]

    @property
    def kernel_count(self):
        return self.gains.shape[0]

    @property
    def atom_count(self):
        return self.matrix.shape[1]

    def block(self, j):
        n = self.node_count
        return self.matrix[:, j * n : (j + 1) * n]

    @property
    def blocks(self):
        return [self.block(j) for j in range(self.kernel_count)]

    @property
    def key(self):
        return hashlib.sha256(self.psi.tobytes()).hexdigest()


def build_dictionary(decomposition, psi):
    """Synthesize D_j = U diag(g_j(lambda)) U^T for every kernel and concatenate."""
    g = kernel_gains(psi, decomposition.eigenvalues)
    U = decomposition.eigenvectors
    n = U.shape[0]
    j_count = g.shape[0]
    D = np.empty((n, j_count * n))
    for j in range(j_count):
        block = (U * g[j]) @ U.T
        # gemm output is not bitwise symmetric; each block is mathematically
        # symmetric, so enforce it exactly.
        D[:, j * n : (j + 1) * n] = 0.5 * (block + block.T)
    return Dictionary(D, g, np.array(psi, dtype=float), decomposition)


def kernel_param_jacobian(decomposition, psi):
    """Jacobian of the stacked spectral gains with respect to psi, (J*N, 2J).

    Row (j*N + n) corresponds to kernel j's gain at eigenvalue n.  Column j
    holds d g_j / d mu_j, column J + j holds d g_j / d scale_j; all
    cross-kernel entries are exactly zero.
    """
    lam = decomposition.eigenvalues
    dmu, dscale = kernel_gain_derivatives(psi, lam)
    j_count = dmu.shape[0]
    n = lam.size
    jac = np.zeros((j_count * n, 2 * j_count))
    for j in range(j_count):
        jac[j * n : (j + 1) * n, j] = dmu[j]
        jac[j * n : (j + 1) * n, j_count + j] = dscale[j]
    return jac
