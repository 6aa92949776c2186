"""Graphs, normalized Laplacians, eigendecompositions, and signal-affinity graphs.

All constructors validate their invariants eagerly; every returned object is
treated as immutable and may be shared freely across threads.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Graph:
    """Weighted undirected graph: symmetric nonnegative weights, zero diagonal."""

    weights: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError("weight matrix must be square")
        if not np.array_equal(W, W.T):
            raise ValueError("weight matrix must be exactly symmetric")
        if np.any(W < 0.0):
            raise ValueError("edge weights must be nonnegative")
        if np.any(np.diag(W) != 0.0):
            raise ValueError("self-loops are not allowed (nonzero diagonal)")
        if np.any(W.sum(axis=1) <= 0.0):
            raise ValueError("isolated node: every node needs degree > 0")
        object.__setattr__(self, "weights", W)

    @property
    def node_count(self):
        return self.weights.shape[0]

    @property
    def degrees(self):
        return self.weights.sum(axis=1)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition of a symmetric matrix, eigenvalues ascending.

    Eigenvector signs follow a deterministic convention: the largest-magnitude
    entry of each column is positive, so repeated runs are bit-identical.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        lam = np.asarray(self.eigenvalues, dtype=float)
        U = np.asarray(self.eigenvectors, dtype=float)
        if lam.ndim != 1 or U.ndim != 2 or U.shape != (lam.size, lam.size):
            raise ValueError("inconsistent decomposition shapes")
        if np.any(np.diff(lam) < 0):
            raise ValueError("eigenvalues must be ascending")
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "eigenvectors", U)

    @property
    def size(self):
        return self.eigenvalues.size

    def reconstruct(self):
        U = self.eigenvectors
        return (U * self.eigenvalues) @ U.T


@dataclass(frozen=True)
class ObservedSignalSet:
    """Per-node signal values with per-signal observation masks.

    ``values`` is N x K (nodes x signals); ``mask`` is boolean N x K with True
    marking an observed entry.  Entries at unobserved positions are not
    meaningful; the constructor zeroes them (NaNs included) so that masked
    products never propagate garbage.  Every signal must be observed at one
    node at least.
    """

    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        Y = np.array(self.values, dtype=float)
        M = np.asarray(self.mask, dtype=bool)
        if Y.ndim != 2 or M.shape != Y.shape:
            raise ValueError("values and mask must be equal-shape 2-D arrays")
        if not M.any(axis=0).all():
            raise ValueError("every signal needs at least one observed entry")
        Y[~M] = 0.0
        if not np.all(np.isfinite(Y[M])):
            raise ValueError("observed entries must be finite")
        object.__setattr__(self, "values", Y)
        object.__setattr__(self, "mask", M)

    @property
    def node_count(self):
        return self.values.shape[0]

    @property
    def signal_count(self):
        return self.values.shape[1]

    @property
    def observed_counts(self):
        return self.mask.sum(axis=0)


@dataclass(frozen=True)
class SignalGraphLaplacian:
    """Affinity graph over signals (not nodes) and its Laplacians.

    ``lap`` is the combinatorial Laplacian diag(W 1) - W (rows sum to zero);
    ``normalized_lap`` is I - Deg^{-1/2} W Deg^{-1/2} with unit diagonal
    (isolated signals keep an identity row).  Consumers pick one of the two
    depending on how the coupling regularizer is configured.
    """

    weights: np.ndarray
    lap: np.ndarray
    normalized_lap: np.ndarray
    gamma: float

    @property
    def signal_count(self):
        return self.weights.shape[0]

    def select(self, kind):
        if kind == "normalized":
            return self.normalized_lap
        if kind == "combinatorial":
            return self.lap
        raise ValueError(f"unknown signal-graph laplacian kind: {kind!r}")


def build_knn_graph(coords, k, scale):
    """Union-symmetrized k-nearest-neighbor graph with Gaussian edge weights.

    An edge (i, j) exists iff j is among the k nearest neighbors of i or vice
    versa; its weight is exp(-||p_i - p_j||^2 / scale^2).  Coincident points
    get weight 1.
    """
    P = np.asarray(coords, dtype=float)
    if P.ndim != 2:
        raise ValueError("coords must be an (N, d) array")
    n = P.shape[0]
    if k < 1:
        raise ValueError("k must be at least 1")
    if k >= n:
        raise ValueError(f"k too large: k={k} needs at least k+1={k + 1} nodes, got {n}")
    if not scale > 0.0:
        raise ValueError("scale must be positive")

    diff = P[:, None, :] - P[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    d2_ranked = d2.copy()
    np.fill_diagonal(d2_ranked, np.inf)
    # argpartition is deterministic for a fixed input, which keeps graph
    # construction reproducible under a fixed seed upstream.
    neighbor_idx = np.argpartition(d2_ranked, k - 1, axis=1)[:, :k]
    adjacency = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    adjacency[rows, neighbor_idx.ravel()] = True
    adjacency |= adjacency.T

    W = np.where(adjacency, np.exp(-d2 / (scale * scale)), 0.0)
    np.fill_diagonal(W, 0.0)
    return Graph(W)


def normalized_laplacian(graph):
    """Degree-normalized Laplacian; symmetric with unit diagonal."""
    W = graph.weights
    deg = W.sum(axis=1)
    if np.any(deg <= 0.0):
        raise ValueError("isolated node: zero degree has no normalized Laplacian")
    dinv_sqrt = 1.0 / np.sqrt(deg)
    # -W * outer(d, d) is exactly symmetric because IEEE multiplication
    # commutes; building it any other way can break bitwise symmetry.
    L = -W * np.outer(dinv_sqrt, dinv_sqrt)
    np.fill_diagonal(L, 1.0)
    return L


def eigendecompose(matrix, symmetry_tol=1e-10):
    """Full eigendecomposition of a symmetric matrix with deterministic signs."""
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if A.size and np.max(np.abs(A - A.T)) > symmetry_tol * max(1.0, np.max(np.abs(A))):
        raise ValueError("matrix is not symmetric within tolerance")
    lam, U = np.linalg.eigh(A)
    anchor = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[anchor, np.arange(U.shape[1])])
    signs[signs == 0.0] = 1.0
    U = U * signs
    return SpectralDecomposition(lam, U)


def graph_spectrum(graph):
    """Normalized Laplacian of ``graph`` and its eigendecomposition.

    Eigenvalues are certified to lie in [0, 2 + 1e-8]; tiny negative values
    from floating-point roundoff are clipped to zero.
    """
    L = normalized_laplacian(graph)
    dec = eigendecompose(L)
    lam = dec.eigenvalues
    if lam[0] < -1e-8 or lam[-1] > 2.0 + 1e-8:
        raise ValueError("normalized Laplacian spectrum escaped [0, 2]")
    if lam[0] < 0.0:
        dec = SpectralDecomposition(np.clip(lam, 0.0, None), dec.eigenvectors)
    return L, dec


def restricted_sq_distances(signals):
    """Pairwise squared distances over commonly observed nodes.

    Returns (d2, overlap): K x K squared distances restricted to each pair's
    shared observed nodes, and the K x K count of shared nodes.
    """
    Y = signals.values * signals.mask
    M = signals.mask.astype(float)
    Y2 = Y * Y
    cross = Y.T @ Y
    power = Y2.T @ M  # power[i, j] = sum of y_i^2 over nodes observed in both
    d2 = power + power.T - 2.0 * cross
    d2 = np.maximum(0.5 * (d2 + d2.T), 0.0)
    overlap = signals.mask.T.astype(np.int64) @ signals.mask.astype(np.int64)
    return d2, overlap


def median_pairwise_scale(signals, normalize_by_overlap=False):
    """Median-heuristic affinity scale: median restricted distance over pairs
    with at least one shared observed node.  Falls back to 1.0 when no pair
    shares a node or all shared signals coincide."""
    d2, overlap = restricted_sq_distances(signals)
    k = d2.shape[0]
    iu = np.triu_indices(k, 1)
    shared = overlap[iu] > 0
    if not np.any(shared):
        return 1.0
    vals = d2[iu][shared]
    if normalize_by_overlap:
        vals = vals / overlap[iu][shared]
    med = float(np.median(np.sqrt(vals)))
    return med if med > 0.0 else 1.0


def build_signal_graph(signals, gamma, normalize_by_overlap=False):
    """Affinity graph over signals from their commonly observed entries.

    Pairs with no shared observed node get affinity zero: absent shared
    evidence there is no similarity to encode.  ``normalize_by_overlap``
    divides each squared distance by the shared-node count before taking the
    Gaussian, so pairs with many common entries are not penalized; it is off
    by default.
    """
    if not gamma > 0.0:
        raise ValueError("gamma must be positive")
    d2, overlap = restricted_sq_distances(signals)
    if normalize_by_overlap:
        d2 = np.divide(d2, overlap, out=np.zeros_like(d2), where=overlap > 0)
    W = np.where(overlap > 0, np.exp(-d2 / (gamma * gamma)), 0.0)
    np.fill_diagonal(W, 0.0)
    W = 0.5 * (W + W.T)

    deg = W.sum(axis=1)
    lap = np.diag(deg) - W
    dinv_sqrt = np.zeros_like(deg)
    np.divide(1.0, np.sqrt(deg), out=dinv_sqrt, where=deg > 0)
    normalized = -W * np.outer(dinv_sqrt, dinv_sqrt)
    np.fill_diagonal(normalized, 1.0)
    return SignalGraphLaplacian(W, lap, normalized, float(gamma))
