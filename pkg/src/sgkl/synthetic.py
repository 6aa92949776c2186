"""Synthetic multi-graph data generation, masking, and the NMSE score."""

from dataclasses import dataclass, field

import numpy as np

from .graphs import ObservedSignalSet, build_knn_graph, graph_spectrum
from .kernels import build_dictionary

# Ground-truth kernel draws below this scale produce near-degenerate
# dictionaries; the draw is floored, not rejected, to keep seeding simple.
MIN_DRAWN_SCALE = 0.05


@dataclass(frozen=True)
class PsiDistribution:
    """Normal laws for ground-truth kernel centers and scales.

    The defaults put narrow kernels in the lower part of the spectrum, where
    k-NN graphs have well-separated eigenvalues; kernels inside the dense
    eigenvalue bulk near 1 produce signal classes that cannot be interpolated
    from partial observations at all.
    """

    mu_mean: float = 0.45
    mu_std: float = 0.08
    scale_mean: float = 0.12
    scale_std: float = 0.012


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a multi-graph synthetic data set.

    Signals are synthesized as dictionary combinations of sparse coefficient
    columns (uniform random support, standard normal magnitudes) plus white
    noise scaled to the target SNR; ``psi_gt`` fixes the generating kernels
    explicitly (one vector, or one per graph) and otherwise they are drawn
    once from ``psi_distribution``.
    """

    node_counts: tuple = (100, 100)
    knn: int = 10
    coord_dim: int = 2
    edge_scale: float = 0.15
    kernel_count: int = 4
    signal_counts: tuple = (200, 400)
    nonzeros_per_signal: int = 40
    coefficient_std: float = 2.0
    snr_db: float | None = 15.0
    seed: int = 0
    psi_distribution: PsiDistribution = field(default_factory=PsiDistribution)
    psi_gt: object = None

    def __post_init__(self):
        if len(self.node_counts) != len(self.signal_counts):
            raise ValueError("node_counts and signal_counts must have equal length")
        if self.kernel_count < 1:
            raise ValueError("kernel_count must be at least 1")
        if self.nonzeros_per_signal < 0:
            raise ValueError("nonzeros_per_signal must be nonnegative")
        for n in self.node_counts:
            if self.nonzeros_per_signal > self.kernel_count * n:
                raise ValueError("nonzeros_per_signal exceeds the atom count")

    @property
    def graph_count(self):
        return len(self.node_counts)


@dataclass
class SyntheticData:
    """Generated graphs plus full ground truth for later scoring."""

    spec: SyntheticSpec
    graphs: list
    decompositions: list
    psi_gt: list
    coefficients_gt: list
    clean: list
    noisy: list
    noise_sigmas: list

    @property
    def graph_count(self):
        return len(self.graphs)


def _resolve_psi_gt(spec, rng):
    j = spec.kernel_count
    if spec.psi_gt is not None:
        given = spec.psi_gt
        if isinstance(given, (list, tuple)) and len(given) and np.ndim(given[0]) == 1:
            vectors = [np.asarray(p, dtype=float) for p in given]
        else:
            vectors = [np.asarray(given, dtype=float)] * spec.graph_count
        if len(vectors) != spec.graph_count or any(v.size != 2 * j for v in vectors):
            raise ValueError("psi_gt must supply 2 * kernel_count values per graph")
        return vectors
    dist = spec.psi_distribution
    mu = rng.normal(dist.mu_mean, dist.mu_std, size=j)
    scale = np.maximum(rng.normal(dist.scale_mean, dist.scale_std, size=j), MIN_DRAWN_SCALE)
    psi = np.concatenate([mu, scale])
    return [psi] * spec.graph_count


def generate_synthetic(spec):
    """Build the graphs, draw ground-truth kernels and sparse coefficients,
    synthesize clean signals, and add SNR-calibrated noise."""
    rng = np.random.default_rng(spec.seed)
    psi_per_graph = _resolve_psi_gt(spec, rng)

    graphs, decs, coeffs, clean, noisy, sigmas = [], [], [], [], [], []
    for n, k_signals, psi in zip(spec.node_counts, spec.signal_counts, psi_per_graph):
        coords = rng.uniform(0.0, 1.0, size=(n, spec.coord_dim))
        graph = build_knn_graph(coords, spec.knn, spec.edge_scale)
        _, dec = graph_spectrum(graph)
        dic = build_dictionary(dec, psi)

        dim = dic.atom_count
        X = np.zeros((dim, k_signals))
        for i in range(k_signals):
            if spec.nonzeros_per_signal:
                support = rng.choice(dim, size=spec.nonzeros_per_signal, replace=False)
                X[support, i] = spec.coefficient_std * rng.standard_normal(spec.nonzeros_per_signal)
        Y_clean = dic.matrix @ X

        if spec.snr_db is None or np.isinf(spec.snr_db):
            sigma = 0.0
            Y_noisy = Y_clean.copy()
        else:
            power = float(np.sum(Y_clean * Y_clean)) / Y_clean.size
            sigma = float(np.sqrt(power * 10.0 ** (-spec.snr_db / 10.0)))
            Y_noisy = Y_clean + sigma * rng.standard_normal(Y_clean.shape)

        graphs.append(graph)
        decs.append(dec)
        coeffs.append(X)
        clean.append(Y_clean)
        noisy.append(Y_noisy)
        sigmas.append(sigma)

    return SyntheticData(spec, graphs, decs, psi_per_graph, coeffs, clean, noisy, sigmas)


def apply_mask(values, missing_ratio, seed):
    """Observation mask hiding exactly round(ratio * N) nodes per signal.

    Masks are independent across signals and reproducible under the seed.
    """
    Y = np.asarray(values)
    n, k = Y.shape
    if not 0.0 <= missing_ratio < 1.0:
        raise ValueError("missing_ratio must lie in [0, 1)")
    hidden = int(round(missing_ratio * n))
    if hidden >= n:
        raise ValueError("missing_ratio leaves no observed entries")
    rng = np.random.default_rng(seed)
    mask = np.ones((n, k), dtype=bool)
    for i in range(k):
        mask[rng.choice(n, size=hidden, replace=False), i] = False
    return mask


def masked_signal_set(values, missing_ratio, seed):
    """Convenience: draw masks and wrap the values as an ObservedSignalSet."""
    mask = apply_mask(values, missing_ratio, seed)
    return ObservedSignalSet(values, mask)


def nmse(truth, estimate, mask):
    """Normalized mean square error over the missing entries of one graph.

    Concatenates the unobserved entries of every signal and returns
    ||truth - estimate||^2 / ||truth||^2 on that vector.
    """
    truth = np.asarray(truth, dtype=float)
    estimate = np.asarray(estimate, dtype=float)
    missing = ~np.asarray(mask, dtype=bool)
    t = truth[missing]
    denom = float(t @ t)
    if denom == 0.0:
        raise ValueError("degenerate ground truth: missing entries have zero norm")
    d = t - estimate[missing]
    return float(d @ d) / denom


def mean_fill(signals):
    """Baseline estimate: each signal's missing entries get its observed mean."""
    Y = signals.values
    mask = signals.mask
    counts = mask.sum(axis=0)
    means = (Y * mask).sum(axis=0) / counts
    filled = np.where(mask, Y, means[None, :])
    return filled
