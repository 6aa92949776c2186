"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s``.  The multi-seed benchmark
fits are shared across criteria through session fixtures; every fitted model
also feeds the objective-monotonicity registry checked at the end.
"""

import time
from dataclasses import replace

import numpy as np
import pytest

from sgkl import (
    AdmmConfig,
    DescentConfig,
    GraphDataset,
    KernelPrior,
    ObservedSignalSet,
    SgklConfig,
    apply_mask,
    build_dictionary,
    fit,
    graph_spectrum,
    infer_inductive,
    nmse,
    reconstruct,
)
from sgkl.coder import CoderWorkspace, _solve_column
from sgkl.experiments import (
    run_fit_cell,
    run_joint_vs_individual,
    run_sensitivity_sweep,
    smooth3,
)
from sgkl.kernel_opt import GraphFitData, PsiObjective
from sgkl.learner import MONOTONE_SLACK
from sgkl.synthetic import PsiDistribution, SyntheticSpec, generate_synthetic, mean_fill

pytestmark = pytest.mark.slow

BENCHMARK_SEEDS = [0, 1, 2, 3, 4]

# The two-graph benchmark data setup: N=100 per graph, 10-NN topology, J=4
# generating kernels, 200/400 signals, 40 nonzeros per signal, 20% missing,
# 15 dB SNR.  Model weights are the package defaults.
BENCHMARK_SPEC = SyntheticSpec(
    node_counts=(100, 100),
    knn=10,
    kernel_count=4,
    signal_counts=(200, 400),
    nonzeros_per_signal=40,
    snr_db=15.0,
    seed=0,
)
BENCHMARK_CONFIG = SgklConfig(kernel_count=4, seed=0)
BENCHMARK_MISSING = 0.2

# Objective traces from every fit the suite runs (criterion 6).
TRACE_REGISTRY = []


def register_trace(trace):
    TRACE_REGISTRY.append([float(v) for _, v in trace])


def trace_is_monotone(values):
    return all(
        b <= a + MONOTONE_SLACK * max(1.0, abs(a)) for a, b in zip(values, values[1:])
    )


@pytest.fixture(scope="session")
def benchmark_runs():
    """Five seeded fits of the benchmark setup; shared by criteria 1, 6, 7, 9."""
    runs = []
    t0 = time.time()
    for seed in BENCHMARK_SEEDS:
        records, model = run_fit_cell(
            BENCHMARK_SPEC, BENCHMARK_CONFIG, BENCHMARK_MISSING, seed
        )
        register_trace(model.objective_trace)
        runs.append({"seed": seed, "records": records, "model": model})
    return {"runs": runs, "wall_time": time.time() - t0}


def small_instance(rng, n=None, j=None, k_signals=None):
    """Random small coding instance with moderate weights."""
    n = n or int(rng.integers(8, 13))
    j = j or int(rng.integers(1, 3))
    k_signals = k_signals or int(rng.integers(1, 4))
    coords = rng.uniform(0, 1, (n, 2))
    from sgkl import build_knn_graph, build_signal_graph

    graph = build_knn_graph(coords, 3, 0.6)
    lap, dec = graph_spectrum(graph)
    psi = np.concatenate([rng.uniform(0.1, 1.6, j), rng.uniform(0.2, 0.6, j)])
    dic = build_dictionary(dec, psi)
    values = rng.standard_normal((n, k_signals))
    mask = apply_mask(values, 0.3, seed=int(rng.integers(1 << 31)))
    obs = ObservedSignalSet(values, mask)
    sgl = build_signal_graph(obs, 1.0)
    cfg = AdmmConfig(
        max_iters=3000,
        tol_primal=1e-10,
        tol_dual=1e-10,
        sparsity_weight=float(rng.uniform(0.1, 1.0)),
        fidelity_weight=float(rng.uniform(1.0, 8.0)),
        smoothness_weight=float(rng.uniform(0.1, 1.5)),
        coupling_weight=float(rng.uniform(0.3, 2.0)),
    )
    return graph, lap, dec, psi, dic, obs, sgl, cfg


class TestCriterion1BenchmarkReproduction:
    def test_mean_nmse_at_most_one_percent(self, benchmark_runs):
        per_graph = {0: [], 1: []}
        for run in benchmark_runs["runs"]:
            for rec in run["records"]:
                per_graph[rec["graph"]].append(rec["nmse"])
                # the fitted model must beat the mean-fill floor
                assert rec["nmse"] < rec["baseline_nmse"]
        means = {g: float(np.mean(v)) for g, v in per_graph.items()}
        wall = benchmark_runs["wall_time"]
        for g in (0, 1):
            assert means[g] <= 0.01, f"graph {g} mean NMSE {means[g]:.4f}"
        print(
            f"\nPASS criterion 1: benchmark mean NMSE "
            f"{means[0]:.4f} / {means[1]:.4f} over {len(BENCHMARK_SEEDS)} seeds "
            f"(<= 0.01), wall time {wall / 60:.1f} min"
        )


class TestCriterion2SnrTrend:
    # Reduced data size keeps the 25 fits tractable; the grid, the trend
    # requirement, and the -1 dB window are as stated.
    SPEC = replace(BENCHMARK_SPEC, signal_counts=(60, 120))
    GRID = [-5.0, -1.0, 6.0, 9.0, 15.0]

    def test_nmse_strictly_decreasing_in_snr(self):
        report = run_sensitivity_sweep(
            "snr", self.GRID, self.SPEC, BENCHMARK_CONFIG,
            seeds=BENCHMARK_SEEDS, missing_ratio=BENCHMARK_MISSING,
        )
        aggregates = {}
        for row in report.rows:
            if row["kind"] == "aggregate":
                aggregates.setdefault(row["value"], []).append(row["nmse"])
        curve = [float(np.mean(aggregates[v])) for v in self.GRID]
        for a, b in zip(curve, curve[1:]):
            assert b < a, f"NMSE not strictly decreasing along SNR grid: {curve}"
        at_minus1 = curve[self.GRID.index(-1.0)]
        assert 0.2 <= at_minus1 <= 0.8, f"NMSE(-1 dB) = {at_minus1:.3f}"
        print(
            f"\nPASS criterion 2: seed-averaged NMSE strictly decreasing over "
            f"{self.GRID} dB: {[f'{v:.3f}' for v in curve]}, "
            f"NMSE(-1 dB) = {at_minus1:.3f} in [0.2, 0.8]"
        )


class TestCriterion3OverSparsification:
    def test_thousandfold_sparsity_weight_collapses_to_zero(self):
        cfg = replace(
            BENCHMARK_CONFIG,
            admm=replace(BENCHMARK_CONFIG.admm,
                         sparsity_weight=BENCHMARK_CONFIG.admm.sparsity_weight * 1000.0),
        )
        errors = []
        for seed in BENCHMARK_SEEDS[:2]:
            records, model = run_fit_cell(BENCHMARK_SPEC, cfg, BENCHMARK_MISSING, seed)
            register_trace(model.objective_trace)
            for X in model.coefficients:
                assert np.count_nonzero(X) == 0, "coefficients not exactly zero"
            errors.extend(rec["nmse"] for rec in records)
        for err in errors:
            assert abs(err - 1.0) <= 0.05
        print(
            f"\nPASS criterion 3: sparsity weight x1000 zeroes every coefficient, "
            f"NMSE {[f'{e:.3f}' for e in errors]} (all within 1.00 +/- 0.05)"
        )


class TestCriterion4GradientCorrectness:
    def test_analytic_gradient_matches_central_differences(self):
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(10):
            n = int(rng.integers(6, 13))
            j = int(rng.integers(1, 4))
            k_signals = int(rng.integers(1, 4))
            coords = rng.uniform(0, 1, (n, 2))
            from sgkl import build_knn_graph

            graph = build_knn_graph(coords, 3, 0.6)
            _, dec = graph_spectrum(graph)
            values = rng.standard_normal((n, k_signals))
            mask = rng.uniform(size=values.shape) < 0.75
            mask[0] = True
            coeffs = rng.standard_normal((j * n, k_signals)) * 0.5
            data = GraphFitData(dec, values * mask, mask, coeffs)
            prior = KernelPrior(nominal_scale=float(rng.uniform(0.2, 0.6)),
                                scale_weight=float(rng.uniform(0.5, 20.0)))
            ev = PsiObjective([data], prior, float(rng.uniform(0.5, 5.0)),
                              float(rng.uniform(0.1, 2.0)))
            psi = np.concatenate([rng.uniform(0.1, 1.7, j), rng.uniform(0.25, 0.7, j)])
            grad = ev.gradient(psi)
            h = 1e-5
            for p in range(psi.size):
                e = np.zeros_like(psi)
                e[p] = h
                fd = (ev.value(psi + e) - ev.value(psi - e)) / (2 * h)
                if abs(fd) < 1e-8:
                    assert abs(grad[p] - fd) <= 1e-6
                else:
                    rel = abs(grad[p] - fd) / abs(fd)
                    worst = max(worst, rel)
                    assert rel <= 1e-5
        print(
            f"\nPASS criterion 4: analytic kernel gradient matches central "
            f"finite differences on 10 random instances (worst rel err {worst:.2e})"
        )


class TestCriterion5AdmmOracleEquivalence:
    def test_objective_matches_proximal_gradient_oracle(self):
        rng = np.random.default_rng(77)
        worst = 0.0
        for _ in range(20):
            _, lap, dec, psi, dic, obs, sgl, cfg = small_instance(rng)
            X = rng.standard_normal((dic.atom_count, obs.signal_count)) * 0.3
            i = int(rng.integers(obs.signal_count))
            ws = CoderWorkspace(dic, lap, cfg)
            z, info = _solve_column(
                ws, obs.values[:, i], obs.mask[:, i], i, X, sgl.normalized_lap[i],
                warm_z=None, warm_dual=None,
            )
            # independent oracle: proximal gradient on the same column problem
            d_obs = dic.matrix[obs.mask[:, i]]
            y_obs = obs.values[obs.mask[:, i], i]
            Q = dic.matrix.T @ (lap @ dic.matrix)
            row = np.array(sgl.normalized_lap[i])
            lii = row[i]
            row[i] = 0.0
            kappa = X @ row
            dim = dic.atom_count
            H = (2 * cfg.fidelity_weight * (d_obs.T @ d_obs)
                 + 2 * cfg.smoothness_weight * Q
                 + 2 * cfg.coupling_weight * lii * np.eye(dim))
            lin = (-2 * cfg.fidelity_weight * (d_obs.T @ y_obs)
                   + 2 * cfg.coupling_weight * kappa)
            step = 1.0 / np.linalg.eigvalsh(H).max()
            tau = step * cfg.sparsity_weight
            x = np.zeros(dim)
            for _ in range(1000000):
                w = x - step * (H @ x + lin)
                x_new = np.sign(w) * np.maximum(np.abs(w) - tau, 0.0)
                if np.max(np.abs(x_new - x)) < 1e-14:
                    x = x_new
                    break
                x = x_new

            def objective(v):
                r = y_obs - d_obs @ v
                return (cfg.sparsity_weight * np.abs(v).sum()
                        + cfg.fidelity_weight * float(r @ r)
                        + cfg.smoothness_weight * float(v @ (Q @ v))
                        + cfg.coupling_weight * (lii * float(v @ v) + 2 * float(v @ kappa)))

            f_admm = objective(z)
            f_star = objective(x)
            rel = abs(f_admm - f_star) / max(abs(f_star), 1e-12)
            worst = max(worst, rel)
            assert rel <= 1e-5, f"relative objective gap {rel:.2e}"
        print(
            f"\nPASS criterion 5: ADMM objective within 1e-5 of the proximal-"
            f"gradient oracle on 20 random instances (worst rel gap {worst:.2e})"
        )


class TestCriterion7DictionaryInvariants:
    def test_every_generated_dictionary_obeys_invariants(self, benchmark_runs):
        rng = np.random.default_rng(5150)
        dictionaries = [run["model"].dictionaries[m]
                        for run in benchmark_runs["runs"] for m in (0, 1)]
        for _ in range(10):
            n = int(rng.integers(6, 25))
            coords = rng.uniform(0, 1, (n, 2))
            from sgkl import build_knn_graph

            _, dec = graph_spectrum(build_knn_graph(coords, 3, 0.5))
            j = int(rng.integers(1, 5))
            psi = np.concatenate([rng.uniform(0, 2, j), rng.uniform(0.05, 1.0, j)])
            dictionaries.append(build_dictionary(dec, psi))
        checked = 0
        for dic in dictionaries:
            for j in range(dic.kernel_count):
                block = dic.block(j)
                assert np.linalg.norm(block - block.T) <= 1e-10
                lam = np.linalg.eigvalsh(block)
                assert lam.min() >= -1e-9
                assert lam.max() <= 1.0 + 1e-9
                checked += 1
        print(
            f"\nPASS criterion 7: {checked} dictionary blocks symmetric "
            f"(F-norm <= 1e-10), PSD (min eig >= -1e-9), spectral norm <= 1+1e-9"
        )


class TestCriterion8JointVsIndividual:
    SPEC = SyntheticSpec(
        node_counts=(40, 40),
        knn=6,
        kernel_count=2,
        signal_counts=(10, 10),
        nonzeros_per_signal=10,
        snr_db=15.0,
        seed=11,
        psi_distribution=PsiDistribution(0.45, 0.06, 0.12, 0.012),
    )
    CONFIG = SgklConfig(
        kernel_count=2,
        outer_max_iters=25,
        seed=3,
    )
    DELTAS = [0.0, 0.1, 0.25, 0.5]
    KS = [5, 10, 20, 40]

    def test_threshold_trend(self):
        report = run_joint_vs_individual(
            self.DELTAS, self.KS, self.SPEC, self.CONFIG,
            seeds=BENCHMARK_SEEDS, missing_ratio=0.4,
        )
        curves = {}
        for row in report.rows:
            if row["kind"] == "aggregate":
                curves.setdefault((row["value"], row["regime"]), {})[row["signal_count"]] = row["nmse"]
        joint0 = smooth3([curves[(0.0, "joint")][k] for k in self.KS])
        ind0 = smooth3([curves[(0.0, "individual")][k] for k in self.KS])
        for k, a, b in zip(self.KS, joint0, ind0):
            assert a <= b, f"joint worse than individual at delta=0, K={k}: {a:.4f} > {b:.4f}"
        thresholds = report.meta["thresholds"]
        for a, b in zip(thresholds, thresholds[1:]):
            assert b <= a, f"threshold series not non-increasing: {thresholds}"
        print(
            f"\nPASS criterion 8: at delta=0 joint <= individual for every K "
            f"{self.KS}; threshold series {thresholds} non-increasing over "
            f"deltas {self.DELTAS} ({len(BENCHMARK_SEEDS)} seeds, smoothed)"
        )


class TestCriterion9InductiveConsistency:
    def test_inductive_within_twice_transductive(self, benchmark_runs):
        ratios = []
        for run in benchmark_runs["runs"]:
            model = run["model"]
            seed = run["seed"]
            rng = np.random.default_rng(900 + seed)
            m = 0
            dic = model.dictionaries[m]
            # held-out signals generated from the fitted kernels
            k_test = 40
            X_test = np.zeros((dic.atom_count, k_test))
            for i in range(k_test):
                support = rng.choice(dic.atom_count, BENCHMARK_SPEC.nonzeros_per_signal,
                                     replace=False)
                X_test[support, i] = BENCHMARK_SPEC.coefficient_std * rng.standard_normal(
                    BENCHMARK_SPEC.nonzeros_per_signal)
            clean = dic.matrix @ X_test
            sigma = np.sqrt((clean ** 2).mean() * 10 ** (-BENCHMARK_SPEC.snr_db / 10))
            noisy = clean + sigma * rng.standard_normal(clean.shape)
            mask = apply_mask(noisy, BENCHMARK_MISSING, seed=1234 + seed)
            result = infer_inductive(model, ObservedSignalSet(noisy, mask), m)
            TRACE_REGISTRY.append([float(v) for v in result.objective_trace])
            inductive = nmse(clean, result.reconstruction, mask)
            transductive = run["records"][m]["nmse"]
            ratios.append(inductive / transductive)
            assert inductive <= 2.0 * transductive, (
                f"seed {seed}: inductive {inductive:.4f} vs transductive {transductive:.4f}"
            )
        print(
            f"\nPASS criterion 9: inductive NMSE within 2x of transductive on "
            f"all {len(ratios)} seeds (ratios {[f'{r:.2f}' for r in ratios]})"
        )


class TestCriterion6ObjectiveMonotonicity:
    def test_trace_registry_non_increasing(self, benchmark_runs):
        rng = np.random.default_rng(31)
        # top up the registry with quick varied fits so the matrix exceeds
        # twenty runs regardless of which criteria ran before this one
        while len(TRACE_REGISTRY) < 21:
            n, j, k_signals = 14, 2, 5
            coords = rng.uniform(0, 1, (n, 2))
            from sgkl import build_knn_graph

            graph = build_knn_graph(coords, 3, 0.6)
            values = rng.standard_normal((n, k_signals))
            mask = apply_mask(values, 0.25, seed=int(rng.integers(1 << 31)))
            cfg = SgklConfig(
                kernel_count=j,
                prior=KernelPrior(nominal_scale=0.3, scale_weight=float(rng.uniform(1, 100))),
                admm=AdmmConfig(max_iters=300,
                                sparsity_weight=float(rng.uniform(0.05, 2.0)),
                                fidelity_weight=float(rng.uniform(5.0, 100.0)),
                                smoothness_weight=float(rng.uniform(0.1, 2.0)),
                                coupling_weight=float(rng.uniform(0.1, 3.0))),
                descent=DescentConfig(max_steps=50),
                outer_max_iters=5,
                seed=int(rng.integers(1 << 16)),
            )
            model = fit([GraphDataset(graph, ObservedSignalSet(values, mask))], cfg)
            register_trace(model.objective_trace)
        violations = [values for values in TRACE_REGISTRY if not trace_is_monotone(values)]
        assert not violations, f"{len(violations)} non-monotone traces"
        assert len(TRACE_REGISTRY) >= 20
        print(
            f"\nPASS criterion 6: objective trace non-increasing within 1e-9 "
            f"relative slack across {len(TRACE_REGISTRY)} fit runs"
        )
