import json

import numpy as np
import pytest

from sgkl import ConfigError, DataFormatError, SgklConfig
from sgkl.io import (
    config_to_dict,
    load_config_file,
    load_dataset,
    load_graph_csv,
    load_model,
    load_psi_json,
    load_signals_csv,
    model_config_from_dict,
    psi_from_dict,
    psi_to_dict,
    save_graph_csv,
    save_model,
    save_psi_json,
    save_signals_csv,
    synthetic_spec_from_dict,
)
from sgkl import GraphDataset, ObservedSignalSet, apply_mask, fit
from sgkl.learner import reconstruct

from conftest import random_graph
from test_learner import make_dataset, tiny_config


class TestGraphCsv:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        g = random_graph(rng, n=12, k=3)
        path = tmp_path / "graph.csv"
        save_graph_csv(g, path)
        loaded = load_graph_csv(path)
        assert np.array_equal(loaded.weights, g.weights)

    def test_symmetrized_by_max(self, tmp_path):
        path = tmp_path / "graph.csv"
        path.write_text("nodes=2\n0,1,0.5\n1,0,0.75\n")
        g = load_graph_csv(path)
        assert g.weights[0, 1] == 0.75 and g.weights[1, 0] == 0.75

    def test_bad_header(self, tmp_path):
        path = tmp_path / "graph.csv"
        path.write_text("vertices=3\n")
        with pytest.raises(DataFormatError, match="nodes="):
            load_graph_csv(path)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "graph.csv"
        path.write_text("nodes=3\n0,1,1.0\n0,2\n")
        with pytest.raises(DataFormatError, match="graph.csv:3"):
            load_graph_csv(path)

    def test_out_of_range_index(self, tmp_path):
        path = tmp_path / "graph.csv"
        path.write_text("nodes=2\n0,5,1.0\n")
        with pytest.raises(DataFormatError, match="out of range"):
            load_graph_csv(path)


class TestSignalsCsv:
    def test_roundtrip_bit_exact(self, rng, tmp_path):
        values = rng.standard_normal((6, 4))
        mask = rng.uniform(size=values.shape) < 0.7
        mask[0] = True
        path = tmp_path / "signals.csv"
        save_signals_csv(values, mask, path)
        loaded = load_signals_csv(path)
        assert np.array_equal(loaded.mask, mask)
        assert np.array_equal(loaded.values[mask], values[mask])
        assert np.all(loaded.values[~mask] == 0.0)

    def test_empty_cell_and_nan_literal_masked(self, tmp_path):
        path = tmp_path / "signals.csv"
        path.write_text("1.0,,2.0\n3.0,0.5,NaN\n")
        loaded = load_signals_csv(path)
        assert not loaded.mask[0, 1] and not loaded.mask[1, 2]
        assert loaded.mask[0, 0] and loaded.mask[1, 1] and loaded.mask[0, 2]

    def test_malformed_value_names_line_and_column(self, tmp_path):
        path = tmp_path / "signals.csv"
        path.write_text("1.0,2.0\n1.0,oops\n")
        with pytest.raises(DataFormatError, match="signals.csv:2"):
            load_signals_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "signals.csv"
        path.write_text("1.0,2.0\n1.0\n")
        with pytest.raises(DataFormatError, match="columns"):
            load_signals_csv(path)

    def test_all_missing_signal_rejected(self, tmp_path):
        path = tmp_path / "signals.csv"
        path.write_text("1.0,\n2.0,\n")
        with pytest.raises(DataFormatError, match="no observed"):
            load_signals_csv(path)

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "signals.csv"
        path.write_text("")
        with pytest.raises(DataFormatError, match="empty"):
            load_signals_csv(path)


class TestLoadDataset:
    def test_shape_mismatch(self, rng, tmp_path):
        g = random_graph(rng, n=5, k=2)
        save_graph_csv(g, tmp_path / "g.csv")
        save_signals_csv(np.ones((4, 2)), np.ones((4, 2), dtype=bool), tmp_path / "s.csv")
        with pytest.raises(DataFormatError, match="mismatch"):
            load_dataset(tmp_path / "g.csv", tmp_path / "s.csv")

    def test_roundtrip(self, rng, tmp_path):
        g = random_graph(rng, n=8, k=2)
        values = rng.standard_normal((8, 3))
        mask = apply_mask(values, 0.25, seed=0)
        save_graph_csv(g, tmp_path / "g.csv")
        save_signals_csv(values, mask, tmp_path / "s.csv")
        ds = load_dataset(tmp_path / "g.csv", tmp_path / "s.csv")
        assert np.array_equal(ds.graph.weights, g.weights)
        assert np.array_equal(ds.signals.mask, mask)


class TestPsiJson:
    def test_roundtrip(self, tmp_path):
        psi = np.array([0.1, 0.7, 0.3, 0.4])
        path = tmp_path / "psi.json"
        save_psi_json(psi, path)
        assert np.array_equal(load_psi_json(path), psi)
        payload = json.loads(path.read_text())
        assert set(payload) == {"mu", "s"}

    def test_bad_payload(self):
        with pytest.raises(DataFormatError):
            psi_from_dict({"mu": [1.0]})
        with pytest.raises(DataFormatError):
            psi_from_dict({"mu": [1.0], "s": [0.1, 0.2]})


class TestConfig:
    def test_defaults_from_empty(self):
        cfg = model_config_from_dict({})
        assert isinstance(cfg, SgklConfig)
        spec = synthetic_spec_from_dict({})
        assert spec.graph_count == 2

    def test_nested_sections(self):
        cfg = model_config_from_dict({
            "kernel_count": 3,
            "admm": {"sparsity_weight": 7.0},
            "prior": {"nominal_scale": 0.2},
            "descent": {"max_steps": 11},
        })
        assert cfg.kernel_count == 3
        assert cfg.admm.sparsity_weight == 7.0
        assert cfg.prior.nominal_scale == 0.2
        assert cfg.descent.max_steps == 11

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown"):
            model_config_from_dict({"bogus": 1})

    def test_invalid_value_reported(self):
        with pytest.raises(ConfigError, match="model.admm"):
            model_config_from_dict({"admm": {"rho": -2.0}})

    def test_config_file_roundtrip(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(json.dumps({
            "model": {"kernel_count": 2, "seed": 9},
            "synthetic": {"node_counts": [30], "signal_counts": [10], "seed": 9},
        }))
        cfg, spec = load_config_file(path)
        assert cfg.kernel_count == 2 and spec.node_counts == (30,)

    def test_config_file_errors(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="invalid JSON"):
            load_config_file(path)
        path.write_text(json.dumps({"extra": {}}))
        with pytest.raises(ConfigError, match="sections"):
            load_config_file(path)

    def test_config_to_dict_roundtrips_through_builder(self):
        cfg = SgklConfig(kernel_count=3, seed=4)
        payload = config_to_dict(cfg)
        rebuilt = model_config_from_dict(payload)
        assert rebuilt == cfg


class TestModelCheckpoint:
    def test_save_load_reconstruction_identical(self, rng, tmp_path):
        ds, _, _ = make_dataset(rng, n=12, k_signals=4)
        model = fit([ds], tiny_config(outer_max_iters=2))
        out = tmp_path / "ckpt"
        save_model(model, out)
        loaded = load_model(out)
        assert np.array_equal(loaded.psi, model.psi)
        assert np.allclose(loaded.coefficients[0], model.coefficients[0], atol=1e-15)
        assert np.allclose(reconstruct(loaded, 0), reconstruct(model, 0), atol=1e-12)
        assert loaded.objective_trace == model.objective_trace
        assert loaded.config == model.config

    def test_missing_checkpoint_raises(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_model(tmp_path / "nope")
