"""File formats: graph/signal CSV, kernel JSON, model checkpoints, configs.

Floats are written with ``repr`` so that a save/load round trip is
bit-exact; signal CSVs encode missing entries as empty cells (NaN literals
are accepted on input).
"""

import dataclasses
import json
import os

import numpy as np

from .coder import AdmmConfig
from .errors import ConfigError, DataFormatError
from .graphs import Graph, ObservedSignalSet
from .kernel_opt import DescentConfig, KernelPrior
from .learner import GraphDataset, SgklConfig
from .synthetic import PsiDistribution, SyntheticSpec


def _fmt(x):
    return repr(float(x))


# -- graph CSV ---------------------------------------------------------------

def save_graph_csv(graph, path):
    """Edge list ``i,j,weight`` (0-based, upper triangle) under a ``nodes=N`` header."""
    W = graph.weights
    n = graph.node_count
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"nodes={n}\n")
        rows, cols = np.nonzero(np.triu(W, 1))
        for i, j in zip(rows, cols):
            fh.write(f"{i},{j},{_fmt(W[i, j])}\n")


def load_graph_csv(path):
    """Parse an edge-list CSV; weights are symmetrized with the maximum."""
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("nodes="):
            raise DataFormatError(f"{path}:1: expected 'nodes=N' header, got {header!r}")
        try:
            n = int(header.split("=", 1)[1])
        except ValueError as exc:
            raise DataFormatError(f"{path}:1: bad node count in {header!r}") from exc
        if n < 1:
            raise DataFormatError(f"{path}:1: node count must be positive")
        W = np.zeros((n, n))
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 'i,j,weight', got {line!r}")
            try:
                i, j, w = int(parts[0]), int(parts[1]), float(parts[2])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: unparsable edge {line!r}") from exc
            if not (0 <= i < n and 0 <= j < n):
                raise DataFormatError(f"{path}:{lineno}: node index out of range")
            W[i, j] = max(W[i, j], w)
    W = np.maximum(W, W.T)
    try:
        return Graph(W)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc


# -- signal CSV --------------------------------------------------------------

def save_signals_csv(values, mask, path):
    """Rows are nodes, columns are signals; unobserved entries become empty cells."""
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    with open(path, "w", encoding="utf-8") as fh:
        for row, mrow in zip(values, mask):
            cells = [_fmt(v) if m else "" for v, m in zip(row, mrow)]
            fh.write(",".join(cells) + "\n")


def load_signals_csv(path):
    """Parse a node-by-signal CSV, deriving masks from empty/NaN cells."""
    rows = []
    masks = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {width} columns, got {len(cells)}"
                )
            vals = []
            obs = []
            for col, cell in enumerate(cells):
                cell = cell.strip()
                if cell == "" or cell.lower() == "nan":
                    vals.append(np.nan)
                    obs.append(False)
                    continue
                try:
                    vals.append(float(cell))
                except ValueError as exc:
                    raise DataFormatError(
                        f"{path}:{lineno}: unparsable value {cell!r} in column {col}"
                    ) from exc
                obs.append(True)
            rows.append(vals)
            masks.append(obs)
    if not rows:
        raise DataFormatError(f"{path}: empty signal file")
    values = np.array(rows, dtype=float)
    mask = np.array(masks, dtype=bool)
    if not mask.any(axis=0).all():
        bad = int(np.flatnonzero(~mask.any(axis=0))[0])
        raise DataFormatError(f"{path}: signal column {bad} has no observed entries")
    return ObservedSignalSet(values, mask)


def load_dataset(graph_path, signals_path):
    """Load and cross-validate one graph plus its signal matrix."""
    graph = load_graph_csv(graph_path)
    signals = load_signals_csv(signals_path)
    if signals.node_count != graph.node_count:
        raise DataFormatError(
            f"shape mismatch: graph has {graph.node_count} nodes, "
            f"signals have {signals.node_count} rows"
        )
    return GraphDataset(graph, signals)


# -- kernel parameters -------------------------------------------------------

def psi_to_dict(psi):
    psi = np.asarray(psi, dtype=float)
    j = psi.size // 2
    return {"mu": psi[:j].tolist(), "s": psi[j:].tolist()}


def psi_from_dict(payload):
    try:
        mu = np.asarray(payload["mu"], dtype=float)
        s = np.asarray(payload["s"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(f"bad kernel parameter payload: {exc}") from exc
    if mu.size != s.size:
        raise DataFormatError("kernel payload needs equal-length 'mu' and 's'")
    return np.concatenate([mu, s])


def save_psi_json(psi, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(psi_to_dict(psi), fh, indent=2)
        fh.write("\n")


def load_psi_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return psi_from_dict(json.load(fh))


# -- configuration -----------------------------------------------------------

def _build(cls, payload, context):
    if not isinstance(payload, dict):
        raise ConfigError(f"{context}: expected an object, got {type(payload).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(payload) - names
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")
    try:
        return cls(**payload)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def model_config_from_dict(payload):
    payload = dict(payload or {})
    kwargs = {}
    if "prior" in payload:
        kwargs["prior"] = _build(KernelPrior, payload.pop("prior"), "model.prior")
    if "admm" in payload:
        kwargs["admm"] = _build(AdmmConfig, payload.pop("admm"), "model.admm")
    if "descent" in payload:
        kwargs["descent"] = _build(DescentConfig, payload.pop("descent"), "model.descent")
    for key in ("mu_init_range", "scale_init_range"):
        if payload.get(key) is not None:
            payload[key] = tuple(payload[key])
    kwargs.update(payload)
    return _build(SgklConfig, kwargs, "model")


def synthetic_spec_from_dict(payload):
    payload = dict(payload or {})
    if "psi_distribution" in payload:
        payload["psi_distribution"] = _build(
            PsiDistribution, payload.pop("psi_distribution"), "synthetic.psi_distribution"
        )
    for key in ("node_counts", "signal_counts"):
        if key in payload:
            payload[key] = tuple(payload[key])
    return _build(SyntheticSpec, payload, "synthetic")


def config_to_dict(obj):
    """Dataclass tree to plain JSON-ready dict."""
    if dataclasses.is_dataclass(obj):
        return {f.name: config_to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [config_to_dict(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer, np.floating)):
        return obj.item()
    return obj


def load_config_file(path):
    """Parse a JSON config file with optional 'model' and 'synthetic' sections."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(payload) - {"model", "synthetic"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    model = model_config_from_dict(payload.get("model", {}))
    synthetic = synthetic_spec_from_dict(payload.get("synthetic", {}))
    return model, synthetic


# -- model checkpoint --------------------------------------------------------

def save_model(model, out_dir):
    """Checkpoint a fitted model: kernels, config, trace, data, coefficients."""
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "psi": psi_to_dict(model.psi),
        "config": config_to_dict(model.config),
        "seed": model.config.seed,
        "gammas": [float(g) for g in model.gammas],
        "objective_trace": [[stage, float(v)] for stage, v in model.objective_trace],
        "converged": bool(model.converged),
        "outer_iterations": int(model.outer_iterations),
        "graph_count": model.graph_count,
    }
    with open(os.path.join(out_dir, "model.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    save_psi_json(model.psi, os.path.join(out_dir, "psi.json"))
    for m, ds in enumerate(model.datasets):
        save_graph_csv(ds.graph, os.path.join(out_dir, f"graph_g{m}.csv"))
        save_signals_csv(
            ds.signals.values, ds.signals.mask, os.path.join(out_dir, f"signals_g{m}.csv")
        )
        np.savetxt(
            os.path.join(out_dir, f"coeffs_g{m}.csv"),
            model.coefficients[m],
            delimiter=",",
            fmt="%.17g",
        )
    return os.path.join(out_dir, "model.json")


def load_model(model_dir):
    """Rebuild a fitted model from a checkpoint directory.

    Dictionaries and Laplacians are recomputed from the stored graphs, which
    is deterministic on one platform.
    """
    from . import learner
    from .graphs import build_signal_graph, graph_spectrum
    from .kernels import build_dictionary

    meta_path = os.path.join(model_dir, "model.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise DataFormatError(f"cannot read checkpoint {meta_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{meta_path}: invalid JSON: {exc}") from exc

    psi = psi_from_dict(meta["psi"])
    cfg = model_config_from_dict(meta["config"])
    datasets = []
    dictionaries = []
    laplacians = []
    signal_laps = []
    coefficients = []
    gammas = [float(g) for g in meta["gammas"]]
    for m in range(int(meta["graph_count"])):
        ds = load_dataset(
            os.path.join(model_dir, f"graph_g{m}.csv"),
            os.path.join(model_dir, f"signals_g{m}.csv"),
        )
        datasets.append(ds)
        lap, dec = graph_spectrum(ds.graph)
        laplacians.append(lap)
        dictionaries.append(build_dictionary(dec, psi))
        sgl = build_signal_graph(ds.signals, gammas[m], cfg.normalize_overlap)
        signal_laps.append(sgl.select(cfg.signal_laplacian))
        X = np.loadtxt(os.path.join(model_dir, f"coeffs_g{m}.csv"), delimiter=",", ndmin=2)
        coefficients.append(X)
    return learner.SgklModel(
        psi=psi,
        dictionaries=dictionaries,
        coefficients=coefficients,
        signal_laplacians=signal_laps,
        gammas=gammas,
        laplacians=laplacians,
        datasets=datasets,
        config=cfg,
        objective_trace=[(s, v) for s, v in meta["objective_trace"]],
        converged=bool(meta["converged"]),
        outer_iterations=int(meta["outer_iterations"]),
    )


def save_descent_trace_csv(rows, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,f,grad_norm,step\n")
        for row in rows:
            fh.write(f"{row['iter']},{_fmt(row['f'])},{_fmt(row['grad_norm'])},{_fmt(row['step'])}\n")
