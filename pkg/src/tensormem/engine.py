"""Run configuration, the assembled memory system, and disk snapshots.

A snapshot directory holds the flat config, the registry (TSV plus
binary embeddings), the stores in their TSV formats, and one binary per
trained component.  Everything written is byte-reproducible for a fixed
seed, which the reproducibility tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .io import (read_array, read_flat_config, read_named_arrays, substream,
                 write_array, write_flat_config, write_named_arrays)
from .models import (CoreTensor, MAX_TUCKER4_DIM, MemoryModel, MultiwayNet,
                     Parafac, Rescal, Tucker)
from .predict import ArxPredictor, RnnPredictor
from .registry import Kind, Registry
from .sensory import LinearEncoder
from .stores import (BERNOULLI, GAUSSIAN, QuadStore, SensoryStore, TripleStore,
                     load_quads, load_sensory, load_triples, save_quads,
                     save_sensory, save_triples)
from .training import TrainConfig

SEMANTIC_FAMILIES = ("tucker3", "parafac", "rescal", "multiway")
EPISODIC_FAMILIES = ("tucker4", "parafac4")
SENSORY_FAMILIES = ("tucker3", "parafac")
PREDICTORS = ("arx", "rnn", "none")


@dataclass
class RunConfig:
    dim: int = 8
    nonneg: bool = True
    semantic_model: str = "tucker3"
    episodic_model: str = "tucker4"
    sensory_model: str = "tucker3"
    hidden: int = 64
    n_channels: int = 0
    buffer_len: int = 0
    encoder_mode: bool = False
    predictor: str = "arx"
    window: int = 5
    arx_tanh: bool = False
    novelty_threshold: float = 0.1
    beta: float = 1.0
    individual: str = ""
    likelihoods: dict = field(default_factory=dict)
    seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.dim < 1:
            raise UsageError(f"dim must be >= 1, got {self.dim}")
        if self.episodic_model == "tucker4" and self.dim > MAX_TUCKER4_DIM:
            raise UsageError(f"tucker4 needs dim <= {MAX_TUCKER4_DIM} "
                             f"(dense core), got {self.dim}")
        for value, allowed in ((self.semantic_model, SEMANTIC_FAMILIES),
                               (self.episodic_model, EPISODIC_FAMILIES),
                               (self.sensory_model, SENSORY_FAMILIES),
                               (self.predictor, PREDICTORS)):
            if value not in allowed:
                raise UsageError(f"{value!r} is not one of {allowed}")
        if self.window < 1:
            raise UsageError("window must be >= 1")
        if self.beta < 0:
            raise UsageError("beta must be >= 0")
        if self.buffer_len < 0 or self.n_channels < 0:
            raise UsageError("buffer_len and n_channels must be >= 0")
        for lk in self.likelihoods.values():
            if lk not in (BERNOULLI, GAUSSIAN):
                raise UsageError(f"unknown likelihood {lk!r}")


_BOOL_KEYS = {"nonneg", "encoder_mode", "arx_tanh"}
_INT_KEYS = {"dim", "hidden", "n_channels", "buffer_len", "window", "seed",
             "epochs", "batch_size", "negative_ratio"}
_FLOAT_KEYS = {"novelty_threshold", "beta", "learning_rate", "lambda_a",
               "lambda_w", "sigma2", "weight_semantic", "weight_episodic",
               "weight_sensory", "weight_predict"}
_TRAIN_KEYS = {"learning_rate", "epochs", "batch_size", "lambda_a", "lambda_w",
               "negative_ratio", "sigma2"}


def _parse_bool(value):
    lowered = str(value).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise UsageError(f"expected a boolean, got {value!r}")


def config_from_mapping(values):
    """Build a RunConfig from flat key/value strings (file or CLI)."""
    run_kwargs, train_kwargs, weights, likelihoods = {}, {}, {}, {}
    run_fields = {f.name for f in fields(RunConfig)} - {"likelihoods", "train"}
    for key, raw in values.items():
        if key.startswith("likelihood."):
            likelihoods[key[len("likelihood."):]] = str(raw).strip()
            continue
        if key.startswith("weight_"):
            weights[key[len("weight_"):]] = float(raw)
            continue
        if key in _BOOL_KEYS:
            value = _parse_bool(raw)
        elif key in _INT_KEYS:
            value = int(raw)
        elif key in _FLOAT_KEYS:
            value = float(raw)
        else:
            value = str(raw).strip()
        if key in _TRAIN_KEYS:
            train_kwargs[key] = value
        elif key == "seed":
            run_kwargs["seed"] = value
            train_kwargs["seed"] = value
        elif key in run_fields:
            run_kwargs[key] = value
        else:
            raise UsageError(f"unknown config key {key!r}")
    if weights:
        train_kwargs["cost_weights"] = weights
    run_kwargs["train"] = TrainConfig(**train_kwargs)
    run_kwargs["likelihoods"] = likelihoods
    return RunConfig(**run_kwargs)


def config_to_mapping(config):
    out = {}
    for f in fields(RunConfig):
        if f.name in ("likelihoods", "train"):
            continue
        out[f.name] = config.__getattribute__(f.name)
    t = config.train
    out.update(learning_rate=t.learning_rate, epochs=t.epochs,
               batch_size=t.batch_size, lambda_a=t.lambda_a, lambda_w=t.lambda_w,
               negative_ratio=t.negative_ratio, sigma2=t.sigma2)
    for term, w in sorted(t.cost_weights.items()):
        out[f"weight_{term}"] = w
    for label, lk in sorted(config.likelihoods.items()):
        out[f"likelihood.{label}"] = lk
    return {k: out[k] for k in sorted(out)}


@dataclass
class MemorySystem:
    """Registry, stores and models wired together for one run."""

    config: RunConfig
    registry: Registry
    triples: TripleStore
    quads: QuadStore
    sensory: SensoryStore
    semantic: MemoryModel | None = None
    episodic: MemoryModel | None = None
    sensory_model: MemoryModel | None = None
    encoder: LinearEncoder | None = None
    predictor: object = None

    @classmethod
    def create(cls, config):
        registry = Registry(config.dim, nonneg=config.nonneg,
                            rng=substream(config.seed, "init"))
        return cls(config, registry, TripleStore(registry), QuadStore(registry),
                   SensoryStore(registry, config.buffer_len))

    @property
    def encoder_mode(self):
        return self.config.encoder_mode

    @property
    def individual_id(self):
        if not self.config.individual:
            return None
        id = self.registry.lookup(self.config.individual, Kind.ENTITY)
        if id is None:
            raise DataError(f"individual {self.config.individual!r} is not a "
                            "registered entity")
        return id

    def likelihood_of(self, p):
        label = self.registry.label(int(p))
        return self.config.likelihoods.get(label, BERNOULLI)

    # -- model construction ------------------------------------------

    def _family(self, kind_name, rng):
        cfg = self.config
        if kind_name == "semantic":
            choice, arity = cfg.semantic_model, 3
        elif kind_name == "episodic":
            choice, arity = cfg.episodic_model, 4
        else:
            choice, arity = cfg.sensory_model, 3
        if choice in ("parafac", "parafac4"):
            return Parafac(cfg.dim, arity=arity)
        if choice in ("tucker3", "tucker4"):
            raw = rng.normal(0.0, 0.1 / cfg.dim, size=(cfg.dim,) * arity)
            return Tucker(CoreTensor(raw, nonneg=cfg.nonneg))
        if choice == "rescal":
            n_pred = self.registry.ids_of(Kind.PREDICATE).size
            if n_pred == 0:
                raise DataError("rescal needs at least one registered predicate")
            raw = rng.normal(0.0, 0.1 / cfg.dim, size=(cfg.dim, cfg.dim, n_pred))
            return Rescal(raw, nonneg=cfg.nonneg)
        return MultiwayNet(cfg.dim, arity, hidden=cfg.hidden, rng=rng)

    def build_models(self):
        """Instantiate model families for every non-empty store plus the
        encoder and predictor; idempotent for already-built parts."""
        cfg = self.config
        rng = substream(cfg.seed, "init")
        if self.semantic is None and len(self.triples):
            self.semantic = MemoryModel.for_memory("semantic",
                                                   self._family("semantic", rng),
                                                   self.registry)
        if self.episodic is None and len(self.quads):
            self.episodic = MemoryModel.for_memory("episodic",
                                                   self._family("episodic", rng),
                                                   self.registry)
        if self.sensory_model is None and len(self.sensory):
            self.sensory_model = MemoryModel.for_memory("sensory",
                                                        self._family("sensory", rng),
                                                        self.registry)
        n_channels = cfg.n_channels or self.registry.ids_of(Kind.CHANNEL).size
        if self.encoder is None and len(self.sensory) and n_channels:
            self.encoder = LinearEncoder(cfg.dim, n_channels, cfg.buffer_len,
                                         nonneg=cfg.nonneg, rng=rng)
        if self.predictor is None and cfg.predictor != "none":
            if cfg.predictor == "arx":
                self.predictor = ArxPredictor(cfg.dim, window=cfg.window,
                                              tanh_output=cfg.arx_tanh, rng=rng)
            else:
                self.predictor = RnnPredictor(cfg.dim,
                                              n_channels * (cfg.buffer_len + 1),
                                              window=cfg.window, rng=rng)
        return self

    # -- persistence ---------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_flat_config(directory / "config.snapshot",
                          config_to_mapping(self.config))
        self.registry.save(directory)
        save_triples(directory / "triples.tsv", self.registry, self.triples)
        save_quads(directory / "quads.tsv", self.registry, self.quads)
        save_sensory(directory / "sensory.tsv", self.registry, self.sensory)
        for name, model in (("semantic", self.semantic), ("episodic", self.episodic),
                            ("sensory", self.sensory_model)):
            if model is None:
                continue
            fam = model.family
            if isinstance(fam, Tucker):
                write_array(directory / f"{name}.core.bin", fam.core.raw,
                            header=(fam.arity, fam.dim))
            elif isinstance(fam, Rescal):
                write_array(directory / f"{name}.core.bin", fam.raw_core,
                            header=(fam.dim, fam.dim, fam.n_predicates))
            elif isinstance(fam, MultiwayNet):
                write_named_arrays(directory / f"{name}.net.bin", fam.params())
        if self.encoder is not None:
            write_named_arrays(directory / "encoder.bin", self.encoder.params())
        if self.predictor is not None:
            write_named_arrays(directory / "predictor.bin", self.predictor.params())

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        if not (directory / "config.snapshot").exists():
            raise DataError(f"no snapshot at {directory}")
        config = config_from_mapping(read_flat_config(directory / "config.snapshot"))
        registry = Registry.load(directory, nonneg=config.nonneg,
                                 rng=substream(config.seed, "init"))
        system = cls(config, registry, TripleStore(registry), QuadStore(registry),
                     SensoryStore(registry, config.buffer_len))
        lk = lambda label: config.likelihoods.get(label, BERNOULLI)
        if (directory / "triples.tsv").exists():
            load_triples(directory / "triples.tsv", registry, system.triples, lk)
        if (directory / "quads.tsv").exists():
            load_quads(directory / "quads.tsv", registry, system.quads, lk)
        if (directory / "sensory.tsv").exists():
            load_sensory(directory / "sensory.tsv", registry, system.sensory)
        system._load_models(directory)
        return system

    def _load_models(self, directory):
        cfg = self.config
        for name, choice, attr in (("semantic", cfg.semantic_model, "semantic"),
                                   ("episodic", cfg.episodic_model, "episodic"),
                                   ("sensory", cfg.sensory_model, "sensory_model")):
            core_path = directory / f"{name}.core.bin"
            net_path = directory / f"{name}.net.bin"
            family = None
            if choice in ("tucker3", "tucker4") and core_path.exists():
                arity = 3 if choice == "tucker3" else 4
                _, raw = read_array(core_path, 2,
                                    lambda h: (int(h[1]),) * int(h[0]))
                if raw.ndim != arity:
                    raise DataError(f"{core_path}: expected arity {arity}")
                family = Tucker(CoreTensor(raw, nonneg=cfg.nonneg))
            elif choice == "rescal" and core_path.exists():
                _, raw = read_array(core_path, 3,
                                    lambda h: (int(h[0]), int(h[1]), int(h[2])))
                family = Rescal(raw, nonneg=cfg.nonneg)
            elif choice in ("parafac", "parafac4"):
                store = {"semantic": self.triples, "episodic": self.quads,
                         "sensory": self.sensory}[name]
                if len(store):
                    family = Parafac(cfg.dim, arity=3 if choice != "parafac4" else 4)
            elif choice == "multiway" and net_path.exists():
                family = MultiwayNet(cfg.dim, 3, hidden=cfg.hidden)
                _assign_params(family, read_named_arrays(net_path))
            if family is not None:
                setattr(self, attr, MemoryModel.for_memory(name, family,
                                                           self.registry))
        if (directory / "encoder.bin").exists():
            n_channels = cfg.n_channels or self.registry.ids_of(Kind.CHANNEL).size
            self.encoder = LinearEncoder(cfg.dim, n_channels, cfg.buffer_len,
                                         nonneg=cfg.nonneg)
            _assign_params(self.encoder, read_named_arrays(directory / "encoder.bin"))
        if (directory / "predictor.bin").exists() and cfg.predictor != "none":
            if cfg.predictor == "arx":
                self.predictor = ArxPredictor(cfg.dim, window=cfg.window,
                                              tanh_output=cfg.arx_tanh)
            else:
                n_channels = cfg.n_channels or self.registry.ids_of(Kind.CHANNEL).size
                self.predictor = RnnPredictor(cfg.dim,
                                              n_channels * (cfg.buffer_len + 1),
                                              window=cfg.window)
            _assign_params(self.predictor,
                           read_named_arrays(directory / "predictor.bin"))


def _assign_params(component, arrays):
    params = component.params()
    missing = set(params) - set(arrays)
    if missing:
        raise DataError(f"snapshot is missing parameters {sorted(missing)}")
    for name, arr in params.items():
        if arrays[name].shape != arr.shape:
            raise DataError(f"parameter {name!r} has shape {arrays[name].shape}, "
                            f"expected {arr.shape}")
        arr[:] = arrays[name]
