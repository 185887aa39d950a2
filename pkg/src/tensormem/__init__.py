"""Tensor memories over shared latent representations.

Semantic triples, episodic quadruples and sensory buffers are modeled by
coupled multilinear (or neural) score functions over one shared
embedding per generalized entity.  Training couples every memory through
those embeddings; queries sample likely tuples from a Boltzmann
distribution with exact marginals for nonnegative multilinear models.
"""

from .engine import MemorySystem, RunConfig
from .errors import (DataError, NumericalError, TensorMemError, UsageError)
from .models import (CoreTensor, MemoryModel, MultiwayNet, Parafac, Rescal,
                     Tucker)
from .registry import Kind, Registry
from .stores import QuadStore, SensoryStore, TripleStore
from .training import TrainConfig

__all__ = [
    "CoreTensor", "DataError", "Kind", "MemoryModel", "MemorySystem",
    "MultiwayNet", "NumericalError", "Parafac", "QuadStore", "Registry",
    "Rescal", "RunConfig", "SensoryStore", "TensorMemError", "TrainConfig",
    "TripleStore", "Tucker", "UsageError",
]
