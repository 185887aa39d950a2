"""Registry of generalized entities and the shared latent representation.

Entities, predicates, time steps, sensory channels and buffer positions
all live in one id space.  Every registered id owns one row of the
shared embedding matrix; all memory models read those rows and training
writes them, which is what lets information flow between memories.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, KindError, UnknownIdError
from .io import write_array, read_array


class Kind(enum.Enum):
    ENTITY = "Entity"
    PREDICATE = "Predicate"
    TIME = "Time"
    CHANNEL = "Channel"
    BUFFER_POS = "BufferPos"


@dataclass(frozen=True)
class GeneralizedEntity:
    id: int
    label: str
    kind: Kind


class EmbeddingMatrix:
    """One latent vector per registered id.

    Rows store free real parameters.  With ``nonneg=True`` the effective
    embedding is the elementwise exp of the stored row, so effective
    components are strictly positive while gradients stay smooth.
    """

    def __init__(self, dim, nonneg=False, init_std=None, rng=None):
        if dim < 1:
            raise DataError(f"embedding dim must be >= 1, got {dim}")
        self.dim = int(dim)
        self.nonneg = bool(nonneg)
        self.init_std = 0.1 / np.sqrt(dim) if init_std is None else float(init_std)
        self._rng = rng if rng is not None else np.random.default_rng(0)
        self._buf = np.zeros((8, self.dim))
        self._n = 0

    def __len__(self):
        return self._n

    @property
    def raw(self):
        """Writable view of the stored parameters, shape (n, dim)."""
        return self._buf[: self._n]

    def append_row(self, row=None):
        if self._n == self._buf.shape[0]:
            grown = np.zeros((2 * self._buf.shape[0], self.dim))
            grown[: self._n] = self._buf[: self._n]
            self._buf = grown
        if row is None:
            row = self._rng.normal(0.0, self.init_std, size=self.dim)
        self._buf[self._n] = row
        self._n += 1
        return self._n - 1

    def effective(self, id):
        row = self.raw[id]
        return np.exp(row) if self.nonneg else row.copy()

    def effective_matrix(self, ids=None):
        rows = self.raw if ids is None else self.raw[ids]
        return np.exp(rows) if self.nonneg else rows

    def set_effective(self, id, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.dim,):
            raise DataError(f"embedding row must have shape ({self.dim},)")
        if self.nonneg:
            if np.any(vec <= 0):
                raise DataError("nonneg mode requires strictly positive effective values")
            self.raw[id] = np.log(vec)
        else:
            self.raw[id] = vec


class Registry:
    """Owns (label, kind) -> id assignment and the embedding matrix.

    Ids are dense and assigned in registration order; re-registering a
    known (label, kind) pair returns the existing id.  Time entities are
    meant to be registered lazily as new buffers arrive, so id order of
    Kind.TIME is temporal order.
    """

    def __init__(self, dim, nonneg=False, init_std=None, rng=None):
        self.embeddings = EmbeddingMatrix(dim, nonneg=nonneg, init_std=init_std, rng=rng)
        self._by_key = {}
        self._entities = []
        self._ids_cache = {}

    def __len__(self):
        return len(self._entities)

    @property
    def dim(self):
        return self.embeddings.dim

    @property
    def nonneg(self):
        return self.embeddings.nonneg

    def register(self, label, kind):
        if not isinstance(kind, Kind):
            raise KindError(f"not an entity kind: {kind!r}")
        if not label:
            raise DataError("label must be non-empty")
        key = (label, kind)
        if key in self._by_key:
            return self._by_key[key]
        id = self.embeddings.append_row()
        assert id == len(self._entities)
        self._by_key[key] = id
        self._entities.append(GeneralizedEntity(id, label, kind))
        self._ids_cache.pop(kind, None)
        return id

    def lookup(self, label, kind):
        return self._by_key.get((label, kind))

    def entity(self, id):
        self._check(id)
        return self._entities[id]

    def label(self, id):
        return self.entity(id).label

    def kind(self, id):
        return self.entity(id).kind

    def ids_of(self, kind):
        if kind not in self._ids_cache:
            self._ids_cache[kind] = np.array(
                [e.id for e in self._entities if e.kind is kind], dtype=np.intp)
        return self._ids_cache[kind]

    def require_kind(self, id, kind, slot=""):
        self._check(id)
        actual = self._entities[id].kind
        if actual is not kind:
            where = f" for {slot} slot" if slot else ""
            raise KindError(f"id {id} ({self._entities[id].label!r}) has kind "
                            f"{actual.value}, expected {kind.value}{where}")
        return id

    def embedding(self, id):
        """Effective embedding row, length dim."""
        self._check(id)
        return self.embeddings.effective(id)

    def embedding_rows(self, ids):
        ids = np.asarray(ids, dtype=np.intp)
        if ids.size and (ids.min() < 0 or ids.max() >= len(self)):
            raise UnknownIdError(f"id out of range in {ids}")
        return self.embeddings.effective_matrix(ids)

    def set_embedding(self, id, vec):
        self._check(id)
        self.embeddings.set_effective(id, vec)

    def _check(self, id):
        if not 0 <= id < len(self._entities):
            raise UnknownIdError(f"unknown id {id}")

    # -- snapshot ------------------------------------------------------

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "registry.tsv", "w", encoding="utf-8") as fh:
            for e in self._entities:
                fh.write(f"{e.id}\t{e.kind.value}\t{e.label}\n")
        write_array(directory / "embeddings.bin", self.embeddings.raw,
                    header=(len(self), self.dim))

    @classmethod
    def load(cls, directory, nonneg=False, rng=None):
        directory = Path(directory)
        header, rows = read_array(directory / "embeddings.bin", 2,
                                  lambda h: (int(h[0]), int(h[1])))
        reg = cls(dim=header[1], nonneg=nonneg, rng=rng)
        kinds = {k.value: k for k in Kind}
        with open(directory / "registry.tsv", "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3:
                    raise DataError(f"registry.tsv:{lineno + 1}: expected 3 columns")
                id, kind, label = int(parts[0]), parts[1], parts[2]
                if kind not in kinds:
                    raise DataError(f"registry.tsv:{lineno + 1}: unknown kind {kind!r}")
                got = reg.register(label, kinds[kind])
                if got != id:
                    raise DataError(f"registry.tsv:{lineno + 1}: ids not dense")
        if len(reg) != header[0]:
            raise DataError("registry.tsv row count does not match embeddings.bin")
        reg.embeddings.raw[:] = rows
        return reg
