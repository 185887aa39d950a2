"""Indicator mapping functions over the shared latent representations.

A score model maps the latent vectors of a tuple's slots to the natural
parameter of the observation likelihood.  Multilinear families (PARAFAC,
Tucker, RESCAL) additionally factor the score into an inner product
between a predicted slot representation and a candidate embedding, which
is what makes exact marginalization and conditioning cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError, UsageError
from .registry import Kind

# Dense cores only; a 4-way core at this bound holds 16^4 = 65536 entries.
MAX_TUCKER4_DIM = 16


def _as_vec(v, dim, what="factor"):
    v = np.asarray(v, dtype=float)
    if v.shape != (dim,):
        raise ShapeError(f"{what} must have shape ({dim},), got {v.shape}")
    return v


@dataclass
class CoreTensor:
    """Dense interaction weights of a Tucker model.

    ``raw`` holds free parameters; with ``nonneg`` the effective entries
    are exp(raw), matching the embedding reparameterization.
    """

    raw: np.ndarray
    nonneg: bool = False

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)
        if self.raw.ndim not in (3, 4):
            raise ShapeError(f"core arity must be 3 or 4, got {self.raw.ndim}")
        if len(set(self.raw.shape)) != 1:
            raise ShapeError(f"core must be cubical, got shape {self.raw.shape}")
        if not np.all(np.isfinite(self.raw)):
            raise DataError("core entries must be finite")

    @property
    def arity(self):
        return self.raw.ndim

    @property
    def dim(self):
        return self.raw.shape[0]

    def effective(self):
        return np.exp(self.raw) if self.nonneg else self.raw


class Parafac:
    """Rank-dim canonical decomposition: sum over r of the slot products."""

    def __init__(self, dim, arity=3):
        if arity < 2:
            raise ShapeError("parafac needs at least 2 slots")
        self.dim = int(dim)
        self.arity = int(arity)

    def params(self):
        return {}

    def score(self, vectors):
        vectors = self._check(vectors)
        prod = np.ones(self.dim)
        for v in vectors:
            prod = prod * v
        return float(prod.sum())

    def slot_vector(self, slot, inputs):
        """Representation h for one slot: product of all other inputs,
        so that dot(candidate, h) reproduces the score."""
        prod = np.ones(self.dim)
        for j, v in enumerate(inputs):
            if j != slot:
                prod = prod * _as_vec(v, self.dim)
        return prod

    def theta_batch(self, slots):
        prod = np.ones_like(slots[0])
        for arr in slots:
            prod = prod * arr
        return prod.sum(axis=1)

    def backward_batch(self, slots, dtheta):
        grads = []
        for j in range(self.arity):
            prod = np.ones_like(slots[0])
            for l, arr in enumerate(slots):
                if l != j:
                    prod = prod * arr
            grads.append(dtheta[:, None] * prod)
        return grads, {}

    def _check(self, vectors):
        if len(vectors) != self.arity:
            raise ShapeError(f"expected {self.arity} factors, got {len(vectors)}")
        return [_as_vec(v, self.dim) for v in vectors]


_EINSUM_LETTERS = "abcd"


class Tucker:
    """Full multilinear contraction of a dense core with one vector per slot."""

    def __init__(self, core):
        self.core = core

    @property
    def dim(self):
        return self.core.dim

    @property
    def arity(self):
        return self.core.arity

    def params(self):
        return {"core": self.core.raw}

    def score(self, vectors):
        if len(vectors) != self.arity:
            raise ShapeError(f"expected {self.arity} factors, got {len(vectors)}")
        vectors = [_as_vec(v, self.dim) for v in vectors]
        out = self.core.effective()
        for ax in reversed(range(self.arity)):
            out = np.tensordot(out, vectors[ax], axes=([ax], [0]))
        return float(out)

    def slot_vector(self, slot, inputs):
        # Move the kept slot to the front, then fold the trailing axis
        # into each remaining input in turn (descending axis order).
        out = np.moveaxis(self.core.effective(), slot, 0)
        for ax in reversed([j for j in range(self.arity) if j != slot]):
            out = out.reshape(-1, self.dim) @ _as_vec(inputs[ax], self.dim)
        return out.reshape(self.dim)

    def _spec(self):
        letters = _EINSUM_LETTERS[: self.arity]
        return letters, [f"i{c}" for c in letters]

    def theta_batch(self, slots):
        letters, per_slot = self._spec()
        return np.einsum(f"{letters},{','.join(per_slot)}->i",
                         self.core.effective(), *slots, optimize=True)

    def backward_batch(self, slots, dtheta):
        letters, per_slot = self._spec()
        eff = self.core.effective()
        grads = []
        for j in range(self.arity):
            rest = [per_slot[l] for l in range(self.arity) if l != j]
            args = [slots[l] for l in range(self.arity) if l != j]
            g = np.einsum(f"i,{letters},{','.join(rest)}->i{letters[j]}",
                          dtheta, eff, *args, optimize=True)
            grads.append(g)
        dcore = np.einsum(f"i,{','.join(per_slot)}->{letters}",
                          dtheta, *slots, optimize=True)
        if self.core.nonneg:
            dcore = dcore * eff
        return grads, {"core": dcore}


class Rescal:
    """Bilinear model with one dense dim x dim slice per predicate.

    The predicate slot is core-indexed: it selects a slice instead of
    contributing an embedding vector.
    """

    arity = 3
    predicate_slot = 1

    def __init__(self, raw_core, nonneg=False):
        raw_core = np.asarray(raw_core, dtype=float)
        if raw_core.ndim != 3 or raw_core.shape[0] != raw_core.shape[1]:
            raise ShapeError(f"rescal core must be (dim, dim, P), got {raw_core.shape}")
        self.raw_core = raw_core
        self.nonneg = bool(nonneg)

    @property
    def dim(self):
        return self.raw_core.shape[0]

    @property
    def n_predicates(self):
        return self.raw_core.shape[2]

    def params(self):
        return {"core": self.raw_core}

    def effective_core(self):
        return np.exp(self.raw_core) if self.nonneg else self.raw_core

    def _slice(self, p):
        if not 0 <= p < self.n_predicates:
            raise DataError(f"unknown predicate index {p}")
        return self.effective_core()[:, :, p]

    def score(self, subject, p, obj):
        subject = _as_vec(subject, self.dim, "subject")
        obj = _as_vec(obj, self.dim, "object")
        return float(subject @ self._slice(p) @ obj)

    def subject_vector(self, g_slice, obj):
        return g_slice @ _as_vec(obj, self.dim, "object")

    def object_vector(self, g_slice, subject):
        return _as_vec(subject, self.dim, "subject") @ g_slice

    def predicate_masses(self, subject, obj):
        return np.einsum("a,abp,b->p", subject, self.effective_core(), obj,
                         optimize=True)

    def theta_batch(self, slots):
        vs, pidx, vo = slots
        slices = np.moveaxis(self.effective_core()[:, :, pidx], 2, 0)
        return np.einsum("ia,iab,ib->i", vs, slices, vo, optimize=True)

    def backward_batch(self, slots, dtheta):
        vs, pidx, vo = slots
        eff = self.effective_core()
        slices = np.moveaxis(eff[:, :, pidx], 2, 0)
        dvs = np.einsum("i,iab,ib->ia", dtheta, slices, vo, optimize=True)
        dvo = np.einsum("i,iab,ia->ib", dtheta, slices, vs, optimize=True)
        contrib = np.einsum("i,ia,ib->iab", dtheta, vs, vo, optimize=True)
        by_p = np.zeros((self.n_predicates, self.dim, self.dim))
        np.add.at(by_p, pidx, contrib)
        dcore = np.moveaxis(by_p, 0, 2)
        if self.nonneg:
            dcore = dcore * eff
        return [dvs, None, dvo], {"core": dcore}


class MultiwayNet:
    """One-hidden-layer feedforward net over concatenated slot inputs.

    Each slot has its own input weight block; the hidden layer is tanh.
    ``out_dim`` 1 gives a scoring head, ``out_dim`` == dim gives a
    representation head.
    """

    def __init__(self, dim, n_slots, hidden=64, out_dim=1, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = int(dim)
        self.n_slots = int(n_slots)
        self.hidden = int(hidden)
        self.out_dim = int(out_dim)
        self.input_weights = [rng.normal(0.0, 1.0 / np.sqrt(dim), size=(hidden, dim))
                              for _ in range(n_slots)]
        self.hidden_bias = np.zeros(hidden)
        self.out_weight = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(out_dim, hidden))
        self.out_bias = np.zeros(out_dim)

    @property
    def arity(self):
        return self.n_slots

    def params(self):
        out = {f"w{j}": w for j, w in enumerate(self.input_weights)}
        out.update(bias=self.hidden_bias, out_w=self.out_weight, out_b=self.out_bias)
        return out

    def forward_batch(self, slots):
        if len(slots) != self.n_slots:
            raise ShapeError(f"expected {self.n_slots} inputs, got {len(slots)}")
        z = np.broadcast_to(self.hidden_bias, (slots[0].shape[0], self.hidden)).copy()
        for arr, w in zip(slots, self.input_weights):
            z += arr @ w.T
        h = np.tanh(z)
        return h @ self.out_weight.T + self.out_bias, h

    def backward_from_hidden(self, slots, h, dy):
        dout_w = dy.T @ h
        dout_b = dy.sum(axis=0)
        dz = (dy @ self.out_weight) * (1.0 - h * h)
        grads = {"bias": dz.sum(axis=0), "out_w": dout_w, "out_b": dout_b}
        slot_grads = []
        for j, (arr, w) in enumerate(zip(slots, self.input_weights)):
            grads[f"w{j}"] = dz.T @ arr
            slot_grads.append(dz @ w)
        return slot_grads, grads

    def theta_batch(self, slots):
        if self.out_dim != 1:
            raise UsageError("scoring requires a single-output head")
        y, _ = self.forward_batch(slots)
        return y[:, 0]

    def backward_batch(self, slots, dtheta):
        y, h = self.forward_batch(slots)
        del y
        return self.backward_from_hidden(slots, h, dtheta[:, None])

    def score(self, vectors):
        theta = self.theta_batch([_as_vec(v, self.dim)[None, :] for v in vectors])
        return float(theta[0])

    def represent(self, vectors):
        y, _ = self.forward_batch([_as_vec(v, self.dim)[None, :] for v in vectors])
        return y[0]


MULTILINEAR = (Parafac, Tucker, Rescal)


def score_parafac(a_s, a_p, a_o):
    """sum_r a_s[r] * a_p[r] * a_o[r]."""
    a_s = np.asarray(a_s, dtype=float)
    return Parafac(a_s.shape[0]).score([a_s, a_p, a_o])


def score_tucker(core, factors):
    return Tucker(core).score(factors)


def score_rescal(core, a_s, p, a_o):
    return core.score(a_s, p, a_o) if isinstance(core, Rescal) else \
        Rescal(core).score(a_s, p, a_o)


def score_multiway(net, inputs):
    return net.score(inputs)


def object_representation(model, a_s, a_p):
    """h such that dot(a_o, h) equals the full score for every a_o.

    For RESCAL ``a_p`` is the predicate index; a MultiwayNet must be a
    trained two-slot representation head.
    """
    if isinstance(model, Parafac):
        if model.arity != 3:
            raise UsageError("representation heads are defined for 3-slot models")
        return _as_vec(a_s, model.dim) * _as_vec(a_p, model.dim)
    if isinstance(model, Tucker):
        if model.arity != 3:
            raise UsageError("representation heads are defined for 3-slot models")
        return model.slot_vector(2, [a_s, a_p, None])
    if isinstance(model, Rescal):
        return model.object_vector(model._slice(int(a_p)), a_s)
    if isinstance(model, MultiwayNet):
        if model.out_dim != model.dim or model.n_slots != 2:
            raise UsageError("net head must map two slots to a dim-vector")
        return model.represent([a_s, a_p])
    raise UsageError(f"unsupported model family {type(model).__name__}")


def subject_representation(model, a_p, a_o):
    if isinstance(model, Parafac):
        return _as_vec(a_p, model.dim) * _as_vec(a_o, model.dim)
    if isinstance(model, Tucker):
        return model.slot_vector(0, [None, a_p, a_o])
    if isinstance(model, Rescal):
        return model.subject_vector(model._slice(int(a_p)), a_o)
    if isinstance(model, MultiwayNet):
        if model.out_dim != model.dim or model.n_slots != 2:
            raise UsageError("net head must map two slots to a dim-vector")
        return model.represent([a_p, a_o])
    raise UsageError(f"unsupported model family {type(model).__name__}")


def predicate_representation(model, a_s, a_o):
    if isinstance(model, Parafac):
        return _as_vec(a_s, model.dim) * _as_vec(a_o, model.dim)
    if isinstance(model, Tucker):
        return model.slot_vector(1, [a_s, None, a_o])
    if isinstance(model, Rescal):
        raise UsageError("rescal predicates are core slices, not embeddings")
    if isinstance(model, MultiwayNet):
        if model.out_dim != model.dim or model.n_slots != 2:
            raise UsageError("net head must map two slots to a dim-vector")
        return model.represent([a_s, a_o])
    raise UsageError(f"unsupported model family {type(model).__name__}")


SLOT_LAYOUTS = {
    "semantic": (("subject", Kind.ENTITY), ("predicate", Kind.PREDICATE),
                 ("object", Kind.ENTITY)),
    "episodic": (("subject", Kind.ENTITY), ("predicate", Kind.PREDICATE),
                 ("object", Kind.ENTITY), ("time", Kind.TIME)),
    "sensory": (("channel", Kind.CHANNEL), ("position", Kind.BUFFER_POS),
                ("time", Kind.TIME)),
}


@dataclass
class MemoryModel:
    """A score family bound to the registry and a slot layout.

    This is the object the query, training and sensory layers work
    with: it resolves ids to effective embeddings, knows each slot's
    candidate id set, and evaluates scores in batch.
    """

    family: object
    registry: object
    slot_names: tuple = ("subject", "predicate", "object")
    slot_kinds: tuple = (Kind.ENTITY, Kind.PREDICATE, Kind.ENTITY)
    name: str = "semantic"

    def __post_init__(self):
        if len(self.slot_names) != self.family.arity:
            raise ShapeError(f"{self.name}: family has {self.family.arity} slots, "
                             f"layout has {len(self.slot_names)}")
        if isinstance(self.family, Rescal) and \
                self.slot_kinds[Rescal.predicate_slot] is not Kind.PREDICATE:
            raise ShapeError("rescal requires the predicate in slot 1")

    @classmethod
    def for_memory(cls, name, family, registry):
        names, kinds = zip(*SLOT_LAYOUTS[name])
        return cls(family, registry, names, kinds, name)

    @property
    def arity(self):
        return self.family.arity

    @property
    def dim(self):
        return self.family.dim

    @property
    def exact_path(self):
        return isinstance(self.family, MULTILINEAR)

    def slot_index(self, slot):
        if isinstance(slot, str):
            try:
                return self.slot_names.index(slot)
            except ValueError:
                raise UsageError(f"{self.name} has no slot {slot!r}") from None
        if not 0 <= slot < self.arity:
            raise UsageError(f"slot {slot} out of range for {self.name}")
        return int(slot)

    def candidate_ids(self, slot):
        return self.registry.ids_of(self.slot_kinds[self.slot_index(slot)])

    def candidate_matrix(self, slot):
        ids = self.candidate_ids(slot)
        return ids, self.registry.embedding_rows(ids)

    def _is_core_indexed(self, slot):
        return isinstance(self.family, Rescal) and slot == Rescal.predicate_slot

    def resolve_slot(self, slot, value):
        """Map a bound id or raw vector to the family's slot input.

        ``None`` marginalizes the slot: all of its index neurons are
        active, so the slot input is the sum of candidate embeddings
        (for a core-indexed predicate, the summed slice).
        """
        slot = self.slot_index(slot)
        if self._is_core_indexed(slot):
            if value is None:
                return None
            if isinstance(value, (int, np.integer)):
                self.registry.require_kind(int(value), Kind.PREDICATE, "predicate")
                return self._predicate_index(int(value))
            raise UsageError("rescal predicate slot must be bound to an id")
        if value is None:
            _, rows = self.candidate_matrix(slot)
            if rows.shape[0] == 0:
                raise DataError(f"no registered {self.slot_kinds[slot].value} ids "
                                f"to marginalize over")
            return rows.sum(axis=0)
        if isinstance(value, (int, np.integer)):
            self.registry.require_kind(int(value), self.slot_kinds[slot],
                                       self.slot_names[slot])
            return self.registry.embedding(int(value))
        return _as_vec(value, self.dim, self.slot_names[slot])

    def _predicate_index(self, p):
        # Rescal slices are indexed by position among registered predicates.
        preds = self.registry.ids_of(Kind.PREDICATE)
        where = np.nonzero(preds == p)[0]
        if where.size == 0:
            raise DataError(f"predicate id {p} not registered")
        return int(where[0])

    def conditional_masses(self, target_slot, bound):
        """Unnormalized mass per candidate of ``target_slot``.

        ``bound`` maps slots to ids or raw vectors; unmentioned slots
        are marginalized.  Exact for multilinear families only.
        """
        if not self.exact_path:
            raise UsageError(f"{type(self.family).__name__} has no exact "
                             "marginalization path; use trained sampler heads")
        target = self.slot_index(target_slot)
        bound = {self.slot_index(k): v for k, v in bound.items()}
        if target in bound:
            raise UsageError(f"target slot {self.slot_names[target]} is bound")
        inputs = [None] * self.arity
        for j in range(self.arity):
            if j != target:
                inputs[j] = self.resolve_slot(j, bound.get(j))
        ids, candidates = self.candidate_matrix(target)
        if isinstance(self.family, Rescal):
            masses = self._rescal_masses(target, inputs, candidates)
        else:
            h = self.family.slot_vector(target, inputs)
            masses = candidates @ h
        return ids, masses

    def _rescal_masses(self, target, inputs, candidates):
        fam = self.family
        if target == Rescal.predicate_slot:
            return fam.predicate_masses(inputs[0], inputs[2])
        pin = inputs[Rescal.predicate_slot]
        g = fam.effective_core().sum(axis=2) if pin is None \
            else fam.effective_core()[:, :, pin]
        h = fam.subject_vector(g, inputs[2]) if target == 0 \
            else fam.object_vector(g, inputs[0])
        return candidates @ h

    def slot_inputs_for(self, id_arrays):
        """Batched slot inputs from id arrays (training path)."""
        out = []
        for j, ids in enumerate(id_arrays):
            if self._is_core_indexed(j):
                preds = self.registry.ids_of(Kind.PREDICATE)
                index_of = np.full(len(self.registry), -1, dtype=np.intp)
                index_of[preds] = np.arange(preds.size)
                out.append(index_of[ids])
            else:
                out.append(self.registry.embedding_rows(ids))
        return out

    def theta_batch(self, id_arrays):
        return self.family.theta_batch(self.slot_inputs_for(id_arrays))

    def theta(self, ids):
        return float(self.theta_batch([np.asarray([i], dtype=np.intp) for i in ids])[0])
