"""From sensory buffers to latent time representations and back to triples.

A buffer (channels x positions) is encoded into the latent time vector
h_t.  When the encoding is novel relative to the predicted latent, a new
time entity is registered with h_t as its embedding; that is how
episodes form.  Scenes are decoded by clamping the time slot of the
4-way model to h_t and sampling subject, predicate and object; replacing
the time slot with the sum of all time embeddings instead yields a
time-free semantic model.
"""

from __future__ import annotations

import numpy as np

from .errors import DataError, ShapeError, UsageError
from .models import CoreTensor, MemoryModel, Parafac, Tucker
from .predict import predict_arx
from .query import conditional_distribution, sample_slots
from .registry import Kind


class LinearEncoder:
    """Default buffer encoder: one affine map of the vectorized buffer.

    With ``nonneg`` the effective encoding is exp of the affine output,
    matching the embedding reparameterization.
    """

    def __init__(self, dim, n_channels, n_positions, nonneg=False, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.dim = int(dim)
        self.n_channels = int(n_channels)
        self.n_positions = int(n_positions)
        self.nonneg = bool(nonneg)
        size = self.input_size
        self.weight = rng.normal(0.0, 0.1 / np.sqrt(max(size, 1)), size=(dim, size))
        self.bias = np.zeros(dim)

    @property
    def input_size(self):
        return self.n_channels * (self.n_positions + 1)

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def vectorize(self, buffer):
        buffer = np.asarray(buffer, dtype=float)
        if buffer.shape != (self.n_channels, self.n_positions + 1):
            raise ShapeError(f"buffer must have shape "
                             f"({self.n_channels}, {self.n_positions + 1}), "
                             f"got {buffer.shape}")
        return buffer.reshape(-1)

    def raw_output(self, buffer):
        return self.weight @ self.vectorize(buffer) + self.bias

    def raw_output_batch(self, flat):
        return flat @ self.weight.T + self.bias


def encode_time(encoder, buffer):
    """Latent time representation of one buffer (exp'd when nonneg)."""
    raw = encoder.raw_output(buffer)
    return np.exp(raw) if encoder.nonneg else raw


def novelty_score(predicted, encoded):
    """Mean squared deviation per latent dimension."""
    predicted = np.asarray(predicted, dtype=float)
    encoded = np.asarray(encoded, dtype=float)
    if predicted.shape != encoded.shape:
        raise ShapeError("predicted and encoded latents differ in shape")
    return float(np.mean((predicted - encoded) ** 2))


def form_episode(encoder, buffer, registry, threshold, predictor=None,
                 individual=None, label=None, significant=False):
    """Encode a buffer and register a time entity if the gate opens.

    The gate opens when the novelty (mean squared deviation between the
    predicted and encoded latents) reaches ``threshold``, when no
    prediction is possible (no predictor or not enough history), or when
    the caller marks the buffer ``significant``.  Returns the new time
    id, or None when no episode forms.
    """
    h = encode_time(encoder, buffer)
    time_ids = registry.ids_of(Kind.TIME)
    novel = True
    if predictor is not None and time_ids.size >= predictor.window:
        history = [registry.embedding(int(t)) for t in time_ids]
        ind = registry.embedding(individual) if individual is not None else None
        predicted = predict_arx(predictor, history, ind)
        novel = novelty_score(predicted, h) >= threshold
    if not (novel or significant):
        return None
    if label is None:
        label = f"t{time_ids.size}"
    id = registry.register(label, Kind.TIME)
    registry.set_embedding(id, h)
    return id


def reduce_time_slot(model, time_input):
    """Contract the time slot of a 4-way model with a fixed vector.

    Multilinearity makes the result an exact 3-way model over (subject,
    predicate, object): a Tucker core contracts to a 3-way core, a
    4-slot product model contracts to a diagonal core scaled by the
    time input.
    """
    if model.arity != 4:
        raise UsageError("time reduction needs a 4-slot model")
    time_slot = model.slot_index("time")
    vec = np.asarray(time_input, dtype=float)
    if vec.shape != (model.dim,):
        raise ShapeError(f"time input must have shape ({model.dim},)")
    fam = model.family
    if isinstance(fam, Tucker):
        reduced = np.tensordot(fam.core.effective(), vec, axes=([time_slot], [0]))
        family = Tucker(CoreTensor(reduced, nonneg=False))
    elif isinstance(fam, Parafac):
        core = np.zeros((model.dim,) * 3)
        idx = np.arange(model.dim)
        core[idx, idx, idx] = vec
        family = Tucker(CoreTensor(core, nonneg=False))
    else:
        raise UsageError(f"cannot reduce {type(fam).__name__} over time")
    return MemoryModel.for_memory("semantic", family, model.registry)


def decode_scene(model, h_t, beta, n_samples, rng):
    """Sample (s, p, o) triples from the 4-way model with time clamped.

    The chain samples the subject first (predicate and object
    marginalized), then the predicate, then the object.
    """
    h_t = np.asarray(h_t, dtype=float)
    if np.any(h_t < 0):
        raise DataError("exact decoding needs a nonnegative time latent")
    if n_samples < 1:
        raise UsageError("n_samples must be >= 1")
    time_slot = model.slot_index("time")
    triples = []
    for _ in range(n_samples):
        got = sample_slots(model, beta, rng, bound={time_slot: h_t})
        triples.append(tuple(got[s] for s in sorted(got)))
    return triples


def decode_distribution(model, h_t, slot, bound, beta):
    """Exact conditional over one slot given the clamped time latent."""
    bound = dict(bound or {})
    bound[model.slot_index("time")] = np.asarray(h_t, dtype=float)
    return conditional_distribution(model, slot, bound, beta)


def semantic_from_episodic(model, time_ids=None):
    """Time-free triple model: marginalize the 4-way model over time.

    ``time_ids`` restricts the marginalization to a subset of time
    entities (all registered times by default); their index neurons are
    the active ones.  Returns a 3-way model usable with every query
    operation.
    """
    if time_ids is None:
        time_ids = model.registry.ids_of(Kind.TIME)
    time_ids = np.asarray(time_ids, dtype=np.intp)
    if time_ids.size == 0:
        raise DataError("no time entities to marginalize over")
    for t in time_ids:
        model.registry.require_kind(int(t), Kind.TIME, "time")
    weight = model.registry.embedding_rows(time_ids).sum(axis=0)
    return reduce_time_slot(model, weight)


def reconstruct_buffer(encoder, h):
    """Experimental inverse of the linear encoder via pseudo-inverse.

    Recovers a least-squares buffer whose encoding is h; quality is
    limited by the encoder's rank.  Not part of the supported surface.
    """
    h = np.asarray(h, dtype=float)
    raw = np.log(h) if encoder.nonneg else h
    flat = np.linalg.pinv(encoder.weight) @ (raw - encoder.bias)
    return flat.reshape(encoder.n_channels, encoder.n_positions + 1)
