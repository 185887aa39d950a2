"""Boltzmann-distribution query answering.

Queries treat the tuple slots themselves as random, with distribution
proportional to exp(beta * score) -- equivalently score^beta once the
score of a nonnegative multilinear model is read as exp of an energy.
Marginalization happens on the linear model (beta = 1): a marginalized
slot activates all of its index neurons, i.e. its input is the sum of
the candidate embeddings.  The inverse temperature is applied to the
resulting unnormalized conditional mass afterwards, in the log domain.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, UsageError
from .models import MemoryModel, MultiwayNet
from .registry import Kind

PROB_TOL = 1e-9


@dataclass
class BoltzmannQuery:
    """A query pattern: bound slots, one target slot, rest marginalized."""

    beta: float = 1.0
    bound: dict = field(default_factory=dict)
    target: object = None
    n_samples: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0:
            raise UsageError(f"beta must be >= 0, got {self.beta}")
        if self.n_samples < 1:
            raise UsageError(f"n_samples must be >= 1, got {self.n_samples}")


@dataclass
class Distribution:
    support: np.ndarray
    probabilities: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=np.intp)
        self.probabilities = np.asarray(self.probabilities, dtype=float)
        if self.support.shape != self.probabilities.shape:
            raise UsageError("support and probabilities must have equal length")
        if np.any(self.probabilities < 0) or \
                abs(self.probabilities.sum() - 1.0) > PROB_TOL:
            raise NumericalError("probabilities must be nonnegative and sum to 1")

    def prob_of(self, id):
        hit = np.nonzero(self.support == id)[0]
        return float(self.probabilities[hit[0]]) if hit.size else 0.0

    def sample(self, rng):
        edges = np.cumsum(self.probabilities)
        i = int(np.searchsorted(edges, rng.random() * edges[-1], side="right"))
        return int(self.support[min(i, self.support.size - 1)])

    def argmax(self):
        # Ties break toward the lowest id: support is ascending and
        # argmax returns the first maximum.
        return int(self.support[int(np.argmax(self.probabilities))])


def _boltzmann(support, masses, beta):
    masses = np.asarray(masses, dtype=float)
    if np.any(masses < 0):
        raise NumericalError("negative mass on the exact path; the model is "
                             "not nonnegative, route it through sampler heads")
    if beta == 0:
        probs = np.full(masses.shape, 1.0 / masses.size)
        return Distribution(support, probs)
    with np.errstate(divide="ignore"):
        logp = beta * np.log(masses)
    peak = np.max(logp)
    if not np.isfinite(peak):
        raise NumericalError("all candidate masses are zero")
    un = np.exp(logp - peak)
    return Distribution(support, un / un.sum())


def conditional_distribution(model, slot, bound, beta):
    """Exact conditional over one slot of a nonnegative multilinear model.

    Slots absent from ``bound`` (other than the target) are
    marginalized.  Bound values may be ids or raw latent vectors.
    """
    if beta < 0:
        raise UsageError(f"beta must be >= 0, got {beta}")
    ids, masses = model.conditional_masses(slot, bound)
    return _boltzmann(ids, masses, beta)


def marginal_distribution(model, slot, beta):
    """Marginal over one slot: every other slot fully marginalized."""
    return conditional_distribution(model, slot, {}, beta)


def sample_slots(model, beta, rng, bound=None):
    """One ancestral pass: free slots are sampled in slot order, each
    conditioned on everything sampled so far, later free slots
    marginalized.  Returns the sampled id per free slot index."""
    bound = dict(bound or {})
    fixed = {model.slot_index(k): v for k, v in bound.items()}
    sampled = {}
    for slot in range(model.arity):
        if slot in fixed:
            continue
        dist = conditional_distribution(model, slot, fixed, beta)
        choice = dist.sample(rng)
        fixed[slot] = choice
        sampled[slot] = choice
    return sampled


def sample_triple(model, beta, rng):
    """One independent (subject, predicate, object) draw from the model's
    Boltzmann distribution via the subject -> predicate -> object chain."""
    if model.arity != 3:
        raise UsageError("sample_triple needs a 3-slot model")
    got = sample_slots(model, beta, rng)
    return got[0], got[1], got[2]


def chain_distribution(model, beta, bound=None):
    """Exact joint distribution realized by the ancestral chain.

    At beta = 1 this equals the model's Boltzmann joint; at other beta
    each stage is sharpened separately.  Returns a dict mapping the
    tuple of free-slot ids to its probability.
    """
    bound = dict(bound or {})
    fixed = {model.slot_index(k): v for k, v in bound.items()}
    free = [s for s in range(model.arity) if s not in fixed]
    out = {}

    def walk(prefix, fixed_now, prob):
        if len(prefix) == len(free):
            out[tuple(prefix)] = prob
            return
        slot = free[len(prefix)]
        dist = conditional_distribution(model, slot, fixed_now, beta)
        for id, p in zip(dist.support, dist.probabilities):
            if p == 0.0:
                continue
            walk(prefix + [int(id)], {**fixed_now, slot: int(id)}, prob * float(p))

    walk([], fixed, 1.0)
    return out


def association_distribution(registry, entity, beta):
    """P(e') proportional to exp(beta * <a_entity, a_e'>) over entities."""
    registry.require_kind(entity, Kind.ENTITY, "entity")
    ids = registry.ids_of(Kind.ENTITY)
    rows = registry.embedding_rows(ids)
    logits = beta * (rows @ registry.embedding(entity))
    un = np.exp(logits - np.max(logits))
    return Distribution(ids, un / un.sum())


def sample_association(registry, entity, beta, rng, exclude_self=False):
    dist = association_distribution(registry, entity, beta)
    if exclude_self:
        keep = dist.support != entity
        if not np.any(keep):
            raise UsageError("no other entities to associate to")
        probs = dist.probabilities[keep]
        dist = Distribution(dist.support[keep], probs / probs.sum())
    return dist.sample(rng)


# -- sampling through learned representation heads ----------------------
#
# For score models without an exact marginalization path, each chain
# stage gets its own head: a free subject vector, a predicate head fed
# the sampled subject, and an object head fed subject and predicate.
# Stage distributions are softmaxes of beta * <candidate, head output>.


class SamplerHeads:
    def __init__(self, model, hidden=64, rng=None):
        if model.arity != 3:
            raise UsageError("sampler heads cover 3-slot models")
        rng = rng if rng is not None else np.random.default_rng(0)
        dim = model.dim
        self.model = model
        self.subject_vec = rng.normal(0.0, 0.1 / np.sqrt(dim), size=dim)
        self.predicate_net = MultiwayNet(dim, 1, hidden=hidden, out_dim=dim, rng=rng)
        self.object_net = MultiwayNet(dim, 2, hidden=hidden, out_dim=dim, rng=rng)
        self.trained = False

    def _candidates(self, slot):
        return self.model.candidate_matrix(slot)

    def stage_distribution(self, beta, s=None, p=None):
        """Subject stage when s is None, predicate stage given s, object
        stage given s and p."""
        reg = self.model.registry
        if s is None:
            ids, rows = self._candidates(0)
            h = self.subject_vec
        elif p is None:
            ids, rows = self._candidates(1)
            h = self.predicate_net.represent([reg.embedding(s)])
        else:
            ids, rows = self._candidates(2)
            h = self.object_net.represent([reg.embedding(s), reg.embedding(p)])
        logits = beta * (rows @ h)
        un = np.exp(logits - np.max(logits))
        return Distribution(ids, un / un.sum())


def train_sampler_heads(model, facts, hidden=64, epochs=300, lr=0.5,
                        batch_size=128, rng=None):
    """Fit the three stage heads on observed positive triples.

    Each stage maximizes the log-softmax probability of the observed id
    against its stage's candidate set; embeddings stay frozen.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    facts = [f for f in facts if f.value != 0.0]
    if not facts:
        raise UsageError("sampler heads need at least one positive triple")
    heads = SamplerHeads(model, hidden=hidden, rng=rng)
    reg = model.registry
    s_ids = np.array([f.s for f in facts], dtype=np.intp)
    p_ids = np.array([f.p for f in facts], dtype=np.intp)
    o_ids = np.array([f.o for f in facts], dtype=np.intp)
    ent_ids, ent_rows = model.candidate_matrix(0)
    prd_ids, prd_rows = model.candidate_matrix(1)
    ent_pos = {int(e): i for i, e in enumerate(ent_ids)}
    prd_pos = {int(e): i for i, e in enumerate(prd_ids)}
    s_pos = np.array([ent_pos[int(i)] for i in s_ids])
    p_pos = np.array([prd_pos[int(i)] for i in p_ids])
    o_pos = np.array([ent_pos[int(i)] for i in o_ids])
    a_s = reg.embedding_rows(s_ids)
    a_p = reg.embedding_rows(p_ids)

    def softmax_grad(h_batch, rows, true_pos):
        logits = h_batch @ rows.T
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        # d(-log softmax)/dh = E_probs[row] - row_true
        return probs @ rows - rows[true_pos]

    n = len(facts)
    for _ in range(epochs):
        order = rng.permutation(n)
        for lo in range(0, n, batch_size):
            idx = order[lo : lo + batch_size]
            scale = lr / idx.size

            # subject head is one shared vector; sum the per-fact gradients
            dh_sub = softmax_grad(np.repeat(heads.subject_vec[None, :], idx.size, 0),
                                  ent_rows, s_pos[idx])
            heads.subject_vec -= scale * dh_sub.sum(axis=0)

            slots = [a_s[idx]]
            y, hid = heads.predicate_net.forward_batch(slots)
            dh_p = softmax_grad(y, prd_rows, p_pos[idx])
            _, grads = heads.predicate_net.backward_from_hidden(slots, hid, dh_p)
            for name, arr in heads.predicate_net.params().items():
                arr -= scale * grads[name]

            slots = [a_s[idx], a_p[idx]]
            y, hid = heads.object_net.forward_batch(slots)
            dh_o = softmax_grad(y, ent_rows, o_pos[idx])
            _, grads = heads.object_net.backward_from_hidden(slots, hid, dh_o)
            for name, arr in heads.object_net.params().items():
                arr -= scale * grads[name]

    heads.trained = True
    return heads


def sample_via_heads(heads, beta, rng):
    """Ancestral triple sample through the trained stage heads."""
    if not heads.trained:
        raise UsageError("sampler heads are untrained")
    s = heads.stage_distribution(beta).sample(rng)
    p = heads.stage_distribution(beta, s=s).sample(rng)
    o = heads.stage_distribution(beta, s=s, p=p).sample(rng)
    return s, p, o
