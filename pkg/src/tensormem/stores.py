"""Sparse observation stores for the three memory tensors.

The semantic store holds (subject, predicate, object; value) triples,
the episodic store holds (subject, predicate, object, time; value)
quadruples, and the sensory store holds (channel, position, time; value)
measurements.  Values are Bernoulli (0/1) or real; each predicate uses
one likelihood, declared at configuration time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, KindError, UnknownIdError
from .registry import Kind

BERNOULLI = "bernoulli"
GAUSSIAN = "gaussian"


def bernoulli_nll(value, theta):
    """Negative log-likelihood of a 0/1 value under the logistic link.

    Computes log(1 + exp((1 - 2 value) * theta)) without overflow:
    for u = (1 - 2 value) * theta the result is max(u, 0) + log1p(e^-|u|).
    """
    value = np.asarray(value, dtype=float)
    theta = np.asarray(theta, dtype=float)
    u = (1.0 - 2.0 * value) * theta
    return np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))


def gaussian_nll(value, theta, sigma2=1.0):
    """Squared-error term (value - theta)^2 / (2 sigma^2), constant dropped."""
    if np.any(np.asarray(sigma2) <= 0):
        raise DataError(f"sigma2 must be positive, got {sigma2}")
    value = np.asarray(value, dtype=float)
    theta = np.asarray(theta, dtype=float)
    return (value - theta) ** 2 / (2.0 * sigma2)


def nll_and_dtheta(values, thetas, likelihood, sigma2=1.0):
    """Per-item NLL and its derivative w.r.t. the natural parameter."""
    values = np.asarray(values, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if likelihood == BERNOULLI:
        sign = 1.0 - 2.0 * values
        u = sign * thetas
        nll = np.maximum(u, 0.0) + np.log1p(np.exp(-np.abs(u)))
        # sigmoid(u), stable on both tails
        e = np.exp(-np.abs(u))
        sig = np.where(u >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return nll, sign * sig
    if likelihood == GAUSSIAN:
        return gaussian_nll(values, thetas, sigma2), (thetas - values) / sigma2
    raise DataError(f"unknown likelihood {likelihood!r}")


@dataclass(frozen=True)
class TripleFact:
    s: int
    p: int
    o: int
    value: float


@dataclass(frozen=True)
class QuadFact:
    s: int
    p: int
    o: int
    t: int
    value: float


@dataclass(frozen=True)
class SensoryEntry:
    q: int
    gamma: int
    t: int
    value: float


class _KeyedStore:
    """Keyed map with duplicate-replaces semantics and stable iteration."""

    def __init__(self, registry):
        self.registry = registry
        self._values = {}

    def __len__(self):
        return len(self._values)

    def lookup(self, *key):
        return self._values.get(key)

    def _put(self, key, value):
        replaced = key in self._values
        self._values[key] = float(value)
        return replaced


class TripleStore(_KeyedStore):
    kind_slots = ((Kind.ENTITY, "subject"), (Kind.PREDICATE, "predicate"),
                  (Kind.ENTITY, "object"))

    def insert(self, s, p, o, value):
        for id, (kind, name) in zip((s, p, o), self.kind_slots):
            self.registry.require_kind(id, kind, name)
        return self._put((s, p, o), value)

    def facts(self):
        return (TripleFact(*k, v) for k, v in self._values.items())

    def arrays(self):
        if not self._values:
            return tuple(np.zeros(0, dtype=np.intp) for _ in range(3)) + (np.zeros(0),)
        keys = np.array(list(self._values.keys()), dtype=np.intp)
        vals = np.array(list(self._values.values()))
        return keys[:, 0], keys[:, 1], keys[:, 2], vals


class QuadStore(_KeyedStore):
    kind_slots = ((Kind.ENTITY, "subject"), (Kind.PREDICATE, "predicate"),
                  (Kind.ENTITY, "object"), (Kind.TIME, "time"))

    def insert(self, s, p, o, t, value):
        for id, (kind, name) in zip((s, p, o, t), self.kind_slots):
            self.registry.require_kind(id, kind, name)
        return self._put((s, p, o, t), value)

    def facts(self):
        return (QuadFact(*k, v) for k, v in self._values.items())

    def arrays(self):
        if not self._values:
            return tuple(np.zeros(0, dtype=np.intp) for _ in range(4)) + (np.zeros(0),)
        keys = np.array(list(self._values.keys()), dtype=np.intp)
        vals = np.array(list(self._values.values()))
        return keys[:, 0], keys[:, 1], keys[:, 2], keys[:, 3], vals


def autobiographical_slice(store, subject):
    """Quadruples of one individual only; the source store is unchanged."""
    store.registry.require_kind(subject, Kind.ENTITY, "subject")
    out = QuadStore(store.registry)
    for fact in store.facts():
        if fact.s == subject:
            out.insert(fact.s, fact.p, fact.o, fact.t, fact.value)
    return out


class SensoryStore(_KeyedStore):
    """Measurements u[channel, position, time] with a fixed buffer length.

    Positions run 0..n_positions inclusive, so a buffer holds
    n_positions + 1 samples per channel.
    """

    def __init__(self, registry, n_positions):
        super().__init__(registry)
        if n_positions < 0:
            raise DataError("buffer length must be >= 0")
        self.n_positions = int(n_positions)

    def insert(self, q, gamma, t, value):
        self.registry.require_kind(q, Kind.CHANNEL, "channel")
        self.registry.require_kind(gamma, Kind.BUFFER_POS, "position")
        self.registry.require_kind(t, Kind.TIME, "time")
        if self.position_index(gamma) > self.n_positions:
            raise DataError(f"buffer position {self.registry.label(gamma)} "
                            f"exceeds configured length {self.n_positions}")
        return self._put((q, gamma, t), value)

    def entries(self):
        return (SensoryEntry(*k, v) for k, v in self._values.items())

    def arrays(self):
        if not self._values:
            return tuple(np.zeros(0, dtype=np.intp) for _ in range(3)) + (np.zeros(0),)
        keys = np.array(list(self._values.keys()), dtype=np.intp)
        vals = np.array(list(self._values.values()))
        return keys[:, 0], keys[:, 1], keys[:, 2], vals

    def position_index(self, gamma):
        label = self.registry.label(gamma)
        try:
            index = int(label)
        except ValueError:
            raise DataError(f"buffer position label {label!r} is not an integer") from None
        if index < 0:
            raise DataError(f"buffer position {label!r} is negative")
        return index

    def buffer_matrix(self, t):
        """Dense (channels x positions) buffer for one time id; absent
        entries read as 0."""
        channels = self.registry.ids_of(Kind.CHANNEL)
        out = np.zeros((len(channels), self.n_positions + 1))
        row_of = {int(q): i for i, q in enumerate(channels)}
        for (q, gamma, tt), value in self._values.items():
            if tt == t:
                out[row_of[q], self.position_index(gamma)] = value
        return out


# -- TSV ingestion -----------------------------------------------------
#
# Triples:     subject TAB predicate TAB object TAB value
# Quadruples:  subject TAB predicate TAB object TAB value TAB time
# Sensory:     time TAB channel TAB gamma TAB value
#
# Lines starting with '#' are ignored.  Values are '0'/'1' or a decimal
# literal; a Bernoulli predicate rejects anything but 0/1.


def _parse_value(token, path, lineno):
    try:
        return float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: bad value {token!r}") from None


def _check_likelihood(likelihood, value, label, path, lineno):
    if likelihood == BERNOULLI and value not in (0.0, 1.0):
        raise DataError(f"{path}:{lineno}: predicate {label!r} is Bernoulli "
                        f"but value is {value}")


def _rows(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield lineno, line.split("\t")


def read_triple_rows(path):
    """Yield (lineno, subject, predicate, object, value) without touching
    any registry; used for ingestion and held-out evaluation files."""
    for lineno, parts in _rows(path):
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
        yield lineno, parts[0], parts[1], parts[2], _parse_value(parts[3], path, lineno)


def read_quad_rows(path):
    for lineno, parts in _rows(path):
        if len(parts) != 5:
            raise DataError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
        yield (lineno, parts[0], parts[1], parts[2],
               _parse_value(parts[3], path, lineno), parts[4])


def load_triples(path, registry, store, likelihood_of=None):
    """Ingest a triples TSV; returns (inserted, replaced) counts."""
    likelihood_of = likelihood_of or (lambda label: BERNOULLI)
    inserted = replaced = 0
    for lineno, s_label, p_label, o_label, value in read_triple_rows(path):
        _check_likelihood(likelihood_of(p_label), value, p_label, path, lineno)
        s = registry.register(s_label, Kind.ENTITY)
        p = registry.register(p_label, Kind.PREDICATE)
        o = registry.register(o_label, Kind.ENTITY)
        if store.insert(s, p, o, value):
            replaced += 1
        else:
            inserted += 1
    return inserted, replaced


def load_quads(path, registry, store, likelihood_of=None):
    likelihood_of = likelihood_of or (lambda label: BERNOULLI)
    inserted = replaced = 0
    for lineno, s_label, p_label, o_label, value, t_label in read_quad_rows(path):
        _check_likelihood(likelihood_of(p_label), value, p_label, path, lineno)
        s = registry.register(s_label, Kind.ENTITY)
        p = registry.register(p_label, Kind.PREDICATE)
        o = registry.register(o_label, Kind.ENTITY)
        t = registry.register(t_label, Kind.TIME)
        if store.insert(s, p, o, t, value):
            replaced += 1
        else:
            inserted += 1
    return inserted, replaced


def read_sensory_rows(path, n_positions):
    """Yield (lineno, time, channel, gamma, value) rows, gamma validated."""
    for lineno, parts in _rows(path):
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 columns, got {len(parts)}")
        t_label, q_label, g_token, v_token = parts
        try:
            g_index = int(g_token)
        except ValueError:
            raise DataError(f"{path}:{lineno}: gamma must be an integer") from None
        if not 0 <= g_index <= n_positions:
            raise DataError(f"{path}:{lineno}: gamma {g_index} outside "
                            f"[0, {n_positions}]")
        yield lineno, t_label, q_label, g_index, _parse_value(v_token, path, lineno)


def load_sensory(path, registry, store):
    inserted = replaced = 0
    for lineno, t_label, q_label, g_index, value in read_sensory_rows(
            path, store.n_positions):
        t = registry.register(t_label, Kind.TIME)
        q = registry.register(q_label, Kind.CHANNEL)
        g = registry.register(str(g_index), Kind.BUFFER_POS)
        if store.insert(q, g, t, value):
            replaced += 1
        else:
            inserted += 1
    return inserted, replaced


def _fmt(value):
    return f"{int(value)}" if value in (0.0, 1.0) else repr(float(value))


def save_triples(path, registry, store):
    with open(path, "w", encoding="utf-8") as fh:
        for f in store.facts():
            fh.write(f"{registry.label(f.s)}\t{registry.label(f.p)}\t"
                     f"{registry.label(f.o)}\t{_fmt(f.value)}\n")


def save_quads(path, registry, store):
    with open(path, "w", encoding="utf-8") as fh:
        for f in store.facts():
            fh.write(f"{registry.label(f.s)}\t{registry.label(f.p)}\t"
                     f"{registry.label(f.o)}\t{_fmt(f.value)}\t"
                     f"{registry.label(f.t)}\n")


def save_sensory(path, registry, store):
    with open(path, "w", encoding="utf-8") as fh:
        for e in store.entries():
            fh.write(f"{registry.label(e.t)}\t{registry.label(e.q)}\t"
                     f"{store.position_index(e.gamma)}\t{_fmt(e.value)}\n")
