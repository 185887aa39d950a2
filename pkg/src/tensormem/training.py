"""Cost terms, negative sampling and minibatch SGD.

The total cost is a weighted sum of per-memory negative log-likelihood
terms plus a squared-norm regularizer over stored parameters.  All
gradients here are analytic and are verified against central finite
differences in the test suite.  Because every term reads the same
embedding rows, gradients from different memories accumulate into the
same parameters; that coupling is the whole point of the shared
representation.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, NumericalError
from .models import MemoryModel, Rescal
from .predict import (ArxPredictor, RnnPredictor, arx_backward_batch,
                      predict_arx_batch, rnn_unroll, rnn_unroll_backward)
from .registry import Kind
from .stores import BERNOULLI, GAUSSIAN, TripleFact, QuadFact, nll_and_dtheta

DIVERGENCE_FACTOR = 1e6

TERMS = ("semantic", "episodic", "sensory", "predict")


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 50
    batch_size: int = 128
    lambda_a: float = 0.0
    lambda_w: float = 0.0
    negative_ratio: int = 5
    cost_weights: dict = field(default_factory=lambda: {"semantic": 1.0})
    sigma2: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise DataError("learning_rate must be >= 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise DataError("epochs must be >= 0 and batch_size >= 1")
        if self.lambda_a < 0 or self.lambda_w < 0:
            raise DataError("regularization weights must be >= 0")
        if self.negative_ratio < 0:
            raise DataError("negative_ratio must be >= 0")
        if self.sigma2 <= 0:
            raise DataError("sigma2 must be positive")
        for term in self.cost_weights:
            if term not in TERMS:
                raise DataError(f"unknown cost term {term!r}")
            if self.cost_weights[term] < 0:
                raise DataError("cost weights must be >= 0")
        if not any(w > 0 for w in self.cost_weights.values()):
            raise DataError("at least one cost weight must be positive")

    def weight(self, term):
        return float(self.cost_weights.get(term, 0.0))


# -- likelihood bookkeeping ---------------------------------------------


def _split_nll(values, thetas, likelihoods, sigma2):
    """NLL and dNLL/dtheta with per-item likelihood selection."""
    nll = np.zeros_like(thetas)
    dtheta = np.zeros_like(thetas)
    for lk in (BERNOULLI, GAUSSIAN):
        mask = likelihoods == (lk == GAUSSIAN)
        if np.any(mask):
            nll[mask], dtheta[mask] = nll_and_dtheta(values[mask], thetas[mask],
                                                     lk, sigma2)
    return nll, dtheta


def _gaussian_mask(p_ids, likelihood_of):
    return np.array([likelihood_of(int(p)) == GAUSSIAN for p in p_ids], dtype=bool)


# -- cost terms (evaluation only) ---------------------------------------


def cost_semantic(model, facts, likelihood_of=None, sigma2=1.0):
    """Sum of per-fact NLL over the given triples (positives and any
    generated negatives the caller included)."""
    facts = list(facts)
    if not facts:
        raise DataError("semantic cost needs a non-empty training set")
    likelihood_of = likelihood_of or (lambda p: BERNOULLI)
    ids = [np.array([getattr(f, a) for f in facts], dtype=np.intp) for a in "spo"]
    values = np.array([f.value for f in facts])
    thetas = model.theta_batch(ids)
    nll, _ = _split_nll(values, thetas, _gaussian_mask(ids[1], likelihood_of), sigma2)
    return float(nll.sum())


def cost_episodic(model, facts, likelihood_of=None, sigma2=1.0):
    facts = list(facts)
    if not facts:
        raise DataError("episodic cost needs a non-empty training set")
    likelihood_of = likelihood_of or (lambda p: BERNOULLI)
    ids = [np.array([getattr(f, a) for f in facts], dtype=np.intp) for a in "spot"]
    values = np.array([f.value for f in facts])
    thetas = model.theta_batch(ids)
    nll, _ = _split_nll(values, thetas, _gaussian_mask(ids[1], likelihood_of), sigma2)
    return float(nll.sum())


def cost_sensory(model, entries, sigma2=1.0, encoder=None, store=None):
    """Gaussian NLL over sensory measurements.

    With an encoder, the time slot input is the encoding of that time
    step's buffer instead of the stored time embedding, so the encoder
    is trained through this term.
    """
    entries = list(entries)
    if not entries:
        raise DataError("sensory cost needs a non-empty training set")
    q = np.array([e.q for e in entries], dtype=np.intp)
    g = np.array([e.gamma for e in entries], dtype=np.intp)
    t = np.array([e.t for e in entries], dtype=np.intp)
    values = np.array([e.value for e in entries])
    thetas = _sensory_thetas(model, q, g, t, encoder, store)[0]
    nll, _ = nll_and_dtheta(values, thetas, GAUSSIAN, sigma2)
    return float(nll.sum())


def _sensory_thetas(model, q, g, t, encoder, store):
    if encoder is None:
        return model.theta_batch([q, g, t]), None
    if store is None:
        raise DataError("encoder-driven sensory cost needs the sensory store")
    uniq, inverse = np.unique(t, return_inverse=True)
    flat = np.stack([store.buffer_matrix(int(tt)).reshape(-1) for tt in uniq])
    raw = encoder.raw_output_batch(flat)
    h = np.exp(raw) if encoder.nonneg else raw
    slots = [model.registry.embedding_rows(q), model.registry.embedding_rows(g),
             h[inverse]]
    return model.family.theta_batch(slots), (uniq, inverse, flat, raw, h, slots)


def cost_predict(sequence, predictor, individual=None, buffers=None):
    """Squared one-step prediction error over a latent sequence.

    Component-wise Gaussian NLL with unit variance: for every step with
    a full lag window, 0.5 * ||target - prediction||^2.
    """
    sequence = np.asarray(sequence, dtype=float)
    w = predictor.window
    if sequence.shape[0] < w + 1:
        raise DataError(f"sequence of length {sequence.shape[0]} is shorter "
                        f"than window+1 = {w + 1}")
    idx = np.arange(w, sequence.shape[0])
    if isinstance(predictor, ArxPredictor):
        lagged = [sequence[idx - k] for k in range(1, w + 1)]
        pred = predict_arx_batch(predictor, lagged, individual)
        err = sequence[idx] - pred
        return float(0.5 * (err * err).sum())
    total = 0.0
    for t in idx:
        states = rnn_unroll(predictor, [buffers[k] for k in range(t - w + 1, t + 1)],
                            sequence[t - w], individual)
        err = sequence[t] - states[-1]
        total += 0.5 * float(err @ err)
    return total


def regularizer(embedding_raw, mapping_params, lambda_a, lambda_w):
    """lambda_a ||A||_F^2 over stored embeddings plus lambda_w ||W||_F^2
    over all stored mapping parameters."""
    if lambda_a < 0 or lambda_w < 0:
        raise DataError("regularization weights must be >= 0")
    total = lambda_a * float(np.sum(np.square(embedding_raw)))
    for arr in mapping_params:
        total += lambda_w * float(np.sum(np.square(arr)))
    return total


# -- negative sampling ---------------------------------------------------


def lcwa_negatives(store, ratio, rng):
    """Corrupt the object of every positive triple ``ratio`` times.

    Replacement objects are uniform over registered entities that are
    not a known positive object for the same (subject, predicate); the
    positives themselves keep value 1, corruptions get value 0.
    """
    if ratio == 0:
        return []
    registry = store.registry
    entities = registry.ids_of(Kind.ENTITY)
    if entities.size < 2:
        raise DataError("need at least 2 entities to corrupt objects")
    positive_objects = defaultdict(set)
    for f in store.facts():
        if f.value != 0.0:
            positive_objects[(f.s, f.p)].add(f.o)
    out = []
    for f in store.facts():
        if f.value == 0.0:
            continue
        eligible = np.setdiff1d(entities,
                                np.fromiter(positive_objects[(f.s, f.p)], dtype=np.intp),
                                assume_unique=False)
        if eligible.size == 0:
            raise DataError(f"every object is positive for subject "
                            f"{registry.label(f.s)!r} and predicate "
                            f"{registry.label(f.p)!r}; no corruption possible")
        picks = eligible[rng.integers(0, eligible.size, size=ratio)]
        out.extend(TripleFact(f.s, f.p, int(o), 0.0) for o in picks)
    return out


def lcwa_negatives_quads(store, ratio, rng):
    """Same corruption for quadruples, within the (s, p, t) context."""
    if ratio == 0:
        return []
    registry = store.registry
    entities = registry.ids_of(Kind.ENTITY)
    if entities.size < 2:
        raise DataError("need at least 2 entities to corrupt objects")
    positive_objects = defaultdict(set)
    for f in store.facts():
        if f.value != 0.0:
            positive_objects[(f.s, f.p, f.t)].add(f.o)
    out = []
    for f in store.facts():
        if f.value == 0.0:
            continue
        eligible = np.setdiff1d(entities,
                                np.fromiter(positive_objects[(f.s, f.p, f.t)],
                                            dtype=np.intp))
        if eligible.size == 0:
            raise DataError("no corruption possible for a fully positive "
                            "(subject, predicate, time) context")
        picks = eligible[rng.integers(0, eligible.size, size=ratio)]
        out.extend(QuadFact(f.s, f.p, int(o), f.t, 0.0) for o in picks)
    return out


# -- gradient accumulation ----------------------------------------------


class GradBag(dict):
    def add(self, name, grad):
        if name in self:
            self[name] = self[name] + grad
        else:
            self[name] = grad


def _chain_embeddings(registry, grad):
    """Effective-space embedding gradient -> stored-parameter gradient."""
    if registry.nonneg:
        return grad * registry.embeddings.effective_matrix()
    return grad


def nll_term_grads(model, id_arrays, values, gaussian_mask, sigma2, weight, bag,
                   prefix):
    """Weighted NLL over one batch of keyed facts; gradients for the
    embedding matrix and the family parameters land in ``bag``."""
    slots = model.slot_inputs_for(id_arrays)
    thetas = model.family.theta_batch(slots)
    nll, dtheta = _split_nll(np.asarray(values, dtype=float), thetas,
                             gaussian_mask, sigma2)
    slot_grads, param_grads = model.family.backward_batch(slots, weight * dtheta)
    emb = np.zeros((len(model.registry), model.registry.dim))
    for j, sg in enumerate(slot_grads):
        if sg is not None:
            np.add.at(emb, id_arrays[j], sg)
    bag.add("embeddings", _chain_embeddings(model.registry, emb))
    for name, g in param_grads.items():
        bag.add(f"{prefix}/{name}", g)
    return weight * float(nll.sum())


def sensory_term_grads(model, q, g, t, values, sigma2, weight, bag,
                       encoder=None, store=None):
    values = np.asarray(values, dtype=float)
    thetas, ctx = _sensory_thetas(model, q, g, t, encoder, store)
    nll, dtheta = nll_and_dtheta(values, thetas, GAUSSIAN, sigma2)
    registry = model.registry
    emb = np.zeros((len(registry), registry.dim))
    if encoder is None:
        slots = model.slot_inputs_for([q, g, t])
        slot_grads, param_grads = model.family.backward_batch(slots, weight * dtheta)
        for j, ids in enumerate((q, g, t)):
            np.add.at(emb, ids, slot_grads[j])
    else:
        uniq, inverse, flat, raw, h, slots = ctx
        slot_grads, param_grads = model.family.backward_batch(slots, weight * dtheta)
        np.add.at(emb, q, slot_grads[0])
        np.add.at(emb, g, slot_grads[1])
        dh = np.zeros((uniq.size, registry.dim))
        np.add.at(dh, inverse, slot_grads[2])
        draw = dh * h if encoder.nonneg else dh
        bag.add("encoder/weight", draw.T @ flat)
        bag.add("encoder/bias", draw.sum(axis=0))
    bag.add("embeddings", _chain_embeddings(registry, emb))
    for name, grad in param_grads.items():
        bag.add(f"{model.name}/{name}", grad)
    return weight * float(nll.sum())


def predict_term_grads(registry, time_ids, predictor, individual_id, idx, weight,
                       bag, buffers_of=None, update_embeddings=True):
    """Prediction cost over target positions ``idx`` of the time sequence.

    Gradients flow into the predictor, the individual's embedding and,
    unless disabled, the time embeddings used as lags and targets.
    """
    seq = registry.embedding_rows(time_ids)
    ind = registry.embedding(individual_id) if individual_id is not None else None
    emb = np.zeros((len(registry), registry.dim))
    if isinstance(predictor, ArxPredictor):
        w = predictor.window
        lagged = [seq[idx - k] for k in range(1, w + 1)]
        pred = predict_arx_batch(predictor, lagged, ind)
        err = seq[idx] - pred
        cost = 0.5 * float((err * err).sum())
        dpred = -weight * err
        lag_grads, d_ind, pgrads = arx_backward_batch(predictor, lagged, ind,
                                                      pred, dpred)
        np.add.at(emb, time_ids[idx], weight * err)
        for k, lg in enumerate(lag_grads, start=1):
            np.add.at(emb, time_ids[idx - k], lg)
        if individual_id is not None and d_ind is not None:
            emb[individual_id] += d_ind
    else:
        w = predictor.window
        cost = 0.0
        pgrads = {name: np.zeros_like(arr) for name, arr in predictor.params().items()}
        for t in np.asarray(idx):
            bufs = [buffers_of(int(time_ids[k])) for k in range(t - w + 1, t + 1)]
            states = rnn_unroll(predictor, bufs, seq[t - w], ind)
            err = seq[t] - states[-1]
            cost += 0.5 * float(err @ err)
            d_start, d_ind, grads = rnn_unroll_backward(predictor, bufs, states,
                                                        ind, -weight * err)
            emb[time_ids[t]] += weight * err
            emb[time_ids[t - w]] += d_start
            if individual_id is not None:
                emb[individual_id] += d_ind
            for name in pgrads:
                pgrads[name] += grads[name]
    if update_embeddings:
        bag.add("embeddings", _chain_embeddings(registry, emb))
    for name, grad in pgrads.items():
        bag.add(f"predictor/{name}", grad)
    return weight * cost


def regularizer_grads(registry, mapping_params, lambda_a, lambda_w, scale, bag):
    if lambda_a > 0:
        bag.add("embeddings", 2.0 * scale * lambda_a * registry.embeddings.raw)
    if lambda_w > 0:
        for name, arr in mapping_params.items():
            bag.add(name, 2.0 * scale * lambda_w * arr)


# -- the SGD loop --------------------------------------------------------


@dataclass
class TrainReport:
    rows: list = field(default_factory=list)

    COLUMNS = ("epoch", "total_cost", "semantic", "episodic", "sensory",
               "predict", "reg")

    def append(self, epoch, total, parts, reg):
        self.rows.append((epoch, total, parts.get("semantic", 0.0),
                          parts.get("episodic", 0.0), parts.get("sensory", 0.0),
                          parts.get("predict", 0.0), reg))

    @property
    def final_cost(self):
        return self.rows[-1][1] if self.rows else float("nan")

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(f"{row[0]}\t" + "\t".join(repr(float(v)) for v in row[1:])
                         + "\n")


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    return [order[lo : lo + batch_size] for lo in range(0, n, batch_size)]


def sgd_train(system, config, rng_train=None, rng_neg=None):
    """Minibatch SGD over every weighted cost term of a memory system.

    Negatives are redrawn each epoch; the report holds full per-term
    costs evaluated after each epoch on that epoch's training set.
    Raises :class:`NumericalError` if the total cost stops being finite
    or grows past a large multiple of its initial value.
    """
    from .io import substream

    registry = system.registry
    rng_train = rng_train or substream(config.seed, "train")
    rng_neg = rng_neg or substream(config.seed, "negatives")

    params = {"embeddings": registry.embeddings.raw}
    mapping = {}
    for name in ("semantic", "episodic", "sensory_model"):
        model = getattr(system, name, None)
        if model is not None:
            for pname, arr in model.family.params().items():
                mapping[f"{model.name}/{pname}"] = arr
    if getattr(system, "encoder", None) is not None:
        for pname, arr in system.encoder.params().items():
            mapping[f"encoder/{pname}"] = arr
    if getattr(system, "predictor", None) is not None:
        for pname, arr in system.predictor.params().items():
            mapping[f"predictor/{pname}"] = arr
    params.update(mapping)

    likelihood_of = getattr(system, "likelihood_of", lambda p: BERNOULLI)
    active = _active_terms(system, config)
    if not active:
        raise DataError("no weighted cost term has data to train on")

    report = TrainReport()
    initial_total = None
    for epoch in range(1, config.epochs + 1):
        epoch_data = _epoch_data(system, config, active, rng_neg, likelihood_of)
        if initial_total is None:
            initial_total, _, _ = _full_cost(system, config, epoch_data,
                                             mapping, likelihood_of)
        batches = []
        for term, data in epoch_data.items():
            for idx in _batches(data["n"], config.batch_size, rng_train):
                batches.append((term, idx))
        order = rng_train.permutation(len(batches))
        total_items = sum(d["n"] for d in epoch_data.values())
        for b in order:
            term, idx = batches[b]
            bag = GradBag()
            _term_batch_grads(system, config, term, epoch_data[term], idx, bag,
                              likelihood_of)
            regularizer_grads(registry, mapping, config.lambda_a, config.lambda_w,
                              idx.size / total_items, bag)
            for name, grad in bag.items():
                params[name] -= config.learning_rate * grad
        total, parts, reg = _full_cost(system, config, epoch_data, mapping,
                                       likelihood_of)
        report.append(epoch, total, parts, reg)
        if not np.isfinite(total) or (initial_total > 0 and
                                      total > DIVERGENCE_FACTOR * initial_total):
            raise NumericalError(f"training diverged at epoch {epoch}: "
                                 f"total cost {total} (initial {initial_total})")
    return report


def _active_terms(system, config):
    active = {}
    if config.weight("semantic") > 0:
        if len(system.triples) == 0:
            raise DataError("semantic term is weighted but the triple store is empty")
        active["semantic"] = True
    if config.weight("episodic") > 0:
        if len(system.quads) == 0:
            raise DataError("episodic term is weighted but the quad store is empty")
        active["episodic"] = True
    if config.weight("sensory") > 0:
        if len(system.sensory) == 0:
            raise DataError("sensory term is weighted but the sensory store is empty")
        active["sensory"] = True
    if config.weight("predict") > 0:
        time_ids = system.registry.ids_of(Kind.TIME)
        if time_ids.size < (system.predictor.window if system.predictor else 1) + 1:
            raise DataError("predict term is weighted but there are not enough "
                            "time entities for one prediction window")
        active["predict"] = True
    return active


def _facts_with_negatives(store, facts, ratio, rng, quad):
    positives = [f for f in facts if f.value != 0.0]
    has_bernoulli = any(f.value in (0.0, 1.0) for f in facts)
    negatives = []
    if ratio > 0 and positives and has_bernoulli:
        negatives = (lcwa_negatives_quads(store, ratio, rng) if quad
                     else lcwa_negatives(store, ratio, rng))
    return list(facts) + negatives


def _epoch_data(system, config, active, rng_neg, likelihood_of):
    data = {}
    if "semantic" in active:
        facts = _facts_with_negatives(system.triples, list(system.triples.facts()),
                                      config.negative_ratio, rng_neg, quad=False)
        ids = [np.array([getattr(f, a) for f in facts], dtype=np.intp) for a in "spo"]
        data["semantic"] = {
            "n": len(facts), "ids": ids,
            "values": np.array([f.value for f in facts]),
            "gaussian": _gaussian_mask(ids[1], likelihood_of), "facts": facts,
        }
    if "episodic" in active:
        facts = _facts_with_negatives(system.quads, list(system.quads.facts()),
                                      config.negative_ratio, rng_neg, quad=True)
        ids = [np.array([getattr(f, a) for f in facts], dtype=np.intp) for a in "spot"]
        data["episodic"] = {
            "n": len(facts), "ids": ids,
            "values": np.array([f.value for f in facts]),
            "gaussian": _gaussian_mask(ids[1], likelihood_of), "facts": facts,
        }
    if "sensory" in active:
        entries = list(system.sensory.entries())
        data["sensory"] = {
            "n": len(entries), "entries": entries,
            "q": np.array([e.q for e in entries], dtype=np.intp),
            "g": np.array([e.gamma for e in entries], dtype=np.intp),
            "t": np.array([e.t for e in entries], dtype=np.intp),
            "values": np.array([e.value for e in entries]),
        }
    if "predict" in active:
        time_ids = system.registry.ids_of(Kind.TIME)
        targets = np.arange(system.predictor.window, time_ids.size)
        data["predict"] = {"n": targets.size, "time_ids": time_ids,
                           "targets": targets}
    return data


def _term_batch_grads(system, config, term, data, idx, bag, likelihood_of):
    weight = config.weight(term)
    if term == "semantic":
        return nll_term_grads(system.semantic, [a[idx] for a in data["ids"]],
                              data["values"][idx], data["gaussian"][idx],
                              config.sigma2, weight, bag, "semantic")
    if term == "episodic":
        return nll_term_grads(system.episodic, [a[idx] for a in data["ids"]],
                              data["values"][idx], data["gaussian"][idx],
                              config.sigma2, weight, bag, "episodic")
    if term == "sensory":
        encoder = system.encoder if getattr(system, "encoder_mode", False) else None
        return sensory_term_grads(system.sensory_model, data["q"][idx],
                                  data["g"][idx], data["t"][idx],
                                  data["values"][idx], config.sigma2, weight, bag,
                                  encoder=encoder, store=system.sensory)
    buffers_of = None
    if isinstance(system.predictor, RnnPredictor):
        buffers_of = system.sensory.buffer_matrix
    return predict_term_grads(system.registry, data["time_ids"], system.predictor,
                              getattr(system, "individual_id", None),
                              data["targets"][idx], weight, bag,
                              buffers_of=buffers_of)


def _full_cost(system, config, epoch_data, mapping, likelihood_of):
    parts = {}
    if "semantic" in epoch_data:
        parts["semantic"] = cost_semantic(system.semantic,
                                          epoch_data["semantic"]["facts"],
                                          likelihood_of, config.sigma2)
    if "episodic" in epoch_data:
        parts["episodic"] = cost_episodic(system.episodic,
                                          epoch_data["episodic"]["facts"],
                                          likelihood_of, config.sigma2)
    if "sensory" in epoch_data:
        encoder = system.encoder if getattr(system, "encoder_mode", False) else None
        parts["sensory"] = cost_sensory(system.sensory_model,
                                        epoch_data["sensory"]["entries"],
                                        config.sigma2, encoder=encoder,
                                        store=system.sensory)
    if "predict" in epoch_data:
        time_ids = epoch_data["predict"]["time_ids"]
        seq = system.registry.embedding_rows(time_ids)
        ind_id = getattr(system, "individual_id", None)
        ind = system.registry.embedding(ind_id) if ind_id is not None else None
        buffers = None
        if isinstance(system.predictor, RnnPredictor):
            buffers = {k: system.sensory.buffer_matrix(int(t))
                       for k, t in enumerate(time_ids)}
        parts["predict"] = cost_predict(seq, system.predictor, ind, buffers)
    reg = regularizer(system.registry.embeddings.raw, list(mapping.values()),
                      config.lambda_a, config.lambda_w)
    total = reg + sum(config.weight(k) * v for k, v in parts.items())
    return total, parts, reg


def fit_predictor(predictor, sequence, individual=None, learning_rate=0.05,
                  epochs=200, batch_size=32, rng=None):
    """Fit a predictor on a fixed latent sequence (the sequence is data,
    only predictor parameters move).  Returns per-epoch mean costs."""
    sequence = np.asarray(sequence, dtype=float)
    w = predictor.window
    if sequence.shape[0] < w + 1:
        raise DataError("sequence shorter than window+1")
    rng = rng if rng is not None else np.random.default_rng(0)
    params = predictor.params()
    targets = np.arange(w, sequence.shape[0])
    history = []
    for _ in range(epochs):
        for idx in _batches(targets.size, batch_size, rng):
            sel = targets[idx]
            lagged = [sequence[sel - k] for k in range(1, w + 1)]
            pred = predict_arx_batch(predictor, lagged, individual)
            err = sequence[sel] - pred
            _, _, grads = arx_backward_batch(predictor, lagged, individual, pred,
                                             -err / sel.size)
            for name, grad in grads.items():
                params[name] -= learning_rate * grad
        history.append(cost_predict(sequence, predictor, individual) / targets.size)
    return history
