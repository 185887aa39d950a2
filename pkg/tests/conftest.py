import hypothesis
import numpy as np
import pytest

from tensormem.models import CoreTensor, MemoryModel, Parafac, Rescal, Tucker
from tensormem.registry import Kind, Registry

hypothesis.settings.register_profile("ci", max_examples=40, deadline=None)
hypothesis.settings.load_profile("ci")


def build_registry(dim, counts, nonneg=True, seed=0, init_std=0.5):
    """Registry with `counts` = dict kind -> how many labeled ids."""
    reg = Registry(dim, nonneg=nonneg, init_std=init_std,
                   rng=np.random.default_rng(seed))
    prefixes = {Kind.ENTITY: "e", Kind.PREDICATE: "p", Kind.TIME: "t",
                Kind.CHANNEL: "q", Kind.BUFFER_POS: ""}
    for kind, n in counts.items():
        for i in range(n):
            label = str(i) if kind is Kind.BUFFER_POS else f"{prefixes[kind]}{i}"
            reg.register(label, kind)
    return reg


def random_model(seed, dim=2, n_entities=4, n_predicates=3, n_times=3,
                 family="tucker", memory="semantic", nonneg=True,
                 init_std=0.5):
    """A small random model with strictly positive effective parameters."""
    rng = np.random.default_rng(seed)
    counts = {Kind.ENTITY: n_entities, Kind.PREDICATE: n_predicates}
    if memory == "episodic":
        counts[Kind.TIME] = n_times
    reg = build_registry(dim, counts, nonneg=nonneg, seed=seed + 1,
                         init_std=init_std)
    arity = 4 if memory == "episodic" else 3
    if family == "tucker":
        fam = Tucker(CoreTensor(rng.normal(0.0, 0.5, (dim,) * arity),
                                nonneg=nonneg))
    elif family == "parafac":
        fam = Parafac(dim, arity=arity)
    elif family == "rescal":
        fam = Rescal(rng.normal(0.0, 0.5, (dim, dim, n_predicates)),
                     nonneg=nonneg)
    else:
        raise ValueError(family)
    return MemoryModel.for_memory(memory, fam, reg)


def enumerate_scores(model):
    """Brute-force score tensor over every candidate tuple.

    Only uses the per-tuple score function, never the marginalization
    machinery, so it serves as the enumeration oracle for queries.
    """
    reg = model.registry
    grids = [model.candidate_ids(s) for s in range(model.arity)]
    shape = tuple(len(g) for g in grids)
    out = np.zeros(shape)
    fam = model.family
    for index in np.ndindex(shape):
        ids = [int(grids[s][index[s]]) for s in range(model.arity)]
        if isinstance(fam, Rescal):
            preds = reg.ids_of(Kind.PREDICATE)
            p_pos = int(np.nonzero(preds == ids[1])[0][0])
            out[index] = fam.score(reg.embedding(ids[0]), p_pos,
                                   reg.embedding(ids[2]))
        else:
            out[index] = fam.score([reg.embedding(i) for i in ids])
    return grids, out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
