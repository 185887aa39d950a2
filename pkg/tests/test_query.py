from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tensormem.errors import NumericalError, UsageError
from tensormem.models import CoreTensor, MemoryModel, Tucker
from tensormem.query import (BoltzmannQuery, Distribution,
                             association_distribution, chain_distribution,
                             conditional_distribution, marginal_distribution,
                             sample_association, sample_triple, sample_via_heads,
                             train_sampler_heads)
from tensormem.registry import Kind
from tensormem.stores import TripleFact

from conftest import build_registry, enumerate_scores, random_model


def oracle_conditional(grids, tensor, target, bound_pos, beta):
    """Enumeration oracle: sum the score tensor over marginalized axes,
    clamp bound ones, then sharpen by beta and normalize."""
    view = tensor
    for ax in reversed(range(tensor.ndim)):
        if ax == target:
            continue
        if ax in bound_pos:
            view = np.take(view, bound_pos[ax], axis=ax)
        else:
            view = view.sum(axis=ax)
    mass = view ** beta
    return mass / mass.sum()


class TestExactPath:
    @pytest.mark.parametrize("family", ["tucker", "parafac", "rescal"])
    @pytest.mark.parametrize("seed", range(4))
    def test_conditional_matches_enumeration(self, family, seed):
        model = random_model(seed, family=family)
        grids, tensor = enumerate_scores(model)
        rng = np.random.default_rng(seed + 100)
        for beta in (0.5, 1.0, 2.0, 7.0):
            target = int(rng.integers(0, model.arity))
            others = [s for s in range(model.arity) if s != target]
            n_bound = int(rng.integers(0, len(others) + 1))
            bound_slots = list(rng.choice(others, size=n_bound, replace=False))
            bound, bound_pos = {}, {}
            for s in bound_slots:
                pos = int(rng.integers(0, len(grids[s])))
                bound[s] = int(grids[s][pos])
                bound_pos[s] = pos
            dist = conditional_distribution(model, target, bound, beta)
            want = oracle_conditional(grids, tensor, target, bound_pos, beta)
            assert np.max(np.abs(dist.probabilities - want)) < 1e-10

    @pytest.mark.parametrize("seed", range(3))
    def test_4way_conditional_matches_enumeration(self, seed):
        model = random_model(seed, memory="episodic", n_entities=3,
                             n_predicates=2, n_times=3)
        grids, tensor = enumerate_scores(model)
        dist = conditional_distribution(model, "object",
                                        {"subject": int(grids[0][1]),
                                         "time": int(grids[3][0])}, 1.5)
        view = tensor[1].sum(axis=0)[:, 0] ** 1.5
        assert np.max(np.abs(dist.probabilities - view / view.sum())) < 1e-10

    @pytest.mark.parametrize("family", ["tucker", "parafac", "rescal"])
    def test_marginal_matches_enumeration(self, family):
        model = random_model(11, family=family, n_entities=5)
        grids, tensor = enumerate_scores(model)
        for slot, axes in ((0, (1, 2)), (1, (0, 2)), (2, (0, 1))):
            for beta in (1.0, 3.0):
                dist = marginal_distribution(model, slot, beta)
                want = tensor.sum(axis=axes) ** beta
                want /= want.sum()
                assert np.max(np.abs(dist.probabilities - want)) < 1e-10

    def test_beta_zero_uniform(self):
        model = random_model(5)
        dist = marginal_distribution(model, "object", 0.0)
        assert np.allclose(dist.probabilities, 1.0 / dist.support.size)

    def test_uniform_model_gives_uniform_marginal(self):
        reg = build_registry(2, {Kind.ENTITY: 4, Kind.PREDICATE: 2},
                             nonneg=False)
        reg.embeddings.raw[:] = 0.5
        fam = Tucker(CoreTensor(np.full((2, 2, 2), 0.3)))
        model = MemoryModel.for_memory("semantic", fam, reg)
        dist = marginal_distribution(model, "subject", 1.0)
        assert np.allclose(dist.probabilities, 0.25)

    def test_large_beta_concentrates_on_mode(self):
        model = random_model(21, n_entities=5, n_predicates=2)
        grids, tensor = enumerate_scores(model)
        cond = tensor[2, 1]  # P(o | s, p)
        dist = conditional_distribution(model, "object",
                                        {"subject": int(grids[0][2]),
                                         "predicate": int(grids[1][1])}, 50.0)
        assert dist.argmax() == int(grids[2][np.argmax(cond)])
        assert dist.prob_of(dist.argmax()) > 0.999

    def test_beta_monotone_mode_and_invariant_argmax(self):
        for seed in range(5):
            model = random_model(seed + 40, n_entities=4)
            last = 0.0
            modes = set()
            for beta in (1.0, 2.0, 5.0, 20.0):
                dist = marginal_distribution(model, "subject", beta)
                mode = dist.argmax()
                modes.add(mode)
                assert dist.prob_of(mode) >= last - 1e-12
                last = dist.prob_of(mode)
            assert len(modes) == 1

    def test_negative_mass_rejected(self):
        reg = build_registry(2, {Kind.ENTITY: 3, Kind.PREDICATE: 2},
                             nonneg=False, seed=3)
        fam = Tucker(CoreTensor(np.random.default_rng(0).normal(size=(2, 2, 2))))
        model = MemoryModel.for_memory("semantic", fam, reg)
        with pytest.raises(NumericalError):
            for slot in range(3):
                conditional_distribution(model, slot, {}, 1.0)

    def test_bound_target_rejected(self):
        model = random_model(1)
        with pytest.raises(UsageError):
            conditional_distribution(model, "object", {"object": 0}, 1.0)


class TestSampling:
    def test_fixed_seed_reproducible(self):
        model = random_model(9)
        a = [sample_triple(model, 1.0, np.random.default_rng(7)) for _ in range(20)]
        b = [sample_triple(model, 1.0, np.random.default_rng(7)) for _ in range(20)]
        assert a == b

    def test_concentrated_model_samples_its_triple(self):
        # one core entry dominates, so one triple carries ~all mass
        reg = build_registry(3, {Kind.ENTITY: 3, Kind.PREDICATE: 2},
                             nonneg=False, seed=0)
        eps = 0.01
        reg.embeddings.raw[:] = eps
        for id, component in ((0, 0), (1, 1), (2, 2), (3, 0), (4, 1)):
            reg.embeddings.raw[id, component] = 1.0
        core = np.full((3, 3, 3), eps)
        core[0, 0, 1] = 100.0
        model = MemoryModel.for_memory("semantic", Tucker(CoreTensor(core)), reg)
        rng = np.random.default_rng(3)
        draws = {sample_triple(model, 10.0, rng) for _ in range(50)}
        assert draws == {(0, 3, 1)}

    def test_chain_matches_joint_at_beta_one(self):
        model = random_model(13, n_entities=4, n_predicates=4)
        grids, tensor = enumerate_scores(model)
        joint = tensor / tensor.sum()
        chain = chain_distribution(model, 1.0)
        pos = {int(e): i for i, e in enumerate(grids[0])}
        ppos = {int(p): i for i, p in enumerate(grids[1])}
        err = 0.0
        for (s, p, o), prob in chain.items():
            err = max(err, abs(prob - joint[pos[s], ppos[p], pos[o]]))
        assert err < 1e-10

    def test_empirical_tv_small(self):
        model = random_model(13, n_entities=4, n_predicates=4)
        grids, tensor = enumerate_scores(model)
        joint = tensor / tensor.sum()
        rng = np.random.default_rng(0)
        n = 20000
        counts = Counter(sample_triple(model, 1.0, rng) for _ in range(n))
        pos = {int(e): i for i, e in enumerate(grids[0])}
        ppos = {int(p): i for i, p in enumerate(grids[1])}
        emp = np.zeros_like(joint)
        for (s, p, o), c in counts.items():
            emp[pos[s], ppos[p], pos[o]] = c / n
        tv = 0.5 * np.abs(emp - joint).sum()
        assert tv < 0.03

    def test_lag1_autocorrelation_near_zero(self):
        model = random_model(17, n_entities=4, n_predicates=3)
        rng = np.random.default_rng(5)
        n = 30000
        subjects = np.array([sample_triple(model, 1.0, rng)[0]
                             for _ in range(n)], dtype=float)
        s = subjects - subjects.mean()
        denom = float(s @ s)
        rho = float(s[:-1] @ s[1:]) / denom
        assert abs(rho) < 4.0 / np.sqrt(n)


class TestAssociation:
    def test_beta_zero_uniform(self):
        model = random_model(3, n_entities=6)
        dist = association_distribution(model.registry, 0, 0.0)
        assert np.allclose(dist.probabilities, 1.0 / 6.0)

    def test_matches_explicit_softmax(self):
        model = random_model(4, n_entities=5)
        reg = model.registry
        beta = 2.5
        dist = association_distribution(reg, 2, beta)
        ents = reg.ids_of(Kind.ENTITY)
        logits = np.array([beta * reg.embedding(2) @ reg.embedding(int(e))
                           for e in ents])
        want = np.exp(logits) / np.exp(logits).sum()
        assert np.max(np.abs(dist.probabilities - want)) < 1e-10

    def test_twins_dominate_at_large_beta(self):
        reg = build_registry(3, {Kind.ENTITY: 3}, nonneg=False, seed=0)
        reg.embeddings.raw[0] = [3.0, 0.0, 0.0]
        reg.embeddings.raw[1] = [3.0, 0.0, 0.0]
        reg.embeddings.raw[2] = [0.0, 3.0, 0.0]
        dist = association_distribution(reg, 0, 10.0)
        assert dist.prob_of(0) + dist.prob_of(1) > 0.999
        rng = np.random.default_rng(0)
        draws = {sample_association(reg, 0, 10.0, rng) for _ in range(30)}
        assert draws <= {0, 1}

    def test_exclude_self(self):
        reg = build_registry(3, {Kind.ENTITY: 3}, seed=1)
        rng = np.random.default_rng(0)
        draws = {sample_association(reg, 0, 1.0, rng, exclude_self=True)
                 for _ in range(50)}
        assert 0 not in draws


class TestSamplerHeads:
    def test_untrained_heads_rejected(self):
        model = random_model(2)
        from tensormem.query import SamplerHeads
        heads = SamplerHeads(model)
        with pytest.raises(UsageError):
            sample_via_heads(heads, 1.0, np.random.default_rng(0))

    def test_stage_softmax_sums_to_one(self):
        model = random_model(2)
        facts = [TripleFact(0, 4, 1, 1.0)]
        heads = train_sampler_heads(model, facts, epochs=5,
                                    rng=np.random.default_rng(0))
        for dist in (heads.stage_distribution(1.0),
                     heads.stage_distribution(1.0, s=0),
                     heads.stage_distribution(1.0, s=0, p=4)):
            assert abs(dist.probabilities.sum() - 1.0) < 1e-9

    def test_beta_zero_uniform_stages(self):
        model = random_model(2)
        heads = train_sampler_heads(model, [TripleFact(0, 4, 1, 1.0)], epochs=5,
                                    rng=np.random.default_rng(0))
        dist = heads.stage_distribution(0.0)
        assert np.allclose(dist.probabilities, 1.0 / dist.support.size)

    def test_overfits_single_triple(self):
        model = random_model(6, n_entities=5, n_predicates=3)
        facts = [TripleFact(1, 6, 3, 1.0)]
        heads = train_sampler_heads(model, facts, epochs=1000, lr=1.0,
                                    rng=np.random.default_rng(1))
        rng = np.random.default_rng(2)
        hits = sum(sample_via_heads(heads, 5.0, rng) == (1, 6, 3)
                   for _ in range(400))
        assert hits / 400 > 0.95


class TestDistributionType:
    def test_validation(self):
        with pytest.raises(NumericalError):
            Distribution(np.array([0, 1]), np.array([0.7, 0.7]))
        with pytest.raises(NumericalError):
            Distribution(np.array([0, 1]), np.array([1.5, -0.5]))

    def test_argmax_tie_breaks_low_id(self):
        dist = Distribution(np.array([3, 5, 9]), np.array([0.4, 0.2, 0.4]))
        assert dist.argmax() == 3

    def test_query_descriptor_validation(self):
        with pytest.raises(UsageError):
            BoltzmannQuery(beta=-1.0)
        with pytest.raises(UsageError):
            BoltzmannQuery(n_samples=0)
