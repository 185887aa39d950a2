from collections import Counter

import numpy as np
import pytest

from tensormem.errors import DataError, UsageError
from tensormem.models import CoreTensor, MemoryModel, Parafac, Tucker
from tensormem.predict import ArxPredictor
from tensormem.query import conditional_distribution
from tensormem.registry import Kind
from tensormem.sensory import (LinearEncoder, decode_distribution, decode_scene,
                               encode_time, form_episode, novelty_score,
                               reconstruct_buffer, reduce_time_slot,
                               semantic_from_episodic)

from conftest import build_registry, enumerate_scores, random_model


def identity_encoder(n_channels, n_positions):
    enc = LinearEncoder(n_channels * (n_positions + 1), n_channels, n_positions,
                        rng=np.random.default_rng(0))
    enc.weight[:] = np.eye(enc.input_size)
    enc.bias[:] = 0.0
    return enc


class TestEncoder:
    def test_zero_weights_zero_bias(self):
        enc = LinearEncoder(3, 2, 1, rng=np.random.default_rng(0))
        enc.weight[:] = 0.0
        assert np.array_equal(encode_time(enc, np.ones((2, 2))), np.zeros(3))

    def test_identity_map_returns_vectorized_buffer(self, rng):
        enc = identity_encoder(2, 2)
        buf = rng.normal(size=(2, 3))
        assert np.allclose(encode_time(enc, buf), buf.reshape(-1))

    def test_random_map_matches_matvec_oracle(self, rng):
        enc = LinearEncoder(4, 3, 2, rng=np.random.default_rng(5))
        buf = rng.normal(size=(3, 3))
        want = enc.weight @ buf.reshape(-1) + enc.bias
        assert np.allclose(encode_time(enc, buf), want)

    def test_nonneg_applies_exp(self, rng):
        enc = LinearEncoder(4, 3, 2, nonneg=True, rng=np.random.default_rng(5))
        buf = rng.normal(size=(3, 3))
        h = encode_time(enc, buf)
        assert np.all(h > 0)
        assert np.allclose(np.log(h), enc.weight @ buf.reshape(-1) + enc.bias)

    def test_shape_mismatch(self):
        enc = LinearEncoder(4, 3, 2)
        with pytest.raises(Exception):
            encode_time(enc, np.zeros((2, 3)))

    def test_pinv_reconstruction_roundtrip(self, rng):
        # full-rank square encoder: reconstruction is exact
        enc = identity_encoder(2, 1)
        enc.weight[:] = rng.normal(size=enc.weight.shape) + 2 * np.eye(4)
        buf = rng.normal(size=(2, 2))
        back = reconstruct_buffer(enc, encode_time(enc, buf))
        assert np.allclose(back, buf, atol=1e-8)


class TestNovelty:
    def test_zero_iff_equal(self, rng):
        h = rng.normal(size=5)
        assert novelty_score(h, h) == 0.0
        assert novelty_score(h, h + 0.1) > 0.0

    def test_permutation_invariant(self, rng):
        a, b = rng.normal(size=(2, 6))
        perm = rng.permutation(6)
        assert novelty_score(a, b) == pytest.approx(
            novelty_score(a[perm], b[perm]), abs=1e-15)


class TestFormEpisode:
    def _registry(self):
        return build_registry(4, {}, nonneg=False, seed=0)

    def test_threshold_zero_always_forms(self):
        reg = self._registry()
        enc = identity_encoder(2, 1)
        for k in range(3):
            got = form_episode(enc, np.full((2, 2), float(k)), reg, 0.0)
            assert got is not None
        assert reg.ids_of(Kind.TIME).size == 3

    def test_no_predictor_means_always_novel(self):
        reg = self._registry()
        enc = identity_encoder(2, 1)
        assert form_episode(enc, np.ones((2, 2)), reg, 1e9) is not None

    def test_perfect_predictor_suppresses(self):
        reg = self._registry()
        enc = identity_encoder(2, 1)
        pred = ArxPredictor(4, window=1, rng=np.random.default_rng(0))
        pred.lags[0][:] = np.eye(4)
        pred.individual_weight[:] = 0.0
        pred.bias[:] = 0.0
        buf = np.full((2, 2), 3.0)
        first = form_episode(enc, buf, reg, 0.5, predictor=pred)
        assert first is not None
        # prediction now reproduces the stored latent exactly
        again = form_episode(enc, buf, reg, 0.5, predictor=pred)
        assert again is None

    def test_significance_flag_overrides_gate(self):
        reg = self._registry()
        enc = identity_encoder(2, 1)
        pred = ArxPredictor(4, window=1, rng=np.random.default_rng(0))
        pred.lags[0][:] = np.eye(4)
        pred.individual_weight[:] = 0.0
        pred.bias[:] = 0.0
        buf = np.full((2, 2), 1.5)
        assert form_episode(enc, buf, reg, 0.5, predictor=pred) is not None
        assert form_episode(enc, buf, reg, 0.5, predictor=pred,
                            significant=True) is not None

    def test_level_shifts_form_exactly_three_episodes(self):
        # hand pipeline first: copy-forward prediction, mean squared
        # novelty, gate at the calibrated threshold
        levels = [0, 0, 0, 5, 5, 5, 9, 9, 13, 13]
        noise = np.random.default_rng(8).normal(0, 0.01, size=(10, 4))
        buffers = [np.full((2, 2), float(v)) + noise[i].reshape(2, 2)
                   for i, v in enumerate(levels)]
        hand_pred = np.zeros(4)
        novelties = []
        for buf in buffers:
            h = buf.reshape(-1)
            novelties.append(float(np.mean((hand_pred - h) ** 2)))
            if novelties[-1] >= 12.0:
                hand_pred = h
        expected = sum(n >= 12.0 for n in novelties)
        assert expected == 3

        reg = self._registry()
        reg.set_embedding(reg.register("t_init", Kind.TIME), np.zeros(4))
        enc = identity_encoder(2, 1)
        pred = ArxPredictor(4, window=1, rng=np.random.default_rng(0))
        pred.lags[0][:] = np.eye(4)
        pred.individual_weight[:] = 0.0
        pred.bias[:] = 0.0
        formed = [form_episode(enc, buf, reg, 12.0, predictor=pred)
                  for buf in buffers]
        assert sum(f is not None for f in formed) == 3
        assert [f is not None for f in formed] == [n >= 12.0 for n in novelties]


class TestDecodeScene:
    def test_beta_zero_uniform(self):
        model = random_model(3, memory="episodic", n_entities=3, n_predicates=2)
        h = np.abs(np.random.default_rng(0).normal(size=2)) + 0.1
        rng = np.random.default_rng(1)
        triples = decode_scene(model, h, 0.0, 4000, rng)
        counts = Counter(triples)
        assert len(counts) == 3 * 2 * 3
        freqs = np.array(list(counts.values())) / 4000
        assert np.all(np.abs(freqs - 1 / 18) < 0.03)

    def test_negative_latent_rejected(self):
        model = random_model(3, memory="episodic")
        with pytest.raises(DataError):
            decode_scene(model, np.array([0.5, -0.1]), 1.0, 10,
                         np.random.default_rng(0))

    def test_empirical_matches_enumeration(self):
        model = random_model(7, memory="episodic", n_entities=3,
                             n_predicates=3, n_times=2)
        reg = model.registry
        grids, tensor = enumerate_scores(model)
        h = reg.embedding(int(grids[3][1]))
        joint = tensor[:, :, :, 1] / tensor[:, :, :, 1].sum()
        rng = np.random.default_rng(0)
        n = 20000
        counts = Counter(decode_scene(model, h, 1.0, n, rng))
        pos_e = {int(e): i for i, e in enumerate(grids[0])}
        pos_p = {int(p): i for i, p in enumerate(grids[1])}
        emp = np.zeros_like(joint)
        for (s, p, o), c in counts.items():
            emp[pos_e[s], pos_p[p], pos_e[o]] = c / n
        assert 0.5 * np.abs(emp - joint).sum() < 0.03

    def test_decoding_is_pure_function_of_latent(self):
        model = random_model(5, memory="episodic", n_entities=3, n_predicates=2)
        h = np.array([0.7, 1.3])
        a = decode_distribution(model, h, "subject", {}, 2.0)
        b = decode_distribution(model, h, "subject", {}, 2.0)
        assert np.array_equal(a.probabilities, b.probabilities)


class TestSemanticFromEpisodic:
    def test_matches_brute_force_time_sum(self):
        model = random_model(9, memory="episodic", n_entities=4,
                             n_predicates=2, n_times=3)
        grids, tensor = enumerate_scores(model)
        reduced = semantic_from_episodic(model)
        summed = tensor.sum(axis=3)
        for beta in (1.0, 2.5):
            dist = conditional_distribution(reduced, "object",
                                            {"subject": int(grids[0][0]),
                                             "predicate": int(grids[1][1])}, beta)
            want = summed[0, 1] ** beta
            want /= want.sum()
            assert np.max(np.abs(dist.probabilities - want)) < 1e-10

    def test_single_time_equals_decode(self):
        model = random_model(10, memory="episodic", n_entities=3,
                             n_predicates=2, n_times=1)
        reg = model.registry
        t = int(reg.ids_of(Kind.TIME)[0])
        reduced = semantic_from_episodic(model)
        for slot in ("subject", "predicate", "object"):
            a = conditional_distribution(reduced, slot, {}, 1.0)
            b = decode_distribution(model, reg.embedding(t), slot, {}, 1.0)
            assert np.max(np.abs(a.probabilities - b.probabilities)) < 1e-12

    def test_time_span_subset_matches_partial_sum(self):
        model = random_model(12, memory="episodic", n_entities=3,
                             n_predicates=2, n_times=4)
        grids, tensor = enumerate_scores(model)
        subset = [int(grids[3][0]), int(grids[3][2])]
        reduced = semantic_from_episodic(model, time_ids=subset)
        partial = tensor[:, :, :, [0, 2]].sum(axis=3)
        dist = conditional_distribution(reduced, "subject", {}, 1.0)
        want = partial.sum(axis=(1, 2))
        want = want / want.sum()
        assert np.max(np.abs(dist.probabilities - want)) < 1e-10

    def test_no_times_is_error(self):
        model = random_model(1, memory="episodic", n_times=3)
        with pytest.raises(DataError):
            semantic_from_episodic(model, time_ids=np.array([], dtype=np.intp))


class TestReduceTimeSlot:
    def test_parafac4_reduces_to_diagonal_core(self, rng):
        model = random_model(2, memory="episodic", family="parafac",
                             n_entities=3, n_predicates=2)
        reg = model.registry
        h = np.abs(rng.normal(size=2)) + 0.1
        reduced = reduce_time_slot(model, h)
        s, p, o = (reg.embedding(0), reg.embedding(int(reg.ids_of(Kind.PREDICATE)[0])),
                   reg.embedding(1))
        want = float(np.sum(s * p * o * h))
        assert reduced.family.score([s, p, o]) == pytest.approx(want, abs=1e-12)

    def test_requires_four_slots(self):
        model = random_model(2)
        with pytest.raises(UsageError):
            reduce_time_slot(model, np.ones(2))


class TestEncoderTraining:
    def test_plain_mode_reports_no_encoder_gradients(self):
        from tensormem.training import GradBag, sensory_term_grads
        from tensormem.stores import SensoryStore
        reg = build_registry(2, {Kind.CHANNEL: 2, Kind.BUFFER_POS: 2,
                                 Kind.TIME: 2}, seed=3)
        store = SensoryStore(reg, 1)
        q = reg.ids_of(Kind.CHANNEL)
        g = reg.ids_of(Kind.BUFFER_POS)
        t = reg.ids_of(Kind.TIME)
        store.insert(int(q[0]), int(g[0]), int(t[0]), 0.4)
        fam = Tucker(CoreTensor(np.random.default_rng(0).normal(size=(2, 2, 2)),
                                nonneg=True))
        model = MemoryModel.for_memory("sensory", fam, reg)
        bag = GradBag()
        sensory_term_grads(model, np.array([q[0]]), np.array([g[0]]),
                           np.array([t[0]]), np.array([0.4]), 1.0, 1.0, bag,
                           encoder=None, store=store)
        assert not any(name.startswith("encoder/") for name in bag)

    def test_single_entry_matching_theta_costs_zero(self):
        from tensormem.stores import SensoryEntry
        from tensormem.training import cost_sensory
        reg = build_registry(1, {Kind.CHANNEL: 1, Kind.BUFFER_POS: 1,
                                 Kind.TIME: 1}, nonneg=False, seed=0)
        q = int(reg.ids_of(Kind.CHANNEL)[0])
        g = int(reg.ids_of(Kind.BUFFER_POS)[0])
        t = int(reg.ids_of(Kind.TIME)[0])
        reg.set_embedding(q, np.array([2.0]))
        reg.set_embedding(g, np.array([0.5]))
        reg.set_embedding(t, np.array([0.7]))
        from tensormem.models import Parafac
        model = MemoryModel.for_memory("sensory", Parafac(1), reg)
        assert cost_sensory(model, [SensoryEntry(q, g, t, 0.7)]) == 0.0

    def test_encoder_training_halves_cost_on_linear_generative_data(self):
        # data built from a known multilinear map of a latent per time step
        from tensormem.engine import MemorySystem, RunConfig
        from tensormem.training import TrainConfig, cost_sensory, sgd_train
        rng = np.random.default_rng(5)
        n_q, n_pos, n_t, r = 3, 3, 12, 2
        aq = rng.normal(0.8, 0.3, size=(n_q, r))
        ag = rng.normal(0.8, 0.3, size=(n_pos, r))
        z = rng.normal(size=(n_t, r))
        values = np.einsum("qr,gr,tr->qgt", aq, ag, z)
        values += rng.normal(0, 0.01, size=values.shape)

        config = RunConfig(dim=r, nonneg=False, sensory_model="parafac",
                           predictor="none", encoder_mode=True,
                           n_channels=n_q, buffer_len=n_pos - 1, seed=2,
                           train=TrainConfig(learning_rate=0.02, epochs=100,
                                             batch_size=16,
                                             cost_weights={"sensory": 1.0},
                                             seed=2))
        system = MemorySystem.create(config)
        reg = system.registry
        qs = [reg.register(f"q{i}", Kind.CHANNEL) for i in range(n_q)]
        gs = [reg.register(str(i), Kind.BUFFER_POS) for i in range(n_pos)]
        ts = [reg.register(f"t{i}", Kind.TIME) for i in range(n_t)]
        for ti, t in enumerate(ts):
            for qi, q in enumerate(qs):
                for gi, g in enumerate(gs):
                    system.sensory.insert(q, g, t, float(values[qi, gi, ti]))
        system.build_models()
        entries = list(system.sensory.entries())
        before = cost_sensory(system.sensory_model, entries,
                              encoder=system.encoder, store=system.sensory)
        sgd_train(system, config.train)
        after = cost_sensory(system.sensory_model, entries,
                             encoder=system.encoder, store=system.sensory)
        assert after <= 0.5 * before
