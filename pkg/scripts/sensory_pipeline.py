#!/usr/bin/env python3
"""End-to-end sensory pipeline demo.

Two recurring scenes are experienced as sensory buffers paired with
episodic triples.  Episodes form through the novelty gate, all memories
train jointly on the shared embeddings, the buffer encoder is then
fine-tuned on the sensory term, and finally fresh buffers are decoded
into triples, with a time-marginalized semantic summary at the end.
"""

import argparse
from collections import Counter

import numpy as np

from tensormem.engine import MemorySystem, RunConfig
from tensormem.predict import ArxPredictor
from tensormem.query import conditional_distribution
from tensormem.registry import Kind
from tensormem.sensory import (decode_scene, encode_time, form_episode,
                               novelty_score, predict_arx,
                               semantic_from_episodic)
from tensormem.training import TrainConfig, sgd_train

SCENES = {
    "breakfast": {"buffer": [[1.0, 0.8, 0.2, 0.0], [0.0, 0.3, 0.9, 1.0]],
                  "triples": [("Jack", "eats", "Toast"),
                              ("Jack", "drinks", "Coffee")]},
    "work": {"buffer": [[0.1, 0.0, 0.0, 0.2], [1.0, 1.0, 0.8, 0.6]],
             "triples": [("Jack", "meets", "Mary"),
                         ("Mary", "presents", "Report")]},
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--days", type=int, default=8)
    ap.add_argument("--epochs", type=int, default=300)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--samples", type=int, default=300)
    ap.add_argument("--beta", type=float, default=2.0)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    config = RunConfig(dim=4, nonneg=True, episodic_model="tucker4",
                       sensory_model="tucker3", predictor="none",
                       n_channels=2, buffer_len=3, novelty_threshold=0.05,
                       seed=args.seed,
                       train=TrainConfig(learning_rate=0.05,
                                         epochs=args.epochs, batch_size=32,
                                         negative_ratio=3,
                                         cost_weights={"episodic": 1.0,
                                                       "sensory": 1.0},
                                         lambda_a=1e-4, seed=args.seed))
    system = MemorySystem.create(config)
    reg = system.registry
    for i in range(2):
        reg.register(f"ch{i}", Kind.CHANNEL)
    for i in range(4):
        reg.register(str(i), Kind.BUFFER_POS)
    system.build_models()

    # -- experience phase: every buffer is novel, episodes always form
    print("== experience phase ==")
    names = list(SCENES)
    for day in range(args.days):
        scene = SCENES[names[day % 2]]
        buffer = np.array(scene["buffer"]) + rng.normal(0, 0.02, size=(2, 4))
        t = form_episode(system.encoder or _fresh_encoder(system), buffer,
                         reg, config.novelty_threshold, label=f"day{day}")
        system.encoder = system.encoder or _ENC[0]
        for s_label, p_label, o_label in scene["triples"]:
            s = reg.register(s_label, Kind.ENTITY)
            p = reg.register(p_label, Kind.PREDICATE)
            o = reg.register(o_label, Kind.ENTITY)
            system.quads.insert(s, p, o, t, 1.0)
        for qi, q in enumerate(reg.ids_of(Kind.CHANNEL)):
            for gi, g in enumerate(reg.ids_of(Kind.BUFFER_POS)):
                system.sensory.insert(int(q), int(g), t,
                                      float(buffer[qi, gi]))
        print(f"  day{day}: scene={names[day % 2]} -> episode {t}")

    # -- consolidation: joint training over shared embeddings
    system.build_models()
    report = sgd_train(system, config.train)
    print(f"\n== consolidation == final cost {report.final_cost:.2f}")

    # -- perceptual fine-tuning: encoder alone on the sensory term
    enc_cfg = TrainConfig(learning_rate=0.02, epochs=args.epochs,
                          batch_size=32, cost_weights={"sensory": 1.0},
                          lambda_a=0.0, seed=args.seed + 1)
    system.config.encoder_mode = True
    frozen = {name: arr.copy() for name, arr in
              {"embeddings": reg.embeddings.raw}.items()}
    sgd_train(system, enc_cfg)
    reg.embeddings.raw[:] = frozen["embeddings"]  # keep memories fixed
    print("encoder fine-tuned on the sensory term")

    # -- decode fresh buffers
    print("\n== decoding fresh buffers ==")
    for name, scene in SCENES.items():
        buffer = np.array(scene["buffer"]) + rng.normal(0, 0.02, size=(2, 4))
        h = encode_time(system.encoder, buffer)
        draws = decode_scene(system.episodic, h, args.beta, args.samples, rng)
        counts = Counter(draws).most_common(3)
        print(f"  scene {name!r}:")
        for (s, p, o), c in counts:
            print(f"    {reg.label(s)} {reg.label(p)} {reg.label(o)}"
                  f"\t{c}/{args.samples}")

    # -- semantic memory by integrating out time
    print("\n== time-marginalized semantic memory ==")
    semantic = semantic_from_episodic(system.episodic)
    jack = reg.lookup("Jack", Kind.ENTITY)
    for p in reg.ids_of(Kind.PREDICATE):
        dist = conditional_distribution(semantic, "object",
                                        {"subject": jack,
                                         "predicate": int(p)}, args.beta)
        top = dist.argmax()
        print(f"  Jack {reg.label(int(p))} ? -> {reg.label(top)} "
              f"(p={dist.prob_of(top):.2f})")


_ENC = []


def _fresh_encoder(system):
    from tensormem.io import substream
    from tensormem.sensory import LinearEncoder
    if not _ENC:
        _ENC.append(LinearEncoder(system.config.dim, 2, 3, nonneg=True,
                                  rng=substream(system.config.seed, "init")))
    return _ENC[0]


if __name__ == "__main__":
    main()
