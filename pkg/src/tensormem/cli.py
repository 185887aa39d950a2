"""Command-line entry point.

Subcommands: ingest, train, query, decode, predict, eval, assoc.  A flat
``key = value`` config file drives everything; command-line ``--set``
pairs and dedicated flags override file values.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter, OrderedDict
from pathlib import Path

import numpy as np

from .engine import MemorySystem, config_from_mapping, config_to_mapping
from .errors import DataError, TensorMemError, UsageError
from .io import read_flat_config, substream
from .metrics import auc_score
from .predict import ArxPredictor, RnnPredictor, predict_arx, rnn_step
from .query import (BoltzmannQuery, association_distribution,
                    conditional_distribution, sample_association)
from .registry import Kind
from .sensory import decode_scene, encode_time, form_episode
from .stores import (BERNOULLI, GAUSSIAN, nll_and_dtheta, read_quad_rows,
                     read_sensory_rows, read_triple_rows)
from .training import sgd_train


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad arguments; the contract here is exit 1.
    def error(self, message):
        self.exit(1, f"{self.prog}: error: {message}\n")


def _merged_config(args, base=None):
    values = dict(base or {})
    if getattr(args, "config", None):
        values.update(read_flat_config(args.config))
    for pair in getattr(args, "set", None) or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        key, _, value = pair.partition("=")
        values[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        values["seed"] = args.seed
    return config_from_mapping(values)


def _load_system(args):
    system = MemorySystem.load(args.snapshot)
    if getattr(args, "config", None) or getattr(args, "set", None) \
            or getattr(args, "seed", None) is not None:
        merged = _merged_config(args, base=config_to_mapping(system.config))
        if merged.dim != system.registry.dim:
            raise UsageError(f"cannot change dim from {system.registry.dim} "
                             f"to {merged.dim} on an existing snapshot")
        if merged.nonneg != system.config.nonneg:
            raise UsageError("cannot flip nonneg on an existing snapshot; its "
                             "stored parameters assume one parameterization")
        system.config = merged
    return system


def _sampler_rng(system, args):
    seed = args.seed if getattr(args, "seed", None) is not None \
        else system.config.seed
    return substream(seed, "sampler")


def cmd_ingest(args):
    config = _merged_config(args)
    system = MemorySystem.create(config)
    counts = OrderedDict()
    lk = lambda label: config.likelihoods.get(label, BERNOULLI)
    from .stores import load_quads, load_sensory, load_triples
    for flag, loader, store in (("triples", load_triples, system.triples),
                                ("quads", load_quads, system.quads)):
        path = getattr(args, flag)
        if path:
            inserted, replaced = loader(path, system.registry, store, lk)
            counts[flag] = len(store)
            if replaced:
                print(f"warning: {path}: {replaced} duplicate key(s), "
                      f"last value wins", file=sys.stderr)
    if args.sensory:
        from .stores import load_sensory as _ls
        inserted, replaced = _ls(args.sensory, system.registry, system.sensory)
        counts["sensory"] = len(system.sensory)
        if replaced:
            print(f"warning: {args.sensory}: {replaced} duplicate key(s), "
                  f"last value wins", file=sys.stderr)
    system.save(args.out)
    print(f"entities\t{len(system.registry)}")
    for name in ("triples", "quads", "sensory"):
        print(f"{name}\t{counts.get(name, 0)}")
    return 0


def cmd_train(args):
    system = _load_system(args)
    system.build_models()
    report = sgd_train(system, system.config.train)
    out = Path(args.out or args.snapshot)
    system.save(out)
    report.save(out / "report.tsv")
    if report.rows:
        last = report.rows[-1]
        print(f"epochs\t{last[0]}")
        print(f"total_cost\t{last[1]!r}")
    return 0


def _resolve_pattern(system, tokens):
    if len(tokens) == 3:
        model = system.semantic
        if model is None:
            raise DataError("snapshot has no trained semantic model")
    elif len(tokens) == 4:
        model = system.episodic
        if model is None:
            raise DataError("snapshot has no trained episodic model")
    else:
        raise UsageError("query pattern needs 3 or 4 slots")
    target = None
    bound = {}
    for slot, token in enumerate(tokens):
        if token == "?":
            if target is not None:
                raise UsageError("exactly one '?' slot is allowed")
            target = slot
        elif token == "*":
            continue
        else:
            kind = model.slot_kinds[slot]
            id = system.registry.lookup(token, kind)
            if id is None:
                raise DataError(f"unknown {kind.value} label {token!r}")
            bound[slot] = id
    if target is None:
        raise UsageError("the pattern needs one '?' slot")
    return model, target, bound


def _print_distribution(system, dist):
    order = np.lexsort((dist.support, -dist.probabilities))
    for i in order:
        label = system.registry.label(int(dist.support[i]))
        print(f"{label}\t{float(dist.probabilities[i])!r}")


def _print_counts(system, counter, total):
    rows = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    for key, count in rows:
        if isinstance(key, tuple):
            label = "\t".join(system.registry.label(k) for k in key)
        else:
            label = system.registry.label(key)
        print(f"{label}\t{count}\t{count / total!r}")


def cmd_query(args):
    system = _load_system(args)
    model, target, bound = _resolve_pattern(system, args.pattern)
    beta = args.beta if args.beta is not None else system.config.beta
    query = BoltzmannQuery(beta=beta, bound=bound, target=target,
                           n_samples=args.samples,
                           seed=args.seed if args.seed is not None
                           else system.config.seed)
    dist = conditional_distribution(model, query.target, query.bound, query.beta)
    if args.exact:
        _print_distribution(system, dist)
        return 0
    rng = substream(query.seed, "sampler")
    counter = Counter(dist.sample(rng) for _ in range(query.n_samples))
    _print_counts(system, counter, query.n_samples)
    return 0


def _read_buffers(path, system):
    """Time-label -> (channels x positions) buffers from a sensory TSV.

    Channels must already be registered; rows follow the snapshot's
    channel registration order.
    """
    registry = system.registry
    channels = registry.ids_of(Kind.CHANNEL)
    if channels.size == 0:
        raise DataError("snapshot has no registered sensory channels")
    row_of = {int(q): i for i, q in enumerate(channels)}
    n_positions = system.sensory.n_positions
    buffers = OrderedDict()
    for lineno, t_label, q_label, g_index, value in read_sensory_rows(
            path, n_positions):
        q = registry.lookup(q_label, Kind.CHANNEL)
        if q is None:
            raise DataError(f"{path}:{lineno}: unknown channel {q_label!r}")
        buf = buffers.setdefault(t_label,
                                 np.zeros((channels.size, n_positions + 1)))
        buf[row_of[q], g_index] = value
    return buffers


def cmd_decode(args):
    system = _load_system(args)
    if system.episodic is None:
        raise DataError("snapshot has no trained episodic model")
    if system.encoder is None:
        raise DataError("snapshot has no sensory encoder")
    beta = args.beta if args.beta is not None else system.config.beta
    rng = _sampler_rng(system, args)
    buffers = _read_buffers(args.sensory, system)
    lines = []
    for t_label, buffer in buffers.items():
        if args.form_episodes:
            formed = form_episode(system.encoder, buffer, system.registry,
                                  system.config.novelty_threshold,
                                  predictor=system.predictor
                                  if isinstance(system.predictor, ArxPredictor)
                                  else None,
                                  individual=system.individual_id, label=t_label)
            if formed is not None:
                print(f"episode\t{t_label}", file=sys.stderr)
        h = encode_time(system.encoder, buffer)
        triples = decode_scene(system.episodic, h, beta, args.samples, rng)
        counter = Counter(triples)
        for (s, p, o), count in sorted(counter.items(),
                                       key=lambda kv: (-kv[1], kv[0])):
            reg = system.registry
            lines.append(f"{t_label}\t{reg.label(s)}\t{reg.label(p)}\t"
                         f"{reg.label(o)}\t{count}")
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.form_episodes and args.save_to:
        system.save(args.save_to)
    return 0


def cmd_predict(args):
    system = _load_system(args)
    if system.predictor is None:
        raise DataError("snapshot has no predictor")
    registry = system.registry
    time_ids = registry.ids_of(Kind.TIME)
    ind_id = system.individual_id
    ind = registry.embedding(ind_id) if ind_id is not None else None
    history = [registry.embedding(int(t)) for t in time_ids]
    predicted = []
    if isinstance(system.predictor, ArxPredictor):
        for _ in range(args.steps):
            nxt = predict_arx(system.predictor, history, ind)
            predicted.append(nxt)
            history.append(nxt)
    else:
        if not args.sensory:
            raise UsageError("the rnn predictor needs --sensory buffers to "
                             "roll forward")
        if not history:
            raise DataError("no time entities; the recurrence has no start state")
        state = history[-1]
        for buffer in _read_buffers(args.sensory, system).values():
            state = rnn_step(system.predictor, buffer, state, ind)
            predicted.append(state)
    lines = []
    for k, vec in enumerate(predicted, start=1):
        lines.append(f"+{k}\t" + "\t".join(repr(float(v)) for v in vec))
    text = "\n".join(lines) + ("\n" if lines else "")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.decode:
        if system.episodic is None:
            raise DataError("snapshot has no trained episodic model")
        beta = args.beta if args.beta is not None else system.config.beta
        rng = _sampler_rng(system, args)
        for k, vec in enumerate(predicted, start=1):
            clamped = np.maximum(vec, 0.0)
            if np.any(clamped != vec):
                print(f"warning: step +{k}: negative components clamped "
                      f"for decoding", file=sys.stderr)
            triples = decode_scene(system.episodic, clamped, beta,
                                   args.samples, rng)
            for (s, p, o), count in sorted(Counter(triples).items(),
                                           key=lambda kv: (-kv[1], kv[0])):
                print(f"+{k}\t{registry.label(s)}\t{registry.label(p)}\t"
                      f"{registry.label(o)}\t{count}")
    return 0


def cmd_eval(args):
    system = _load_system(args)
    registry = system.registry
    rows = []
    if args.triples:
        if system.semantic is None:
            raise DataError("snapshot has no trained semantic model")
        for lineno, s, p, o, value in read_triple_rows(args.triples):
            ids = []
            for label, kind in ((s, Kind.ENTITY), (p, Kind.PREDICATE),
                                (o, Kind.ENTITY)):
                id = registry.lookup(label, kind)
                if id is None:
                    raise DataError(f"{args.triples}:{lineno}: unknown "
                                    f"{kind.value} {label!r}")
                ids.append(id)
            rows.append((system.semantic, ids, value))
    if args.quads:
        if system.episodic is None:
            raise DataError("snapshot has no trained episodic model")
        for lineno, s, p, o, value, t in read_quad_rows(args.quads):
            ids = []
            for label, kind in ((s, Kind.ENTITY), (p, Kind.PREDICATE),
                                (o, Kind.ENTITY), (t, Kind.TIME)):
                id = registry.lookup(label, kind)
                if id is None:
                    raise DataError(f"{args.quads}:{lineno}: unknown "
                                    f"{kind.value} {label!r}")
                ids.append(id)
            rows.append((system.episodic, ids, value))
    if not rows:
        raise UsageError("eval needs --triples and/or --quads")
    values = np.array([value for _, _, value in rows])
    thetas = np.array([model.theta(ids) for model, ids, _ in rows])
    gaussian = np.array([system.likelihood_of(ids[1]) == GAUSSIAN
                         for _, ids, _ in rows])
    nll = np.zeros_like(thetas)
    if np.any(~gaussian):
        nll[~gaussian] = nll_and_dtheta(values[~gaussian], thetas[~gaussian],
                                        BERNOULLI)[0]
    if np.any(gaussian):
        nll[gaussian] = nll_and_dtheta(values[gaussian], thetas[gaussian],
                                       GAUSSIAN, system.config.train.sigma2)[0]
    lines = [f"count\t{len(rows)}", f"mean_nll\t{float(nll.mean())!r}"]
    binary = ~gaussian
    if np.any(binary) and 0 < values[binary].sum() < binary.sum():
        lines.insert(0, f"auc\t{auc_score(values[binary] > 0, thetas[binary])!r}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_assoc(args):
    system = _load_system(args)
    registry = system.registry
    id = registry.lookup(args.entity, Kind.ENTITY)
    if id is None:
        raise DataError(f"unknown entity {args.entity!r}")
    beta = args.beta if args.beta is not None else system.config.beta
    if args.exact:
        dist = association_distribution(registry, id, beta)
        if args.no_self:
            keep = dist.support != id
            probs = dist.probabilities[keep] / dist.probabilities[keep].sum()
            from .query import Distribution
            dist = Distribution(dist.support[keep], probs)
        _print_distribution(system, dist)
        return 0
    rng = _sampler_rng(system, args)
    counter = Counter(sample_association(registry, id, beta, rng,
                                         exclude_self=args.no_self)
                      for _ in range(args.samples))
    _print_counts(system, counter, args.samples)
    return 0


def _add_common(sub, snapshot=True):
    if snapshot:
        sub.add_argument("--snapshot", required=True, help="snapshot directory")
    sub.add_argument("--config", help="flat key=value config file")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config value")
    sub.add_argument("--seed", type=int, default=None)


def build_parser():
    parser = _Parser(prog="tensormem",
                     description="tensor memories over shared latent "
                                 "representations")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("ingest", help="load TSV facts into a snapshot")
    _add_common(p, snapshot=False)
    p.add_argument("--triples")
    p.add_argument("--quads")
    p.add_argument("--sensory")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    p = subs.add_parser("train", help="fit all weighted cost terms")
    _add_common(p)
    p.add_argument("--out", help="output directory (default: snapshot)")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("query", help="answer '?' patterns, '*' marginalizes")
    _add_common(p)
    p.add_argument("pattern", nargs="+")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--samples", type=int, default=100)
    p.set_defaults(func=cmd_query)

    p = subs.add_parser("decode", help="decode sensory buffers into triples")
    _add_common(p)
    p.add_argument("--sensory", required=True)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out")
    p.add_argument("--form-episodes", action="store_true")
    p.add_argument("--save-to", help="write the updated snapshot here")
    p.set_defaults(func=cmd_decode)

    p = subs.add_parser("predict", help="roll the latent-time predictor forward")
    _add_common(p)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--sensory", help="future buffers (rnn predictor)")
    p.add_argument("--decode", action="store_true")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--out")
    p.set_defaults(func=cmd_predict)

    p = subs.add_parser("eval", help="held-out AUC and mean NLL")
    _add_common(p)
    p.add_argument("--triples")
    p.add_argument("--quads")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("assoc", help="sample associated entities")
    _add_common(p)
    p.add_argument("entity")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--no-self", action="store_true")
    p.set_defaults(func=cmd_assoc)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args) or 0
    except SystemExit as exc:
        return exc.code or 0
    except FileNotFoundError as exc:
        print(f"tensormem: error: missing file: {exc}", file=sys.stderr)
        return 2
    except TensorMemError as exc:
        print(f"tensormem: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
