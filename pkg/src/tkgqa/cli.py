"""Command-line entry point.

Subcommands: kg gen, kg corrupt, embed train, embed eval, qgen, qgen unseen,
qa train, qa eval, exp corruption, exp unseen, exp trainsize,
exp ablate-time, exp ablate-fusion.

A flat key=value config file (``--config``) supplies defaults; explicit
flags override it. All randomness flows from ``--seed``: each stage uses a
fixed offset from the root seed so stages stay independent but reproducible.
Exit codes: 0 ok, 1 runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import experiments as ex
from .embeddings import EmbeddingStore, TrainConfig, evaluate_link_prediction, train_embeddings
from .kg import load_tkg, save_tkg
from .model import (QAConfig, QAModel, VariantConfig, load_checkpoint,
                    save_checkpoint, train_qa)
from .questions import (ALL_TYPES, generate_dataset, generate_unseen_combos,
                        load_questions, question_vocab, save_questions,
                        split_dataset)
from .synth import SynthConfig, generate_kg, toy_kg

# per-stage offsets from the root seed
SEED_KG, SEED_QGEN, SEED_EMBED, SEED_QA, SEED_SPLIT = 0, 1, 2, 3, 4


def _read_config(path):
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def _opt(args, key, default, cast=str):
    """Flag value if given, else config-file value, else default."""
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    cfg = getattr(args, "_config", {})
    if key in cfg:
        return cast(cfg[key])
    return default


def _load_store_and_kg(args):
    kg = load_tkg(args.kg)
    store = EmbeddingStore.load(args.store)
    store.freeze()
    if store.num_entities != kg.num_entities or store.num_timestamps != kg.num_timestamps:
        raise ValueError("embedding store does not match the KG id space")
    return kg, store


def _parse_mix(text):
    mix = {}
    for part in text.split(","):
        name, _, count = part.partition("=")
        if name not in ALL_TYPES:
            raise ValueError(f"unknown question type {name!r} in --mix")
        mix[name] = int(count)
    return mix


def _qa_config(args, seed):
    return QAConfig(
        dim_text=int(_opt(args, "dim-text", 64)),
        text_layers=int(_opt(args, "text-layers", 2)),
        text_heads=int(_opt(args, "text-heads", 4)),
        fusion_layers=int(_opt(args, "fusion-layers", 3)),
        fusion_heads=int(_opt(args, "fusion-heads", 4)),
        lr=float(_opt(args, "qa-lr", 2e-4)),
        batch_size=int(_opt(args, "qa-batch", 256)),
        epochs=int(_opt(args, "qa-epochs", 20)),
        avg_start=int(_opt(args, "qa-avg-start", -1)),
        avg_beta=float(_opt(args, "qa-avg-beta", 0.8)),
        seed=seed,
    )


def _embed_config(args, seed):
    return TrainConfig(
        dim=int(_opt(args, "dim", 64)),
        epochs=int(_opt(args, "embed-epochs", 40)),
        lr=float(_opt(args, "embed-lr", 0.1)),
        batch_size=int(_opt(args, "embed-batch", 512)),
        n3_weight=float(_opt(args, "n3", 1e-2)),
        smoothness_weight=float(_opt(args, "smooth", 1e-2)),
        smoothness_decay=float(_opt(args, "smooth-decay", 1.0)),
        interval_cap=int(_opt(args, "cap", 40)),
        seed=seed,
    )


def _harness_config(args, seed):
    seeds = tuple(int(s) for s in _opt(args, "seeds", str(seed)).split(","))
    return ex.HarnessConfig(embed=_embed_config(args, seed),
                            qa=_qa_config(args, seed), seeds=seeds)


# -- subcommand bodies ------------------------------------------------------------


def cmd_kg_gen(args):
    seed = args.seed + SEED_KG
    if args.preset == "toy":
        kg = toy_kg(seed=seed)
    else:
        cfg = SynthConfig(seed=seed)
        if args.scale == "small":
            cfg = SynthConfig(num_people=30, num_awards=4, num_positions=3,
                              num_teams=3, award_years=10, holders_per_position=5,
                              members_per_team=6, seed=seed)
        kg = generate_kg(cfg)
    save_tkg(kg, args.out)
    print(f"wrote {len(kg.facts)} facts, {kg.num_entities} entities, "
          f"{len(kg.years)} years -> {args.out}")
    return 0


def cmd_kg_corrupt(args):
    kg = load_tkg(getattr(args, "in"))
    out = kg.corrupt_timestamps(args.p, seed=args.seed)
    save_tkg(out, args.out)
    dropped = sum(1 for a, b in zip(kg.facts, out.facts) if a.timed and not b.timed)
    print(f"corrupted {dropped}/{len(kg.facts)} facts -> {args.out}")
    return 0


def cmd_embed_train(args):
    kg = load_tkg(args.kg)
    cfg = _embed_config(args, args.seed + SEED_EMBED)
    store = train_embeddings(kg, cfg)
    names = {"entities": kg.entity_names, "relations": kg.relation_names,
             "years": kg.years}
    store.save(args.out, names=names)
    print(f"trained D={cfg.dim} store on {len(kg.facts)} facts -> {args.out}")
    return 0


def cmd_embed_eval(args):
    kg, store = _load_store_and_kg(args)
    quads = [(f.subject, f.relation, f.object, kg.year_id(f.start))
             for f in kg.facts if f.timed]
    rng = np.random.default_rng(args.seed + SEED_SPLIT)
    order = rng.permutation(len(quads))
    n_test = max(1, int(len(quads) * args.holdout))
    test = [quads[i] for i in order[:n_test]]
    known = set(quads)
    metrics = evaluate_link_prediction(store, test, known)
    print(json.dumps(metrics, sort_keys=True))
    return 0


def cmd_qgen(args):
    kg = load_tkg(args.kg)
    seed = args.seed + SEED_QGEN
    if args.mode == "unseen":
        qs = generate_unseen_combos(kg, seed=seed, max_per_type=args.max_per_type)
        save_questions(qs, args.out)
        print(f"wrote {len(qs)} unseen-combo questions -> {args.out}")
        return 0
    mix = _parse_mix(_opt(args, "mix", "simple_entity=50,simple_time=50,"
                          "before_after=50,first_last=50,time_join=50"))
    qs = generate_dataset(kg, mix, seed=seed)
    if args.split:
        fracs = tuple(float(f) for f in args.split.split(","))
        stem = args.out[:-6] if args.out.endswith(".jsonl") else args.out
        parts = split_dataset(qs, fracs, seed=args.seed + SEED_SPLIT)
        for name, part in zip(("train", "dev", "test"), parts):
            save_questions(part, f"{stem}.{name}.jsonl")
            print(f"wrote {len(part)} questions -> {stem}.{name}.jsonl")
    else:
        save_questions(qs, args.out)
        print(f"wrote {len(qs)} questions -> {args.out}")
    return 0


def cmd_qa_train(args):
    kg, store = _load_store_and_kg(args)
    variant = VariantConfig.parse(args.variant)
    train_qs = load_questions(args.train)
    dev_qs = load_questions(args.dev) if args.dev else []
    cfg = _qa_config(args, args.seed + SEED_QA)
    model = QAModel(variant, store, kg, question_vocab(kg), cfg)
    _, history = train_qa(model, train_qs, dev_qs)
    save_checkpoint(model, args.out)
    last = history[-1] if history else {"loss": float("nan"), "dev_hits1": 0.0}
    print(f"trained {variant.name}: final loss {last['loss']:.4f}, "
          f"best dev hits@1 {max((h['dev_hits1'] for h in history), default=0.0):.3f} "
          f"-> {args.out}")
    return 0


def cmd_qa_eval(args):
    kg, store = _load_store_and_kg(args)
    variant = VariantConfig.parse(args.variant)
    cfg = _qa_config(args, args.seed + SEED_QA)
    model = QAModel(variant, store, kg, question_vocab(kg), cfg)
    if args.ckpt:
        load_checkpoint(model, args.ckpt)
    qs = load_questions(args.questions)
    report = ex.evaluate(model, qs, seed=args.seed)
    ex.save_reports([report], args.report)
    print(ex.render_table([report], columns=["overall/hits@1", "overall/hits@10"]))
    return 0


def _exp_inputs(args):
    kg = load_tkg(args.kg)
    qs = load_questions(args.questions)
    splits = split_dataset(qs, seed=args.seed + SEED_SPLIT)
    variants = [VariantConfig.parse(v) for v in args.variants.split(",")]
    return kg, qs, splits, variants


def cmd_exp_corruption(args):
    kg, _, splits, variants = _exp_inputs(args)
    cfg = _harness_config(args, args.seed)
    p_list = [float(p) for p in args.p.split(",")]
    reports = ex.run_corruption_experiment(kg, splits, variants,
                                           question_vocab(kg), p_list,
                                           regime=args.regime, config=cfg)
    ex.save_reports(reports, args.report)
    print(ex.render_table(reports, columns=["p", "group:complex/hits@1",
                                            "overall/hits@1"]))
    if args.plot:
        series = {}
        for r in reports:
            name = r.variant.split("@")[0]
            series.setdefault(name, ([], []))
            series[name][0].append(r.cells["p"])
            series[name][1].append(r.cells.get("group:complex/hits@1",
                                               r.cells["overall/hits@1"]))
        ex.plot_series(series, args.plot, "corruption p", "complex Hits@1")
    return 0


def cmd_exp_unseen(args):
    kg, _, splits, variants = _exp_inputs(args)
    cfg = _harness_config(args, args.seed)
    combos = load_questions(args.combos)
    _, models = ex.run_main_experiment(kg, splits, variants, question_vocab(kg), cfg)
    reports = ex.run_unseen_experiment(models, combos, splits[0])
    ex.save_reports(reports, args.report)
    print(ex.render_table(reports, columns=[f"overall/hits@{k}" for k in (1, 2, 5, 10)]))
    return 0


def cmd_exp_trainsize(args):
    kg, _, splits, _ = _exp_inputs(args)
    cfg = _harness_config(args, args.seed)
    variant = VariantConfig.parse(args.variant)
    fractions = [float(f) for f in args.fractions.split(",")]
    reports = ex.run_training_size_experiment(kg, splits, variant,
                                              question_vocab(kg), fractions,
                                              config=cfg)
    ex.save_reports(reports, args.report)
    print(ex.render_table(reports, columns=["fraction", "group:complex/hits@1"]))
    if args.plot:
        series = {variant.name: ([r.cells["fraction"] for r in reports],
                                 [r.cells["group:complex/hits@1"] for r in reports])}
        ex.plot_series(series, args.plot, "training fraction", "complex Hits@1")
    return 0


def cmd_exp_ablate_time(args):
    kg, _, splits, _ = _exp_inputs(args)
    cfg = _harness_config(args, args.seed)
    variants = [VariantConfig("tempoqr", "hard"),
                VariantConfig("tempoqr", "hard", time_ablation=args.kind)]
    reports, _ = ex.run_main_experiment(kg, splits, variants, question_vocab(kg), cfg)
    ex.save_reports(reports, args.report)
    print(ex.render_table(reports, columns=["group:complex/hits@1", "overall/hits@1"]))
    return 0


def cmd_exp_ablate_fusion(args):
    kg, _, splits, _ = _exp_inputs(args)
    cfg = _harness_config(args, args.seed)
    variants = [VariantConfig("tempoqr", "hard", fusion=args.mode)]
    if args.mode != "sum":
        variants.insert(0, VariantConfig("tempoqr", "hard"))
    reports, _ = ex.run_main_experiment(kg, splits, variants, question_vocab(kg), cfg)
    ex.save_reports(reports, args.report)
    print(ex.render_table(reports, columns=["group:complex/hits@1", "overall/hits@1"]))
    return 0


# -- argument parsing ------------------------------------------------------------


def _add_common(p):
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=0, help="root seed")


def build_parser():
    parser = argparse.ArgumentParser(prog="tkgqa",
                                     description="Temporal KGQA lab")
    sub = parser.add_subparsers(dest="command", required=True)

    kg = sub.add_parser("kg", help="synthetic KG generation and corruption")
    kg_sub = kg.add_subparsers(dest="action", required=True)
    g = kg_sub.add_parser("gen")
    g.add_argument("--out", required=True)
    g.add_argument("--preset", choices=("synth", "toy"), default="synth")
    g.add_argument("--scale", choices=("small", "full"), default="full")
    _add_common(g)
    g.set_defaults(func=cmd_kg_gen)
    c = kg_sub.add_parser("corrupt")
    c.add_argument("--in", dest="in", required=True)
    c.add_argument("--out", required=True)
    c.add_argument("--p", type=float, required=True)
    _add_common(c)
    c.set_defaults(func=cmd_kg_corrupt)

    emb = sub.add_parser("embed", help="TKG embedding pre-training")
    emb_sub = emb.add_subparsers(dest="action", required=True)
    t = emb_sub.add_parser("train")
    t.add_argument("--kg", required=True)
    t.add_argument("--out", required=True)
    for flag in ("--dim", "--embed-epochs", "--embed-batch", "--cap"):
        t.add_argument(flag, type=int, default=None)
    for flag in ("--embed-lr", "--n3", "--smooth", "--smooth-decay"):
        t.add_argument(flag, type=float, default=None)
    _add_common(t)
    t.set_defaults(func=cmd_embed_train)
    e = emb_sub.add_parser("eval")
    e.add_argument("--kg", required=True)
    e.add_argument("--store", required=True)
    e.add_argument("--holdout", type=float, default=0.1)
    _add_common(e)
    e.set_defaults(func=cmd_embed_eval)

    qg = sub.add_parser("qgen", help="question generation")
    qg.add_argument("mode", nargs="?", choices=("unseen",), default=None)
    qg.add_argument("--kg", required=True)
    qg.add_argument("--out", required=True)
    qg.add_argument("--mix", default=None)
    qg.add_argument("--split", default=None,
                    help="train,dev,test fractions; writes <out>.{train,dev,test}.jsonl")
    qg.add_argument("--max-per-type", type=int, default=200)
    _add_common(qg)
    qg.set_defaults(func=cmd_qgen)

    qa = sub.add_parser("qa", help="QA model training and evaluation")
    qa_sub = qa.add_subparsers(dest="action", required=True)
    qt = qa_sub.add_parser("train")
    qt.add_argument("--kg", required=True)
    qt.add_argument("--store", required=True)
    qt.add_argument("--train", required=True)
    qt.add_argument("--dev", default=None)
    qt.add_argument("--variant", required=True)
    qt.add_argument("--out", required=True)
    for flag in ("--dim-text", "--text-layers", "--text-heads",
                 "--fusion-layers", "--fusion-heads", "--qa-batch", "--qa-epochs",
                 "--qa-avg-start"):
        qt.add_argument(flag, type=int, default=None)
    for flag in ("--qa-lr", "--qa-avg-beta"):
        qt.add_argument(flag, type=float, default=None)
    _add_common(qt)
    qt.set_defaults(func=cmd_qa_train)
    qe = qa_sub.add_parser("eval")
    qe.add_argument("--kg", required=True)
    qe.add_argument("--store", required=True)
    qe.add_argument("--questions", required=True)
    qe.add_argument("--variant", required=True)
    qe.add_argument("--ckpt", default=None)
    qe.add_argument("--report", required=True)
    for flag in ("--dim-text", "--text-layers", "--text-heads",
                 "--fusion-layers", "--fusion-heads"):
        qe.add_argument(flag, type=int, default=None)
    _add_common(qe)
    qe.set_defaults(func=cmd_qa_eval)

    exp = sub.add_parser("exp", help="experiment suites")
    exp_sub = exp.add_subparsers(dest="action", required=True)

    def exp_parser(name, func):
        p = exp_sub.add_parser(name)
        p.add_argument("--kg", required=True)
        p.add_argument("--questions", required=True)
        p.add_argument("--report", required=True)
        p.add_argument("--seeds", default=None, help="comma-separated seeds")
        for flag in ("--dim", "--embed-epochs", "--embed-batch", "--cap",
                     "--dim-text", "--text-layers", "--text-heads",
                     "--fusion-layers", "--fusion-heads", "--qa-batch",
                     "--qa-epochs", "--qa-avg-start"):
            p.add_argument(flag, type=int, default=None)
        for flag in ("--embed-lr", "--n3", "--smooth", "--smooth-decay",
                     "--qa-lr", "--qa-avg-beta"):
            p.add_argument(flag, type=float, default=None)
        _add_common(p)
        p.set_defaults(func=func)
        return p

    pc = exp_parser("corruption", cmd_exp_corruption)
    pc.add_argument("--regime", choices=("qa_only", "pretrain_and_qa"),
                    required=True)
    pc.add_argument("--p", default="0,0.2,0.5,0.8")
    pc.add_argument("--variants", default="tempoqr-hard,tempoqr-soft,entityqr")
    pc.add_argument("--plot", default=None)

    pu = exp_parser("unseen", cmd_exp_unseen)
    pu.add_argument("--combos", required=True)
    pu.add_argument("--variants", default="tempoqr-hard,tempoqr-soft,entityqr,cronkgqa")

    pt = exp_parser("trainsize", cmd_exp_trainsize)
    pt.add_argument("--variant", default="tempoqr-hard")
    pt.add_argument("--fractions", default="0.1,0.25,0.5,1.0")
    pt.add_argument("--plot", default=None)
    pt.set_defaults(variants="tempoqr-hard")

    pa = exp_parser("ablate-time", cmd_exp_ablate_time)
    pa.add_argument("--kind", required=True,
                    choices=("tcomplex_sampled", "positional_start_end",
                             "random_start_end"))
    pa.set_defaults(variants="tempoqr-hard")

    pf = exp_parser("ablate-fusion", cmd_exp_ablate_fusion)
    pf.add_argument("--mode", choices=("sum", "cat", "att"), required=True)
    pf.set_defaults(variants="tempoqr-hard")

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    args._config = _read_config(args.config) if args.config else {}
    try:
        return args.func(args)
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
