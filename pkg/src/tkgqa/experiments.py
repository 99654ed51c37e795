"""Evaluation metrics and the experiment suite.

Reports are line-delimited JSON records plus a rendered text table. All
randomness flows from explicit seeds, and serialized reports contain only
deterministic fields so that identical configs give byte-identical files
(wall-clock runtime is kept on the in-memory report object only).
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .embeddings import TrainConfig, train_embeddings
from .model import QAConfig, QAModel, VariantConfig, train_qa
from .questions import COMBO_TYPES, COMPLEX_TYPES, SIMPLE_TYPES

GROUPS = {
    "simple": tuple(SIMPLE_TYPES),
    "complex": tuple(COMPLEX_TYPES),
    "unseen": tuple(COMBO_TYPES),
}


def hits_at_k(ranked, gold, k):
    """1 iff any gold id appears among the first k ranked ids."""
    if len(ranked) == 0:
        raise ValueError("empty ranking")
    if k < 1:
        raise ValueError("k must be >= 1")
    gold = set(gold)
    return int(any(r in gold for r in ranked[:k]))


def dataset_fingerprint(questions):
    blob = "\n".join(
        json.dumps({"tokens": q.tokens, "qtype": q.qtype,
                    "answers": sorted(q.answers)}, sort_keys=True)
        for q in questions)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class EvalReport:
    variant: str
    seed: int
    fingerprint: str
    cells: dict          # metric name -> value in [0, 1]
    counts: dict         # group name -> question count
    runtime: float = 0.0

    def record(self):
        """Deterministic serializable view (runtime excluded)."""
        return {"variant": self.variant, "seed": self.seed,
                "fingerprint": self.fingerprint, "cells": self.cells,
                "counts": self.counts}


def _rank_rows(scores):
    n = scores.shape[1]
    ids = np.arange(n)
    return [np.lexsort((ids, -row)) for row in scores]


def _eval_chunks(model, questions, batch_size=256):
    """Per-question rankings, evaluated in TQR_THREADS-capped parallel chunks
    and reassembled in order."""
    chunks = [questions[lo:lo + batch_size]
              for lo in range(0, len(questions), batch_size)]
    workers = max(1, int(os.environ.get("TQR_THREADS", "1")))
    if workers == 1:
        parts = [model.score_batch(c).data for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda c: model.score_batch(c).data, chunks))
    rankings = []
    for part in parts:
        rankings.extend(_rank_rows(part))
    return rankings


def evaluate(model, questions, ks=(1, 10), seed=0):
    """Hits@k overall, per simple/complex/unseen group, per answer kind,
    and per question type."""
    for q in questions:
        if any(a.kind == "entity" and a.id >= model.store.num_entities
               for a in q.annotations):
            raise ValueError("question annotations outside the model's id space")
        top = max(q.answers)
        limit = (model.store.num_entities if q.answer_kind == "entity"
                 else model.store.num_timestamps)
        if top >= limit:
            raise ValueError("gold answers outside the model's id space")
    t0 = time.perf_counter()
    rankings = _eval_chunks(model, questions)
    buckets = {}
    for q, ranked in zip(questions, rankings):
        gold = model.gold_ids(q)
        row = {k: hits_at_k(ranked, gold, k) for k in ks}
        group = next(g for g, types in GROUPS.items() if q.qtype in types)
        for key in ("overall", f"group:{group}", f"kind:{q.answer_kind}",
                    f"type:{q.qtype}"):
            buckets.setdefault(key, []).append(row)
    cells, counts = {}, {}
    for key, rows in sorted(buckets.items()):
        counts[key] = len(rows)
        for k in ks:
            cells[f"{key}/hits@{k}"] = float(np.mean([r[k] for r in rows]))
    return EvalReport(model.variant.name, seed, dataset_fingerprint(questions),
                      cells, counts, runtime=time.perf_counter() - t0)


# -- report I/O -----------------------------------------------------------------


def save_reports(reports, path):
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.record(), sort_keys=True) + "\n")


def load_reports(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            d = json.loads(line)
            out.append(EvalReport(d["variant"], d["seed"], d["fingerprint"],
                                  d["cells"], d["counts"]))
    return out


def render_table(reports, columns=None):
    """Plain-text table, one row per report."""
    if not reports:
        return "(no reports)\n"
    columns = columns or sorted({c for r in reports for c in r.cells})
    head = ["variant", "seed"] + columns
    rows = [[r.variant, str(r.seed)] + [f"{r.cells.get(c, float('nan')):.3f}"
                                        for c in columns] for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(head)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(head, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(v.ljust(w) for v, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def plot_series(series, path, xlabel, ylabel):
    """Line chart of {label: (xs, ys)} as an SVG file. Needs matplotlib."""
    import matplotlib
    matplotlib.use("svg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in sorted(series.items()):
        ax.plot(xs, ys, marker="o", label=label)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# -- experiment drivers -----------------------------------------------------------


@dataclass
class HarnessConfig:
    embed: TrainConfig = field(default_factory=TrainConfig)
    qa: QAConfig = field(default_factory=QAConfig)
    seeds: tuple = (0, 1, 2)


def _train_variant(variant, kg, store, vocab, train_qs, dev_qs, qa_config, seed):
    cfg = QAConfig(**{**qa_config.__dict__, "seed": seed})
    model = QAModel(variant, store, kg, vocab, cfg)
    train_qa(model, train_qs, dev_qs)
    return model


def run_main_experiment(kg, splits, variants, vocab, config=None):
    """Train every variant on every seed against one shared pre-trained store
    per seed; evaluate on the test split."""
    config = config or HarnessConfig()
    train_qs, dev_qs, test_qs = splits
    reports, models = [], {}
    for seed in config.seeds:
        ecfg = TrainConfig(**{**config.embed.__dict__, "seed": seed})
        store = train_embeddings(kg, ecfg)
        for variant in variants:
            model = _train_variant(variant, kg, store, vocab,
                                   train_qs, dev_qs, config.qa, seed)
            models[(variant.name, seed)] = model
            reports.append(evaluate(model, test_qs, seed=seed))
    return reports, models


def _uses_hard_scope(variant):
    return variant.supervision in ("hard", "ensemble") or variant.time_ablation


def run_corruption_experiment(kg, splits, variants, vocab, p_list,
                              regime="qa_only", config=None):
    """Timestamp-corruption sweep.

    qa_only: one corrupted KG per (p, seed), shared by all variants; only
    variants that read the KG at QA time (hard/ensemble/ablation) are
    retrained per p — the rest reuse their p=0 model, since nothing in
    their pipeline changes. pretrain_and_qa: embeddings and QA retrained
    from the corrupted KG for every variant and p.
    """
    if regime not in ("qa_only", "pretrain_and_qa"):
        raise ValueError(f"unknown regime {regime!r}")
    config = config or HarnessConfig()
    train_qs, dev_qs, test_qs = splits
    reports = []
    for seed in config.seeds:
        ecfg = TrainConfig(**{**config.embed.__dict__, "seed": seed})
        clean_store = train_embeddings(kg, ecfg) if regime == "qa_only" else None
        base_models = {}
        for p in p_list:
            ckg = kg.corrupt_timestamps(p, seed=seed + 1000)
            if regime == "pretrain_and_qa":
                store = train_embeddings(ckg, ecfg)
            else:
                store = clean_store
            for variant in variants:
                retrain = regime == "pretrain_and_qa" or _uses_hard_scope(variant) or p == p_list[0]
                if retrain:
                    model = _train_variant(variant, ckg, store, vocab,
                                           train_qs, dev_qs, config.qa, seed)
                    if p == p_list[0]:
                        base_models[variant.name] = model
                else:
                    model = base_models[variant.name]
                rep = evaluate(model, test_qs, seed=seed)
                rep.cells = {**rep.cells, "p": float(p)}
                rep.variant = f"{variant.name}@p={p}"
                reports.append(rep)
    return reports


def run_unseen_experiment(models, combo_qs, train_qs):
    """Hits@{1,2,5,10} of already-trained models on the unseen combo types."""
    train_sigs = {q.signature() for q in train_qs}
    for q in combo_qs:
        if q.signature() in train_sigs:
            raise ValueError("combo dataset overlaps training signatures")
    reports = []
    for (name, seed), model in sorted(models.items()):
        reports.append(evaluate(model, combo_qs, ks=(1, 2, 5, 10), seed=seed))
    return reports


def run_training_size_experiment(kg, splits, variant, vocab, fractions,
                                 config=None):
    """Complex Hits@1 as a function of the training-set fraction."""
    config = config or HarnessConfig()
    train_qs, dev_qs, test_qs = splits
    reports = []
    for seed in config.seeds:
        ecfg = TrainConfig(**{**config.embed.__dict__, "seed": seed})
        store = train_embeddings(kg, ecfg)
        for frac in fractions:
            if not 0.0 < frac <= 1.0:
                raise ValueError(f"fraction {frac} outside (0, 1]")
            rng = np.random.default_rng(seed + int(frac * 1e6))
            n = max(1, int(round(frac * len(train_qs))))
            sub = [train_qs[i] for i in sorted(rng.choice(len(train_qs), n,
                                                          replace=False))]
            model = _train_variant(variant, kg, store, vocab, sub, dev_qs,
                                   config.qa, seed)
            rep = evaluate(model, test_qs, seed=seed)
            rep.cells = {**rep.cells, "fraction": float(frac)}
            rep.variant = f"{variant.name}@frac={frac}"
            reports.append(rep)
    return reports


def mean_cell(reports, cell):
    vals = [r.cells[cell] for r in reports if cell in r.cells]
    return float(np.mean(vals)) if vals else float("nan")
