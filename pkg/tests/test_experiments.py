import json
import os

import numpy as np
import pytest

from tkgqa.embeddings import TrainConfig
from tkgqa.experiments import (EvalReport, HarnessConfig, dataset_fingerprint,
                               evaluate, hits_at_k, load_reports, mean_cell,
                               render_table, run_corruption_experiment,
                               run_main_experiment, run_training_size_experiment,
                               run_unseen_experiment, save_reports)
from tkgqa.model import QAConfig, VariantConfig
from tkgqa.questions import (generate_dataset, generate_unseen_combos,
                             question_vocab, split_dataset)
from tkgqa.synth import SynthConfig, generate_kg


# -- metrics ------------------------------------------------------------------


def test_hits_at_k_examples():
    assert hits_at_k([3, 1, 2], {3}, 1) == 1
    assert hits_at_k([3, 1, 2], {2}, 1) == 0
    assert hits_at_k([3, 1, 2], {2}, 3) == 1
    assert hits_at_k([3, 1, 2], {9, 1}, 2) == 1


def test_hits_at_k_monotone_in_k():
    rng = np.random.default_rng(0)
    for _ in range(50):
        ranked = rng.permutation(20)
        gold = set(rng.choice(20, 3, replace=False).tolist())
        vals = [hits_at_k(ranked, gold, k) for k in range(1, 21)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))
        assert vals[-1] == 1


def test_hits_at_k_validation():
    with pytest.raises(ValueError):
        hits_at_k([], {1}, 1)
    with pytest.raises(ValueError):
        hits_at_k([1], {1}, 0)


def test_fingerprint_sensitive_to_answers():
    qs = generate_dataset(generate_kg(SynthConfig(num_people=20, num_awards=3,
                                                  num_positions=2, num_teams=2,
                                                  award_years=6, seed=0)),
                          {"simple_entity": 4}, seed=0)
    a = dataset_fingerprint(qs)
    from dataclasses import replace
    mutated = [replace(qs[0], answers={99})] + qs[1:]
    assert dataset_fingerprint(mutated) != a
    assert dataset_fingerprint(qs) == a


# -- harness fixtures ----------------------------------------------------------


@pytest.fixture(scope="module")
def lab():
    kg = generate_kg(SynthConfig(num_people=40, num_awards=5, num_positions=4,
                                 num_teams=4, award_years=10, seed=0))
    qs = generate_dataset(kg, {"simple_entity": 40, "simple_time": 30,
                               "before_after": 30, "time_join": 20}, seed=0)
    splits = split_dataset(qs, seed=0)
    vocab = question_vocab(kg)
    config = HarnessConfig(
        embed=TrainConfig(dim=16, epochs=8),
        qa=QAConfig(dim_text=16, text_layers=1, text_heads=2, fusion_layers=1,
                    fusion_heads=2, epochs=2, batch_size=32, lr=1e-3),
        seeds=(0,))
    return kg, splits, vocab, config


@pytest.fixture(scope="module")
def trained(lab):
    kg, splits, vocab, config = lab
    variants = [VariantConfig.parse("tempoqr-hard"), VariantConfig.parse("cronkgqa")]
    return run_main_experiment(kg, splits, variants, vocab, config)


# -- evaluation ------------------------------------------------------------------


def test_evaluate_cells_cover_groups(trained, lab):
    reports, _ = trained
    assert len(reports) == 2
    r = reports[0]
    assert "overall/hits@1" in r.cells
    assert "group:simple/hits@1" in r.cells and "group:complex/hits@1" in r.cells
    assert "kind:entity/hits@1" in r.cells
    assert "type:simple_entity/hits@10" in r.cells
    assert all(0.0 <= v <= 1.0 for v in r.cells.values())


def test_group_cells_are_weighted_means_of_types(trained):
    reports, _ = trained
    r = reports[0]
    for group, types in (("simple", ("simple_entity", "simple_time")),
                         ("complex", ("before_after", "time_join"))):
        num = den = 0.0
        for t in types:
            key = f"type:{t}"
            if key in r.counts:
                num += r.cells[f"{key}/hits@1"] * r.counts[key]
                den += r.counts[key]
        assert r.cells[f"group:{group}/hits@1"] == pytest.approx(num / den, abs=1e-9)


def test_overall_monotone_in_k(trained):
    reports, _ = trained
    for r in reports:
        assert r.cells["overall/hits@1"] <= r.cells["overall/hits@10"]


def test_perfect_model_scores_one(lab):
    kg, splits, vocab, config = lab

    class Oracle:
        def __init__(self, model):
            self._m = model
            self.store = model.store
            self.variant = model.variant

        def gold_ids(self, q):
            return self._m.gold_ids(q)

        def score_batch(self, qs):
            from tkgqa.tensor import Tensor
            n = self.store.num_entities + self.store.num_timestamps
            scores = np.zeros((len(qs), n))
            for i, q in enumerate(qs):
                scores[i, self.gold_ids(q)] = 1.0
            return Tensor(scores)

    from tkgqa.model import QAModel
    model = QAModel(VariantConfig.parse("cronkgqa"), _frozen_store(kg, config),
                    kg, vocab, config.qa)
    rep = evaluate(Oracle(model), splits[2], ks=(1, 10), seed=0)
    assert rep.cells["overall/hits@1"] == 1.0


def _frozen_store(kg, config):
    from tkgqa.embeddings import train_embeddings
    return train_embeddings(kg, config.embed)


def test_evaluate_rejects_foreign_ids(lab, trained):
    kg, splits, vocab, config = lab
    _, models = trained
    model = models[("tempoqr-hard", 0)]
    from dataclasses import replace
    bad = [replace(splits[2][0], answers={10 ** 6})]
    with pytest.raises(ValueError):
        evaluate(model, bad)


def test_eval_threads_equivalent(trained, lab):
    _, models = trained
    model = models[("cronkgqa", 0)]
    test_qs = lab[1][2]
    old = os.environ.get("TQR_THREADS")
    try:
        os.environ["TQR_THREADS"] = "1"
        a = evaluate(model, test_qs, seed=0)
        os.environ["TQR_THREADS"] = "4"
        b = evaluate(model, test_qs, seed=0)
    finally:
        if old is None:
            os.environ.pop("TQR_THREADS", None)
        else:
            os.environ["TQR_THREADS"] = old
    assert a.cells == b.cells


# -- reports ---------------------------------------------------------------------


def test_reports_roundtrip_and_byte_identical(tmp_path, trained):
    reports, _ = trained
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_reports(reports, p1)
    save_reports(reports, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = load_reports(p1)
    assert [r.record() for r in back] == [r.record() for r in reports]


def test_runtime_not_serialized(tmp_path, trained):
    reports, _ = trained
    p = tmp_path / "r.jsonl"
    save_reports(reports, p)
    for line in p.read_text().splitlines():
        assert "runtime" not in json.loads(line)


def test_render_table_contains_variants(trained):
    reports, _ = trained
    table = render_table(reports, columns=["overall/hits@1"])
    assert "tempoqr-hard" in table and "cronkgqa" in table
    assert render_table([]) == "(no reports)\n"


def test_mean_cell(trained):
    reports, _ = trained
    vals = [r.cells["overall/hits@1"] for r in reports]
    assert mean_cell(reports, "overall/hits@1") == pytest.approx(np.mean(vals))
    assert np.isnan(mean_cell(reports, "missing"))


# -- experiment drivers -------------------------------------------------------------


def test_main_experiment_deterministic(lab):
    kg, splits, vocab, config = lab
    variants = [VariantConfig.parse("cronkgqa")]
    a, _ = run_main_experiment(kg, splits, variants, vocab, config)
    b, _ = run_main_experiment(kg, splits, variants, vocab, config)
    assert [r.record() for r in a] == [r.record() for r in b]


def test_corruption_qa_only_soft_flat(lab):
    """Variants that never read the KG at QA time are exactly constant in p."""
    kg, splits, vocab, config = lab
    variants = [VariantConfig.parse("tempoqr-soft"),
                VariantConfig.parse("tempoqr-hard")]
    reports = run_corruption_experiment(kg, splits, variants, vocab,
                                        p_list=(0.0, 0.5), config=config)
    soft = [r for r in reports if r.variant.startswith("tempoqr-soft")]
    assert len(soft) == 2
    base = {k: v for k, v in soft[0].cells.items() if k != "p"}
    for r in soft[1:]:
        assert {k: v for k, v in r.cells.items() if k != "p"} == base
    ps = [r.cells["p"] for r in reports]
    assert set(ps) == {0.0, 0.5}


def test_corruption_regime_validation(lab):
    kg, splits, vocab, config = lab
    with pytest.raises(ValueError):
        run_corruption_experiment(kg, splits, [], vocab, (0.0,),
                                  regime="partial", config=config)


def test_unseen_experiment_reports_four_ks(lab, trained):
    kg, splits, vocab, config = lab
    _, models = trained
    combos = generate_unseen_combos(kg, seed=5, max_per_type=10)
    reports = run_unseen_experiment(models, combos, splits[0])
    assert reports
    for r in reports:
        for k in (1, 2, 5, 10):
            assert f"overall/hits@{k}" in r.cells


def test_unseen_experiment_rejects_overlap(lab, trained):
    _, models = trained
    kg, splits, _, _ = lab
    with pytest.raises(ValueError):
        run_unseen_experiment(models, splits[0][:3], splits[0])


def test_training_size_experiment(lab):
    kg, splits, vocab, config = lab
    reports = run_training_size_experiment(kg, splits,
                                           VariantConfig.parse("cronkgqa"),
                                           vocab, (0.5, 1.0), config=config)
    fracs = sorted(r.cells["fraction"] for r in reports)
    assert fracs == [0.5, 1.0]
    with pytest.raises(ValueError):
        run_training_size_experiment(kg, splits, VariantConfig.parse("cronkgqa"),
                                     vocab, (0.0,), config=config)
