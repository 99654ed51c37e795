"""Question-specific time embeddings t1, t2.

Hard supervision retrieves the time scope from the KG facts that involve
the question's annotated entities. Soft supervision infers it in the
embedding space from the question representation, without touching the
facts. Ablation sources and the hard+soft ensemble are also provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoder import sinusoidal_positions
from .tensor import Tensor


@dataclass
class TimeScope:
    t1: object  # Tensor or ndarray, width D
    t2: object
    provenance: str
    start_year: int | None = None  # resolved ids, hard provenance only
    end_year: int | None = None


def hard_time_scope(kg, store, entity_ids):
    """Start/end time embeddings from the facts matching the annotated
    entities: try facts containing all of them, fall back to any, fall back
    to the NO_TIME sentinel twice. Only timed facts contribute years."""
    if not entity_ids:
        raise ValueError("hard supervision needs at least one annotated entity")
    facts = kg.facts_with_entities(entity_ids, mode="all")
    if not any(f.timed for f in facts):
        facts = kg.facts_with_entities(entity_ids, mode="any")
    years = []
    for f in facts:
        if f.timed:
            years.extend((f.start, f.end))
    if not years:
        sentinel = store.timestamp(store.no_time_id)
        return TimeScope(sentinel, sentinel, "hard", None, None)
    lo, hi = min(years), max(years)
    return TimeScope(store.timestamp(kg.year_id(lo)),
                     store.timestamp(kg.year_id(hi)), "hard", lo, hi)


def resolve_hard_years(kg, entity_ids):
    """(start, end) years of the hard scope, or (None, None) at the sentinel
    fallback. Mirrors hard_time_scope without touching embeddings."""
    facts = kg.facts_with_entities(entity_ids, mode="all")
    if not any(f.timed for f in facts):
        facts = kg.facts_with_entities(entity_ids, mode="any")
    years = [y for f in facts if f.timed for y in (f.start, f.end)]
    if not years:
        return None, None
    return min(years), max(years)


def soft_time_scope(store, q_b_cls, w_t, subject_id, object_id):
    """Infer t1, t2 from the CLS context vector used as a virtual relation.

    q_time = W_T q_cls plays the relation role; with u = q_time * conj(e_o)
    the timestamp that maximizes the factorization score at fixed norm is
    conj(e_s * u), which is taken as t1. t2 swaps the subject/object roles.
    Missing roles fall back to the dummy sentinel entity.
    """
    d2 = store.dim // 2
    q_time = q_b_cls @ w_t.T if isinstance(q_b_cls, Tensor) else w_t.data @ q_b_cls
    s_id = store.dummy_entity_id if subject_id is None else subject_id
    o_id = store.dummy_entity_id if object_id is None else object_id

    def infer(es, eo):
        sr, si = es[..., :d2], es[..., d2:]
        or_, oi = eo[..., :d2], eo[..., d2:]
        rr, ri = q_time[..., :d2], q_time[..., d2:]
        ur = rr * or_ + ri * oi          # u = q_time * conj(e_o)
        ui = ri * or_ - rr * oi
        wr = sr * ur - si * ui           # w = e_s * u
        wi = sr * ui + si * ur
        if isinstance(wr, Tensor):
            from .tensor import concat
            return concat([wr, -1.0 * wi], axis=-1)  # conj(w)
        return np.concatenate([wr, -wi], axis=-1)

    es, eo = store.entity(s_id), store.entity(o_id)
    if isinstance(q_time, Tensor):
        es, eo = Tensor(es), Tensor(eo)
    t1 = infer(es, eo)
    t2 = infer(eo, es)
    return TimeScope(t1, t2, "soft")


class RandomTimeTable:
    """Fixed per-year random vectors, drawn once and reused."""

    def __init__(self, num_timestamps, dim, seed):
        rng = np.random.default_rng(seed)
        self.table = rng.normal(0.0, 1.0, (num_timestamps, dim))


def ablation_time_scope(kind, kg, store, entity_ids, seed=0, random_table=None):
    """Alternative time-embedding sources for the hard-supervised model.

    tcomplex_sampled      one year uniformly sampled inside the hard scope,
                          used for both t1 and t2
    positional_start_end  sinusoidal vectors indexed by the years' rank
    random_start_end      fixed seeded random vector per year
    """
    lo, hi = resolve_hard_years(kg, entity_ids)
    if kind == "tcomplex_sampled":
        if lo is None:
            sentinel = store.timestamp(store.no_time_id)
            return TimeScope(sentinel, sentinel, "ablation:tcomplex_sampled")
        rng = np.random.default_rng(seed)
        y = int(rng.integers(lo, hi + 1))
        emb = store.timestamp(kg.year_id(y))
        return TimeScope(emb, emb, "ablation:tcomplex_sampled", y, y)
    if kind == "positional_start_end":
        table = sinusoidal_positions(store.num_timestamps, store.dim)
        i1 = store.no_time_id if lo is None else kg.year_id(lo)
        i2 = store.no_time_id if hi is None else kg.year_id(hi)
        return TimeScope(table[i1], table[i2], "ablation:positional_start_end", lo, hi)
    if kind == "random_start_end":
        table = (random_table or RandomTimeTable(store.num_timestamps, store.dim, seed)).table
        i1 = store.no_time_id if lo is None else kg.year_id(lo)
        i2 = store.no_time_id if hi is None else kg.year_id(hi)
        return TimeScope(table[i1], table[i2], "ablation:random_start_end", lo, hi)
    raise ValueError(f"unknown ablation kind {kind!r}")


def ensemble_time_scope(hard, soft):
    """Elementwise sum of the hard and soft scopes."""
    h1 = hard.t1.data if isinstance(hard.t1, Tensor) else hard.t1
    s1 = soft.t1.data if isinstance(soft.t1, Tensor) else soft.t1
    if np.shape(h1)[-1] != np.shape(s1)[-1]:
        raise ValueError(f"width mismatch {np.shape(h1)} vs {np.shape(s1)}")
    t1 = hard.t1 + soft.t1 if isinstance(soft.t1, Tensor) else soft.t1 + hard.t1
    t2 = hard.t2 + soft.t2 if isinstance(soft.t2, Tensor) else soft.t2 + hard.t2
    return TimeScope(t1, t2, "ensemble", hard.start_year, hard.end_year)
