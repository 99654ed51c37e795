"""Complex-valued tensor factorization over temporal KGs.

Embeddings are rows of width D whose first D/2 entries are the real parts
and last D/2 the imaginary parts of a C^{D/2} vector. The fact score is

    phi(s, r, o, tau) = Re(<e_s, v_r * t_tau, conj(e_o)>)

summed over the D/2 complex dimensions. The relation table carries an
inverse row per base relation (id base + num_relations) so that subject
queries reduce to object queries. The entity table carries one trailing
sentinel row used as a dummy for roles absent from a question.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .tensor import Adam, Tensor, embedding, softmax_cross_entropy

STORE_MAGIC = "TKGEMB v1"


def _split(row):
    d2 = row.shape[-1] // 2
    return row[..., :d2], row[..., d2:]


def _cmul(ar, ai, br, bi):
    return ar * br - ai * bi, ar * bi + ai * br


class EmbeddingStore:
    """Entity/relation/timestamp embedding matrices, freezable after training.

    entities:   (num_entities + 1, D)   last row = dummy-entity sentinel
    relations:  (2 * num_relations, D)  inverse rows appended
    timestamps: (num_timestamps, D)     includes the NO_TIME sentinel (last id)
    """

    def __init__(self, num_entities, num_relations, num_timestamps, dim, seed=0,
                 init_scale=0.5):
        if dim % 2 != 0:
            raise ValueError(f"embedding width must be even, got {dim}")
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.num_entities = num_entities
        self.num_relations = num_relations
        self.num_timestamps = num_timestamps
        self.entities = rng.normal(0.0, init_scale, (num_entities + 1, dim))
        self.relations = rng.normal(0.0, init_scale, (2 * num_relations, dim))
        self.timestamps = rng.normal(0.0, init_scale, (num_timestamps, dim))
        self.frozen = False

    @property
    def dummy_entity_id(self):
        return self.num_entities

    @property
    def no_time_id(self):
        return self.num_timestamps - 1

    def freeze(self):
        self.frozen = True
        for arr in (self.entities, self.relations, self.timestamps):
            arr.setflags(write=False)

    def checksum(self):
        return (self.entities.sum(), self.relations.sum(), self.timestamps.sum())

    def _check(self, kind, idx, n):
        idx = np.asarray(idx)
        if np.any(idx < 0) or np.any(idx >= n):
            raise IndexError(f"invalid {kind} id {idx} (table size {n})")

    def entity(self, i):
        self._check("entity", i, self.num_entities + 1)
        return self.entities[i]

    def relation(self, i):
        self._check("relation", i, 2 * self.num_relations)
        return self.relations[i]

    def timestamp(self, i):
        self._check("timestamp", i, self.num_timestamps)
        return self.timestamps[i]

    # -- scoring (numpy, inference side) ----------------------------------

    def score_fact(self, s, r, o, tau):
        es, vr = self.entity(s), self.relation(r)
        eo, tt = self.entity(o), self.timestamp(tau)
        sr, si = _split(es)
        rr, ri = _split(vr)
        or_, oi = _split(eo)
        tr, ti = _split(tt)
        wr, wi = _cmul(sr, si, rr, ri)
        wr, wi = _cmul(wr, wi, tr, ti)
        # Re(w * conj(o)) = Re(w)Re(o) + Im(w)Im(o)
        return float(wr @ or_ + wi @ oi)

    def score_all_objects(self, s, r, tau):
        """Vector of score_fact(s, r, eps, tau) over all real entities."""
        sr, si = _split(self.entity(s))
        rr, ri = _split(self.relation(r))
        tr, ti = _split(self.timestamp(tau))
        wr, wi = _cmul(sr, si, rr, ri)
        wr, wi = _cmul(wr, wi, tr, ti)
        er, ei = _split(self.entities[: self.num_entities])
        return er @ wr + ei @ wi

    def score_all_timestamps(self, s, r, o):
        """Vector over all timestamps via the bilinear decomposition of the
        fact score with u = v_r * conj(e_o): equals score_fact exactly."""
        sr, si = _split(self.entity(s))
        rr, ri = _split(self.relation(r))
        or_, oi = _split(self.entity(o))
        ur, ui = _cmul(rr, ri, or_, -oi)  # u = v * conj(o)
        zr, zi = _cmul(sr, si, ur, ui)    # z = e_s * u
        tr, ti = _split(self.timestamps)
        # Re(z * t) = Re(z)Re(t) - Im(z)Im(t)
        return tr @ zr - ti @ zi

    # -- persistence --------------------------------------------------------

    def save(self, path, names=None):
        header = (f"{STORE_MAGIC} {self.num_entities} {self.num_relations} "
                  f"{self.num_timestamps} {self.dim}\n")
        with open(path, "wb") as fh:
            fh.write(header.encode("ascii"))
            for arr in (self.entities, self.relations, self.timestamps):
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        if names is not None:
            with open(str(path) + ".names.json", "w", encoding="utf-8") as fh:
                json.dump(names, fh, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").strip()
            fields = header.split()
            if " ".join(fields[:2]) != STORE_MAGIC:
                raise ValueError(f"bad store header: {header!r}")
            ne, nr, nt, dim = map(int, fields[2:])
            store = cls.__new__(cls)
            store.dim = dim
            store.num_entities, store.num_relations, store.num_timestamps = ne, nr, nt
            store.frozen = False
            for attr, rows in (("entities", ne + 1), ("relations", 2 * nr),
                               ("timestamps", nt)):
                buf = fh.read(rows * dim * 8)
                setattr(store, attr,
                        np.frombuffer(buf, dtype="<f8").reshape(rows, dim).copy())
        return store


@dataclass
class TrainConfig:
    dim: int = 64
    epochs: int = 40
    lr: float = 0.1
    lr_decay: float = 1.0  # per-epoch multiplier on the learning rate
    batch_size: int = 512
    n3_weight: float = 1e-2
    smoothness_weight: float = 1e-2
    smoothness_decay: float = 1.0  # per-epoch multiplier on the smoothness weight
    interval_cap: int = 40
    seed: int = 0
    init_scale: float = 0.5


def _training_quadruples(kg, cap):
    """Interval-expanded quadruples plus their inverse-relation mirrors,
    as (s, r, o, t) id arrays."""
    quads = []
    nrel = kg.num_relations
    for q in kg.expand_intervals(cap):
        t = kg.year_id(q.year)
        quads.append((q.subject, q.relation, q.object, t))
        quads.append((q.object, q.relation + nrel, q.subject, t))
    arr = np.array(quads, dtype=np.int64)
    return arr


def _batch_scores(ent, rel, ts, s_idx, r_idx, o_idx, t_idx, n_entities):
    """Tensor-graph scores of a quadruple batch against all entities and all
    timestamps. Returns (obj_logits, time_logits, n3_term)."""
    d2 = ent.shape[1] // 2
    es = embedding(ent, s_idx)
    vr = embedding(rel, r_idx)
    eo = embedding(ent, o_idx)
    tt = embedding(ts, t_idx)
    sr, si = es[:, :d2], es[:, d2:]
    rr, ri = vr[:, :d2], vr[:, d2:]
    or_, oi = eo[:, :d2], eo[:, d2:]
    tr, ti = tt[:, :d2], tt[:, d2:]

    wr = sr * rr - si * ri
    wi = sr * ri + si * rr
    wtr = wr * tr - wi * ti
    wti = wr * ti + wi * tr
    cand = ent[np.arange(n_entities)]  # excludes the dummy sentinel row
    obj_logits = wtr @ cand[:, :d2].T + wti @ cand[:, d2:].T

    # z = e_s * v_r * conj(e_o); score vs t is Re(z * t)
    zr = wr * or_ + wi * oi
    zi = wi * or_ - wr * oi
    time_logits = zr @ ts[:, :d2].T - zi @ ts[:, d2:].T

    n3 = Tensor(0.0)
    for e in (es, vr, eo, tt):
        mod = e[:, :d2] * e[:, :d2] + e[:, d2:] * e[:, d2:] + Tensor(1e-12)
        n3 = n3 + _pow32(mod).sum()
    return obj_logits, time_logits, n3


def _pow32(x):
    # |z|^3 = (|z|^2)^{3/2}; exp/log gives a differentiable fractional power
    return (x.log() * 1.5).exp()


def train_embeddings(kg, config=None):
    """Pre-train a TComplEx store on kg via full-softmax link prediction over
    objects and timestamps, with N3 and temporal-smoothness regularizers.
    Returns a frozen EmbeddingStore."""
    config = config or TrainConfig()
    if not kg.facts:
        raise ValueError("cannot train embeddings on an empty KG")
    store = EmbeddingStore(kg.num_entities, kg.num_relations, kg.num_timestamps,
                           config.dim, seed=config.seed, init_scale=config.init_scale)
    if config.epochs == 0:
        store.freeze()
        return store

    quads = _training_quadruples(kg, config.interval_cap)
    rng = np.random.default_rng(config.seed + 1)

    ent = Tensor(store.entities, requires_grad=True)
    rel = Tensor(store.relations, requires_grad=True)
    ts = Tensor(store.timestamps, requires_grad=True)
    opt = Adam([ent, rel, ts], lr=config.lr)
    n_years = kg.num_timestamps - 1

    for epoch in range(config.epochs):
        opt.lr = config.lr * config.lr_decay ** epoch
        sweight = config.smoothness_weight * config.smoothness_decay ** epoch
        order = rng.permutation(len(quads))
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            s, r, o, t = quads[idx].T
            obj_logits, time_logits, n3 = _batch_scores(
                ent, rel, ts, s, r, o, t, kg.num_entities)
            loss = softmax_cross_entropy(obj_logits, o)
            loss = loss + softmax_cross_entropy(time_logits, t)
            loss = loss + (config.n3_weight / len(idx)) * n3
            if sweight > 0 and n_years > 1:
                diff = ts[np.arange(1, n_years)] - ts[np.arange(0, n_years - 1)]
                loss = loss + sweight * (diff * diff).sum()
            loss.backward()
            opt.step()

    store.entities = ent.data
    store.relations = rel.data
    store.timestamps = ts.data
    store.freeze()
    return store


def epoch_losses(kg, config):
    """Mean training loss per epoch (diagnostic; same updates as
    train_embeddings but records the loss trajectory)."""
    config = config or TrainConfig()
    store = EmbeddingStore(kg.num_entities, kg.num_relations, kg.num_timestamps,
                           config.dim, seed=config.seed, init_scale=config.init_scale)
    quads = _training_quadruples(kg, config.interval_cap)
    rng = np.random.default_rng(config.seed + 1)
    ent = Tensor(store.entities, requires_grad=True)
    rel = Tensor(store.relations, requires_grad=True)
    ts = Tensor(store.timestamps, requires_grad=True)
    opt = Adam([ent, rel, ts], lr=config.lr)
    out = []
    for _ in range(config.epochs):
        order = rng.permutation(len(quads))
        total = 0.0
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            s, r, o, t = quads[idx].T
            obj_logits, time_logits, n3 = _batch_scores(
                ent, rel, ts, s, r, o, t, kg.num_entities)
            loss = softmax_cross_entropy(obj_logits, o) + softmax_cross_entropy(time_logits, t)
            loss = loss + (config.n3_weight / len(idx)) * n3
            total += loss.item() * len(idx)
            loss.backward()
            opt.step()
        out.append(total / len(quads))
    return out


def _filtered_rank(scores, gold, filter_ids):
    """Rank of gold under descending score, ids ascending on ties, with other
    known-true candidates removed."""
    gold_score = scores[gold]
    mask = np.ones(len(scores), dtype=bool)
    for i in filter_ids:
        if i != gold:
            mask[i] = False
    better = np.sum((scores > gold_score) & mask)
    tied_before = np.sum((scores == gold_score) & mask & (np.arange(len(scores)) < gold))
    return int(better + tied_before) + 1


def evaluate_link_prediction(store, quadruples, known_facts):
    """Filtered MRR / Hits@1 / Hits@10 over object and subject queries.

    quadruples: iterable of (s, r, o, t) ids with r a base relation id.
    known_facts: set of (s, r, o, t) covering all splits, used for filtering.
    """
    by_query = {}
    for s, r, o, t in known_facts:
        by_query.setdefault((s, r, t), set()).add(o)
        by_query.setdefault((o, r + store.num_relations, t), set()).add(s)

    ranks = []
    for s, r, o, t in quadruples:
        for subj, rel, gold in ((s, r, o), (o, r + store.num_relations, s)):
            scores = store.score_all_objects(subj, rel, t)
            filt = by_query.get((subj, rel, t), set())
            ranks.append(_filtered_rank(scores, gold, filt))
    ranks = np.array(ranks, dtype=np.float64)
    return {
        "MRR": float(np.mean(1.0 / ranks)),
        "Hits@1": float(np.mean(ranks <= 1)),
        "Hits@10": float(np.mean(ranks <= 10)),
    }
