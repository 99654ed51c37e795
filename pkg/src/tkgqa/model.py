"""Answer scoring, loss, and the QA training loop for all model variants.

A variant is described by four axes:

  base        tempoqr | entityqr | cronkgqa
  supervision none | hard | soft | ensemble
  fusion      sum | cat | att
  decoder     tcomplex | dot

tempoqr runs the full inject -> time-fuse -> fusion-encoder path; entityqr
is the same path without the time fusion; cronkgqa skips injection and
fusion entirely and uses the projected CLS context vector as the virtual
relation. For cronkgqa/entityqr with hard or soft supervision, t1 + t2
replaces the dummy timestamp inside the scoring function instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import encoder as enc
from .encoder import FusionEncoder, QuestionBatch, TextEncoder
from .supervision import (RandomTimeTable, ablation_time_scope,
                          resolve_hard_years, soft_time_scope)
from .tensor import Adam, Tensor, concat, softmax_cross_entropy, where

BASES = ("tempoqr", "entityqr", "cronkgqa")
SUPERVISIONS = ("none", "hard", "soft", "ensemble")
FUSIONS = ("sum", "cat", "att")
DECODERS = ("tcomplex", "dot")


@dataclass(frozen=True)
class VariantConfig:
    base: str = "tempoqr"
    supervision: str = "hard"
    fusion: str = "sum"
    decoder: str = "tcomplex"
    time_ablation: str | None = None  # replaces the hard time source

    def __post_init__(self):
        if self.base not in BASES:
            raise ValueError(f"unknown base {self.base!r}")
        if self.supervision not in SUPERVISIONS:
            raise ValueError(f"unknown supervision {self.supervision!r}")
        if self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.decoder not in DECODERS:
            raise ValueError(f"unknown decoder {self.decoder!r}")
        if self.decoder == "dot" and self.supervision in ("soft", "ensemble"):
            raise ValueError("soft supervision is specific to the tcomplex decoder")

    @property
    def name(self):
        tag = self.base if self.supervision == "none" else f"{self.base}-{self.supervision}"
        if self.fusion != "sum":
            tag += f"+{self.fusion}"
        if self.decoder != "tcomplex":
            tag += f"+{self.decoder}"
        if self.time_ablation:
            tag += f"+{self.time_ablation}"
        return tag

    @classmethod
    def parse(cls, text):
        """Parse strings like 'tempoqr-hard', 'entityqr', 'cronkgqa-soft'."""
        parts = text.split("+")
        head = parts[0]
        fusion, decoder, ablation = "sum", "tcomplex", None
        for extra in parts[1:]:
            if extra in FUSIONS:
                fusion = extra
            elif extra in DECODERS:
                decoder = extra
            else:
                ablation = extra
        if "-" in head:
            base, sup = head.split("-", 1)
        else:
            base, sup = head, "none"
        return cls(base, sup, fusion, decoder, ablation)


@dataclass
class QAConfig:
    dim_text: int = 64
    text_layers: int = 2
    text_heads: int = 4
    fusion_layers: int = 3
    fusion_heads: int = 4
    lr: float = 2e-4
    lr_decay: float = 1.0  # per-epoch multiplier on the learning rate
    batch_size: int = 256
    epochs: int = 20
    avg_start: int = -1  # epoch at which tail parameter averaging begins; -1 disables
    avg_beta: float = 0.8  # EMA coefficient for tail averaging
    seed: int = 0


class QAModel:
    """All learnable QA parameters plus a handle on the frozen store."""

    def __init__(self, variant, store, kg, vocab, config=None):
        if not store.frozen:
            raise ValueError("QA models require a frozen embedding store")
        self.variant = variant
        self.store = store
        self.kg = kg
        self.config = config or QAConfig()
        cfg = self.config
        d, db = store.dim, cfg.dim_text
        rng = np.random.default_rng(cfg.seed)
        self.text_encoder = TextEncoder(vocab, db, cfg.text_layers,
                                        cfg.text_heads, seed=cfg.seed + 1)
        self.fusion = FusionEncoder(d, cfg.fusion_layers, cfg.fusion_heads,
                                    seed=cfg.seed + 2)
        self.w_b = enc._xavier(rng, d, db)
        self.w_e = enc._xavier(rng, d, d)
        self.w_t = enc._xavier(rng, d, d)
        self.p_e = enc._xavier(rng, d, d)
        self.p_t = enc._xavier(rng, d, d)
        self.cat_proj = enc._xavier(rng, d, 3 * d) if variant.fusion == "cat" else None
        self._ent_const = Tensor(store.entities)
        self._ent_real = Tensor(store.entities[: store.num_entities])
        self._ts_const = Tensor(store.timestamps)
        self._hard_cache = {}
        self._random_table = RandomTimeTable(store.num_timestamps, store.dim,
                                             cfg.seed + 3)
        self._sample_rng = np.random.default_rng(cfg.seed + 4)

    # -- plumbing -------------------------------------------------------

    def parameters(self):
        """Trainable parameters that actually participate in this variant's
        forward pass (the optimizer requires every parameter to get a grad)."""
        ps = [self.w_b, self.p_e, self.p_t]
        if self.variant.base != "cronkgqa":
            ps.append(self.w_e)
            ps += self.fusion.parameters()
        if self.variant.supervision in ("soft", "ensemble"):
            ps.append(self.w_t)
        if self.cat_proj is not None and self.variant.base == "tempoqr" \
                and self.variant.supervision != "none":
            ps.append(self.cat_proj)
        ps += self.text_encoder.parameters()
        return ps

    def named_parameters(self):
        named = {"w_b": self.w_b, "w_e": self.w_e, "w_t": self.w_t,
                 "p_e": self.p_e, "p_t": self.p_t}
        if self.cat_proj is not None:
            named["cat_proj"] = self.cat_proj
        named["text.tokens"] = self.text_encoder.token_table
        for i, layer in enumerate(self.text_encoder.layers):
            for j, p in enumerate(layer.parameters()):
                named[f"text.layer{i}.p{j}"] = p
        for i, layer in enumerate(self.fusion.layers):
            for j, p in enumerate(layer.parameters()):
                named[f"fusion.layer{i}.p{j}"] = p
        return named

    def num_entities(self):
        return self.store.num_entities

    def _roles(self, questions):
        subj, obj, ts = [], [], []
        for q in questions:
            ents = q.entity_ids()
            if not ents:
                raise ValueError("question has no annotated entity")
            subj.append(ents[0])
            obj.append(ents[1] if len(ents) > 1 else -1)
            ts.append(q.timestamp_id() if q.timestamp_id() is not None else -1)
        return np.array(subj), np.array(obj), np.array(ts)

    def _hard_years(self, q):
        key = tuple(sorted(q.entity_ids()))
        if key not in self._hard_cache:
            self._hard_cache[key] = resolve_hard_years(self.kg, set(key))
        return self._hard_cache[key]

    def _hard_scope_rows(self, questions):
        """(B, D) t1 and t2 arrays from the hard/ablation source."""
        t1 = np.empty((len(questions), self.store.dim))
        t2 = np.empty_like(t1)
        kind = self.variant.time_ablation
        for i, q in enumerate(questions):
            if kind:
                scope = ablation_time_scope(kind, self.kg, self.store,
                                            set(q.entity_ids()),
                                            seed=self.config.seed,
                                            random_table=self._random_table)
                t1[i], t2[i] = np.asarray(scope.t1), np.asarray(scope.t2)
            else:
                lo, hi = self._hard_years(q)
                i1 = self.store.no_time_id if lo is None else self.kg.year_id(lo)
                i2 = self.store.no_time_id if hi is None else self.kg.year_id(hi)
                t1[i] = self.store.timestamps[i1]
                t2[i] = self.store.timestamps[i2]
        return t1, t2

    def _time_scope(self, questions, qb, subj, obj):
        sup = self.variant.supervision
        if sup == "none":
            return None
        hard = soft = None
        if sup in ("hard", "ensemble"):
            h1, h2 = self._hard_scope_rows(questions)
            hard = (Tensor(h1), Tensor(h2))
        if sup in ("soft", "ensemble"):
            obj_filled = np.where(obj >= 0, obj, self.store.dummy_entity_id)
            scope = soft_time_scope(self.store, qb.x[:, 0, :], self.w_t,
                                    subj, obj_filled)
            soft = (scope.t1, scope.t2)
        if sup == "hard":
            return hard
        if sup == "soft":
            return soft
        return hard[0] + soft[0], hard[1] + soft[1]

    # -- scoring ----------------------------------------------------------

    def _phi_entities(self, e_role, rel, t):
        """Re(<e_role, rel * t, conj(e)>) against every real entity."""
        d2 = self.store.dim // 2
        sr, si = e_role[:, :d2], e_role[:, d2:]
        rr, ri = rel[:, :d2], rel[:, d2:]
        tr, ti = t[:, :d2], t[:, d2:]
        wr = sr * rr - si * ri
        wi = sr * ri + si * rr
        wr, wi = wr * tr - wi * ti, wr * ti + wi * tr
        cand = self._ent_real
        return wr @ cand[:, :d2].T + wi @ cand[:, d2:].T

    def _phi_timestamps(self, e_s, rel, e_o):
        d2 = self.store.dim // 2
        sr, si = e_s[:, :d2], e_s[:, d2:]
        rr, ri = rel[:, :d2], rel[:, d2:]
        or_, oi = e_o[:, :d2], e_o[:, d2:]
        wr = sr * rr - si * ri
        wi = sr * ri + si * rr
        zr = wr * or_ + wi * oi   # w * conj(o)
        zi = wi * or_ - wr * oi
        return (zr @ self._ts_const[:, : d2].T) - (zi @ self._ts_const[:, d2:].T)

    def score_batch(self, questions):
        """Concatenated entity-then-timestamp logits, shape (B, |E| + |T|)."""
        batch = QuestionBatch.build(questions, self.text_encoder)
        qb = enc.encode_context(batch, self.text_encoder, self.w_b)
        subj, obj, ts_ann = self._roles(questions)
        scope = self._time_scope(questions, qb, subj, obj)

        base = self.variant.base
        if base == "cronkgqa":
            q = qb.x[:, 0, :]
        else:
            qe = enc.inject_entities(qb, batch, self.store, self.w_e)
            if base == "tempoqr" and scope is not None:
                qt = enc.fuse_time(qe, scope[0], scope[1],
                                   mode=self.variant.fusion, cat_proj=self.cat_proj)
            else:
                qt = enc.TokenMatrix("QT", qe.x, qe.pad_mask, qe.entity_mask)
            _, q = enc.fuse_information(qt, self.fusion)

        e_s = self._ent_const[subj]
        e_o_ent = self._ent_const[np.where(obj >= 0, obj, subj)]
        e_o_time = self._ent_const[np.where(obj >= 0, obj,
                                            self.store.dummy_entity_id)]

        # Eq. 9 timestamp slot: annotated year, else t1 + t2 for the
        # supervised baselines, else the NO_TIME sentinel
        ts_idx = np.where(ts_ann >= 0, ts_ann, self.store.no_time_id)
        t_slot = self._ts_const[ts_idx]
        if base != "tempoqr" and scope is not None:
            override = scope[0] + scope[1]
            t_slot = where((ts_ann >= 0)[:, None], t_slot, override)

        rel_e = q @ self.p_e.T
        rel_t = q @ self.p_t.T
        if self.variant.decoder == "dot":
            ent_scores = (rel_e + t_slot) @ self._ent_real.T
            time_scores = rel_t @ self._ts_const.T
        else:
            ent_scores = self._phi_entities(e_s, rel_e, t_slot).maximum(
                self._phi_entities(e_o_ent, rel_e, t_slot))
            time_scores = self._phi_timestamps(e_s, rel_t, e_o_time)
        return concat([ent_scores, time_scores], axis=1)

    def gold_ids(self, q):
        """Gold answers in the concatenated id space."""
        if not q.answers:
            raise ValueError("question has an empty gold set")
        off = 0 if q.answer_kind == "entity" else self.store.num_entities
        return sorted(a + off for a in q.answers)

    def predict(self, question):
        """Full ranking of entity and timestamp ids, best first, ties by id."""
        scores = self.score_batch([question]).data[0]
        order = np.lexsort((np.arange(len(scores)), -scores))
        return list(order), scores

    def snapshot(self):
        return [p.data.copy() for p in self.parameters()]

    def restore(self, snap):
        for p, d in zip(self.parameters(), snap):
            p.data = d.copy()


def score_entities(store, q, p_e, subject_id=None, object_id=None,
                   timestamp_id=None, time_override=None):
    """Eq.-style entity scores for a single question vector q (numpy side).

    Max over subject/object roles of the factorization score against every
    real entity; a missing role is filled with the present one. The time
    slot is the annotated timestamp if given, else time_override, else the
    NO_TIME sentinel.
    """
    if subject_id is None and object_id is None:
        raise ValueError("entity scoring needs at least one annotated entity")
    s = subject_id if subject_id is not None else object_id
    o = object_id if object_id is not None else subject_id
    rel = p_e.data @ np.asarray(q) if isinstance(p_e, Tensor) else p_e @ np.asarray(q)
    if time_override is not None and timestamp_id is None:
        t = np.asarray(time_override)
    else:
        t = store.timestamp(store.no_time_id if timestamp_id is None else timestamp_id)
    d2 = store.dim // 2

    def phi(e_role):
        wr = e_role[:d2] * rel[:d2] - e_role[d2:] * rel[d2:]
        wi = e_role[:d2] * rel[d2:] + e_role[d2:] * rel[:d2]
        wr, wi = wr * t[:d2] - wi * t[d2:], wr * t[d2:] + wi * t[:d2]
        cand = store.entities[: store.num_entities]
        return cand[:, :d2] @ wr + cand[:, d2:] @ wi

    return np.maximum(phi(store.entity(s)), phi(store.entity(o)))


def score_timestamps(store, q, p_t, subject_id=None, object_id=None):
    """Timestamp scores for a single question vector q: the factorization
    score with P_T q as the virtual relation; missing roles use the dummy
    sentinel entity."""
    rel = p_t.data @ np.asarray(q) if isinstance(p_t, Tensor) else p_t @ np.asarray(q)
    s = store.dummy_entity_id if subject_id is None else subject_id
    o = store.dummy_entity_id if object_id is None else object_id
    d2 = store.dim // 2
    es, eo = store.entity(s), store.entity(o)
    wr = es[:d2] * rel[:d2] - es[d2:] * rel[d2:]
    wi = es[:d2] * rel[d2:] + es[d2:] * rel[:d2]
    zr = wr * eo[:d2] + wi * eo[d2:]
    zi = wi * eo[:d2] - wr * eo[d2:]
    return store.timestamps[:, :d2] @ zr - store.timestamps[:, d2:] @ zi


def qa_loss(scores, gold, rng=None):
    """Cross-entropy of one uniformly sampled gold id under softmax(scores).

    scores: Tensor (C,) or (B, C); gold: id set (single example) or list of
    id sets (batch).
    """
    if isinstance(gold, (set, frozenset, list)) and gold and isinstance(next(iter(gold)), (int, np.integer)):
        golds = [gold]
    else:
        golds = list(gold)
    if not golds:
        raise ValueError("empty gold set")
    picks = []
    for g in golds:
        g = sorted(g)
        if not g:
            raise ValueError("empty gold set")
        picks.append(g[0] if rng is None else g[int(rng.integers(len(g)))])
    if scores.data.ndim == 1:
        return softmax_cross_entropy(scores, picks[0])
    return softmax_cross_entropy(scores, np.array(picks))


def hits_at_1(model, questions, batch_size=512):
    hits = 0
    for lo in range(0, len(questions), batch_size):
        chunk = questions[lo:lo + batch_size]
        scores = model.score_batch(chunk).data
        for row, q in zip(scores, chunk):
            best = np.lexsort((np.arange(len(row)), -row))[0]
            hits += int(best in set(model.gold_ids(q)))
    return hits / max(len(questions), 1)


def train_qa(model, train_qs, dev_qs, epochs=None, verbose=False):
    """Adam training with epoch-level model selection on dev Hits@1.

    When avg_start >= 0 the returned weights are an exponential tail
    average of the per-epoch parameters from that epoch on, which damps
    the oscillation of individual snapshots at high learning rates;
    otherwise the best-dev snapshot is restored.

    The frozen TKG embeddings are checksummed before and after; any drift
    is a bug and raises.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    before = model.store.checksum()
    if epochs == 0:
        return model, []
    opt = Adam(model.parameters(), lr=cfg.lr)
    rng = np.random.default_rng(cfg.seed + 10)
    best = (-1.0, model.snapshot())
    avg = None
    history = []
    for epoch in range(epochs):
        opt.lr = cfg.lr * cfg.lr_decay ** epoch
        order = rng.permutation(len(train_qs))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            chunk = [train_qs[i] for i in order[lo:lo + cfg.batch_size]]
            scores = model.score_batch(chunk)
            loss = qa_loss(scores, [set(model.gold_ids(q)) for q in chunk], rng)
            loss.backward()
            opt.step()
            total += loss.item() * len(chunk)
        if cfg.avg_start >= 0 and epoch >= cfg.avg_start:
            if avg is None:
                avg = model.snapshot()
            else:
                for a, p in zip(avg, model.parameters()):
                    a *= cfg.avg_beta
                    a += (1 - cfg.avg_beta) * p.data
        dev_h1 = hits_at_1(model, dev_qs) if dev_qs else 0.0
        history.append({"epoch": epoch, "loss": total / len(train_qs),
                        "dev_hits1": dev_h1})
        if verbose:
            print(f"epoch {epoch}: loss {total / len(train_qs):.4f} dev@1 {dev_h1:.3f}")
        if dev_qs and dev_h1 > best[0]:
            best = (dev_h1, model.snapshot())
    if avg is not None:
        model.restore(avg)
    elif dev_qs and best[0] >= 0:
        model.restore(best[1])
    if model.store.checksum() != before:
        raise RuntimeError("frozen embedding store changed during QA training")
    return model, history


# -- checkpoints ----------------------------------------------------------------

CKPT_MAGIC = "TQRMODEL v1"


def save_checkpoint(model, path):
    cfg = model.config
    header = (f"{CKPT_MAGIC} {model.variant.name} {model.store.dim} "
              f"{cfg.dim_text} {cfg.fusion_layers} {cfg.fusion_heads}\n")
    named = model.named_parameters()
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(f"{len(named)}\n".encode("ascii"))
        for name, p in sorted(named.items()):
            shape = " ".join(map(str, p.data.shape))
            fh.write(f"{name} {shape}\n".encode("ascii"))
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(model, path):
    named = model.named_parameters()
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(CKPT_MAGIC):
            raise ValueError(f"bad checkpoint header {header!r}")
        count = int(fh.readline())
        for _ in range(count):
            meta = fh.readline().decode("ascii").split()
            name, shape = meta[0], tuple(map(int, meta[1:]))
            size = int(np.prod(shape)) if shape else 1
            buf = fh.read(size * 8)
            arr = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
            if name in named:
                named[name].data = arr
    return model
