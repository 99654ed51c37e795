"""Question encoding: text encoder, entity/time injection, fusion.

A question flows through four token-matrix stages:

  QB  text-only token embeddings, projected to the TKG width D
  QE  annotated token positions replaced by projected TKG embeddings
  QT  time embeddings t1/t2 folded into the entity positions
  Q   fused by a dedicated transformer encoder; its CLS column is the
      final question vector q

All stages are batched: x has shape (B, N+1, D) with the CLS column at
position 0 and padding masked out of attention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, attention, concat, embedding, layer_norm, where

CLS = "[CLS]"
UNK = "[UNK]"

STAGES = ("QB", "QE", "QT", "Q")

NEG_INF = -1e9


def _xavier(rng, rows, cols):
    scale = np.sqrt(2.0 / (rows + cols))
    return Tensor(rng.normal(0.0, scale, (rows, cols)), requires_grad=True)


def sinusoidal_positions(n, dim):
    pos = np.arange(n)[:, None]
    i = np.arange(dim)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class TransformerLayer:
    """Post-norm encoder layer: multi-head self-attention + position-wise FFN."""

    def __init__(self, dim, heads, rng, ff_mult=2):
        if dim % heads != 0:
            raise ValueError(f"width {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.wq = _xavier(rng, dim, dim)
        self.wk = _xavier(rng, dim, dim)
        self.wv = _xavier(rng, dim, dim)
        self.wo = _xavier(rng, dim, dim)
        self.w1 = _xavier(rng, dim, ff_mult * dim)
        self.b1 = Tensor(np.zeros(ff_mult * dim), requires_grad=True)
        self.w2 = _xavier(rng, ff_mult * dim, dim)
        self.b2 = Tensor(np.zeros(dim), requires_grad=True)
        self.ln1_g = Tensor(np.ones(dim), requires_grad=True)
        self.ln1_b = Tensor(np.zeros(dim), requires_grad=True)
        self.ln2_g = Tensor(np.ones(dim), requires_grad=True)
        self.ln2_b = Tensor(np.zeros(dim), requires_grad=True)

    def parameters(self):
        return [self.wq, self.wk, self.wv, self.wo, self.w1, self.b1,
                self.w2, self.b2, self.ln1_g, self.ln1_b, self.ln2_g, self.ln2_b]

    def _heads(self, x, w, b_, n):
        h, dh = self.heads, self.dim // self.heads
        y = x @ w
        return y.reshape(b_, n, h, dh).transpose(0, 2, 1, 3)

    def __call__(self, x, pad_mask=None):
        b_, n, d = x.shape
        q = self._heads(x, self.wq, b_, n)
        k = self._heads(x, self.wk, b_, n)
        v = self._heads(x, self.wv, b_, n)
        mask = None
        if pad_mask is not None:
            mask = np.where(pad_mask[:, None, None, :], 0.0, NEG_INF)
        att = attention(q, k, v, mask=mask)
        att = att.transpose(0, 2, 1, 3).reshape(b_, n, d)
        x = layer_norm(x + att @ self.wo, self.ln1_g, self.ln1_b)
        ff = ((x @ self.w1 + self.b1).relu()) @ self.w2 + self.b2
        return layer_norm(x + ff, self.ln2_g, self.ln2_b)


class TextEncoder:
    """Small trainable transformer over the question tokens.

    Stands in for a pretrained LM at desk scale; trained jointly with the
    QA loss while the TKG embeddings stay frozen. Sinusoidal positional
    encodings are added here and only here.
    """

    def __init__(self, vocab, dim=64, layers=2, heads=4, seed=0):
        self.vocab = [CLS, UNK] + [w for w in vocab if w not in (CLS, UNK)]
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.dim = dim
        rng = np.random.default_rng(seed)
        self.token_table = Tensor(rng.normal(0.0, 0.1, (len(self.vocab), dim)),
                                  requires_grad=True)
        self.layers = [TransformerLayer(dim, heads, rng) for _ in range(layers)]

    def parameters(self):
        ps = [self.token_table]
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps

    def token_ids(self, tokens):
        unk = self.index[UNK]
        return [self.index[CLS]] + [self.index.get(t, unk) for t in tokens]

    def __call__(self, ids, pad_mask=None):
        """ids: (B, N) int array -> (B, N, dim)."""
        ids = np.asarray(ids)
        x = embedding(self.token_table, ids)
        x = x + Tensor(sinusoidal_positions(ids.shape[1], self.dim))
        for layer in self.layers:
            x = layer(x, pad_mask)
        return x


class FusionEncoder:
    """Stack of transformer layers fusing context, entity and time signals.

    No positional encodings here; the injected entity/time vectors carry
    the position-like information. layers=0 is the identity (test mode).
    """

    def __init__(self, dim, layers=3, heads=4, seed=0):
        rng = np.random.default_rng(seed)
        self.dim = dim
        self.layers = [TransformerLayer(dim, heads, rng) for _ in range(layers)]

    def parameters(self):
        ps = []
        for layer in self.layers:
            ps.extend(layer.parameters())
        return ps

    def __call__(self, x, pad_mask=None):
        for layer in self.layers:
            x = layer(x, pad_mask)
        return x


@dataclass
class QuestionBatch:
    """Padded, annotation-aligned view of a list of AnnotatedQuestions.

    Position arrays all have shape (B, N+1) and include the CLS slot.
    """

    token_ids: np.ndarray
    pad_mask: np.ndarray        # True where a real token (or CLS) sits
    entity_mask: np.ndarray     # True at entity-annotated positions
    timestamp_mask: np.ndarray  # True at timestamp-annotated positions
    ann_entity_ids: np.ndarray  # entity id at entity positions, else 0
    ann_timestamp_ids: np.ndarray
    questions: list

    @classmethod
    def build(cls, questions, text_encoder):
        b = len(questions)
        ids = [text_encoder.token_ids(q.tokens) for q in questions]
        n = max(len(i) for i in ids)
        token_ids = np.zeros((b, n), dtype=np.int64)
        pad = np.zeros((b, n), dtype=bool)
        ent_m = np.zeros((b, n), dtype=bool)
        ts_m = np.zeros((b, n), dtype=bool)
        ent_id = np.zeros((b, n), dtype=np.int64)
        ts_id = np.zeros((b, n), dtype=np.int64)
        for i, (q, row) in enumerate(zip(questions, ids)):
            token_ids[i, :len(row)] = row
            pad[i, :len(row)] = True
            for a in q.annotations:
                lo, hi = a.span[0] + 1, a.span[1] + 1  # shift for CLS
                prev = ent_m[i, lo:hi] | ts_m[i, lo:hi]
                if prev.any():
                    raise ValueError(f"overlapping annotation spans in question {i}")
                if a.kind == "entity":
                    ent_m[i, lo:hi] = True
                    ent_id[i, lo:hi] = a.id
                else:
                    ts_m[i, lo:hi] = True
                    ts_id[i, lo:hi] = a.id
        return cls(token_ids, pad, ent_m, ts_m, ent_id, ts_id, list(questions))


@dataclass
class TokenMatrix:
    stage: str
    x: Tensor                 # (B, N+1, D)
    pad_mask: np.ndarray
    entity_mask: np.ndarray

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")


def encode_context(batch, text_encoder, w_b):
    """QB = W_B * encoder(tokens); w_b is (D, D_B)."""
    if batch.token_ids.shape[1] == 0:
        raise ValueError("empty question batch")
    h = text_encoder(batch.token_ids, batch.pad_mask)
    qb = h @ w_b.T
    return TokenMatrix("QB", qb, batch.pad_mask, batch.entity_mask)


def inject_entities(qb, batch, store, w_e):
    """Replace annotated positions with W_E-projected TKG embeddings."""
    if qb.stage != "QB":
        raise ValueError(f"inject_entities expects stage QB, got {qb.stage}")
    ent = embedding(Tensor(store.entities), batch.ann_entity_ids) @ w_e.T
    ts = embedding(Tensor(store.timestamps), batch.ann_timestamp_ids) @ w_e.T
    x = where(batch.entity_mask[:, :, None], ent, qb.x)
    x = where(batch.timestamp_mask[:, :, None], ts, x)
    return TokenMatrix("QE", x, qb.pad_mask, qb.entity_mask)


def fuse_time(qe, t1, t2, mode="sum", cat_proj=None):
    """Fold the time embeddings t1, t2 (B, D) into the entity positions.

    sum: entity columns += t1 + t2
    cat: entity columns <- [column; t1; t2] @ cat_proj.T (cat_proj is D x 3D)
    att: t1, t2 appended as two extra always-visible tokens
    """
    if qe.stage != "QE":
        raise ValueError(f"fuse_time expects stage QE, got {qe.stage}")
    if mode == "sum":
        bump = (t1 + t2).reshape(t1.shape[0], 1, t1.shape[1])
        x = qe.x + bump * Tensor(qe.entity_mask[:, :, None].astype(float))
        return TokenMatrix("QT", x, qe.pad_mask, qe.entity_mask)
    if mode == "cat":
        if cat_proj is None:
            raise ValueError("cat fusion requires the 3D->D projection")
        b, n, d = qe.x.shape
        t1b = t1.reshape(b, 1, d) + Tensor(np.zeros((b, n, d)))
        t2b = t2.reshape(b, 1, d) + Tensor(np.zeros((b, n, d)))
        wide = concat([qe.x, t1b, t2b], axis=2) @ cat_proj.T
        x = where(qe.entity_mask[:, :, None], wide, qe.x)
        return TokenMatrix("QT", x, qe.pad_mask, qe.entity_mask)
    if mode == "att":
        b, n, d = qe.x.shape
        x = concat([qe.x, t1.reshape(b, 1, d), t2.reshape(b, 1, d)], axis=1)
        pad = np.concatenate([qe.pad_mask, np.ones((b, 2), dtype=bool)], axis=1)
        ent = np.concatenate([qe.entity_mask, np.zeros((b, 2), dtype=bool)], axis=1)
        return TokenMatrix("QT", x, pad, ent)
    raise ValueError(f"unknown fusion mode {mode!r}")


def fuse_information(qt, fusion):
    """Q = f(QT); returns (Q, q) with q the CLS column (B, D)."""
    if qt.stage != "QT":
        raise ValueError(f"fuse_information expects stage QT, got {qt.stage}")
    x = fusion(qt.x, qt.pad_mask)
    q = x[:, 0, :]
    return TokenMatrix("Q", x, qt.pad_mask, qt.entity_mask), q
