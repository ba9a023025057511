"""Hierarchical document encoder.

Sentences from many documents are encoded together by a token-level
transformer and mean-pooled into sentence vectors. The re-batching step then
groups those vectors per document, a sentence-level transformer contextualizes
them, and a second mean-pool yields one vector per document.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from . import numcore as nc
from .errors import DataError, ShapeError
from .textprep import CLS, PAD


@dataclass
class EncoderConfig:
    vocab_size: int
    hidden_dim: int = 32
    num_heads: int = 4
    token_layers: int = 2
    sentence_layers: int = 2
    ffn_dim: int = 64
    max_tokens_per_sentence: int = 62
    max_sentences_per_doc: int = 256
    dropout_rate: float = 0.1
    sentence_positions: bool = True

    def __post_init__(self):
        for name in ("vocab_size", "hidden_dim", "num_heads", "token_layers", "ffn_dim",
                     "max_tokens_per_sentence", "max_sentences_per_doc"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.sentence_layers < 0:
            raise ValueError("sentence_layers must be >= 0")
        if self.hidden_dim % self.num_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class SentenceBatch:
    token_ids: np.ndarray  # (B_s, T) int
    token_mask: np.ndarray  # (B_s, T) 0/1
    doc_index: np.ndarray  # (B_s,)
    sent_position: np.ndarray  # (B_s,)


@dataclass
class DocumentBatch:
    sent_embeddings: nc.Tensor  # (D, S, E)
    sent_mask: np.ndarray  # (D, S)
    doc_ids: list


def init_layer_params(store, prefix, cfg, rng):
    e, f = cfg.hidden_dim, cfg.ffn_dim
    tn = lambda *shape: nc.truncated_normal(rng, shape, 0.02, store.dtype)  # noqa: E731
    for w in ("q", "k", "v", "o"):
        store.add(f"{prefix}.mhsa.w{w}", tn(e, e))
        store.add(f"{prefix}.mhsa.b{w}", np.zeros(e))
    store.add(f"{prefix}.ln1.g", np.ones(e))
    store.add(f"{prefix}.ln1.b", np.zeros(e))
    store.add(f"{prefix}.ffn.w1", tn(e, f))
    store.add(f"{prefix}.ffn.b1", np.zeros(f))
    store.add(f"{prefix}.ffn.w2", tn(f, e))
    store.add(f"{prefix}.ffn.b2", np.zeros(e))
    store.add(f"{prefix}.ln2.g", np.ones(e))
    store.add(f"{prefix}.ln2.b", np.zeros(e))


def init_encoder_params(store, cfg, rng):
    e = cfg.hidden_dim
    store.add("token_tf.embed.tok", nc.truncated_normal(rng, (cfg.vocab_size, e), 0.02, store.dtype))
    store.add("token_tf.embed.pos", nc.truncated_normal(rng, (cfg.max_tokens_per_sentence, e), 0.02, store.dtype))
    for i in range(cfg.token_layers):
        init_layer_params(store, f"token_tf.layer{i}", cfg, rng)
    if cfg.sentence_layers > 0 and cfg.sentence_positions:
        store.add("sent_tf.pos", nc.truncated_normal(rng, (cfg.max_sentences_per_doc, e), 0.02, store.dtype))
    for i in range(cfg.sentence_layers):
        init_layer_params(store, f"sent_tf.layer{i}", cfg, rng)
    return store


def attention_bias(mask, dtype):
    """(B, T) 0/1 mask -> (B, 1, 1, T) additive logits."""
    return np.where(np.asarray(mask) != 0, 0.0, nc.MASK_LOGIT).astype(dtype)[:, None, None, :]


def self_attention(x, mask, params, prefix, num_heads):
    """Multi-head self-attention over axis 1 of ``x`` (B, T, E); hidden keys get zero weight."""
    b, t, e = x.shape
    dh = e // num_heads
    p = lambda n: params[f"{prefix}.mhsa.{n}"]  # noqa: E731

    def heads(name):
        y = nc.linear(x, p("w" + name), p("b" + name))
        return nc.transpose(nc.reshape(y, (b, t, num_heads, dh)), (0, 2, 1, 3))

    q, k, v = heads("q"), heads("k"), heads("v")
    scores = nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    attn = nc.softmax(scores, axis=-1, mask_bias=attention_bias(mask, x.dtype))
    ctx = nc.reshape(nc.transpose(nc.matmul(attn, v), (0, 2, 1, 3)), (b, t, e))
    return nc.linear(ctx, p("wo"), p("bo"))


def encoder_layer(x, mask, params, prefix, cfg, rng=None):
    """Post-norm transformer block: MHSA, add & norm, GELU feed-forward, add & norm."""
    p = lambda n: params[f"{prefix}.{n}"]  # noqa: E731
    a = nc.dropout(self_attention(x, mask, params, prefix, cfg.num_heads), cfg.dropout_rate, rng)
    x = nc.layer_norm(x + a, p("ln1.g"), p("ln1.b"))
    h = nc.linear(nc.gelu(nc.linear(x, p("ffn.w1"), p("ffn.b1"))), p("ffn.w2"), p("ffn.b2"))
    h = nc.dropout(h, cfg.dropout_rate, rng)
    return nc.layer_norm(x + h, p("ln2.g"), p("ln2.b"))


def make_sentence_batch(documents, max_tokens):
    """Flatten the sentences of ``documents`` into one padded token batch."""
    rows, doc_index, positions = [], [], []
    for d, doc in enumerate(documents):
        if not doc.sentences:
            raise DataError(f"document {doc.id!r} has no sentences")
        for s, ids in enumerate(doc.sentences):
            if not 1 <= len(ids) <= max_tokens:
                raise ShapeError(f"document {doc.id!r} sentence {s}: length {len(ids)} outside [1, {max_tokens}]")
            rows.append(ids)
            doc_index.append(d)
            positions.append(s)
    t = max(len(r) for r in rows)
    token_ids = np.full((len(rows), t), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        token_ids[i, : len(r)] = r
    return SentenceBatch(token_ids, (token_ids != PAD).astype(np.int8), np.array(doc_index), np.array(positions))


def encode_tokens(batch, params, cfg, rng=None):
    ids = np.asarray(batch.token_ids)
    _, t = ids.shape
    if t > cfg.max_tokens_per_sentence:
        raise ShapeError(f"sentence length {t} exceeds max_tokens_per_sentence={cfg.max_tokens_per_sentence}")
    if ids.size and ids.max() >= cfg.vocab_size:
        raise ShapeError(f"token id {int(ids.max())} >= vocab size {cfg.vocab_size}")
    x = nc.embedding(params["token_tf.embed.tok"], ids)
    x = x + nc.embedding(params["token_tf.embed.pos"], np.arange(t))
    x = nc.dropout(x, cfg.dropout_rate, rng)
    for i in range(cfg.token_layers):
        x = encoder_layer(x, batch.token_mask, params, f"token_tf.layer{i}", cfg, rng)
    return x


def pool_sentences(token_emb, token_mask):
    return nc.masked_mean(token_emb, token_mask)


def rebatch(sent_embeddings, doc_index, sent_position, doc_ids=None):
    """Group flat sentence vectors (B_s, E) into a left-aligned (D, S, E) batch.

    Sentences of each document are ordered by position; slots past a
    document's last sentence are zero vectors with mask 0.
    """
    doc_index = np.asarray(doc_index)
    sent_position = np.asarray(sent_position)
    pairs = set(zip(doc_index.tolist(), sent_position.tolist()))
    if len(pairs) != len(doc_index):
        raise ShapeError("rebatch: duplicate (document, position) pair")
    docs = np.unique(doc_index)
    if doc_ids is None:
        n_docs = int(docs.max()) + 1
        if len(docs) != n_docs:
            raise ShapeError("rebatch: document indices must cover 0..D-1")
        doc_ids = list(range(n_docs))
    n_docs = len(doc_ids)
    order = np.lexsort((sent_position, doc_index))
    slot = np.empty(len(doc_index), dtype=np.int64)
    counts = np.zeros(n_docs, dtype=np.int64)
    for i in order:
        d = doc_index[i]
        slot[i] = counts[d]
        counts[d] += 1
    if np.any(counts == 0):
        raise ShapeError("rebatch: a document has no sentences")
    s = int(counts.max())
    flat = nc.scatter_rows(sent_embeddings, doc_index * s + slot, n_docs * s)
    mask = (np.arange(s)[None, :] < counts[:, None]).astype(np.int8)
    return DocumentBatch(nc.reshape(flat, (n_docs, s, sent_embeddings.shape[-1])), mask, list(doc_ids))


def encode_sentences(doc_batch, params, cfg, rng=None):
    x = doc_batch.sent_embeddings
    if cfg.sentence_layers == 0:
        return x
    s = x.shape[1]
    if s > cfg.max_sentences_per_doc:
        raise ShapeError(f"{s} sentences exceed max_sentences_per_doc={cfg.max_sentences_per_doc}")
    if "sent_tf.pos" in params:
        x = x + nc.embedding(params["sent_tf.pos"], np.arange(s))
    x = nc.dropout(x, cfg.dropout_rate, rng)
    for i in range(cfg.sentence_layers):
        x = encoder_layer(x, doc_batch.sent_mask, params, f"sent_tf.layer{i}", cfg, rng)
    return x


def pool_document(sent_contextual, sent_mask):
    return nc.masked_mean(sent_contextual, sent_mask)


def forward(documents, params, cfg, rng=None):
    """Run the full hierarchy and expose every semantic level.

    Returns a dict with ``token_emb`` (B_s, T, E), ``token_mask``,
    ``sentence_emb`` (B_s, E) from the first pooling, ``sentence_pre`` and
    ``sentence_post`` (D, S, E) around the sentence transformer,
    ``sent_mask`` (D, S), ``doc_emb`` (D, E) and the ``batch`` itself.
    """
    batch = make_sentence_batch(documents, cfg.max_tokens_per_sentence)
    tok = encode_tokens(batch, params, cfg, rng)
    sent = pool_sentences(tok, batch.token_mask)
    db = rebatch(sent, batch.doc_index, batch.sent_position, [d.id for d in documents])
    post = encode_sentences(db, params, cfg, rng)
    return {
        "batch": batch,
        "token_emb": tok,
        "token_mask": batch.token_mask,
        "sentence_emb": sent,
        "sentence_pre": db.sent_embeddings,
        "sentence_post": post,
        "sent_mask": db.sent_mask,
        "doc_emb": pool_document(post, db.sent_mask),
    }


def single_sentence_documents(token_lists):
    """Wrap token-id lists as one-sentence pseudo documents (for embedding search)."""
    from .textprep import Document

    out = []
    for i, ids in enumerate(token_lists):
        if not ids or ids[0] != CLS:
            ids = [CLS] + list(ids)
        out.append(Document(str(i), [list(ids)], np.zeros(0, dtype=np.float32)))
    return out
