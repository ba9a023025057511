"""Classification heads: label-wise attention over sentences, and a pooled linear head."""

import numpy as np

from . import numcore as nc
from .encoder import attention_bias
from .errors import EmptyGroupError, ShapeError


def init_label_attention(store, num_labels, hidden_dim, rng, prefix="head.attn"):
    store.add(f"{prefix}.w", nc.truncated_normal(rng, (num_labels, hidden_dim), 0.02, store.dtype))
    store.add(f"{prefix}.v", nc.truncated_normal(rng, (num_labels, hidden_dim), 0.02, store.dtype))
    store.add(f"{prefix}.b", np.zeros(num_labels))


def init_pooled(store, num_labels, hidden_dim, rng, prefix="head.pooled"):
    store.add(f"{prefix}.w", nc.truncated_normal(rng, (num_labels, hidden_dim), 0.02, store.dtype))
    store.add(f"{prefix}.b", np.zeros(num_labels))


def label_attention_scores(h, mask, w_attn, v, b):
    """Per-class attention over the sentences of each document.

    For class ``l``: ``a_l = softmax(H w_l)`` over the unmasked sentences,
    ``u_l = a_l^T H`` and ``p_l = sigmoid(v_l . u_l + b_l)``.

    Returns ``(probs (D, L), attention (D, L, S))``; the attention is a Tensor
    whose ``.data`` can be exported for explanations.
    """
    mask = np.asarray(mask)
    if h.ndim != 3 or mask.shape != h.shape[:2]:
        raise ShapeError(f"label attention: H {h.shape} vs mask {mask.shape}")
    if w_attn.shape[1] != h.shape[2] or v.shape != w_attn.shape or b.shape != (w_attn.shape[0],):
        raise ShapeError("label attention parameters do not match the embedding size")
    empty = ~(mask != 0).any(axis=1)
    if empty.any():
        raise EmptyGroupError(f"documents {np.nonzero(empty)[0].tolist()} have no unmasked sentence")
    logits = nc.transpose(nc.matmul(h, nc.transpose(w_attn, (1, 0))), (0, 2, 1))  # (D, L, S)
    attn = nc.softmax(logits, axis=-1, mask_bias=attention_bias(mask, h.dtype)[:, 0])
    u = nc.matmul(attn, h)  # (D, L, E)
    score = nc.tsum(u * v, axis=-1) + b
    return nc.sigmoid(score), attn


def pooled_scores(doc_emb, weight, bias):
    """``sigmoid(doc_emb @ weight.T + bias)``."""
    if weight.shape[1] != doc_emb.shape[-1]:
        raise ShapeError(f"pooled head: weight {weight.shape} vs embeddings {doc_emb.shape}")
    return nc.sigmoid(nc.linear(doc_emb, nc.transpose(weight, (1, 0)), bias))


def top_attended(attn_row, mask_row, k=3):
    """Indices and weights of the ``k`` most attended real sentences (ties: lower index)."""
    n = int((np.asarray(mask_row) != 0).sum())
    a = np.asarray(attn_row)[:n]
    order = np.argsort(-a, kind="mergesort")[:k]
    return [(int(i), float(a[i])) for i in order]
