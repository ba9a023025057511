"""Name standardization by top-1 retrieval: a BM25 index and cosine search over embeddings."""

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import kernels, metrics
from .encoder import single_sentence_documents
from .errors import DataError
from .textprep import pre_tokenize, tokenize

K1 = 1.2
B = 0.75


@dataclass
class SearchBase:
    ids: list
    names: list
    groups: list

    def __post_init__(self):
        if not self.names:
            raise DataError("search base is empty")
        if list(self.ids) != list(range(len(self.ids))):
            raise DataError("search base ids must be dense 0..M-1 in order")

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_names(cls, names, groups=None):
        names = list(names)
        return cls(list(range(len(names))), names, list(groups) if groups is not None else list(range(len(names))))

    @classmethod
    def from_csv(cls, path):
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "group_id", "name"} <= set(reader.fieldnames):
                raise DataError(f"{path}: expected header id,group_id,name")
            for lineno, row in enumerate(reader, 2):
                try:
                    rows.append((int(row["id"]), int(row["group_id"]), row["name"]))
                except (TypeError, ValueError):
                    raise DataError(f"{path}:{lineno}: id and group_id must be integers") from None
        rows.sort()
        return cls([r[0] for r in rows], [r[2] for r in rows], [r[1] for r in rows])


def word_tokens(text):
    """Lowercased word tokens; punctuation is dropped."""
    return [t for t in pre_tokenize(text) if t[0].isalnum() or t[0] == "_"]


@dataclass
class Bm25Index:
    """Inverted index with CSR postings sorted by indication id."""

    terms: dict  # term -> term id
    term_ptr: np.ndarray
    post_ids: np.ndarray
    post_tf: np.ndarray
    doc_len: np.ndarray
    df: np.ndarray
    avg_len: float
    k: float = K1
    b: float = B

    @property
    def n_docs(self):
        return int(self.doc_len.size)

    def idf(self):
        m = float(self.n_docs)
        return np.log(1.0 + (m - self.df + 0.5) / (self.df + 0.5))

    def query_ids(self, tokens):
        return np.array([self.terms.get(t, -1) for t in tokens], dtype=np.int64)


def bm25_build(base, tokenizer=word_tokens, k=K1, b=B):
    names = base.names if isinstance(base, SearchBase) else list(base)
    if not names:
        raise DataError("cannot index an empty search base")
    terms = {}
    postings = []  # per term: {doc: count}
    doc_len = np.zeros(len(names), dtype=np.float64)
    for i, name in enumerate(names):
        toks = tokenizer(name)
        doc_len[i] = len(toks)
        for t in toks:
            tid = terms.setdefault(t, len(terms))
            if tid == len(postings):
                postings.append({})
            postings[tid][i] = postings[tid].get(i, 0) + 1
    ptr = np.zeros(len(terms) + 1, dtype=np.int64)
    ptr[1:] = np.cumsum([len(p) for p in postings])
    ids = np.empty(ptr[-1], dtype=np.int64)
    tf = np.empty(ptr[-1], dtype=np.float64)
    for tid, plist in enumerate(postings):
        docs = sorted(plist)
        ids[ptr[tid]:ptr[tid + 1]] = docs
        tf[ptr[tid]:ptr[tid + 1]] = [plist[d] for d in docs]
    df = np.diff(ptr).astype(np.float64)
    avg = float(doc_len.mean())
    return Bm25Index(terms, ptr, ids, tf, doc_len, df, avg, k, b)


def bm25_score(index, query_tokens):
    """Scores of every indication; tokens unknown to the base contribute nothing."""
    q = index.query_ids(query_tokens)
    if index.avg_len == 0.0:
        return np.zeros(index.n_docs)
    return kernels.bm25_scores(index.term_ptr, index.post_ids, index.post_tf, index.doc_len, index.avg_len, q,
                               index.idf(), index.k, index.b, index.n_docs)


def bm25_top1(index, query, tokenizer=word_tokens):
    """``(best id, best score, zero_score)``; ties go to the lowest id."""
    scores = bm25_score(index, tokenizer(query) if isinstance(query, str) else query)
    best = int(np.argmax(scores))
    return best, float(scores[best]), bool(scores[best] == 0.0)


def cosine_matrix(queries, base, query_names=None, base_names=None):
    q = np.asarray(queries, dtype=np.float64)
    c = np.asarray(base, dtype=np.float64)
    for mat, labels in ((q, query_names), (c, base_names)):
        norms = np.linalg.norm(mat, axis=1)
        bad = np.nonzero(norms == 0.0)[0]
        if bad.size:
            who = labels[bad[0]] if labels is not None else int(bad[0])
            raise DataError(f"zero-norm embedding for {who!r}")
    qn = q / np.linalg.norm(q, axis=1, keepdims=True)
    cn = c / np.linalg.norm(c, axis=1, keepdims=True)
    return qn @ cn.T


def embed_search(model, base, queries, vocab, max_len=62):
    """Top-1 base id and similarity per query using first-pooling sentence embeddings."""
    def embed(strings):
        docs = single_sentence_documents([tokenize(s, vocab, max_len) for s in strings])
        return np.stack([e[0] for e in model.embed(docs, level="sentence")])

    sims = cosine_matrix(embed(queries), embed(base.names), queries, base.names)
    best = np.argmax(sims, axis=1)
    return [(int(j), float(sims[i, j])) for i, j in enumerate(best)]


def load_ground_truth(path):
    """``{"query": str, "groups": [ids]}`` lines -> ordered list of (query, set of group ids)."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                query, groups = rec["query"], set(int(g) for g in rec["groups"])
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: expected {{\"query\": ..., \"groups\": [...]}}") from None
            if not groups:
                raise DataError(f"{path}:{lineno}: empty ground-truth set")
            out.append((query, groups))
    return out


@dataclass
class HitReport:
    hit_rate: float
    auc: float  # None when all outcomes agree
    hits: list


def top1_auc(hits, truth, base):
    """Hit rate and rank AUC of the binary hit outcomes against the top-1 similarity.

    ``hits`` is a list of ``(base id, score)`` aligned with ``truth``, a list of
    ``(query, set of group ids)``.
    """
    if len(hits) != len(truth):
        raise DataError("every query needs ground truth")
    known = set(base.groups)
    outcomes = []
    for (idx, _), (query, groups) in zip(hits, truth):
        if not groups:
            raise DataError(f"missing ground truth for {query!r}")
        if not groups <= known:
            raise DataError(f"ground truth for {query!r} references unknown groups {sorted(groups - known)}")
        outcomes.append(base.groups[idx] in groups)
    y = np.array(outcomes, dtype=bool)
    scores = np.array([s for _, s in hits], dtype=np.float64)
    return HitReport(float(y.mean()) if y.size else 0.0, metrics.binary_auc(scores, y), outcomes)
