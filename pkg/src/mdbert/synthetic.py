"""Small keyword-driven multi-label corpus for smoke tests and toy training runs.

Every label owns a few keywords; a document mentions at least one keyword of
each of its labels, scattered among filler words across several sentences.
Each label's description is a short sentence made of its keywords.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from .textprep import RESERVED, Document, LabelVocab, Vocab, tokenize


@dataclass
class SyntheticCorpus:
    vocab: Vocab
    label_vocab: LabelVocab
    train: list
    dev: list
    texts: dict  # document id -> list of sentence strings


def _words(n, rng):
    consonants, vowels = "bdfgklmnprstvz", "aeiou"
    out, seen = [], set()
    while len(out) < n:
        w = "".join(rng.choice(list(consonants)) + rng.choice(list(vowels)) for _ in range(2))
        if w not in seen:
            seen.add(w)
            out.append(w)
    return out


def make_corpus(n_docs=20, n_labels=8, vocab_size=50, keywords_per_label=2, n_dev=None, seed=0,
                sentences=(4, 10), tokens=(4, 8), labels_per_doc=(1, 3), hits=2, mixed=0.5, max_len=62):
    """Build train and dev documents from one generator.

    ``vocab_size`` counts the reserved tokens. ``n_dev`` defaults to
    ``n_docs``; dev documents are fresh draws, not copies of training ones.
    """
    rng = np.random.default_rng(seed)
    n_words = vocab_size - len(RESERVED)
    n_kw = n_labels * keywords_per_label
    if n_words <= n_kw:
        raise ValueError("vocab_size too small for the requested keywords")
    words = _words(n_words, rng)
    keywords = [words[i * keywords_per_label:(i + 1) * keywords_per_label] for i in range(n_labels)]
    filler = words[n_kw:]
    names = [f"L{i}" for i in range(n_labels)]
    label_vocab = LabelVocab((names[i], " ".join(keywords[i])) for i in range(n_labels))
    vocab = Vocab(words)

    texts = {}

    def draw(prefix, count):
        docs = []
        for d in range(count):
            k = int(rng.integers(labels_per_doc[0], labels_per_doc[1] + 1))
            labs = sorted(rng.choice(n_labels, size=k, replace=False).tolist())
            n_sent = int(rng.integers(sentences[0], sentences[1] + 1))
            n_sent = max(n_sent, k)
            # each label gets a guaranteed sentence; the rest are mixed or pure filler
            owners = labs + [None] * (n_sent - k)
            owners = [owners[i] for i in rng.permutation(n_sent)]
            sents = []
            for owner in owners:
                length = int(rng.integers(tokens[0], tokens[1] + 1))
                toks = list(rng.choice(filler, size=length))
                if owner is None and rng.random() < mixed:
                    owner = labs[int(rng.integers(len(labs)))]
                if owner is not None:
                    for pos in rng.choice(length, size=min(hits, length), replace=False):
                        toks[pos] = keywords[owner][int(rng.integers(keywords_per_label))]
                sents.append(" ".join(toks))
            y = np.zeros(n_labels, dtype=np.float32)
            y[labs] = 1.0
            doc_id = f"{prefix}{d:03d}"
            texts[doc_id] = sents
            docs.append(Document(doc_id, [tokenize(s, vocab, max_len) for s in sents], y))
        return docs

    train = draw("train", n_docs)
    dev = draw("dev", n_docs if n_dev is None else n_dev)
    return SyntheticCorpus(vocab, label_vocab, train, dev, texts)


def write_jsonl(path, docs, corpus):
    """Write documents in the ``{"id", "sentences", "labels"}`` corpus format."""
    names = corpus.label_vocab.names
    with open(path, "w", encoding="utf-8") as fh:
        for d in docs:
            labs = [names[i] for i in np.nonzero(d.labels)[0]]
            fh.write(json.dumps({"id": d.id, "sentences": corpus.texts[d.id], "labels": labs}) + "\n")


def write_corpus(directory, corpus):
    """Write ``train.jsonl``, ``dev.jsonl``, ``vocab.txt`` and ``labels.tsv`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_jsonl(os.path.join(directory, "train.jsonl"), corpus.train, corpus)
    write_jsonl(os.path.join(directory, "dev.jsonl"), corpus.dev, corpus)
    with open(os.path.join(directory, "vocab.txt"), "w", encoding="utf-8") as fh:
        fh.write(corpus.vocab.to_text())
    with open(os.path.join(directory, "labels.tsv"), "w", encoding="utf-8") as fh:
        fh.write(corpus.label_vocab.to_text())
