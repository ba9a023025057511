"""Corpus ingestion: sentence segmentation, subword tokenization, statistics."""

import csv
import io
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
PAD, UNK, CLS, SEP, MASK = range(5)

_SPECIAL_RE = r"\[(?:PAD|UNK|CLS|SEP|MASK)\]"
_PIECE_RE = re.compile(rf"({_SPECIAL_RE})|(\w+)|([^\w\s])")
# "<digits>." opening the text, a line, or following a sentence terminator.
_BULLET_RE = re.compile(r"(^|[.?!;:]\s+)(\s*)(\d+)\.(?=\s)", re.M)
_BOUNDARY_RE = re.compile(r"[.?!](\s+|$)")


class Vocab:
    """Subword vocabulary with the five reserved ids pinned at 0..4."""

    def __init__(self, tokens):
        ordered = list(RESERVED)
        seen = set(ordered)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                ordered.append(tok)
        self.tokens = ordered
        self.index = {tok: i for i, tok in enumerate(ordered)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self.index

    def id(self, tok):
        return self.index.get(tok, UNK)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls(line.rstrip("\n") for line in fh if line.strip())

    def to_text(self):
        return "".join(tok + "\n" for tok in self.tokens)


class LabelVocab:
    def __init__(self, entries):
        self.names = []
        self.descriptions = []
        self.index = {}
        for name, desc in entries:
            if name in self.index:
                raise DataError(f"duplicate label {name!r}")
            self.index[name] = len(self.names)
            self.names.append(name)
            self.descriptions.append(desc or None)

    def __len__(self):
        return len(self.names)

    @classmethod
    def from_file(cls, path):
        entries = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line.strip():
                    continue
                name, _, desc = line.partition("\t")
                entries.append((name.strip(), desc.strip() or None))
        return cls(entries)

    def to_text(self):
        return "".join(f"{n}\t{d}\n" if d else f"{n}\n" for n, d in zip(self.names, self.descriptions))


@dataclass
class Document:
    id: str
    sentences: list
    labels: np.ndarray
    source_fields: dict = None


@dataclass
class Limits:
    max_tokens_per_sentence: int = 62
    max_sentences_per_doc: int = 256


@dataclass
class IngestReport:
    records: int = 0
    kept: int = 0
    dropped_no_labels: int = 0
    dropped_empty: int = 0
    unknown_labels: Counter = field(default_factory=Counter)
    truncated_docs: int = 0
    truncated_sentences: int = 0


def segment(text):
    """Split free text into sentences with a small set of deterministic rules.

    Bullet markers such as ``"2. "`` become ``"2, "`` so they are not read as
    sentence ends; a split happens after ``.``, ``?`` or ``!`` when whitespace
    follows and the next character is uppercase, starts a bullet, or the text
    ends there.
    """
    if not text or not text.strip():
        return []
    bullets = set()

    def rewrite(m):
        bullets.add(m.start(3))
        return f"{m.group(1)}{m.group(2)}{m.group(3)},"

    text = _BULLET_RE.sub(rewrite, text)
    out, start = [], 0
    for m in _BOUNDARY_RE.finditer(text):
        nxt = m.end()
        if nxt < len(text) and not (text[nxt].isupper() or nxt in bullets):
            continue
        piece = text[start : m.start() + 1].strip()
        if piece:
            out.append(piece)
        start = nxt
    tail = text[start:].strip()
    if tail:
        out.append(tail)
    return out


def pre_tokenize(text):
    """Lowercased words and single punctuation marks; reserved tokens pass through."""
    out = []
    for special, word, punct in _PIECE_RE.findall(text):
        out.append(special or (word or punct).lower())
    return out


def word_pieces(word, vocab):
    """Greedy longest-prefix segmentation of one lowercased word into vocab ids.

    Non-initial pieces look for ``##``-prefixed continuations first; when no
    piece matches, a single character is tried bare, then [UNK] is emitted for
    it.
    """
    if word in RESERVED:
        return [vocab.index[word]]
    ids, pos, n = [], 0, len(word)
    while pos < n:
        prefix = "##" if pos else ""
        match = None
        for end in range(n, pos, -1):
            tok = prefix + word[pos:end]
            if tok in vocab.index:
                match = (vocab.index[tok], end)
                break
        if match is None:
            ch = word[pos]
            match = (vocab.index.get(ch, UNK), pos + 1)
        ids.append(match[0])
        pos = match[1]
    return ids


def tokenize(sentence, vocab, max_len):
    """``[CLS]`` followed by the sentence's subword ids, cut to ``max_len``."""
    if max_len < 2:
        raise ValueError("max_len must be at least 2")
    ids = [CLS]
    for word in pre_tokenize(sentence):
        ids.extend(word_pieces(word, vocab))
        if len(ids) >= max_len:
            break
    return ids[:max_len]


def _untruncated_length(sentence, vocab):
    return 1 + sum(len(word_pieces(w, vocab)) for w in pre_tokenize(sentence))


def decode(ids, vocab, skip_special=True):
    """Concatenate piece strings (``##`` stripped); reserved tokens dropped by default."""
    parts = []
    for i in ids:
        if skip_special and i < len(RESERVED):
            continue
        tok = vocab.tokens[i]
        parts.append(tok[2:] if tok.startswith("##") else tok)
    return "".join(parts)


def document_sentences(text, fields=None):
    """Sentence strings for a record's ``text`` value (string or field map).

    Fields other than the title are joined with ``[SEP]`` and segmented
    together; a title is kept as a single unsegmented sentence.
    """
    if isinstance(text, str):
        return segment(text)
    names = list(fields) if fields else list(text)
    sentences, pending = [], []

    def flush():
        if pending:
            sentences.extend(segment(" [SEP] ".join(pending)))
            pending.clear()

    for name in names:
        value = text.get(name)
        if not value or not str(value).strip():
            continue
        if name.lower() == "title":
            flush()
            sentences.append(" ".join(str(value).split()))
        else:
            pending.append(str(value).strip())
    flush()
    return sentences


def make_document(doc_id, sentences, label_names, vocab, label_vocab, limits, report=None, strict=True, where=""):
    """Tokenize and truncate one record. Returns None when it must be dropped."""
    report = report if report is not None else IngestReport()
    labels = np.zeros(len(label_vocab), dtype=np.float32)
    for name in label_names:
        idx = label_vocab.index.get(name)
        if idx is None:
            if strict:
                raise DataError(f"{where}unknown label {name!r}")
            report.unknown_labels[name] += 1
            continue
        labels[idx] = 1.0
    if not labels.any():
        report.dropped_no_labels += 1
        return None
    if not sentences:
        report.dropped_empty += 1
        return None
    if len(sentences) > limits.max_sentences_per_doc:
        report.truncated_docs += 1
        sentences = sentences[: limits.max_sentences_per_doc]
    token_lists = []
    for s in sentences:
        ids = tokenize(s, vocab, limits.max_tokens_per_sentence)
        if len(ids) == limits.max_tokens_per_sentence and _untruncated_length(s, vocab) > len(ids):
            report.truncated_sentences += 1
        token_lists.append(ids)
    return Document(str(doc_id), token_lists, labels)


def ingest(path, vocab, label_vocab, limits=None, fields=None, strict=True):
    """Read a JSON-lines corpus into Documents, in file order.

    Each record carries ``id``, ``labels`` and either ``text`` (a string or a
    map of named fields) or ``sentences`` (already split strings).
    """
    limits = limits or Limits()
    report = IngestReport()
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}: "
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{where}invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict) or "id" not in rec or "labels" not in rec:
                raise DataError(f"{where}record needs 'id' and 'labels'")
            if not isinstance(rec["labels"], list):
                raise DataError(f"{where}'labels' must be a list")
            report.records += 1
            if "sentences" in rec:
                if not isinstance(rec["sentences"], list):
                    raise DataError(f"{where}'sentences' must be a list of strings")
                sentences = [str(s).strip() for s in rec["sentences"] if str(s).strip()]
                source = None
            elif "text" in rec and isinstance(rec["text"], (str, dict)):
                sentences = document_sentences(rec["text"], fields)
                source = rec["text"] if isinstance(rec["text"], dict) else None
            else:
                raise DataError(f"{where}record needs 'text' or 'sentences'")
            doc = make_document(rec["id"], sentences, rec["labels"], vocab, label_vocab, limits, report, strict, where)
            if doc is not None:
                doc.source_fields = source
                docs.append(doc)
    report.kept = len(docs)
    if report.unknown_labels:
        logger.warning("skipped %d unknown label occurrences", sum(report.unknown_labels.values()))
    return docs, report


def stats(docs):
    """Population mean and std of sentences/doc, tokens/sentence and tokens/doc."""
    if not docs:
        raise DataError("stats of an empty corpus")
    sents = np.array([len(d.sentences) for d in docs], dtype=np.float64)
    toks = np.array([len(s) for d in docs for s in d.sentences], dtype=np.float64)
    per_doc = np.array([sum(len(s) for s in d.sentences) for d in docs], dtype=np.float64)
    return {
        "sentences_per_doc": (float(sents.mean()), float(sents.std())),
        "tokens_per_sentence": (float(toks.mean()), float(toks.std())) if toks.size else (0.0, 0.0),
        "tokens_per_doc": (float(per_doc.mean()), float(per_doc.std())),
    }


def stats_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["metric", "mean", "std"])
    for name, (m, s) in report.items():
        w.writerow([name, f"{m:.6f}", f"{s:.6f}"])
    return buf.getvalue()


def build_vocab(texts, max_size=30000):
    """Vocab of all seen characters (bare and ``##``) plus the most frequent words."""
    words = Counter()
    chars = set()
    for text in texts:
        for w in pre_tokenize(text):
            if w in RESERVED:
                continue
            words[w] += 1
            chars.update(w)
    tokens = []
    for ch in sorted(chars):
        tokens += [ch, "##" + ch]
    budget = max_size - len(RESERVED) - len(tokens)
    ranked = sorted((w for w in words if len(w) > 1), key=lambda w: (-words[w], w))
    tokens += ranked[: max(budget, 0)]
    return Vocab(tokens)


def corpus_texts(path, fields=None):
    """Every sentence string in a JSON-lines corpus, for vocabulary building."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if "sentences" in rec:
                yield from (str(s) for s in rec["sentences"])
            elif "text" in rec:
                yield from document_sentences(rec["text"], fields)
