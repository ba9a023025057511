"""Weighted multi-label loss, description augmentation and the two-stage training loop."""

import csv
import io
import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from . import numcore as nc
from .errors import DataError, NumericError, ShapeError
from .model import pack_batches
from .textprep import Document, tokenize

logger = logging.getLogger(__name__)

CLAMP = 1e-7
FROZEN_PREFIX = "token_tf."
LOG_COLUMNS = ["epoch", "stage", "loss_doc", "loss_desc", "dev_micro_f1", "dev_macro_f1", "improved", "best_epoch"]


@dataclass
class LossConfig:
    w_doc: float = 1.0
    w_desc: float = 1.0

    def __post_init__(self):
        for name in ("w_doc", "w_desc"):
            w = getattr(self, name)
            if w < 1.0:
                raise ValueError(f"{name}={w}: positive weights must be >= 1")
            if w > 5.0:
                warnings.warn(f"{name}={w} is outside the usual range [1, 5]", stacklevel=2)


@dataclass
class TrainSchedule:
    frozen_epochs: int = 3
    lr: float = 1e-5
    weight_decay: float = 0.01
    sentence_budget: int = 128
    patience: int = 3
    max_epochs: int = 30
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.frozen_epochs < 0:
            raise ValueError("frozen_epochs must be >= 0")
        if self.max_epochs < 1 or self.sentence_budget < 1:
            raise ValueError("max_epochs and sentence_budget must be positive")


def weighted_bce(probs, labels, w=1.0):
    """Positive-weighted binary cross-entropy: summed over classes, averaged over rows.

    ``-sum_l [w * y_l * log(p_l) + (1 - y_l) * log(1 - p_l)]`` with ``p``
    clamped to ``[1e-7, 1 - 1e-7]``.
    """
    probs = nc.as_tensor(probs)
    y = np.asarray(labels, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise ShapeError(f"weighted_bce: probs {probs.shape} vs labels {y.shape}")
    p = nc.clamp(probs, CLAMP, 1.0 - CLAMP)
    pos = nc.log(p) * (np.asarray(w, dtype=probs.dtype) * y)
    neg = nc.log(1.0 - p) * (1.0 - y)
    per_row = nc.tsum(pos + neg, axis=-1)
    return -nc.mean(per_row)


def combined_loss(doc_loss, desc_loss=None):
    """Document loss plus description loss; either term may be absent."""
    if desc_loss is None:
        return doc_loss
    if doc_loss is None:
        return desc_loss
    return doc_loss + desc_loss


def make_description_corpus(label_vocab, vocab, max_len=62):
    """One single-sentence, one-hot document per label that has a description.

    Returns ``(documents, skipped)`` where ``skipped`` counts labels without one.
    """
    docs, skipped = [], 0
    n = len(label_vocab)
    for idx, (name, desc) in enumerate(zip(label_vocab.names, label_vocab.descriptions)):
        if not desc or not desc.strip():
            skipped += 1
            continue
        y = np.zeros(n, dtype=np.float32)
        y[idx] = 1.0
        docs.append(Document(f"desc:{name}", [tokenize(desc, vocab, max_len)], y))
    if skipped:
        logger.warning("%d labels have no description and are not augmented", skipped)
    return docs, skipped


class EarlyStopping:
    """Tracks the best score; ``should_stop`` once ``patience`` epochs pass without a strict improvement."""

    def __init__(self, patience):
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.bad_epochs = 0
        self.epoch = 0

    def update(self, score):
        self.epoch += 1
        if score > self.best:
            self.best = score
            self.best_epoch = self.epoch
            self.bad_epochs = 0
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.bad_epochs >= self.patience


def average_predictions(prob_matrices):
    """Elementwise mean of probability matrices.

    Uses the running-mean update ``m += (x - m) / k`` so that identical
    members reproduce the member exactly.
    """
    if not prob_matrices:
        raise ValueError("average_predictions needs at least one matrix")
    mats = [np.asarray(p, dtype=np.float64) for p in prob_matrices]
    shape = mats[0].shape
    if any(m.shape != shape for m in mats):
        raise ShapeError("average_predictions: matrices differ in shape")
    out = mats[0].copy()
    for k, m in enumerate(mats[1:], start=2):
        out += (m - out) / k
    return np.clip(out, 0.0, 1.0)


def label_matrix(documents, num_labels=None):
    if not documents:
        return np.zeros((0, num_labels or 0), dtype=np.float32)
    return np.stack([d.labels for d in documents]).astype(np.float32)


@dataclass
class TrainResult:
    best_epoch: int
    best_score: float
    epochs_run: int
    log: list = field(default_factory=list)

    def log_csv(self):
        return format_log(self.log)


def format_log(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r[c] if not isinstance(r[c], float) else f"{r[c]:.6f}" for c in LOG_COLUMNS])
    return buf.getvalue()


def _batch_loss(model, batch, loss_cfg, rng):
    docs = [d for d, _ in batch]
    is_desc = np.array([flag for _, flag in batch])
    probs = model.forward(docs, rng=rng)["probs"]
    labels = label_matrix(docs)
    terms = {}
    for key, rows, w in (("doc", np.nonzero(~is_desc)[0], loss_cfg.w_doc),
                         ("desc", np.nonzero(is_desc)[0], loss_cfg.w_desc)):
        if rows.size:
            sub = probs if rows.size == len(docs) else nc.take_rows(probs, rows)
            terms[key] = weighted_bce(sub, labels[rows], w)
    return combined_loss(terms.get("doc"), terms.get("desc")), terms


def train(model, train_docs, dev_docs, desc_docs=(), schedule=None, loss_cfg=None, out_dir=None, log_path=None):
    """Two-stage training with early stopping on dev micro-F1.

    Stage 1 (the first ``frozen_epochs`` epochs) freezes every parameter under
    ``token_tf.``; stage 2 trains everything. Each epoch shuffles documents and
    description documents together and packs them into sentence-budgeted
    batches. The best parameters by dev micro-F1 are restored on return.
    """
    schedule = schedule or TrainSchedule()
    loss_cfg = loss_cfg or LossConfig()
    if not dev_docs:
        raise DataError("train needs a non-empty dev split for early stopping")
    if not train_docs:
        raise DataError("train needs a non-empty training split")
    rng = nc.make_rng(schedule.seed)
    state = nc.AdamWState(lr=schedule.lr, weight_decay=schedule.weight_decay)
    items = [(d, False) for d in train_docs] + [(d, True) for d in desc_docs]
    dev_labels = label_matrix(dev_docs)
    stopper = EarlyStopping(schedule.patience)
    best_state = model.params.state_dict()
    rows = []
    epoch = 0
    for epoch in range(1, schedule.max_epochs + 1):
        stage = 1 if epoch <= schedule.frozen_epochs else 2
        model.params.set_frozen({FROZEN_PREFIX} if stage == 1 else set())
        order = rng.permutation(len(items))
        shuffled = [items[i] for i in order]
        sums = {"doc": [0.0, 0], "desc": [0.0, 0]}
        for batch in _pack_items(shuffled, schedule.sentence_budget):
            loss, terms = _batch_loss(model, batch, loss_cfg, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                ids = [d.id for d, _ in batch]
                raise NumericError(f"non-finite loss at epoch {epoch} (lr={schedule.lr}); batch documents: {ids}")
            loss.backward()
            nc.adamw_step(model.params, state)
            for key, t in terms.items():
                sums[key][0] += float(t.data)
                sums[key][1] += 1
        dev_probs = model.predict(dev_docs, budget=schedule.sentence_budget, threads=schedule.threads)
        micro = metrics.f1(dev_probs, dev_labels, averaging="micro")
        macro = metrics.f1(dev_probs, dev_labels, averaging="macro")
        improved = stopper.update(micro)
        if improved:
            best_state = model.params.state_dict()
            if out_dir:
                model.save(os.path.join(out_dir, f"epoch{epoch:03d}.mdb"))
        rows.append({
            "epoch": epoch,
            "stage": stage,
            "loss_doc": sums["doc"][0] / max(sums["doc"][1], 1),
            "loss_desc": sums["desc"][0] / max(sums["desc"][1], 1),
            "dev_micro_f1": micro,
            "dev_macro_f1": macro,
            "improved": int(improved),
            "best_epoch": stopper.best_epoch,
        })
        logger.info("epoch %d stage %d loss %.4f dev micro-F1 %.4f", epoch, stage, rows[-1]["loss_doc"], micro)
        if log_path:
            nc.atomic_write(log_path, format_log(rows))
        if stage == 2 and stopper.should_stop:
            break
    model.params.set_frozen(set())
    model.params.load_state_dict(best_state)
    if out_dir:
        model.save(os.path.join(out_dir, "best.mdb"))
    return TrainResult(stopper.best_epoch, float(stopper.best), epoch, rows)


def _pack_items(items, budget):
    wrapped = [_Item(d, flag) for d, flag in items]
    return [[(it.doc, it.flag) for it in batch] for batch in pack_batches(wrapped, budget)]


class _Item:
    __slots__ = ("doc", "flag", "sentences")

    def __init__(self, doc, flag):
        self.doc = doc
        self.flag = flag
        self.sentences = doc.sentences
