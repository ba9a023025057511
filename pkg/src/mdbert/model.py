"""Encoder plus task head, with checkpoint round-tripping."""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from . import encoder as enc
from . import heads
from . import numcore as nc
from .errors import DataError

HEADS = ("label_attention", "pooled")


@dataclass
class ModelConfig:
    encoder: enc.EncoderConfig
    num_labels: int
    head: str = "label_attention"
    head_input: str = "post"

    def __post_init__(self):
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head_input not in ("pre", "post"):
            raise ValueError("head_input must be 'pre' or 'post'")
        if self.num_labels <= 0:
            raise ValueError("num_labels must be positive")

    def to_text(self):
        lines = [f"{k} = {v}" for k, v in asdict(self.encoder).items()]
        lines += [f"num_labels = {self.num_labels}", f"head = {self.head}", f"head_input = {self.head_input}"]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        raw = {}
        for line in text.splitlines():
            if line.strip() and not line.lstrip().startswith("#"):
                key, _, value = line.partition("=")
                raw[key.strip()] = value.strip()
        try:
            enc_kwargs = {}
            for name, f in enc.EncoderConfig.__dataclass_fields__.items():
                if name in raw:
                    enc_kwargs[name] = _parse_value(raw[name], f.type)
            return cls(
                enc.EncoderConfig(**enc_kwargs),
                int(raw["num_labels"]),
                raw.get("head", "label_attention"),
                raw.get("head_input", "post"),
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise DataError(f"invalid model config in checkpoint: {exc}") from None


def _parse_value(value, typ):
    if typ in (bool, "bool"):
        return value.lower() in ("1", "true", "yes", "on")
    if typ in (int, "int"):
        return int(value)
    if typ in (float, "float"):
        return float(value)
    return value


def pack_batches(documents, budget):
    """Consecutive runs of documents holding at most ``budget`` sentences each.

    A document longer than the budget forms a batch on its own.
    """
    batches, cur, n = [], [], 0
    for doc in documents:
        k = len(doc.sentences)
        if cur and n + k > budget:
            batches.append(cur)
            cur, n = [], 0
        cur.append(doc)
        n += k
    if cur:
        batches.append(cur)
    return batches


class MDBert:
    def __init__(self, config, params):
        self.config = config
        self.params = params

    @classmethod
    def initialize(cls, config, seed=0, dtype=np.float32):
        rng = nc.make_rng(seed)
        store = nc.ParamStore(dtype)
        enc.init_encoder_params(store, config.encoder, rng)
        e = config.encoder.hidden_dim
        if config.head == "label_attention":
            heads.init_label_attention(store, config.num_labels, e, rng)
        else:
            heads.init_pooled(store, config.num_labels, e, rng)
        return cls(config, store)

    def forward(self, documents, rng=None):
        """Encoder outputs plus ``probs`` (D, L) and, for label attention, ``attention`` (D, L, S)."""
        cfg = self.config
        out = enc.forward(documents, self.params, cfg.encoder, rng)
        p = self.params
        if cfg.head == "label_attention":
            h = out["sentence_post"] if cfg.head_input == "post" else out["sentence_pre"]
            probs, attn = heads.label_attention_scores(h, out["sent_mask"], p["head.attn.w"], p["head.attn.v"],
                                                       p["head.attn.b"])
            out["attention"] = attn
        else:
            probs = heads.pooled_scores(out["doc_emb"], p["head.pooled.w"], p["head.pooled.b"])
        out["probs"] = probs
        return out

    def predict(self, documents, budget=128, threads=1, with_attention=False):
        """Eval-mode probabilities (D, L); optionally per-document attention maps."""
        batches = pack_batches(documents, budget)

        def run(batch):
            out = self.forward(batch)
            maps = None
            if with_attention and "attention" in out:
                a = out["attention"].data
                maps = [a[i, :, : int(out["sent_mask"][i].sum())] for i in range(len(batch))]
            return out["probs"].data, maps

        if threads and threads > 1 and len(batches) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(pool.map(run, batches))
        else:
            results = [run(b) for b in batches]
        if not results:
            return np.zeros((0, self.config.num_labels)), []
        probs = np.concatenate([r[0] for r in results], axis=0)
        maps = [m for r in results if r[1] is not None for m in r[1]] if with_attention else None
        return (probs, maps) if with_attention else probs

    def embed(self, documents, level="document", budget=128):
        """Eval-mode embeddings: ``document`` -> (D, E); ``sentence`` -> list of (n_i, E)."""
        docs_out = []
        for batch in pack_batches(documents, budget):
            out = enc.forward(batch, self.params, self.config.encoder)
            if level == "document":
                docs_out.extend(out["doc_emb"].data)
            else:
                flat = out["sentence_emb"].data
                idx = out["batch"].doc_index
                docs_out.extend(flat[idx == d] for d in range(len(batch)))
        return np.array(docs_out) if level == "document" else docs_out

    def save(self, path):
        nc.save_checkpoint(path, self.params, self.config.to_text())

    @classmethod
    def load(cls, path, dtype=np.float32):
        text, store = nc.load_checkpoint(path, dtype)
        config = ModelConfig.from_text(text)
        ref = cls.initialize(config, 0, dtype)
        if store.names() != ref.params.names():
            raise DataError(f"{path}: parameter layout does not match its config")
        return cls(config, store)
