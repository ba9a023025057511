import numpy as np
import pytest

from mdbert.encoder import EncoderConfig
from mdbert.model import MDBert, ModelConfig
from mdbert.textprep import CLS, Document


def random_documents(rng, n_docs, n_sent, n_tok, vocab_size, n_labels=4, ragged=False):
    """Documents of random token ids; ``ragged`` varies sentence and token counts."""
    docs = []
    for d in range(n_docs):
        k = int(rng.integers(1, n_sent + 1)) if ragged else n_sent
        sents = []
        for _ in range(k):
            t = int(rng.integers(1, n_tok + 1)) if ragged else n_tok
            sents.append([CLS] + rng.integers(5, vocab_size, size=t - 1).tolist())
        y = np.zeros(n_labels, dtype=np.float32)
        y[rng.choice(n_labels, size=int(rng.integers(1, n_labels + 1)), replace=False)] = 1.0
        docs.append(Document(f"d{d}", sents, y))
    return docs


def tiny_model(seed=0, dtype=np.float64, hidden_dim=16, token_layers=2, sentence_layers=2, num_labels=4,
               vocab_size=30, head="label_attention", dropout_rate=0.0, **enc):
    cfg = EncoderConfig(vocab_size=vocab_size, hidden_dim=hidden_dim, num_heads=2, token_layers=token_layers,
                        sentence_layers=sentence_layers, ffn_dim=2 * hidden_dim, dropout_rate=dropout_rate, **enc)
    return MDBert.initialize(ModelConfig(cfg, num_labels, head=head), seed=seed, dtype=dtype)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
