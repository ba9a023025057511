import numpy as np
import pytest
from conftest import random_documents, tiny_model

from mdbert import numcore as nc
from mdbert.errors import DataError
from mdbert.model import MDBert, ModelConfig, pack_batches
from mdbert.synthetic import make_corpus, write_corpus
from mdbert.textprep import LabelVocab, Vocab, ingest


class TestPackBatches:
    def test_budget(self, rng):
        docs = random_documents(rng, 6, 4, 3, 30, ragged=True)
        batches = pack_batches(docs, 5)
        assert [d for b in batches for d in b] == docs
        assert all(sum(len(d.sentences) for d in b) <= 5 or len(b) == 1 for b in batches)

    def test_oversized_document_alone(self, rng):
        docs = random_documents(rng, 3, 4, 3, 30)
        assert [len(b) for b in pack_batches(docs, 2)] == [1, 1, 1]


class TestModelConfig:
    def test_text_round_trip(self):
        cfg = tiny_model(head="pooled", sentence_layers=0).config
        assert ModelConfig.from_text(cfg.to_text()) == cfg

    def test_bad_values(self):
        with pytest.raises(ValueError):
            ModelConfig(tiny_model().config.encoder, 3, head="mlp")
        with pytest.raises(DataError):
            ModelConfig.from_text("hidden_dim = 8\n")


class TestPredict:
    def test_batching_and_threads_do_not_change_outputs(self, rng):
        model = tiny_model()
        docs = random_documents(rng, 7, 4, 5, 30, ragged=True)
        one = model.predict(docs, budget=1000)
        assert np.array_equal(one, model.predict(docs, budget=3))
        assert np.array_equal(one, model.predict(docs, budget=3, threads=4))

    def test_embed_levels(self, rng):
        model = tiny_model()
        docs = random_documents(rng, 3, 3, 4, 30, ragged=True)
        assert model.embed(docs).shape == (3, 16)
        sents = model.embed(docs, level="sentence")
        assert [s.shape[0] for s in sents] == [len(d.sentences) for d in docs]


class TestCheckpoint:
    def test_round_trip_predictions(self, tmp_path, rng):
        """Weights are stored as f32, so an f32 model round-trips exactly."""
        model = tiny_model(head="pooled", dtype=np.float32)
        path = str(tmp_path / "m.mdb")
        model.save(path)
        again = MDBert.load(path)
        docs = random_documents(rng, 3, 3, 4, 30)
        assert again.config == model.config
        assert np.array_equal(again.predict(docs), model.predict(docs))

    def test_layout_mismatch(self, tmp_path):
        model = tiny_model()
        store = nc.ParamStore(np.float64)
        for name, p in model.params.items():
            if not name.startswith("head."):
                store.add(name, p.data)
        path = str(tmp_path / "bad.mdb")
        nc.save_checkpoint(path, store, model.config.to_text())
        with pytest.raises(DataError, match="layout"):
            MDBert.load(path)


class TestSynthetic:
    def test_deterministic_and_labelled(self):
        a, b = make_corpus(seed=4), make_corpus(seed=4)
        assert [d.sentences for d in a.train] == [d.sentences for d in b.train]
        assert all(d.labels.sum() >= 1 for d in a.train + a.dev)
        assert len(a.vocab) == 50 and len(a.label_vocab) == 8

    def test_every_label_has_a_keyword_sentence(self):
        corpus = make_corpus(seed=2)
        for doc in corpus.train:
            text = " ".join(corpus.texts[doc.id]).split()
            for label in np.nonzero(doc.labels)[0]:
                keywords = corpus.label_vocab.descriptions[label].split()
                assert any(k in text for k in keywords)

    def test_written_files_reingest(self, tmp_path):
        corpus = make_corpus(n_docs=5, seed=1)
        write_corpus(str(tmp_path), corpus)
        vocab = Vocab.from_file(str(tmp_path / "vocab.txt"))
        labels = LabelVocab.from_file(str(tmp_path / "labels.tsv"))
        docs, _ = ingest(str(tmp_path / "train.jsonl"), vocab, labels)
        assert [d.sentences for d in docs] == [d.sentences for d in corpus.train]
        assert [d.labels.tolist() for d in docs] == [d.labels.tolist() for d in corpus.train]
