import numpy as np
import pytest
from conftest import random_documents, tiny_model

from mdbert import encoder as enc
from mdbert import numcore as nc
from mdbert.errors import EmptyGroupError, ShapeError
from mdbert.textprep import CLS, PAD, Document


def run(model, docs, rng=None):
    return enc.forward(docs, model.params, model.config.encoder, rng)


class TestTokenLevel:
    def test_shapes(self, rng):
        model = tiny_model()
        docs = random_documents(rng, 3, 4, 6, 30, ragged=True)
        out = run(model, docs)
        n_sent = sum(len(d.sentences) for d in docs)
        s = max(len(d.sentences) for d in docs)
        assert out["token_emb"].shape[0] == n_sent and out["token_emb"].shape[2] == 16
        assert out["sentence_post"].shape == (3, s, 16) and out["doc_emb"].shape == (3, 16)

    def test_padding_never_reaches_real_tokens(self, rng):
        model = tiny_model()
        cfg = model.config.encoder
        ids = np.array([[CLS, PAD, PAD, PAD]])
        batch = enc.SentenceBatch(ids, (ids != PAD).astype(np.int8), np.array([0]), np.array([0]))
        a = enc.encode_tokens(batch, model.params, cfg).data
        ids2 = np.array([[CLS, 7, 9, 11]])
        batch2 = enc.SentenceBatch(ids2, batch.token_mask, np.array([0]), np.array([0]))
        b = enc.encode_tokens(batch2, model.params, cfg).data
        assert np.array_equal(a[0, 0], b[0, 0])

    def test_sentences_are_independent(self, rng):
        model = tiny_model()
        batch = enc.make_sentence_batch(random_documents(rng, 1, 5, 6, 30), 62)
        perm = np.array([3, 0, 4, 1, 2])
        shuffled = enc.SentenceBatch(batch.token_ids[perm], batch.token_mask[perm], batch.doc_index[perm],
                                     batch.sent_position[perm])
        a = enc.encode_tokens(batch, model.params, model.config.encoder).data
        b = enc.encode_tokens(shuffled, model.params, model.config.encoder).data
        assert np.array_equal(a[perm], b)

    def test_too_long_sentence(self, rng):
        model = tiny_model(max_tokens_per_sentence=4)
        with pytest.raises(ShapeError):
            run(model, random_documents(rng, 1, 1, 6, 30))

    def test_token_table_gradient(self, rng):
        model = tiny_model(sentence_layers=0)
        docs = random_documents(rng, 2, 2, 5, 30)
        w = rng.standard_normal((2, 16))

        def loss():
            return nc.tsum(run(model, docs)["doc_emb"] * w)

        err = nc.finite_difference_check(loss, [model.params["token_tf.embed.tok"]], max_coords=40,
                                         rng=np.random.default_rng(0))
        assert err < 1e-4


class TestPooling:
    def test_one_token_sentence(self, rng):
        model = tiny_model()
        out = run(model, [Document("a", [[CLS]], np.ones(4))])
        assert np.array_equal(out["sentence_emb"].data[0], out["token_emb"].data[0, 0])

    def test_padded_and_unpadded_sentence_bit_exact(self, rng):
        model = tiny_model()
        short = Document("a", [[CLS, 8, 9]], np.ones(4))
        long = Document("b", [[CLS] + list(range(5, 25))], np.ones(4))
        alone = run(model, [short])["sentence_emb"].data[0]
        padded = run(model, [short, long])["sentence_emb"].data[0]
        assert np.array_equal(alone, padded)

    def test_empty_sentence_group(self):
        with pytest.raises(EmptyGroupError):
            enc.pool_sentences(nc.Tensor(np.ones((1, 3, 2))), np.zeros((1, 3)))


class TestRebatch:
    def test_single(self):
        db = enc.rebatch(nc.Tensor(np.ones((1, 2))), [0], [0])
        assert db.sent_embeddings.shape == (1, 1, 2) and db.sent_mask.tolist() == [[1]]

    def test_interleaved_documents(self):
        x = np.arange(8.0).reshape(4, 2)
        # flat order: doc0 pos2, doc1 pos0, doc0 pos0, doc0 pos1
        db = enc.rebatch(nc.Tensor(x), [0, 1, 0, 0], [2, 0, 0, 1])
        assert db.sent_mask.tolist() == [[1, 1, 1], [1, 0, 0]]
        assert db.sent_embeddings.data[0].tolist() == [x[2].tolist(), x[3].tolist(), x[0].tolist()]
        assert db.sent_embeddings.data[1].tolist() == [x[1].tolist(), [0, 0], [0, 0]]

    def test_flat_order_does_not_matter(self, rng):
        x = rng.standard_normal((5, 3))
        doc, pos = np.array([0, 0, 1, 1, 1]), np.array([0, 1, 0, 1, 2])
        a = enc.rebatch(nc.Tensor(x), doc, pos)
        perm = rng.permutation(5)
        b = enc.rebatch(nc.Tensor(x[perm]), doc[perm], pos[perm])
        assert np.array_equal(a.sent_embeddings.data, b.sent_embeddings.data)

    def test_duplicate_pair(self):
        with pytest.raises(ShapeError):
            enc.rebatch(nc.Tensor(np.ones((2, 2))), [0, 0], [1, 1])


class TestSentenceLevel:
    def test_zero_layers_is_identity(self, rng):
        model = tiny_model(sentence_layers=0)
        out = run(model, random_documents(rng, 2, 3, 4, 30))
        assert out["sentence_post"] is out["sentence_pre"]

    def test_padding_count_invariance(self, rng):
        """A 3-sentence document alone (S=3) and next to an 8-sentence one (S=8)."""
        model = tiny_model()
        a = random_documents(rng, 1, 3, 5, 30)[0]
        b = random_documents(rng, 1, 8, 7, 30)[0]
        alone = run(model, [a])
        mixed = run(model, [a, b])
        assert np.array_equal(alone["doc_emb"].data[0], mixed["doc_emb"].data[0])
        assert np.array_equal(alone["sentence_post"].data[0], mixed["sentence_post"].data[0, :3])

    def test_no_leak_across_documents(self, rng):
        model = tiny_model()
        docs = random_documents(rng, 3, 3, 5, 30, ragged=True)
        base = run(model, docs)["doc_emb"].data
        blank = [docs[0], Document("z", [[CLS] * len(s) for s in docs[1].sentences], docs[1].labels), docs[2]]
        other = run(model, blank)["doc_emb"].data
        assert np.array_equal(base[[0, 2]], other[[0, 2]])

    def test_document_order_equivariance(self, rng):
        model = tiny_model()
        docs = random_documents(rng, 4, 3, 5, 30, ragged=True)
        perm = [2, 0, 3, 1]
        a = run(model, docs)["doc_emb"].data
        b = run(model, [docs[i] for i in perm])["doc_emb"].data
        np.testing.assert_array_equal(a[perm], b)

    def test_sentence_order_matters_with_positions(self, rng):
        model = tiny_model()
        doc = random_documents(rng, 1, 4, 5, 30)[0]
        flipped = Document("r", doc.sentences[::-1], doc.labels)
        a, b = run(model, [doc])["doc_emb"].data, run(model, [flipped])["doc_emb"].data
        assert not np.allclose(a, b)

    def test_sentence_order_irrelevant_without_positions(self, rng):
        model = tiny_model(sentence_layers=0)
        doc = random_documents(rng, 1, 4, 5, 30)[0]
        flipped = Document("r", doc.sentences[::-1], doc.labels)
        np.testing.assert_allclose(run(model, [doc])["doc_emb"].data, run(model, [flipped])["doc_emb"].data,
                                   rtol=1e-13, atol=1e-15)

    def test_identical_documents(self, rng):
        model = tiny_model()
        doc = random_documents(rng, 1, 3, 5, 30)[0]
        out = run(model, [doc, Document("copy", doc.sentences, doc.labels)])["doc_emb"].data
        assert np.array_equal(out[0], out[1])

    def test_dropout_only_in_training(self, rng):
        model = tiny_model(dropout_rate=0.3)
        docs = random_documents(rng, 2, 3, 5, 30)
        e1, e2 = run(model, docs)["doc_emb"].data, run(model, docs)["doc_emb"].data
        t = run(model, docs, rng=np.random.default_rng(0))["doc_emb"].data
        assert np.array_equal(e1, e2) and not np.array_equal(e1, t)
