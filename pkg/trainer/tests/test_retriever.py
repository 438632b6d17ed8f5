import numpy as np

from lexret_trainer.retriever import (
    TextEncoder,
    export_embeddings,
    hard_negative_triples,
    train_retriever_contrastive,
    train_retriever_mnrl,
    write_embedding_file,
)
from lexret_trainer.tokenizer import WordTokenizer
from lexret_trainer.train import TrainConfig
from conftest import tiny_corpus


def small_config(**overrides):
    values = dict(epochs=5, batch_size=8, learning_rate=1e-2, embedding_dim=32, seed=0)
    values.update(overrides)
    return TrainConfig.retriever_defaults(**values)


class TestEncoder:
    def test_unit_rows(self):
        tok = WordTokenizer.from_texts(["a b c", "d e"])
        encoder = TextEncoder(tok, dim=16, seed=0)
        rows = encoder.encode(["a b", "d", "c e a"])
        assert np.allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-5)

    def test_deterministic_given_seed(self):
        tok = WordTokenizer.from_texts(["a b c"])
        first = TextEncoder(tok, dim=16, seed=3).encode(["a b"])
        second = TextEncoder(tok, dim=16, seed=3).encode(["a b"])
        assert np.array_equal(first, second)


class TestTraining:
    def _pairs(self, n=32):
        passages, queries = tiny_corpus(n)
        return [(q["context"], passages[q["target_id"]]) for q in queries]

    def test_mnrl_loss_decreases(self):
        encoder, curve = train_retriever_mnrl(small_config(), self._pairs())
        assert curve[-1] < curve[0]

    def test_mnrl_learns_alignment(self):
        pairs = self._pairs()
        encoder, _ = train_retriever_mnrl(small_config(epochs=30), pairs)
        queries = encoder.encode([q for q, _ in pairs])
        passages = encoder.encode([p for _, p in pairs])
        sims = queries @ passages.T
        top1 = (sims.argmax(axis=1) == np.arange(len(pairs))).mean()
        assert top1 > 0.9

    def test_contrastive_loss_decreases(self):
        pairs = self._pairs()
        triples = []
        for i, (query, passage) in enumerate(pairs):
            triples.append((query, passage, 1))
            triples.append((query, pairs[(i + 1) % len(pairs)][1], 0))
        encoder, curve = train_retriever_contrastive(small_config(), triples)
        assert curve[-1] < curve[0]


class TestHardNegatives:
    def test_triples_from_run_file(self, tmp_path):
        passages, queries = tiny_corpus(4)
        run_path = tmp_path / "run.trec"
        run_path.write_text(
            "q0 Q0 p1 1 2.0 demo\n"   # top non-gold for q0
            "q0 Q0 p0 2 1.5 demo\n"
            "q1 Q0 p1 1 2.0 demo\n"   # gold first, negative is next rank
            "q1 Q0 p3 2 1.0 demo\n"
        )
        triples = hard_negative_triples(run_path, queries[:2], passages)
        by_label = {(q, y) for q, _, y in triples}
        assert (queries[0]["context"], 1) in by_label
        assert (queries[0]["context"], 0) in by_label
        negatives = {q: p for q, p, y in triples if y == 0}
        assert negatives[queries[0]["context"]] == passages["p1"]
        assert negatives[queries[1]["context"]] == passages["p3"]


class TestExport:
    def test_file_size_arithmetic(self, tmp_path):
        tok = WordTokenizer.from_texts(["a b c"])
        encoder = TextEncoder(tok, dim=8, seed=0)
        out = tmp_path / "pool.emb1"
        n = export_embeddings(encoder, [("p0", "a"), ("p1", "b"), ("p2", "c")], out)
        assert n == 3
        assert out.stat().st_size == 4 + 9 + 3 * 8 * 4

    def test_engine_loads_export(self, tmp_path):
        # Cross-package contract: the engine's loader accepts the file
        # and sees unit rows in handle order.
        from lexret.dense import load_embeddings

        passages, _ = tiny_corpus(6)
        tok = WordTokenizer.from_texts(passages.values())
        encoder = TextEncoder(tok, dim=16, seed=1)
        out = tmp_path / "pool.emb1"
        export_embeddings(encoder, list(passages.items()), out)
        store = load_embeddings(out)
        assert store.n == 6 and store.dim == 16
        assert np.allclose(np.linalg.norm(store.matrix, axis=1), 1.0, atol=1e-4)
        direct = encoder.encode(list(passages.values()))
        assert np.allclose(store.matrix, direct, atol=1e-6)

    def test_re_export_deterministic(self, tmp_path):
        passages, _ = tiny_corpus(5)
        tok = WordTokenizer.from_texts(passages.values())
        encoder = TextEncoder(tok, dim=16, seed=2)
        a, b = tmp_path / "a.emb1", tmp_path / "b.emb1"
        export_embeddings(encoder, list(passages.items()), a)
        export_embeddings(encoder, list(passages.items()), b)
        assert a.read_bytes() == b.read_bytes()

    def test_rejects_unnormalized_rows(self, tmp_path):
        import pytest
        from lexret_trainer import TrainerError

        with pytest.raises(TrainerError):
            write_embedding_file(np.ones((2, 4), dtype=np.float32), tmp_path / "bad.emb1")
