import math

import numpy as np
import pytest

from clozerank.embeddings import (
    EmbeddingTable,
    EmbedTrainConfig,
    char_ngram_buckets,
    compose,
    import_external_table,
    load_table,
    save_table,
    train_static_embeddings,
)
from clozerank.wordpiece import SPECIAL_TOKENS, SubwordVocab


def make_table(entries, dim):
    table = EmbeddingTable(dim)
    for token, vec in entries.items():
        table.add(token, np.array(vec, dtype=np.float32))
    return table


def make_vocab(words):
    return SubwordVocab(list(SPECIAL_TOKENS) + sorted(words))


class TestConfig:
    def test_reference_defaults(self):
        cfg = EmbedTrainConfig()
        assert cfg.dim == 300
        assert cfg.window == 5
        assert cfg.negatives == 5
        assert cfg.epochs == 5
        assert cfg.learning_rate == 0.05
        assert cfg.min_count == 5
        assert cfg.char_ngram_min == 3
        assert cfg.char_ngram_max == 6
        assert cfg.ngram_buckets == 2_000_000

    def test_validation(self):
        with pytest.raises(ValueError):
            EmbedTrainConfig(dim=0)
        with pytest.raises(ValueError):
            EmbedTrainConfig(window=0)
        with pytest.raises(ValueError):
            EmbedTrainConfig(learning_rate=0.0)
        with pytest.raises(ValueError):
            EmbedTrainConfig(char_ngram_min=6, char_ngram_max=3)
        with pytest.raises(ValueError):
            EmbedTrainConfig(char_ngram_min=-1)

    def test_zero_ngram_bounds_disable_hashing(self):
        assert not EmbedTrainConfig(char_ngram_min=0, char_ngram_max=0).ngrams_enabled
        assert EmbedTrainConfig().ngrams_enabled


class TestCompose:
    def test_single_token_is_identity(self):
        table = make_table({"a": [1.5, -2.0, 3.0]}, 3)
        out = compose(table, ["a"])
        assert np.array_equal(out.vector, np.array([1.5, -2.0, 3.0]))
        assert not out.flagged

    def test_mean_of_two(self):
        table = make_table({"a": [1, 0], "b": [0, 1]}, 2)
        assert np.array_equal(compose(table, ["a", "b"]).vector, [0.5, 0.5])

    def test_mean_of_three(self):
        table = make_table({"a": [2, 2], "b": [0, 0], "c": [4, -2]}, 2)
        assert np.array_equal(compose(table, ["a", "b", "c"]).vector, [2.0, 0.0])

    def test_empty_sequence_rejected(self):
        table = make_table({"a": [1, 0]}, 2)
        with pytest.raises(ValueError):
            compose(table, [])

    def test_missing_token_becomes_zero_and_flags(self):
        table = make_table({"a": [2, 4]}, 2)
        out = compose(table, ["a", "nope"])
        assert np.array_equal(out.vector, [1.0, 2.0])
        assert out.flagged
        assert out.missing == ("nope",)

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        entries = {f"t{i}": rng.normal(size=4) for i in range(6)}
        table = make_table(entries, 4)
        tokens = list(entries)
        fwd = compose(table, tokens).vector
        rev = compose(table, tokens[::-1]).vector
        assert np.allclose(fwd, rev, atol=1e-12)

    def test_scale_equivariance(self):
        rng = np.random.default_rng(6)
        entries = {f"t{i}": rng.normal(size=3) for i in range(4)}
        table = make_table(entries, 3)
        for alpha in (0.5, 2.0, 7.0):
            scaled = table.scaled(alpha)
            a = compose(scaled, list(entries)).vector
            b = alpha * compose(table, list(entries)).vector
            assert np.allclose(a, b, rtol=1e-6)


class TestTableIO:
    def test_roundtrip_within_serialized_precision(self, tmp_path):
        rng = np.random.default_rng(7)
        table = make_table({f"tok{i}": rng.normal(size=5) for i in range(9)}, 5)
        path = tmp_path / "t.vec"
        save_table(table, path)
        loaded = load_table(path)
        assert len(loaded) == len(table)
        for token in table.entries:
            assert np.max(np.abs(loaded.vector(token) - table.vector(token))) <= 1e-5

    def test_header_count_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("2 3\na 1 2 3\nb 1 2 3\nc 1 2 3\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_table(path)

    def test_single_row_table(self, tmp_path):
        path = tmp_path / "one.vec"
        values = " ".join(["0.25"] * 300)
        path.write_text(f"1 300\nbig {values}\n", encoding="utf-8")
        table = load_table(path)
        assert len(table) == 1
        assert table.dim == 300

    def test_row_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("2 3\na 1 2 3\nb 1 2\n", encoding="utf-8")
        with pytest.raises(ValueError, match="expected 3"):
            load_table(path)

    def test_duplicate_token_rejected(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("2 2\na 1 2\na 3 4\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_table(path)

    def test_malformed_header_rejected(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("banana\na 1 2\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_table(path)

    def test_non_numeric_value_rejected(self, tmp_path):
        path = tmp_path / "bad.vec"
        path.write_text("1 2\na 1 x\n", encoding="utf-8")
        with pytest.raises(ValueError):
            load_table(path)


class TestImport:
    def test_imported_table_is_usable(self, tmp_path):
        path = tmp_path / "hand.vec"
        path.write_text("2 4\nalpha 1 0 0 0\nbeta 0 1 0 0\n", encoding="utf-8")
        table = import_external_table(path)
        assert table.metadata["source"] == "imported"
        out = compose(table, ["alpha", "beta"])
        assert np.array_equal(out.vector, [0.5, 0.5, 0.0, 0.0])

    def test_coverage_fraction(self, tmp_path):
        words = [f"w{i}" for i in range(8)]
        vocab = make_vocab(words)  # 8 words + 2 specials = size 10
        path = tmp_path / "part.vec"
        rows = "\n".join(f"w{i} 1 0" for i in range(7))
        path.write_text(f"7 2\n{rows}\n", encoding="utf-8")
        table = import_external_table(path, expected_vocab=vocab)
        assert table.metadata["vocab_coverage"] == pytest.approx(0.7)

    def test_per_layer_files_import_independently(self, tmp_path):
        for layer in range(13):
            path = tmp_path / f"layer{layer:02d}.vec"
            path.write_text(f"1 2\nonly {layer} 1\n", encoding="utf-8")
        tables = [import_external_table(tmp_path / f"layer{i:02d}.vec")
                  for i in range(13)]
        assert [t.vector("only")[0] for t in tables] == list(range(13))


def cooccurrence_corpus(vocab):
    # aa and bb always share windows; cc and dd likewise; the pairs never mix.
    ab = [vocab.id_for("aa"), vocab.id_for("bb")] * 5
    cd = [vocab.id_for("cc"), vocab.id_for("dd")] * 5
    return [ab, cd] * 40


class TestTraining:
    def small_cfg(self, **kw):
        base = dict(dim=16, window=2, negatives=3, epochs=3, learning_rate=0.05,
                    min_count=1, char_ngram_min=0, char_ngram_max=0,
                    ngram_buckets=1000, seed=1)
        base.update(kw)
        return EmbedTrainConfig(**base)

    def test_vocabulary_closure(self):
        vocab = make_vocab(["t1", "t2"])
        corpus = [[vocab.id_for("t1"), vocab.id_for("t2")]]
        table = train_static_embeddings(corpus, vocab, self.small_cfg())
        assert sorted(table.entries) == ["t1", "t2"]

    def test_min_count_excludes_rare_tokens(self):
        vocab = make_vocab(["t1", "t2", "t3"])
        corpus = [[vocab.id_for("t1"), vocab.id_for("t2")]] * 5 \
            + [[vocab.id_for("t3"), vocab.id_for("t1")]]
        table = train_static_embeddings(corpus, vocab, self.small_cfg(min_count=2))
        assert "t3" not in table.entries
        assert {"t1", "t2"} <= set(table.entries)

    def test_empty_corpus_rejected(self):
        vocab = make_vocab(["t1"])
        with pytest.raises(ValueError):
            train_static_embeddings([], vocab, self.small_cfg())

    def test_out_of_range_token_id_rejected(self):
        vocab = make_vocab(["t1"])
        with pytest.raises(ValueError):
            train_static_embeddings([[99]], vocab, self.small_cfg())

    def test_deterministic_single_worker(self):
        vocab = make_vocab(["aa", "bb", "cc", "dd"])
        corpus = cooccurrence_corpus(vocab)
        t1 = train_static_embeddings(corpus, vocab, self.small_cfg(seed=9))
        t2 = train_static_embeddings(corpus, vocab, self.small_cfg(seed=9))
        for token in t1.entries:
            assert np.array_equal(t1.vector(token), t2.vector(token))

    def test_finite_vectors_across_seeds(self):
        vocab = make_vocab(["aa", "bb", "cc", "dd"])
        corpus = cooccurrence_corpus(vocab)
        for seed in range(1, 6):
            table = train_static_embeddings(corpus, vocab, self.small_cfg(seed=seed))
            for token in table.entries:
                assert np.all(np.isfinite(table.vector(token)))

    def test_cooccurring_tokens_end_up_closer(self):
        vocab = make_vocab(["aa", "bb", "cc", "dd"])
        corpus = cooccurrence_corpus(vocab)

        def cos(u, v):
            return float(np.dot(u, v) / (np.linalg.norm(u) * np.linalg.norm(v)))

        for seed in range(1, 6):
            table = train_static_embeddings(corpus, vocab, self.small_cfg(seed=seed))
            a, b, c = table.vector("aa"), table.vector("bb"), table.vector("cc")
            assert cos(a, b) > cos(a, c), f"seed {seed}"

    def test_ngram_switch_changes_vectors(self):
        vocab = make_vocab(["aa", "bb", "cc", "dd"])
        corpus = cooccurrence_corpus(vocab)
        plain = train_static_embeddings(corpus, vocab, self.small_cfg())
        hashed = train_static_embeddings(
            corpus, vocab, self.small_cfg(char_ngram_min=1, char_ngram_max=2))
        assert any(not np.array_equal(plain.vector(t), hashed.vector(t))
                   for t in plain.entries)

    def test_default_dim_accepted(self):
        vocab = make_vocab(["t1", "t2"])
        corpus = [[vocab.id_for("t1"), vocab.id_for("t2")]] * 6
        cfg = EmbedTrainConfig(min_count=1, epochs=1, seed=1,
                               char_ngram_min=0, char_ngram_max=0)
        table = train_static_embeddings(corpus, vocab, cfg)
        assert table.dim == 300


class TestNgramHashing:
    # published FNV-1a 32-bit reference values pin the hash choice
    FNV_VECTORS = {b"": 0x811C9DC5, b"a": 0xE40C292C,
                   b"abc": 0x1A47E90B, b"foobar": 0xBF9CF968}

    @staticmethod
    def fnv1a(data: bytes) -> int:
        h = 2166136261
        for byte in data:
            h ^= byte
            h = (h * 16777619) % (1 << 32)
        return h

    def test_reference_hash_vectors(self):
        from clozerank.embeddings import _fnv1a
        for data, expected in self.FNV_VECTORS.items():
            assert _fnv1a(data) == expected
            assert self.fnv1a(data) == expected

    def test_buckets_match_independent_enumeration(self):
        token, nmin, nmax, buckets = "##ing", 3, 6, 997
        wrapped = "<" + token + ">"
        expected = []
        for n in range(nmin, nmax + 1):
            for i in range(len(wrapped) - n + 1):
                expected.append(self.fnv1a(wrapped[i:i + n].encode("utf-8")) % buckets)
        assert char_ngram_buckets(token, nmin, nmax, buckets) == expected
        assert all(0 <= b < buckets for b in expected)

    def test_short_token_yields_fewer_grams(self):
        # wrapped "<ab>" has length 4: two 3-grams and one 4-gram
        assert len(char_ngram_buckets("ab", 3, 6, 100)) == 3


class TestTableValidation:
    def test_dimension_mismatch_rejected(self):
        table = EmbeddingTable(3)
        with pytest.raises(ValueError):
            table.add("a", np.zeros(2, dtype=np.float32))

    def test_nan_rejected(self):
        table = EmbeddingTable(2)
        with pytest.raises(ValueError):
            table.add("a", np.array([1.0, math.nan], dtype=np.float32))

    def test_duplicate_rejected(self):
        table = EmbeddingTable(2)
        table.add("a", np.zeros(2, dtype=np.float32))
        with pytest.raises(ValueError):
            table.add("a", np.ones(2, dtype=np.float32))

    def test_scaling_requires_positive_factor(self):
        table = EmbeddingTable(2)
        table.add("a", np.ones(2, dtype=np.float32))
        with pytest.raises(ValueError):
            table.scaled(0.0)
