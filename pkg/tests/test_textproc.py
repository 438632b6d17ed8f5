import pytest
from hypothesis import given, strategies as st

from lexret.textproc import ENGLISH_STOPWORDS, ngrams, porter_stem, tokenize


class TestTokenize:
    def test_basic(self):
        assert tokenize("Trademark Infringement.") == ["trademark", "infringement"]

    def test_empty(self):
        assert tokenize("") == []

    def test_citation_string(self):
        # Split on every non-alphanumeric character, keep digit runs.
        assert tokenize("57 F.3d 300, 302 n.") == ["57", "f", "3d", "300", "302", "n"]

    def test_underscore_splits(self):
        assert tokenize("a_b") == ["a", "b"]

    def test_nfkc_applied(self):
        # Fullwidth letters fold to ASCII under NFKC.
        assert tokenize("ＡＢＣ") == ["abc"]

    def test_stopword_removal(self):
        assert tokenize("the court held that", drop_stopwords=True) == ["court", "held"]
        assert "the" in ENGLISH_STOPWORDS

    def test_stemming(self):
        assert tokenize("infringing marks", stem=True) == ["infring", "mark"]

    @given(st.text(max_size=200))
    def test_idempotent(self, text):
        tokens = tokenize(text)
        assert tokenize(" ".join(tokens)) == tokens

    @given(st.text(max_size=200))
    def test_no_empty_tokens(self, text):
        assert all(t for t in tokenize(text))


class TestNgrams:
    def test_bigrams(self):
        assert ngrams(["a", "b", "c"], 2) == [("a", "b"), ("b", "c")]

    def test_short_input(self):
        assert ngrams(["a"], 2) == []

    def test_invalid_n(self):
        with pytest.raises(ValueError):
            ngrams(["a"], 0)

    def test_windows_match_slices(self):
        import random

        rng = random.Random(4)
        tokens = [f"w{rng.randrange(10)}" for _ in range(50)]
        grams = ngrams(tokens, 4)
        assert len(grams) == 47
        for i, gram in enumerate(grams):
            assert gram == tuple(tokens[i : i + 4])

    @given(st.lists(st.sampled_from("abc"), max_size=30), st.integers(1, 8))
    def test_count_formula(self, tokens, n):
        assert len(ngrams(tokens, n)) == max(0, len(tokens) - n + 1)


class TestPorterStem:
    @pytest.mark.parametrize(
        "word,expected",
        [
            ("caresses", "caress"),
            ("ponies", "poni"),
            ("cats", "cat"),
            ("feed", "feed"),
            ("agreed", "agre"),
            ("plastered", "plaster"),
            ("motoring", "motor"),
            ("sing", "sing"),
            ("hopping", "hop"),
            ("falling", "fall"),
            ("filing", "file"),
            ("happy", "happi"),
            ("sky", "sky"),
            ("relational", "relat"),
            ("conditional", "condit"),
            ("triplicate", "triplic"),
            ("hopeful", "hope"),
            ("goodness", "good"),
            ("adjustable", "adjust"),
            ("replacement", "replac"),
            ("adoption", "adopt"),
            ("effective", "effect"),
            ("controlling", "control"),
            ("probate", "probat"),
            ("rate", "rate"),
            ("cease", "ceas"),
        ],
    )
    def test_known_pairs(self, word, expected):
        assert porter_stem(word) == expected

    def test_short_words_unchanged(self):
        assert porter_stem("is") == "is"
        assert porter_stem("a") == "a"
