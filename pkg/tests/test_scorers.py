"""Scorers: table rules, n-gram counts/smoothing/backoff, prefix wrapping."""

import math

import numpy as np
import pytest

from cdkit import (
    DataError,
    NgramScorer,
    ScorerCompatibilityError,
    TableScorer,
    TokenSequence,
    UsageError,
    ValidationError,
    Vocabulary,
    check_pair,
    load_ngram,
    save_ngram,
    train_ngram,
    with_prefix,
)


class TestVocabulary:
    def test_requires_unique_tokens_and_distinct_specials(self):
        with pytest.raises(ValidationError):
            Vocabulary("v", ("a", "a"), 0, 1)
        with pytest.raises(ValidationError):
            Vocabulary("v", ("a", "b"), 0, 0)
        with pytest.raises(ValidationError):
            Vocabulary("v", ("a",), 0, 1)

    def test_encode_decode_roundtrip(self, tiny_vocab):
        seq = tiny_vocab.encode_chars("abca")
        assert seq.ids[0] == tiny_vocab.bos_id
        assert tiny_vocab.decode(seq.ids) == "abca"

    def test_unknown_character_rejected(self, tiny_vocab):
        with pytest.raises(ValidationError):
            tiny_vocab.encode_chars("z")

    def test_sequence_validation(self, tiny_vocab):
        TokenSequence(tiny_vocab.id, (0, 2, 3)).validate_against(tiny_vocab)
        with pytest.raises(ScorerCompatibilityError):
            TokenSequence("other", (0,)).validate_against(tiny_vocab)
        with pytest.raises(ValidationError):
            TokenSequence(tiny_vocab.id, (0, 99)).validate_against(tiny_vocab)


class TestTableScorer:
    def test_logits_are_exact_logs(self, tiny_vocab):
        scorer = TableScorer(tiny_vocab, default={2: 0.45, 3: 0.40, 4: 0.15})
        logits = scorer.score_next(TokenSequence(tiny_vocab.id, (0,)))
        assert logits.values[2] == math.log(0.45)
        assert logits.values[3] == math.log(0.40)
        assert logits.values[4] == math.log(0.15)
        # unmentioned tokens sit at the tiny floor, far below everything real
        assert logits.values[0] == math.log(1e-300)

    def test_longest_suffix_wins(self, tiny_vocab):
        scorer = TableScorer(
            tiny_vocab,
            rules={(2,): {3: 1.0}, (3, 2): {4: 1.0}},
            default={2: 1.0},
        )
        vid = tiny_vocab.id
        assert scorer.score_next(TokenSequence(vid, (0, 4, 2))).argmax() == 3
        assert scorer.score_next(TokenSequence(vid, (0, 3, 2))).argmax() == 4
        assert scorer.score_next(TokenSequence(vid, (0, 3))).argmax() == 2

    def test_rules_must_sum_to_one(self, tiny_vocab):
        with pytest.raises(ValidationError):
            TableScorer(tiny_vocab, default={2: 0.5, 3: 0.4})
        with pytest.raises(ValidationError):
            TableScorer(tiny_vocab, default={2: 0.0, 3: 1.0})

    def test_context_must_start_with_bos(self, tiny_vocab):
        scorer = TableScorer(tiny_vocab)
        with pytest.raises(UsageError):
            scorer.score_next(TokenSequence(tiny_vocab.id, (2, 3)))
        with pytest.raises(UsageError):
            scorer.score_next(TokenSequence(tiny_vocab.id, ()))


class TestNgram:
    def test_add_one_unigram_hand_values(self):
        # corpus a a a a b: 4 predicted positions, counts {a:3, b:1};
        # add-1 over a 2-token vocabulary gives 4/6 and 2/6
        vocab = Vocabulary("pair-v1", ("a", "b"), bos_id=0, eos_id=1)
        corpus = [TokenSequence(vocab.id, (0, 0, 0, 0, 1))]
        scorer = train_ngram(corpus, vocab, order=1, smoothing_k=1.0)
        logits = scorer.score_next(TokenSequence(vocab.id, (0,)))
        probs = np.exp(logits.values)
        np.testing.assert_allclose(probs, [4 / 6, 2 / 6], atol=1e-12)

    def test_full_vocabulary_smoothing(self, tiny_vocab):
        corpus = [tiny_vocab.encode_chars("aaaa")]
        scorer = train_ngram(corpus, tiny_vocab, order=2, smoothing_k=0.1)
        logits = scorer.score_next(TokenSequence(tiny_vocab.id, (0, 2)))
        # 'c' never follows anything, yet it keeps positive probability
        assert np.exp(logits.values[4]) > 0.0
        np.testing.assert_allclose(np.exp(logits.values).sum(), 1.0, atol=1e-12)

    def test_backoff_on_unseen_context(self, tiny_vocab):
        # 'c' never occurs, so any context ending in it falls all the way back
        # to the empty context; two such contexts must agree exactly
        corpus = [tiny_vocab.encode_chars("ababab")]
        scorer = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.5)
        seen = scorer.score_next(TokenSequence(tiny_vocab.id, (0, 2, 3)))  # "ab" observed
        unseen_a = scorer.score_next(TokenSequence(tiny_vocab.id, (0, 4, 4)))
        unseen_b = scorer.score_next(TokenSequence(tiny_vocab.id, (0, 1, 4)))
        assert not np.array_equal(seen.values, unseen_a.values)
        np.testing.assert_array_equal(unseen_a.values, unseen_b.values)

    def test_higher_order_context_matters(self, tiny_vocab):
        # after "a": counts {b:2, c:1}; after "ba": counts {c:1}
        corpus = [tiny_vocab.encode_chars("abacab")]
        scorer = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.01)
        after_a = scorer.score_next(tiny_vocab.encode_chars("a"))
        after_ba = scorer.score_next(tiny_vocab.encode_chars("ba"))
        assert not np.array_equal(after_a.values, after_ba.values)

    def test_training_validation(self, tiny_vocab):
        with pytest.raises(DataError):
            train_ngram([], tiny_vocab, order=2)
        with pytest.raises(ValidationError):
            train_ngram([tiny_vocab.encode_chars("a")], tiny_vocab, order=0)
        with pytest.raises(ValidationError):
            train_ngram([tiny_vocab.encode_chars("a")], tiny_vocab, order=2, smoothing_k=0.0)
        with pytest.raises(ScorerCompatibilityError):
            train_ngram([TokenSequence("other", (0, 1))], tiny_vocab, order=2)

    def test_deterministic_training(self, tiny_vocab):
        corpus = [tiny_vocab.encode_chars(s) for s in ("abc", "acb", "bbac")]
        a = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.2)
        b = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.2)
        ctx = tiny_vocab.encode_chars("ab")
        np.testing.assert_array_equal(a.score_next(ctx).values, b.score_next(ctx).values)


class TestNgramSerialization:
    def test_roundtrip_is_bit_exact(self, tiny_vocab, tmp_path):
        corpus = [tiny_vocab.encode_chars(s) for s in ("abcab", "cabba", "acc")]
        scorer = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.3)
        path = tmp_path / "scorer.json"
        save_ngram(scorer, path)
        loaded = load_ngram(path)
        assert loaded.order == scorer.order
        assert loaded.smoothing_k == scorer.smoothing_k
        assert loaded.vocabulary == scorer.vocabulary
        for text in ("", "a", "ab", "cab", "bbb"):
            ctx = tiny_vocab.encode_chars(text)
            np.testing.assert_array_equal(
                loaded.score_next(ctx).values, scorer.score_next(ctx).values
            )

    def test_rejects_bad_files(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(DataError):
            load_ngram(missing)
        garbled = tmp_path / "garbled.json"
        garbled.write_text("{not json")
        with pytest.raises(DataError):
            load_ngram(garbled)
        wrong = tmp_path / "wrong.json"
        wrong.write_text('{"format": "something-else"}')
        with pytest.raises(DataError):
            load_ngram(wrong)


class TestPrefixWrapping:
    def test_empty_prefix_is_identity(self, tiny_vocab):
        corpus = [tiny_vocab.encode_chars("abcabc")]
        inner = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.1)
        wrapped = with_prefix(inner, TokenSequence(tiny_vocab.id, ()))
        ctx = tiny_vocab.encode_chars("ab")
        np.testing.assert_array_equal(
            wrapped.score_next(ctx).values, inner.score_next(ctx).values
        )

    def test_prefix_is_prepended(self, tiny_vocab):
        corpus = [tiny_vocab.encode_chars("abcabc")]
        inner = train_ngram(corpus, tiny_vocab, order=3, smoothing_k=0.1)
        wrapped = with_prefix(inner, tiny_vocab.encode_chars("ab"))
        got = wrapped.score_next(tiny_vocab.encode_chars("c"))
        want = inner.score_next(tiny_vocab.encode_chars("abc"))
        np.testing.assert_array_equal(got.values, want.values)

    def test_descriptor_kind(self, tiny_vocab):
        inner = TableScorer(tiny_vocab)
        wrapped = with_prefix(inner, TokenSequence(tiny_vocab.id, ()))
        assert wrapped.descriptor.kind == "prefix-wrapped"
        assert wrapped.descriptor.vocab_id == tiny_vocab.id


class TestPairing:
    def test_vocab_mismatch_not_ok(self, tiny_vocab):
        other = Vocabulary("other-v1", ("x", "y"), 0, 1)
        a = TableScorer(tiny_vocab, parameter_count=65.2)
        b = TableScorer(other, parameter_count=1.5)
        report = check_pair(a.descriptor, b.descriptor)
        assert not report.ok and "vocab" in report.reason

    def test_parameter_ratio(self, tiny_vocab):
        a = TableScorer(tiny_vocab, parameter_count=65.2)
        b = TableScorer(tiny_vocab, parameter_count=1.5)
        report = check_pair(a.descriptor, b.descriptor)
        assert report.ok and report.reason is None
        assert report.parameter_ratio == pytest.approx(1.5 / 65.2)
