"""Decoding loop: strategies, seeding, stop handling, batch behaviour."""

import numpy as np
import pytest

from cdkit import (
    CdConfig,
    CdGreedy,
    CdSample,
    DecodeRequest,
    FailedGeneration,
    Greedy,
    InternalInvariantError,
    Nucleus,
    Sample,
    TokenSequence,
    TopK,
    UsageError,
    ValidationError,
    combine_refactored,
    decode,
    decode_batch,
    sample_index,
    train_ngram,
)


def ngram_pair(tiny_vocab, seed=0):
    """Two small language models over the same vocabulary, trained on
    different random character soup so their distributions disagree."""
    rng = np.random.default_rng(seed)
    letters = "abc"
    def corpus(r):
        return [
            tiny_vocab.encode_chars("".join(r.choice(list(letters), size=12)))
            for _ in range(30)
        ]
    expert = train_ngram(corpus(rng), tiny_vocab, order=3, smoothing_k=0.5)
    amateur = train_ngram(corpus(rng), tiny_vocab, order=1, smoothing_k=0.5)
    return expert, amateur


def random_prompts(tiny_vocab, rng, count):
    out = []
    for _ in range(count):
        n = int(rng.integers(1, 5))
        text = "".join(rng.choice(list("abc"), size=n))
        out.append(tiny_vocab.encode_chars(text))
    return out


class TestSampleIndex:
    def test_hand_cdf(self):
        probs = np.array([0.2, 0.0, 0.5, 0.3])
        assert sample_index(probs, 0.0) == 0
        assert sample_index(probs, 0.19) == 0
        assert sample_index(probs, 0.2) == 2
        assert sample_index(probs, 0.699) == 2
        assert sample_index(probs, 0.7) == 3
        assert sample_index(probs, 0.999) == 3

    def test_zero_probability_unreachable(self):
        probs = np.array([0.5, 0.0, 0.5])
        for u in np.linspace(0.0, 0.999999, 2000):
            assert sample_index(probs, float(u)) != 1

    def test_rounding_overflow_clamps_to_last_nonzero(self):
        probs = np.array([0.3, 0.7 - 1e-12, 0.0])
        assert sample_index(probs, 1.0 - 1e-13) == 1

    def test_input_validation(self):
        with pytest.raises(ValidationError):
            sample_index(np.array([1.0]), 1.0)
        with pytest.raises(ValidationError):
            sample_index(np.array([1.0]), -0.1)
        with pytest.raises(InternalInvariantError):
            sample_index(np.zeros(3), 0.5)


class TestGreedy:
    def chain_scorer(self, tiny_vocab):
        from cdkit import TableScorer
        return TableScorer(
            tiny_vocab,
            rules={(2,): {3: 1.0}, (3,): {4: 1.0}, (4,): {1: 1.0}},
            default={2: 1.0},
        )

    def test_follows_chain_and_stops(self, tiny_vocab):
        scorer = self.chain_scorer(tiny_vocab)
        request = DecodeRequest(
            prompt=TokenSequence(tiny_vocab.id, (0,)),
            max_new_tokens=10,
            strategy=Greedy(),
            stop=frozenset({1}),
        )
        record = decode(scorer, request)
        assert record.continuation.ids == (2, 3, 4, 1)
        assert record.finish_reason == "stop-token"
        assert [s[0] for s in record.per_step] == [2, 3, 4, 1]
        assert all(s[1] == tiny_vocab.size for s in record.per_step)
        assert all(s[2] == 0.0 for s in record.per_step)  # log(1.0)

    def test_length_cap_without_stop(self, tiny_vocab):
        scorer = self.chain_scorer(tiny_vocab)
        request = DecodeRequest(
            prompt=TokenSequence(tiny_vocab.id, (0,)),
            max_new_tokens=3,
            strategy=Greedy(),
        )
        record = decode(scorer, request)
        assert record.continuation.ids == (2, 3, 4)
        assert record.finish_reason == "length"

    def test_diagnostics_cap_keeps_continuation_full(self, tiny_vocab):
        scorer = self.chain_scorer(tiny_vocab)
        request = DecodeRequest(
            prompt=TokenSequence(tiny_vocab.id, (0,)),
            max_new_tokens=4,
            strategy=Greedy(),
            diagnostics_cap=2,
        )
        record = decode(scorer, request)
        assert len(record.continuation) == 4
        assert len(record.per_step) == 2


class TestStrategyEquivalences:
    def test_beta_zero_cd_matches_greedy(self, tiny_vocab):
        expert, amateur = ngram_pair(tiny_vocab, seed=11)
        rng = np.random.default_rng(3)
        cfg = CdConfig(beta=0.0, alpha=0.1)
        for prompt in random_prompts(tiny_vocab, rng, 10):
            base = DecodeRequest(prompt=prompt, max_new_tokens=16, strategy=Greedy())
            cd = DecodeRequest(prompt=prompt, max_new_tokens=16, strategy=CdGreedy(cfg))
            assert decode(expert, base).continuation == decode(expert, cd, amateur).continuation

    def test_identical_pair_matches_greedy_any_beta(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=12)
        rng = np.random.default_rng(4)
        cfg = CdConfig(beta=2.5, alpha=0.05)
        for prompt in random_prompts(tiny_vocab, rng, 6):
            base = DecodeRequest(prompt=prompt, max_new_tokens=12, strategy=Greedy())
            cd = DecodeRequest(prompt=prompt, max_new_tokens=12, strategy=CdGreedy(cfg))
            assert decode(expert, base).continuation == decode(expert, cd, expert).continuation

    def test_tiny_temperature_matches_greedy(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=13)
        rng = np.random.default_rng(5)
        for prompt in random_prompts(tiny_vocab, rng, 5):
            base = DecodeRequest(prompt=prompt, max_new_tokens=12, strategy=Greedy())
            hot = DecodeRequest(
                prompt=prompt, max_new_tokens=12, strategy=Sample(temperature=1e-6), seed=9
            )
            assert decode(expert, base).continuation == decode(expert, hot).continuation

    def test_top_k_one_matches_greedy(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=14)
        rng = np.random.default_rng(6)
        for seed in (0, 1, 2):
            for prompt in random_prompts(tiny_vocab, rng, 3):
                base = DecodeRequest(prompt=prompt, max_new_tokens=10, strategy=Greedy())
                topk = DecodeRequest(
                    prompt=prompt, max_new_tokens=10, strategy=TopK(k=1), seed=seed
                )
                assert decode(expert, base).continuation == decode(expert, topk).continuation

    def test_nucleus_full_mass_matches_plain_sampling(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=15)
        rng = np.random.default_rng(7)
        for prompt in random_prompts(tiny_vocab, rng, 5):
            plain = DecodeRequest(
                prompt=prompt, max_new_tokens=20, strategy=Sample(0.8), seed=21
            )
            nuc = DecodeRequest(
                prompt=prompt, max_new_tokens=20, strategy=Nucleus(p=1.0, temperature=0.8), seed=21
            )
            assert decode(expert, plain).continuation == decode(expert, nuc).continuation


class TestSeeding:
    def test_same_seed_reproduces_exactly(self, tiny_vocab):
        expert, amateur = ngram_pair(tiny_vocab, seed=16)
        prompt = tiny_vocab.encode_chars("ab")
        request = DecodeRequest(
            prompt=prompt, max_new_tokens=30, strategy=CdSample(CdConfig()), seed=1234
        )
        first = decode(expert, request, amateur)
        second = decode(expert, request, amateur)
        assert first.continuation == second.continuation
        assert first.per_step == second.per_step

    def test_different_seeds_diverge(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=17)
        prompt = tiny_vocab.encode_chars("a")
        runs = {
            decode(
                expert,
                DecodeRequest(prompt=prompt, max_new_tokens=30, strategy=Sample(1.0), seed=s),
            ).continuation.ids
            for s in range(4)
        }
        assert len(runs) > 1

    def test_request_index_shifts_the_stream(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=18)
        prompt = tiny_vocab.encode_chars("a")
        request = DecodeRequest(
            prompt=prompt, max_new_tokens=30, strategy=Sample(1.0), seed=5
        )
        a = decode(expert, request, request_index=0)
        b = decode(expert, request, request_index=1)
        assert a.continuation != b.continuation


class TestContrastiveSampling:
    def test_chosen_tokens_stay_inside_mask(self, tiny_vocab):
        expert, amateur = ngram_pair(tiny_vocab, seed=19)
        cfg = CdConfig(alpha=0.5, beta=0.5)
        rng = np.random.default_rng(8)
        for prompt in random_prompts(tiny_vocab, rng, 3):
            request = DecodeRequest(
                prompt=prompt, max_new_tokens=12, strategy=CdSample(cfg), seed=77
            )
            record = decode(expert, request, amateur)
            ids = list(prompt.ids)
            for chosen in record.continuation.ids:
                ctx = TokenSequence(tiny_vocab.id, tuple(ids))
                combined = combine_refactored(
                    expert.score_next(ctx), amateur.score_next(ctx), cfg
                )
                assert bool(combined.valid[chosen])
                ids.append(chosen)

    def test_remask_false_reaches_masked_tokens(self, tiny_vocab):
        from cdkit import TableScorer
        expert = TableScorer(tiny_vocab, default={2: 0.89, 3: 0.10, 4: 0.01})
        amateur = TableScorer(tiny_vocab, default={2: 0.80, 3: 0.10, 4: 0.10})
        cfg = CdConfig(alpha=0.5, beta=0.5)
        prompt = TokenSequence(tiny_vocab.id, (0,))
        masked = decode(
            expert,
            DecodeRequest(prompt=prompt, max_new_tokens=200, strategy=CdSample(cfg), seed=3),
            amateur,
        )
        free = decode(
            expert,
            DecodeRequest(
                prompt=prompt,
                max_new_tokens=200,
                strategy=CdSample(cfg, remask=False),
                seed=3,
            ),
            amateur,
        )
        # alpha=0.5 leaves only the copy-heavy token; dropping the re-mask
        # lets the runner-up through occasionally
        assert set(masked.continuation.ids) == {2}
        assert set(free.continuation.ids) != {2}


class TestDispatchAndBatch:
    def test_cd_requires_amateur(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=20)
        prompt = tiny_vocab.encode_chars("a")
        for strategy in (CdGreedy(), CdSample()):
            request = DecodeRequest(prompt=prompt, max_new_tokens=4, strategy=strategy)
            with pytest.raises(UsageError):
                decode(expert, request)

    def test_batch_matches_serial_and_is_order_stable(self, tiny_vocab):
        expert, amateur = ngram_pair(tiny_vocab, seed=21)
        rng = np.random.default_rng(9)
        requests = [
            DecodeRequest(prompt=p, max_new_tokens=15, strategy=CdSample(CdConfig()), seed=42)
            for p in random_prompts(tiny_vocab, rng, 8)
        ]
        serial = decode_batch(expert, requests, parallelism=1, amateur=amateur)
        threaded = decode_batch(expert, requests, parallelism=8, amateur=amateur)
        assert [r.continuation for r in serial] == [r.continuation for r in threaded]

    def test_batch_index_feeds_the_stream(self, tiny_vocab):
        # two identical requests in one batch draw from different streams
        expert, _ = ngram_pair(tiny_vocab, seed=22)
        prompt = tiny_vocab.encode_chars("a")
        request = DecodeRequest(prompt=prompt, max_new_tokens=25, strategy=Sample(1.0), seed=6)
        results = decode_batch(expert, [request, request])
        assert results[0].continuation != results[1].continuation
        # index 0 equals the standalone call
        assert results[0].continuation == decode(expert, request).continuation

    def test_empty_batch(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=23)
        assert decode_batch(expert, []) == []

    def test_failures_are_isolated(self, tiny_vocab):
        expert, _ = ngram_pair(tiny_vocab, seed=24)
        good = DecodeRequest(
            prompt=tiny_vocab.encode_chars("a"), max_new_tokens=4, strategy=Greedy()
        )
        bad = DecodeRequest(
            prompt=TokenSequence(tiny_vocab.id, (2, 3)),  # missing BOS
            max_new_tokens=4,
            strategy=Greedy(),
        )
        results = decode_batch(expert, [good, bad, good], parallelism=2)
        assert isinstance(results[0], type(results[2]))
        assert isinstance(results[1], FailedGeneration)
        assert results[0].continuation == results[2].continuation
