import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from mobmod.baselines import HmmModel, NgramModel


class TestNgramFit:
    def test_alternating_corpus_bigram(self):
        m = NgramModel(order=2).fit([[0, 1, 0, 1, 0]])  # A=0, B=1
        assert m.predict_proba([0]) == [(1, 1.0)]
        assert m.predict_proba([1]) == [(0, 1.0)]

    def test_trigram_context(self):
        m = NgramModel(order=3).fit([[0, 1, 2, 0, 1, 2]])  # A,B,C
        ranked = m.predict_proba([0, 1])
        assert ranked[0] == (2, 1.0)

    def test_single_token_corpus(self):
        m = NgramModel(order=2).fit([[5]])
        # only unigram counts exist
        assert m.counts_[1] == {}
        assert m.predict([]) == 5

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty corpus"):
            NgramModel(order=2).fit([])

    def test_bad_order(self):
        with pytest.raises(ValueError):
            NgramModel(order=5).fit([[1, 2]])

    def test_not_fitted(self):
        with pytest.raises(NotFittedError):
            NgramModel(order=2).predict([1])


class TestNgramPredict:
    def test_backoff_to_unigram_on_unseen(self):
        m = NgramModel(order=2).fit([[0, 1, 0, 1, 0]])
        # unseen history 9: unigram majority is 0 (three vs two)
        assert m.predict([9]) == 0

    def test_probabilities_sum_to_one(self):
        rng = np.random.default_rng(0)
        corpus = [rng.integers(0, 5, size=30).tolist() for _ in range(4)]
        m = NgramModel(order=3).fit(corpus)
        for hist in ([2], [1, 3], [4, 4], [0]):
            probs = [p for _, p in m.predict_proba(hist)]
            assert abs(sum(probs) - 1.0) < 1e-12

    def test_tie_breaks_on_token_id(self):
        m = NgramModel(order=2).fit([[0, 1, 0, 2]])
        # after 0: tokens 1 and 2 each seen once; smaller id wins
        assert m.predict([0]) == 1

    def test_mle_equals_bruteforce_ratios(self):
        rng = np.random.default_rng(1)
        for trial in range(50):
            corpus = [rng.integers(0, 4, size=rng.integers(5, 20)).tolist()
                      for _ in range(rng.integers(1, 4))]
            order = int(rng.integers(2, 5))
            m = NgramModel(order=order).fit(corpus)
            # exact integer-arithmetic oracle over every observed context
            for clen in range(order):
                for ctx, table in m.counts_[clen].items():
                    continuations = []
                    for seq in corpus:
                        for i in range(clen, len(seq)):
                            if tuple(seq[i - clen:i]) == ctx:
                                continuations.append(seq[i])
                    denom = len(continuations)
                    for tok, cnt in table.items():
                        assert Fraction(cnt, denom) == Fraction(continuations.count(tok), denom)
                    if clen == order - 1 and denom:
                        got = dict(m.predict_proba(list(ctx)))
                        for tok, cnt in table.items():
                            assert got[tok] == cnt / denom


def enumerate_likelihood(pi, A, B, seq):
    """Brute force: sum path probabilities over all K^T hidden paths."""
    K = len(pi)
    total = 0.0
    for path in itertools.product(range(K), repeat=len(seq)):
        p = pi[path[0]] * B[path[0], seq[0]]
        for t in range(1, len(seq)):
            p *= A[path[t - 1], path[t]] * B[path[t], seq[t]]
        total += p
    return total


def make_hmm(pi, A, B):
    m = HmmModel(n_states=len(pi))
    m.startprob_ = np.asarray(pi, dtype=float)
    m.transmat_ = np.asarray(A, dtype=float)
    m.emissionprob_ = np.asarray(B, dtype=float)
    m.n_symbols_ = m.emissionprob_.shape[1]
    m.log_likelihoods_ = []
    return m


class TestHmmForward:
    def test_single_state_product(self):
        m = make_hmm([1.0], [[1.0]], [[0.5, 0.5]])
        assert abs(math.exp(m.score([0, 0])) - 0.25) < 1e-12

    def test_empty_sequence_is_log_one(self):
        m = make_hmm([1.0], [[1.0]], [[1.0]])
        assert m.score([]) == 0.0

    def test_token_out_of_range(self):
        m = make_hmm([1.0], [[1.0]], [[1.0]])
        with pytest.raises(ValueError, match="out of range"):
            m.score([3])

    def test_matches_path_enumeration_small(self):
        pi = np.array([0.6, 0.4])
        A = np.array([[0.7, 0.3], [0.2, 0.8]])
        B = np.array([[0.9, 0.1], [0.3, 0.7]])
        m = make_hmm(pi, A, B)
        seq = [0, 1, 0]
        assert abs(math.exp(m.score(seq)) - enumerate_likelihood(pi, A, B, seq)) < 1e-9

    def test_matches_enumeration_random_models(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            K = int(rng.integers(1, 4))
            V = int(rng.integers(2, 5))
            T = int(rng.integers(1, 7))
            pi = rng.random(K) + 0.05
            pi /= pi.sum()
            A = rng.random((K, K)) + 0.05
            A /= A.sum(axis=1, keepdims=True)
            B = rng.random((K, V)) + 0.05
            B /= B.sum(axis=1, keepdims=True)
            seq = rng.integers(0, V, size=T).tolist()
            m = make_hmm(pi, A, B)
            assert abs(math.exp(m.score(seq)) - enumerate_likelihood(pi, A, B, seq)) < 1e-9


class TestHmmFit:
    def test_single_state_closed_form(self):
        corpus = [[0, 1, 0, 0], [1, 0]]
        m = HmmModel(n_states=1, n_iter=1, seed=0).fit(corpus)
        assert np.allclose(m.transmat_, [[1.0]])
        counts = np.bincount([t for s in corpus for t in s], minlength=2)
        assert np.allclose(m.emissionprob_[0], counts / counts.sum())

    def test_monotone_likelihood(self):
        rng = np.random.default_rng(3)
        corpus = [rng.integers(0, 6, size=20).tolist() for _ in range(10)]
        m = HmmModel(n_states=3, n_iter=25, seed=1).fit(corpus)
        lls = m.log_likelihoods_
        assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))

    def test_two_state_separable_corpus_specializes(self):
        # tokens 0/1 appear in the first half, 2/3 in the second
        rng = np.random.default_rng(4)
        corpus = []
        for _ in range(30):
            day = rng.integers(0, 2, size=10).tolist() + (rng.integers(2, 4, size=10)).tolist()
            corpus.append(day)
        m = HmmModel(n_states=2, n_iter=40, seed=2).fit(corpus)
        tops = {int(np.argmax(m.emissionprob_[k])) for k in range(2)}
        assert len(tops) == 2
        sides = {tok // 2 for tok in tops}
        assert sides == {0, 1}

    def test_rows_are_distributions(self):
        rng = np.random.default_rng(5)
        corpus = [rng.integers(0, 5, size=12).tolist() for _ in range(6)]
        m = HmmModel(n_states=4, n_iter=10, seed=3).fit(corpus)
        assert abs(m.startprob_.sum() - 1) < 1e-9
        assert np.allclose(m.transmat_.sum(axis=1), 1.0, atol=1e-9)
        assert np.allclose(m.emissionprob_.sum(axis=1), 1.0, atol=1e-9)
        assert (m.startprob_ >= 0).all() and (m.transmat_ >= 0).all() and (m.emissionprob_ >= 0).all()

    def test_empty_corpus(self):
        with pytest.raises(ValueError, match="empty corpus"):
            HmmModel().fit([])


class TestHmmPredict:
    def test_single_state_gives_emissions(self):
        m = make_hmm([1.0], [[1.0]], [[0.2, 0.8]])
        assert np.allclose(m.predict_proba([0, 1, 1]), [0.2, 0.8])
        assert m.predict([0]) == 1

    def test_near_deterministic_chain(self):
        # state 0 emits A(0), state 1 emits B(1); they alternate
        pi = [0.5, 0.5]
        A = [[0.02, 0.98], [0.98, 0.02]]
        B = [[0.99, 0.01], [0.01, 0.99]]
        m = make_hmm(pi, A, B)
        assert m.predict([0]) == 1
        assert m.predict([1, 0]) == 1
        assert m.predict([0, 1]) == 0

    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(6)
        corpus = [rng.integers(0, 5, size=15).tolist() for _ in range(5)]
        m = HmmModel(n_states=3, n_iter=10, seed=4).fit(corpus)
        assert abs(m.predict_proba([1, 2, 3]).sum() - 1.0) < 1e-9

    def test_empty_history_rejected(self):
        m = make_hmm([1.0], [[1.0]], [[1.0]])
        with pytest.raises(ValueError, match="non-empty"):
            m.predict_proba([])


class TestEstimatorApi:
    def test_get_params_roundtrip(self):
        m = HmmModel(n_states=8, n_iter=5, seed=7)
        params = m.get_params()
        assert params["n_states"] == 8 and params["seed"] == 7
        clone = HmmModel(**params)
        assert clone.get_params() == params

    def test_ngram_get_params(self):
        assert NgramModel(order=3).get_params() == {"order": 3}

    def test_fit_returns_self(self):
        m = NgramModel(order=2)
        assert m.fit([[1, 2, 3]]) is m
