"""Reference sequence models over indoor-location tokens: n-gram and HMM.

Both follow the sklearn estimator conventions (constructor holds
hyperparameters, fit returns self, fitted state uses trailing underscores)
so they compose with the surrounding ecosystem and with the evaluation
harness the same way the transformer does.
"""

from __future__ import annotations

from collections import Counter

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError


def _as_sequences(X) -> list[np.ndarray]:
    seqs = [np.asarray(s, dtype=np.int64) for s in X]
    if not seqs or all(s.size == 0 for s in seqs):
        raise ValueError("empty corpus")
    return seqs


class NgramModel(BaseEstimator):
    """MLE n-gram model with stupid backoff.

    order o uses contexts of length o-1; unseen contexts back off to the
    longest shorter context with counts, down to the unigram. Ranking ties
    break on token id, so predictions are deterministic.
    """

    def __init__(self, order: int = 2):
        self.order = order

    def fit(self, X, y=None):
        if self.order not in (2, 3, 4):
            raise ValueError("order must be 2, 3, or 4")
        counts: list[dict[tuple, Counter]] = [dict() for _ in range(self.order)]
        vocab: set[int] = set()
        for seq in _as_sequences(X):
            toks = seq.tolist()
            vocab.update(toks)
            for i, tok in enumerate(toks):
                for clen in range(self.order):
                    if i < clen:
                        continue
                    ctx = tuple(toks[i - clen:i])
                    counts[clen].setdefault(ctx, Counter())[tok] += 1
        self.counts_ = counts
        self.vocab_ = sorted(vocab)
        return self

    def _check_fitted(self):
        if not hasattr(self, "counts_"):
            raise NotFittedError("fit the model first")

    def predict_proba(self, history) -> list[tuple[int, float]]:
        """Ranked (token, probability) list from the longest usable context."""
        self._check_fitted()
        history = [int(t) for t in history]
        for clen in range(min(self.order - 1, len(history)), -1, -1):
            ctx = tuple(history[len(history) - clen:])
            table = self.counts_[clen].get(ctx)
            if table:
                total = sum(table.values())
                ranked = sorted(table.items(), key=lambda kv: (-kv[1], kv[0]))
                return [(tok, cnt / total) for tok, cnt in ranked]
        return []

    def predict(self, history) -> int:
        ranked = self.predict_proba(history)
        if not ranked:
            raise ValueError("no counts available for prediction")
        return ranked[0][0]

    def next_step_predictions(self, sequence) -> np.ndarray:
        """Predicted token at each position 1..n-1 from the true prefix."""
        seq = np.asarray(sequence, dtype=np.int64)
        return np.array([self.predict(seq[:i]) for i in range(1, seq.size)])


class HmmModel(BaseEstimator):
    """Discrete-emission HMM trained with Baum-Welch from a seeded random init.

    One model covers the whole corpus ("one HMM for all users"); emissions
    are categorical over location tokens. The scaled forward/backward pass
    batches sequences of equal length.
    """

    def __init__(self, n_states: int = 32, n_iter: int = 50, seed: int = 0,
                 n_symbols: int | None = None):
        self.n_states = n_states
        self.n_iter = n_iter
        self.seed = seed
        self.n_symbols = n_symbols

    # -- internals ---------------------------------------------------------

    def _forward_scaled(self, seq: np.ndarray):
        """Returns (alpha [T,K] row-normalized, log-likelihood)."""
        T = seq.size
        alpha = np.zeros((T, self.n_states))
        logl = 0.0
        a = self.startprob_ * self.emissionprob_[:, seq[0]]
        norm = a.sum()
        alpha[0] = a / norm
        logl += np.log(norm)
        for t in range(1, T):
            a = (alpha[t - 1] @ self.transmat_) * self.emissionprob_[:, seq[t]]
            norm = a.sum()
            alpha[t] = a / norm
            logl += np.log(norm)
        return alpha, logl

    def fit(self, X, y=None):
        if self.n_states < 1 or self.n_iter < 1:
            raise ValueError("n_states and n_iter must be >= 1")
        seqs = [s for s in _as_sequences(X) if s.size > 0]
        n_sym = self.n_symbols
        if n_sym is None:
            n_sym = int(max(s.max() for s in seqs)) + 1
        K = self.n_states
        rng = np.random.default_rng(self.seed)

        pi = rng.random(K) + 0.1
        pi /= pi.sum()
        A = rng.random((K, K)) + 0.1
        A /= A.sum(axis=1, keepdims=True)
        B = rng.random((K, n_sym)) + 0.1
        B /= B.sum(axis=1, keepdims=True)

        # group by length so forward/backward vectorizes across sequences
        groups: dict[int, np.ndarray] = {}
        for length in sorted({s.size for s in seqs}):
            groups[length] = np.stack([s for s in seqs if s.size == length])

        history: list[float] = []
        for _ in range(self.n_iter):
            pi_acc = np.zeros(K)
            a_acc = np.zeros((K, K))
            b_acc = np.zeros((K, n_sym))
            logl = 0.0
            for length, batch in groups.items():
                N, T = batch.shape
                alphas = np.zeros((N, T, K))
                scales = np.zeros((N, T))
                a = pi[None, :] * B[:, batch[:, 0]].T
                scales[:, 0] = a.sum(axis=1)
                alphas[:, 0] = a / scales[:, 0, None]
                for t in range(1, T):
                    a = (alphas[:, t - 1] @ A) * B[:, batch[:, t]].T
                    scales[:, t] = a.sum(axis=1)
                    alphas[:, t] = a / scales[:, t, None]
                logl += np.log(scales).sum()

                betas = np.zeros((N, T, K))
                betas[:, T - 1] = 1.0
                for t in range(T - 2, -1, -1):
                    nxt = betas[:, t + 1] * B[:, batch[:, t + 1]].T
                    betas[:, t] = (nxt @ A.T) / scales[:, t + 1, None]

                gamma = alphas * betas
                gamma /= gamma.sum(axis=2, keepdims=True)
                pi_acc += gamma[:, 0].sum(axis=0)
                # xi contribution without materializing [N,K,K]:
                # xi[n,i,j] ∝ alpha[n,t,i] A[i,j] B[j,o] beta[n,t+1,j]
                for t in range(T - 1):
                    w = B[:, batch[:, t + 1]].T * betas[:, t + 1]
                    z = ((alphas[:, t] @ A) * w).sum(axis=1)
                    a_acc += A * ((alphas[:, t] / z[:, None]).T @ w)
                flat_obs = batch.reshape(-1)
                flat_gamma = gamma.reshape(-1, K)
                for k in range(K):
                    b_acc[k] += np.bincount(
                        flat_obs, weights=flat_gamma[:, k], minlength=n_sym
                    )
            history.append(float(logl))
            pi = pi_acc / pi_acc.sum()
            A = a_acc / np.maximum(a_acc.sum(axis=1, keepdims=True), 1e-300)
            B = b_acc / np.maximum(b_acc.sum(axis=1, keepdims=True), 1e-300)
            self.startprob_, self.transmat_, self.emissionprob_ = pi, A, B
        self.n_symbols_ = n_sym
        self.log_likelihoods_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "transmat_"):
            raise NotFittedError("fit the model first")

    def score(self, sequence) -> float:
        """Log-likelihood via the scaled forward algorithm."""
        self._check_fitted()
        seq = np.asarray(sequence, dtype=np.int64)
        if seq.size == 0:
            return 0.0
        if seq.min() < 0 or seq.max() >= self.n_symbols_:
            raise ValueError("token out of range")
        _, logl = self._forward_scaled(seq)
        return float(logl)

    def predict_proba(self, history) -> np.ndarray:
        """Next-token distribution: filter posterior, then posterior @ A @ B."""
        self._check_fitted()
        seq = np.asarray(history, dtype=np.int64)
        if seq.size == 0:
            raise ValueError("history must be non-empty")
        if seq.min() < 0 or seq.max() >= self.n_symbols_:
            raise ValueError("token out of range")
        alpha, _ = self._forward_scaled(seq)
        posterior = alpha[-1]
        return (posterior @ self.transmat_) @ self.emissionprob_

    def predict(self, history) -> int:
        return int(np.argmax(self.predict_proba(history)))

    def next_step_predictions(self, sequence) -> np.ndarray:
        """One incremental forward pass; prediction after each true prefix."""
        self._check_fitted()
        seq = np.asarray(sequence, dtype=np.int64)
        if seq.min() < 0 or seq.max() >= self.n_symbols_:
            raise ValueError("token out of range")
        preds = np.zeros(seq.size - 1, dtype=np.int64)
        a = self.startprob_ * self.emissionprob_[:, seq[0]]
        a /= a.sum()
        for t in range(seq.size - 1):
            nxt = (a @ self.transmat_) @ self.emissionprob_
            preds[t] = int(np.argmax(nxt))
            a = (a @ self.transmat_) * self.emissionprob_[:, seq[t + 1]]
            a /= a.sum()
        return preds
