"""Acceptance suite: every criterion prints one pass/fail line.

The heavy fixtures (trained models on the canonical synthetic campus) are
module-scoped and shared across criteria, so the whole file costs a few
trained models, not one per test. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import hashlib
import itertools
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from mobmod.apps import aggregate_occupancy, simulate_traces
from mobmod.autodiff import finite_diff_check
from mobmod.baselines import HmmModel, NgramModel
from mobmod.ingest import Skip, parse_line, stream_merge
from mobmod.model import ModelConfig, forward_logits, loss_multimodal, wrap_params
from mobmod.simulate import (
    BuildingSpec,
    CampusConfig,
    NoiseSpec,
    default_grammar,
    emit_syslog,
    generate_campus,
    generate_days,
    ground_truth_stays,
)
from mobmod.trajectory import (
    build_trajectories,
    daily_dwell_sequences,
    map_users_devices,
    resolve_sessions,
    select_primary_device,
    sessions_to_stays,
)
from mobmod.training import (
    MobilityTransformer,
    make_splits,
    next_step_accuracy,
    r_squared,
)
from tests.test_model import generic_params, random_tokens, tiny_config, tiny_vocab

SALT = b"acceptance"
SEED = 2019


def criterion(num: int, ok: bool, detail: str) -> None:
    line = f"[criterion {num:02d}] {'PASS' if ok else 'FAIL'}: {detail}"
    print("\n" + line, flush=True)
    assert ok, line


def canonical_config(seed: int = SEED) -> CampusConfig:
    return CampusConfig(
        buildings=(
            BuildingSpec("DORM-A", "Dorm", 2, 6),
            BuildingSpec("DORM-B", "Dorm", 2, 6),
            BuildingSpec("EDU-1", "Educational", 2, 6),
            BuildingSpec("EDU-2", "Educational", 2, 6),
            BuildingSpec("DINE-1", "Dining", 1, 4),
            BuildingSpec("DINE-2", "Dining", 1, 4),
            BuildingSpec("LIB-1", "Library", 1, 5),
            BuildingSpec("REC-1", "Recreation", 1, 4),
            BuildingSpec("ADM-1", "Admin", 1, 3),
        ),
        students=40,
        faculty=10,
        seed=seed,
    )


def run_pipeline(granularity, days=28, epsilon=0.1, break_prob=0.8,
                 noise=None, seed=SEED):
    """simulate -> syslog -> parse -> merge -> build at a given granularity."""
    campus = generate_campus(canonical_config(seed))
    grammar = default_grammar(campus, epsilon=epsilon, break_prob=break_prob)
    visits = generate_days(campus, grammar, days=days)
    sim = emit_syslog(campus, grammar, visits, noise=noise, salt=SALT, seed=seed)
    streams = []
    for controller in sorted(sim.lines_by_controller):
        parsed = (parse_line(l, salt=SALT) for l in sim.lines_by_controller[controller])
        streams.append([p for p in parsed if not isinstance(p, Skip)])
    events = stream_merge(streams)
    trajs, vocab, _ = build_trajectories(events, campus.ap_map, granularity)
    return campus, sim, events, trajs, vocab


@pytest.fixture(scope="module")
def corpus_t60():
    _, _, _, trajs, vocab = run_pipeline(60)
    return make_splits(trajs), vocab


@pytest.fixture(scope="module")
def corpus_t30():
    _, _, _, trajs, vocab = run_pipeline(30)
    return make_splits(trajs), vocab


@pytest.fixture(scope="module")
def corpus_t15():
    _, _, _, trajs, vocab = run_pipeline(15)
    return make_splits(trajs), vocab


def fit_transformer(splits, vocab, modalities):
    est = MobilityTransformer(n_modalities=modalities, seed=0, n_max=96)
    t0 = time.monotonic()
    est.fit(splits.train, vocab=vocab, dev=splits.dev)
    return est, time.monotonic() - t0


@pytest.fixture(scope="module")
def m4_t60(corpus_t60):
    splits, vocab = corpus_t60
    est, seconds = fit_transformer(splits, vocab, 4)
    report = est.evaluate(splits.test, mode="next_step")
    return est, seconds, report


@pytest.fixture(scope="module")
def m4_t30(corpus_t30):
    splits, vocab = corpus_t30
    est, _ = fit_transformer(splits, vocab, 4)
    return est, est.evaluate(splits.test, mode="next_step")


@pytest.fixture(scope="module")
def m4_t15(corpus_t15):
    splits, vocab = corpus_t15
    est, _ = fit_transformer(splits, vocab, 4)
    return est, est.evaluate(splits.test, mode="next_step")


@pytest.fixture(scope="module")
def m1_t15(corpus_t15):
    splits, vocab = corpus_t15
    est, _ = fit_transformer(splits, vocab, 1)
    return est, est.evaluate(splits.test, mode="next_step")


@pytest.fixture(scope="module")
def baseline_scores_t15(corpus_t15):
    splits, vocab = corpus_t15
    train_l = [np.asarray(t.tokens_l) for t in splits.train]
    test_l = [np.asarray(t.tokens_l) for t in splits.test]
    scores = {}
    for order in (2, 3, 4):
        model = NgramModel(order=order).fit(train_l)
        scores[f"{order}-gram"] = next_step_accuracy(model, test_l)
    hmm = HmmModel(n_states=32, n_iter=50, seed=0).fit(train_l)
    scores["hmm"] = next_step_accuracy(hmm, test_l)
    return scores


class TestCriterion01GradientCorrectness:
    def test_full_model_gradcheck(self):
        cfg = tiny_config()  # d=8, L=1, h=2, V=12, n_max=4
        vocab = tiny_vocab()
        tokens = random_tokens(cfg, vocab, 4, np.random.default_rng(SEED))
        params = generic_params(cfg, seed=SEED)

        def f(tensors):
            return loss_multimodal(forward_logits(tokens, tensors, cfg), tokens, cfg)

        t0 = time.monotonic()
        worst = finite_diff_check(f, params, eps=1e-5)
        seconds = time.monotonic() - t0
        criterion(
            1, worst < 1e-4 and seconds < 30,
            f"gradient check worst rel err {worst:.3e} (< 1e-4) in {seconds:.1f}s (< 30s)",
        )


class TestCriterion02CausalInvariance:
    def test_hundred_randomized_trials(self):
        rng = np.random.default_rng(SEED)
        vocab = tiny_vocab()
        violations = 0
        for trial in range(100):
            cfg = tiny_config(n_layers=int(rng.integers(1, 3)))
            params = generic_params(cfg, seed=int(rng.integers(2**31)))
            n = int(rng.integers(2, cfg.n_max + 1))
            tokens = random_tokens(cfg, vocab, n, rng)
            cut = int(rng.integers(1, n))  # perturb positions >= cut
            base = forward_logits(tokens, wrap_params(params), cfg).data
            mutated = [t.copy() for t in tokens]
            for m, stream in zip(cfg.modality_indices, mutated):
                start, end = vocab.range_of(m)
                stream[cut:] = rng.integers(start, end, size=n - cut)
            after = forward_logits(mutated, wrap_params(params), cfg).data
            if not np.array_equal(base[:cut], after[:cut]):
                violations += 1
        criterion(2, violations == 0,
                  f"suffix perturbation changed prefix logits in {violations}/100 trials")


class TestCriterion03OracleEquivalence:
    def test_ngram_mle_vs_bruteforce(self):
        rng = np.random.default_rng(SEED + 1)
        mismatches = 0
        for _ in range(50):
            corpus = [rng.integers(0, 5, size=int(rng.integers(4, 25))).tolist()
                      for _ in range(int(rng.integers(1, 5)))]
            order = int(rng.integers(2, 5))
            model = NgramModel(order=order).fit(corpus)
            for clen in range(order):
                for ctx, table in model.counts_[clen].items():
                    cont = [seq[i] for seq in corpus for i in range(clen, len(seq))
                            if tuple(seq[i - clen:i]) == ctx]
                    for tok, cnt in table.items():
                        if Fraction(cnt, len(cont)) != Fraction(cont.count(tok), len(cont)):
                            mismatches += 1
        hmm_worst = 0.0
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
            model = HmmModel(n_states=K)
            model.startprob_, model.transmat_, model.emissionprob_ = pi, A, B
            model.n_symbols_, model.log_likelihoods_ = V, []
            brute = 0.0
            for path in itertools.product(range(K), repeat=T):
                p = pi[path[0]] * B[path[0], seq[0]]
                for t in range(1, T):
                    p *= A[path[t - 1], path[t]] * B[path[t], seq[t]]
                brute += p
            hmm_worst = max(hmm_worst, abs(math.exp(model.score(seq)) - brute))
        criterion(
            3, mismatches == 0 and hmm_worst < 1e-9,
            f"n-gram MLE exact on 50 corpora ({mismatches} mismatches); "
            f"HMM forward vs path enumeration worst |diff| {hmm_worst:.2e} (< 1e-9)",
        )


class TestCriterion04ParseFidelity:
    def fraction_recovered(self, noise):
        campus, sim, events, _, _ = run_pipeline(60, days=14, noise=noise,
                                                 break_prob=0.45)
        truth = ground_truth_stays(sim, salt=SALT)
        sessions = resolve_sessions(events)
        udm = map_users_devices(events)
        matched = total = 0
        for user, true_stays in truth.items():
            primary = select_primary_device(udm.user_devices[user], sessions)
            got = daily_dwell_sequences(
                sessions_to_stays(sessions.get(primary, []), campus.ap_map))
            want = daily_dwell_sequences(true_stays)
            for date, seq in want.items():
                total += 1
                matched += got.get(date) == seq
        return matched / total, total

    def test_noise_free_and_noisy(self):
        t0 = time.monotonic()
        clean, total = self.fraction_recovered(None)
        noisy, _ = self.fraction_recovered(
            NoiseSpec(dup_rate=0.05, drop_disassoc_rate=0.05, reorder_rate=0.02))
        seconds = time.monotonic() - t0
        criterion(
            4, clean >= 0.99 and noisy >= 0.95 and seconds < 120,
            f"dwell sequences recovered on {clean:.3f} of {total} agent-days clean "
            f"(>= 0.99), {noisy:.3f} noisy (>= 0.95), in {seconds:.0f}s (< 120s)",
        )


class TestCriterion05Learnability:
    def test_t60_heldout_accuracy(self, m4_t60):
        est, seconds, report = m4_t60
        acc = report.accuracy["location"]
        criterion(
            5, acc >= 0.85 and seconds < 900,
            f"T60 held-out next-step indoor top-1 {acc:.4f} (>= 0.85), "
            f"trained in {seconds:.0f}s (< 900s)",
        )


class TestCriterion06MultiModalAdvantage:
    def test_m4_beats_m1(self, m4_t15, m1_t15):
        _, rep4 = m4_t15
        _, rep1 = m1_t15
        gap = rep4.accuracy["location"] - rep1.accuracy["location"]
        criterion(
            6, gap >= 0.02,
            f"indoor top-1 multi-modal {rep4.accuracy['location']:.4f} vs simple "
            f"{rep1.accuracy['location']:.4f}: gap {gap:.4f} (>= 0.02)",
        )


class TestCriterion07GranularityTrend:
    def test_t60_t30_t15_ordering(self, m4_t60, m4_t30, m4_t15):
        a60 = m4_t60[2].accuracy["location"]
        a30 = m4_t30[1].accuracy["location"]
        a15 = m4_t15[1].accuracy["location"]
        criterion(
            7, a60 >= a30 >= a15,
            f"indoor top-1 accuracy T60 {a60:.4f} >= T30 {a30:.4f} >= T15 {a15:.4f}",
        )


class TestCriterion08BaselineOrdering:
    def test_strict_ordering(self, m4_t15, m1_t15, baseline_scores_t15):
        scores = dict(baseline_scores_t15)
        scores["multi-modal"] = m4_t15[1].accuracy["location"]
        scores["simple"] = m1_t15[1].accuracy["location"]
        order = ["multi-modal", "simple", "hmm", "4-gram", "3-gram", "2-gram"]
        ok = all(scores[a] > scores[b] for a, b in zip(order, order[1:]))
        detail = " > ".join(f"{name} {scores[name]:.4f}" for name in order)
        criterion(8, ok, f"T15 indoor top-1 ordering: {detail}")


class TestCriterion09OccupancyFidelity:
    def test_synthetic_trace_occupancy_r2(self, m4_t60, corpus_t60):
        est, _, _ = m4_t60
        splits, vocab = corpus_t60
        synth = simulate_traces(est.params_, est.config_, vocab, splits.test,
                                population=len(splits.test), k=5, seed=SEED)
        observed = aggregate_occupancy(splits.test, vocab)
        predicted = aggregate_occupancy(synth, vocab)
        busiest = np.argsort(-observed.counts.sum(axis=0), kind="stable")[:2]
        r2s = {}
        for z in busiest:
            r2s[observed.zones[z]] = r_squared(predicted.counts[:, z],
                                               observed.counts[:, z])
        ok = all(v >= 0.95 for v in r2s.values())
        detail = ", ".join(f"{zone} r2={v:.4f}" for zone, v in r2s.items())
        criterion(9, ok, f"hourly occupancy from top-5 sampled traces: {detail} (>= 0.95)")


class TestFineTuningDirection:
    """Not a numbered criterion: the per-user assistant premise, checked
    directionally on the strongest canonical model."""

    def test_fine_tuned_user_not_worse_on_own_days(self, m4_t60, corpus_t60):
        est, _, _ = m4_t60
        splits, vocab = corpus_t60
        user = sorted({t.user for t in splits.dev})[0]
        user_train = [t for t in splits.train if t.user == user]
        user_dev = [t for t in splits.dev if t.user == user]
        tuned = est.fine_tuned(user_train, epochs=3, learning_rate=0.001, seed=0)
        base = est.evaluate(user_dev, mode="next_step").accuracy["location"]
        after = tuned.evaluate(user_dev, mode="next_step").accuracy["location"]
        print(f"\nfine-tune: user {user[:8]} location top-1 {base:.4f} -> {after:.4f}")
        assert after >= base


class TestCriterion10Determinism:
    def run_all_stages(self, root):
        """Full pipeline at reduced scale; returns {artifact: sha256}."""
        from mobmod.checkpoint import save_transformer
        from mobmod.ingest import write_events_jsonl
        from mobmod.trajectory import write_trajectories_jsonl

        root.mkdir(parents=True, exist_ok=True)
        config = CampusConfig(
            buildings=canonical_config().buildings,
            students=6, faculty=2, seed=77,
        )
        campus = generate_campus(config)
        grammar = default_grammar(campus, epsilon=0.1, break_prob=0.3)
        visits = generate_days(campus, grammar, days=5)
        sim = emit_syslog(campus, grammar, visits,
                          noise=NoiseSpec(0.05, 0.05, 0.02), salt=SALT, seed=77)
        syslog_path = root / "syslog.txt"
        syslog_path.write_text(
            "\n".join("\n".join(sim.lines_by_controller[c])
                      for c in sorted(sim.lines_by_controller)))
        streams = []
        for c in sorted(sim.lines_by_controller):
            parsed = (parse_line(l, salt=SALT) for l in sim.lines_by_controller[c])
            streams.append([p for p in parsed if not isinstance(p, Skip)])
        events = stream_merge(streams)
        write_events_jsonl(events, root / "events.jsonl")
        trajs, vocab, _ = build_trajectories(events, campus.ap_map, 60)
        write_trajectories_jsonl(trajs, root / "traj.jsonl")
        vocab.save(root / "vocab.json")
        splits = make_splits(trajs)
        est = MobilityTransformer(epochs=2, batch_size=16, seed=5, n_max=96)
        est.fit(splits.train, vocab=vocab, dev=splits.dev)
        save_transformer(root / "model.ckpt", est.params_, est.config_, vocab)
        est.evaluate(splits.test, mode="next_step").save(root / "report.json")
        synth = simulate_traces(est.params_, est.config_, vocab, splits.test,
                                population=4, k=5, seed=3)
        write_trajectories_jsonl(synth, root / "synth.jsonl")
        aggregate_occupancy(trajs, vocab).save_csv(root / "occ.csv")
        return {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.iterdir())
        }

    def test_two_runs_byte_identical(self, tmp_path):
        a = self.run_all_stages(tmp_path / "run1")
        b = self.run_all_stages(tmp_path / "run2")
        differing = [k for k in a if a[k] != b.get(k)]
        criterion(
            10, a == b,
            f"{len(a)} artifacts hashed identical across two runs"
            + (f"; differing: {differing}" if differing else ""),
        )
