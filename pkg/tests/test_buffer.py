"""Instance memory buffer: EMA laws, admission gating, eviction policy."""

import numpy as np
import pytest

from trilabel.buffer import InstanceMemoryBuffer
from trilabel.core import l2_normalize
from trilabel.errors import (BufferStateError, ConfigurationError, DomainError,
                             SampleLookupError)

RNG = np.random.default_rng(77)
K = 7
DIM = 12


def make_buffer(n=10, dim=DIM, momentum=0.9, capacity=None, gamma=0.86, seed=5):
    rng = np.random.default_rng(seed)
    labeled = [(i, rng.normal(size=dim), i % K) for i in range(n)]
    return InstanceMemoryBuffer.init_from_labeled(
        labeled, num_classes=K, momentum=momentum, capacity=capacity,
        admission_threshold=gamma)


def confident(cls, p=0.95):
    vec = np.full(K, (1.0 - p) / (K - 1))
    vec[cls] = p
    return vec


class TestInit:
    def test_hundred_labeled_gives_size_hundred(self):
        buf = make_buffer(100)
        assert len(buf) == 100
        assert buf.labeled_count == 100

    def test_single_entry_self_similarity(self):
        buf = make_buffer(1)
        entry = buf.entries()[0]
        sims = buf.instance_similarities(entry.feature, tau=0.8)
        assert sims.shape == (1,)
        assert sims[0] == pytest.approx(1.0)

    def test_duplicate_ids_rejected(self):
        labeled = [(1, RNG.normal(size=DIM), 0), (1, RNG.normal(size=DIM), 1)]
        with pytest.raises(ConfigurationError):
            InstanceMemoryBuffer.init_from_labeled(labeled, num_classes=K)

    def test_empty_input_rejected(self):
        with pytest.raises(ConfigurationError):
            InstanceMemoryBuffer.init_from_labeled([], num_classes=K)

    def test_features_stored_unit_norm(self):
        buf = make_buffer(20)
        for entry in buf.entries():
            assert abs(np.linalg.norm(entry.feature) - 1.0) < 1e-6


class TestEmaUpdate:
    def test_fixed_point(self):
        buf = make_buffer(5)
        before = buf.entry(2).feature
        buf.ema_update(2, before.copy())
        assert np.allclose(buf.entry(2).feature, before, atol=1e-9)

    def test_zero_momentum_replaces(self):
        buf = make_buffer(5, momentum=1e-12)
        z = l2_normalize(RNG.normal(size=DIM))
        buf.ema_update(3, z)
        assert np.allclose(buf.entry(3).feature, z, atol=1e-9)

    def test_repeated_updates_follow_raw_blend_recurrence(self):
        # oracle: on the raw (unnormalized) blend r <- m*r + (1-m)*z the gap
        # to z decays by exactly m per step; the stored feature is the
        # normalized interleaved recurrence and converges to z
        m = 0.9
        buf = make_buffer(4, momentum=m)
        target = l2_normalize(RNG.normal(size=DIM))
        raw = buf.entry(0).feature.copy()
        gap = np.linalg.norm(raw - target)
        for _ in range(60):
            raw = m * raw + (1.0 - m) * target
            new_gap = np.linalg.norm(raw - target)
            assert new_gap == pytest.approx(m * gap, rel=1e-9)
            gap = new_gap
        stored = buf.entry(0).feature.copy()
        for _ in range(200):
            blend = m * stored + (1.0 - m) * target
            stored = blend / np.linalg.norm(blend)
            buf.ema_update(0, target)
            assert np.allclose(buf.entry(0).feature, stored, atol=1e-12)
        assert np.linalg.norm(buf.entry(0).feature - target) < 1e-6

    def test_unknown_id_rejected(self):
        buf = make_buffer(3)
        with pytest.raises(SampleLookupError):
            buf.ema_update(999, np.ones(DIM))

    def test_label_unchanged_by_update(self):
        buf = make_buffer(5)
        label = buf.entry(1).label
        buf.ema_update(1, RNG.normal(size=DIM))
        assert buf.entry(1).label == label


class TestAdmission:
    def test_confidence_above_threshold_admitted(self):
        buf = make_buffer(5, gamma=0.86)
        assert buf.admit_unlabeled(100, RNG.normal(size=DIM), confident(2, 0.90))
        assert len(buf) == 6
        assert buf.entry(100).label == 2
        assert buf.entry(100).origin == "unlabeled"

    def test_confidence_at_threshold_rejected(self):
        buf = make_buffer(5, gamma=0.86)
        assert not buf.admit_unlabeled(100, RNG.normal(size=DIM), confident(2, 0.86))
        assert len(buf) == 5

    def test_readmission_keeps_size_and_blends(self):
        buf = make_buffer(5, gamma=0.86)
        z1 = RNG.normal(size=DIM)
        buf.admit_unlabeled(100, z1, confident(2, 0.95))
        size = len(buf)
        stored_before = buf.entry(100).feature.copy()
        z2 = RNG.normal(size=DIM)
        assert buf.admit_unlabeled(100, z2, confident(4, 0.95))
        assert len(buf) == size
        blended = 0.9 * stored_before + 0.1 * l2_normalize(z2)
        assert np.allclose(buf.entry(100).feature, l2_normalize(blended), atol=1e-9)
        assert buf.entry(100).label == 4  # relabeled with new argmax

    def test_admitting_labeled_id_rejected(self):
        buf = make_buffer(5)
        with pytest.raises(SampleLookupError):
            buf.admit_unlabeled(0, RNG.normal(size=DIM), confident(1, 0.95))

    def test_capacity_evicts_oldest_unlabeled_only(self):
        buf = make_buffer(3, capacity=5)
        buf.admit_unlabeled(100, RNG.normal(size=DIM), confident(0, 0.95))
        buf.admit_unlabeled(101, RNG.normal(size=DIM), confident(1, 0.95))
        assert len(buf) == 5
        buf.admit_unlabeled(102, RNG.normal(size=DIM), confident(2, 0.95))
        assert len(buf) == 5
        assert 100 not in buf  # oldest unlabeled evicted
        assert 101 in buf and 102 in buf
        assert all(i in buf for i in range(3))  # labeled survive

    def test_full_of_labeled_rejects_instead_of_evicting(self):
        buf = make_buffer(4, capacity=4)
        assert not buf.admit_unlabeled(100, RNG.normal(size=DIM), confident(0, 0.99))
        assert len(buf) == 4

    def test_gamma_monotonicity_over_shared_stream(self):
        stream = [(200 + i, RNG.normal(size=DIM), RNG.dirichlet(np.ones(K) * 0.3))
                  for i in range(60)]
        admitted = []
        for gamma in (0.5, 0.7, 0.86, 0.95):
            buf = make_buffer(5, gamma=gamma, capacity=200)
            count = sum(bool(buf.admit_unlabeled(i, z, p)) for i, z, p in stream)
            admitted.append(count)
        assert all(b <= a for a, b in zip(admitted, admitted[1:]))


class TestQueries:
    def test_single_entry_similarity_is_one(self):
        buf = make_buffer(1)
        assert np.allclose(buf.instance_similarities(RNG.normal(size=DIM), 0.8), [1.0])

    def test_equidistant_entries_give_uniform(self):
        # entries arranged so the query has equal cosine to each
        entries = [(i, np.eye(DIM)[i], i % K) for i in range(4)]
        buf = InstanceMemoryBuffer.init_from_labeled(entries, num_classes=K)
        q = np.ones(DIM)
        sims = buf.instance_similarities(q, tau=0.8)
        assert np.allclose(sims, 0.25, atol=1e-12)

    def test_empty_buffer_query_rejected(self):
        buf = InstanceMemoryBuffer(DIM, K)
        with pytest.raises(BufferStateError):
            buf.instance_similarities(np.ones(DIM), 0.8)

    def test_similarities_match_straight_line_oracle(self):
        buf = make_buffer(5)
        q = RNG.normal(size=DIM)
        feats = np.stack([e.feature for e in buf.entries()])
        qn = q / np.linalg.norm(q)
        scores = feats @ qn / 0.8
        e = np.exp(scores - scores.max())
        oracle = e / e.sum()
        assert np.allclose(buf.instance_similarities(q, 0.8), oracle, atol=1e-12)

    def test_similarities_sum_to_one(self):
        buf = make_buffer(23)
        sims = buf.instance_similarities(RNG.normal(size=DIM), 0.1)
        assert abs(sims.sum() - 1.0) < 1e-6

    def test_classwise_max_single_class(self):
        entries = [(i, RNG.normal(size=DIM), 0) for i in range(6)]
        buf = InstanceMemoryBuffer.init_from_labeled(entries, num_classes=K)
        sims = buf.instance_similarities(RNG.normal(size=DIM), 0.8)
        out = buf.classwise_max(sims)
        assert out[0] == pytest.approx(sims.max())
        assert np.allclose(out[1:], 0.0)

    def test_classwise_max_one_entry_per_class_is_permutation(self):
        entries = [(i, RNG.normal(size=DIM), (3 * i) % K) for i in range(K)]
        buf = InstanceMemoryBuffer.init_from_labeled(entries, num_classes=K)
        sims = buf.instance_similarities(RNG.normal(size=DIM), 0.8)
        out = buf.classwise_max(sims)
        assert sorted(out) == pytest.approx(sorted(sims))

    def test_classwise_max_matches_bruteforce(self):
        buf = make_buffer(30)
        sims = buf.instance_similarities(RNG.normal(size=DIM), 0.5)
        out = buf.classwise_max(sims)
        labels = buf.labels
        for c in range(K):
            members = sims[labels == c]
            expected = members.max() if members.size else 0.0
            assert out[c] == pytest.approx(expected, abs=1e-15)
        assert np.all(out <= sims.max() + 1e-15)
        assert np.all(out >= 0.0)

    def test_batch_queries_match_per_sample(self):
        buf = make_buffer(17)
        z = RNG.normal(size=(9, DIM))
        sims_b = buf.instance_similarities_batch(z, 0.3)
        maxes_b = buf.classwise_max_batch(sims_b)
        for j in range(9):
            assert np.allclose(sims_b[j], buf.instance_similarities(z[j], 0.3), atol=1e-12)
            assert np.allclose(maxes_b[j], buf.classwise_max(sims_b[j]), atol=1e-15)


class TestRandomizedOperationSequences:
    def test_invariants_hold_over_random_ops(self):
        rng = np.random.default_rng(42)
        buf = make_buffer(12, capacity=30)
        labeled_ids = list(range(12))
        labeled_labels = {i: buf.entry(i).label for i in labeled_ids}
        next_id = 1000
        for _ in range(3000):
            op = rng.integers(4)
            if op == 0:
                buf.ema_update(int(rng.choice(labeled_ids)), rng.normal(size=DIM))
            elif op == 1:
                pseudo = rng.dirichlet(np.ones(K) * 0.2)
                buf.admit_unlabeled(next_id, rng.normal(size=DIM), pseudo)
                next_id += 1
            elif op == 2:
                sims = buf.instance_similarities(rng.normal(size=DIM), 0.4)
                assert abs(sims.sum() - 1.0) < 1e-6
            else:
                sims = buf.instance_similarities(rng.normal(size=DIM), 0.4)
                out = buf.classwise_max(sims)
                assert np.all(out >= 0) and np.all(out <= sims.max() + 1e-15)
        assert len(buf) <= 30
        for i in labeled_ids:
            assert i in buf
            assert buf.entry(i).label == labeled_labels[i]
        feats = np.stack([e.feature for e in buf.entries()])
        assert np.allclose(np.linalg.norm(feats, axis=1), 1.0, atol=1e-6)
