import itertools

import numpy as np
import pytest

from greedyflow.metrics import ModeTracker, mean_pairwise_similarity, spearman
from greedyflow.seqdist import levenshtein


class TestModeTracker:
    def test_first_above_threshold_accepted(self):
        tracker = ModeTracker(reward_threshold=1.0, distance_threshold=2)
        assert tracker.update([((0, 1, 1), 1.5)]) == 1
        assert tracker.count == 1

    def test_duplicate_rejected(self):
        tracker = ModeTracker(reward_threshold=1.0, distance_threshold=2)
        tracker.update([((0, 1, 1), 1.5)])
        assert tracker.update([((0, 1, 1), 2.0)]) == 0

    def test_below_reward_threshold_rejected(self):
        tracker = ModeTracker(reward_threshold=1.0, distance_threshold=1)
        assert tracker.update([((0, 0, 0), 0.99)]) == 0

    def test_distance_exactly_delta_rejected(self):
        # Separation must be strictly greater than the threshold.
        a = (0, 0, 0, 0)
        b = (0, 0, 1, 1)
        assert levenshtein(a, b) == 2
        tracker = ModeTracker(reward_threshold=0.0, distance_threshold=2)
        assert tracker.update([(a, 1.0), (b, 1.0)]) == 1

    def test_distance_above_delta_accepted(self):
        a = (0, 0, 0, 0)
        b = (1, 1, 1, 0)
        tracker = ModeTracker(reward_threshold=0.0, distance_threshold=2)
        assert tracker.update([(a, 1.0), (b, 1.0)]) == 2

    def test_pairwise_invariant_under_any_arrival_order(self):
        rng = np.random.default_rng(3)
        pool = [tuple(rng.integers(0, 2, size=6)) for _ in range(12)]
        for seed in range(20):
            order = np.random.default_rng(seed).permutation(len(pool))
            tracker = ModeTracker(reward_threshold=0.0, distance_threshold=2)
            tracker.update([(pool[i], 1.0) for i in order])
            for x, y in itertools.combinations(tracker.accepted, 2):
                assert levenshtein(x, y) > 2

    def test_state_round_trip(self):
        tracker = ModeTracker(reward_threshold=0.5, distance_threshold=1)
        tracker.update([((0, 1), 1.0), ((1, 0), 1.0)])
        back = ModeTracker.from_state_dict(tracker.state_dict())
        assert back.accepted == tracker.accepted
        assert back.count == tracker.count


class TestPairwiseSimilarity:
    def test_identical_objects(self):
        sim = mean_pairwise_similarity([(0, 1), (0, 1)], [1.0, 1.0], max_len=2)
        assert sim == 1.0

    def test_complementary_bitstrings(self):
        sim = mean_pairwise_similarity([(0, 0), (1, 1)], [1.0, 1.0], max_len=2)
        assert sim == 0.0

    def test_half_similarity(self):
        sim = mean_pairwise_similarity([(0, 0), (0, 1)], [1.0, 1.0], max_len=2)
        assert sim == pytest.approx(0.5)

    def test_top_k_selection(self):
        objs = [(0, 0), (0, 0), (1, 1)]
        rewards = [2.0, 1.9, 0.1]
        sim = mean_pairwise_similarity(objs, rewards, max_len=2, top_k=2)
        assert sim == 1.0  # the low-reward complement is dropped

    def test_single_object_rejected(self):
        with pytest.raises(ValueError):
            mean_pairwise_similarity([(0, 0)], [1.0], max_len=2)


class TestSpearman:
    def test_identity(self):
        assert spearman([1, 2, 3, 4], [1, 2, 3, 4]) == pytest.approx(1.0)

    def test_reversal(self):
        assert spearman([1, 2, 3, 4], [4, 3, 2, 1]) == pytest.approx(-1.0)

    def test_textbook_value(self):
        assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)

    def test_constant_input_rejected(self):
        with pytest.raises(ValueError):
            spearman([1, 1, 1], [1, 2, 3])

    def test_ties_use_average_ranks(self):
        # Two tied x values: compare against the closed-form Pearson of ranks.
        xs = [1.0, 1.0, 2.0, 3.0]
        ys = [1.0, 2.0, 3.0, 4.0]
        rx = np.array([1.5, 1.5, 3.0, 4.0])
        ry = np.array([1.0, 2.0, 3.0, 4.0])
        want = np.corrcoef(rx, ry)[0, 1]
        assert spearman(xs, ys) == pytest.approx(want, rel=1e-12)
