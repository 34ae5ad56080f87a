"""False-match-rate threshold calibration against a brute-force scan."""

from __future__ import annotations

import math

import numpy as np
import pytest

from oracles import scan_threshold

from morphbench.metrics import (ComparisonScoreSet, MatedScore, NonMatedScore,
                                calibrate_threshold, calibrate_thresholds)


class TestCalibrateThreshold:
    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(11)
        targets = [0.0, 0.001, 0.01, 0.05, 0.1, 0.5, 1.0]
        for trial in range(300):
            n = int(rng.integers(1, 200))
            # discrete support forces ties between candidates
            scores = rng.integers(0, 25, size=n).astype(float).tolist()
            target = targets[trial % len(targets)]
            assert calibrate_threshold(scores, target) \
                == scan_threshold(scores, target), (trial, n, target)

    def test_thousand_distinct_values(self):
        scores = [float(v) for v in range(1000)]
        tau = calibrate_threshold(scores, 0.001)
        assert tau == 999.0
        # achieved rate is exactly the target, not merely below it
        assert sum(1 for s in scores if s >= tau) / len(scores) == 0.001

    def test_five_hundred_values_cannot_reach_one_permille(self):
        # any finite candidate matches at least 1/500 = 0.002 of the scores
        scores = [float(v) for v in range(500)]
        assert calibrate_threshold(scores, 0.001) == math.inf

    def test_all_equal_scores(self):
        assert calibrate_threshold([0.7] * 50, 0.001) == math.inf
        assert calibrate_threshold([0.7] * 50, 1.0) == 0.7

    def test_target_one_returns_minimum(self):
        assert calibrate_threshold([3.0, 1.0, 2.0], 1.0) == 1.0

    def test_target_zero_returns_inf(self):
        assert calibrate_threshold([1.0, 2.0, 3.0], 0.0) == math.inf

    def test_ties_at_the_cut(self):
        # 10 scores, target 0.2: threshold 9 matches {9, 9} -> rate 0.2
        scores = [1.0] * 8 + [9.0, 9.0]
        assert calibrate_threshold(scores, 0.2) == 9.0
        assert calibrate_threshold(scores, 0.1) == math.inf

    def test_empty_scores(self):
        with pytest.raises(ValueError, match="zero non-mated"):
            calibrate_threshold([], 0.001)

    def test_non_finite_scores(self):
        with pytest.raises(ValueError, match="finite"):
            calibrate_threshold([1.0, math.nan], 0.001)

    def test_target_out_of_range(self):
        with pytest.raises(ValueError, match="within"):
            calibrate_threshold([1.0], 1.5)
        with pytest.raises(ValueError, match="within"):
            calibrate_threshold([1.0], -0.1)


class TestThresholdSet:
    def make_set(self):
        mated = [MatedScore(m, role, f, 1, 5.0)
                 for m in ("m1",) for role in ("a", "b") for f in ("f1", "f2")]
        non_mated = ([NonMatedScore("f1", float(v)) for v in range(10)]
                     + [NonMatedScore("f2", float(10 * v)) for v in range(10)])
        return ComparisonScoreSet(mated=mated, non_mated=non_mated)

    def test_per_frs_calibration(self):
        ts = calibrate_thresholds(self.make_set(), target_fmr=0.1)
        assert ts.threshold("f1") == 9.0
        assert ts.threshold("f2") == 90.0
        assert ts.target_fmr == 0.1

    def test_match_rule_is_inclusive(self):
        ts = calibrate_thresholds(self.make_set(), target_fmr=0.1)
        assert ts.is_match("f1", 9.0)
        assert not ts.is_match("f1", 8.999999)

    def test_unknown_frs(self):
        ts = calibrate_thresholds(self.make_set(), target_fmr=0.1)
        with pytest.raises(KeyError, match="no calibrated threshold for frs 'fX'"):
            ts.threshold("fX")

    def test_infinite_threshold_matches_nothing(self):
        ts = calibrate_thresholds(self.make_set(), target_fmr=0.001)
        assert ts.threshold("f1") == math.inf
        assert not ts.is_match("f1", 1e300)
