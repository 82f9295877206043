import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from phaseswap.dataset import (
    SPLITS,
    TEST_A,
    TEST_B,
    TRAIN,
    VALIDATION,
    LabelSegment,
    SplitSpec,
    Window,
    extract_windows,
    group_pool,
    make_splits,
    ps_epoch,
    read_label_file,
    rebalance,
    remap_labels,
    rp_label,
    sample_ps_batch,
    sample_rp_pairs,
    undersample_majority,
    write_label_file,
)
from phaseswap.edf import Recording
from phaseswap.errors import InsufficientDataError, ParameterError
from phaseswap.signals import phase_swap_array


def recording(length, channels=1, subject="a", session="1", seed=0):
    data = np.random.default_rng(seed).normal(size=(channels, length))
    return Recording(subject, session, [f"c{i}" for i in range(channels)], 1.0, data)


class TestWindows:
    @pytest.mark.parametrize("length,w,stride,starts", [
        (10, 5, 5, [0, 5]),
        (10, 5, 3, [0, 3]),
        (4, 5, 5, []),
        (10, 5, None, [0, 5]),
        (7, 1, 2, [0, 2, 4, 6]),
    ])
    def test_starts(self, length, w, stride, starts):
        assert [x.start for x in extract_windows(recording(length), w, stride)] == starts

    def test_window_content(self):
        r = recording(20, channels=2)
        for w in extract_windows(r, 6, 4):
            np.testing.assert_array_equal(w.data, r.data[:, w.start:w.start + 6])
            assert w.start + w.length <= 20

    def test_labels_from_segments(self):
        segs = [LabelSegment("r", 0, 10, 2), LabelSegment("r", 10, 20, 1)]
        labels = [w.label for w in extract_windows(recording(20), 5, 5, segs)]
        assert labels == [2, 2, 1, 1]
        labels = [w.label for w in extract_windows(recording(20), 4, 4, segs)]
        assert labels == [2, 2, None, 1, 1]

    def test_bad_stride(self):
        with pytest.raises(ParameterError):
            extract_windows(recording(5), 2, 0)

    def test_label_file_round_trip(self, tmp_path):
        segs = [LabelSegment("x", 0, 3072, 0), LabelSegment("y", 3072, 6144, 4)]
        write_label_file(tmp_path / "l.csv", segs)
        assert read_label_file(tmp_path / "l.csv") == segs

    def test_remap_merges_and_drops(self):
        segs = [LabelSegment("x", 0, 1, 3), LabelSegment("x", 1, 2, 4), LabelSegment("x", 2, 3, 9)]
        out = remap_labels(segs, {3: 3, 4: 3})
        assert [s.label for s in out] == [3, 3]


def sessions_for(n_subjects, rng):
    return {f"s{i}": [str(j) for j in range(int(rng.integers(1, 4)))] for i in range(n_subjects)}


def check_split_laws(spec, subjects, sessions, r_train):
    assert set(spec.train_ids).isdisjoint(spec.heldout_ids)
    assert set(spec.train_ids) | set(spec.heldout_ids) == set(subjects)
    assert len(spec.train_ids) == min(len(subjects), max(1, math.ceil(r_train * len(subjects) - 1e-9)))
    for s in spec.train_ids:
        train, test_a = set(spec.train_sessions[s]), set(spec.testA_sessions[s])
        assert train.isdisjoint(test_a)
        assert train | test_a == set(sessions[s])
        expected_a = 1 if (len(sessions[s]) >= 2 and r_train < 1) else 0
        assert len(test_a) == expected_a
    assert set(spec.train_sessions) == set(spec.train_ids)

    # every window of every recording lands in at most one split, consistently
    lengths = {(s, t): 40 for s in subjects for t in sessions[s]}
    windows = [Window(np.zeros((1, 4)), s, t, start) for (s, t) in lengths for start in range(0, 37, 4)]
    parts = spec.partition(windows, lengths)
    seen = [id(w) for name in SPLITS for w in parts[name]]
    assert len(seen) == len(set(seen))
    for w in parts[TEST_B]:
        assert w.subject_id in spec.heldout_ids
    for name in (TRAIN, VALIDATION, TEST_A):
        for w in parts[name]:
            assert w.subject_id in spec.train_ids
    for w in parts[TEST_A]:
        assert w.session_id in spec.testA_sessions[w.subject_id]
    for name in (TRAIN, VALIDATION):
        for w in parts[name]:
            assert w.session_id in spec.train_sessions[w.subject_id]
    cut = math.floor(0.75 * 40)
    assert all(w.start + w.length <= cut for w in parts[TRAIN])
    assert all(w.start >= cut for w in parts[VALIDATION])
    unused = set(map(id, windows)) - set(seen)
    for w in windows:
        if id(w) in unused:
            assert w.subject_id in spec.train_ids and w.start < cut < w.start + w.length


class TestSplits:
    def test_ten_subjects_two_sessions(self):
        subjects = [f"s{i}" for i in range(10)]
        sessions = {s: ["1", "2"] for s in subjects}
        spec = make_splits(subjects, sessions, 0.2, np.random.default_rng(0))
        assert len(spec.train_ids) == 2 and len(spec.heldout_ids) == 8
        assert all(len(spec.testA_sessions[s]) == 1 for s in spec.train_ids)

    def test_all_subjects(self):
        subjects = [f"s{i}" for i in range(5)]
        sessions = {s: ["1", "2"] for s in subjects}
        spec = make_splits(subjects, sessions, 1.0, np.random.default_rng(0))
        assert spec.heldout_ids == []
        assert all(spec.testA_sessions[s] == [] for s in subjects)
        assert all(spec.train_sessions[s] == ["1", "2"] for s in subjects)

    def test_deterministic(self):
        subjects = [f"s{i}" for i in range(7)]
        sessions = {s: ["1", "2", "3"] for s in subjects}
        a = make_splits(subjects, sessions, 0.4, np.random.default_rng(3))
        b = make_splits(subjects, sessions, 0.4, np.random.default_rng(3))
        assert a.to_dict() == b.to_dict()

    def test_single_session_subject_stays_in_training(self):
        spec = make_splits(["a"], {"a": ["1"]}, 0.5, np.random.default_rng(0))
        assert spec.train_sessions["a"] == ["1"] and spec.testA_sessions["a"] == []

    def test_empty_subjects(self):
        with pytest.raises(ParameterError):
            make_splits([], {}, 0.5, np.random.default_rng(0))

    def test_ceil_is_not_inflated_by_rounding(self):
        subjects = [f"s{i}" for i in range(10)]
        spec = make_splits(subjects, {s: ["1"] for s in subjects}, 0.7, np.random.default_rng(0))
        assert len(spec.train_ids) == 7

    def test_save_load(self, tmp_path):
        subjects = ["a", "b", "c"]
        spec = make_splits(subjects, {s: ["1", "2"] for s in subjects}, 0.5, np.random.default_rng(1))
        spec.save(tmp_path / "split.json")
        assert SplitSpec.load(tmp_path / "split.json").to_dict() == spec.to_dict()

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 15), st.sampled_from([0.05, 0.2, 0.25, 0.5, 0.7, 1.0]), st.integers(0, 10 ** 6))
    def test_laws(self, n, r_train, seed):
        rng = np.random.default_rng(seed)
        subjects = [f"s{i}" for i in range(n)]
        sessions = sessions_for(n, rng)
        sessions = {s: v or ["0"] for s, v in sessions.items()}
        spec = make_splits(subjects, sessions, r_train, rng)
        check_split_laws(spec, subjects, sessions, r_train)


class TestRebalance:
    def test_two_classes(self):
        labels = np.array([0] * 100 + [1] * 10)
        idx = rebalance(labels, np.random.default_rng(0), n_draws=20000)
        frac = np.mean(labels[idx] == 1)
        assert abs(frac - 0.5) < 0.02

    def test_three_classes_chi_square(self):
        labels = np.array([0] * 90 + [1] * 9 + [2] * 1)
        idx = rebalance(labels, np.random.default_rng(1), n_draws=10000)
        counts = np.bincount(labels[idx], minlength=3)
        assert np.all(np.abs(counts / 10000 - 1 / 3) < 0.02)
        assert stats.chisquare(counts).pvalue > 0.001

    def test_absent_class(self):
        with pytest.raises(InsufficientDataError, match=r"\[1\]"):
            rebalance([0, 0, 2], np.random.default_rng(0), n_classes=3)

    def test_undersample(self):
        windows = [Window(np.zeros((1, 1)), "a", "1", i, int(i < 4)) for i in range(1000)]
        kept = undersample_majority(windows, np.random.default_rng(0))
        labels = [w.label for w in kept]
        assert labels.count(1) == 4 and labels.count(0) == 4
        again = undersample_majority(windows, np.random.default_rng(0))
        assert [w.start for w in kept] == [w.start for w in again]

    def test_undersample_balanced_and_single_class(self):
        windows = [Window(np.zeros((1, 1)), "a", "1", i, i % 2) for i in range(10)]
        assert len(undersample_majority(windows, np.random.default_rng(0))) == 10
        with pytest.raises(InsufficientDataError):
            undersample_majority(windows[:1], np.random.default_rng(0))


def pool_of(groups, n, c=2, w=16, seed=0):
    rng = np.random.default_rng(seed)
    windows = [Window(rng.normal(size=(c, w)), s, "1", i * w) for s in groups for i in range(n)]
    return group_pool(windows)


class TestPhaseSwapSampling:
    def test_balance_and_locality(self):
        pool = pool_of(["a", "b", "c"], 5)
        batch = sample_ps_batch(pool, 128, np.random.default_rng(0))
        assert batch.inputs.shape == (128, 2, 16)
        assert batch.labels.sum() == 64
        for x, label, (key, i, partner) in zip(batch.inputs, batch.labels, batch.sources):
            if label:
                assert partner is not None and partner != i
                np.testing.assert_allclose(x, phase_swap_array(pool[key][i], pool[key][partner]))
            else:
                np.testing.assert_array_equal(x, pool[key][i])

    def test_odd_batch(self):
        batch = sample_ps_batch(pool_of(["a"], 4), 7, np.random.default_rng(0))
        assert abs(2 * batch.labels.sum() - 7) <= 1

    def test_deterministic(self):
        pool = pool_of(["a", "b"], 4)
        a = sample_ps_batch(pool, 16, np.random.default_rng(9))
        b = sample_ps_batch(pool, 16, np.random.default_rng(9))
        np.testing.assert_array_equal(a.inputs, b.inputs)

    def test_singleton_group_never_positive(self):
        pool = pool_of(["a"], 5)
        pool.update(pool_of(["z"], 1, seed=3))
        for seed in range(5):
            batch = sample_ps_batch(pool, 32, np.random.default_rng(seed))
            for label, (key, _, _) in zip(batch.labels, batch.sources):
                assert not (label and key == ("z", "1"))

    def test_no_swappable_group(self):
        with pytest.raises(InsufficientDataError):
            sample_ps_batch(pool_of(["a"], 1), 4, np.random.default_rng(0))

    def test_masking(self):
        pool = pool_of(["a"], 4, c=6)
        batch = sample_ps_batch(pool, 8, np.random.default_rng(0), mask_keep=2)
        assert all(np.sum(np.any(x != 0, axis=1)) == 2 for x in batch.inputs)

    def test_epoch_covers_every_window_once(self):
        pool = pool_of(["a", "b"], 9)
        seen = []
        for batch in ps_epoch(pool, 4, np.random.default_rng(0)):
            assert abs(2 * batch.labels.sum() - len(batch.labels)) <= 1
            seen += [(k, i) for k, i, _ in batch.sources]
        assert sorted(seen) == sorted((k, i) for k in pool for i in range(9))


class TestRelativePositioning:
    W = 5

    def test_label_rule(self):
        tau = 12 * self.W
        assert rp_label(0, 5 * self.W, tau, tau) == 1
        assert rp_label(0, 20 * self.W, tau, tau) == -1
        assert rp_label(0, 15, 10, 20) == 0

    def test_pairs(self):
        windows = extract_windows(recording(400), self.W)
        pairs = sample_rp_pairs(windows, 12 * self.W, 24 * self.W, 200, np.random.default_rng(0))
        assert len(pairs) == 200
        labels = np.array([p.label for p in pairs])
        assert abs((labels == 1).sum() - (labels == -1).sum()) <= 0.1 * 200
        for p in pairs:
            d = abs(p.x_t.start - p.x_t2.start)
            brute = (1 if d <= p.tau_pos else 0) - (1 if d > p.tau_neg else 0)
            assert p.label == brute != 0
            assert p.x_t.start != p.x_t2.start

    def test_too_short(self):
        windows = extract_windows(recording(30), self.W)
        with pytest.raises(InsufficientDataError):
            sample_rp_pairs(windows, 60, 60, 10, np.random.default_rng(0))

    def test_bad_taus(self):
        with pytest.raises(ParameterError):
            sample_rp_pairs(extract_windows(recording(30), 5), 20, 10, 4, np.random.default_rng(0))
