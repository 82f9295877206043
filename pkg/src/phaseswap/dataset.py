"""Windowing, subject/session-aware splits, class balancing and pretext sampling."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientDataError, ParameterError
from .signals import channel_mask_array, phase_swap_array

TRAIN, VALIDATION, TEST_A, TEST_B = "train", "validation", "test_a", "test_b"
SPLITS = (TRAIN, VALIDATION, TEST_A, TEST_B)


@dataclass
class Window:
    data: np.ndarray
    subject_id: str
    session_id: str
    start: int
    label: int | None = None

    @property
    def group(self) -> tuple:
        return (self.subject_id, self.session_id)

    @property
    def length(self) -> int:
        return self.data.shape[-1]


@dataclass(frozen=True)
class LabelSegment:
    recording: str
    start: int
    end: int  # exclusive
    label: int


def read_label_file(path) -> list[LabelSegment]:
    """CSV with header ``recording,start,end,label`` (sample indices, end exclusive)."""
    with open(path, newline="") as fh:
        return [
            LabelSegment(row["recording"], int(row["start"]), int(row["end"]), int(row["label"]))
            for row in csv.DictReader(fh)
        ]


def write_label_file(path, segments) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["recording", "start", "end", "label"])
        for s in segments:
            writer.writerow([s.recording, s.start, s.end, s.label])


def remap_labels(segments, label_map: dict) -> list[LabelSegment]:
    """Apply a label map (e.g. merging two stages); unmapped labels are dropped."""
    return [
        LabelSegment(s.recording, s.start, s.end, int(label_map[s.label]))
        for s in segments if s.label in label_map
    ]


def _window_label(segments, start: int, end: int):
    for s in segments:
        if s.start <= start and end <= s.end:
            return s.label
    return None


def extract_windows(r, window: int, stride: int | None = None, segments=None) -> list[Window]:
    """Windows at starts ``0, stride, 2*stride, ...``; the last partial window is dropped.

    With ``segments``, a window gets the label of the segment that fully
    contains it, and ``None`` when it straddles a boundary or is unlabeled.
    """
    stride = window if stride is None else stride
    if window < 1 or stride < 1:
        raise ParameterError(f"window and stride must be >= 1, got {window}, {stride}")
    n = r.data.shape[1]
    out = []
    for start in range(0, n - window + 1, stride):
        label = None if segments is None else _window_label(segments, start, start + window)
        out.append(Window(r.data[:, start:start + window], r.subject_id, r.session_id, start, label))
    return out


@dataclass
class SplitSpec:
    """Subject/session assignment to training, Validation, Test A and Test B.

    Within every training session the first ``train_fraction_within`` of the
    recording (by time) feeds training and the rest feeds Validation; windows
    that straddle the cut are left unused.
    """

    r_train: float
    train_ids: list
    heldout_ids: list
    train_sessions: dict
    testA_sessions: dict
    train_fraction_within: float = 0.75

    def __post_init__(self):
        self.train_ids = sorted(self.train_ids)
        self.heldout_ids = sorted(self.heldout_ids)
        self.train_sessions = {k: sorted(v) for k, v in sorted(self.train_sessions.items())}
        self.testA_sessions = {k: sorted(v) for k, v in sorted(self.testA_sessions.items())}

    def split_of(self, subject_id: str, session_id: str, start: int, length: int,
                 recording_length: int) -> str | None:
        """Which split a window belongs to (``None`` for unused)."""
        if subject_id in self.heldout_ids:
            return TEST_B
        if session_id in self.testA_sessions.get(subject_id, ()):
            return TEST_A
        if session_id in self.train_sessions.get(subject_id, ()):
            cut = int(math.floor(self.train_fraction_within * recording_length))
            if start + length <= cut:
                return TRAIN
            if start >= cut:
                return VALIDATION
            return None
        return None

    def partition(self, windows, recording_lengths: dict) -> dict:
        """Split ``windows`` into the four sets; ``recording_lengths`` maps ``(subject, session) -> T``."""
        out = {name: [] for name in SPLITS}
        for w in windows:
            name = self.split_of(w.subject_id, w.session_id, w.start, w.length,
                                 recording_lengths[w.group])
            if name is not None:
                out[name].append(w)
        return out

    def to_dict(self) -> dict:
        return {
            "r_train": self.r_train,
            "train_ids": self.train_ids,
            "heldout_ids": self.heldout_ids,
            "train_sessions": self.train_sessions,
            "testA_sessions": self.testA_sessions,
            "train_fraction_within": self.train_fraction_within,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(**d)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "SplitSpec":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def make_splits(subjects, sessions: dict, r_train: float, rng: np.random.Generator,
                hold_out_sessions: bool | None = None,
                train_fraction_within: float = 0.75) -> SplitSpec:
    """Assign ``ceil(r_train * n)`` subjects to the training side.

    Each training-side subject with two or more sessions gives one randomly
    chosen session to Test A. With ``r_train == 1`` no session is held out
    unless ``hold_out_sessions`` says otherwise.
    """
    subjects = sorted(set(subjects))
    if not subjects:
        raise ParameterError("cannot split an empty subject list")
    if not 0 < r_train <= 1:
        raise ParameterError(f"r_train must be in (0, 1], got {r_train}")
    for s in subjects:
        if not sessions.get(s):
            raise ParameterError(f"subject {s!r} has no sessions")
    if hold_out_sessions is None:
        hold_out_sessions = r_train < 1

    # the epsilon keeps e.g. 0.7 * 10 from rounding up to 8
    n_train = min(len(subjects), max(1, math.ceil(r_train * len(subjects) - 1e-9)))
    order = rng.permutation(len(subjects))
    train_ids = [subjects[i] for i in order[:n_train]]
    heldout_ids = [subjects[i] for i in order[n_train:]]

    train_sessions, test_a = {}, {}
    for s in sorted(train_ids):
        own = sorted(sessions[s])
        if hold_out_sessions and len(own) >= 2:
            held = own[int(rng.integers(len(own)))]
            test_a[s] = [held]
            train_sessions[s] = [x for x in own if x != held]
        else:
            test_a[s] = []
            train_sessions[s] = own
    return SplitSpec(r_train, train_ids, heldout_ids, train_sessions, test_a,
                     train_fraction_within)


# -- class balancing -------------------------------------------------------------

def rebalance(labels, rng: np.random.Generator, n_draws: int | None = None,
              n_classes: int | None = None) -> np.ndarray:
    """Indices drawn so that every class is equally likely per draw.

    A class is picked uniformly, then an example uniformly within it (with
    replacement), which oversamples minority classes.
    """
    labels = np.asarray(labels, dtype=np.int64)
    classes = np.unique(labels) if n_classes is None else np.arange(n_classes)
    members = [np.flatnonzero(labels == c) for c in classes]
    absent = [int(c) for c, m in zip(classes, members) if m.size == 0]
    if absent or labels.size == 0:
        raise InsufficientDataError(f"no examples for classes {absent}")
    n_draws = labels.size if n_draws is None else n_draws
    picks = rng.integers(len(classes), size=n_draws)
    out = np.empty(n_draws, dtype=np.int64)
    for ci, m in enumerate(members):
        where = np.flatnonzero(picks == ci)
        out[where] = m[rng.integers(m.size, size=where.size)]
    return out


def undersample_majority(windows, rng: np.random.Generator) -> list:
    """Reduce the majority class of a binary-labelled list to the minority count."""
    labels = np.array([w.label for w in windows])
    classes = np.unique(labels)
    if classes.size != 2:
        raise InsufficientDataError(f"undersampling needs two classes, found {classes.tolist()}")
    counts = [(labels == c).sum() for c in classes]
    minority = classes[int(np.argmin(counts))]
    majority = classes[1 - int(np.argmin(counts))]
    keep_major = rng.choice(np.flatnonzero(labels == majority), size=min(counts), replace=False)
    keep = np.sort(np.concatenate([np.flatnonzero(labels == minority), keep_major]))
    return [windows[i] for i in keep]


# -- phase-swap pretext ----------------------------------------------------------

@dataclass
class PretextBatch:
    inputs: np.ndarray  # (B, C, W)
    labels: np.ndarray  # (B,), 1 = phase-swapped
    sources: list = field(default_factory=list)  # per sample: (group, i, partner or None)


def group_pool(windows) -> dict:
    """``(subject, session) -> (n, C, W)`` array, groups in sorted order."""
    grouped = defaultdict(list)
    for w in windows:
        grouped[w.group].append(w)
    return {
        key: np.stack([w.data for w in sorted(grouped[key], key=lambda w: w.start)])
        for key in sorted(grouped)
    }


def _finish_batch(items, pool, rng, mask_keep):
    inputs, labels, sources = [], [], []
    for key, i, partner in items:
        x = pool[key][i]
        if partner is not None:
            x = phase_swap_array(x, pool[key][partner])
        if mask_keep is not None:
            x = channel_mask_array(x, mask_keep, rng)
        inputs.append(x)
        labels.append(0 if partner is None else 1)
        sources.append((key, i, partner))
    order = rng.permutation(len(items))
    return PretextBatch(
        np.stack(inputs)[order], np.array(labels, dtype=np.int64)[order], [sources[j] for j in order]
    )


def _draw_partner(n: int, i: int, rng) -> int:
    j = int(rng.integers(n - 1))
    return j + 1 if j >= i else j


def sample_ps_batch(pool: dict, batch_size: int, rng: np.random.Generator,
                    mask_keep: int | None = None) -> PretextBatch:
    """Draw ``batch_size // 2`` phase-swapped positives and the rest untouched negatives.

    Both inputs of a swap come from the same ``(subject, session)`` group.
    Groups with a single window never provide positives.
    """
    if batch_size < 2:
        raise ParameterError("batch_size must be at least 2")
    keys = list(pool)
    sizes = np.array([len(pool[k]) for k in keys])
    eligible = sizes >= 2
    if not eligible.any():
        raise InsufficientDataError("no (subject, session) group has two windows to swap")
    n_pos = batch_size // 2
    items = []
    weights = np.where(eligible, sizes, 0) / sizes[eligible].sum()
    for gi in rng.choice(len(keys), size=n_pos, p=weights):
        n = sizes[gi]
        i = int(rng.integers(n))
        items.append((keys[gi], i, _draw_partner(n, i, rng)))
    all_weights = sizes / sizes.sum()
    for gi in rng.choice(len(keys), size=batch_size - n_pos, p=all_weights):
        items.append((keys[gi], int(rng.integers(sizes[gi])), None))
    return _finish_batch(items, pool, rng, mask_keep)


def ps_epoch(pool: dict, batch_size: int, rng: np.random.Generator,
             mask_keep: int | None = None):
    """Yield batches covering every window once, half of each batch phase-swapped.

    Swap partners are drawn afresh on every call. A window from a
    single-window group is always used as a negative.
    """
    refs = [(key, i) for key in pool for i in range(len(pool[key]))]
    if not refs:
        raise InsufficientDataError("empty pretext pool")
    order = rng.permutation(len(refs))
    for lo in range(0, len(refs), batch_size):
        chunk = [refs[j] for j in order[lo:lo + batch_size]]
        swappable = [c for c in chunk if len(pool[c[0]]) >= 2]
        fixed = [c for c in chunk if len(pool[c[0]]) < 2]
        n_pos = min(len(chunk) // 2, len(swappable))
        items = [(k, i, _draw_partner(len(pool[k]), i, rng)) for k, i in swappable[:n_pos]]
        items += [(k, i, None) for k, i in swappable[n_pos:] + fixed]
        yield _finish_batch(items, pool, rng, mask_keep)


# -- relative positioning pretext ------------------------------------------------

@dataclass
class RpPair:
    x_t: Window
    x_t2: Window
    label: int  # +1 close in time, -1 far apart
    tau_pos: int
    tau_neg: int


def rp_label(t: int, t2: int, tau_pos: int, tau_neg: int) -> int:
    """``1(|t - t'| <= tau_pos) - 1(|t - t'| > tau_neg)``."""
    d = abs(t - t2)
    return int(d <= tau_pos) - int(d > tau_neg)


def sample_rp_pairs(windows, tau_pos: int, tau_neg: int, n_pairs: int,
                    rng: np.random.Generator) -> list[RpPair]:
    """Rejection-sample balanced relative-positioning pairs from one recording.

    Candidate pairs of distinct windows are drawn uniformly; label-0
    candidates are discarded, as are candidates of a class whose quota
    (``n_pairs // 2`` positives, the rest negatives) is already full.
    """
    if tau_pos > tau_neg:
        raise ParameterError(f"tau_pos ({tau_pos}) must not exceed tau_neg ({tau_neg})")
    windows = sorted(windows, key=lambda w: w.start)
    n = len(windows)
    starts = np.array([w.start for w in windows])
    if n < 2:
        raise InsufficientDataError("relative positioning needs at least two windows")
    gaps = np.abs(starts[:, None] - starts[None, :])
    off_diag = ~np.eye(n, dtype=bool)
    if not np.any((gaps <= tau_pos) & off_diag) or not np.any(gaps > tau_neg):
        raise InsufficientDataError(
            f"recording of {n} windows cannot yield both classes with tau_pos={tau_pos}, tau_neg={tau_neg}"
        )

    quota = {1: n_pairs // 2, -1: n_pairs - n_pairs // 2}
    pairs = []
    while quota[1] or quota[-1]:
        i, j = rng.integers(n, size=2)
        if i == j:
            continue
        label = rp_label(starts[i], starts[j], tau_pos, tau_neg)
        if label == 0 or quota[label] == 0:
            continue
        quota[label] -= 1
        pairs.append(RpPair(windows[i], windows[j], label, tau_pos, tau_neg))
    return pairs
