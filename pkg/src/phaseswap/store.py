"""Ingestion into a normalized recording store, and loading it back.

A store directory holds ``index.json`` (one entry per recording with its
provenance), ``recordings/<name>.npz`` with the preprocessed ``C x T`` data,
and ``labels.csv`` with label segments in store sample indices.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import LabelSegment, read_label_file, remap_labels, write_label_file
from .edf import Recording, load_identity_map, read_edf_file
from .errors import EdfError, PhaseSwapError
from .signals import normalize, resample_array

log = logging.getLogger(__name__)

TARGET_RATE = 102.4
INDEX = "index.json"
LABELS = "labels.csv"
STORE_FORMAT = "phaseswap-store"
STORE_VERSION = 1


@dataclass
class IngestReport:
    ingested: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)  # file name -> reason


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def preprocess(r: Recording, target_rate: float = TARGET_RATE) -> Recording:
    """Resample to ``target_rate`` and z-score every channel."""
    if r.sample_rate != target_rate:
        r = replace(r, data=resample_array(r.data, r.sample_rate, target_rate), sample_rate=target_rate)
    return normalize(r)


def rescale_segments(segments, factor: float) -> list[LabelSegment]:
    """Move label boundaries to a new sample rate (``factor = new / old``)."""
    return [
        LabelSegment(s.recording, int(round(s.start * factor)), int(round(s.end * factor)), s.label)
        for s in segments
    ]


def ingest_directory(data_dir, mapping_file, out_dir, labels_file=None, label_map: dict | None = None,
                     target_rate: float = TARGET_RATE) -> IngestReport:
    """Read every ``*.edf`` in ``data_dir`` into a store at ``out_dir``.

    Every EDF file must have an entry in the identity map; a missing entry
    raises before anything is written. Files that cannot be parsed are
    skipped and listed in the report.
    """
    mapping = load_identity_map(mapping_file)
    files = sorted(f for f in os.listdir(data_dir) if f.lower().endswith(".edf"))
    if not files:
        raise EdfError(f"no .edf files in {data_dir}")
    missing = [f for f in files if f not in mapping]
    if missing:
        raise EdfError(f"no identity mapping entry for {', '.join(missing)}")

    segments = read_label_file(labels_file) if labels_file else []
    if label_map is not None:
        segments = remap_labels(segments, label_map)
    by_recording: dict = {}
    for s in segments:
        by_recording.setdefault(s.recording, []).append(s)

    os.makedirs(os.path.join(out_dir, "recordings"), exist_ok=True)
    report, index, stored_segments = IngestReport(), [], []
    for name in files:
        path = os.path.join(data_dir, name)
        subject, session = mapping[name]
        try:
            raw = read_edf_file(path, subject, session)
            r = preprocess(raw, target_rate)
        except (PhaseSwapError, OSError) as exc:
            log.warning("skipping %s: %s", name, exc)
            report.failed[name] = f"{type(exc).__name__}: {exc}"
            continue
        stem = os.path.splitext(name)[0]
        np.savez(os.path.join(out_dir, "recordings", f"{stem}.npz"), data=r.data)
        index.append({
            "name": stem, "subject": subject, "session": session,
            "channels": r.channel_labels, "sample_rate": r.sample_rate, "n_samples": r.n_samples,
            "source": name, "source_sha256": _sha256(path), "source_rate": raw.sample_rate,
        })
        factor = target_rate / raw.sample_rate
        stored_segments += [
            s for s in rescale_segments(by_recording.get(stem, []), factor) if s.end <= r.n_samples
        ]
        report.ingested.append(name)

    with open(os.path.join(out_dir, INDEX), "w") as fh:
        json.dump({"format": STORE_FORMAT, "version": STORE_VERSION, "target_rate": target_rate,
                   "label_map": {str(k): v for k, v in (label_map or {}).items()},
                   "recordings": index, "failed": report.failed}, fh, indent=2, sort_keys=True)
    write_label_file(os.path.join(out_dir, LABELS), stored_segments)
    return report


def load_store(store_dir):
    """Returns ``(recordings, segments)`` with segments keyed by ``(subject, session)``."""
    index_path = os.path.join(store_dir, INDEX)
    try:
        with open(index_path) as fh:
            index = json.load(fh)
    except FileNotFoundError:
        raise EdfError(f"{store_dir} is not a recording store (no {INDEX})") from None
    if index.get("format") != STORE_FORMAT:
        raise EdfError(f"{index_path} is not a phaseswap store index")
    labels_path = os.path.join(store_dir, LABELS)
    segments = read_label_file(labels_path) if os.path.exists(labels_path) else []
    by_name: dict = {}
    for s in segments:
        by_name.setdefault(s.recording, []).append(s)

    recordings, keyed = [], {}
    for entry in index["recordings"]:
        with np.load(os.path.join(store_dir, "recordings", f"{entry['name']}.npz")) as z:
            data = z["data"]
        recordings.append(Recording(entry["subject"], entry["session"], entry["channels"],
                                    entry["sample_rate"], data, source=entry["source"]))
        keyed[(entry["subject"], entry["session"])] = by_name.get(entry["name"], [])
    return recordings, keyed
