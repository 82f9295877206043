"""Synthetic recordings with controllable phase-amplitude coupling.

Each label segment is a regime of class ``k``: a base oscillation at a
frequency drawn from the class band plus its second harmonic, whose phase is
locked to twice the base phase plus a class-specific offset. That lock is
the structure a phase swap destroys; white noise has none of it.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .dataset import LabelSegment, write_label_file
from .edf import Recording, physical_range_for, save_identity_map, write_edf_file
from .errors import ParameterError


@dataclass
class SynthSpec:
    n_subjects: int = 8
    sessions_per_subject: int = 2
    n_classes: int = 4
    channels: int = 4
    sample_rate: float = 102.4
    duration: float = 600.0  # seconds per session
    segment_seconds: float = 30.0  # label granularity (W_Sup)
    coupling_strength: float = 1.0
    noise_level: float = 0.5
    harmonic_ratio: float = 0.8
    band_low: float = 2.0  # lower edge of the class-0 band, Hz
    band_width: float = 2.0
    band_gap: float = 0.5  # negative overlaps the class bands; -band_width gives one shared band
    subject_shift: float = 0.0  # std of a per-subject frequency offset, Hz
    envelope_depth: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.n_subjects < 1 or self.sessions_per_subject < 1 or self.channels < 1:
            raise ParameterError("subjects, sessions and channels must be positive")
        if self.n_classes < 1:
            raise ParameterError("n_classes must be positive")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise ParameterError(f"coupling_strength must be in [0, 1], got {self.coupling_strength}")
        if self.noise_level < 0:
            raise ParameterError("noise_level must be non-negative")
        if self.band_width <= 0 or self.band_gap < -self.band_width:
            raise ParameterError("band_width must be positive and band_gap at least -band_width")
        if self.duration < self.segment_seconds:
            raise ParameterError(
                f"duration {self.duration}s is shorter than one label segment ({self.segment_seconds}s)"
            )
        top = 2 * self.band(self.n_classes - 1)[1] + 3 * abs(self.subject_shift)
        if top >= self.sample_rate / 2:
            raise ParameterError(f"harmonics up to {top:.1f} Hz exceed the Nyquist frequency")

    @property
    def segment_samples(self) -> int:
        return int(round(self.segment_seconds * self.sample_rate))

    @property
    def n_segments(self) -> int:
        return int(round(self.duration * self.sample_rate)) // self.segment_samples

    def band(self, k: int) -> tuple:
        lo = self.band_low + k * (self.band_width + self.band_gap)
        return lo, lo + self.band_width

    def class_offset(self, k: int) -> float:
        """Harmonic phase minus twice the base phase for class ``k``."""
        return 2 * np.pi * k / self.n_classes


@dataclass
class Regime:
    start: int
    end: int
    label: int
    frequency: float
    base_phase: float
    offset: float


@dataclass
class SynthCorpus:
    spec: SynthSpec
    recordings: list
    segments: list  # LabelSegment, keyed by recording name
    regimes: dict = field(default_factory=dict)  # recording name -> [Regime]

    @staticmethod
    def name_of(r: Recording) -> str:
        return f"sub{r.subject_id}_ses{r.session_id}"

    def segments_for(self, r: Recording) -> list:
        name = self.name_of(r)
        return [s for s in self.segments if s.recording == name]


def _envelope(t: np.ndarray, depth: float, rng: np.random.Generator) -> np.ndarray:
    """Slow positive amplitude modulation (two components below 0.5 Hz)."""
    f = rng.uniform(0.05, 0.4, size=2)
    psi = rng.uniform(0, 2 * np.pi, size=2)
    mod = 0.5 * (np.sin(2 * np.pi * f[0] * t + psi[0]) + np.sin(2 * np.pi * f[1] * t + psi[1]))
    return 1.0 + depth * mod


def generate(spec: SynthSpec) -> SynthCorpus:
    """Build the corpus; identical specs give bit-identical corpora."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_segments * spec.segment_samples
    seg = spec.segment_samples
    recordings, segments, regimes = [], [], {}
    for s in range(spec.n_subjects):
        subject = f"{s:02d}"
        gains = rng.lognormal(0.0, 0.3, size=spec.channels)
        delays = rng.uniform(0.0, 0.05, size=spec.channels)  # seconds
        shift = rng.normal(0.0, spec.subject_shift) if spec.subject_shift > 0 else 0.0
        for j in range(spec.sessions_per_subject):
            session = str(j + 1)
            data = np.zeros((spec.channels, n))
            name = f"sub{subject}_ses{session}"
            rec_regimes = []
            for q in range(spec.n_segments):
                k = int(rng.integers(spec.n_classes))
                lo, hi = spec.band(k)
                f = rng.uniform(lo, hi) + shift
                phi = rng.uniform(0, 2 * np.pi)
                theta = spec.class_offset(k)
                t = np.arange(seg) / spec.sample_rate
                env = _envelope(t, spec.envelope_depth, rng)
                for c in range(spec.channels):
                    tc = t - delays[c]
                    base = np.cos(2 * np.pi * f * tc + phi)
                    harmonic = np.cos(2 * np.pi * 2 * f * tc + 2 * phi + theta)
                    data[c, q * seg:(q + 1) * seg] = (
                        spec.coupling_strength * gains[c] * env * (base + spec.harmonic_ratio * harmonic)
                    )
                segments.append(LabelSegment(name, q * seg, (q + 1) * seg, k))
                rec_regimes.append(Regime(q * seg, (q + 1) * seg, k, f, phi, theta))
            if spec.noise_level > 0:
                data += rng.normal(0.0, spec.noise_level, size=data.shape)
            recordings.append(Recording(subject, session, [f"ch{c}" for c in range(spec.channels)],
                                        spec.sample_rate, data, source="synthetic"))
            regimes[name] = rec_regimes
    return SynthCorpus(spec, recordings, segments, regimes)


def generate_white_noise(spec: SynthSpec) -> SynthCorpus:
    """Same layout as :func:`generate` but every sample is i.i.d. Gaussian.

    The noise standard deviation is ``spec.noise_level`` (1 when that is 0).
    Labels are still drawn per segment so the corpus can feed supervised code.
    """
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_segments * spec.segment_samples
    seg = spec.segment_samples
    sigma = spec.noise_level if spec.noise_level > 0 else 1.0
    recordings, segments = [], []
    for s in range(spec.n_subjects):
        for j in range(spec.sessions_per_subject):
            subject, session = f"{s:02d}", str(j + 1)
            name = f"sub{subject}_ses{session}"
            for q in range(spec.n_segments):
                segments.append(LabelSegment(name, q * seg, (q + 1) * seg, int(rng.integers(spec.n_classes))))
            data = rng.normal(0.0, sigma, size=(spec.channels, n))
            recordings.append(Recording(subject, session, [f"ch{c}" for c in range(spec.channels)],
                                        spec.sample_rate, data, source="synthetic"))
    return SynthCorpus(spec, recordings, segments, {})


def measured_offset(x: np.ndarray, frequency: float, sample_rate: float) -> float:
    """Harmonic phase minus twice the base phase, projected at the known frequency.

    A Hann taper keeps leakage between the two tones out of the estimate.
    """
    t = np.arange(x.shape[-1]) / sample_rate
    taper = np.hanning(x.shape[-1])
    base = np.sum(taper * x * np.exp(-2j * np.pi * frequency * t))
    harmonic = np.sum(taper * x * np.exp(-2j * np.pi * 2 * frequency * t))
    return float(np.angle(harmonic) - 2 * np.angle(base))


def wrap_angle(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def write_corpus(corpus: SynthCorpus, out_dir) -> dict:
    """Write EDF files plus ``labels.csv`` and ``identity.json`` sidecars.

    Returns the paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    mapping, paths = {}, []
    for r in corpus.recordings:
        file_name = f"{SynthCorpus.name_of(r)}.edf"
        path = os.path.join(out_dir, file_name)
        write_edf_file(path, r, physical_range=physical_range_for(r.data))
        mapping[file_name] = (r.subject_id, r.session_id)
        paths.append(path)
    # label rows are keyed by file stem so they match ingested recordings
    write_label_file(os.path.join(out_dir, "labels.csv"), corpus.segments)
    save_identity_map(os.path.join(out_dir, "identity.json"), mapping)
    return {"edf": paths, "labels": os.path.join(out_dir, "labels.csv"),
            "identity": os.path.join(out_dir, "identity.json")}


def spec_to_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
