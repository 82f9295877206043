"""European Data Format (EDF) reading and writing.

Only continuous 16-bit EDF (and EDF+C) is supported. Annotation channels are
dropped on read; channels recorded at different rates are resampled to the
highest rate in the file.
"""

from __future__ import annotations

import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateScalingError,
    EdfError,
    InvalidSignalError,
    MalformedHeaderError,
    RangeError,
    TruncatedFileError,
)
from .signals import resample_array

ANNOTATION_LABEL = "EDF Annotations"
DIGITAL_RANGE = (-32768, 32767)

# (name, width) of the fixed part of the header
_FIXED = [
    ("version", 8), ("patient", 80), ("recording", 80), ("start_date", 8),
    ("start_time", 8), ("header_bytes", 8), ("reserved", 44), ("n_records", 8),
    ("record_duration", 8), ("n_signals", 4),
]
# (name, width) of the per-signal fields, each stored for all signals in turn
_PER_SIGNAL = [
    ("label", 16), ("transducer", 80), ("dimension", 8), ("physical_min", 8),
    ("physical_max", 8), ("digital_min", 8), ("digital_max", 8), ("prefiltering", 80),
    ("samples_per_record", 8), ("reserved", 32),
]


@dataclass
class Recording:
    """One subject/session multichannel recording (``C x T``).

    ``T > 0`` is enforced at ingestion (:func:`read_edf`); an empty recording
    can still be built in order to write a header-only file.
    """

    subject_id: str
    session_id: str
    channel_labels: list
    sample_rate: float
    data: np.ndarray
    source: str = "synthetic"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise InvalidSignalError(f"recording data must be C x T, got shape {self.data.shape}")
        self.channel_labels = [str(label) for label in self.channel_labels]
        if len(self.channel_labels) != self.data.shape[0]:
            raise InvalidSignalError(
                f"{len(self.channel_labels)} channel labels for {self.data.shape[0]} channels"
            )
        if not np.all(np.isfinite(self.data)):
            raise InvalidSignalError("recording contains non-finite values")
        if not self.sample_rate > 0:
            raise InvalidSignalError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]


@dataclass
class SignalHeader:
    label: str
    transducer: str = ""
    dimension: str = "uV"
    physical_min: float = -1.0
    physical_max: float = 1.0
    digital_min: int = DIGITAL_RANGE[0]
    digital_max: int = DIGITAL_RANGE[1]
    prefiltering: str = ""
    samples_per_record: int = 1
    reserved: str = ""

    @property
    def gain(self) -> float:
        return (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)

    def to_physical(self, digital: np.ndarray) -> np.ndarray:
        return (digital.astype(np.float64) - self.digital_min) * self.gain + self.physical_min

    def to_digital(self, physical: np.ndarray) -> np.ndarray:
        scaled = (np.asarray(physical, dtype=np.float64) - self.physical_min) / self.gain
        digital = np.rint(scaled + self.digital_min)
        return np.clip(digital, self.digital_min, self.digital_max).astype(np.int16)


@dataclass
class EdfHeader:
    version: str = "0"
    patient: str = "X X X X"
    recording: str = "Startdate X X X X"
    start_date: str = "01.01.85"
    start_time: str = "00.00.00"
    header_bytes: int = 256
    reserved: str = ""
    n_records: int = 0
    record_duration: float = 1.0
    n_signals: int = 0
    signals: list = field(default_factory=list)

    def sample_rate(self, index: int) -> float:
        return self.signals[index].samples_per_record / self.record_duration


def _field(text: str, width: int) -> bytes:
    raw = text.encode("ascii", errors="replace")
    if len(raw) > width:
        raise EdfError(f"header field {text!r} is longer than {width} characters")
    return raw.ljust(width, b" ")


def format_number(value: float, width: int = 8) -> str:
    """Most precise plain decimal text for ``value`` that fits in ``width`` characters."""
    value = float(value)
    if value.is_integer() and len(str(int(value))) <= width:
        return str(int(value))
    for decimals in range(width, -1, -1):
        text = f"{value:.{decimals}f}"
        if "." in text:
            text = text.rstrip("0").rstrip(".")
        if len(text) <= width and float(text) != 0.0:
            return text
    raise EdfError(f"{value!r} cannot be written in {width} characters")


def _parse_int(text: str, name: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise MalformedHeaderError(f"header field {name} is not an integer: {text!r}") from None


def _parse_float(text: str, name: str) -> float:
    try:
        return float(text.strip())
    except ValueError:
        raise MalformedHeaderError(f"header field {name} is not a number: {text!r}") from None


def _read_exact(stream, n: int, what: str) -> bytes:
    data = stream.read(n)
    if len(data) < n:
        raise TruncatedFileError(f"file ends inside the {what} ({len(data)} of {n} bytes)")
    return data


def read_header(stream) -> EdfHeader:
    raw = _read_exact(stream, 256, "fixed header")
    values, pos = {}, 0
    for name, width in _FIXED:
        values[name] = raw[pos:pos + width].decode("ascii", errors="replace")
        pos += width

    ns = _parse_int(values["n_signals"], "n_signals")
    if ns < 1:
        raise MalformedHeaderError(f"number of signals must be positive, got {ns}")
    header = EdfHeader(
        version=values["version"].strip(),
        patient=values["patient"].rstrip(),
        recording=values["recording"].rstrip(),
        start_date=values["start_date"].strip(),
        start_time=values["start_time"].strip(),
        header_bytes=_parse_int(values["header_bytes"], "header_bytes"),
        reserved=values["reserved"].rstrip(),
        n_records=_parse_int(values["n_records"], "n_records"),
        record_duration=_parse_float(values["record_duration"], "record_duration"),
        n_signals=ns,
    )
    if header.header_bytes != 256 + 256 * ns:
        raise MalformedHeaderError(
            f"header_bytes is {header.header_bytes}, expected {256 + 256 * ns} for {ns} signals"
        )
    if header.reserved.startswith("EDF+D"):
        raise EdfError("discontinuous EDF+ files are not supported")

    raw = _read_exact(stream, 256 * ns, "signal headers")
    per_signal, pos = {}, 0
    for name, width in _PER_SIGNAL:
        per_signal[name] = [
            raw[pos + i * width:pos + (i + 1) * width].decode("ascii", errors="replace")
            for i in range(ns)
        ]
        pos += width * ns

    for i in range(ns):
        header.signals.append(SignalHeader(
            label=per_signal["label"][i].strip(),
            transducer=per_signal["transducer"][i].rstrip(),
            dimension=per_signal["dimension"][i].strip(),
            physical_min=_parse_float(per_signal["physical_min"][i], "physical_min"),
            physical_max=_parse_float(per_signal["physical_max"][i], "physical_max"),
            digital_min=_parse_int(per_signal["digital_min"][i], "digital_min"),
            digital_max=_parse_int(per_signal["digital_max"][i], "digital_max"),
            prefiltering=per_signal["prefiltering"][i].rstrip(),
            samples_per_record=_parse_int(per_signal["samples_per_record"][i], "samples_per_record"),
            reserved=per_signal["reserved"][i].rstrip(),
        ))
    return header


def read_edf_raw(stream):
    """Parse a header and the digital samples of every signal.

    Returns ``(header, digital)`` where ``digital[i]`` is an ``int16`` array
    with all samples of signal ``i``.
    """
    if isinstance(stream, (bytes, bytearray)):
        stream = io.BytesIO(stream)
    header = read_header(stream)
    spr = np.array([s.samples_per_record for s in header.signals], dtype=np.int64)
    if np.any(spr < 1):
        raise MalformedHeaderError("samples_per_record must be positive for every signal")
    record_samples = int(spr.sum())
    body = stream.read()
    n_records = header.n_records
    if n_records == -1:
        n_records = len(body) // (2 * record_samples)
        header.n_records = n_records
    expected = n_records * record_samples * 2
    if len(body) < expected:
        raise TruncatedFileError(
            f"data section holds {len(body)} bytes, header promises {expected}"
        )
    samples = np.frombuffer(body[:expected], dtype="<i2").reshape(n_records, record_samples)
    offsets = np.concatenate([[0], np.cumsum(spr)])
    digital = [
        samples[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.int16)
        for i in range(header.n_signals)
    ]
    return header, digital


def read_edf(stream, subject_id: str = "", session_id: str = "", source: str = "") -> Recording:
    """Read an EDF byte stream into a :class:`Recording` in physical units."""
    header, digital = read_edf_raw(stream)
    keep = [i for i, s in enumerate(header.signals) if s.label != ANNOTATION_LABEL]
    if not keep:
        raise EdfError("file contains only annotation channels")
    if header.n_records == 0:
        raise EdfError("file contains no data records")
    if not header.record_duration > 0:
        raise MalformedHeaderError(f"record duration must be positive, got {header.record_duration}")

    channels = []
    for i in keep:
        s = header.signals[i]
        if s.digital_min >= s.digital_max:
            raise DegenerateScalingError(
                f"signal {s.label!r}: digital range [{s.digital_min}, {s.digital_max}] is empty"
            )
        if s.physical_min == s.physical_max:
            raise DegenerateScalingError(f"signal {s.label!r}: physical range has zero width")
        channels.append(s.to_physical(digital[i]))

    rates = [header.sample_rate(i) for i in keep]
    target = max(rates)
    length = max(len(c) for c in channels)
    for j, (channel, rate) in enumerate(zip(channels, rates)):
        if len(channel) != length:
            channels[j] = resample_array(channel, rate, target)
    if source == "" and hasattr(stream, "name"):
        source = str(stream.name)
    return Recording(
        subject_id=subject_id,
        session_id=session_id,
        channel_labels=[header.signals[i].label for i in keep],
        sample_rate=target,
        data=np.vstack(channels),
        source=source or "stream",
    )


def read_edf_file(path, subject_id: str = "", session_id: str = "") -> Recording:
    with open(path, "rb") as fh:
        return read_edf(fh, subject_id, session_id, source=os.fspath(path))


def _record_layout(n_samples: int, rate: float) -> tuple:
    """Pick ``(samples_per_record, n_records, duration_text)``.

    Prefers whole-second records that tile the data exactly; otherwise the
    whole recording becomes one record.
    """
    for seconds in range(1, 61):
        spr = rate * seconds
        if abs(spr - round(spr)) < 1e-9 and round(spr) > 0 and n_samples % round(spr) == 0:
            return int(round(spr)), n_samples // int(round(spr)), str(seconds)
    if n_samples == 0:
        return max(1, int(round(rate))), 0, "1"
    return n_samples, 1, format_number(n_samples / rate)


def encode_digital(r: Recording, digital_range=DIGITAL_RANGE, physical_range=(-1.0, 1.0)):
    """Quantize ``r.data`` exactly as :func:`write_edf` does.

    Returns ``(signal_headers, digital)`` with ``digital`` shaped ``C x T``.
    """
    dmin, dmax = int(digital_range[0]), int(digital_range[1])
    if not DIGITAL_RANGE[0] <= dmin < dmax <= DIGITAL_RANGE[1]:
        raise DegenerateScalingError(f"invalid digital range {digital_range}")
    # the header stores the range as text; quantize with the value a reader will see
    pmin = float(format_number(float(physical_range[0])))
    pmax = float(format_number(float(physical_range[1])))
    if pmin >= pmax:
        raise DegenerateScalingError(f"invalid physical range {physical_range}")
    if r.data.size and (r.data.min() < pmin or r.data.max() > pmax):
        raise RangeError(
            f"values span [{r.data.min():.6g}, {r.data.max():.6g}], outside physical range [{pmin}, {pmax}]"
        )
    headers = [
        SignalHeader(label=label, physical_min=pmin, physical_max=pmax,
                     digital_min=dmin, digital_max=dmax)
        for label in r.channel_labels
    ]
    digital = np.vstack([h.to_digital(row) for h, row in zip(headers, r.data)]) if r.data.size \
        else np.zeros(r.data.shape, dtype=np.int16)
    return headers, digital


def write_edf(r: Recording, digital_range=DIGITAL_RANGE, physical_range=(-1.0, 1.0)) -> bytes:
    """Serialize ``r`` as an EDF file and return its bytes."""
    headers, digital = encode_digital(r, digital_range, physical_range)
    n_channels, n_samples = digital.shape
    spr, n_records, duration = _record_layout(n_samples, r.sample_rate)
    for h in headers:
        h.samples_per_record = spr

    out = io.BytesIO()
    fixed = {
        "version": "0",
        "patient": f"{r.subject_id or 'X'} X X X",
        "recording": f"Startdate X X {r.session_id or 'X'} X",
        "start_date": "01.01.85",
        "start_time": "00.00.00",
        "header_bytes": str(256 + 256 * n_channels),
        "reserved": "",
        "n_records": str(n_records),
        "record_duration": duration,
        "n_signals": str(n_channels),
    }
    for name, width in _FIXED:
        out.write(_field(fixed[name], width))
    for name, width in _PER_SIGNAL:
        for h in headers:
            value = getattr(h, name)
            text = format_number(value) if isinstance(value, (int, float)) else value
            out.write(_field(text, width))
    if n_records:
        records = digital.reshape(n_channels, n_records, spr).transpose(1, 0, 2)
        out.write(np.ascontiguousarray(records).astype("<i2").tobytes())
    return out.getvalue()


def write_edf_file(path, r: Recording, digital_range=DIGITAL_RANGE, physical_range=(-1.0, 1.0)) -> None:
    with open(path, "wb") as fh:
        fh.write(write_edf(r, digital_range, physical_range))


def physical_range_for(data: np.ndarray, margin: float = 1.05) -> tuple:
    """A symmetric physical range that covers ``data`` with some headroom."""
    peak = float(np.max(np.abs(data), initial=0.0)) * margin
    peak = max(peak, 1e-6)
    # round up to 3 significant digits so the header text is exact
    exponent = math.floor(math.log10(peak))
    step = 10.0 ** (exponent - 2)
    peak = math.ceil(peak / step) * step
    return (-float(format_number(peak)), float(format_number(peak)))


def load_identity_map(path) -> dict:
    """Read the sidecar mapping ``file name -> (subject_id, session_id)``.

    The file is JSON: ``{"SC4001E0-PSG.edf": {"subject": "00", "session": "1"}}``.
    """
    with open(path) as fh:
        raw = json.load(fh)
    mapping = {}
    for name, entry in raw.items():
        try:
            mapping[name] = (str(entry["subject"]), str(entry["session"]))
        except (TypeError, KeyError):
            raise EdfError(f"identity map entry for {name!r} needs 'subject' and 'session'") from None
    return mapping


def save_identity_map(path, mapping: dict) -> None:
    with open(path, "w") as fh:
        json.dump({name: {"subject": s, "session": t} for name, (s, t) in sorted(mapping.items())},
                  fh, indent=2)
