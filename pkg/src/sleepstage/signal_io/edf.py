"""Reader and writer for the subset of EDF used by sleep datasets.

Supported: fixed 256-byte global header, 256 bytes of header per signal,
contiguous data records of little-endian int16 samples. Not supported: EDF+
annotation channels and discontinuous records.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .types import Recording

log = logging.getLogger(__name__)

DIGITAL_MIN = -32768
DIGITAL_MAX = 32767

# (name, width) in on-disk order
GLOBAL_FIELDS = (
    ("version", 8),
    ("patient_id", 80),
    ("recording_id", 80),
    ("start_date", 8),
    ("start_time", 8),
    ("header_bytes", 8),
    ("reserved", 44),
    ("num_records", 8),
    ("record_seconds", 8),
    ("num_signals", 4),
)
SIGNAL_FIELDS = (
    ("label", 16),
    ("transducer", 80),
    ("physical_dimension", 8),
    ("physical_min", 8),
    ("physical_max", 8),
    ("digital_min", 8),
    ("digital_max", 8),
    ("prefilter", 80),
    ("samples_per_record", 8),
    ("reserved", 32),
)
GLOBAL_BYTES = 256
SIGNAL_BYTES = 256


class EdfParseError(ValueError):
    """Malformed EDF content; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int | None = None, record: int | None = None):
        self.offset = offset
        self.record = record
        where = []
        if offset is not None:
            where.append(f"byte {offset}")
        if record is not None:
            where.append(f"record {record}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


class EdfScalingError(ValueError):
    pass


@dataclass(frozen=True)
class EdfSignalHeader:
    label: str
    transducer: str
    physical_dimension: str
    physical_min: float
    physical_max: float
    digital_min: int
    digital_max: int
    prefilter: str
    samples_per_record: int

    def scale(self) -> tuple[float, float]:
        """(gain, offset) with physical = gain * digital + offset."""
        if self.digital_max == self.digital_min:
            raise EdfScalingError(f"signal {self.label!r}: digital_min == digital_max ({self.digital_min})")
        gain = (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min)
        return gain, self.physical_min - gain * self.digital_min


@dataclass(frozen=True)
class EdfHeader:
    version: str
    patient_id: str
    recording_id: str
    start_date: str
    start_time: str
    header_bytes: int
    num_records: int
    record_seconds: float
    signals: tuple[EdfSignalHeader, ...]

    @property
    def record_bytes(self) -> int:
        return 2 * sum(s.samples_per_record for s in self.signals)

    def sample_rate(self, index: int) -> float:
        return self.signals[index].samples_per_record / self.record_seconds


def _ascii(raw: bytes, offset: int, what: str) -> str:
    for i, b in enumerate(raw):
        if b < 32 or b > 126:
            raise EdfParseError(f"non-printable byte 0x{b:02x} in {what}", offset + i)
    return raw.decode("ascii")


def _number(text: str, offset: int, what: str, kind=float):
    try:
        value = float(text.strip())
    except ValueError:
        raise EdfParseError(f"{what} is not a number: {text.strip()!r}", offset) from None
    if kind is int:
        if value != int(value):
            raise EdfParseError(f"{what} must be an integer, got {text.strip()!r}", offset)
        return int(value)
    return value


def parse_header(blob: bytes) -> EdfHeader:
    if len(blob) < GLOBAL_BYTES:
        raise EdfParseError(f"file holds {len(blob)} bytes, shorter than the {GLOBAL_BYTES}-byte header", len(blob))
    g = {}
    pos = 0
    for name, width in GLOBAL_FIELDS:
        g[name] = (_ascii(blob[pos : pos + width], pos, name), pos)
        pos += width

    ns = _number(g["num_signals"][0], g["num_signals"][1], "signal count", int)
    if ns < 1:
        raise EdfParseError(f"signal count must be positive, got {ns}", g["num_signals"][1])
    header_bytes = _number(g["header_bytes"][0], g["header_bytes"][1], "header byte count", int)
    expected = GLOBAL_BYTES + SIGNAL_BYTES * ns
    if header_bytes != expected:
        raise EdfParseError(f"header byte count {header_bytes} inconsistent with {ns} signals (expected {expected})", g["header_bytes"][1])
    if len(blob) < expected:
        raise EdfParseError(f"signal headers truncated: need {expected} bytes, file has {len(blob)}", len(blob))
    num_records = _number(g["num_records"][0], g["num_records"][1], "record count", int)
    if num_records < -1:
        raise EdfParseError(f"record count {num_records} is invalid", g["num_records"][1])
    record_seconds = _number(g["record_seconds"][0], g["record_seconds"][1], "record duration")
    if not record_seconds > 0:
        raise EdfParseError(f"record duration must be positive, got {record_seconds}", g["record_seconds"][1])

    cols: dict[str, list] = {}
    for name, width in SIGNAL_FIELDS:
        vals = []
        for _ in range(ns):
            vals.append((_ascii(blob[pos : pos + width], pos, f"signal {name}"), pos))
            pos += width
        cols[name] = vals

    signals = []
    for i in range(ns):
        def num(field, kind=float):
            text, off = cols[field][i]
            return _number(text, off, f"signal {i} {field}", kind)

        spr = num("samples_per_record", int)
        if spr < 1:
            raise EdfParseError(f"signal {i} has {spr} samples per record", cols["samples_per_record"][i][1])
        signals.append(
            EdfSignalHeader(
                label=cols["label"][i][0].rstrip(),
                transducer=cols["transducer"][i][0].rstrip(),
                physical_dimension=cols["physical_dimension"][i][0].rstrip(),
                physical_min=num("physical_min"),
                physical_max=num("physical_max"),
                digital_min=num("digital_min", int),
                digital_max=num("digital_max", int),
                prefilter=cols["prefilter"][i][0].rstrip(),
                samples_per_record=spr,
            )
        )
    return EdfHeader(
        version=g["version"][0].rstrip(),
        patient_id=g["patient_id"][0].rstrip(),
        recording_id=g["recording_id"][0].rstrip(),
        start_date=g["start_date"][0],
        start_time=g["start_time"][0],
        header_bytes=header_bytes,
        num_records=num_records,
        record_seconds=record_seconds,
        signals=tuple(signals),
    )


def read_edf_digital(path: str | Path) -> tuple[EdfHeader, list[np.ndarray]]:
    """Header plus the raw int16 samples of every signal, in file order."""
    blob = Path(path).read_bytes()
    header = parse_header(blob)
    data = blob[header.header_bytes :]
    rec = header.record_bytes
    available = len(data) // rec
    n = header.num_records
    if n == -1:
        n = available
        log.info("%s: record count unknown in header, using %d from file size", path, n)
    if available < n:
        raise EdfParseError(
            f"file declares {n} data records but only {available} are complete",
            header.header_bytes + available * rec,
            record=available,
        )
    extra = len(data) - n * rec
    if extra:
        log.warning("%s: ignoring %d bytes after the last data record", path, extra)
    samples = np.frombuffer(data, dtype="<i2", count=n * rec // 2).reshape(n, rec // 2)
    bounds = np.cumsum([0] + [s.samples_per_record for s in header.signals])
    channels = [np.ascontiguousarray(samples[:, bounds[i] : bounds[i + 1]]).reshape(-1) for i in range(len(header.signals))]
    return header, channels


def read_edf(path: str | Path, channels: Sequence[str] | None = None, subject_id: str | None = None) -> tuple[Recording, EdfHeader]:
    """Physical-unit recording plus the parsed header.

    ``channels`` restricts the result to the named signals, in the given
    order. Without it, every signal sampled at the highest rate is kept.
    """
    header, digital = read_edf_digital(path)
    labels = [s.label for s in header.signals]
    if channels is None:
        rates = [header.sample_rate(i) for i in range(len(labels))]
        top = max(rates)
        keep = [i for i, r in enumerate(rates) if r == top]
        dropped = [labels[i] for i in range(len(labels)) if i not in keep]
        if dropped:
            log.info("%s: dropping lower-rate signals %s", path, dropped)
    else:
        keep = []
        for name in channels:
            if name not in labels:
                raise KeyError(f"{path}: no signal named {name!r}; have {labels}")
            keep.append(labels.index(name))
    rates = {header.sample_rate(i) for i in keep}
    if len(rates) != 1:
        raise ValueError(f"{path}: selected signals have different sample rates {sorted(rates)}")
    rate = rates.pop()
    if rate != int(rate):
        raise ValueError(f"{path}: non-integer sample rate {rate}")

    out = {}
    for i in keep:
        gain, offset = header.signals[i].scale()
        out[labels[i]] = digital[i].astype(np.float64) * gain + offset
    sid = subject_id if subject_id is not None else (header.patient_id.split(" ")[0] or Path(path).stem)
    return Recording(sid, out, int(rate)), header


def _field(value, width: int, what: str) -> bytes:
    text = str(value)
    raw = text.encode("ascii")
    if len(raw) > width:
        raise ValueError(f"{what} {text!r} does not fit in {width} bytes")
    return raw.ljust(width, b" ")


def _num_text(v: float) -> str:
    for digits in range(8, 0, -1):
        text = f"{v:.{digits}g}"
        if len(text) <= 8:
            return text
    raise ValueError(f"{v!r} cannot be written in an 8-byte header field")


def _auto_range(x: np.ndarray) -> tuple[float, float]:
    lo = math.floor(float(x.min())) if x.size else 0
    hi = math.ceil(float(x.max())) if x.size else 0
    if lo == hi:
        lo, hi = lo - 1, hi + 1
    return float(lo), float(hi)


def write_edf(
    recording: Recording,
    path: str | Path,
    physical_range: dict[str, tuple[float, float]] | None = None,
    record_seconds: int = 30,
    physical_dimension: str = "uV",
) -> list[np.ndarray]:
    """Write ``recording`` as EDF and return the stored digital samples.

    Each channel's physical range defaults to its integer-rounded min/max.
    """
    path = Path(path)
    fs = recording.sample_rate_hz
    spr = fs * record_seconds
    n = recording.num_samples
    if n % spr:
        raise ValueError(f"{n} samples is not a whole number of {record_seconds} s records at {fs} Hz")
    num_records = n // spr

    headers = []
    digital = []
    for name, x in recording.channels.items():
        if len(name.encode("ascii", errors="replace")) > 16:
            raise ValueError(f"channel name {name!r} is longer than 16 bytes")
        x = np.asarray(x, dtype=np.float64)
        if physical_range and name in physical_range:
            lo, hi = map(float, physical_range[name])
        else:
            lo, hi = _auto_range(x)
        # scale from the values as they will read back from the header
        lo_txt, hi_txt = _num_text(lo), _num_text(hi)
        lo_rt, hi_rt = float(lo_txt), float(hi_txt)
        if not hi_rt > lo_rt:
            raise ValueError(f"channel {name!r}: empty physical range [{lo_txt}, {hi_txt}]")
        bad = np.flatnonzero((x < lo_rt) | (x > hi_rt) | ~np.isfinite(x))
        if bad.size:
            i = int(bad[0])
            raise ValueError(f"channel {name!r}: sample {i} = {x[i]!r} lies outside the physical range [{lo_rt}, {hi_rt}]")
        h = EdfSignalHeader(name, "", physical_dimension, lo_rt, hi_rt, DIGITAL_MIN, DIGITAL_MAX, "", spr)
        gain, offset = h.scale()
        d = np.clip(np.rint((x - offset) / gain), DIGITAL_MIN, DIGITAL_MAX).astype("<i2")
        headers.append((h, lo_txt, hi_txt))
        digital.append(d)

    ns = len(headers)
    out = bytearray()
    out += _field("0", 8, "version")
    out += _field(recording.subject_id, 80, "patient id")
    out += _field("Startdate X X X X", 80, "recording id")
    out += _field("01.01.00", 8, "start date")
    out += _field("00.00.00", 8, "start time")
    out += _field(GLOBAL_BYTES + SIGNAL_BYTES * ns, 8, "header bytes")
    out += _field("", 44, "reserved")
    out += _field(num_records, 8, "record count")
    out += _field(f"{record_seconds:g}", 8, "record duration")
    out += _field(ns, 4, "signal count")
    rows = {
        "label": [h.label for h, _, _ in headers],
        "transducer": [""] * ns,
        "physical_dimension": [h.physical_dimension for h, _, _ in headers],
        "physical_min": [lo for _, lo, _ in headers],
        "physical_max": [hi for _, _, hi in headers],
        "digital_min": [DIGITAL_MIN] * ns,
        "digital_max": [DIGITAL_MAX] * ns,
        "prefilter": [""] * ns,
        "samples_per_record": [spr] * ns,
        "reserved": [""] * ns,
    }
    for name, width in SIGNAL_FIELDS:
        for v in rows[name]:
            out += _field(v, width, f"signal {name}")
    block = np.stack([d.reshape(num_records, spr) for d in digital], axis=1)  # (records, signals, spr)
    out += block.astype("<i2").tobytes()
    path.write_bytes(bytes(out))
    return digital
