"""Time tags, tag streams and the v1 tag file format.

All times are integer picoseconds counted from the station-local epoch
(the moment the station started recording).  A stream keeps its records
as two parallel numpy arrays (``times`` and ``channels``) so that
multi-million record runs stay cheap; :class:`TimeTag` is the per-record
view.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterator, Sequence

import numpy as np

FORMAT_MAGIC = "# pulsebell-tags v1"
COLUMN_LINE = "channel,time_ps"
PS_PER_S = 10**12


class Channel(IntEnum):
    """TDC input channel.  The detection channels carry the outcome bit."""

    OUT0 = 0
    OUT1 = 1
    TRIGGER = 2

    @property
    def code(self) -> str:
        return _CODE_BY_CHANNEL[self]

    @classmethod
    def from_code(cls, code: str) -> "Channel":
        try:
            return _CHANNEL_BY_CODE[code]
        except KeyError:
            raise ValueError(f"unknown channel code {code!r}") from None


_CODE_BY_CHANNEL = {Channel.OUT0: "0", Channel.OUT1: "1", Channel.TRIGGER: "T"}
_CHANNEL_BY_CODE = {v: k for k, v in _CODE_BY_CHANNEL.items()}


class Station(str, Enum):
    A = "A"
    B = "B"


@dataclass(frozen=True)
class TimeTag:
    time_ps: int
    channel: Channel


@dataclass(frozen=True)
class Chirp:
    """Slow sinusoidal modulation of the run repetition rate."""

    depth_hz: int
    period_s: float


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class FrequencyPlan:
    """Pulse repetition plan: pre-run rate, run rate, on-window and chirp.

    The first pulse at ``freq_run_hz`` is pulse 0 of the run.  With a chirp
    the instantaneous run rate is ``freq_run_hz + depth*sin(2*pi*t/period)``
    with ``t`` measured from pulse 0.
    """

    freq_pre_hz: int = 490_000
    freq_run_hz: int = 500_000
    pulse_on_ns: int = 1000
    chirp: Chirp | None = None

    def violations(self) -> list[str]:
        out = []
        if self.freq_pre_hz <= 0 or self.freq_run_hz <= 0:
            out.append("frequencies must be positive")
            return out
        if self.freq_pre_hz == self.freq_run_hz:
            out.append("freq_pre_hz must differ from freq_run_hz")
        if self.pulse_on_ns <= 0:
            out.append("pulse_on_ns must be positive")
        if self.pulse_on_ns * 1000 > self.run_period_ps:
            out.append("pulse_on_ns exceeds the run period")
        if self.chirp is not None:
            if self.chirp.depth_hz < 0:
                out.append("chirp_depth_hz must be non-negative")
            if not self.chirp.period_s > 0:
                out.append("chirp_period_s must be positive")
            if self.chirp.depth_hz * 4 >= abs(self.freq_run_hz - self.freq_pre_hz):
                out.append("chirp depth must be below a quarter of the frequency step")
        return out

    def check(self) -> None:
        problems = self.violations()
        if problems:
            raise PlanError("; ".join(problems))

    @property
    def pre_period_ps(self) -> int:
        return round(PS_PER_S / self.freq_pre_hz)

    @property
    def run_period_ps(self) -> int:
        return round(PS_PER_S / self.freq_run_hz)

    @property
    def pulse_on_ps(self) -> int:
        return self.pulse_on_ns * 1000

    @property
    def chirped(self) -> bool:
        return self.chirp is not None and self.chirp.depth_hz != 0

    def run_phase(self, t_ps: np.ndarray | float) -> np.ndarray:
        """Number of run periods elapsed ``t_ps`` after pulse 0 (continuous)."""
        t = np.asarray(t_ps, dtype=np.float64) / PS_PER_S
        phase = self.freq_run_hz * t
        if self.chirped:
            w = 2 * math.pi / self.chirp.period_s
            phase = phase + self.chirp.depth_hz / w * (1 - np.cos(w * t))
        return phase

    def run_offsets(self, n: int) -> np.ndarray:
        """Times of run pulses 0..n-1 relative to pulse 0, integer ps.

        Each gap is the instantaneous period at the earlier pulse, rounded to
        an integer number of picoseconds; the pulse instants that set the
        instantaneous frequency come from inverting the integrated phase.
        """
        if n <= 0:
            return np.zeros(0, dtype=np.int64)
        if not self.chirped:
            return np.arange(n, dtype=np.int64) * self.run_period_ps
        k = np.arange(n - 1, dtype=np.float64)
        f = float(self.freq_run_hz)
        depth = float(self.chirp.depth_hz)
        w = 2 * math.pi / self.chirp.period_s
        # fixed point of phase(t) = k; contraction factor depth/f < 1/4 * step/f
        t = k / f
        for _ in range(40):
            t_next = (k - depth / w * (1 - np.cos(w * t))) / f
            if np.array_equal(t_next, t):
                break
            t = t_next
        f_inst = f + depth * np.sin(w * t)
        gaps = np.rint(PS_PER_S / f_inst).astype(np.int64)
        out = np.empty(n, dtype=np.int64)
        out[0] = 0
        np.cumsum(gaps, out=out[1:])
        return out


class TagFileError(ValueError):
    """Malformed tag file or stream that violates the tag invariants.

    ``line`` is the 1-based file line when parsing; ``index`` the record index.
    """

    def __init__(self, message: str, *, line: int | None = None, index: int | None = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if index is not None:
            where.append(f"record {index}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)
        self.line = line
        self.index = index


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    index: int | None = None
    channel: Channel | None = None


@dataclass(frozen=True, eq=False)
class TagStream:
    """One station's recording: sorted time tags plus run metadata."""

    station: Station
    run_id: str
    plan: FrequencyPlan
    times: np.ndarray = field(repr=False)
    channels: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        times = np.array(self.times, dtype=np.int64)
        channels = np.array(self.channels, dtype=np.uint8)
        if times.shape != channels.shape or times.ndim != 1:
            raise ValueError("times and channels must be 1-d arrays of equal length")
        times.flags.writeable = False
        channels.flags.writeable = False
        object.__setattr__(self, "station", Station(self.station))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "channels", channels)

    @classmethod
    def from_tags(cls, station, run_id: str, plan: FrequencyPlan, tags: Sequence[TimeTag]) -> "TagStream":
        times = np.array([t.time_ps for t in tags], dtype=np.int64)
        chans = np.array([int(t.channel) for t in tags], dtype=np.uint8)
        return cls(station, run_id, plan, times, chans)

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self) -> Iterator[TimeTag]:
        for t, c in zip(self.times.tolist(), self.channels.tolist()):
            yield TimeTag(t, Channel(c))

    def __getitem__(self, i: int) -> TimeTag:
        return TimeTag(int(self.times[i]), Channel(int(self.channels[i])))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TagStream):
            return NotImplemented
        return (
            self.station == other.station
            and self.run_id == other.run_id
            and self.plan == other.plan
            and np.array_equal(self.times, other.times)
            and np.array_equal(self.channels, other.channels)
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def tags(self) -> list[TimeTag]:
        return list(self)

    def trigger_times(self) -> np.ndarray:
        return self.times[self.channels == Channel.TRIGGER]

    def detection_mask(self) -> np.ndarray:
        return self.channels != Channel.TRIGGER

    def detections(self) -> tuple[np.ndarray, np.ndarray]:
        """Detection times and their outcome bits (1 or 0), in stream order."""
        mask = self.detection_mask()
        return self.times[mask], self.channels[mask].astype(np.int8)


def validate_stream(stream: TagStream) -> list[Violation]:
    """Every invariant violation in ``stream``; an empty list means valid."""
    out = [Violation("plan", msg) for msg in stream.plan.violations()]
    if not stream.run_id or any(ch.isspace() for ch in stream.run_id):
        out.append(Violation("run_id", "run id must be non-empty without whitespace"))
    times, chans = stream.times, stream.channels
    for i in np.flatnonzero(times < 0).tolist():
        out.append(Violation("negative", f"negative time {times[i]}", index=i))
    for i in np.flatnonzero(chans > Channel.TRIGGER).tolist():
        out.append(Violation("channel", f"unknown channel value {chans[i]}", index=i))
    for i in (np.flatnonzero(np.diff(times) < 0) + 1).tolist():
        out.append(Violation("order", f"record {i} precedes record {i - 1} in time", index=i))
    for ch in Channel:
        idx = np.flatnonzero(chans == ch)
        bad = idx[1:][np.diff(times[idx]) <= 0]
        for i in bad.tolist():
            kind = "trigger_gap" if ch is Channel.TRIGGER else "duplicate"
            out.append(Violation(kind, f"repeated time {times[i]} on channel {ch.code}", index=i, channel=ch))
    out.sort(key=lambda v: (-1 if v.index is None else v.index))
    return out


def _format_period(x: float) -> str:
    return repr(float(x))


def write_tag_file(stream: TagStream) -> bytes:
    problems = validate_stream(stream)
    if problems:
        first = problems[0]
        raise TagFileError(first.message, index=first.index)
    plan = stream.plan
    head = [
        FORMAT_MAGIC,
        f"# station: {stream.station.value}",
        f"# run: {stream.run_id}",
        f"# freq_pre_hz: {plan.freq_pre_hz}",
        f"# freq_run_hz: {plan.freq_run_hz}",
        f"# pulse_on_ns: {plan.pulse_on_ns}",
    ]
    if plan.chirp is not None:
        head.append(f"# chirp_depth_hz: {plan.chirp.depth_hz}")
        head.append(f"# chirp_period_s: {_format_period(plan.chirp.period_s)}")
    head.append(COLUMN_LINE)
    codes = np.array(["0", "1", "T"])[stream.channels].tolist()
    body = "".join(map("{},{}\n".format, codes, stream.times.tolist()))
    return ("\n".join(head) + "\n" + body).encode("utf-8")


_HEADER_KEYS = ["station", "run", "freq_pre_hz", "freq_run_hz", "pulse_on_ns", "chirp_depth_hz", "chirp_period_s"]
_OPTIONAL = {"chirp_depth_hz", "chirp_period_s"}
_HEADER_RE = re.compile(r"# ([a-z_]+): (\S+)")
_INT_RE = re.compile(r"-?(0|[1-9][0-9]*)")
_RECORD_RE = re.compile(r"[T10],(0|[1-9][0-9]{0,17})")
_BODY_RE = re.compile(r"(?:[T10],(?:0|[1-9][0-9]{0,17})\n)*")


def _parse_int(value: str, line: int) -> int:
    if not _INT_RE.fullmatch(value):
        raise TagFileError(f"expected integer, got {value!r}", line=line)
    return int(value)


def read_tag_file(data: bytes | str) -> TagStream:
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    lines = text.split("\n")
    if not lines or lines[0] != FORMAT_MAGIC:
        raise TagFileError("missing '# pulsebell-tags v1' magic line", line=1)
    header: dict[str, str] = {}
    pos = 1
    expected = iter(_HEADER_KEYS)
    while pos < len(lines) and lines[pos].startswith("#"):
        m = _HEADER_RE.fullmatch(lines[pos])
        if not m:
            raise TagFileError(f"malformed header line {lines[pos]!r}", line=pos + 1)
        key, value = m.groups()
        if key not in _HEADER_KEYS:
            raise TagFileError(f"unknown header key {key!r}", line=pos + 1)
        for want in expected:
            if want == key:
                break
            if want not in _OPTIONAL:
                raise TagFileError(f"header key {key!r} out of order (expected {want!r})", line=pos + 1)
        else:
            raise TagFileError(f"header key {key!r} out of order or repeated", line=pos + 1)
        header[key] = value
        pos += 1
    missing = [k for k in _HEADER_KEYS if k not in _OPTIONAL and k not in header]
    if missing:
        raise TagFileError(f"missing header keys {missing}", line=pos + 1)
    if ("chirp_depth_hz" in header) != ("chirp_period_s" in header):
        raise TagFileError("chirp_depth_hz and chirp_period_s must appear together", line=pos + 1)
    if pos >= len(lines) or lines[pos] != COLUMN_LINE:
        raise TagFileError(f"expected column line {COLUMN_LINE!r}", line=pos + 1)
    if header["station"] not in ("A", "B"):
        raise TagFileError(f"station must be A or B, got {header['station']!r}", line=2)

    chirp = None
    if "chirp_depth_hz" in header:
        try:
            period = float(header["chirp_period_s"])
        except ValueError:
            raise TagFileError("chirp_period_s is not a decimal", line=pos) from None
        chirp = Chirp(_parse_int(header["chirp_depth_hz"], pos - 1), period)
    plan = FrequencyPlan(
        _parse_int(header["freq_pre_hz"], 5),
        _parse_int(header["freq_run_hz"], 6),
        _parse_int(header["pulse_on_ns"], 7),
        chirp,
    )
    plan_problems = plan.violations()
    if plan_problems:
        raise TagFileError("invalid frequency plan: " + "; ".join(plan_problems), line=5)

    first_record_line = pos + 2  # 1-based line number of record 0
    body = "\n".join(lines[pos + 1:])
    if body and not body.endswith("\n"):
        body += "\n"
    if not _BODY_RE.fullmatch(body):
        for i, rec in enumerate(body.split("\n")[:-1]):
            if not _RECORD_RE.fullmatch(rec):
                if rec[:1] not in ("T", "1", "0") or rec[1:2] != ",":
                    code = rec.split(",", 1)[0]
                    raise TagFileError(f"unknown channel code {code!r}", line=first_record_line + i, index=i)
                raise TagFileError(f"malformed record {rec!r}", line=first_record_line + i, index=i)
        raise TagFileError("malformed body")  # pragma: no cover
    records = body.split("\n")[:-1]
    if records:
        code_value = {"0": 0, "1": 1, "T": 2}
        chans = np.array([code_value[r[0]] for r in records], dtype=np.uint8)
        times = np.array([int(r[2:]) for r in records], dtype=np.int64)
    else:
        chans = np.zeros(0, dtype=np.uint8)
        times = np.zeros(0, dtype=np.int64)

    back = np.flatnonzero(np.diff(times) < 0)
    if len(back):
        i = int(back[0]) + 1
        raise TagFileError(
            f"records out of time order: record {i} ({times[i]} ps) precedes record {i - 1} ({times[i - 1]} ps)",
            line=first_record_line + i,
            index=i,
        )
    stream = TagStream(Station(header["station"]), header["run"], plan, times, chans)
    for v in validate_stream(stream):
        line = None if v.index is None else first_record_line + v.index
        raise TagFileError(v.message, line=line, index=v.index)
    return stream
