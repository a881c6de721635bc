"""Control-plane messages and their single-line text encoding.

A message encodes as ``<Type> key=value ...`` with values percent-encoded,
so a frame never contains spaces or newlines inside a value.  ``t_ps`` is
the coordinator's virtual lab time at which a command takes effect.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from urllib.parse import quote, unquote


class MessageError(ValueError):
    pass


@dataclass(frozen=True)
class Message:
    def encode(self) -> str:
        parts = [type(self).__name__]
        parts += [f"{f.name}={quote(str(getattr(self, f.name)), safe='')}" for f in fields(self)]
        return " ".join(parts)


@dataclass(frozen=True)
class Hello(Message):
    role: str


@dataclass(frozen=True)
class SetFrequency(Message):
    hz: int
    t_ps: int


@dataclass(frozen=True)
class FrequencySet(Message):
    hz: int
    t_ps: int


@dataclass(frozen=True)
class PrepareRun(Message):
    run_id: str
    t_ps: int


@dataclass(frozen=True)
class Ready(Message):
    station: str
    run_id: str
    t_ps: int


@dataclass(frozen=True)
class BeginRecording(Message):
    run_id: str


@dataclass(frozen=True)
class SaveFiles(Message):
    run_id: str
    t_ps: int


@dataclass(frozen=True)
class Saved(Message):
    station: str
    run_id: str
    file_ref: str


@dataclass(frozen=True)
class RunEnded(Message):
    run_id: str


@dataclass(frozen=True)
class Abort(Message):
    reason: str
    t_ps: int


@dataclass(frozen=True)
class Closed(Message):
    """Reply to Abort: the station closed its capture (``file_ref`` may be empty)."""

    station: str
    file_ref: str


@dataclass(frozen=True)
class ProtocolViolation(Message):
    party: str
    reason: str


@dataclass(frozen=True)
class Shutdown(Message):
    pass


MESSAGE_TYPES: dict[str, type[Message]] = {
    cls.__name__: cls
    for cls in (Hello, SetFrequency, FrequencySet, PrepareRun, Ready, BeginRecording, SaveFiles,
                Saved, RunEnded, Abort, Closed, ProtocolViolation, Shutdown)
}


def decode(line: str) -> Message:
    name, *pairs = line.split(" ")
    cls = MESSAGE_TYPES.get(name)
    if cls is None:
        raise MessageError(f"unknown message type {name!r}")
    kinds = {f.name: f.type for f in fields(cls)}
    values: dict[str, object] = {}
    for p in pairs:
        key, sep, raw = p.partition("=")
        if not sep or key not in kinds or key in values:
            raise MessageError(f"{name}: bad field {p!r}")
        value = unquote(raw)
        if kinds[key] == "int":
            try:
                values[key] = int(value)
            except ValueError:
                raise MessageError(f"{name}: {key} is not an integer: {value!r}") from None
        else:
            values[key] = value
    missing = set(kinds) - set(values)
    if missing:
        raise MessageError(f"{name}: missing fields {sorted(missing)}")
    return cls(**values)
