"""The coordinator and a harness wiring it to agents over either transport."""

from __future__ import annotations

import io
import logging
import queue
import socket
import threading
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..sim import AnalyzerSetting, GroundTruth
from ..timetags import Chirp, FrequencyPlan, PS_PER_S
from .agents import GeneratorAgent, Lab, StationAgent
from .messages import (Abort, BeginRecording, Closed, FrequencySet, Hello, Message, PrepareRun, ProtocolViolation,
                       Ready, RunEnded, Saved, SaveFiles, SetFrequency, Shutdown)
from .transport import SocketTransport, Transport, TransportClosed, inproc_pair, parse_addr

log = logging.getLogger(__name__)

STATIONS = ("A", "B")
GENERATOR = "generator"
PARTIES = (GENERATOR, *STATIONS)


class ScriptError(ValueError):
    pass


@dataclass(frozen=True)
class RunScript:
    """One run's control script.  Times in ``*_ps`` are virtual lab time."""

    run_id: str = "run"
    freq_pre_hz: int = 490_000
    freq_run_hz: int = 500_000
    pulse_on_ns: int = 1000
    chirp_depth_hz: int = 0
    chirp_period_s: float = 1.0
    duration_s: float = 10.0
    alpha_deg: float = 0.0
    beta_deg: float = 22.5
    prepare_at_ps: int = 1_000_000_000
    arm_margin_ps: int = 1_000_000_000
    save_after_ps: int = 1_000_000_000
    ready_timeout_s: float = 5.0
    ack_timeout_s: float = 5.0
    saved_timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if self.duration_s <= 0:
            raise ScriptError("duration_s must be positive")
        if min(self.ready_timeout_s, self.ack_timeout_s, self.saved_timeout_s) <= 0:
            raise ScriptError("timeouts must be positive")
        if not self.run_id or any(c in self.run_id for c in "/\\ \n"):
            raise ScriptError(f"run_id {self.run_id!r} is not usable as a file name")
        self.plan.check()

    @property
    def plan(self) -> FrequencyPlan:
        chirp = Chirp(self.chirp_depth_hz, self.chirp_period_s) if self.chirp_depth_hz else None
        return FrequencyPlan(self.freq_pre_hz, self.freq_run_hz, self.pulse_on_ns, chirp)

    @property
    def setting(self) -> AnalyzerSetting:
        return AnalyzerSetting(self.alpha_deg, self.beta_deg)

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "RunScript":
        kinds = {f.name: f.type for f in fields(cls)}
        values: dict[str, object] = {}
        for n, raw in enumerate(io.StringIO(text), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = (s.strip() for s in line.partition("="))
            if not sep or key not in kinds:
                raise ScriptError(f"script line {n}: unknown key {key!r}")
            try:
                values[key] = {"int": int, "float": float}.get(kinds[key], str)(value)
            except ValueError:
                raise ScriptError(f"script line {n}: bad value {value!r}") from None
        return cls(**values)


@dataclass
class RunOutcome:
    run_id: str
    ok: bool
    files: dict[str, Path] = field(default_factory=dict)
    reason: str = ""
    missing: tuple[str, ...] = ()
    partial_files: dict[str, Path] = field(default_factory=dict)
    trace: list[tuple[str, str, str]] = field(default_factory=list)
    truth: GroundTruth | None = None

    def frequency_commands(self) -> list[int]:
        return [int(line.split("hz=")[1].split(" ")[0]) for d, _, line in self.trace
                if d == "send" and line.startswith("SetFrequency ")]

    def to_text(self) -> str:
        lines = [f"run_id={self.run_id}", f"status={'ok' if self.ok else 'aborted'}"]
        if self.reason:
            lines.append(f"reason={self.reason}")
        if self.missing:
            lines.append(f"missing={','.join(self.missing)}")
        lines += [f"file_{s}={p}" for s, p in sorted(self.files.items())]
        lines += [f"partial_file_{s}={p}" for s, p in sorted(self.partial_files.items())]
        return "\n".join(lines) + "\n"


class _Abort(Exception):
    def __init__(self, reason: str, missing: tuple[str, ...] = ()):
        super().__init__(reason)
        self.reason = reason
        self.missing = missing


class Coordinator:
    """Drives one run through the generator and both stations.

    Each party's transport is drained by its own reader thread into one
    inbox; the coordinator itself handles one message at a time.
    """

    def __init__(self, transports: dict[str, Transport], out_dir: str | Path):
        missing = set(PARTIES) - set(transports)
        if missing:
            raise ValueError(f"no transport for {sorted(missing)}")
        self.transports = transports
        self.out_dir = Path(out_dir)
        self.inbox: queue.Queue = queue.Queue()
        self.trace: list[tuple[str, str, str]] = []
        self.now_ps = 0
        self._readers = [threading.Thread(target=self._read, args=(p,), daemon=True) for p in PARTIES]
        for t in self._readers:
            t.start()

    def _read(self, party: str) -> None:
        tr = self.transports[party]
        while True:
            try:
                msg = tr.recv()
            except (TransportClosed, OSError, ValueError) as exc:
                self.inbox.put((party, exc))
                return
            self.inbox.put((party, msg))

    def send(self, party: str, msg: Message) -> None:
        self.trace.append(("send", party, msg.encode()))
        try:
            self.transports[party].send(msg)
        except TransportClosed as exc:
            raise _Abort(f"transport to {party} failed: {exc}", (party,)) from None

    def _await(self, kind: type, parties: tuple[str, ...], timeout_s: float, run_id: str | None = None
               ) -> dict[str, Message]:
        got: dict[str, Message] = {}
        deadline = threading.Event()
        timer = threading.Timer(timeout_s, deadline.set)
        timer.start()
        try:
            while len(got) < len(parties):
                try:
                    party, msg = self.inbox.get(timeout=0.05)
                except queue.Empty:
                    if deadline.is_set():
                        waiting = tuple(p for p in parties if p not in got)
                        self.now_ps += round(timeout_s * PS_PER_S)
                        raise _Abort(f"timeout waiting for {kind.__name__} from {', '.join(waiting)}", waiting)
                    continue
                if isinstance(msg, Exception):
                    raise _Abort(f"transport to {party} failed: {msg}", (party,))
                self.trace.append(("recv", party, msg.encode()))
                if isinstance(msg, ProtocolViolation):
                    raise _Abort(f"protocol violation reported by {msg.party}: {msg.reason}")
                if not isinstance(msg, kind) or party not in parties or party in got:
                    raise _Abort(f"protocol violation: unexpected {type(msg).__name__} from {party}")
                if run_id is not None and getattr(msg, "run_id", run_id) != run_id:
                    raise _Abort(f"protocol violation: {kind.__name__} from {party} carries run_id "
                                 f"{msg.run_id!r}, expected {run_id!r}")
                got[party] = msg
        finally:
            timer.cancel()
        return got

    def _set_frequency(self, hz: int, t_ps: int, timeout_s: float) -> None:
        self.send(GENERATOR, SetFrequency(hz, t_ps))
        self._await(FrequencySet, (GENERATOR,), timeout_s)

    def run(self, script: RunScript) -> RunOutcome:
        rid = script.run_id
        try:
            self.now_ps = 0
            self._set_frequency(script.freq_pre_hz, self.now_ps, script.ack_timeout_s)
            self.now_ps = script.prepare_at_ps
            for s in STATIONS:
                self.send(s, PrepareRun(rid, self.now_ps))
            ready = self._await(Ready, STATIONS, script.ready_timeout_s, rid)
            # both stations are capturing before the step
            self.now_ps = max(m.t_ps for m in ready.values()) + script.arm_margin_ps
            self._set_frequency(script.freq_run_hz, self.now_ps, script.ack_timeout_s)
            for s in STATIONS:
                self.send(s, BeginRecording(rid))
            self.now_ps += round(script.duration_s * PS_PER_S)
            self._set_frequency(script.freq_pre_hz, self.now_ps, script.ack_timeout_s)
            self.now_ps += script.save_after_ps
            for s in STATIONS:
                self.send(s, SaveFiles(rid, self.now_ps))
            saved = self._await(Saved, STATIONS, script.saved_timeout_s, rid)
            for s in STATIONS:
                self.send(s, RunEnded(rid))
        except _Abort as exc:
            log.warning("run %s aborted: %s", rid, exc.reason)
            return self._abort(rid, exc)
        files = {s: self.out_dir / m.file_ref for s, m in saved.items()}
        return RunOutcome(rid, True, files, trace=list(self.trace))

    def _abort(self, rid: str, exc: _Abort) -> RunOutcome:
        for p in PARTIES:
            try:
                self.send(p, Abort(exc.reason, self.now_ps))
            except _Abort:
                pass
        partial: dict[str, Path] = {}
        try:
            closed = self._await_closed(2.0)
        except _Abort:
            closed = {}
        for s, m in closed.items():
            if m.file_ref:
                partial[s] = self.out_dir / m.file_ref
        return RunOutcome(rid, False, reason=exc.reason, missing=exc.missing, partial_files=partial,
                          trace=list(self.trace))

    def _await_closed(self, timeout_s: float) -> dict[str, Closed]:
        got: dict[str, Closed] = {}
        end = threading.Event()
        timer = threading.Timer(timeout_s, end.set)
        timer.start()
        try:
            while len(got) < len(STATIONS) and not end.is_set():
                try:
                    party, msg = self.inbox.get(timeout=0.05)
                except queue.Empty:
                    continue
                if isinstance(msg, Exception):
                    continue
                self.trace.append(("recv", party, msg.encode()))
                if isinstance(msg, Closed) and party in STATIONS:
                    got[party] = msg
        finally:
            timer.cancel()
        return got


def _serve(agent) -> threading.Thread:
    t = threading.Thread(target=agent.run, daemon=True)
    t.start()
    return t


def run_orchestrated(script: RunScript, lab: Lab, transport: str = "inproc", listen: str = "127.0.0.1:0",
                     seed: int = 0, faults: dict[str, frozenset[str]] | None = None,
                     generator_latency_ps: int = 0) -> RunOutcome:
    """Start the three agents, run ``script`` once, shut everything down."""
    faults = faults or {}
    if transport == "inproc":
        pairs = {p: inproc_pair() for p in PARTIES}
        coord_side = {p: pairs[p][0] for p in PARTIES}
        agent_side = {p: pairs[p][1] for p in PARTIES}
        server = None
    elif transport == "socket":
        server = socket.create_server(parse_addr(listen))
        server.settimeout(10.0)
        addr = server.getsockname()[:2]
        agent_side = {}
        for p in PARTIES:
            conn = SocketTransport(socket.create_connection(addr, timeout=10.0))
            conn.send(Hello(p))
            agent_side[p] = conn
        coord_side = {}
        for _ in PARTIES:
            sock, _peer = server.accept()
            conn = SocketTransport(sock)
            hello = conn.recv(timeout=10.0)
            if not isinstance(hello, Hello) or hello.role not in PARTIES or hello.role in coord_side:
                raise ConnectionError(f"bad greeting {hello!r}")
            coord_side[hello.role] = conn
    else:
        raise ValueError(f"unknown transport {transport!r}")

    threads = [_serve(GeneratorAgent(agent_side[GENERATOR], lab.line, generator_latency_ps))]
    threads += [_serve(StationAgent(s, agent_side[s], lab, seed, faults.get(s, frozenset()))) for s in STATIONS]
    try:
        coord = Coordinator(coord_side, lab.out_dir)
        outcome = coord.run(script)
    finally:
        for p in PARTIES:
            try:
                coord_side[p].send(Shutdown())
            except (TransportClosed, OSError):
                pass
        for t in threads:
            t.join(timeout=10.0)
        for tr in (*coord_side.values(), *agent_side.values()):
            try:
                tr.close()
            except OSError:
                pass
        if server is not None:
            server.close()
    if outcome.ok:
        outcome.truth = lab.truth(script.run_id)
    return outcome
