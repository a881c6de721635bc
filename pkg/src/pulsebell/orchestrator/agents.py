"""Station and generator agents, and the simulated lab behind them.

``station_agent_step`` is the whole station protocol as a pure function;
``StationAgent`` runs it over a transport and turns its actions into
captures rendered by a shared ``Lab``.
"""

from __future__ import annotations

import logging
import threading
import zlib
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from ..sim import AnalyzerSetting, ClockModel, SimulatedRun, SourceParams, apply_clock, simulate_run
from ..timetags import Channel, FrequencyPlan, Station, TagStream, write_tag_file
from .messages import (Abort, BeginRecording, Closed, FrequencySet, Message, PrepareRun, ProtocolViolation,
                       Ready, RunEnded, Saved, SaveFiles, SetFrequency, Shutdown)
from .transport import Transport, TransportClosed

log = logging.getLogger(__name__)

MAX_ACTIVATION_DELAY_PS = 10_000_000_000


class Phase(str, Enum):
    IDLE = "idle"
    PREPARING = "preparing"
    RECORDING = "recording"
    SAVING = "saving"


@dataclass(frozen=True)
class AgentState:
    station: str
    phase: Phase = Phase.IDLE
    run_id: str = ""


@dataclass(frozen=True)
class StartCapture:
    run_id: str
    t_ps: int


@dataclass(frozen=True)
class StopCapture:
    run_id: str
    t_ps: int
    file_name: str
    partial: bool


Action = StartCapture | StopCapture


def activation_delay_ps(seed: int, run_id: str, station: str) -> int:
    """Capture start delay after PrepareRun, uniform in [0, 10 ms), fixed by seed and run."""
    ss = np.random.SeedSequence([seed, zlib.crc32(run_id.encode()), ord(station)])
    return int(np.random.default_rng(ss).integers(0, MAX_ACTIVATION_DELAY_PS))


def tag_file_name(run_id: str, station: str, partial: bool = False) -> str:
    return f"{run_id}_{station}.partial.tags" if partial else f"{run_id}_{station}.tags"


def station_agent_step(state: AgentState, msg: Message, seed: int = 0
                       ) -> tuple[AgentState, list[Message], list[Action]]:
    st = state.station

    def violation(why: str):
        return state, [ProtocolViolation(st, why)], []

    if isinstance(msg, Abort):
        if state.phase in (Phase.PREPARING, Phase.RECORDING):
            name = tag_file_name(state.run_id, st, partial=True)
            return AgentState(st), [Closed(st, name)], [StopCapture(state.run_id, msg.t_ps, name, True)]
        return AgentState(st), [Closed(st, "")], []

    run_id = getattr(msg, "run_id", None)
    if state.phase is not Phase.IDLE and run_id is not None and run_id != state.run_id:
        return violation(f"run_id {run_id!r} does not match current run {state.run_id!r}")

    if state.phase is Phase.IDLE and isinstance(msg, PrepareRun):
        start = msg.t_ps + activation_delay_ps(seed, msg.run_id, st)
        return (AgentState(st, Phase.PREPARING, msg.run_id), [Ready(st, msg.run_id, start)],
                [StartCapture(msg.run_id, start)])
    if state.phase is Phase.PREPARING and isinstance(msg, BeginRecording):
        return replace(state, phase=Phase.RECORDING), [], []
    if state.phase is Phase.RECORDING and isinstance(msg, SaveFiles):
        name = tag_file_name(state.run_id, st)
        return (replace(state, phase=Phase.SAVING), [Saved(st, state.run_id, name)],
                [StopCapture(state.run_id, msg.t_ps, name, False)])
    if state.phase is Phase.SAVING and isinstance(msg, RunEnded):
        return AgentState(st), [], []
    return violation(f"unexpected {type(msg).__name__} while {state.phase.value}")


class PulseLine:
    """Log of frequency changes on the trigger cable, shared by everything downstream."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self._log: list[tuple[int, int]] = []

    def set(self, t_ps: int, hz: int) -> None:
        with self._lock:
            self._log.append((t_ps, hz))

    def log(self) -> list[tuple[int, int]]:
        with self._lock:
            return sorted(self._log)


class LabError(RuntimeError):
    pass


class Lab:
    """Physical side of a simulated experiment.

    Both stations observe one source realization; the pulse train is placed
    from the generator's frequency log and each station's clock starts at
    its capture start.
    """

    def __init__(self, plan: FrequencyPlan, setting: AnalyzerSetting, source: SourceParams,
                 clocks: dict[str, ClockModel], out_dir: str | Path, seed: int = 0,
                 trigger_loss: float = 0.0, line: PulseLine | None = None):
        self.plan = plan
        self.setting = setting
        self.source = source
        self.clocks = clocks
        self.out_dir = Path(out_dir)
        self.seed = seed
        self.trigger_loss = trigger_loss
        self.line = line or PulseLine()
        self._lock = threading.Lock()
        self._starts: dict[tuple[str, str], int] = {}
        self._runs: dict[str, SimulatedRun] = {}

    def start(self, station: str, run_id: str, t_ps: int) -> None:
        with self._lock:
            self._starts[(run_id, station)] = t_ps

    def _schedule(self, until_ps: int | None = None) -> tuple[int, int | None, int | None]:
        """First pre-run time, step command time and run end time from the line log."""
        t0 = t_step = t_end = None
        for t, hz in self.line.log():
            if until_ps is not None and t > until_ps:
                break
            if hz == self.plan.freq_pre_hz and t0 is None:
                t0 = t
            elif hz == self.plan.freq_run_hz and t0 is not None and t_step is None:
                t_step = t
            elif hz == self.plan.freq_pre_hz and t_step is not None and t_end is None:
                t_end = t
        if t0 is None:
            raise LabError("the generator never ran at the pre-run frequency")
        return t0, t_step, t_end

    def render(self, run_id: str) -> SimulatedRun:
        with self._lock:
            if run_id in self._runs:
                return self._runs[run_id]
            starts = {s: self._starts.get((run_id, s)) for s in ("A", "B")}
        if None in starts.values():
            raise LabError(f"run {run_id}: a station never started capturing")
        t0, t_step, t_end = self._schedule()
        if t_step is None or t_end is None:
            raise LabError(f"run {run_id}: no complete pre-run, run, pre-run frequency sequence")
        n_pre = max(1, -(-(t_step - t0) // self.plan.pre_period_ps))
        n_run = max(1, (t_end - (t0 + n_pre * self.plan.pre_period_ps)) // self.plan.run_period_ps)
        clocks = {s: replace(self.clocks.get(s, ClockModel()), start_offset_ps=starts[s] - t0) for s in ("A", "B")}
        run = simulate_run(self.plan, self.source, clocks, self.setting, int(n_pre), int(n_run),
                           self.trigger_loss, self.seed, run_id=run_id)
        with self._lock:
            self._runs[run_id] = run
        return run

    def partial_stream(self, station: str, run_id: str, t_stop: int) -> TagStream:
        """Pre-run triggers seen between capture start and ``t_stop``."""
        start = self._starts.get((run_id, station), t_stop)
        t0, t_step, _ = self._schedule(until_ps=t_stop)
        last = min(t_stop, t_step) if t_step is not None else t_stop
        k0 = max(0, -(-(start - t0) // self.plan.pre_period_ps))
        k1 = (last - t0) // self.plan.pre_period_ps
        true_t = t0 + np.arange(k0, k1 + 1, dtype=np.int64) * self.plan.pre_period_ps
        clock = replace(self.clocks.get(station, ClockModel()), start_offset_ps=start)
        local = apply_clock(clock, true_t) if len(true_t) else np.zeros(0, np.int64)
        local = np.atleast_1d(local)
        local = local[local >= 0]
        chans = np.full(len(local), Channel.TRIGGER, np.uint8)
        return TagStream(Station(station), run_id, self.plan, local, chans)

    def stop(self, station: str, action: StopCapture) -> Path:
        if action.partial:
            stream = self.partial_stream(station, action.run_id, action.t_ps)
        else:
            run = self.render(action.run_id)
            stream = run.a if station == "A" else run.b
        path = self.out_dir / action.file_name
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path.write_bytes(write_tag_file(stream))
        log.info("station %s wrote %s (%d tags)", station, path, len(stream))
        return path

    def truth(self, run_id: str):
        return self._runs[run_id].truth if run_id in self._runs else None


class StationAgent:
    """Runs ``station_agent_step`` against a transport.

    ``faults`` injects misbehaviour for protocol tests: ``drop_ready`` never
    sends Ready, ``bad_saved_run_id`` reports Saved under a wrong run id.
    """

    def __init__(self, station: str, transport: Transport, lab: Lab, seed: int = 0,
                 faults: frozenset[str] = frozenset()):
        self.state = AgentState(station)
        self.transport = transport
        self.lab = lab
        self.seed = seed
        self.faults = faults

    def _outgoing(self, msgs: list[Message]) -> list[Message]:
        out = []
        for m in msgs:
            if isinstance(m, Ready) and "drop_ready" in self.faults:
                continue
            if isinstance(m, Saved) and "bad_saved_run_id" in self.faults:
                m = replace(m, run_id=m.run_id + "-x")
            out.append(m)
        return out

    def handle(self, msg: Message) -> list[Message]:
        self.state, out, actions = station_agent_step(self.state, msg, self.seed)
        for act in actions:
            try:
                if isinstance(act, StartCapture):
                    self.lab.start(self.state.station, act.run_id, act.t_ps)
                else:
                    self.lab.stop(self.state.station, act)
            except (LabError, OSError, ValueError) as exc:
                return [ProtocolViolation(self.state.station, f"capture failed: {exc}")]
        return self._outgoing(out)

    def run(self) -> None:
        while True:
            try:
                msg = self.transport.recv()
            except TransportClosed:
                return
            if isinstance(msg, Shutdown):
                return
            for m in self.handle(msg):
                self.transport.send(m)


class GeneratorAgent:
    """Function generator: applies SetFrequency after ``latency_ps`` and acknowledges."""

    def __init__(self, transport: Transport, line: PulseLine, latency_ps: int = 0):
        self.transport = transport
        self.line = line
        self.latency_ps = latency_ps

    def handle(self, msg: Message) -> list[Message]:
        if isinstance(msg, SetFrequency):
            t = msg.t_ps + self.latency_ps
            self.line.set(t, msg.hz)
            return [FrequencySet(msg.hz, t)]
        if isinstance(msg, Abort):
            return []
        return [ProtocolViolation("generator", f"unexpected {type(msg).__name__}")]

    def run(self) -> None:
        while True:
            try:
                msg = self.transport.recv()
            except TransportClosed:
                return
            if isinstance(msg, Shutdown):
                return
            for m in self.handle(msg):
                self.transport.send(m)
