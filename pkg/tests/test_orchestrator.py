from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pulsebell.orchestrator import Lab, RunScript, run_orchestrated
from pulsebell.orchestrator.agents import (AgentState, Phase, StartCapture, StopCapture, activation_delay_ps,
                                           station_agent_step, tag_file_name)
from pulsebell.orchestrator.coordinator import ScriptError
from pulsebell.orchestrator.messages import (MESSAGE_TYPES, Abort, BeginRecording, Closed, MessageError,
                                             PrepareRun, ProtocolViolation, Ready, RunEnded, Saved, SaveFiles,
                                             SetFrequency, decode)
from pulsebell.orchestrator.transport import (MAX_FRAME, SocketTransport, TransportClosed, encode_frame,
                                              inproc_pair, parse_addr)
from pulsebell.pulsematch import detect_step, pulse_match_streams
from pulsebell.sim import AnalyzerSetting, ClockModel, SourceParams
from pulsebell.timetags import read_tag_file

IDLE = AgentState("A")


# ---------------------------------------------------------------- state machine

def test_idle_prepare_emits_ready():
    state, out, acts = station_agent_step(IDLE, PrepareRun("r1", 1000), seed=3)
    start = 1000 + activation_delay_ps(3, "r1", "A")
    assert state == AgentState("A", Phase.PREPARING, "r1")
    assert out == [Ready("A", "r1", start)]
    assert acts == [StartCapture("r1", start)]


def test_recording_save_emits_saved():
    state, out, acts = station_agent_step(AgentState("B", Phase.RECORDING, "r1"), SaveFiles("r1", 99))
    assert state.phase is Phase.SAVING
    assert out == [Saved("B", "r1", "r1_B.tags")]
    assert acts == [StopCapture("r1", 99, "r1_B.tags", False)]


def test_idle_save_is_violation():
    state, out, acts = station_agent_step(IDLE, SaveFiles("r1", 0))
    assert state == IDLE and acts == []
    assert len(out) == 1 and isinstance(out[0], ProtocolViolation)


def test_full_cycle_returns_to_idle():
    state = IDLE
    for msg in (PrepareRun("r", 0), BeginRecording("r"), SaveFiles("r", 5), RunEnded("r")):
        state, out, _ = station_agent_step(state, msg)
        assert not any(isinstance(m, ProtocolViolation) for m in out)
    assert state == IDLE


def test_wrong_run_id_is_violation():
    s = AgentState("A", Phase.PREPARING, "r")
    state, out, _ = station_agent_step(s, BeginRecording("other"))
    assert state == s and isinstance(out[0], ProtocolViolation)


@pytest.mark.parametrize("phase", [Phase.PREPARING, Phase.RECORDING])
def test_abort_closes_partial_file(phase):
    state, out, acts = station_agent_step(AgentState("A", phase, "r"), Abort("x", 77))
    assert state == IDLE
    assert out == [Closed("A", "r_A.partial.tags")]
    assert acts == [StopCapture("r", 77, "r_A.partial.tags", True)]


def test_abort_when_idle():
    assert station_agent_step(IDLE, Abort("x", 0)) == (IDLE, [Closed("A", "")], [])


def test_activation_delay_range_and_determinism():
    d = [activation_delay_ps(1, f"r{k}", "A") for k in range(200)]
    assert all(0 <= x < 10_000_000_000 for x in d)
    assert d == [activation_delay_ps(1, f"r{k}", "A") for k in range(200)]
    assert activation_delay_ps(1, "r", "A") != activation_delay_ps(1, "r", "B")


def test_trace_determinism():
    msgs = [PrepareRun("r", 0), BeginRecording("r"), SaveFiles("r", 5), SaveFiles("r", 6), RunEnded("r")]

    def replay():
        state, trace = AgentState("B"), []
        for m in msgs:
            state, out, acts = station_agent_step(state, m, seed=9)
            trace.append((state, out, acts))
        return trace

    assert replay() == replay()


def test_file_names():
    assert tag_file_name("r", "A") == "r_A.tags"
    assert tag_file_name("r", "B", partial=True) == "r_B.partial.tags"


# ---------------------------------------------------------------- messages and transports

text = st.text(st.characters(blacklist_categories=("Cs",)), min_size=0, max_size=30)


@given(text, st.integers(-2**62, 2**62))
def test_message_round_trip(s, n):
    for msg in (Abort(s, n), Saved(s, s, s), SetFrequency(n, n), Ready(s, s, n)):
        line = msg.encode()
        assert "\n" not in line
        assert decode(line) == msg


@pytest.mark.parametrize("line", ["Nope x=1", "Ready station=A", "SetFrequency hz=x t_ps=0",
                                  "SetFrequency hz=1 hz=2 t_ps=0", "SetFrequency hz=1 t_ps=0 extra=1"])
def test_decode_rejects(line):
    with pytest.raises(MessageError):
        decode(line)


def test_message_types_registered():
    assert {"SetFrequency", "PrepareRun", "Ready", "BeginRecording", "RunEnded", "SaveFiles", "Saved",
            "Abort"} <= set(MESSAGE_TYPES)


def test_inproc_pair_ordered():
    a, b = inproc_pair()
    for k in range(5):
        a.send(SetFrequency(k, k))
    assert [b.recv(timeout=1).hz for _ in range(5)] == list(range(5))
    assert b.recv(timeout=0.01) is None
    a.close()
    with pytest.raises(TransportClosed):
        b.recv(timeout=1)


def test_socket_frames(tmp_path):
    import socket

    left, right = socket.socketpair()
    ta, tb = SocketTransport(left), SocketTransport(right)
    msgs = [Abort("two words\nand a line", 5), Saved("A", "r", "r_A.tags")]
    for m in msgs:
        ta.send(m)
    assert [tb.recv(timeout=1) for _ in msgs] == msgs
    frame = encode_frame(msgs[1])
    assert int.from_bytes(frame[:4], "big") == len(frame) - 4
    ta.close()
    with pytest.raises(TransportClosed):
        tb.recv(timeout=1)
    tb.close()
    assert MAX_FRAME == 1 << 20


def test_parse_addr():
    assert parse_addr("127.0.0.1:5000") == ("127.0.0.1", 5000)
    with pytest.raises(ValueError):
        parse_addr("nohost")


def test_script_validation():
    with pytest.raises(ScriptError):
        RunScript(duration_s=0)
    with pytest.raises(ScriptError):
        RunScript(ready_timeout_s=0)
    with pytest.raises(ScriptError):
        RunScript.from_text("bogus=1\n")
    s = RunScript(run_id="x", duration_s=0.5)
    assert RunScript.from_text(s.to_text()) == s


# ---------------------------------------------------------------- end to end

SCRIPT = RunScript(run_id="t", duration_s=0.2, chirp_depth_hz=1000, chirp_period_s=0.1,
                   ready_timeout_s=0.5, saved_timeout_s=30)
SOURCE = SourceParams(0.02, 0.5, 0.5, 0.002, 0.002)
CLOCKS = {"A": ClockModel(0, 5e-8, 100_000, 0.07, 2000.0), "B": ClockModel(0, -5e-8, 0, 1.0, 2000.0)}


def _run(tmp_path, transport="inproc", faults=None, seed=5):
    lab = Lab(SCRIPT.plan, SCRIPT.setting, SOURCE, CLOCKS, tmp_path, seed, trigger_loss=0.01)
    return run_orchestrated(SCRIPT, lab, transport, seed=seed, faults=faults)


@pytest.mark.parametrize("transport", ["inproc", "socket"])
def test_happy_path(tmp_path, transport):
    out = _run(tmp_path, transport)
    assert out.ok, out.reason
    assert out.frequency_commands() == [490_000, 500_000, 490_000]
    a = read_tag_file(out.files["A"].read_bytes())
    b = read_tag_file(out.files["B"].read_bytes())
    step_a = detect_step(a.trigger_times(), a.plan)
    step_b = detect_step(b.trigger_times(), b.plan)
    injected = activation_delay_ps(5, "t", "B") - activation_delay_ps(5, "t", "A")
    assert abs((step_a.step_local_time_ps - step_b.step_local_time_ps) - injected) <= 2 * a.plan.run_period_ps
    res = pulse_match_streams(a, b)
    ev_a = out.truth.tag_event["A"][res.pairs.index_a]
    ev_b = out.truth.tag_event["B"][res.pairs.index_b]
    truth = set(out.truth.detected_pairs().tolist())
    assert len(set(ev_a[ev_a == ev_b].tolist()) & truth) >= 0.99 * len(truth)


def test_transports_give_identical_files(tmp_path):
    x = _run(tmp_path / "x", "inproc")
    y = _run(tmp_path / "y", "socket")
    for s in "AB":
        assert x.files[s].read_bytes() == y.files[s].read_bytes()


def test_start_delays_do_not_change_pairs():
    from dataclasses import replace

    from pulsebell.sim import simulate_run

    plan = SCRIPT.plan
    sets, counts = [], []
    for seed in (1, 2, 3):
        clocks = {s: replace(c, start_offset_ps=activation_delay_ps(seed, "t", s)) for s, c in CLOCKS.items()}
        run = simulate_run(plan, SOURCE, clocks, SCRIPT.setting, 6000, 100_000, 0.01, seed=5)
        res = pulse_match_streams(run.a, run.b)
        ev_a = run.truth.tag_event["A"][res.pairs.index_a]
        ev_b = run.truth.tag_event["B"][res.pairs.index_b]
        sets.append(set(zip(ev_a.tolist(), ev_b.tolist(), res.pairs.pulse_number.tolist())))
        counts.append((res.step_a.pulse_count_from_start, res.step_b.pulse_count_from_start))
    assert len(set(counts)) == 3
    assert sets[0] == sets[1] == sets[2]


def test_missing_ready_aborts(tmp_path):
    out = _run(tmp_path, faults={"B": frozenset({"drop_ready"})})
    assert not out.ok
    assert out.missing == ("B",)
    assert "Ready" in out.reason and "B" in out.reason
    assert set(out.partial_files) == {"A", "B"}
    for s, p in out.partial_files.items():
        stream = read_tag_file(p.read_bytes())
        assert p.name == f"t_{s}.partial.tags"
        assert len(stream) > 0 and np.all(stream.channels == 2)
    assert not (tmp_path / "t_A.tags").exists()


def test_bad_saved_run_id_aborts(tmp_path):
    out = _run(tmp_path, faults={"A": frozenset({"bad_saved_run_id"})})
    assert not out.ok
    assert "run_id" in out.reason
