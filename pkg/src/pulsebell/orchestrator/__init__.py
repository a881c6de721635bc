"""Run control: a coordinator, a function generator and two recording stations."""

from .agents import (AgentState, GeneratorAgent, Lab, Phase, PulseLine, StartCapture, StationAgent, StopCapture,
                     activation_delay_ps, station_agent_step, tag_file_name)
from .coordinator import Coordinator, RunOutcome, RunScript, ScriptError, run_orchestrated
from .messages import MessageError, decode
from .transport import QueueTransport, SocketTransport, TransportClosed, inproc_pair

__all__ = [
    "AgentState", "Coordinator", "GeneratorAgent", "Lab", "MessageError", "Phase", "PulseLine", "QueueTransport",
    "RunOutcome", "RunScript", "ScriptError", "SocketTransport", "StartCapture", "StationAgent", "StopCapture",
    "TransportClosed", "activation_delay_ps", "decode", "inproc_pair", "run_orchestrated", "station_agent_step",
    "tag_file_name",
]
