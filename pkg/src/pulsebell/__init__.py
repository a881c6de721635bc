"""Coincidence identification for remote photon-detection stations by pulse numbering.

A pulsed source whose repetition rate steps from a pre-run rate to a run
rate gives both stations a shared pulse zero.  Counting pulses from that
step numbers every pulse identically at both ends, so coincidences are
detections with equal pulse numbers; no delay scan or clock
synchronization is needed.  Delay-scan post-selection is provided as the
baseline to compare against.
"""

from __future__ import annotations

from .timetags import Channel, Chirp, FrequencyPlan, Station, TagStream, TimeTag, read_tag_file, write_tag_file

__version__ = "0.1.0"

__all__ = [
    "Channel", "Chirp", "FrequencyPlan", "Station", "TagStream", "TimeTag", "read_tag_file", "write_tag_file",
    "__version__",
]
