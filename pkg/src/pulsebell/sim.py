"""Seeded two-station simulator for a pulsed entangled-photon source.

The source fires one pump pulse per trigger.  During each on-window a
polarization-entangled pair may be emitted; each photon is detected with
its arm efficiency and lands on the "1" or "0" analyzer output.  Each arm
also sees uncorrelated single detections.  Both stations timestamp
triggers and detections with their own free-running clock, starting at
their own (misaligned) recording start.

Randomness comes from one :class:`numpy.random.SeedSequence`, split into
independent streams for the source, each arm and each station's trigger
dropout, and further into pre-run and run segments, so that changing one
subsystem (or the pre-run length) never perturbs the others.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from typing import NamedTuple

import numpy as np

from .timetags import PS_PER_S, Channel, Chirp, FrequencyPlan, PlanError, Station, TagStream

log = logging.getLogger(__name__)

# 1:100 analyzer contrast -> visibility (100 - 1) / (100 + 1)
DEFAULT_VISIBILITY = 99 / 101

# per-run counts reported for the alpha = beta = 0 file
REGIME_RUN_PULSES = 4_511_169
REGIME_SINGLES_A = 115_861
REGIME_SINGLES_B = 108_874
REGIME_PULSEMATCH_NC = 8_794
REGIME_POSTSELECT_NC = 2_614

ORIGIN_PAIR = 0
ORIGIN_SINGLE_A = 1
ORIGIN_SINGLE_B = 2
ORIGIN_NAMES = ("pair", "single_a", "single_b")
NO_OUTCOME = -1


class SimulationError(ValueError):
    pass


@dataclass(frozen=True)
class SourceParams:
    p_pair: float
    eta_a: float = 1.0
    eta_b: float = 1.0
    p_single_a: float = 0.0
    p_single_b: float = 0.0
    visibility: float = DEFAULT_VISIBILITY

    def check(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not 0.0 <= v <= 1.0:
                raise SimulationError(f"{f.name} must lie in [0, 1], got {v}")
        for arm, p in (("A", self.detection_probability("A")), ("B", self.detection_probability("B"))):
            if p > 0.1:
                warnings.warn(
                    f"arm {arm} detects in {p:.3f} of pulses; accidental coincidences will be large",
                    stacklevel=3,
                )

    def detection_probability(self, arm: str) -> float:
        """Expected detections per pulse on one arm."""
        if arm == "A":
            return self.p_pair * self.eta_a + self.p_single_a
        return self.p_pair * self.eta_b + self.p_single_b


def tune_source(
    n_pulses: int = REGIME_RUN_PULSES,
    singles_a: int = REGIME_SINGLES_A,
    singles_b: int = REGIME_SINGLES_B,
    pairs: int = REGIME_PULSEMATCH_NC,
    eta: float = 0.3,
    visibility: float = DEFAULT_VISIBILITY,
) -> SourceParams:
    """Source parameters whose expected per-run counts hit the given targets.

    ``pairs`` is the expected number of pulses in which both photons of a
    pair are detected; ``eta`` is used for both arms.
    """
    p_pair = pairs / n_pulses / eta**2
    s_a = singles_a / n_pulses - p_pair * eta
    s_b = singles_b / n_pulses - p_pair * eta
    if min(s_a, s_b) < 0 or p_pair > 1:
        raise SimulationError("targets are inconsistent with the requested efficiency")
    return SourceParams(p_pair, eta, eta, s_a, s_b, visibility)


@dataclass(frozen=True)
class ClockModel:
    """A station clock: recording start, rate error, slow wander and jitter.

    ``start_offset_ps`` is the true time (from the first simulated pulse) at
    which the station starts recording; that instant is local time 0.
    """

    start_offset_ps: int = 0
    rate_error: float = 0.0
    wander_amp_ps: float = 0.0
    wander_period_s: float = 1.0
    tag_jitter_sigma_ps: float = 0.0
    trigger_jitter_ps: float = 0.0

    def check(self) -> None:
        if not abs(self.rate_error) < 1e-3:
            raise SimulationError(f"|rate_error| must be below 1e-3, got {self.rate_error}")
        if self.wander_amp_ps > 0 and not self.wander_period_s > 0:
            raise SimulationError("wander_period_s must be positive when wander is enabled")
        if self.tag_jitter_sigma_ps < 0 or self.trigger_jitter_ps < 0:
            raise SimulationError("jitter must be non-negative")


def default_clocks(start_a_ps: int = 0, start_b_ps: int = 0, jitter_ps: float = 2000.0) -> dict[str, ClockModel]:
    """Free-running clocks with drift large enough to smear a 100 ns window.

    Relative rate error 1e-7 accumulates about 1 us over a 10 s run; A also
    wanders by 250 ns with a 3.7 s period.
    """
    return {
        "A": ClockModel(start_a_ps, 5e-8, 250_000.0, 3.7, jitter_ps),
        "B": ClockModel(start_b_ps, -5e-8, 0.0, 1.0, jitter_ps),
    }


@dataclass(frozen=True)
class AnalyzerSetting:
    alpha_deg: float
    beta_deg: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "alpha_deg", float(self.alpha_deg) % 180.0)
        object.__setattr__(self, "beta_deg", float(self.beta_deg) % 180.0)


CANONICAL_ANGLES = {"a": 0.0, "a'": 45.0, "b": 22.5, "b'": 67.5}
CANONICAL_SETTINGS = (
    AnalyzerSetting(0.0, 22.5),
    AnalyzerSetting(0.0, 67.5),
    AnalyzerSetting(45.0, 22.5),
    AnalyzerSetting(45.0, 67.5),
)


def trigger_train(plan: FrequencyPlan, n_pre: int, n_run: int) -> np.ndarray:
    """True trigger times in ps: ``n_pre`` pre-run gaps, then the run pulses.

    Trigger ``n_pre`` is run pulse 0, the first pulse after the frequency step.
    """
    plan.check()
    if n_pre < 1 or n_run < 1:
        raise SimulationError("n_pre and n_run must both be at least 1")
    return _train(plan, n_pre, n_run)


def _train(plan: FrequencyPlan, n_pre: int, n_run: int) -> np.ndarray:
    pre = np.arange(n_pre, dtype=np.int64) * plan.pre_period_ps
    run = n_pre * plan.pre_period_ps + plan.run_offsets(n_run)
    return np.concatenate([pre, run])


def sample_outcomes(setting: AnalyzerSetting, visibility: float, rng: np.random.Generator, size: int | None = None):
    """Joint analyzer outcomes for a |phi+> pair with the given visibility.

    P(i, j) = (1 + s_ij * V * cos 2(alpha - beta)) / 4 with s = +1 for equal
    outcomes.  Returns a pair of int8 arrays (or a pair of ints when
    ``size`` is None).
    """
    if not 0.0 <= visibility <= 1.0:
        raise SimulationError(f"visibility must lie in [0, 1], got {visibility}")
    n = 1 if size is None else size
    corr = visibility * math.cos(2 * math.radians(setting.alpha_deg - setting.beta_deg))
    a = rng.integers(0, 2, n, dtype=np.int8)
    same = rng.random(n) < (1 + corr) / 2
    b = np.where(same, a, 1 - a).astype(np.int8)
    if size is None:
        return int(a[0]), int(b[0])
    return a, b


def apply_clock(clock: ClockModel, true_time_ps):
    """Map true time to the station's local time (ps since its recording start)."""
    t = np.asarray(true_time_ps, dtype=np.int64)
    x = t - clock.start_offset_ps
    dev = x * clock.rate_error
    if clock.wander_amp_ps:
        dev = dev + clock.wander_amp_ps * np.sin(2 * math.pi * x / (clock.wander_period_s * PS_PER_S))
    local = x + np.rint(dev).astype(np.int64)
    return int(local) if local.ndim == 0 else local


def drop_triggers(
    train: np.ndarray, loss_prob: float, rng: np.random.Generator, protect: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Remove each trigger independently with ``loss_prob``.

    The trigger at index ``protect`` (normally run pulse 0) is never removed.
    Returns the surviving train and the indices that were dropped.
    """
    if not 0.0 <= loss_prob < 1.0:
        raise SimulationError(f"loss_prob must lie in [0, 1), got {loss_prob}")
    lost = rng.random(len(train)) < loss_prob
    if protect is not None:
        lost[protect] = False
    return train[~lost], np.flatnonzero(lost)


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Every simulated event and the mapping from recorded tags to events.

    ``pulse_index`` is run-relative (0 = first run pulse, negative = pre-run).
    Undetected photons have outcome -1 and true time -1.  ``tag_event`` maps
    each station's detection tags (in stream order) to event rows.
    """

    n_pre: int
    n_run: int
    pulse_index: np.ndarray
    origin: np.ndarray
    outcome_a: np.ndarray
    outcome_b: np.ndarray
    true_time_a_ps: np.ndarray
    true_time_b_ps: np.ndarray
    tag_event: dict[str, np.ndarray] = field(default_factory=dict)
    dropped: dict[str, np.ndarray] = field(default_factory=dict)
    trigger_pulse: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.pulse_index)

    def detected_pairs(self, run_only: bool = True) -> np.ndarray:
        """Event rows of pairs with both photons recorded."""
        a = np.zeros(len(self), bool)
        b = np.zeros(len(self), bool)
        a[self.tag_event.get("A", np.zeros(0, np.int64))] = True
        b[self.tag_event.get("B", np.zeros(0, np.int64))] = True
        ok = (self.origin == ORIGIN_PAIR) & a & b
        if run_only:
            ok &= self.pulse_index >= 0
        return np.flatnonzero(ok)

    def singles(self, station: str, run_only: bool = True) -> int:
        ev = self.tag_event.get(station, np.zeros(0, np.int64))
        if run_only:
            ev = ev[self.pulse_index[ev] >= 0]
        return len(ev)


class SimulatedRun(NamedTuple):
    a: TagStream
    b: TagStream
    truth: GroundTruth


def _rngs(seed: int) -> dict[str, tuple[np.random.Generator, np.random.Generator]]:
    root = np.random.SeedSequence(seed)
    out = {}
    names = ("source", "arm_A", "arm_B", "drop_A", "drop_B", "jitter_A", "jitter_B")
    for name, child in zip(names, root.spawn(len(names))):
        pre, run = child.spawn(2)
        out[name] = (np.random.default_rng(pre), np.random.default_rng(run))
    return out


def _segment_events(n, first_pulse, pulse_times, source, setting, on_ps, rng_src, rng_a, rng_b, rng_ja, rng_jb):
    pulses = np.arange(n, dtype=np.int64)
    is_pair = rng_src.random(n) < source.p_pair
    pair_pulse = pulses[is_pair]
    m = len(pair_pulse)
    emit = pulse_times[pair_pulse] + np.floor(rng_src.random(m) * on_ps).astype(np.int64)
    out_a, out_b = sample_outcomes(setting, source.visibility, rng_src, m)
    arms = {}
    for arm, rng, eta, p_single, outcome in (
        ("A", rng_a, source.eta_a, source.p_single_a, out_a),
        ("B", rng_b, source.eta_b, source.p_single_b, out_b),
    ):
        seen = rng.random(m) < eta
        single_pulse = pulses[rng.random(n) < p_single]
        k = len(single_pulse)
        single_time = pulse_times[single_pulse] + np.floor(rng.random(k) * on_ps).astype(np.int64)
        single_out = rng.integers(0, 2, k, dtype=np.int8)
        arms[arm] = (seen, single_pulse, single_time, single_out)

    seen_a, sp_a, st_a, so_a = arms["A"]
    seen_b, sp_b, st_b, so_b = arms["B"]
    ka, kb = len(sp_a), len(sp_b)
    rows = m + ka + kb

    def none_i8(k):
        return np.full(k, NO_OUTCOME, np.int8)

    def none_i64(k):
        return np.full(k, -1, np.int64)

    ev = dict(
        pulse_index=np.concatenate([pair_pulse, sp_a, sp_b]) + first_pulse,
        origin=np.concatenate(
            [np.full(m, ORIGIN_PAIR, np.int8), np.full(ka, ORIGIN_SINGLE_A, np.int8), np.full(kb, ORIGIN_SINGLE_B, np.int8)]
        ),
        outcome_a=np.concatenate([np.where(seen_a, out_a, NO_OUTCOME).astype(np.int8), so_a, none_i8(kb)]),
        outcome_b=np.concatenate([np.where(seen_b, out_b, NO_OUTCOME).astype(np.int8), none_i8(ka), so_b]),
        true_time_a_ps=np.concatenate([np.where(seen_a, emit, -1), st_a, none_i64(kb)]),
        true_time_b_ps=np.concatenate([np.where(seen_b, emit, -1), none_i64(ka), st_b]),
        jitter_a=rng_ja.standard_normal(rows),
        jitter_b=rng_jb.standard_normal(rows),
    )
    return ev


def _nudge_duplicates(local: np.ndarray, chans: np.ndarray) -> np.ndarray:
    """Sort order of (local, chans), shifting exact same-channel ties by 1 ps."""
    while True:
        order = np.lexsort((chans, local))
        lt, ch = local[order], chans[order]
        tie = np.flatnonzero((np.diff(lt) == 0) & (np.diff(ch) == 0)) + 1
        if len(tie) == 0:
            return order
        local[order[tie]] += 1


def _record_station(station, plan, clock, train, kept_trigger_idx, n_pre, events, trigger_rng, run_id):
    arm = station.lower()
    true_det = events[f"true_time_{arm}_ps"]
    det_rows = np.flatnonzero(true_det >= 0)
    z = events[f"jitter_{arm}"][det_rows]
    local_det = apply_clock(clock, true_det[det_rows]) + np.rint(z * clock.tag_jitter_sigma_ps).astype(np.int64)
    det_chan = events[f"outcome_{arm}"][det_rows].astype(np.uint8)

    trig_true = train[kept_trigger_idx]
    local_trig = apply_clock(clock, trig_true)
    if clock.trigger_jitter_ps:
        local_trig = local_trig + np.rint(
            trigger_rng.standard_normal(len(trig_true)) * clock.trigger_jitter_ps
        ).astype(np.int64)

    end_local = apply_clock(clock, int(train[-1]) + plan.run_period_ps)
    keep_t = (local_trig >= 0) & (local_trig <= end_local)
    keep_d = (local_det >= 0) & (local_det <= end_local)
    local_trig, trig_idx = local_trig[keep_t], kept_trigger_idx[keep_t]
    local_det, det_chan, det_rows = local_det[keep_d], det_chan[keep_d], det_rows[keep_d]

    local = np.concatenate([local_trig, local_det])
    chans = np.concatenate([np.full(len(local_trig), Channel.TRIGGER, np.uint8), det_chan])
    order = _nudge_duplicates(local, chans)
    is_det = order >= len(local_trig)
    tag_event = det_rows[order[is_det] - len(local_trig)]
    stream = TagStream(Station(station), run_id, plan, local[order], chans[order])
    return stream, tag_event, trig_idx - n_pre


def simulate_run(
    plan: FrequencyPlan,
    source: SourceParams,
    clocks: dict[str, ClockModel],
    setting: AnalyzerSetting,
    n_pre: int,
    n_run: int,
    trigger_loss: float = 0.0,
    seed: int = 0,
    *,
    run_id: str = "run",
    protect_step: bool = True,
) -> SimulatedRun:
    """Simulate one recording run; returns both tag streams and the ground truth."""
    plan.check()
    source.check()
    for c in clocks.values():
        c.check()
    if not 0 <= seed < 2**64:
        raise SimulationError("seed must be an unsigned 64-bit value")
    train = trigger_train(plan, n_pre, n_run)
    return _simulate(plan, source, clocks, setting, train, n_pre, n_run, trigger_loss, seed, run_id, protect_step)


def _simulate(plan, source, clocks, setting, train, n_pre, n_run, trigger_loss, seed, run_id, protect_step):
    rngs = _rngs(seed)
    on_ps = plan.pulse_on_ps
    segs = []
    for seg, (first, n) in enumerate(((-n_pre, n_pre), (0, n_run))):
        if n == 0:
            continue
        times = train[first + n_pre: first + n_pre + n]
        segs.append(
            _segment_events(n, first, times, source, setting, on_ps,
                            rngs["source"][seg], rngs["arm_A"][seg], rngs["arm_B"][seg],
                            rngs["jitter_A"][seg], rngs["jitter_B"][seg])
        )
    events = {k: np.concatenate([s[k] for s in segs]) for k in segs[0]}
    jitter = {"A": events.pop("jitter_a"), "B": events.pop("jitter_b")}

    streams, tag_event, dropped, trig_pulse = {}, {}, {}, {}
    for st in ("A", "B"):
        clock = clocks.get(st, ClockModel())
        drop_pre, drop_run = rngs[f"drop_{st}"]
        idx = np.arange(len(train))
        kept_pre, lost_pre = drop_triggers(idx[:n_pre], trigger_loss, drop_pre)
        kept_run, lost_run = drop_triggers(idx[n_pre:], trigger_loss, drop_run, 0 if protect_step else None)
        kept = np.concatenate([kept_pre, kept_run])
        dropped[st] = np.concatenate([lost_pre, lost_run + n_pre]) - n_pre
        trig_rng = np.random.default_rng(np.random.SeedSequence([seed, 7, ord(st)]))
        streams[st], tag_event[st], trig_pulse[st] = _record_station(
            st, plan, clock, train, kept, n_pre, {**events, f"jitter_{st.lower()}": jitter[st]}, trig_rng, run_id
        )
    truth = GroundTruth(n_pre, n_run, **events, tag_event=tag_event, dropped=dropped, trigger_pulse=trig_pulse)
    log.debug("simulated run %s: %d events, %d/%d tags", run_id, len(truth), len(streams["A"]), len(streams["B"]))
    return SimulatedRun(streams["A"], streams["B"], truth)


# ---------------------------------------------------------------- files

TRUTH_HEADER = "pulse_index,origin,outcome_a,outcome_b,true_time_a_ps,true_time_b_ps"


def write_ground_truth(truth: GroundTruth) -> bytes:
    def cell(x):
        return "" if x < 0 else str(x)

    lines = [TRUTH_HEADER]
    for p, o, oa, ob, ta, tb in zip(
        truth.pulse_index.tolist(), truth.origin.tolist(), truth.outcome_a.tolist(),
        truth.outcome_b.tolist(), truth.true_time_a_ps.tolist(), truth.true_time_b_ps.tolist(),
    ):
        lines.append(f"{p},{ORIGIN_NAMES[o]},{cell(oa)},{cell(ob)},{cell(ta)},{cell(tb)}")
    return ("\n".join(lines) + "\n").encode()


def write_tag_map(truth: GroundTruth) -> bytes:
    """Companion file mapping each station's detection tags to truth rows."""
    lines = ["station,detection_index,event_row"]
    for st in ("A", "B"):
        for i, row in enumerate(truth.tag_event.get(st, np.zeros(0, np.int64)).tolist()):
            lines.append(f"{st},{i},{row}")
    return ("\n".join(lines) + "\n").encode()


def read_ground_truth(data: bytes, tag_map: bytes | None = None) -> GroundTruth:
    text = data.decode()
    lines = text.strip("\n").split("\n")
    if lines[0] != TRUTH_HEADER:
        raise SimulationError("not a ground-truth file")
    cols: list[list[int]] = [[] for _ in range(6)]
    for ln in lines[1:]:
        p, o, oa, ob, ta, tb = ln.split(",")
        cols[0].append(int(p))
        cols[1].append(ORIGIN_NAMES.index(o))
        for k, v in zip(range(2, 6), (oa, ob, ta, tb)):
            cols[k].append(int(v) if v else -1)
    pulse = np.array(cols[0], np.int64)
    tag_event: dict[str, list[int]] = {"A": [], "B": []}
    if tag_map is not None:
        for ln in tag_map.decode().strip("\n").split("\n")[1:]:
            st, _, row = ln.split(",")
            tag_event[st].append(int(row))
    n_pre = int(-pulse.min()) if len(pulse) and pulse.min() < 0 else 0
    n_run = int(pulse.max()) + 1 if len(pulse) else 0
    return GroundTruth(
        n_pre, n_run, pulse, np.array(cols[1], np.int8), np.array(cols[2], np.int8),
        np.array(cols[3], np.int8), np.array(cols[4], np.int64), np.array(cols[5], np.int64),
        tag_event={k: np.array(v, np.int64) for k, v in tag_event.items()},
    )


@dataclass(frozen=True)
class RunConfig:
    """Everything ``simulate_run`` needs, as a flat key=value file."""

    run_id: str = "run"
    freq_pre_hz: int = 490_000
    freq_run_hz: int = 500_000
    pulse_on_ns: int = 1000
    chirp_depth_hz: int = 0
    chirp_period_s: float = 1.0
    p_pair: float = 0.0
    eta_a: float = 1.0
    eta_b: float = 1.0
    p_single_a: float = 0.0
    p_single_b: float = 0.0
    visibility: float = DEFAULT_VISIBILITY
    start_offset_ps_a: int = 0
    rate_error_a: float = 0.0
    wander_amp_ps_a: float = 0.0
    wander_period_s_a: float = 1.0
    tag_jitter_sigma_ps_a: float = 0.0
    trigger_jitter_ps_a: float = 0.0
    start_offset_ps_b: int = 0
    rate_error_b: float = 0.0
    wander_amp_ps_b: float = 0.0
    wander_period_s_b: float = 1.0
    tag_jitter_sigma_ps_b: float = 0.0
    trigger_jitter_ps_b: float = 0.0
    alpha_deg: float = 0.0
    beta_deg: float = 0.0
    n_pre: int = 10_000
    n_run: int = 100_000
    trigger_loss: float = 0.0
    protect_step: bool = True
    seed: int = 0
    chsh_set: bool = False

    @property
    def plan(self) -> FrequencyPlan:
        chirp = Chirp(self.chirp_depth_hz, self.chirp_period_s) if self.chirp_depth_hz else None
        return FrequencyPlan(self.freq_pre_hz, self.freq_run_hz, self.pulse_on_ns, chirp)

    @property
    def source(self) -> SourceParams:
        return SourceParams(self.p_pair, self.eta_a, self.eta_b, self.p_single_a, self.p_single_b, self.visibility)

    @property
    def clocks(self) -> dict[str, ClockModel]:
        out = {}
        for st in ("a", "b"):
            out[st.upper()] = ClockModel(
                getattr(self, f"start_offset_ps_{st}"),
                getattr(self, f"rate_error_{st}"),
                getattr(self, f"wander_amp_ps_{st}"),
                getattr(self, f"wander_period_s_{st}"),
                getattr(self, f"tag_jitter_sigma_ps_{st}"),
                getattr(self, f"trigger_jitter_ps_{st}"),
            )
        return out

    @property
    def setting(self) -> AnalyzerSetting:
        return AnalyzerSetting(self.alpha_deg, self.beta_deg)

    def chsh_runs(self) -> list["RunConfig"]:
        """One config per canonical setting, with distinct run ids and seeds."""
        names = ("ab", "abp", "apb", "apbp")
        return [
            replace(self, run_id=f"{self.run_id}_{n}", alpha_deg=s.alpha_deg, beta_deg=s.beta_deg,
                    seed=(self.seed + k) % 2**64, chsh_set=False)
            for k, (n, s) in enumerate(zip(names, CANONICAL_SETTINGS))
        ]

    def simulate(self) -> SimulatedRun:
        return simulate_run(
            self.plan, self.source, self.clocks, self.setting, self.n_pre, self.n_run,
            self.trigger_loss, self.seed, run_id=self.run_id, protect_step=self.protect_step,
        )

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str, **overrides) -> "RunConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict[str, object] = {}
        for n, raw in enumerate(io.StringIO(text), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not sep or key not in types:
                raise SimulationError(f"config line {n}: unknown key {key!r}")
            values[key] = _convert(types[key], value, n)
        values.update(overrides)
        return cls(**values)


def _convert(type_name: str, value: str, line: int):
    try:
        if type_name == "int":
            return int(value)
        if type_name == "float":
            return float(value)
        if type_name == "bool":
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(value)
            return value.lower() in ("true", "1")
        return value
    except ValueError:
        raise SimulationError(f"config line {line}: bad {type_name} value {value!r}") from None


__all__ = [
    "AnalyzerSetting", "CANONICAL_ANGLES", "CANONICAL_SETTINGS", "ClockModel", "DEFAULT_VISIBILITY",
    "GroundTruth", "PlanError", "RunConfig", "SimulatedRun", "SimulationError", "SourceParams",
    "apply_clock", "default_clocks", "drop_triggers", "read_ground_truth", "sample_outcomes",
    "simulate_run", "trigger_train", "tune_source", "write_ground_truth", "write_tag_map",
]
