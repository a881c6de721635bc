"""Coincidences by pulse number instead of by delay scan.

Each station finds the frequency step in its own trigger channel, numbers
every following pump pulse (pulse 0 is the first pulse after the step),
assigns each detection to the pulse whose on-window contains it, and
detections carrying the same pulse number at both stations are paired.
Nothing here compares the two stations' clocks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .postselect import CoincidenceSet
from .timetags import FrequencyPlan, TagStream

log = logging.getLogger(__name__)

CONFIRM_INTERVALS = 3
MAX_GAP_MULTIPLE = 4
FRACTION_LIMIT = 0.25
DEFAULT_GUARD_PS = 6_000
NO_PULSE = -1


class StepNotFoundError(ValueError):
    pass


class AmbiguousStepError(ValueError):
    pass


class NumberingError(ValueError):
    def __init__(self, message: str, trigger_index: int):
        super().__init__(f"trigger {trigger_index}: {message}")
        self.trigger_index = trigger_index


@dataclass(frozen=True)
class StepDetection:
    step_trigger_index: int
    step_local_time_ps: int
    confidence: int
    pulse_count_from_start: int

    def to_text(self) -> str:
        return (
            f"step_index={self.step_trigger_index}\n"
            f"step_local_time_ps={self.step_local_time_ps}\n"
            f"pulse_count_from_start={self.pulse_count_from_start}\n"
            f"confidence={self.confidence}\n"
        )


def _multiple_like(gaps: np.ndarray, period: float, tol: float) -> tuple[np.ndarray, np.ndarray]:
    m = np.rint(gaps / period)
    ok = (m >= 1) & (m <= MAX_GAP_MULTIPLE) & (np.abs(gaps - m * period) <= m * tol)
    return ok, m.astype(np.int64)


def _runs_before(flags: np.ndarray, k: int) -> np.ndarray:
    """result[i] is True when flags[i-k:i] are all True."""
    c = np.concatenate([[0], np.cumsum(flags)])
    i = np.arange(len(flags) + 1)
    out = np.zeros(len(flags) + 1, dtype=bool)
    have = i >= k
    out[have] = (c[i[have]] - c[i[have] - k]) == k
    return out


def detect_step(trigger_times, plan: FrequencyPlan, k: int = CONFIRM_INTERVALS) -> StepDetection:
    """Index of the first run-rate trigger.

    Trigger ``i`` is the step when the ``k`` gaps ending at ``i`` look like
    pre-run gaps and the ``k`` gaps starting at ``i`` look like run gaps.  A
    gap may span up to four periods (missed triggers); the tolerance is a
    quarter of the period difference per spanned period.
    """
    plan.check()
    t = np.asarray(trigger_times, dtype=np.int64)
    if len(t) < 2 * k + 1:
        raise StepNotFoundError(f"need at least {2 * k + 1} triggers, got {len(t)}")
    tol = abs(plan.pre_period_ps - plan.run_period_ps) / 4
    gaps = np.diff(t).astype(np.float64)
    pre_like, pre_m = _multiple_like(gaps, plan.pre_period_ps, tol)
    run_like, _ = _multiple_like(gaps, plan.run_period_ps, tol)
    # before[i]: gaps i-k..i-1 pre-like; after[i]: gaps i..i+k-1 run-like
    before = _runs_before(pre_like, k)
    after = _runs_before(run_like, k)[k:]
    n = min(len(before), len(after))
    cand = np.flatnonzero(before[:n] & after[:n])
    if len(cand) == 0:
        raise StepNotFoundError("no pre-run to run frequency step in the trigger channel")
    if len(cand) > 1:
        raise AmbiguousStepError(f"{len(cand)} step candidates at trigger indices {cand[:5].tolist()}")
    i = int(cand[0])
    run_len = np.argmin(np.append(run_like[i:], False))
    pre_rev = pre_like[:i][::-1]
    pre_len = np.argmin(np.append(pre_rev, False))
    count = int(pre_m[:i][pre_like[:i]].sum()) if pre_like[:i].all() else i
    return StepDetection(i, int(t[i]), int(min(run_len, pre_len)), count)


@dataclass(frozen=True, eq=False)
class PulseNumbering:
    """Pulse numbers for one station's triggers.

    ``assignment[i]`` is the pulse number of trigger ``i`` (negative before the
    step).  ``pulse_start_ps[k]`` is the local start of run pulse ``k``,
    synthesized from the period model where the trigger was not recorded.
    """

    step: StepDetection
    assignment: np.ndarray
    recovered: np.ndarray
    pulse_start_ps: np.ndarray
    period_model_ps: np.ndarray
    clock_scale: float

    @property
    def n_pulses(self) -> int:
        return len(self.pulse_start_ps)


def _number_pre(pre_gaps: np.ndarray, plan: FrequencyPlan) -> np.ndarray:
    m = np.maximum(np.rint(pre_gaps / plan.pre_period_ps), 1).astype(np.int64)
    before = np.cumsum(m[::-1])[::-1]
    return -before


def number_pulses(trigger_times, step: StepDetection, plan: FrequencyPlan) -> PulseNumbering:
    """Number every run pulse from the step onward.

    The gap between consecutive recorded triggers is converted to a count of
    periods through the integrated (possibly chirped) period model, scaled by
    the station clock rate estimated from the data.  A fractional count
    farther than 0.25 from an integer is refused rather than guessed.
    """
    plan.check()
    t = np.asarray(trigger_times, dtype=np.int64)
    s = step.step_trigger_index
    if not 0 < s < len(t):
        raise ValueError("step index outside the trigger sequence")
    tau = t[s:] - t[s]
    gaps = np.diff(tau).astype(np.float64)
    f_max = plan.freq_run_hz + (plan.chirp.depth_hz if plan.chirped else 0)
    n_table = int(tau[-1] * f_max * (1 + 2e-3) / 1e12) + 16
    table = plan.run_offsets(n_table)

    scale = 1.0
    k_prev = np.concatenate([[0], np.cumsum(np.rint(gaps / plan.run_period_ps).astype(np.int64))])[:-1]
    k_prev = np.clip(k_prev, 0, n_table - 1)
    for _ in range(4):
        base = table[k_prev].astype(np.float64)
        real = plan.run_phase(base + gaps / scale) - plan.run_phase(base)
        m = np.rint(real).astype(np.int64)
        frac = np.abs(real - m)
        bad = np.flatnonzero((frac > FRACTION_LIMIT) | (m < 1))
        if len(bad):
            j = int(bad[0])
            raise NumberingError(
                f"gap of {gaps[j]:.0f} ps is {real[j]:.3f} periods; drift too large or period model wrong",
                s + j + 1,
            )
        numbers = np.concatenate([[0], np.cumsum(m)])
        if numbers[-1] >= n_table:
            raise NumberingError("pulse count exceeds the period model table", len(t) - 1)
        new_scale = float(tau[-1] / table[numbers[-1]]) if numbers[-1] > 0 else 1.0
        new_prev = numbers[:-1]
        if np.array_equal(new_prev, k_prev) and abs(new_scale - scale) < 1e-12:
            break
        k_prev, scale = new_prev, new_scale

    n_total = int(numbers[-1]) + 1
    known = np.zeros(n_total, dtype=bool)
    known[numbers] = True
    model = table[:n_total].astype(np.float64)
    starts = np.rint(np.interp(model, model[numbers], tau.astype(np.float64))).astype(np.int64) + t[s]
    starts[numbers] = t[s:]
    assignment = np.concatenate([_number_pre(np.diff(t[: s + 1]).astype(np.float64), plan), numbers])
    period = np.diff(starts) if n_total > 1 else np.zeros(0, np.int64)
    return PulseNumbering(step, assignment, np.flatnonzero(~known), starts, period, scale)


@dataclass(frozen=True, eq=False)
class PulseAssignment:
    pulse_number: np.ndarray
    offset_ps: np.ndarray

    @property
    def assigned(self) -> np.ndarray:
        return self.pulse_number != NO_PULSE


def assign_pulses(detection_times, numbering: PulseNumbering, plan: FrequencyPlan,
                  guard_ps: int = DEFAULT_GUARD_PS) -> PulseAssignment:
    """Pulse number of each detection, or -1 outside every on-window.

    A window runs from ``guard_ps`` before the pulse start to ``guard_ps``
    after the end of the on-time, absorbing detector jitter on both edges.
    """
    t = np.asarray(detection_times, dtype=np.int64)
    starts = numbering.pulse_start_ps
    k = np.searchsorted(starts, t + guard_ps, side="right") - 1
    kc = np.clip(k, 0, None)
    off = t - starts[kc]
    ok = (k >= 0) & (off <= plan.pulse_on_ps + guard_ps)
    return PulseAssignment(np.where(ok, k, NO_PULSE), np.where(ok, off, 0))


def _first_per_pulse(a: PulseAssignment) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    idx = np.flatnonzero(a.assigned)
    pulses, first, counts = np.unique(a.pulse_number[idx], return_index=True, return_counts=True)
    return pulses, idx[first], counts


def match_by_pulse(assign_a: PulseAssignment, assign_b: PulseAssignment, t_w_ps: int | None = None) -> CoincidenceSet:
    """One pair per pulse number seen at both stations.

    Without ``t_w_ps`` the earliest detection on each side is paired.  With it,
    the pair is the first greedy (earliest-first) match whose in-pulse
    offsets differ by at most ``t_w_ps``; pulses with no such match give none.
    ``params`` reports how many matched pulses held several detections.
    """
    pa, first_a, count_a = _first_per_pulse(assign_a)
    pb, first_b, count_b = _first_per_pulse(assign_b)
    pulses, ia, ib = np.intersect1d(pa, pb, assume_unique=True, return_indices=True)
    index_a, index_b = first_a[ia], first_b[ib]
    multi_a, multi_b = count_a[ia] > 1, count_b[ib] > 1
    params = {"multi_a": int(multi_a.sum()), "multi_b": int(multi_b.sum())}
    if t_w_ps is not None:
        params["t_w_ps"] = int(t_w_ps)
        dt = assign_a.offset_ps[index_a] - assign_b.offset_ps[index_b]
        keep = np.abs(dt) <= t_w_ps
        crowded = np.flatnonzero(multi_a | multi_b)
        keep[crowded] = False
        extra = _match_crowded(assign_a, assign_b, pulses[crowded], t_w_ps)
        index_a = np.concatenate([index_a[keep], extra[0]])
        index_b = np.concatenate([index_b[keep], extra[1]])
        order = np.argsort(index_a, kind="stable")
        index_a, index_b = index_a[order], index_b[order]
    pulse = assign_a.pulse_number[index_a]
    dt = assign_a.offset_ps[index_a] - assign_b.offset_ps[index_b]
    return CoincidenceSet(index_a, index_b, dt, "pulsematch", pulse, params)


def _match_crowded(assign_a, assign_b, pulses, t_w):
    ia, ib = [], []
    idx_a = np.flatnonzero(assign_a.assigned)
    idx_b = np.flatnonzero(assign_b.assigned)
    num_a, num_b = assign_a.pulse_number[idx_a], assign_b.pulse_number[idx_b]
    lo_a, hi_a = np.searchsorted(num_a, pulses, "left"), np.searchsorted(num_a, pulses, "right")
    lo_b, hi_b = np.searchsorted(num_b, pulses, "left"), np.searchsorted(num_b, pulses, "right")
    off_a, off_b = assign_a.offset_ps, assign_b.offset_ps
    for la, ha, lb, hb in zip(lo_a.tolist(), hi_a.tolist(), lo_b.tolist(), hi_b.tolist()):
        cand_b = idx_b[lb:hb].tolist()
        hit = next(((i, j) for i in idx_a[la:ha].tolist() for j in cand_b if abs(off_a[i] - off_b[j]) <= t_w), None)
        if hit is not None:
            ia.append(hit[0])
            ib.append(hit[1])
    return np.array(ia, dtype=np.int64), np.array(ib, dtype=np.int64)


@dataclass(frozen=True)
class StartOffset:
    """Recording-start difference between the stations (positive: A started first).

    ``nominal_offset_ps`` multiplies the step pulse-count difference by the
    run period; ``measured_offset_ps`` uses the stations' local step times,
    which also accounts for pre-run pulses arriving at the pre-run rate.
    """

    pulse_count_difference: int
    nominal_offset_ps: int
    measured_offset_ps: int


def start_offset(step_a: StepDetection, step_b: StepDetection, plan: FrequencyPlan) -> StartOffset:
    diff = step_a.pulse_count_from_start - step_b.pulse_count_from_start
    return StartOffset(diff, diff * plan.run_period_ps, step_a.step_local_time_ps - step_b.step_local_time_ps)


@dataclass(frozen=True, eq=False)
class IntraPulseHistogram:
    bin_ps: int
    centers_ps: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> bytes:
        rows = "".join(f"{c},{n}\n" for c, n in zip(self.centers_ps.tolist(), self.counts.tolist()))
        return ("dt_ps,count\n" + rows).encode()

    def rms_ps(self) -> float:
        total = self.counts.sum()
        if total == 0:
            return 0.0
        return float(np.sqrt((self.counts * self.centers_ps.astype(float) ** 2).sum() / total))


def intra_pulse_histogram(pairs: CoincidenceSet, bin_ps: int = 2_000) -> IntraPulseHistogram:
    """Histogram of in-pulse time differences, bins centred on multiples of ``bin_ps``."""
    if pairs.pulse_number is None:
        raise ValueError("pairs carry no pulse numbers")
    if len(pairs) == 0:
        return IntraPulseHistogram(bin_ps, np.zeros(1, np.int64), np.zeros(1, np.int64))
    b = np.floor_divide(pairs.dt_ps + bin_ps // 2, bin_ps)
    lo = int(b.min())
    counts = np.bincount(b - lo)
    return IntraPulseHistogram(bin_ps, (np.arange(len(counts)) + lo) * bin_ps, counts)


@dataclass(frozen=True, eq=False)
class PulseMatchResult:
    step_a: StepDetection
    step_b: StepDetection
    numbering_a: PulseNumbering
    numbering_b: PulseNumbering
    assign_a: PulseAssignment
    assign_b: PulseAssignment
    pairs: CoincidenceSet
    offset: StartOffset


def pulse_match_streams(a: TagStream, b: TagStream, t_w_ps: int | None = None,
                        guard_ps: int = DEFAULT_GUARD_PS) -> PulseMatchResult:
    """Step detection, numbering, assignment and matching for a stream pair."""
    plan = a.plan
    if b.plan != plan:
        raise ValueError("the two streams were recorded under different frequency plans")
    out = {}
    for name, s in (("a", a), ("b", b)):
        trig = s.trigger_times()
        step = detect_step(trig, plan)
        numbering = number_pulses(trig, step, plan)
        det, _ = s.detections()
        out[name] = (step, numbering, assign_pulses(det, numbering, plan, guard_ps))
    pairs = match_by_pulse(out["a"][2], out["b"][2], t_w_ps)
    offset = start_offset(out["a"][0], out["b"][0], plan)
    log.info("pulse match: %d pairs, start offset %d ps", len(pairs), offset.measured_offset_ps)
    return PulseMatchResult(out["a"][0], out["b"][0], out["a"][1], out["b"][1], out["a"][2], out["b"][2], pairs, offset)
