"""Classical post-selection: windowed coincidence counting versus delay.

Convention: the delay ``d`` is added to B's times, so a and b match when
``|t_a - (t_b + d)| <= t_w``.  Matching is one-to-one and greedy in time
order: each A detection, earliest first, takes the earliest B detection
still free inside its window.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


class UnsortedInputError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CoincidenceSet:
    """Matched A/B detection pairs.

    Indices refer to the detection arrays given to the matcher.  ``dt_ps`` is
    ``t_a - t_b`` for post-selection and the difference of in-pulse offsets
    for pulse matching.
    """

    index_a: np.ndarray
    index_b: np.ndarray
    dt_ps: np.ndarray
    method: str
    pulse_number: np.ndarray | None = None
    params: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.index_a)

    def keys(self) -> set[tuple[int, int]]:
        return set(zip(self.index_a.tolist(), self.index_b.tolist()))

    def to_csv(self) -> bytes:
        head = "".join(f"# {k}: {v}\n" for k, v in [("method", self.method), *sorted(self.params.items())])
        cols = [self.index_a, self.index_b, self.dt_ps]
        names = "index_a,index_b,dt_ps"
        if self.pulse_number is not None:
            cols.append(self.pulse_number)
            names += ",pulse_number"
        rows = np.column_stack(cols).tolist() if len(self) else []
        body = "".join(",".join(map(str, r)) + "\n" for r in rows)
        return (head + names + "\n" + body).encode()

    @classmethod
    def from_csv(cls, data: bytes) -> "CoincidenceSet":
        meta: dict[str, str] = {}
        rows = []
        names = None
        for line in data.decode().splitlines():
            if line.startswith("# "):
                k, _, v = line[2:].partition(": ")
                meta[k] = v
            elif names is None:
                names = line.split(",")
            elif line:
                rows.append([int(x) for x in line.split(",")])
        if names is None or names[:3] != ["index_a", "index_b", "dt_ps"]:
            raise ValueError("not a coincidence CSV")
        arr = np.array(rows, dtype=np.int64).reshape(-1, len(names))
        method = meta.pop("method", "unknown")
        pulse = arr[:, 3] if len(names) > 3 else None
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], method, pulse, meta)


def _check_sorted(x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    bad = np.flatnonzero(np.diff(x) < 0)
    if len(bad):
        raise UnsortedInputError(f"{name} times not sorted at index {bad[0] + 1}")
    return x


def _greedy(a: np.ndarray, b: np.ndarray, d: int, t_w: int) -> tuple[np.ndarray, np.ndarray]:
    lo = np.searchsorted(b, a - d - t_w, side="left")
    hi = np.searchsorted(b, a - d + t_w, side="right")
    cand = np.flatnonzero(hi > lo)
    lo_c, hi_c = lo[cand], hi[cand]
    # common case: every window holds one B and no B is shared
    if np.all(hi_c - lo_c == 1) and np.all(np.diff(lo_c) > 0):
        return cand, lo_c
    ia, jb = [], []
    j = 0
    for i, l, h in zip(cand.tolist(), lo_c.tolist(), hi_c.tolist()):
        j = max(j, l)
        if j < h:
            ia.append(i)
            jb.append(j)
            j += 1
    return np.array(ia, dtype=np.int64), np.array(jb, dtype=np.int64)


def coincidence_count(a_times, b_times, d_ps: int, t_w_ps: int) -> int:
    """Number of one-to-one greedy matches with ``|t_a - (t_b + d)| <= t_w``."""
    a = _check_sorted(a_times, "A")
    b = _check_sorted(b_times, "B")
    return len(_greedy(a, b, int(d_ps), int(t_w_ps))[0])


def extract_pairs(a_times, b_times, d_ps: int, t_w_ps: int) -> CoincidenceSet:
    a = _check_sorted(a_times, "A")
    b = _check_sorted(b_times, "B")
    ia, jb = _greedy(a, b, int(d_ps), int(t_w_ps))
    return CoincidenceSet(ia, jb, a[ia] - b[jb], "postselect", params={"d_ps": int(d_ps), "t_w_ps": int(t_w_ps)})


@dataclass(frozen=True, eq=False)
class DelayHistogram:
    d_start_ps: int
    d_step_ps: int
    counts: np.ndarray
    t_w_ps: int

    @property
    def delays(self) -> np.ndarray:
        return self.d_start_ps + self.d_step_ps * np.arange(len(self.counts), dtype=np.int64)

    def to_csv(self) -> bytes:
        rows = "".join(f"{d},{c}\n" for d, c in zip(self.delays.tolist(), self.counts.tolist()))
        return f"# t_w_ps: {self.t_w_ps}\nd_ps,n_c\n{rows}".encode()

    @classmethod
    def from_csv(cls, data: bytes) -> "DelayHistogram":
        lines = data.decode().splitlines()
        if not lines[0].startswith("# t_w_ps: ") or lines[1] != "d_ps,n_c":
            raise ValueError("not a delay histogram CSV")
        t_w = int(lines[0].split(": ")[1])
        d, c = zip(*(map(int, ln.split(",")) for ln in lines[2:] if ln)) if len(lines) > 2 else ((), ())
        d = np.array(d, dtype=np.int64)
        step = int(d[1] - d[0]) if len(d) > 1 else 1
        return cls(int(d[0]) if len(d) else 0, step, np.array(c, dtype=np.int64), t_w)


def _neighbour_within(x: np.ndarray, gap: int) -> np.ndarray:
    close = np.diff(x) <= gap
    flag = np.zeros(len(x), dtype=bool)
    flag[:-1] |= close
    flag[1:] |= close
    return flag


def _ceil_div(x: np.ndarray, s: int) -> np.ndarray:
    return -((-x) // s)


def delay_histogram(a_times, b_times, d_range: tuple[int, int], d_step: int, t_w: int,
                    max_edges: int = 4_000_000) -> DelayHistogram:
    """Coincidence count at every delay ``d_min, d_min + step, ... <= d_max``.

    Equal, point for point, to calling :func:`coincidence_count` on the grid.
    Candidate pairs are enumerated once.  A pair whose two detections have no
    same-stream neighbour within ``2 t_w`` can never compete with another
    pair, so it adds one count to every grid point whose window covers it;
    only grid points where competing pairs coexist run the greedy matcher.
    """
    d_min, d_max = int(d_range[0]), int(d_range[1])
    if d_step <= 0:
        raise ValueError("d_step must be positive")
    if d_max < d_min:
        raise ValueError("empty delay range")
    if t_w < 0:
        raise ValueError("t_w must be non-negative")
    a = _check_sorted(a_times, "A")
    b = _check_sorted(b_times, "B")
    n_grid = (d_max - d_min) // d_step + 1
    d_last = d_min + (n_grid - 1) * d_step
    counts = np.zeros(n_grid + 1, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return DelayHistogram(d_min, d_step, counts[:n_grid], t_w)

    flag_a = _neighbour_within(a, 2 * t_w)
    flag_b = _neighbour_within(b, 2 * t_w)
    lo_all = np.searchsorted(b, a - d_last - t_w, side="left")
    hi_all = np.searchsorted(b, a - d_min + t_w, side="right")
    n_edges = hi_all - lo_all
    cum = np.concatenate([[0], np.cumsum(n_edges)])
    cuts = np.searchsorted(cum, np.arange(0, cum[-1] + max_edges, max_edges), side="left")
    cuts = np.unique(np.clip(cuts, 0, len(a)))
    if cuts[-1] != len(a):
        cuts = np.append(cuts, len(a))
    contested = []
    for i0, i1 in zip(cuts[:-1].tolist(), cuts[1:].tolist()):
        n = n_edges[i0:i1]
        total = int(n.sum())
        if total == 0:
            continue
        ii = np.repeat(np.arange(i0, i1), n)
        start = np.repeat(cum[i0:i1] - cum[i0], n)
        jj = lo_all[ii] + (np.arange(total) - start)
        delta = a[ii] - b[jj]
        k_lo = np.maximum(_ceil_div(delta - t_w - d_min, d_step), 0)
        k_hi = np.minimum((delta + t_w - d_min) // d_step, n_grid - 1)
        ok = k_lo <= k_hi
        flagged = ok & (flag_a[ii] | flag_b[jj])
        free = ok & ~flagged
        counts += np.bincount(k_lo[free], minlength=n_grid + 1)[: n_grid + 1]
        counts -= np.bincount(k_hi[free] + 1, minlength=n_grid + 1)[: n_grid + 1]
        if flagged.any():
            contested.append((ii[flagged], jj[flagged], k_lo[flagged], k_hi[flagged]))
    counts = np.cumsum(counts)[:n_grid]

    if contested:
        ii, jj, k_lo, k_hi = (np.concatenate(x) for x in zip(*contested))
        span = k_hi - k_lo + 1
        kk = np.repeat(k_lo, span) + (np.arange(span.sum()) - np.repeat(np.cumsum(span) - span, span))
        ii = np.repeat(ii, span)
        jj = np.repeat(jj, span)
        counts += _contested_counts(kk, ii, jj, n_grid)
    return DelayHistogram(d_min, d_step, counts, t_w)


def _contested_counts(kk: np.ndarray, ii: np.ndarray, jj: np.ndarray, n_grid: int) -> np.ndarray:
    out = np.zeros(n_grid, dtype=np.int64)
    order = np.lexsort((jj, ii, kk))
    kk, ii, jj = kk[order], ii[order], jj[order]
    same_k = np.diff(kk) == 0
    dup = np.zeros(len(kk), dtype=bool)
    dup[1:] |= same_k & (np.diff(ii) == 0)
    order_j = np.lexsort((ii, jj, kk))
    dup_j = np.zeros(len(kk), dtype=bool)
    dup_j[1:] = (np.diff(kk[order_j]) == 0) & (np.diff(jj[order_j]) == 0)
    bad_k = np.union1d(kk[dup], kk[order_j][dup_j])
    simple = ~np.isin(kk, bad_k)
    out += np.bincount(kk[simple], minlength=n_grid)
    if len(bad_k):
        sel = np.flatnonzero(~simple)
        starts = np.flatnonzero(np.diff(kk[sel], prepend=-1) != 0)
        ends = np.append(starts[1:], len(sel))
        ks, is_, js = kk[sel].tolist(), ii[sel].tolist(), jj[sel].tolist()
        for s, e in zip(starts.tolist(), ends.tolist()):
            used: set[int] = set()
            matched = 0
            cur, taken = -1, False
            for i, j in zip(is_[s:e], js[s:e]):
                if i != cur:
                    cur, taken = i, False
                if not taken and j not in used:
                    used.add(j)
                    taken = True
                    matched += 1
            out[ks[s]] += matched
    return out


@dataclass(frozen=True)
class Peak:
    d_peak_ps: int
    count: int
    width_ps: int
    prominence: float
    secondary_peaks: tuple[tuple[int, int], ...] = ()


def find_peak(h: DelayHistogram) -> Peak | None:
    """Main peak of a delay histogram, or None when every count is zero.

    Ties go to the smallest ``|d|`` and then the smallest ``d``.  Width is
    the extent of the contiguous region at or above half the peak.
    Prominence is peak / median (infinite for a zero median).  Secondary
    peaks are local maxima above half the peak outside that region.
    """
    c = np.asarray(h.counts)
    if len(c) == 0:
        raise ValueError("empty histogram")
    top = int(c.max())
    if top == 0:
        return None
    d = h.delays
    cand = np.flatnonzero(c == top)
    k = int(cand[np.lexsort((d[cand], np.abs(d[cand])))[0]])
    half = top / 2
    left = k
    while left > 0 and c[left - 1] >= half:
        left -= 1
    right = k
    while right < len(c) - 1 and c[right + 1] >= half:
        right += 1
    med = float(np.median(c))
    prominence = top / med if med > 0 else float("inf")
    padded = np.concatenate([[-1], c, [-1]])
    is_max = (padded[1:-1] > padded[:-2]) & (padded[1:-1] >= padded[2:]) & (c > half)
    outside = np.ones(len(c), dtype=bool)
    outside[left: right + 1] = False
    sec = np.flatnonzero(is_max & outside)
    return Peak(
        int(d[k]), top, (right - left + 1) * h.d_step_ps, prominence,
        tuple((int(d[i]), int(c[i])) for i in sec),
    )


@dataclass(frozen=True)
class PostselectStage:
    t_w_ps: int
    d_range_ps: int
    d_step_ps: int


@dataclass(frozen=True)
class PostselectSchedule:
    """Stages of shrinking windows.  Each stage scans ``center +- d_range``."""

    stages: tuple[PostselectStage, ...]
    min_prominence: float = 5.0
    min_peak_counts: int = 50
    center_ps: int = 0

    def __post_init__(self) -> None:
        if not self.stages:
            raise ValueError("schedule needs at least one stage")
        for s in self.stages:
            if s.d_step_ps <= 0 or s.d_range_ps < 0 or s.t_w_ps < 0:
                raise ValueError(f"invalid stage {s}")
            if s.d_step_ps > s.t_w_ps:
                raise ValueError(f"stage step {s.d_step_ps} exceeds its window {s.t_w_ps}")
        tws = [s.t_w_ps for s in self.stages]
        if any(x <= y for x, y in zip(tws, tws[1:])):
            raise ValueError("t_w must strictly decrease across stages")

    @classmethod
    def from_text(cls, text: str) -> "PostselectSchedule":
        """Parse ``t_w_ps,d_range_ps,d_step_ps`` rows with optional ``# key: value`` lines."""
        opts: dict[str, float] = {}
        stages = []
        for n, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                key = key.strip()
                if key not in ("min_prominence", "min_peak_counts", "center_ps"):
                    raise ValueError(f"schedule line {n}: unknown option {key!r}")
                opts[key] = float(val)
                continue
            if line == "t_w_ps,d_range_ps,d_step_ps":
                continue
            try:
                stages.append(PostselectStage(*(int(x) for x in line.split(","))))
            except (TypeError, ValueError):
                raise ValueError(f"schedule line {n}: malformed stage {line!r}") from None
        return cls(
            tuple(stages),
            opts.get("min_prominence", 5.0),
            int(opts.get("min_peak_counts", 50)),
            int(opts.get("center_ps", 0)),
        )


def default_schedule() -> PostselectSchedule:
    """100 ns window over +-15 ms, then 2 ns window over +-200 ns."""
    return PostselectSchedule(
        (PostselectStage(100_000, 15_000_000_000, 100_000), PostselectStage(2_000, 200_000, 2_000)),
    )


@dataclass(frozen=True, eq=False)
class PostselectResult:
    """Outcome of a staged scan.

    When a later stage fails, ``pairs`` holds the coincidences of the last
    stage that converged (``d_final_ps``, ``t_w_final_ps``) and ``converged``
    stays False.
    """

    converged: bool
    histograms: tuple[DelayHistogram, ...]
    peaks: tuple[Peak | None, ...]
    d_final_ps: int | None = None
    t_w_final_ps: int | None = None
    pairs: CoincidenceSet | None = None
    failed_stage: int | None = None
    reason: str = ""


def iterate_postselect(a_times, b_times, schedule: PostselectSchedule) -> PostselectResult:
    """Run the stages in order, recentring each scan on the previous peak."""
    a = _check_sorted(a_times, "A")
    b = _check_sorted(b_times, "B")
    center = schedule.center_ps
    hists: list[DelayHistogram] = []
    peaks: list[Peak | None] = []
    for n, stage in enumerate(schedule.stages):
        h = delay_histogram(a, b, (center - stage.d_range_ps, center + stage.d_range_ps), stage.d_step_ps, stage.t_w_ps)
        p = find_peak(h)
        hists.append(h)
        peaks.append(p)
        reason = ""
        if p is None:
            reason = "no coincidences at any delay"
        elif p.prominence < schedule.min_prominence:
            reason = f"peak prominence {p.prominence:.2f} below {schedule.min_prominence}"
        elif p.count < schedule.min_peak_counts:
            reason = f"peak count {p.count} below {schedule.min_peak_counts}"
        if reason:
            log.info("post-selection stage %d (t_w=%d ps) did not converge: %s", n, stage.t_w_ps, reason)
            if n == 0:
                return PostselectResult(False, tuple(hists), tuple(peaks), failed_stage=n, reason=reason)
            # fall back to the last stage that did converge
            t_w = schedule.stages[n - 1].t_w_ps
            pairs = extract_pairs(a, b, center, t_w)
            return PostselectResult(False, tuple(hists), tuple(peaks), center, t_w, pairs, n, reason)
        log.info("stage %d: t_w=%d ps peak d=%d ps N_c=%d prominence=%.1f", n, stage.t_w_ps, p.d_peak_ps, p.count, p.prominence)
        center = p.d_peak_ps
    t_w = schedule.stages[-1].t_w_ps
    pairs = extract_pairs(a, b, center, t_w)
    return PostselectResult(True, tuple(hists), tuple(peaks), center, t_w, pairs)
