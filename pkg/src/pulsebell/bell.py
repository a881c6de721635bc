"""Correlations, the CHSH statistic and the two-method comparison."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .postselect import CoincidenceSet
from .sim import AnalyzerSetting

CHSH_CONVENTION = "S = E(a,b) - E(a,b') + E(a',b) + E(a',b')"
MANIFEST_COLUMNS = ("alpha_deg", "beta_deg", "file_a", "file_b")


class Estimate(NamedTuple):
    value: float
    sigma: float

    def __str__(self) -> str:
        return f"{self.value:.4f} +/- {self.sigma:.4f}"


@dataclass(frozen=True)
class OutcomeCounts:
    setting: AnalyzerSetting
    n11: int = 0
    n10: int = 0
    n01: int = 0
    n00: int = 0

    def __post_init__(self) -> None:
        if min(self.n11, self.n10, self.n01, self.n00) < 0:
            raise ValueError("outcome counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n11 + self.n10 + self.n01 + self.n00

    def __add__(self, other: OutcomeCounts) -> OutcomeCounts:
        if other.setting != self.setting:
            raise ValueError("cannot add counts from different settings")
        return OutcomeCounts(self.setting, self.n11 + other.n11, self.n10 + other.n10,
                             self.n01 + other.n01, self.n00 + other.n00)

    @classmethod
    def from_outcomes(cls, setting: AnalyzerSetting, out_a, out_b) -> OutcomeCounts:
        a = np.asarray(out_a, dtype=np.int64)
        b = np.asarray(out_b, dtype=np.int64)
        if a.shape != b.shape:
            raise ValueError("outcome arrays differ in length")
        if np.any((a < 0) | (a > 1) | (b < 0) | (b > 1)):
            raise ValueError("outcomes must be 0 or 1")
        n = np.bincount(2 * a + b, minlength=4)
        return cls(setting, int(n[3]), int(n[2]), int(n[1]), int(n[0]))


def counts_for_pairs(pairs: CoincidenceSet, outcomes_a, outcomes_b, setting: AnalyzerSetting) -> OutcomeCounts:
    """Joint outcome counts of a coincidence set; outcomes are indexed like the detections."""
    oa = np.asarray(outcomes_a)[pairs.index_a]
    ob = np.asarray(outcomes_b)[pairs.index_b]
    return OutcomeCounts.from_outcomes(setting, oa, ob)


def correlation_E(counts: OutcomeCounts) -> Estimate:
    n = counts.total
    if n == 0:
        raise ValueError(f"no coincidences at setting {counts.setting}")
    e = (counts.n11 + counts.n00 - counts.n10 - counts.n01) / n
    return Estimate(e, math.sqrt(max(0.0, 1.0 - e * e) / n))


def chsh_S(e_ab: Estimate, e_abp: Estimate, e_apb: Estimate, e_apbp: Estimate) -> Estimate:
    s = e_ab.value - e_abp.value + e_apb.value + e_apbp.value
    return Estimate(s, math.sqrt(sum(e.sigma ** 2 for e in (e_ab, e_abp, e_apb, e_apbp))))


def expected_E(setting: AnalyzerSetting, visibility: float) -> float:
    if not 0.0 <= visibility <= 1.0:
        raise ValueError("visibility must lie in [0, 1]")
    return visibility * math.cos(2.0 * math.radians(setting.alpha_deg - setting.beta_deg))


def accidental_estimate(n_pulses: int, p_a: float, p_b: float) -> float:
    if not (0.0 <= p_a <= 1.0 and 0.0 <= p_b <= 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return n_pulses * p_a * p_b


@dataclass(frozen=True)
class ChshResult:
    settings_quad: tuple[float, float, float, float]
    e_values: tuple[Estimate, Estimate, Estimate, Estimate]
    s: float
    sigma_s: float
    method: str
    counts: tuple[OutcomeCounts, ...] = ()

    def to_text(self) -> str:
        a, ap, b, bp = self.settings_quad
        labels = (f"E(a,b)   [{a:g},{b:g}]", f"E(a,b')  [{a:g},{bp:g}]",
                  f"E(a',b)  [{ap:g},{b:g}]", f"E(a',b') [{ap:g},{bp:g}]")
        lines = [f"# method: {self.method}", f"# convention: {CHSH_CONVENTION}"]
        for label, e, c in zip(labels, self.e_values, self.counts or (None,) * 4):
            n = f"  N={c.total}" if c is not None else ""
            lines.append(f"{label:<24}{e}{n}")
        lines.append(f"{'S':<24}{self.s:.4f} +/- {self.sigma_s:.4f}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["term", "alpha_deg", "beta_deg", "n11", "n10", "n01", "n00", "e", "sigma"])
        a, ap, b, bp = self.settings_quad
        terms = (("ab", a, b), ("ab'", a, bp), ("a'b", ap, b), ("a'b'", ap, bp))
        for (name, al, be), e, c in zip(terms, self.e_values, self.counts or (None,) * 4):
            nums = [c.n11, c.n10, c.n01, c.n00] if c is not None else ["", "", "", ""]
            w.writerow([name, f"{al:g}", f"{be:g}", *nums, f"{e.value:.6f}", f"{e.sigma:.6f}"])
        w.writerow(["S", "", "", "", "", "", "", f"{self.s:.6f}", f"{self.sigma_s:.6f}"])
        return buf.getvalue()


def chsh_from_counts(counts: Iterable[OutcomeCounts], method: str = "") -> ChshResult:
    """CHSH from counts at four settings, summing repeats of a setting.

    The smaller of the two distinct alphas is ``a`` and the larger ``a'``;
    likewise for ``b`` and ``b'``.
    """
    merged: dict[AnalyzerSetting, OutcomeCounts] = {}
    for c in counts:
        merged[c.setting] = merged[c.setting] + c if c.setting in merged else c
    alphas = sorted({s.alpha_deg for s in merged})
    betas = sorted({s.beta_deg for s in merged})
    if len(alphas) != 2 or len(betas) != 2 or len(merged) != 4:
        raise ValueError(f"need two alphas and two betas in four combinations, got {list(merged)}")
    a, ap = alphas
    b, bp = betas
    order = [AnalyzerSetting(x, y) for x, y in ((a, b), (a, bp), (ap, b), (ap, bp))]
    missing = [s for s in order if s not in merged]
    if missing:
        raise ValueError(f"missing settings {missing}")
    quad = [merged[s] for s in order]
    es = tuple(correlation_E(c) for c in quad)
    s = chsh_S(*es)
    return ChshResult((a, ap, b, bp), es, s.value, s.sigma, method, tuple(quad))


@dataclass(frozen=True)
class ManifestEntry:
    setting: AnalyzerSetting
    file_a: Path
    file_b: Path


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    """Rows ``alpha_deg,beta_deg,file_a,file_b``; relative file paths resolve against the manifest."""
    path = Path(path)
    base = path.parent
    rows = list(csv.reader(io.StringIO(path.read_text())))
    rows = [r for r in rows if r and not r[0].startswith("#")]
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_COLUMNS:
        raise ValueError(f"{path}: header must be {','.join(MANIFEST_COLUMNS)}")
    entries = []
    for n, r in enumerate(rows[1:], start=2):
        if len(r) != 4:
            raise ValueError(f"{path}: row {n} has {len(r)} fields")
        try:
            setting = AnalyzerSetting(float(r[0]), float(r[1]))
        except ValueError as exc:
            raise ValueError(f"{path}: row {n}: {exc}") from None
        entries.append(ManifestEntry(setting, base / r[2].strip(), base / r[3].strip()))
    per_setting: dict[AnalyzerSetting, int] = {}
    for e in entries:
        per_setting[e.setting] = per_setting.get(e.setting, 0) + 1
    if len(entries) not in (4, 16) or len(per_setting) != 4 or len(set(per_setting.values())) != 1:
        raise ValueError(f"{path}: expected 4 or 16 rows covering four settings evenly")
    return entries


@dataclass(frozen=True)
class MethodSummary:
    """One method's output over all runs.

    ``pair_keys`` identifies each pair as ``(run, index_a, index_b)``;
    ``true_pairs`` counts pairs confirmed by ground truth, when known.
    """

    method: str
    pair_keys: frozenset
    chsh: ChshResult | None = None
    true_pairs: int | None = None

    @property
    def n_c(self) -> int:
        return len(self.pair_keys)


@dataclass(frozen=True)
class ComparisonReport:
    post: MethodSummary
    pulse: MethodSummary
    truth_total: int | None
    overlap: float
    jaccard: float

    def efficiency(self, m: MethodSummary) -> float | None:
        if self.truth_total is None or m.true_pairs is None or self.truth_total == 0:
            return None
        return m.true_pairs / self.truth_total

    def _rows(self) -> list[tuple[str, str, str]]:
        def s_of(m: MethodSummary) -> str:
            return f"{m.chsh.s:.4f} +/- {m.chsh.sigma_s:.4f}" if m.chsh else "n/a"

        def eff(m: MethodSummary) -> str:
            e = self.efficiency(m)
            return "n/a" if e is None else f"{100 * e:.2f}%"

        return [
            ("quantity", self.post.method, self.pulse.method),
            ("N_c", str(self.post.n_c), str(self.pulse.n_c)),
            ("S", s_of(self.post), s_of(self.pulse)),
            ("efficiency", eff(self.post), eff(self.pulse)),
        ]

    def to_text(self) -> str:
        rows = self._rows()
        w0 = max(len(r[0]) for r in rows) + 2
        w1 = max(len(r[1]) for r in rows) + 2
        lines = [f"# convention: {CHSH_CONVENTION}"]
        lines += [f"{r[0]:<{w0}}{r[1]:<{w1}}{r[2]}" for r in rows]
        if self.truth_total is not None:
            lines.append(f"ground-truth detected pairs: {self.truth_total}")
        lines.append(f"overlap |post & pulse| / min: {100 * self.overlap:.2f}%  (jaccard {100 * self.jaccard:.2f}%)")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "n_c", "s", "sigma_s", "efficiency"])
        for m in (self.post, self.pulse):
            e = self.efficiency(m)
            w.writerow([m.method, m.n_c, f"{m.chsh.s:.6f}" if m.chsh else "", f"{m.chsh.sigma_s:.6f}" if m.chsh else "",
                        "" if e is None else f"{e:.6f}"])
        w.writerow(["overlap", f"{self.overlap:.6f}", "", "", ""])
        return buf.getvalue()


def compare_report(post: MethodSummary, pulse: MethodSummary, truth_total: int | None = None) -> ComparisonReport:
    common = len(post.pair_keys & pulse.pair_keys)
    smaller = min(post.n_c, pulse.n_c)
    union = len(post.pair_keys | pulse.pair_keys)
    overlap = common / smaller if smaller else 1.0
    jaccard = common / union if union else 1.0
    return ComparisonReport(post, pulse, truth_total, overlap, jaccard)


def pair_keys(run: str, pairs: CoincidenceSet) -> set[tuple[str, int, int]]:
    return {(run, i, j) for i, j in zip(pairs.index_a.tolist(), pairs.index_b.tolist())}


def combine_summaries(method: str, runs: Sequence[tuple[str, CoincidenceSet, OutcomeCounts]],
                      true_pairs: int | None = None) -> MethodSummary:
    keys: set = set()
    for run, pairs, _ in runs:
        keys |= pair_keys(run, pairs)
    chsh = chsh_from_counts([c for _, _, c in runs], method)
    return MethodSummary(method, frozenset(keys), chsh, true_pairs)
