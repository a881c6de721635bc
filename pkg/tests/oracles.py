"""Slow, obviously-correct reference implementations used only by tests."""

from __future__ import annotations

import math


def greedy_match_bruteforce(a: list[int], b: list[int], d: int, t_w: int) -> list[tuple[int, int]]:
    """Each A in time order takes the earliest unused B with |a - (b + d)| <= t_w."""
    used = [False] * len(b)
    pairs = []
    for i, ta in enumerate(a):
        for j, tb in enumerate(b):
            if not used[j] and abs(ta - (tb + d)) <= t_w:
                used[j] = True
                pairs.append((i, j))
                break
    return pairs


def sequential_chirp_gaps(f_run: float, depth: float, period_s: float, n: int) -> list[int]:
    """Step pulse by pulse: each gap is 1/f evaluated at the earlier pulse."""
    t = 0.0
    gaps = []
    w = 2 * math.pi / period_s
    for _ in range(n):
        f = f_run + depth * math.sin(w * t)
        g = round(1e12 / f)
        gaps.append(g)
        t += g * 1e-12
    return gaps


def match_by_pulse_reference(pulses_a: list[int], pulses_b: list[int]) -> dict[int, tuple[int, int]]:
    """Pulse number -> (first A index, first B index) over pulses seen on both sides."""
    first_a: dict[int, int] = {}
    first_b: dict[int, int] = {}
    for i, p in enumerate(pulses_a):
        if p >= 0:
            first_a.setdefault(p, i)
    for j, p in enumerate(pulses_b):
        if p >= 0:
            first_b.setdefault(p, j)
    return {p: (first_a[p], first_b[p]) for p in first_a if p in first_b}


def chsh_reference(e: dict[tuple[float, float], float], a: float, ap: float, b: float, bp: float) -> float:
    return e[(a, b)] - e[(a, bp)] + e[(ap, b)] + e[(ap, bp)]
