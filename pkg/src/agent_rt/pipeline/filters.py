from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .samples import FrameActionPair

DEFAULT_KEEP_RATIO = 0.05
JITTER_MIN_FRAMES = 10
JITTER_MAX_NET = 10


@dataclass
class FilterReport:
    active_in: int = 0
    active_out: int = 0
    idle_in: int = 0
    idle_out: int = 0
    jitter_dropped: int = 0
    # (run length, kept) per idle run
    idle_runs: list[tuple[int, int]] = field(default_factory=list)


def _sign(v: int) -> int:
    return (v > 0) - (v < 0)


def _jitter_candidate(p: FrameActionPair) -> bool:
    return p.mouse.dz == 0 and p.mouse.dx != 0 and all(len(c) == 0 for c in p.chunks)


def find_jitter_runs(pairs: Sequence[FrameActionPair], min_frames: int = JITTER_MIN_FRAMES,
                     max_net: int = JITTER_MAX_NET) -> list[tuple[int, int]]:
    """``[start, end)`` runs of keyless, sign-alternating horizontal mouse motion.

    A run qualifies when it spans at least ``min_frames`` frames and its net
    displacement stays under ``max_net`` units on both axes.
    """
    runs = []
    i = 0
    n = len(pairs)
    while i < n:
        if not _jitter_candidate(pairs[i]):
            i += 1
            continue
        j = i + 1
        while (j < n and _jitter_candidate(pairs[j])
               and _sign(pairs[j].mouse.dx) == -_sign(pairs[j - 1].mouse.dx)):
            j += 1
        if j - i >= min_frames:
            net_x = sum(p.mouse.dx for p in pairs[i:j])
            net_y = sum(p.mouse.dy for p in pairs[i:j])
            if abs(net_x) < max_net and abs(net_y) < max_net:
                runs.append((i, j))
        i = j
    return runs


def filter_idle(pairs: Sequence[FrameActionPair], keep_ratio: float = DEFAULT_KEEP_RATIO,
                jitter_min_frames: int = JITTER_MIN_FRAMES, jitter_max_net: int = JITTER_MAX_NET,
                seed: Optional[int] = None,
                report: Optional[FilterReport] = None) -> list[FrameActionPair]:
    """Thin idle frames and drop camera-jitter runs.

    Active frames are all kept. Within each run of consecutive idle frames the
    ``j``-th frame (1-based) is kept when ``floor(j * r)`` steps up, so a run of
    ``n`` keeps ``floor(n * r)`` frames; with ``r = 0.05`` that is every 20th.
    Passing ``seed`` switches to independent random keeps with probability
    ``r``.
    """
    if not 0 <= keep_ratio <= 1:
        raise ValueError("keep_ratio must be in [0, 1]")
    report = report if report is not None else FilterReport()
    ratio = Fraction(keep_ratio).limit_denominator(10 ** 6)
    rng = random.Random(seed) if seed is not None else None
    jitter = set()
    for a, b in find_jitter_runs(pairs, jitter_min_frames, jitter_max_net):
        jitter.update(range(a, b))
    report.jitter_dropped += len(jitter)

    kept = []
    run_len = run_kept = 0

    def close_run():
        nonlocal run_len, run_kept
        if run_len:
            report.idle_runs.append((run_len, run_kept))
        run_len = run_kept = 0

    for i, p in enumerate(pairs):
        if i in jitter:
            close_run()
            continue
        if not p.idle:
            close_run()
            report.active_in += 1
            report.active_out += 1
            kept.append(p)
            continue
        run_len += 1
        report.idle_in += 1
        if rng is not None:
            keep = rng.random() < keep_ratio
        else:
            keep = math.floor(run_len * ratio) > math.floor((run_len - 1) * ratio)
        if keep:
            run_kept += 1
            report.idle_out += 1
            kept.append(p)
    close_run()
    return kept
