from __future__ import annotations

import bisect
import logging
from typing import Optional

from ..grammar import MOUSE_LIMIT, SCROLL_LIMIT, MouseDelta
from .logs import Diagnostics, RawInputLog

GUI = "gui"
OVERWORLD = "overworld"
X_UNIT_PX = 5
Y_UNIT_PX = 4


def _position_at(raw: RawInputLog, times: list[float], t: float):
    i = bisect.bisect_right(times, t)
    return raw.abs_positions[i - 1] if i else None


def mouse_per_frame(raw: RawInputLog, scene: str, window: tuple[float, float],
                    diagnostics: Optional[Diagnostics] = None) -> tuple[int, int, int]:
    """Raw ``(dx, dy, wheel)`` for the frame covering ``[start, end)``.

    Overworld frames sum the relative polls in the window. GUI frames take the
    difference of absolute cursor positions at the window edges, falling back
    to the relative sum when there are no absolute samples. Wheel steps are
    always summed from the polls.
    """
    start, end = window
    polls = [p for p in raw.rel_polls if start <= p.t < end]
    wheel = sum(p.wheel for p in polls)
    rel = (sum(p.dx for p in polls), sum(p.dy for p in polls))
    if scene == OVERWORLD:
        return rel[0], rel[1], wheel
    if scene != GUI:
        raise ValueError(f"unknown scene {scene!r}")
    times = [a.t for a in raw.abs_positions]
    p_end = _position_at(raw, times, end)
    p_start = _position_at(raw, times, start)
    if p_start is None and p_end is not None and p_end.t >= start:
        # No sample before the window: the first one inside it is the start.
        p_start = raw.abs_positions[bisect.bisect_left(times, start)]
    if p_start is None or p_end is None:
        if diagnostics is not None:
            diagnostics.add("no-abs-sample", "gui frame without cursor samples, using relative sum",
                            start, level=logging.WARNING)
        return rel[0], rel[1], wheel
    return p_end.x - p_start.x, p_end.y - p_start.y, wheel


def _round_half_away(value: int, unit: int) -> int:
    q = (2 * abs(value) + unit) // (2 * unit)
    return -q if value < 0 else q


def discretize_mouse(dx: int, dy: int, wheel: int = 0,
                     x_unit: int = X_UNIT_PX, y_unit: int = Y_UNIT_PX) -> MouseDelta:
    """Quantize pixel deltas into action units, ties rounded away from zero."""
    ux = max(-MOUSE_LIMIT, min(MOUSE_LIMIT, _round_half_away(dx, x_unit)))
    uy = max(-MOUSE_LIMIT, min(MOUSE_LIMIT, _round_half_away(dy, y_unit)))
    uz = max(-SCROLL_LIMIT, min(SCROLL_LIMIT, wheel))
    return MouseDelta(ux, uy, uz)
