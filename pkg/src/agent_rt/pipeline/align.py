from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

from .logs import Diagnostics, EmptyStream, RawInputLog, VideoIndex

MAX_PLAUSIBLE_OFFSET_MS = 5000.0


@dataclass(frozen=True)
class Alignment:
    """Start-time relation between video and input logging.

    ``offset_ms`` is first-frame time minus input-log start: positive when
    input logging began first. ``origin`` is the synchronized start time.
    """

    offset_ms: float
    frames_dropped: int
    origin: float
    suspicious: bool = False


def align_streams(video: VideoIndex, raw: RawInputLog,
                  diagnostics: Optional[Diagnostics] = None,
                  max_offset_ms: float = MAX_PLAUSIBLE_OFFSET_MS) -> Alignment:
    """Work out how to trim the earlier-starting stream.

    If input logging started first, events before the first frame are dropped.
    If the video started first, leading frames are dropped until a frame is at
    or after the start of input logging.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    if video.frame_count <= 0:
        raise EmptyStream("video index has no frames")
    if raw.empty and raw.started_at is None:
        raise EmptyStream("input log is empty")
    offset = video.first_frame_at - raw.start
    suspicious = not 0 <= offset <= max_offset_ms
    if suspicious:
        diagnostics.add("alignment-offset",
                        f"offset {offset:.1f} ms outside [0, {max_offset_ms:.0f}]",
                        level=logging.WARNING)
    if offset >= 0:
        return Alignment(offset, 0, video.first_frame_at, suspicious)
    dropped = math.ceil(-offset / video.frame_interval)
    if dropped >= video.frame_count:
        raise EmptyStream(f"input starts after the last frame (offset {offset} ms)")
    return Alignment(offset, dropped, video.frame_time(dropped), suspicious)


def apply_alignment(video: VideoIndex, raw: RawInputLog,
                    alignment: Alignment) -> tuple[list[int], list[float], RawInputLog]:
    """Return retained frame indices, their times and the trimmed log."""
    indices = list(range(alignment.frames_dropped, video.frame_count))
    times = [video.frame_time(i) for i in indices]
    return indices, times, raw.trimmed(alignment.origin)
