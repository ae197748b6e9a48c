"""End-to-end curation of one recorded session directory.

Layout of a session directory::

    events.jsonl        input-event log (see ``logs``)
    video.json          sampled video index sidecar
    annotations.json    optional instruction spans / reasoning points
    frames/NNNNNN.jpg   optional sampled frames, used for scene detection
"""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

import tomli

from .align import MAX_PLAUSIBLE_OFFSET_MS, Alignment, align_streams, apply_alignment
from .filters import DEFAULT_KEEP_RATIO, JITTER_MAX_NET, JITTER_MIN_FRAMES, FilterReport, filter_idle
from .keyboard import reconstruct_keyboard
from .logs import Diagnostics, RawInputLog, VideoIndex, read_event_log, read_video_index
from .mouse import OVERWORLD, X_UNIT_PX, Y_UNIT_PX, discretize_mouse, mouse_per_frame
from .samples import (
    HISTORY_WINDOW, Annotations, DatasetSample, FrameActionPair, FrameRef, InstructionSpan,
    ReasoningPoint, assemble_samples,
)
from .scene import DEFAULT_THRESHOLD, classify_scene


@dataclass
class PipelineConfig:
    keep_ratio: float = DEFAULT_KEEP_RATIO
    idle_seed: Optional[int] = None
    jitter_min_frames: int = JITTER_MIN_FRAMES
    jitter_max_net: int = JITTER_MAX_NET
    scene_threshold: float = DEFAULT_THRESHOLD
    x_unit_px: int = X_UNIT_PX
    y_unit_px: int = Y_UNIT_PX
    max_offset_ms: float = MAX_PLAUSIBLE_OFFSET_MS
    history_window: int = HISTORY_WINDOW

    @classmethod
    def from_mapping(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        with open(path, "rb") as fh:
            data = tomli.load(fh)
        return cls.from_mapping(data.get("pipeline", data))


def build_pairs(video: VideoIndex, raw: RawInputLog, scenes: Optional[list[str]] = None,
                config: Optional[PipelineConfig] = None, frame_path: str = "frames",
                diagnostics: Optional[Diagnostics] = None) -> tuple[Alignment, list[FrameActionPair]]:
    """Align the streams and label every retained frame with its action.

    ``scenes`` holds one label per *original* frame index; missing labels
    default to overworld.
    """
    config = config or PipelineConfig()
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    alignment = align_streams(video, raw, diagnostics, config.max_offset_ms)
    indices, times, log = apply_alignment(video, raw, alignment)
    keyboard = reconstruct_keyboard(log.key_events, times, diagnostics)
    pairs = []
    for idx, t, chunks in zip(indices, times, keyboard):
        scene = scenes[idx] if scenes is not None and idx < len(scenes) else OVERWORLD
        dx, dy, wheel = mouse_per_frame(log, scene, (t, t + video.frame_interval), diagnostics)
        mouse = discretize_mouse(dx, dy, wheel, config.x_unit_px, config.y_unit_px)
        pairs.append(FrameActionPair(FrameRef(frame_path, idx), t, mouse, chunks, scene))
    return alignment, pairs


def read_annotations(path: Union[str, Path]) -> Annotations:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    return Annotations(
        [InstructionSpan(s["start_us"] / 1000.0, s["end_us"] / 1000.0, s["text"])
         for s in d.get("instructions", [])],
        [ReasoningPoint(p["t_us"] / 1000.0, p["text"]) for p in d.get("reasoning", [])],
    )


def session_scenes(session: Path, video: VideoIndex, threshold: float) -> Optional[list[str]]:
    if video.scenes is not None:
        return list(video.scenes)
    frames_dir = session / (video.frames_dir or "frames")
    if not frames_dir.is_dir():
        return None
    scenes = []
    for i in range(video.frame_count):
        img = frames_dir / f"{i:06d}.jpg"
        scenes.append(classify_scene(img.read_bytes(), threshold=threshold) if img.exists()
                      else OVERWORLD)
    return scenes


@dataclass
class CurationResult:
    alignment: Alignment
    pairs_in: int
    samples: list[DatasetSample]
    filter_report: Optional[FilterReport]
    diagnostics: Diagnostics


def curate_session(session: Union[str, Path], kind: str = "pretrain", history: bool = True,
                   config: Optional[PipelineConfig] = None) -> CurationResult:
    session = Path(session)
    config = config or PipelineConfig()
    diagnostics = Diagnostics()
    video = read_video_index(session / "video.json")
    raw = read_event_log(session / "events.jsonl")
    scenes = session_scenes(session, video, config.scene_threshold)
    alignment, pairs = build_pairs(video, raw, scenes, config,
                                   frame_path=str(video.frames_dir or "frames"),
                                   diagnostics=diagnostics)
    ann_path = session / "annotations.json"
    annotations = read_annotations(ann_path) if ann_path.exists() else Annotations()
    report = None
    selected = pairs
    # Reasoning data keeps every frame so waiting behaviour is preserved.
    if kind != "reasoning":
        report = FilterReport()
        selected = filter_idle(pairs, config.keep_ratio, config.jitter_min_frames,
                               config.jitter_max_net, config.idle_seed, report)
    samples = list(assemble_samples(selected, annotations, kind, history, config.history_window,
                                    video.frame_interval, diagnostics))
    return CurationResult(alignment, len(pairs), samples, report, diagnostics)
