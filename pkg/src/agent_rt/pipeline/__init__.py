from .align import Alignment, align_streams, apply_alignment
from .curate import PipelineConfig, build_pairs, curate_session
from .filters import FilterReport, filter_idle, find_jitter_runs
from .keyboard import reconstruct_keyboard
from .logs import (
    AbsSample, Diagnostics, EmptyStream, KeyEvent, RawInputLog, RelPoll, VideoIndex,
    parse_event_log, read_event_log, read_video_index, write_event_log,
)
from .mouse import GUI, OVERWORLD, discretize_mouse, mouse_per_frame
from .samples import (
    Annotations, DatasetSample, FrameActionPair, FrameRef, InstructionSpan, ReasoningPoint,
    assemble_samples, read_samples, write_samples,
)
from .scene import UITemplate, classify_scene, default_templates, match_score, stamp_template
