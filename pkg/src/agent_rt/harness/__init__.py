from .latency import DeadlineConfigError, LatencyModel
from .loop import LoopConfig, executed_events, run_closed_loop
from .policy import MockPolicy, random_action, random_corpus, read_playlist, write_playlist
from .report import CycleRecord, CycleReport, format_table, report_schema, speedup
from .simenv import SimEnv, SimState
