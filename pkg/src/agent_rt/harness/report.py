"""Per-cycle records, aggregates, text/JSON rendering and what-if re-pricing."""

from __future__ import annotations

import json
import statistics
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from ..executor import ACTION_MS
from ..grammar import NUM_CHUNKS
from .latency import LatencyModel

REPORT_VERSION = 1
CHUNK_MS = ACTION_MS / NUM_CHUNKS
STAGES = ("network", "preprocess", "vision", "prefill", "reasoning_decode", "first_chunk_decode",
          "first_chunk_latency", "action_latency")


@dataclass
class CycleRecord:
    seq: int
    capture_ms: float
    reasoning: bool
    forced_think: bool
    reasoning_tokens: int
    action: str
    tokens: int
    forward_steps: int
    first_chunk_tokens: int
    first_chunk_steps: float
    # chunk 0 is the mouse fields, 1..6 the key chunks
    done_steps: list[int]
    done_tokens: list[int]
    chunk_tokens: list[int]
    chunk_steps: list[int]
    stage_ms: dict[str, float]
    first_chunk_latency_ms: float
    raw_first_chunk_latency_ms: float
    action_latency_ms: float
    chunk_delivery_ms: list[float]
    exec_start_ms: float
    chunk_deadline_ms: list[float]
    deadlines_met: list[bool]
    idle_gap_ms: float
    idle_gap: bool
    superseded_chunks: int
    context_tokens: int = 0

    @property
    def late_chunks(self) -> int:
        return sum(not m for m in self.deadlines_met)


def _r(x: float) -> float:
    return round(float(x), 6)


def _dist(values: list[float]) -> dict:
    if not values:
        return {"count": 0, "mean": None, "p50": None, "p95": None, "max": None}
    arr = np.asarray(values, dtype=float)
    return {
        "count": len(values),
        "mean": _r(arr.mean()),
        "p50": _r(np.percentile(arr, 50)),
        "p95": _r(np.percentile(arr, 95)),
        "max": _r(arr.max()),
    }


def _mean(values) -> Optional[float]:
    values = list(values)
    return _r(statistics.fmean(values)) if values else None


@dataclass
class CycleReport:
    model: LatencyModel
    cycles: list[CycleRecord] = field(default_factory=list)
    seed: Optional[int] = None
    image_tokens: Optional[int] = None

    @property
    def late_chunks(self) -> int:
        return sum(c.late_chunks for c in self.cycles)

    @property
    def idle_gaps(self) -> list[CycleRecord]:
        return [c for c in self.cycles if c.idle_gap]

    def non_reasoning(self) -> list[CycleRecord]:
        return [c for c in self.cycles if not c.reasoning]

    def reasoning(self) -> list[CycleRecord]:
        return [c for c in self.cycles if c.reasoning]

    def max_chunk_decode_ms(self) -> float:
        dpt = self.model.decode_per_token_ms
        return max((s * dpt for c in self.cycles for s in c.chunk_steps[1:]), default=0.0)

    def aggregates(self) -> dict:
        dpt = self.model.decode_per_token_ms
        stages = {s: _dist([c.stage_ms[s] for c in self.cycles]) for s in STAGES}
        key_tokens = [t for c in self.cycles for t in c.chunk_tokens[1:]]
        key_steps = [s for c in self.cycles for s in c.chunk_steps[1:]]

        def first_chunk(rows: list[CycleRecord]) -> dict:
            return {
                "count": len(rows),
                "mean_latency_ms": _mean(c.first_chunk_latency_ms for c in rows),
                "mean_raw_latency_ms": _mean(c.raw_first_chunk_latency_ms for c in rows),
                "mean_tokens": _mean(c.first_chunk_tokens + c.reasoning_tokens for c in rows),
                "mean_steps": _mean(c.first_chunk_steps + c.reasoning_tokens for c in rows),
            }

        return {
            "stages": stages,
            "first_chunk_no_reasoning": first_chunk(self.non_reasoning()),
            "first_chunk_reasoning": first_chunk(self.reasoning()),
            "action_chunk": {
                "mean_ms": _mean(s * dpt for s in key_steps),
                "mean_tokens": _mean(key_tokens),
                "mean_steps": _mean(key_steps),
                "max_ms": _r(max(key_steps, default=0) * dpt),
                "max_tokens": max(key_tokens, default=0),
                "max_steps": max(key_steps, default=0),
            },
            "cycles": len(self.cycles),
            "reasoning_cycles": len(self.reasoning()),
            "forced_think_cycles": sum(c.forced_think for c in self.cycles),
            "idle_gaps": len(self.idle_gaps),
            "late_chunks": self.late_chunks,
            "superseded_chunks": sum(c.superseded_chunks for c in self.cycles),
            "mean_context_tokens": _mean(c.context_tokens for c in self.cycles),
        }

    def calibration(self) -> dict:
        ref = self.model.reference_first_chunk_ms
        rows = self.non_reasoning()
        if ref is None or not rows:
            return {"reference_ms": ref, "simulated_ms": None, "raw_ms": None,
                    "relative_error": None, "band": self.model.reference_band, "within_band": None}
        sim = statistics.fmean(c.first_chunk_latency_ms for c in rows)
        raw = statistics.fmean(c.raw_first_chunk_latency_ms for c in rows)
        err = (sim - ref) / ref
        return {"reference_ms": ref, "simulated_ms": _r(sim), "raw_ms": _r(raw),
                "relative_error": _r(err), "band": self.model.reference_band,
                "within_band": abs(err) <= self.model.reference_band}

    def to_dict(self) -> dict:
        cycles = []
        for c in self.cycles:
            d = asdict(c)
            d["stage_ms"] = {k: _r(v) for k, v in sorted(c.stage_ms.items())}
            for k in ("capture_ms", "first_chunk_latency_ms", "raw_first_chunk_latency_ms",
                      "action_latency_ms", "exec_start_ms", "idle_gap_ms", "first_chunk_steps"):
                d[k] = _r(d[k])
            d["chunk_delivery_ms"] = [_r(v) for v in c.chunk_delivery_ms]
            d["chunk_deadline_ms"] = [_r(v) for v in c.chunk_deadline_ms]
            cycles.append(d)
        return {
            "kind": "cycle-report",
            "version": REPORT_VERSION,
            "seed": self.seed,
            "latency_model": self.model.to_dict(),
            "aggregates": self.aggregates(),
            "calibration": self.calibration(),
            "cycles": cycles,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def report_schema() -> dict:
    text = resources.files(__package__).joinpath("cycle_report.schema.json").read_text("utf-8")
    return json.loads(text)


def _fmt(v, digits: int = 1) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.{digits}f}"
    return str(v)


def format_table(rep: CycleReport) -> str:
    m = rep.model
    agg = rep.aggregates()
    nr, wr, ac = agg["first_chunk_no_reasoning"], agg["first_chunk_reasoning"], agg["action_chunk"]
    rows = [
        ("Network latency", m.network_ms, None, None),
        ("Preprocessing", m.preprocess_ms, None, None),
        ("Vision encoder", m.vision_ms, rep.image_tokens, 1),
        ("LLM prefill", m.prefill_ms, None, 1),
        ("Decode latency per token", m.decode_per_token_ms, 1, None),
        ("First action chunk w/o reasoning", nr["mean_latency_ms"], nr["mean_tokens"], nr["mean_steps"]),
        ("First action chunk w/ reasoning", wr["mean_latency_ms"], wr["mean_tokens"], wr["mean_steps"]),
        ("Action chunk (average)", ac["mean_ms"], ac["mean_tokens"], ac["mean_steps"]),
        ("Action chunk (max)", ac["max_ms"], ac["max_tokens"], ac["max_steps"]),
    ]
    width = max(len(r[0]) for r in rows)
    lines = [f"{'Stage':<{width}}  {'Time (ms)':>9}  {'Token':>7}  {'Forward Step':>12}"]
    lines.append("-" * len(lines[0]))
    for name, t, tok, steps in rows:
        lines.append(f"{name:<{width}}  {_fmt(t):>9}  {_fmt(tok):>7}  {_fmt(steps, 2):>12}")
    lines.append("")
    lines.append(f"{'Stage':<{width}}  {'p50':>9}  {'p95':>7}  {'max':>12}")
    lines.append("-" * len(lines[0]))
    for s, d in agg["stages"].items():
        lines.append(f"{s:<{width}}  {_fmt(d['p50']):>9}  {_fmt(d['p95']):>7}  {_fmt(d['max']):>12}")
    lines.append("")
    cal = rep.calibration()
    if cal["simulated_ms"] is not None:
        lines.append(f"calibration: simulated {cal['simulated_ms']:.1f} ms (raw {cal['raw_ms']:.1f}) "
                     f"vs reference {cal['reference_ms']} ms, error {100 * cal['relative_error']:+.1f}% "
                     f"({'within' if cal['within_band'] else 'outside'} ±{100 * cal['band']:.0f}%)")
    lines.append(f"mean context tokens {_fmt(agg['mean_context_tokens'])}")
    lines.append(f"cycles {agg['cycles']}, reasoning {agg['reasoning_cycles']} "
                 f"(forced {agg['forced_think_cycles']}), idle gaps {agg['idle_gaps']}, "
                 f"late chunks {agg['late_chunks']}, superseded chunks {agg['superseded_chunks']}")
    return "\n".join(lines) + "\n"


def action_latency(c: CycleRecord, model: LatencyModel) -> float:
    """Capture-to-last-chunk time of a recorded cycle priced under ``model``."""
    steps = c.done_steps[-1] if model.drafting else c.done_tokens[-1]
    return model.fixed_ms + (c.reasoning_tokens + steps) * model.decode_per_token_ms


def speedup(rep: CycleReport, baseline: LatencyModel, optimized: Optional[LatencyModel] = None,
            include_reasoning: bool = False) -> float:
    """Mean full-action latency under ``baseline`` over the same under ``optimized``.

    The recorded token and step counts are reused; only stage prices change.
    """
    optimized = optimized or rep.model
    rows = rep.cycles if include_reasoning else rep.non_reasoning()
    if not rows:
        raise ValueError("no cycles to price")
    base = statistics.fmean(action_latency(c, baseline) for c in rows)
    opt = statistics.fmean(action_latency(c, optimized) for c in rows)
    if opt == 0:
        return 1.0 if base == 0 else float("inf")
    return base / opt
