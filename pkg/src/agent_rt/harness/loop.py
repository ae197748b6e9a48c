"""Closed-loop capture -> inference -> execution simulation on a virtual clock.

Three timelines share one clock:

* capture runs on a fixed 200 ms grid but waits (lockstep) until the server
  has delivered the previous action;
* the server pays upload, preprocessing, vision, prefill and per-step decode
  costs from the latency model, with step counts from the drafting decoder;
* the executor starts each action when its first key chunk arrives. A new
  action supersedes whatever is left of the previous one, so the keys held at
  the cut become the next action's ``prev_tail``.

Every request and reply is encoded with the wire codec and passed through
in-memory byte queues, so the harness exercises the same framing as a socket.
"""

from __future__ import annotations

import random
import time
from dataclasses import dataclass
from typing import Callable, Optional

from ..context import ContextWindow, HISTORY_CAPACITY
from ..executor import ACTION_MS, BOUNDARIES_MS, EventStream, TimedEvent, lower_action
from ..grammar import (
    EMPTY_CHUNK, NUM_CHUNKS, KeyChunk, ModelTurn, parse_action, serialize_action, tokenize_action,
)
from ..specdecode import simulate_decode
from ..wire.protocol import (
    ChunkMessage, FrameDecoder, InferenceRequest, ObservationFrame, ProtocolError, ReasoningMessage,
    Reassembler, encode_message, stream_chunks,
)
from .latency import LatencyModel
from .policy import MockPolicy
from .report import CHUNK_MS, CycleRecord, CycleReport
from .simenv import SimEnv, SimState

SYSTEM_PROMPT = "You are a game-playing agent. Reply with one action per observation."
SYSTEM_TOKENS = 13


@dataclass
class LoopConfig:
    period_ms: float = ACTION_MS
    perception_lag_ms: float = ACTION_MS
    capacity: int = HISTORY_CAPACITY
    strict: bool = False
    wall_clock: bool = False


class _ExecutedTimeline:
    """Events the executor actually ran, in absolute time, folded into env state lazily."""

    def __init__(self, env: SimEnv):
        self.env = env
        self.state = env.initial_state()
        self.events: list[tuple[float, TimedEvent]] = []
        self._applied = 0
        self._open_from = 0  # index of the first event of the still-open action

    def open_action(self, start: float, stream: EventStream) -> None:
        self._open_from = len(self.events)
        self.events.extend((start + e.at, e) for e in stream)

    def cut_open_action(self, at: float) -> None:
        keep = [ev for ev in self.events[self._open_from:] if ev[0] < at]
        if self._applied > self._open_from + len(keep):
            raise RuntimeError("perception consumed events past a preemption point")
        del self.events[self._open_from + len(keep):]

    def state_at(self, t: float) -> SimState:
        while self._applied < len(self.events) and self.events[self._applied][0] <= t:
            self.state = self.env.step(self.state, self.events[self._applied][1])
            self._applied += 1
        return self.state


def _roundtrip(data: bytes) -> list:
    dec = FrameDecoder()
    msgs = dec.feed(data)
    if dec.pending:
        raise ProtocolError(f"{dec.pending} undecoded bytes left in queue")
    return msgs


def run_closed_loop(env: SimEnv, policy: Callable, lat: LatencyModel,
                    cycles: Optional[int] = None, config: Optional[LoopConfig] = None,
                    seed: int = 0, ctx: Optional[ContextWindow] = None) -> CycleReport:
    """Simulate ``cycles`` control cycles and return their timing report.

    With a scripted :class:`MockPolicy` and ``cycles=None`` the loop runs once
    per playlist entry.
    """
    config = config or LoopConfig()
    if config.strict:
        lat.check_strict()
    if cycles is None:
        if isinstance(policy, MockPolicy) and policy.playlist is not None:
            cycles = len(policy.playlist)
        else:
            raise ValueError("cycles is required without a scripted playlist")
    ctx = ctx or ContextWindow(SYSTEM_PROMPT, capacity=config.capacity, system_tokens=SYSTEM_TOKENS)
    report = CycleReport(lat, seed=seed, image_tokens=ctx.image_tokens)
    timeline = _ExecutedTimeline(env)
    uplink = bytearray()
    downlink = bytearray()
    dpt = lat.decode_per_token_ms
    half_net = lat.network_ms / 2
    server_free = 0.0
    prev_start: Optional[float] = None
    prev_action = None
    prev_tail: KeyChunk = EMPTY_CHUNK
    wall_t0 = time.monotonic()

    for seq in range(cycles):
        capture = max(seq * config.period_ms, server_free)
        if config.wall_clock:
            delay = wall_t0 + capture / 1000.0 - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        state = timeline.state_at(capture - config.perception_lag_ms)
        image = env.frame_bytes(state, seq)

        # host -> server
        uplink += encode_message(InferenceRequest.from_frame(ObservationFrame(seq, capture, image)))
        (request,) = _roundtrip(bytes(uplink))
        uplink.clear()
        if request.seq != seq or request.image() != image:
            raise ProtocolError(f"request for seq {seq} did not survive the uplink")

        forced = ctx.force_think_check()
        turn: ModelTurn = policy(request.image(), ctx, seq)
        rng = random.Random(seed * 7_919 + seq)
        r_tokens = lat.sample_reasoning_tokens(rng) if turn.thinking else 0
        context_tokens = ctx.layout()[-1].end + ctx.image_tokens
        ctx.record(f"frame:{seq}", turn, reasoning_tokens=r_tokens or None)

        tokens = tokenize_action(turn.action)
        dec = simulate_decode(tokens, reasoning_tokens=r_tokens, drafting=lat.drafting)

        # server -> host
        if turn.thinking:
            downlink += encode_message(ReasoningMessage(seq, turn.reasoning))
        for msg in stream_chunks(seq, tokens):
            downlink += encode_message(msg)
        reasm = Reassembler(seq)
        text = None
        for msg in _roundtrip(bytes(downlink)):
            if isinstance(msg, ChunkMessage):
                text = reasm.feed(msg)
            elif not (isinstance(msg, ReasoningMessage) and msg.text == turn.reasoning):
                raise ProtocolError(f"unexpected {type(msg).__name__} for seq {seq}")
        downlink.clear()
        if text != serialize_action(turn.action):
            raise ProtocolError(f"reassembled action for seq {seq} differs from the policy output")

        # timing
        done_steps = [t.done_step - r_tokens for t in dec.timeline]
        counted = 0
        done_tokens = []
        for t in dec.timeline:
            counted += t.tokens
            done_tokens.append(counted)
        fc_steps = float(done_steps[1])
        if lat.first_chunk_steps is not None:
            fc_steps = float(lat.first_chunk_steps)
        shift = (fc_steps - done_steps[1]) * dpt
        fcl = lat.first_chunk_latency(fc_steps, r_tokens)
        decode_start = capture + half_net + lat.prefix_ms
        deliveries = [decode_start + (r_tokens + done_steps[0]) * dpt + half_net]
        deliveries.append(capture + fcl)
        for c in range(2, NUM_CHUNKS + 1):
            deliveries.append(decode_start + (r_tokens + done_steps[c]) * dpt + half_net + shift)
        server_free = max(deliveries)

        # execution
        start = deliveries[1]
        deadlines = [start + i * CHUNK_MS for i in range(NUM_CHUNKS)]
        met = [deliveries[i + 1] <= deadlines[i] for i in range(NUM_CHUNKS)]
        idle_gap_ms = 0.0
        if prev_start is not None:
            idle_gap_ms = max(0.0, start - (prev_start + ACTION_MS))
            ran_for = start - prev_start
            executed = sum(1 for b in BOUNDARIES_MS if b < ran_for)
            report.cycles[-1].superseded_chunks = NUM_CHUNKS - executed
            timeline.cut_open_action(start)
            prev_tail = prev_action.chunks[executed - 1] if executed else prev_tail
        timeline.open_action(start, lower_action(turn.action, prev_tail))
        prev_start, prev_action = start, turn.action

        report.cycles.append(CycleRecord(
            seq=seq,
            capture_ms=capture,
            reasoning=turn.thinking,
            forced_think=forced and turn.thinking,
            reasoning_tokens=r_tokens,
            action=serialize_action(turn.action),
            tokens=len(tokens),
            forward_steps=dec.action_steps,
            first_chunk_tokens=done_tokens[1],
            first_chunk_steps=fc_steps,
            done_steps=done_steps,
            done_tokens=done_tokens,
            chunk_tokens=[t.tokens for t in dec.timeline],
            chunk_steps=[t.steps for t in dec.timeline],
            stage_ms={
                "network": lat.network_ms,
                "preprocess": lat.preprocess_ms,
                "vision": lat.vision_ms,
                "prefill": lat.prefill_ms,
                "reasoning_decode": r_tokens * dpt,
                "first_chunk_decode": fc_steps * dpt,
                "first_chunk_latency": fcl,
                "action_latency": server_free - capture,
            },
            first_chunk_latency_ms=fcl,
            raw_first_chunk_latency_ms=lat.raw_first_chunk_latency(fc_steps, r_tokens),
            action_latency_ms=server_free - capture,
            chunk_delivery_ms=deliveries,
            exec_start_ms=start,
            chunk_deadline_ms=deadlines,
            deadlines_met=met,
            idle_gap_ms=idle_gap_ms,
            idle_gap=idle_gap_ms >= CHUNK_MS,
            superseded_chunks=0,
            context_tokens=context_tokens,
        ))
    return report


def executed_events(report: CycleReport) -> list[tuple[float, TimedEvent]]:
    """Rebuild the executor's absolute-time event list from a report alone."""
    out: list[tuple[float, TimedEvent]] = []
    tail = EMPTY_CHUNK
    for n, c in enumerate(report.cycles):
        action = parse_action(c.action)
        stream = lower_action(action, tail)
        executed = NUM_CHUNKS - c.superseded_chunks
        cut = BOUNDARIES_MS[executed] if executed < NUM_CHUNKS else float("inf")
        out.extend((c.exec_start_ms + e.at, e) for e in stream if e.at < cut)
        if executed:
            tail = action.chunks[executed - 1]
    return out
