from __future__ import annotations

import logging
from typing import Optional, Sequence

from ..executor import ACTION_MS, BOUNDARIES_MS
from ..grammar import MAX_KEYS_PER_CHUNK, NUM_CHUNKS, KeyChunk, canonical_key
from .logs import Diagnostics, KeyEvent

# Raw key names as logged by the hook, mapped onto the key alphabet.
RAW_KEY_NAMES = {
    "LButton": "LMB", "RButton": "RMB", "MButton": "MMB",
    "Escape": "Esc", "Capital": "Caps", "CapsLock": "Caps",
    "LShift": "Shift", "RShift": "Shift", "LControl": "Ctrl", "RControl": "Ctrl",
    "Control": "Ctrl", "LMenu": "Alt", "RMenu": "Alt", "Menu": "Alt",
}


def normalize_key(raw: str) -> Optional[str]:
    """Canonical key name, or None for keys outside the alphabet."""
    name = RAW_KEY_NAMES.get(raw, raw)
    if len(name) == 1:
        name = name.upper()
    try:
        return canonical_key(name)
    except ValueError:
        return None


def bin_edges(frame_time: float) -> list[float]:
    """Start of each of the six bins of a frame, plus the end of the last one."""
    return [frame_time + b for b in BOUNDARIES_MS] + [frame_time + ACTION_MS]


def reconstruct_keyboard(events: Sequence[KeyEvent], frame_times: Sequence[float],
                         diagnostics: Optional[Diagnostics] = None) -> list[tuple[KeyChunk, ...]]:
    """Six key chunks per frame from a chronological down/up event log.

    An event inside bin ``[b_i, b_{i+1})`` takes effect at ``b_i``: chunk ``i``
    is the held set once every event before ``b_{i+1}`` has been applied. This
    is the inverse of the executor, which emits each transition at its bin
    start. Keys outside the alphabet are ignored, repeated downs (auto-repeat)
    are absorbed and an up for a released key is dropped with a diagnostic.
    """
    diagnostics = diagnostics if diagnostics is not None else Diagnostics()
    held: dict[str, None] = {}
    order = sorted(range(len(events)), key=lambda i: events[i].t)
    pos = 0
    out = []
    for ft in frame_times:
        edges = bin_edges(ft)
        chunks = []
        for i in range(NUM_CHUNKS):
            end = edges[i + 1]
            while pos < len(order) and events[order[pos]].t < end:
                ev = events[order[pos]]
                pos += 1
                key = normalize_key(ev.key)
                if key is None:
                    continue
                if ev.down:
                    held.setdefault(key, None)
                elif key in held:
                    del held[key]
                else:
                    diagnostics.add("dangling-up", f"up for {key} without down", ev.t,
                                    level=logging.DEBUG)
            keys = tuple(held)
            if len(keys) > MAX_KEYS_PER_CHUNK:
                diagnostics.add("too-many-keys",
                                f"{len(keys)} keys held, keeping the first {MAX_KEYS_PER_CHUNK}",
                                edges[i])
                keys = keys[:MAX_KEYS_PER_CHUNK]
            chunks.append(KeyChunk(keys))
        out.append(tuple(chunks))
    return out

