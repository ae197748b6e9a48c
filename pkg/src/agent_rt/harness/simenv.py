"""Procedural stand-in for the game screen."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ..executor import EventKind, TimedEvent
from ..pipeline.scene import default_templates, stamp_template
from ..wire.protocol import FRAME_HEIGHT, FRAME_WIDTH, JPEG_QUALITY, encode_jpeg

TEXTURE_CELL = 16
PITCH_LIMIT = 2000
MENU_KEY = "Esc"


@dataclass(frozen=True)
class SimState:
    yaw: int = 0
    pitch: int = 0
    zoom: int = 0
    ui_open: bool = False


class SimEnv:
    """Deterministic renderer of a moving gradient with an optional menu overlay.

    Mouse motion pans the gradient, scroll shifts its hue, and each press of
    the menu key toggles a UI layer stamped with the close-button template so
    the scene classifier sees a GUI frame.
    """

    def __init__(self, seed: int = 0, width: int = FRAME_WIDTH, height: int = FRAME_HEIGHT,
                 quality: int = JPEG_QUALITY):
        self.seed = seed
        self.width = width
        self.height = height
        self.quality = quality
        rng = np.random.default_rng(seed)
        cells_y = -(-height // TEXTURE_CELL)
        cells_x = -(-width // TEXTURE_CELL) + 1
        self._texture = rng.integers(0, 96, size=(cells_y, cells_x), dtype=np.int64)
        self._templates = default_templates(width, height)
        self._xs = np.arange(width, dtype=np.int64)
        self._ys = np.arange(height, dtype=np.int64)

    def initial_state(self) -> SimState:
        return SimState()

    def step(self, state: SimState, event: TimedEvent) -> SimState:
        if event.kind is EventKind.MOUSE_MOVE:
            pitch = max(-PITCH_LIMIT, min(PITCH_LIMIT, state.pitch + event.dy))
            return replace(state, yaw=state.yaw + event.dx, pitch=pitch)
        if event.kind is EventKind.SCROLL:
            return replace(state, zoom=state.zoom + event.dz)
        if event.kind is EventKind.KEY_DOWN and event.key == MENU_KEY:
            return replace(state, ui_open=not state.ui_open)
        return state

    def render(self, state: SimState, seq: int) -> np.ndarray:
        xs = self._xs + state.yaw
        ys = self._ys + state.pitch
        r = (xs // 4 + seq) % 256
        g = (ys // 3 + 2 * state.zoom) % 256
        cells = self._texture[:, (xs // TEXTURE_CELL) % self._texture.shape[1]]
        b = np.repeat(cells, TEXTURE_CELL, axis=0)[: self.height] + 64
        img = np.empty((self.height, self.width, 3), dtype=np.uint8)
        img[..., 0] = r[None, :]
        img[..., 1] = g[:, None]
        img[..., 2] = b
        if state.ui_open:
            img = (img // 3).astype(np.uint8)
            for template in self._templates:
                img = stamp_template(img, template)
        return img

    def frame_bytes(self, state: SimState, seq: int) -> bytes:
        return encode_jpeg(self.render(state, seq), self.quality)
