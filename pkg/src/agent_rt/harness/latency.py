from __future__ import annotations

import math
import random
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional, Union

import tomli

FIXED_STAGES = ("network_ms", "preprocess_ms", "vision_ms", "prefill_ms")


class DeadlineConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyModel:
    """Per-stage delays of one inference cycle, in milliseconds.

    ``network_ms`` is a round trip: half is charged to the upload and half to
    each chunk's delivery. ``overlap_ms`` absorbs stage pipelining the plain
    sum does not capture. ``first_chunk_steps``, when set, replaces the
    simulated step count of the first chunk (calibration runs).
    """

    network_ms: float = 6.0
    preprocess_ms: float = 6.8
    vision_ms: float = 39.0
    prefill_ms: float = 52.0
    decode_per_token_ms: float = 3.1
    reasoning_tokens_mean: float = 38.4
    reasoning_tokens_std: float = 0.0
    overlap_ms: float = 0.0
    drafting: bool = True
    first_chunk_steps: Optional[float] = None
    reference_first_chunk_ms: Optional[float] = 113.9
    reference_band: float = 0.10

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"{f.name} must be >= 0, got {v}")

    @property
    def prefix_ms(self) -> float:
        """Server-side time before the first decode step."""
        return self.preprocess_ms + self.vision_ms + self.prefill_ms - self.overlap_ms

    @property
    def fixed_ms(self) -> float:
        return self.network_ms + self.prefix_ms

    def first_chunk_latency(self, steps: float, reasoning_steps: float = 0.0) -> float:
        return self.fixed_ms + (steps + reasoning_steps) * self.decode_per_token_ms

    def raw_first_chunk_latency(self, steps: float, reasoning_steps: float = 0.0) -> float:
        return self.first_chunk_latency(steps, reasoning_steps) + self.overlap_ms

    def sample_reasoning_tokens(self, rng: random.Random) -> int:
        """Draw a reasoning length; fractional means are rounded stochastically
        so the long-run average matches the configured mean."""
        value = self.reasoning_tokens_mean
        if self.reasoning_tokens_std:
            value = rng.gauss(value, self.reasoning_tokens_std)
        value = max(value, 1.0)
        whole = math.floor(value)
        return whole + (1 if rng.random() < value - whole else 0)

    def check_strict(self, worst_first_chunk_steps: int = 7, budget_ms: float = 200.0) -> None:
        worst = self.first_chunk_latency(worst_first_chunk_steps)
        if worst > budget_ms:
            raise DeadlineConfigError(
                f"non-reasoning first chunk can take {worst:.1f} ms, over the {budget_ms:.0f} ms budget")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, d: dict) -> "LatencyModel":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown latency keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "LatencyModel":
        with open(path, "rb") as fh:
            data = tomli.load(fh)
        return cls.from_mapping(data.get("latency", data))


ZERO = LatencyModel(0, 0, 0, 0, 0, reasoning_tokens_mean=0, reference_first_chunk_ms=None)
