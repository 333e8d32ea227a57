from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import as_quad


@dataclass
class Detection:
    """Candidate text box for one frame.

    ``hint`` is an optional identity carried by the input file (-1 = none);
    the tracker never uses it for association.
    """

    quad: np.ndarray
    confidence: float
    embedding: Optional[np.ndarray] = None
    transcription: Optional[str] = None
    hint: int = -1

    def __post_init__(self):
        self.quad = as_quad(self.quad)
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        if self.embedding is not None:
            self.embedding = np.asarray(self.embedding, dtype=np.float64)
            if not np.all(np.isfinite(self.embedding)):
                raise ValueError("embedding entries must be finite")

    def with_embedding(self, embedding) -> "Detection":
        return replace(self, embedding=embedding)


@dataclass
class TextInstance:
    quad: np.ndarray
    confidence: float
    trajectory_id: int
    frame: int
    embedding: Optional[np.ndarray] = None
    transcription: Optional[str] = None
    hint: int = -1

    def __post_init__(self):
        if self.trajectory_id <= 0:
            raise ValueError("trajectory ids are positive")
        if self.frame < 0:
            raise ValueError("frame indices are non-negative")

    @classmethod
    def from_detection(cls, det: Detection, trajectory_id: int, frame: int) -> "TextInstance":
        return cls(quad=det.quad, confidence=det.confidence, trajectory_id=trajectory_id,
                   frame=frame, embedding=det.embedding, transcription=det.transcription,
                   hint=det.hint)


@dataclass
class Trajectory:
    id: int
    instances: list[TextInstance] = field(default_factory=list)
    lost_for: int = 0

    @property
    def latest(self) -> TextInstance:
        return self.instances[-1]

    @property
    def birth_frame(self) -> int:
        return self.instances[0].frame

    @property
    def last_frame(self) -> int:
        return self.instances[-1].frame

    @property
    def state(self) -> str:
        return "active" if self.lost_for == 0 else "lost"

    def append(self, inst: TextInstance) -> None:
        if self.instances and inst.frame <= self.last_frame:
            raise ValueError("trajectory instances must strictly increase in frame")
        self.instances.append(inst)
        self.lost_for = 0
