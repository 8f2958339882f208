"""Face detection export: video in, per-frame detections JSON Lines out.

The detector sits behind a tiny callable protocol (frame -> boxes), so any
model can slot in. Shipped backends:

- `BrightRegionBackend` - threshold-and-contours detector for the synthetic
  smoke clips (and any footage where faces are the bright foreground);
  deterministic, model-free.
- `CascadeBackend` - OpenCV Haar/LBP cascade from a user-supplied XML, the
  lightweight stand-in for a real face detector checkpoint.

A production SCRFD checkpoint would be wired the same way behind the
protocol; it is not bundled because the weights are not redistributable.
"""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .media import read_video_frames
from .posteriors import AdapterError


@dataclass
class BrightRegionBackend:
    threshold: int = 180
    min_area: float = 400.0

    model_id = "bright-region-contours"

    def __call__(self, frame: np.ndarray) -> list[dict]:
        gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
        _, mask = cv2.threshold(gray, self.threshold, 255, cv2.THRESH_BINARY)
        contours, _ = cv2.findContours(mask, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
        boxes = []
        for c in contours:
            x, y, w, h = cv2.boundingRect(c)
            if w * h >= self.min_area:
                boxes.append(
                    {"x1": float(x), "y1": float(y), "x2": float(x + w), "y2": float(y + h), "conf": 1.0}
                )
        boxes.sort(key=lambda b: (b["x1"], b["y1"]))
        return boxes


@dataclass
class CascadeBackend:
    cascade_path: str
    min_size: int = 24

    @property
    def model_id(self) -> str:
        return f"cascade:{self.cascade_path}"

    def __post_init__(self):
        self._cascade = cv2.CascadeClassifier(self.cascade_path)
        if self._cascade.empty():
            raise AdapterError(f"{self.cascade_path}: cannot load cascade")

    def __call__(self, frame: np.ndarray) -> list[dict]:
        gray = cv2.cvtColor(frame, cv2.COLOR_BGR2GRAY)
        rects = self._cascade.detectMultiScale(gray, minSize=(self.min_size, self.min_size))
        boxes = [
            {"x1": float(x), "y1": float(y), "x2": float(x + w), "y2": float(y + h), "conf": 1.0}
            for x, y, w, h in rects
        ]
        boxes.sort(key=lambda b: (b["x1"], b["y1"]))
        return boxes


def export_detections(video_path: str | Path, out_path: str | Path, *, backend=None) -> dict:
    """One JSON line per decoded frame; undecodable frames get empty boxes."""
    backend = backend or BrightRegionBackend()
    n_frames = 0
    n_bad = 0
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8") as f:
        for index, frame in read_video_frames(video_path):
            if frame is None:
                n_bad += 1
                print(f"warning: {video_path}: frame {index} undecodable", file=sys.stderr)
                boxes = []
            else:
                boxes = backend(frame)
            f.write(json.dumps({"frame": index, "boxes": boxes}, sort_keys=True) + "\n")
            n_frames = index + 1
    return {"frames": n_frames, "undecodable": n_bad, "model": backend.model_id, "out": str(out_path)}
