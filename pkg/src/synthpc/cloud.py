"""Labelled point clouds."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PROVENANCES = ("depth_fused", "photogrammetric_sim")


@dataclass
class LabeledPointCloud:
    points: np.ndarray
    label: np.ndarray
    true_label: np.ndarray
    provenance: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.label = np.asarray(self.label, dtype=np.uint8).reshape(-1)
        self.true_label = np.asarray(self.true_label, dtype=np.uint8).reshape(-1)
        if not (len(self.points) == len(self.label) == len(self.true_label)):
            raise ValueError("points, label and true_label must have equal length")
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    def __len__(self) -> int:
        return len(self.points)

    def relabeled(self, label) -> "LabeledPointCloud":
        """Copy with ``label`` replaced; ``true_label`` is carried over untouched."""
        return LabeledPointCloud(self.points, label, self.true_label, self.provenance, dict(self.meta))
