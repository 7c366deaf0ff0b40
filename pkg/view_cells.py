"""
view_cells.py - Latent-code templates that recognise previously seen places.

Each view cell stores the latent mean of the frame that created it and the
pose-cell coordinates active at that moment. A later frame whose latent is
close enough (cosine distance) re-activates the cell, which in turn injects
energy back at the stored coordinates.
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from domain import ValidationError
from pose_cells import CANConfig, Coords

logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


def _as_vector(values, name: str) -> np.ndarray:
    vec = np.asarray(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{name} must be finite")
    norm = float(np.linalg.norm(vec))
    if norm <= NORM_EPS:
        raise ValidationError(f"{name} has zero norm")
    return vec


def cosine_distance(a, b) -> float:
    """1 - cos(a, b), clipped into [0, 2]."""
    va, vb = _as_vector(a, "a"), _as_vector(b, "b")
    if va.shape != vb.shape:
        raise ValidationError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    cos = float(np.dot(va, vb) / (np.linalg.norm(va) * np.linalg.norm(vb)))
    return float(np.clip(1.0 - cos, 0.0, 2.0))


@dataclass(frozen=True)
class ViewCellConfig:
    match_threshold: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.match_threshold < 2.0:
            raise ValidationError(f"match_threshold must lie in (0, 2), got {self.match_threshold}")


@dataclass(frozen=True, eq=False)
class ViewCell:
    id: int
    template: np.ndarray
    linked_pose_coords: Coords
    created_at: int

    def __post_init__(self):
        template = np.array(_as_vector(self.template, "template"), copy=True)
        template.flags.writeable = False
        object.__setattr__(self, "template", template)
        object.__setattr__(self, "linked_pose_coords", tuple(int(c) for c in self.linked_pose_coords))

    def __eq__(self, other):
        return (
            isinstance(other, ViewCell)
            and self.id == other.id
            and self.linked_pose_coords == other.linked_pose_coords
            and self.created_at == other.created_at
            and np.array_equal(self.template, other.template)
        )


@dataclass(frozen=True)
class ViewMatch:
    cell_id: int
    is_new: bool
    distance: Optional[float] = None   # None when the store was empty


@dataclass(frozen=True)
class InjectionRequest:
    coords: Coords
    energy: float


class ViewCellStore:
    """
    Ordered collection of view cells with a linear-scan matcher.

    Parameters:
    -----------
    match_threshold : float
        Strict upper bound on cosine distance for a match.
    """

    def __init__(self, match_threshold: float = 0.10):
        self.config = ViewCellConfig(match_threshold)
        self._cells: List[ViewCell] = []
        self._unit = np.zeros((0, 0))   # row i = template of cell i scaled to unit norm

    @property
    def match_threshold(self) -> float:
        return self.config.match_threshold

    @property
    def cells(self) -> Tuple[ViewCell, ...]:
        return tuple(self._cells)

    def __len__(self) -> int:
        return len(self._cells)

    def __getitem__(self, cell_id: int) -> ViewCell:
        if not 0 <= cell_id < len(self._cells):
            raise ValidationError(f"no view cell with id {cell_id}")
        return self._cells[cell_id]

    def __eq__(self, other):
        return (
            isinstance(other, ViewCellStore)
            and self.match_threshold == other.match_threshold
            and self._cells == other._cells
        )

    def distances(self, latent) -> np.ndarray:
        """Cosine distance from `latent` to every stored template, in id order."""
        vec = _as_vector(latent, "latent")
        if not self._cells:
            return np.zeros(0)
        if vec.shape[0] != self._unit.shape[1]:
            raise ValidationError(f"latent dimension {vec.shape[0]} != template dimension {self._unit.shape[1]}")
        cos = self._unit @ (vec / np.linalg.norm(vec))
        return np.clip(1.0 - cos, 0.0, 2.0)

    def match_or_create(self, latent, pose_coords: Coords, frame: int) -> ViewMatch:
        """
        Return the closest cell under the threshold, or append a new one.

        Ties resolve to the lowest id. A distance exactly equal to the
        threshold is not a match.
        """
        distances = self.distances(latent)
        if distances.size:
            best = int(np.argmin(distances))
            best_distance = float(distances[best])
            if best_distance < self.match_threshold:
                return ViewMatch(best, False, best_distance)
        else:
            best_distance = None

        cell = ViewCell(len(self._cells), latent, pose_coords, frame)
        self._append(cell)
        logger.debug(f"View cell {cell.id} created at frame {frame}, coords {cell.linked_pose_coords}")
        return ViewMatch(cell.id, True, best_distance)

    def _append(self, cell: ViewCell) -> None:
        unit = cell.template / np.linalg.norm(cell.template)
        if self._cells and unit.shape[0] != self._unit.shape[1]:
            raise ValidationError(f"template dimension {unit.shape[0]} != {self._unit.shape[1]}")
        self._unit = unit[None, :] if not self._cells else np.vstack([self._unit, unit[None, :]])
        self._cells.append(cell)

    # ---------------------------
    # Serialization
    # ---------------------------

    def to_dict(self) -> Dict:
        return {
            "match_threshold": self.match_threshold,
            "cells": [
                {
                    "id": cell.id,
                    "template": cell.template.tolist(),
                    "linked_pose_coords": list(cell.linked_pose_coords),
                    "created_at": cell.created_at,
                }
                for cell in self._cells
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "ViewCellStore":
        store = cls(float(data["match_threshold"]))
        for expected_id, entry in enumerate(data["cells"]):
            if int(entry["id"]) != expected_id:
                raise ValidationError(f"view cell ids must be dense, got {entry['id']} at position {expected_id}")
            store._append(ViewCell(
                id=expected_id,
                template=np.asarray(entry["template"], dtype=np.float64),
                linked_pose_coords=tuple(entry["linked_pose_coords"]),
                created_at=int(entry["created_at"]),
            ))
        return store


def active_injection(cell: ViewCell, cfg: CANConfig) -> InjectionRequest:
    return InjectionRequest(coords=cell.linked_pose_coords, energy=cfg.injection_energy)
