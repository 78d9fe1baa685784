"""Maximum fusion of deformation fields from multiple moving modalities.

When two preoperative modalities are registered to the same fixed image,
their fields are merged voxelwise by keeping the displacement vector with
the largest Euclidean norm, so the modality that sees the strongest motion
at a location wins. Ties go to the lowest modality index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import DisplacementField

__all__ = ["ModalityFieldSet", "max_fuse"]


@dataclass(eq=False)
class ModalityFieldSet:
    """Displacement fields from 1+ modalities sharing one grid."""

    fields: list[DisplacementField]
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.fields) < 1:
            raise ValueError("modality set needs at least one field")
        first = self.fields[0]
        for i, f in enumerate(self.fields[1:], start=1):
            if f.dims != first.dims:
                raise ValueError(f"field {i} dims {f.dims} differ from {first.dims}")
            if f.spacing != first.spacing:
                raise ValueError(
                    f"field {i} spacing {f.spacing} differs from {first.spacing}"
                )
        if not self.labels:
            self.labels = [f"modality-{i}" for i in range(len(self.fields))]
        if len(self.labels) != len(self.fields):
            raise ValueError("one label per field required")


def max_fuse(field_set: ModalityFieldSet, rule: str = "norm") -> DisplacementField:
    """Fuse per-modality fields into one.

    The only implemented rule, "norm", selects at every voxel the whole
    input vector with the largest Euclidean norm; componentwise mixing is
    deliberately avoided because it can produce displacements no modality
    proposed. A single-field set is returned unchanged.
    """
    if rule != "norm":
        raise ValueError(f"unknown fusion rule {rule!r}")
    fields = field_set.fields
    if len(fields) == 1:
        return DisplacementField(fields[0].vectors.copy(), fields[0].spacing)
    stacked = np.stack([f.vectors for f in fields], axis=0)
    norms = np.sqrt((stacked**2).sum(axis=-1))
    # argmax returns the first maximum, which is the lowest modality index.
    winner = norms.argmax(axis=0)
    fused = np.take_along_axis(stacked, winner[None, ..., None], axis=0)[0]
    return DisplacementField(fused, fields[0].spacing)
