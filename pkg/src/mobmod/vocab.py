"""Shared token vocabulary over the four mobility modalities.

Raw per-modality ids (context, space type, building, indoor location) may
collide numerically, so the shared vocabulary assigns each modality a
disjoint id range. Id 0 is PAD; each modality's range starts with its own
OFF token (raw id 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

MODALITIES = ("context", "space_type", "building", "location")

OFF_LABEL = "OFF"
PAD_ID = 0

CONTEXT_LABELS = (OFF_LABEL, "Work", "Home")

BUILDING_TYPES = (
    "Educational",
    "Dorm",
    "Dining",
    "Admin",
    "Library",
    "Recreation",
    "StudentUnion",
    "ResearchLab",
    "HealthCenter",
    "Athletics",
    "Parking",
    "Services",
    "Other",
)


@dataclass(frozen=True)
class Vocabulary:
    """Per-modality label catalogs plus the shared id layout derived from them.

    labels[m][raw_id] gives the label string for modality m; raw id 0 is
    always OFF. Shared ids are PAD (0) followed by the four catalogs laid
    out back to back, so ranges are disjoint and cover [0, size).
    """

    labels: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if len(self.labels) != len(MODALITIES):
            raise ValueError("expected one catalog per modality")
        for cat in self.labels:
            if not cat or cat[0] != OFF_LABEL:
                raise ValueError("each catalog must start with OFF")
            if len(set(cat)) != len(cat):
                raise ValueError("duplicate label inside a catalog")

    @property
    def size(self) -> int:
        return 1 + sum(len(cat) for cat in self.labels)

    def range_of(self, modality: int) -> tuple[int, int]:
        """Half-open shared-id range [start, end) of one modality."""
        start = 1 + sum(len(self.labels[m]) for m in range(modality))
        return start, start + len(self.labels[modality])

    def off_raw(self, modality: int) -> int:
        return 0

    def off_shared(self, modality: int) -> int:
        return self.range_of(modality)[0]

    def raw_id(self, modality: int, label: str) -> int:
        try:
            return self.labels[modality].index(label)
        except ValueError:
            raise KeyError(f"unknown {MODALITIES[modality]} label: {label!r}") from None

    def encode(self, modality: int, raw: int) -> int:
        start, end = self.range_of(modality)
        shared = start + raw
        if raw < 0 or shared >= end:
            raise ValueError(
                f"unknown token: raw id {raw} not in the {MODALITIES[modality]} catalog"
            )
        return shared

    def decode(self, shared: int) -> tuple[int, int]:
        """Shared id -> (modality, raw id)."""
        if shared == PAD_ID:
            raise ValueError("PAD has no modality")
        for m in range(len(MODALITIES)):
            start, end = self.range_of(m)
            if start <= shared < end:
                return m, shared - start
        raise ValueError(f"shared id {shared} outside the vocabulary")

    def label(self, modality: int, raw: int) -> str:
        return self.labels[modality][raw]

    # -- construction and persistence -------------------------------------

    @classmethod
    def from_ap_map(cls, ap_map) -> "Vocabulary":
        """Derive catalogs from an AP map (dict ap_id -> ApRecord).

        Zone ids must identify a single building: the builder and the
        consistency invariants key locations by zone alone.
        """
        zone_owner: dict[str, str] = {}
        buildings: set[str] = set()
        for rec in ap_map.values():
            buildings.add(rec.building_name)
            owner = zone_owner.get(rec.zone)
            if owner is not None and owner != rec.building_name:
                raise ValueError(
                    f"zone {rec.zone!r} appears in buildings {owner!r} and "
                    f"{rec.building_name!r}; zone ids must be campus-unique"
                )
            zone_owner[rec.zone] = rec.building_name
        return cls(
            labels=(
                CONTEXT_LABELS,
                (OFF_LABEL,) + BUILDING_TYPES,
                (OFF_LABEL,) + tuple(sorted(buildings)),
                (OFF_LABEL,) + tuple(sorted(zone_owner)),
            )
        )

    def to_json(self) -> dict:
        return {name: list(cat) for name, cat in zip(MODALITIES, self.labels)}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        return cls(labels=tuple(tuple(obj[name]) for name in MODALITIES))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        return cls.from_json(json.loads(Path(path).read_text()))
