"""Record types, severity labels and the unified per-event feature schema."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

# NYC bounding box; coordinates outside it are treated as missing.
LAT_RANGE = (40.4, 41.0)
LON_RANGE = (-74.3, -73.6)

YOUTH_MAX_AGE = 25
SENIOR_MIN_AGE = 65

# Sentinel stored in the dense value vector wherever the missing mask is set.
MISSING_SENTINEL = -1.0


class ValidationError(ValueError):
    """Input violates a record or schema invariant."""


class SeverityLabel(enum.IntEnum):
    NoInjury = 0
    Injury = 1
    Fatal = 2


class Borough(str, enum.Enum):
    Bronx = "Bronx"
    Brooklyn = "Brooklyn"
    Manhattan = "Manhattan"
    Queens = "Queens"
    StatenIsland = "StatenIsland"
    Unknown = "Unknown"


class Role(str, enum.Enum):
    Driver = "Driver"
    Passenger = "Passenger"
    Pedestrian = "Pedestrian"
    Cyclist = "Cyclist"
    Other = "Other"


class InjuryStatus(str, enum.Enum):
    Uninjured = "Uninjured"
    Injured = "Injured"
    Killed = "Killed"
    Unknown = "Unknown"


class SafetyEquipment(str, enum.Enum):
    Present = "Present"
    None_ = "None"
    Unknown = "Unknown"


class VehicleCategory(str, enum.Enum):
    PassengerVehicle = "PassengerVehicle"
    SUV = "SUV"
    Taxi = "Taxi"
    Bus = "Bus"
    Truck = "Truck"
    Motorcycle = "Motorcycle"
    Bicycle = "Bicycle"
    Other = "Other"


class FeatureGroup(str, enum.Enum):
    HumanComposition = "HumanComposition"
    SafetyBehavior = "SafetyBehavior"
    VehicleComposition = "VehicleComposition"
    SpatioTemporal = "SpatioTemporal"


class FeatureKind(str, enum.Enum):
    Numeric = "Numeric"
    Binary = "Binary"
    CategoricalCode = "CategoricalCode"


def _in_box(lat: float | None, lon: float | None) -> bool:
    return (
        lat is not None
        and lon is not None
        and LAT_RANGE[0] <= lat <= LAT_RANGE[1]
        and LON_RANGE[0] <= lon <= LON_RANGE[1]
    )


@dataclass(frozen=True)
class RawCrashRecord:
    collision_id: int
    timestamp: datetime
    borough: Borough = Borough.Unknown
    zip_code: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    contributing_factors: tuple[str, ...] = ()
    injured_count: int = 0
    killed_count: int = 0

    def __post_init__(self):
        if self.injured_count < 0 or self.killed_count < 0:
            raise ValidationError("injured/killed counts must be non-negative")
        # a coordinate pair is either fully inside the box or fully missing
        if not _in_box(self.latitude, self.longitude):
            object.__setattr__(self, "latitude", None)
            object.__setattr__(self, "longitude", None)
        if self.zip_code is not None and not (len(self.zip_code) == 5 and self.zip_code.isdigit()):
            object.__setattr__(self, "zip_code", None)
        object.__setattr__(self, "contributing_factors", tuple(self.contributing_factors))


@dataclass(frozen=True)
class RawPersonRecord:
    collision_id: int
    role: Role = Role.Other
    age: int | None = None
    sex: str | None = None
    injury_status: InjuryStatus = InjuryStatus.Unknown
    safety_equipment: SafetyEquipment = SafetyEquipment.Unknown
    ejected: bool | None = None
    airbag_deployed: bool | None = None

    def __post_init__(self):
        if self.age is not None and not 0 <= self.age <= 120:
            object.__setattr__(self, "age", None)
        if not isinstance(self.role, Role):
            object.__setattr__(self, "role", Role.Other)


@dataclass(frozen=True)
class RawVehicleRecord:
    collision_id: int
    vehicle_category: VehicleCategory = VehicleCategory.Other
    registration_state: str | None = None
    model_year: int | None = None


def derive_label(injured_count: int, killed_count: int) -> SeverityLabel:
    """Map event casualty counts to the three-level severity label."""
    if injured_count < 0 or killed_count < 0:
        raise ValidationError(
            f"counts must be non-negative, got injured={injured_count} killed={killed_count}"
        )
    if killed_count >= 1:
        return SeverityLabel.Fatal
    if injured_count >= 1:
        return SeverityLabel.Injury
    return SeverityLabel.NoInjury


@dataclass(frozen=True)
class FeatureDescriptor:
    name: str
    group: FeatureGroup
    kind: FeatureKind

    def to_dict(self) -> dict:
        return {"name": self.name, "group": self.group.value, "kind": self.kind.value}


def hash_descriptors(features: Sequence[FeatureDescriptor]) -> int:
    payload = json.dumps([f.to_dict() for f in features], separators=(",", ":"), sort_keys=True)
    digest = hashlib.blake2b(payload.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDescriptor, ...]
    schema_hash: int = field(init=False)

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValidationError("feature names must be unique")
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "schema_hash", hash_descriptors(self.features))

    def __len__(self) -> int:
        return len(self.features)

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.features]

    @property
    def hash_hex(self) -> str:
        return f"{self.schema_hash:016x}"

    def index(self, name: str) -> int:
        return self._index_map()[name]

    def _index_map(self) -> dict[str, int]:
        return {f.name: i for i, f in enumerate(self.features)}

    def indices(self, kind: FeatureKind) -> list[int]:
        return [i for i, f in enumerate(self.features) if f.kind is kind]

    def to_json(self) -> str:
        return json.dumps(
            {
                "version": 1,
                "features": [f.to_dict() for f in self.features],
                "schema_hash": self.hash_hex,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> FeatureSchema:
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise ValidationError(f"unsupported schema version {doc.get('version')!r}")
        schema = cls(
            tuple(
                FeatureDescriptor(f["name"], FeatureGroup(f["group"]), FeatureKind(f["kind"]))
                for f in doc["features"]
            )
        )
        if "schema_hash" in doc and doc["schema_hash"] != schema.hash_hex:
            raise ValidationError(
                f"schema_hash mismatch: file says {doc['schema_hash']}, content hashes to {schema.hash_hex}"
            )
        return schema


_N, _B, _C = FeatureKind.Numeric, FeatureKind.Binary, FeatureKind.CategoricalCode
_H, _S, _V, _T = (
    FeatureGroup.HumanComposition,
    FeatureGroup.SafetyBehavior,
    FeatureGroup.VehicleComposition,
    FeatureGroup.SpatioTemporal,
)

_CANONICAL = (
    ("NUM_PERSON_RECORDS", _H, _N),
    ("ROLE_DRIVER", _H, _N),
    ("ROLE_PASSENGER", _H, _N),
    ("ROLE_PEDESTRIAN", _H, _N),
    ("ROLE_CYCLIST", _H, _N),
    ("AVG_AGE", _H, _N),
    ("PCT_YOUTH", _H, _N),
    ("PCT_SENIOR", _H, _N),
    ("PCT_WITH_SAFETY_EQUIPMENT", _S, _N),
    ("PCT_NO_SAFETY_EQUIPMENT", _S, _N),
    ("PCT_EJECTED", _S, _N),
    ("PCT_AIRBAG_DEPLOYED", _S, _N),
    ("NUM_VEHICLE_RECORDS", _V, _N),
    ("PASSENGER_VEHICLE", _V, _N),
    ("SUV", _V, _N),
    ("TAXI", _V, _N),
    ("BUS", _V, _N),
    ("TRUCK", _V, _N),
    ("MOTORCYCLE", _V, _N),
    ("BICYCLE", _V, _N),
    ("OTHER_VEHICLE", _V, _N),
    ("PCT_OUT_OF_STATE", _V, _N),
    ("VEH_AGE_NEW", _V, _N),
    ("VEH_AGE_MID", _V, _N),
    ("VEH_AGE_OLD", _V, _N),
    ("CRASH_HOUR", _T, _C),
    ("DAY_OF_WEEK", _T, _C),
    ("IS_WEEKEND", _T, _B),
    ("LATITUDE", _T, _N),
    ("LONGITUDE", _T, _N),
    ("ZIP_CODE", _T, _C),
    ("BORO_BRONX", _T, _B),
    ("BORO_BROOKLYN", _T, _B),
    ("BORO_MANHATTAN", _T, _B),
    ("BORO_QUEENS", _T, _B),
    ("BORO_STATEN", _T, _B),
)

ROLE_FEATURES = ("ROLE_DRIVER", "ROLE_PASSENGER", "ROLE_PEDESTRIAN", "ROLE_CYCLIST")
VEHICLE_FEATURES = (
    "PASSENGER_VEHICLE",
    "SUV",
    "TAXI",
    "BUS",
    "TRUCK",
    "MOTORCYCLE",
    "BICYCLE",
    "OTHER_VEHICLE",
)
SHARE_FEATURES = (
    ROLE_FEATURES
    + VEHICLE_FEATURES
    + (
        "PCT_YOUTH",
        "PCT_SENIOR",
        "PCT_WITH_SAFETY_EQUIPMENT",
        "PCT_NO_SAFETY_EQUIPMENT",
        "PCT_EJECTED",
        "PCT_AIRBAG_DEPLOYED",
        "PCT_OUT_OF_STATE",
        "VEH_AGE_NEW",
        "VEH_AGE_MID",
        "VEH_AGE_OLD",
    )
)
BOROUGH_FEATURES = {
    Borough.Bronx: "BORO_BRONX",
    Borough.Brooklyn: "BORO_BROOKLYN",
    Borough.Manhattan: "BORO_MANHATTAN",
    Borough.Queens: "BORO_QUEENS",
    Borough.StatenIsland: "BORO_STATEN",
}


@lru_cache(maxsize=1)
def canonical_schema() -> FeatureSchema:
    """The fixed, ordered per-event feature schema shared by every stage."""
    return FeatureSchema(tuple(FeatureDescriptor(n, g, k) for n, g, k in _CANONICAL))


@dataclass(frozen=True)
class EventFeatureRow:
    collision_id: int
    timestamp: datetime
    label: SeverityLabel
    values: np.ndarray
    missing_mask: np.ndarray
    contributing_factors: tuple[str, ...] = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).copy()
        mask = np.asarray(self.missing_mask, dtype=bool).copy()
        values.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "missing_mask", mask)
        object.__setattr__(self, "label", SeverityLabel(self.label))

    def __getitem__(self, name: str) -> float:
        return float(self.values[canonical_schema().index(name)])

    def is_missing(self, name: str) -> bool:
        return bool(self.missing_mask[canonical_schema().index(name)])


def check_row_invariants(values: np.ndarray, mask: np.ndarray, schema: FeatureSchema | None = None) -> None:
    """Raise ValidationError when a feature vector breaks a row invariant."""
    schema = schema or canonical_schema()
    idx = schema._index_map()
    eps = 1e-9
    for name in SHARE_FEATURES:
        v = values[idx[name]]
        if not mask[idx[name]] and not (-eps <= v <= 1 + eps):
            raise ValidationError(f"{name}={v} outside [0, 1]")
    if sum(values[idx[n]] for n in ROLE_FEATURES) > 1 + eps:
        raise ValidationError("ROLE_* shares sum above 1")
    if sum(values[idx[n]] for n in VEHICLE_FEATURES) > 1 + eps:
        raise ValidationError("vehicle category shares sum above 1")
    hour, dow, wk = values[idx["CRASH_HOUR"]], values[idx["DAY_OF_WEEK"]], values[idx["IS_WEEKEND"]]
    if not 0 <= hour <= 23:
        raise ValidationError(f"CRASH_HOUR={hour} outside [0, 23]")
    if not 0 <= dow <= 6:
        raise ValidationError(f"DAY_OF_WEEK={dow} outside [0, 6]")
    if bool(wk) != (dow in (5, 6)):
        raise ValidationError("IS_WEEKEND inconsistent with DAY_OF_WEEK")


def feature_names(schema: FeatureSchema | None = None) -> list[str]:
    return (schema or canonical_schema()).names


def resolve(names: Iterable[str], schema: FeatureSchema | None = None) -> list[int]:
    schema = schema or canonical_schema()
    return [schema.index(n) for n in names]
