"""CSV ingestion, cleaning and per-collision aggregation into the unified feature schema."""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .schema import (
    BOROUGH_FEATURES,
    MISSING_SENTINEL,
    ROLE_FEATURES,
    SENIOR_MIN_AGE,
    YOUTH_MAX_AGE,
    Borough,
    EventFeatureRow,
    InjuryStatus,
    RawCrashRecord,
    RawPersonRecord,
    RawVehicleRecord,
    Role,
    SafetyEquipment,
    ValidationError,
    VehicleCategory,
    canonical_schema,
    derive_label,
)

log = logging.getLogger(__name__)


class IngestError(RuntimeError):
    """Fatal ingest failure (unreadable file, missing mandatory header)."""


class TableKind(str, enum.Enum):
    Crash = "Crash"
    Person = "Person"
    Vehicle = "Vehicle"


# semantic field -> default NYC Open Data header
DEFAULT_HEADERS = {
    TableKind.Crash: {
        "collision_id": "COLLISION_ID",
        "date": "CRASH DATE",
        "time": "CRASH TIME",
        "borough": "BOROUGH",
        "zip_code": "ZIP CODE",
        "latitude": "LATITUDE",
        "longitude": "LONGITUDE",
        "injured_count": "NUMBER OF PERSONS INJURED",
        "killed_count": "NUMBER OF PERSONS KILLED",
        "contributing_factor_1": "CONTRIBUTING FACTOR VEHICLE 1",
        "contributing_factor_2": "CONTRIBUTING FACTOR VEHICLE 2",
    },
    TableKind.Person: {
        "collision_id": "COLLISION_ID",
        "role": "PED_ROLE",
        "age": "PERSON_AGE",
        "sex": "PERSON_SEX",
        "injury_status": "PERSON_INJURY",
        "safety_equipment": "SAFETY_EQUIPMENT",
        "ejected": "EJECTION",
    },
    TableKind.Vehicle: {
        "collision_id": "COLLISION_ID",
        "vehicle_category": "VEHICLE_TYPE",
        "registration_state": "STATE_REGISTRATION",
        "model_year": "VEHICLE_YEAR",
    },
}

_MANDATORY = {
    TableKind.Crash: ("collision_id", "injured_count", "killed_count"),
    TableKind.Person: ("collision_id",),
    TableKind.Vehicle: ("collision_id",),
}


@dataclass(frozen=True)
class ColumnMapping:
    table_kind: TableKind
    headers: dict[str, str]

    def __post_init__(self):
        object.__setattr__(self, "table_kind", TableKind(self.table_kind))
        if "collision_id" not in self.headers:
            raise ValidationError(f"{self.table_kind.value} mapping lacks collision_id")
        if self.table_kind is TableKind.Crash and not (
            "timestamp" in self.headers or "date" in self.headers
        ):
            raise ValidationError("crash mapping needs either 'timestamp' or 'date' (+ optional 'time')")

    @classmethod
    def default(cls, kind: TableKind | str) -> ColumnMapping:
        kind = TableKind(kind)
        return cls(kind, dict(DEFAULT_HEADERS[kind]))

    def mandatory_fields(self) -> list[str]:
        fields = list(_MANDATORY[self.table_kind])
        if self.table_kind is TableKind.Crash:
            fields.append("timestamp" if "timestamp" in self.headers else "date")
        return fields


@dataclass
class IngestReport:
    rows_read: int = 0
    rows_accepted: int = 0
    rows_dropped: int = 0
    drop_reasons: Counter = field(default_factory=Counter)

    def drop(self, reason: str) -> None:
        self.rows_dropped += 1
        self.drop_reasons[reason] += 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["drop_reasons"] = dict(sorted(self.drop_reasons.items()))
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class _Drop(Exception):
    def __init__(self, reason: str):
        self.reason = reason


_TS_FORMATS = (
    "%Y-%m-%dT%H:%M:%S.%f",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%m/%d/%Y %H:%M:%S",
    "%m/%d/%Y %H:%M",
    "%Y-%m-%d",
    "%m/%d/%Y",
)


def parse_timestamp(text: str) -> datetime:
    text = text.strip()
    for fmt in _TS_FORMATS:
        try:
            return datetime.strptime(text, fmt).replace(second=0, microsecond=0)
        except ValueError:
            continue
    raise ValueError(f"unparseable timestamp {text!r}")


def _opt_float(text: str | None) -> float | None:
    if text is None or not text.strip():
        return None
    try:
        v = float(text)
    except ValueError:
        return None
    return v if math.isfinite(v) else None


def _opt_int(text: str | None) -> int | None:
    v = _opt_float(text)
    if v is None or v != int(v):
        return None
    return int(v)


def _collision_id(text: str | None) -> int:
    if text is None or not text.strip():
        raise _Drop("missing_collision_id")
    v = _opt_int(text)
    if v is None or v < 0:
        raise _Drop("malformed_numeric")
    return v


def _count(text: str | None) -> int:
    v = _opt_int(text)
    if v is None or v < 0:
        raise _Drop("malformed_numeric")
    return v


def parse_borough(text: str | None) -> Borough:
    t = (text or "").strip().lower().replace(" ", "").replace("_", "")
    return {
        "bronx": Borough.Bronx,
        "brooklyn": Borough.Brooklyn,
        "manhattan": Borough.Manhattan,
        "queens": Borough.Queens,
        "statenisland": Borough.StatenIsland,
    }.get(t, Borough.Unknown)


def parse_role(text: str | None) -> Role:
    t = (text or "").strip().lower()
    if "driver" in t:
        return Role.Driver
    if "passenger" in t:
        return Role.Passenger
    if "pedestrian" in t:
        return Role.Pedestrian
    if "cycl" in t or "bicyc" in t:
        return Role.Cyclist
    return Role.Other


def parse_injury(text: str | None) -> InjuryStatus:
    t = (text or "").strip().lower()
    if "kill" in t:
        return InjuryStatus.Killed
    if t in ("unspecified", "uninjured", "none", "not injured", "no injury"):
        return InjuryStatus.Uninjured
    if "injur" in t:
        return InjuryStatus.Injured
    return InjuryStatus.Unknown


def parse_safety(text: str | None) -> SafetyEquipment:
    t = (text or "").strip().lower()
    if not t or t in ("unknown", "other", "-"):
        return SafetyEquipment.Unknown
    if t == "none":
        return SafetyEquipment.None_
    return SafetyEquipment.Present


def parse_ejected(text: str | None) -> bool | None:
    t = (text or "").strip().lower()
    if t in ("not ejected", "trapped", "no", "false", "0"):
        return False
    if "eject" in t or t in ("yes", "true", "1"):
        return True
    return None


def parse_flag(text: str | None) -> bool | None:
    t = (text or "").strip().lower()
    if t in ("yes", "y", "true", "1", "deployed"):
        return True
    if t in ("no", "n", "false", "0", "not deployed"):
        return False
    return None


_VEHICLE_KEYWORDS = (
    (VehicleCategory.SUV, ("sport utility", "suv", "station wagon/sport")),
    (VehicleCategory.Taxi, ("taxi", "cab", "livery")),
    (VehicleCategory.Bus, ("bus",)),
    (VehicleCategory.Motorcycle, ("motorcycle", "moped", "motorbike", "scooter")),
    (VehicleCategory.Bicycle, ("bike", "bicycle")),
    (VehicleCategory.Truck, ("truck", "tractor", "dump", "flat bed", "tanker", "pick-up")),
    (VehicleCategory.PassengerVehicle, ("sedan", "passenger", "4 dr", "2 dr", "convertible", "wagon", "coupe")),
)


def parse_vehicle_category(text: str | None) -> VehicleCategory:
    t = (text or "").strip().lower()
    for cat, keys in _VEHICLE_KEYWORDS:
        if any(k in t for k in keys):
            return cat
    return VehicleCategory.Other


def _crash_from_row(row: dict, m: dict[str, str]) -> RawCrashRecord:
    cid = _collision_id(row.get(m["collision_id"]))
    try:
        if "timestamp" in m:
            ts = parse_timestamp(row[m["timestamp"]])
        else:
            date = row[m["date"]].strip()
            time = row.get(m["time"], "").strip() if "time" in m else ""
            ts = parse_timestamp(f"{date.split(' ')[0].split('T')[0]} {time}" if time else date)
    except (ValueError, KeyError, AttributeError):
        raise _Drop("unparseable_timestamp") from None
    lat = _opt_float(row.get(m["latitude"])) if "latitude" in m else None
    lon = _opt_float(row.get(m["longitude"])) if "longitude" in m else None
    if (lat is not None and abs(lat) > 90) or (lon is not None and abs(lon) > 180):
        raise _Drop("out_of_range_coordinate")
    zip_code = None
    if "zip_code" in m:
        z = _opt_int(row.get(m["zip_code"]))
        zip_code = f"{z:05d}" if z is not None and 0 <= z <= 99999 else None
    factors = tuple(
        row[h].strip()
        for key, h in sorted(m.items())
        if key.startswith("contributing_factor") and row.get(h) and row[h].strip()
    )
    return RawCrashRecord(
        collision_id=cid,
        timestamp=ts,
        borough=parse_borough(row.get(m["borough"])) if "borough" in m else Borough.Unknown,
        zip_code=zip_code,
        latitude=lat,
        longitude=lon,
        contributing_factors=factors,
        injured_count=_count(row.get(m["injured_count"])),
        killed_count=_count(row.get(m["killed_count"])),
    )


def _person_from_row(row: dict, m: dict[str, str]) -> RawPersonRecord:
    get = lambda k: row.get(m[k]) if k in m else None  # noqa: E731
    age = _opt_int(get("age"))
    sex = (get("sex") or "").strip().upper() or None
    return RawPersonRecord(
        collision_id=_collision_id(get("collision_id")),
        role=parse_role(get("role")),
        age=age,
        sex=sex if sex in ("M", "F", "U", "X") else None,
        injury_status=parse_injury(get("injury_status")),
        safety_equipment=parse_safety(get("safety_equipment")),
        ejected=parse_ejected(get("ejected")),
        airbag_deployed=parse_flag(get("airbag_deployed")),
    )


def _vehicle_from_row(row: dict, m: dict[str, str]) -> RawVehicleRecord:
    get = lambda k: row.get(m[k]) if k in m else None  # noqa: E731
    state = (get("registration_state") or "").strip().upper()
    return RawVehicleRecord(
        collision_id=_collision_id(get("collision_id")),
        vehicle_category=parse_vehicle_category(get("vehicle_category")),
        registration_state=state if len(state) == 2 and state.isalpha() else None,
        model_year=_opt_int(get("model_year")),
    )


_BUILDERS = {
    TableKind.Crash: _crash_from_row,
    TableKind.Person: _person_from_row,
    TableKind.Vehicle: _vehicle_from_row,
}


def parse_table(path, kind: TableKind | str, mapping: ColumnMapping | None = None):
    """Read one CSV snapshot into typed records, counting every dropped row by reason."""
    kind = TableKind(kind)
    mapping = mapping or ColumnMapping.default(kind)
    if mapping.table_kind is not kind:
        raise IngestError(f"mapping is for {mapping.table_kind.value}, table is {kind.value}")
    path = Path(path)
    try:
        fh = path.open(newline="", encoding="utf-8-sig")
    except OSError as e:
        raise IngestError(f"cannot read {path}: {e}") from e
    report = IngestReport()
    records = []
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise IngestError(f"{path} has no header row")
        missing = [mapping.headers[f] for f in mapping.mandatory_fields() if mapping.headers[f] not in header]
        if missing:
            raise IngestError(f"{path}: mandatory header(s) missing: {missing}")
        headers = {k: h for k, h in mapping.headers.items() if h in header}
        build = _BUILDERS[kind]
        seen: set[int] = set()
        for row in reader:
            report.rows_read += 1
            try:
                rec = build(row, headers)
                if kind is TableKind.Crash:
                    if rec.collision_id in seen:
                        raise _Drop("duplicate_collision_id")
                    seen.add(rec.collision_id)
            except _Drop as d:
                report.drop(d.reason)
                continue
            except ValidationError:
                report.drop("invalid_record")
                continue
            records.append(rec)
            report.rows_accepted += 1
    log.info("parsed %s: %d accepted, %d dropped", path.name, report.rows_accepted, report.rows_dropped)
    return records, report


def _share(num: int, den: int) -> float:
    return num / den if den else 0.0


def aggregate_persons(persons: Sequence[RawPersonRecord]) -> tuple[dict[str, float], set[str]]:
    """Human-composition and safety-behaviour features for one collision.

    Returns (values, missing) where ``missing`` names features whose value is a sentinel.
    """
    n = len(persons)
    roles = Counter(p.role for p in persons)
    out = {"NUM_PERSON_RECORDS": float(n)}
    for name, role in zip(ROLE_FEATURES, (Role.Driver, Role.Passenger, Role.Pedestrian, Role.Cyclist)):
        out[name] = _share(roles[role], n)

    ages = sorted(p.age for p in persons if p.age is not None)
    missing: set[str] = set()
    if ages:
        out["AVG_AGE"] = sum(ages) / len(ages)
        out["PCT_YOUTH"] = sum(a <= YOUTH_MAX_AGE for a in ages) / len(ages)
        out["PCT_SENIOR"] = sum(a >= SENIOR_MIN_AGE for a in ages) / len(ages)
    else:
        out["AVG_AGE"] = MISSING_SENTINEL
        out["PCT_YOUTH"] = out["PCT_SENIOR"] = 0.0
        missing.add("AVG_AGE")

    safety = [p.safety_equipment for p in persons if p.safety_equipment is not SafetyEquipment.Unknown]
    out["PCT_WITH_SAFETY_EQUIPMENT"] = _share(sum(s is SafetyEquipment.Present for s in safety), len(safety))
    out["PCT_NO_SAFETY_EQUIPMENT"] = _share(sum(s is SafetyEquipment.None_ for s in safety), len(safety))
    ejected = [p.ejected for p in persons if p.ejected is not None]
    out["PCT_EJECTED"] = _share(sum(ejected), len(ejected))
    airbags = [p.airbag_deployed for p in persons if p.airbag_deployed is not None]
    out["PCT_AIRBAG_DEPLOYED"] = _share(sum(airbags), len(airbags))
    return out, missing


_CATEGORY_FEATURES = {
    VehicleCategory.PassengerVehicle: "PASSENGER_VEHICLE",
    VehicleCategory.SUV: "SUV",
    VehicleCategory.Taxi: "TAXI",
    VehicleCategory.Bus: "BUS",
    VehicleCategory.Truck: "TRUCK",
    VehicleCategory.Motorcycle: "MOTORCYCLE",
    VehicleCategory.Bicycle: "BICYCLE",
    VehicleCategory.Other: "OTHER_VEHICLE",
}


def aggregate_vehicles(vehicles: Sequence[RawVehicleRecord], crash_year: int) -> dict[str, float]:
    n = len(vehicles)
    cats = Counter(v.vehicle_category for v in vehicles)
    out = {"NUM_VEHICLE_RECORDS": float(n)}
    for cat, name in _CATEGORY_FEATURES.items():
        out[name] = _share(cats[cat], n)
    states = [v.registration_state for v in vehicles]
    out["PCT_OUT_OF_STATE"] = _share(sum(s is not None and s != "NY" for s in states), n)

    # model years outside [1900, crash_year + 1] are treated as unknown
    ages = [
        crash_year - v.model_year
        for v in vehicles
        if v.model_year is not None and 1900 <= v.model_year <= crash_year + 1
    ]
    out["VEH_AGE_NEW"] = _share(sum(a < 5 for a in ages), len(ages))
    out["VEH_AGE_MID"] = _share(sum(5 <= a <= 15 for a in ages), len(ages))
    out["VEH_AGE_OLD"] = _share(sum(a > 15 for a in ages), len(ages))
    return out


def build_event_row(
    crash: RawCrashRecord,
    persons: Sequence[RawPersonRecord] = (),
    vehicles: Sequence[RawVehicleRecord] = (),
) -> EventFeatureRow:
    schema = canonical_schema()
    feats, missing = aggregate_persons(persons)
    feats.update(aggregate_vehicles(vehicles, crash.timestamp.year))

    ts = crash.timestamp
    dow = ts.weekday()  # Monday=0
    feats["CRASH_HOUR"] = float(ts.hour)
    feats["DAY_OF_WEEK"] = float(dow)
    feats["IS_WEEKEND"] = float(dow >= 5)
    if crash.latitude is None:
        feats["LATITUDE"] = feats["LONGITUDE"] = MISSING_SENTINEL
        missing |= {"LATITUDE", "LONGITUDE"}
    else:
        feats["LATITUDE"], feats["LONGITUDE"] = crash.latitude, crash.longitude
    if crash.zip_code is None:
        feats["ZIP_CODE"] = MISSING_SENTINEL
        missing.add("ZIP_CODE")
    else:
        feats["ZIP_CODE"] = float(int(crash.zip_code))
    for boro, name in BOROUGH_FEATURES.items():
        feats[name] = float(crash.borough is boro)

    values = np.array([feats[n] for n in schema.names], dtype=np.float64)
    mask = np.array([n in missing for n in schema.names], dtype=bool)
    return EventFeatureRow(
        collision_id=crash.collision_id,
        timestamp=ts,
        label=derive_label(crash.injured_count, crash.killed_count),
        values=values,
        missing_mask=mask,
        contributing_factors=crash.contributing_factors,
    )


@dataclass
class JoinReport:
    events: int = 0
    persons_joined: int = 0
    vehicles_joined: int = 0
    orphan_persons: int = 0
    orphan_vehicles: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def join_tables(
    crashes: Iterable[RawCrashRecord],
    persons: Iterable[RawPersonRecord],
    vehicles: Iterable[RawVehicleRecord],
) -> tuple[list[EventFeatureRow], JoinReport]:
    """One row per crash; person/vehicle records without a matching crash are counted as orphans."""
    crashes = list(crashes)
    by_id_p: dict[int, list] = defaultdict(list)
    by_id_v: dict[int, list] = defaultdict(list)
    for p in persons:
        by_id_p[p.collision_id].append(p)
    for v in vehicles:
        by_id_v[v.collision_id].append(v)
    ids = {c.collision_id for c in crashes}
    report = JoinReport(events=len(crashes))
    report.orphan_persons = sum(len(v) for k, v in by_id_p.items() if k not in ids)
    report.orphan_vehicles = sum(len(v) for k, v in by_id_v.items() if k not in ids)
    rows = []
    for c in crashes:
        ps, vs = by_id_p.get(c.collision_id, []), by_id_v.get(c.collision_id, [])
        report.persons_joined += len(ps)
        report.vehicles_joined += len(vs)
        rows.append(build_event_row(c, ps, vs))
    return rows, report
