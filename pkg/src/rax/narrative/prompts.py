"""Event serialisation, probability augmentation, risk gating and label parsing."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from ..schema import BOROUGH_FEATURES, EventFeatureRow, SeverityLabel

DAY_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday")

TASK_TEXT = (
    "Classify the severity of this crash as no injury, injury or fatal. "
    "Briefly explain which factors drive your prediction and suggest one policy intervention. "
    "Answer as: Severity: <class>. Explanation: <text>. Policy: <text>."
)

SYSTEM_TEXT = "You are a road-safety analyst. Answer concisely and follow the requested format."


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class EventPrompt:
    event_text: str
    task_text: str = TASK_TEXT
    augmentation: str | None = None

    def render(self) -> str:
        parts = [self.event_text]
        if self.augmentation:
            parts.append(self.augmentation)
        parts.append(self.task_text)
        return "\n".join(parts)


def _pct(v: float) -> str:
    return f"{100.0 * v:.1f}%"


def serialize_event(row: EventFeatureRow, factors: Sequence[str] | None = None) -> str:
    """Deterministic field summary of one event. Missing fields are left out entirely."""
    factors = row.contributing_factors if factors is None else factors

    def val(name):
        return None if row.is_missing(name) else row[name]

    out = []
    borough = next((b.value for b, f in BOROUGH_FEATURES.items() if val(f) == 1.0), None)
    hour = val("CRASH_HOUR")
    day = val("DAY_OF_WEEK")
    head = "Crash"
    if borough:
        head += f" in {'Staten Island' if borough == 'StatenIsland' else borough}"
    if hour is not None:
        head += f" at {int(hour):02d}:00"
    if day is not None:
        head += f" on a {DAY_NAMES[int(day)]}"
    out.append(head + ".")
    if val("ZIP_CODE") is not None:
        out.append(f"ZIP code {int(val('ZIP_CODE')):05d}.")
    lat, lon = val("LATITUDE"), val("LONGITUDE")
    if lat is not None and lon is not None:
        out.append(f"Location {lat:.4f}, {lon:.4f}.")

    n_persons = val("NUM_PERSON_RECORDS")
    if n_persons is not None and n_persons > 0:
        people = [f"{int(round(n_persons))} persons recorded"]
        for name, noun in (("ROLE_PEDESTRIAN", "pedestrian"), ("ROLE_CYCLIST", "cyclist"),
                           ("ROLE_DRIVER", "driver"), ("ROLE_PASSENGER", "passenger")):
            share = val(name)
            if share is not None:
                count = int(round(share * n_persons))
                people.append(f"{count} {noun}{'' if count == 1 else 's'} ({_pct(share)})")
        out.append("; ".join(people) + ".")
    ages = []
    if val("AVG_AGE") is not None:
        ages.append(f"average age {val('AVG_AGE'):.1f}")
    if val("PCT_YOUTH") is not None:
        ages.append(f"{_pct(val('PCT_YOUTH'))} aged 25 or under")
    if val("PCT_SENIOR") is not None:
        ages.append(f"{_pct(val('PCT_SENIOR'))} aged 65 or over")
    if ages:
        out.append("Ages: " + ", ".join(ages) + ".")
    safety = []
    for name, text in (("PCT_WITH_SAFETY_EQUIPMENT", "used safety equipment"),
                       ("PCT_NO_SAFETY_EQUIPMENT", "used none"),
                       ("PCT_EJECTED", "were ejected"),
                       ("PCT_AIRBAG_DEPLOYED", "had an airbag deploy")):
        if val(name) is not None:
            safety.append(f"{_pct(val(name))} {text}")
    if safety:
        out.append("Safety: " + ", ".join(safety) + ".")
    n_veh = val("NUM_VEHICLE_RECORDS")
    if n_veh is not None and n_veh > 0:
        kinds = []
        for name in ("PASSENGER_VEHICLE", "SUV", "TAXI", "BUS", "TRUCK", "MOTORCYCLE", "BICYCLE", "OTHER_VEHICLE"):
            share = val(name)
            if share:
                kinds.append(f"{name.lower().replace('_', ' ')} {_pct(share)}")
        text = f"{int(round(n_veh))} vehicles"
        if kinds:
            text += " (" + ", ".join(kinds) + ")"
        out.append(text + ".")
    if factors:
        out.append("Contributing factors: " + "; ".join(factors) + ".")
    return " ".join(out)


def build_prompt(row: EventFeatureRow, factors: Sequence[str] | None = None) -> EventPrompt:
    return EventPrompt(serialize_event(row, factors))


def _check_proba(proba) -> np.ndarray:
    p = np.asarray(proba, np.float64)
    if p.shape != (3,) or np.any(~np.isfinite(p)) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise PromptError(f"invalid probability vector {p.tolist()}")
    return p


def probability_sentence(proba) -> str:
    p = _check_proba(proba)
    return (
        f"Context: the tabular model assigns {p[2]:.2f} probability to a fatal outcome "
        f"and {p[1]:.2f} probability to an injury."
    )


def augment_with_probs(prompt: EventPrompt, proba) -> EventPrompt:
    if prompt.augmentation is not None:
        raise PromptError("prompt is already augmented with probabilities")
    return replace(prompt, augmentation=probability_sentence(proba))


class GatedMass(str, enum.Enum):
    FatalOnly = "FatalOnly"
    InjuryPlusFatal = "InjuryPlusFatal"


@dataclass(frozen=True)
class GatingConfig:
    threshold: float = 0.05
    gated_mass: GatedMass = GatedMass.FatalOnly

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise PromptError(f"gating threshold {self.threshold} outside [0, 1]")
        object.__setattr__(self, "gated_mass", GatedMass(self.gated_mass))


def gated_risk(proba, config: GatingConfig) -> float:
    p = _check_proba(proba)
    return float(p[2] if config.gated_mass is GatedMass.FatalOnly else p[1] + p[2])


def gate(proba, config: GatingConfig | None = None) -> bool:
    """True when the gated probability mass strictly exceeds the threshold."""
    config = config or GatingConfig()
    return gated_risk(proba, config) > config.threshold


_LABEL_RE = re.compile(r"no injury|property damage|fatal|injur(?:y|ed)", re.IGNORECASE)


def parse_prediction(text: str) -> SeverityLabel | None:
    """First class keyword in the text wins; "no injury" is tried before "injury" at the
    same position, so "No injury" parses as NoInjury."""
    m = _LABEL_RE.search(text or "")
    if m is None:
        return None
    word = m.group(0).lower()
    if word in ("no injury", "property damage"):
        return SeverityLabel.NoInjury
    if word == "fatal":
        return SeverityLabel.Fatal
    return SeverityLabel.Injury
