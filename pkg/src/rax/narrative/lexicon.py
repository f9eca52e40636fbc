"""Feature-to-phrase lexicon used to decide which risk factors a narrative mentions.

Matching is case-insensitive on whole words (an optional plural "s"/"es" is accepted), so
"bus" matches "buses" but not "business". No phrase of one feature occurs inside a phrase
of another feature, which keeps mentions unambiguous.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from typing import Mapping

from ..schema import canonical_schema

DEFAULT_LEXICON: dict[str, tuple[str, ...]] = {
    "NUM_PERSON_RECORDS": ("people involved", "number of people", "persons involved", "occupant"),
    "ROLE_DRIVER": ("driver", "motorist"),
    "ROLE_PASSENGER": ("passenger", "rider in the vehicle"),
    "ROLE_PEDESTRIAN": ("pedestrian", "person on foot", "walker"),
    "ROLE_CYCLIST": ("cyclist", "bicyclist", "cycling"),
    "AVG_AGE": ("average age", "mean age", "age profile"),
    "PCT_YOUTH": ("young", "youth", "teen"),
    "PCT_SENIOR": ("senior", "elderly", "older adult"),
    "PCT_WITH_SAFETY_EQUIPMENT": ("seat belt", "helmet", "safety equipment", "restraint"),
    "PCT_NO_SAFETY_EQUIPMENT": ("unbelted", "unrestrained", "unprotected"),
    "PCT_EJECTED": ("ejected", "ejection", "thrown from"),
    "PCT_AIRBAG_DEPLOYED": ("airbag", "air bag"),
    "NUM_VEHICLE_RECORDS": ("vehicles involved", "number of vehicles", "multi-vehicle"),
    "PASSENGER_VEHICLE": ("sedan", "private car", "automobile"),
    "SUV": ("suv", "sport utility"),
    "TAXI": ("taxi", "cab", "for-hire"),
    "BUS": ("bus", "transit"),
    "TRUCK": ("truck", "lorry", "heavy goods"),
    "MOTORCYCLE": ("motorcycle", "motorbike", "moped"),
    "BICYCLE": ("bicycle", "pedal cycle"),
    "OTHER_VEHICLE": ("other vehicle", "unclassified vehicle"),
    "PCT_OUT_OF_STATE": ("out-of-state", "out of state", "non-local plate"),
    "VEH_AGE_NEW": ("new vehicle", "newer vehicle", "recent model"),
    "VEH_AGE_MID": ("mid-age vehicle", "middle-aged vehicle"),
    "VEH_AGE_OLD": ("old vehicle", "older vehicle", "aging vehicle"),
    "CRASH_HOUR": ("night", "nighttime", "late night", "early morning", "hour of", "rush hour"),
    "DAY_OF_WEEK": ("day of the week", "weekday"),
    "IS_WEEKEND": ("weekend", "saturday", "sunday"),
    "LATITUDE": ("latitude", "north-south position"),
    "LONGITUDE": ("longitude", "east-west position"),
    "ZIP_CODE": ("zip code", "postal area", "neighborhood"),
    "BORO_BRONX": ("bronx",),
    "BORO_BROOKLYN": ("brooklyn",),
    "BORO_MANHATTAN": ("manhattan",),
    "BORO_QUEENS": ("queens",),
    "BORO_STATEN": ("staten island",),
}


class LexiconError(ValueError):
    pass


def _pattern(phrase: str) -> re.Pattern:
    body = r"\s+".join(re.escape(w) for w in phrase.lower().split())
    return re.compile(r"(?<![\w-])" + body + r"(?:s|es)?(?![\w-])", re.IGNORECASE)


class Lexicon:
    def __init__(self, table: Mapping[str, tuple[str, ...]] | None = None, check: bool = True):
        self.table = {k: tuple(v) for k, v in (table or DEFAULT_LEXICON).items()}
        self._patterns = {k: [_pattern(p) for p in v] for k, v in self.table.items()}
        if check:
            self.validate()

    def validate(self, names=None) -> None:
        names = list(names or canonical_schema().names)
        missing = [n for n in names if not self.table.get(n)]
        if missing:
            raise LexiconError(f"lexicon has no phrases for {missing}")
        for a, phrases in self.table.items():
            for p in phrases:
                for b, pats in self._patterns.items():
                    if b != a and any(pt.search(p) for pt in pats):
                        raise LexiconError(f"phrase {p!r} of {a} also matches a phrase of {b}")

    def phrase(self, feature: str) -> str:
        """Canonical (first) phrase for a feature."""
        return self.table[feature][0]

    def mentions(self, text: str) -> set[str]:
        return {f for f, pats in self._patterns.items() if any(p.search(text) for p in pats)}

    @classmethod
    def from_json(cls, text: str) -> Lexicon:
        doc = json.loads(text)
        return cls({k: tuple(v) for k, v in doc.items()})

    def to_json(self) -> str:
        return json.dumps({k: list(v) for k, v in self.table.items()}, indent=2)


@lru_cache(maxsize=1)
def default_lexicon() -> Lexicon:
    return Lexicon(DEFAULT_LEXICON)
