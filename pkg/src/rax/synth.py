"""Seeded synthetic crash events with planted severity drivers, plus the imbalance ablation.

Generative model (all draws from one seeded generator, in a fixed order):

* persons: 1 + Poisson(1.6) truncated at 12; roles from a Dirichlet-multinomial
  (driver, passenger, pedestrian, cyclist, other); age shares from Beta draws
* safety: equipment share ~ Beta(5, 2) of persons; ejection is rare (6% of events have an
  ejected person, share from Beta(2, 3))
* vehicles: 1 + Poisson(0.8) truncated at 8; categories from a Dirichlet-multinomial
* time: day uniform over the span, hour from a mixture peaking at 08:00 and 18:00 with a
  uniform floor
* place: three Gaussian clusters (Manhattan, Brooklyn, Bronx) with matching borough and ZIP

Severity comes from a latent ordinal logit
``s = b_ej*PCT_EJECTED + b_ped*ROLE_PEDESTRIAN + b_night*night + b_safe*PCT_WITH_SAFETY_EQUIPMENT
+ b_int*[pedestrian present]*night + Logistic(0, 1)``. The two cut points are the
empirical quantiles of ``s`` at the cumulative class prior, which is the intercept search
solved exactly, so class shares match the prior up to ties.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from typing import Sequence

import numpy as np

from .imbalance import ImbalanceStrategy, apply_strategy, class_counts, compute_class_weights
from .metrics import evaluate
from .models import BoostingConfig, fit_gradient_boosting, focal, predict_class, softmax_objective
from .schema import MISSING_SENTINEL, canonical_schema
from .store import SplitSpec, split_table
from .table import EventTable, to_epoch

NIGHT_HOURS = (22, 23, 0, 1, 2, 3, 4, 5)

# centre lat, centre lon, borough feature, ZIP base
CLUSTERS = (
    (40.758, -73.985, "BORO_MANHATTAN", 10001),
    (40.650, -73.950, "BORO_BROOKLYN", 11201),
    (40.837, -73.886, "BORO_BRONX", 10451),
)
BOROUGHS = ("BORO_BRONX", "BORO_BROOKLYN", "BORO_MANHATTAN", "BORO_QUEENS", "BORO_STATEN")

PLANTED_DRIVERS = ("PCT_EJECTED", "ROLE_PEDESTRIAN", "CRASH_HOUR", "PCT_WITH_SAFETY_EQUIPMENT")


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_events: int = 25000
    rng_seed: int = 0
    class_prior: tuple[float, float, float] = (0.72, 0.27, 0.01)
    beta_ejected: float = 4.0
    beta_pedestrian: float = 2.5
    beta_night: float = 1.5
    beta_safety: float = -2.0
    beta_interaction: float = 0.0
    start_year: int = 2022
    start_month: int = 1
    n_months: int = 12
    prior_tolerance: float = 0.10

    def __post_init__(self):
        p = np.asarray(self.class_prior, float)
        if p.shape != (3,) or np.any(p <= 0) or abs(p.sum() - 1) > 1e-9:
            raise ValueError(f"class_prior must be 3 positive values summing to 1, got {self.class_prior}")
        if self.n_events < 1:
            raise ValueError("n_events must be >= 1")
        if self.n_months < 1:
            raise ValueError("n_months must be >= 1")

    def span(self) -> tuple[int, int]:
        start = datetime(self.start_year, self.start_month, 1, tzinfo=timezone.utc)
        m = self.start_month - 1 + self.n_months
        end = datetime(self.start_year + m // 12, m % 12 + 1, 1, tzinfo=timezone.utc)
        return to_epoch(start), to_epoch(end)

    def with_betas_zero(self) -> SynthConfig:
        return replace(self, beta_ejected=0.0, beta_pedestrian=0.0, beta_night=0.0,
                       beta_safety=0.0, beta_interaction=0.0)


def _truncated_poisson(rng, lam, upper, size):
    out = rng.poisson(lam, size)
    bad = out > upper
    while bad.any():
        out[bad] = rng.poisson(lam, bad.sum())
        bad = out > upper
    return out


def _dirichlet_multinomial(rng, n, alpha):
    probs = rng.dirichlet(alpha, size=len(n))
    return np.array([rng.multinomial(k, p) for k, p in zip(n, probs)])


def _share(rng, n, a, b):
    return rng.binomial(n, rng.beta(a, b, size=len(n))) / n


def latent_score(table: EventTable, config: SynthConfig, noise: np.ndarray) -> np.ndarray:
    v = lambda name: table.column(name)
    night = np.isin(v("CRASH_HOUR"), NIGHT_HOURS).astype(float)
    ped_present = (v("ROLE_PEDESTRIAN") > 0).astype(float)
    return (
        config.beta_ejected * v("PCT_EJECTED")
        + config.beta_pedestrian * v("ROLE_PEDESTRIAN")
        + config.beta_night * night
        + config.beta_safety * v("PCT_WITH_SAFETY_EQUIPMENT")
        + config.beta_interaction * ped_present * night
        + noise
    )


def calibrate_labels(score: np.ndarray, prior, tolerance: float = 0.10) -> np.ndarray:
    """Ordinal labels with cut points at the empirical quantiles of ``score``."""
    prior = np.asarray(prior, float)
    n = len(score)
    order = np.argsort(score, kind="stable")
    bounds = np.round(np.cumsum(prior)[:2] * n).astype(int)
    labels = np.zeros(n, np.int8)
    labels[order[bounds[0]: bounds[1]]] = 1
    labels[order[bounds[1]:]] = 2
    if n >= 1000:
        got = np.bincount(labels, minlength=3) / n
        if np.any(np.abs(got - prior) > tolerance * prior):
            raise CalibrationError(f"class shares {got.tolist()} miss prior {prior.tolist()}")
    return labels


def generate(config: SynthConfig | None = None) -> EventTable:
    """Deterministic synthetic events (sorted by time) with labels."""
    cfg = config or SynthConfig()
    rng = np.random.default_rng(cfg.rng_seed)
    schema = canonical_schema()
    n = cfg.n_events
    d = len(schema)
    V = np.zeros((n, d))
    M = np.zeros((n, d), bool)
    col = schema.index

    n_p = 1 + _truncated_poisson(rng, 1.6, 11, n)
    roles = _dirichlet_multinomial(rng, n_p, [4.0, 2.0, 0.6, 0.35, 0.15])
    V[:, col("NUM_PERSON_RECORDS")] = n_p
    for j, name in enumerate(("ROLE_DRIVER", "ROLE_PASSENGER", "ROLE_PEDESTRIAN", "ROLE_CYCLIST")):
        V[:, col(name)] = roles[:, j] / n_p
    age = np.clip(rng.normal(40, 12, n), 16, 90)
    age_missing = rng.random(n) < 0.05
    V[:, col("AVG_AGE")] = np.where(age_missing, MISSING_SENTINEL, age)
    M[:, col("AVG_AGE")] = age_missing
    V[:, col("PCT_YOUTH")] = _share(rng, n_p, 1.2, 4.0)
    V[:, col("PCT_SENIOR")] = _share(rng, n_p, 0.8, 6.0) * (1 - V[:, col("PCT_YOUTH")])
    with_eq = _share(rng, n_p, 5.0, 2.0)
    V[:, col("PCT_WITH_SAFETY_EQUIPMENT")] = with_eq
    V[:, col("PCT_NO_SAFETY_EQUIPMENT")] = (1 - with_eq) * rng.beta(2, 2, n)
    ejected = rng.random(n) < 0.06
    V[:, col("PCT_EJECTED")] = np.where(ejected, np.maximum(_share(rng, n_p, 2.0, 3.0), 1 / n_p), 0.0)
    V[:, col("PCT_AIRBAG_DEPLOYED")] = _share(rng, n_p, 1.0, 5.0)

    n_v = 1 + _truncated_poisson(rng, 0.8, 7, n)
    kinds = _dirichlet_multinomial(rng, n_v, [5.0, 3.0, 1.0, 0.3, 0.6, 0.3, 0.4, 0.4])
    V[:, col("NUM_VEHICLE_RECORDS")] = n_v
    for j, name in enumerate(("PASSENGER_VEHICLE", "SUV", "TAXI", "BUS", "TRUCK", "MOTORCYCLE", "BICYCLE", "OTHER_VEHICLE")):
        V[:, col(name)] = kinds[:, j] / n_v
    V[:, col("PCT_OUT_OF_STATE")] = _share(rng, n_v, 0.5, 6.0)
    ages = rng.dirichlet([2.0, 3.0, 1.5], size=n)
    for j, name in enumerate(("VEH_AGE_NEW", "VEH_AGE_MID", "VEH_AGE_OLD")):
        V[:, col(name)] = ages[:, j]

    lo, hi = cfg.span()
    n_days = (hi - lo) // 86400
    day = rng.integers(0, n_days, n)
    comp = rng.choice(3, size=n, p=[0.4, 0.45, 0.15])
    hour = np.where(
        comp == 0, np.rint(rng.normal(8, 2, n)),
        np.where(comp == 1, np.rint(rng.normal(18, 2.5, n)), rng.integers(0, 24, n)),
    ).astype(int) % 24
    ts = lo + day * 86400 + hour * 3600 + rng.integers(0, 3600, n)
    dow = (day + datetime.fromtimestamp(lo, timezone.utc).weekday()) % 7
    V[:, col("CRASH_HOUR")] = hour
    V[:, col("DAY_OF_WEEK")] = dow
    V[:, col("IS_WEEKEND")] = dow >= 5

    cl = rng.choice(3, size=n, p=[0.4, 0.35, 0.25])
    centres = np.array([c[:2] for c in CLUSTERS])
    lat = np.clip(centres[cl, 0] + rng.normal(0, 0.02, n), 40.41, 40.99)
    lon = np.clip(centres[cl, 1] + rng.normal(0, 0.02, n), -74.29, -73.61)
    loc_missing = rng.random(n) < 0.03
    for name, vals in (("LATITUDE", lat), ("LONGITUDE", lon)):
        V[:, col(name)] = np.where(loc_missing, MISSING_SENTINEL, vals)
        M[:, col(name)] = loc_missing
    zip_missing = rng.random(n) < 0.05
    zips = np.array([c[3] for c in CLUSTERS])[cl] + rng.integers(0, 40, n)
    V[:, col("ZIP_CODE")] = np.where(zip_missing, MISSING_SENTINEL, zips)
    M[:, col("ZIP_CODE")] = zip_missing
    boro_draw = rng.random(n)
    other = rng.integers(0, len(BOROUGHS), n)
    for i in range(n):
        if boro_draw[i] < 0.03:
            continue  # unknown borough: all indicators 0
        name = CLUSTERS[cl[i]][2] if boro_draw[i] < 0.88 else BOROUGHS[other[i]]
        V[i, col(name)] = 1.0

    table = EventTable(V, M, np.arange(1, n + 1, dtype=np.int64), ts, np.zeros(n, np.int8), None, schema)
    noise = rng.logistic(0.0, 1.0, n)
    table.label = calibrate_labels(latent_score(table, cfg, noise), cfg.class_prior, cfg.prior_tolerance)
    return table.sorted()


# x-axis order of the ablation curve
ABLATION_STRATEGIES = (
    ImbalanceStrategy.baseline(),
    ImbalanceStrategy.weighted(),
    ImbalanceStrategy.smote(),
    ImbalanceStrategy.focal(),
)


def objective_for(strategy: ImbalanceStrategy, train_labels) -> object:
    """Weighted and Focal use inverse-frequency class weights; the others are unweighted."""
    if strategy.kind == "Weighted":
        return softmax_objective(compute_class_weights(class_counts(train_labels)))
    if strategy.kind == "Focal":
        return focal(strategy.gamma, compute_class_weights(class_counts(train_labels)))
    return softmax_objective()


@dataclass
class AblationRow:
    strategy: str
    accuracy: float
    macro_f1: float
    recall_fatal: float
    kappa: float = 0.0
    augmentation: dict = field(default_factory=dict)


def run_strategy(train: EventTable, test: EventTable, strategy: ImbalanceStrategy,
                 boosting: BoostingConfig | None = None, rng_seed: int = 0) -> AblationRow:
    train_aug, report = apply_strategy(train, strategy, rng_seed)
    obj = objective_for(strategy, train.label)
    model = fit_gradient_boosting(train_aug.model_matrix(), train_aug.label, obj, boosting,
                                  schema_hash=train.schema_hash)
    m = evaluate(test.label, predict_class(model, test))
    return AblationRow(strategy.label, m.accuracy, m.macro_f1, m.recall_fatal, m.kappa, report.to_dict())


def run_ablation(
    strategies: Sequence[ImbalanceStrategy] = ABLATION_STRATEGIES,
    config: SynthConfig | None = None,
    boosting: BoostingConfig | None = None,
    split: SplitSpec | None = None,
    data: EventTable | None = None,
) -> list[AblationRow]:
    """Generate (or take) data, split by time, then fit and evaluate boosting once per strategy."""
    cfg = config or SynthConfig()
    table = data if data is not None else generate(cfg)
    train, test = split_table(table, split)
    return [run_strategy(train, test, s, boosting, cfg.rng_seed) for s in strategies]


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["strategy", "accuracy", "macro_f1", "recall_fatal"])
    for r in rows:
        w.writerow([r.strategy, repr(r.accuracy), repr(r.macro_f1), repr(r.recall_fatal)])
    return buf.getvalue()
