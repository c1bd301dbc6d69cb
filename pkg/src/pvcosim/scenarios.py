"""Reproducible Monte Carlo PV deployment scenarios and generation profiles.

Customer selection uses numpy's PCG64 generator seeded from explicit
``SeedSequence`` material, so a scenario set is a pure function of
``(master_seed, scenario_id, level)`` on any platform. The default
incremental mode draws one customer permutation per scenario id and lets
each penetration level take a prefix, so higher levels extend lower
ones; independent mode resamples per level.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .feeder import FeederModel

__all__ = [
    "GenerationProfile",
    "PvScenario",
    "pv_rating",
    "generate",
    "profile_value",
    "load_profile",
    "load_profile_file",
    "save_scenarios",
    "load_scenarios",
    "DEFAULT_RATING_FACTORS",
]

DEFAULT_RATING_FACTORS = {"residential": 1.0, "commercial": 3.0}

NIGHT_HOURS = tuple(range(0, 6)) + tuple(range(20, 24))
NOON = 12


@dataclass(frozen=True)
class GenerationProfile:
    """24 hourly output factors in [0, 1], zero at night, unity at noon."""

    name: str
    factors: tuple[float, ...]

    def __post_init__(self):
        if len(self.factors) != 24:
            raise ValueError("profile needs 24 hourly factors")
        if any(f < 0 or f > 1 for f in self.factors):
            raise ValueError("profile factors must lie in [0, 1]")
        if any(self.factors[h] != 0 for h in NIGHT_HOURS):
            raise ValueError("night hours (0-5, 20-23) must be zero")
        if self.factors[NOON] != 1.0:
            raise ValueError("solar-noon factor must be 1.0")

    def value(self, hour: int) -> float:
        if not 0 <= hour <= 23:
            raise ValueError(f"hour must be in 0..23, got {hour}")
        return self.factors[hour]

    def daily_energy_per_kw(self) -> float:
        return float(sum(self.factors))


@dataclass(frozen=True)
class PvScenario:
    scenario_id: int
    penetration_pct: int
    placements: tuple[tuple[str, str, float], ...]  # (node id, phases, rating kW)
    seed: int


def pv_rating(
    customer_class: str,
    feeder_peak_kw: float,
    customer_count: int,
    factors: dict[str, float] | None = None,
) -> float:
    """Nameplate kW for one new PV unit, sized from feeder peak demand."""
    if feeder_peak_kw <= 0 or customer_count <= 0:
        raise ValueError("peak demand and customer count must be positive")
    factors = factors or DEFAULT_RATING_FACTORS
    if customer_class not in factors:
        raise ValueError(f"unknown customer class {customer_class!r}")
    return feeder_peak_kw / customer_count * factors[customer_class]


def _scenario_seed(master_seed: int, scenario_id: int, level: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(scenario_id), int(level)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate(
    feeder: FeederModel,
    levels: list[int],
    n_scenarios: int,
    master_seed: int,
    mode: str = "incremental",
    rating_factors: dict[str, float] | None = None,
) -> list[PvScenario]:
    """Draw ``n_scenarios`` deployments for every penetration level."""
    customers = feeder.customers()
    if not customers:
        raise ValueError("feeder has no customer nodes")
    if mode not in ("incremental", "independent"):
        raise ValueError(f"unknown mode {mode!r}")
    for lv in levels:
        if lv not in range(10, 101, 10):
            raise ValueError(f"levels must be multiples of 10 in 10..100, got {lv}")

    count = len(customers)
    ratings = {
        n.id: pv_rating(n.customer_class, feeder.peak_kw, count, rating_factors)
        for n in customers
    }

    out: list[PvScenario] = []
    for sid in range(n_scenarios):
        if mode == "incremental":
            rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence([int(master_seed), sid]))
            )
            perm = rng.permutation(count)
        for level in sorted(levels):
            k = round(level / 100 * count)
            if mode == "incremental":
                chosen = perm[:k]
            else:
                rng = np.random.Generator(
                    np.random.PCG64(np.random.SeedSequence([int(master_seed), sid, level]))
                )
                chosen = rng.choice(count, size=k, replace=False)
            placements = tuple(
                (customers[i].id, "".join(sorted(customers[i].loads)), ratings[customers[i].id])
                for i in sorted(chosen)
            )
            out.append(
                PvScenario(
                    scenario_id=sid,
                    penetration_pct=level,
                    placements=placements,
                    seed=_scenario_seed(master_seed, sid, level),
                )
            )
    return out


def profile_value(profile: GenerationProfile, hour: int) -> float:
    return profile.value(hour)


def load_profile(text: str) -> GenerationProfile:
    raw = json.loads(text)
    return GenerationProfile(name=raw.get("name", "custom"), factors=tuple(raw["factors"]))


def load_profile_file(path) -> GenerationProfile:
    with open(path, encoding="utf-8") as fh:
        return load_profile(fh.read())


def save_scenarios(path, scenarios: list[PvScenario], master_seed: int, mode: str) -> None:
    """Serialize a scenario set so an experiment can be replayed bit-exactly."""
    doc = {
        "master_seed": master_seed,
        "mode": mode,
        "levels": sorted({s.penetration_pct for s in scenarios}),
        "scenarios": [
            {
                "scenario_id": s.scenario_id,
                "penetration_pct": s.penetration_pct,
                "seed": s.seed,
                "placements": [[n, p, r] for n, p, r in s.placements],
            }
            for s in scenarios
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


def load_scenarios(path) -> tuple[list[PvScenario], int, str]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    scenarios = [
        PvScenario(
            scenario_id=int(s["scenario_id"]),
            penetration_pct=int(s["penetration_pct"]),
            placements=tuple((str(n), str(p), float(r)) for n, p, r in s["placements"]),
            seed=int(s["seed"]),
        )
        for s in doc["scenarios"]
    ]
    return scenarios, int(doc["master_seed"]), str(doc["mode"])
