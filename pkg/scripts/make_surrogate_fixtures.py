"""Generate the bundled surrogate fixture CSVs.

The public snapshots (civil-protection daily counts, ISTAT all-cause deaths,
Google mobility reports, regional covariates) are not redistributed here.
This script writes synthetic stand-ins with the same layouts, real region
names and approximate 2019 resident populations.  The epidemic shapes follow
a simple qualitative story: an early, severe outbreak in a block of northern
regions with staggered onsets, and later, milder curves elsewhere.  Nothing
here is fitted to published results.

Run from the repository root::

    python scripts/make_surrogate_fixtures.py [outdir]
"""

from __future__ import annotations

import csv
import datetime as dt
import sys
from pathlib import Path

import numpy as np

SEED = 20200216
START = dt.date(2020, 2, 16)
END = dt.date(2020, 4, 30)
DPC_FIRST = dt.date(2020, 2, 24)
LOCKDOWN = dt.date(2020, 3, 10)

POPULATION = {
    "Lombardia": 10_060_574, "Lazio": 5_879_082, "Campania": 5_801_692, "Sicilia": 4_999_891,
    "Veneto": 4_905_854, "Emilia Romagna": 4_459_477, "Piemonte": 4_356_406, "Puglia": 4_029_053,
    "Toscana": 3_729_641, "Calabria": 1_947_131, "Sardegna": 1_639_591, "Liguria": 1_550_640,
    "Marche": 1_525_271, "Abruzzo": 1_311_580, "Friuli Venezia Giulia": 1_215_220,
    "P.A. Trento": 545_425, "P.A. Bolzano": 531_178, "Umbria": 882_015, "Basilicata": 562_869,
    "Molise": 305_617, "Valle d'Aosta": 125_666,
}

# onset day (from Feb 16) and peak daily excess deaths per 100k; early block first
EARLY = {
    "Lombardia": (4, 5.5), "Emilia Romagna": (7, 3.2), "Marche": (9, 2.6), "Liguria": (10, 3.4),
    "Piemonte": (11, 3.0), "Trento/Bolzano": (12, 3.3), "Valle d'Aosta": (13, 5.0),
}
LATE = {
    "Veneto": (15, 0.9), "Friuli Venezia Giulia": (16, 0.7), "Toscana": (17, 0.8), "Abruzzo": (18, 0.5),
    "Umbria": (19, 0.25), "Lazio": (19, 0.3), "Puglia": (20, 0.3), "Molise": (20, 0.25),
    "Campania": (20, 0.2), "Sardegna": (21, 0.2), "Basilicata": (21, 0.15), "Calabria": (22, 0.12),
    "Sicilia": (22, 0.12),
}
NORTH = {"Lombardia", "Emilia Romagna", "Liguria", "Piemonte", "Trento/Bolzano", "Valle d'Aosta",
         "Veneto", "Friuli Venezia Giulia"}
SOUTH = {"Campania", "Puglia", "Basilicata", "Calabria", "Sicilia", "Sardegna", "Molise"}

# plausible centre and spread of each covariate, and loadings on (north, age, urban) factors
COVARIATE_MODEL = [
    ("% Over 65", 23.0, 2.0, (0.3, 0.9, -0.1)),
    ("% Diabetics", 6.0, 0.9, (-0.7, 0.3, 0.0)),
    ("% Allergic", 10.5, 1.2, (-0.6, 0.2, 0.1)),
    ("Adults per family doctor", 1250.0, 110.0, (0.6, -0.2, 0.4)),
    ("ICU beds per 100K inhabitants", 8.6, 1.5, (0.2, 0.1, 0.3)),
    ("Ave. beds per hospital (whole)", 150.0, 40.0, (0.5, -0.1, 0.5)),
    ("Ave. beds per nursing home (ward)", 40.0, 10.0, (0.6, 0.2, 0.1)),
    ("Ave. students per classroom", 20.5, 0.8, (0.4, -0.3, 0.5)),
    ("Ave. employees per firm", 3.8, 0.6, (0.7, -0.1, 0.4)),
    ("Ave. members per household", 2.3, 0.15, (-0.7, -0.4, -0.1)),
    ("Public transport rides per capita", 150.0, 90.0, (0.3, -0.1, 0.8)),
    ("PM10", 24.0, 5.0, (0.8, 0.0, 0.2)),
]


def days():
    n = (END - START).days + 1
    return [START + dt.timedelta(k) for k in range(n)]


def regions():
    merged = [r for r in POPULATION if not r.startswith("P.A.")] + ["Trento/Bolzano"]
    return sorted(merged)


def excess_curve(onset, peak, t, rng):
    # gamma-shaped wave: rises for ~3 weeks after onset, then decays slowly
    u = np.clip(t - onset, 0, None) / 7.0
    shape = u**3 * np.exp(-u)
    shape /= 3**3 * np.exp(-3)
    return peak * shape * np.exp(rng.normal(0, 0.03))


def main(outdir: Path) -> None:
    rng = np.random.default_rng(SEED)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = days()
    t = np.arange(len(grid), dtype=float)
    pop = dict(POPULATION)
    pop["Trento/Bolzano"] = pop["P.A. Trento"] + pop["P.A. Bolzano"]
    cover = {r: rng.uniform(0.75, 0.95) for r in regions()}
    waves = {r: excess_curve(*(EARLY.get(r) or LATE[r]), t, rng) for r in regions()}

    with open(outdir / "population.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region", "population", "population_covered"])
        for name, p in POPULATION.items():
            region = "Trento/Bolzano" if name.startswith("P.A.") else name
            w.writerow([name, p, int(round(p * cover[region]))])

    # civil-protection style: cumulative deaths, new cases, new tests (provinces separate)
    with open(outdir / "dpc.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "region", "cumulative_deaths", "new_cases", "new_tests"])
        for name in POPULATION:
            region = "Trento/Bolzano" if name.startswith("P.A.") else name
            share = POPULATION[name] / pop[region]
            reported = rng.uniform(0.45, 0.65) if region in NORTH else rng.uniform(0.7, 1.0)
            lam = waves[region] * reported * POPULATION[name] / 1e5
            deaths = rng.poisson(lam)
            onset = (EARLY.get(region) or LATE[region])[0]
            pos = 0.02 + 0.35 * np.clip(waves[region] / waves[region].max(), 0, 1) * (
                1.0 if region in EARLY else 0.4) * np.exp(-np.clip(t - onset - 30, 0, None) / 25)
            tests = np.round(share * pop[region] / 1e5 * (5 + 60 / (1 + np.exp(-(t - 35) / 6))))
            tests = np.maximum(tests, 1)
            cases = rng.binomial(tests.astype(int), np.clip(pos, 0, 1))
            cases, tests = cases.astype(int), tests.astype(int)
            # reporting irregularities: a negative case count, a day without tests, cases > tests
            if name == "Molise":
                cases[33] = -1
            if name == "Basilicata":
                cases[18], tests[18] = 0, 0
            if name == "Umbria":
                cases[14] = tests[14] + 7
            cum = 0
            for k, day in enumerate(grid):
                if day < DPC_FIRST:
                    continue
                cum += int(deaths[k])
                w.writerow([day.isoformat(), name, cum, int(cases[k]), int(tests[k])])

    # all-cause deaths keyed by 2020 day; reference years have no Feb 29
    with open(outdir / "istat.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "region"] + [f"deaths_{y}" for y in range(2015, 2021)])
        for region in regions():
            covered = pop[region] * cover[region]
            base = covered / 1e5 * rng.uniform(2.6, 3.3)
            for k, day in enumerate(grid):
                ref = [] if (day.month == 2 and day.day == 29) else list(rng.poisson(base, 5))
                d2020 = rng.poisson(base * rng.uniform(0.93, 1.0) + waves[region][k] * covered / 1e5)
                w.writerow([day.isoformat(), region] + [str(v) for v in ref] + [""] * (5 - len(ref))
                           + [int(d2020)])

    # grocery & pharmacy mobility change; stock-up before the lockdown, then a drop
    with open(outdir / "mobility.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "region", "grocery_pharmacy_change"])
        lock = (LOCKDOWN - START).days
        for name in POPULATION:
            region = "Trento/Bolzano" if name.startswith("P.A.") else name
            depth = rng.uniform(0.25, 0.45) + (0.08 if region in EARLY else 0.0)
            early = (EARLY.get(region) or LATE[region])[0]
            for k, day in enumerate(grid):
                v = 0.12 * np.exp(-((k - lock + 2) / 3.0) ** 2)
                v += 0.04 * np.exp(-((k - early - 4) / 3.0) ** 2) if region in EARLY else 0.0
                v -= depth / (1 + np.exp(-(k - lock - 2) / 2.0))
                if day.weekday() == 6:
                    v -= 0.15 * (k > lock)
                v += rng.normal(0, 0.02)
                w.writerow([day.isoformat(), name, f"{v:.4f}"])

    # covariates from a three-factor model; Valle d'Aosta lacks firm sizes
    regs = regions()
    north = np.array([1.0 if r in NORTH else (-1.0 if r in SOUTH else 0.0) for r in regs])
    north += rng.normal(0, 0.3, len(regs))
    age = rng.normal(0, 1, len(regs))
    urban = rng.normal(0, 1, len(regs))
    F = np.column_stack([north, age, urban])
    with open(outdir / "covariates.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region"] + [m[0] for m in COVARIATE_MODEL])
        cols = []
        for name, centre, spread, load in COVARIATE_MODEL:
            z = F @ np.array(load) + rng.normal(0, 0.5, len(regs))
            z = (z - z.mean()) / z.std()
            cols.append(centre + spread * z)
        for i, region in enumerate(regs):
            row = [region]
            for (name, *_), col in zip(COVARIATE_MODEL, cols):
                if region == "Valle d'Aosta" and name == "Ave. employees per firm":
                    row.append("")
                else:
                    row.append(f"{col[i]:.4g}")
            w.writerow(row)

    (outdir / "MANIFEST.txt").write_text(
        "Synthetic surrogate fixtures generated by scripts/make_surrogate_fixtures.py\n"
        f"seed: {SEED}\n"
        "These are NOT the public data snapshots.  Region names and approximate\n"
        "populations are real; all counts, rates, mobility values and covariates are\n"
        "simulated.  Point FDEPI_FIXTURE_DIR at a directory with real snapshots in the\n"
        "same layouts to run the pipeline on real data.\n",
        encoding="utf-8",
    )


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parents[1] / "src/fdepi/data")
