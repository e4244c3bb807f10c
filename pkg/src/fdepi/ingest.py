"""Build the mortality, positivity and mobility curves and the covariate table.

Raw inputs are CSV snapshots (see the README for the column layouts).  The
two self-governing provinces of Trento and Bolzano are merged into a single
``Trento/Bolzano`` unit wherever they appear separately.
"""

from __future__ import annotations

import datetime as dt
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .fdcore import FunctionalDataset, TimeGrid

__all__ = [
    "REGIONS",
    "COVARIATES",
    "COVARIATE_ABBREV",
    "STUDY_GRID",
    "BLACKOUT_END",
    "CovariateTable",
    "canonical_region",
    "read_dpc",
    "read_istat",
    "read_mobility",
    "read_population",
    "read_covariates",
    "build_dpc_mortality",
    "build_istat_differential",
    "build_max_mortality",
    "build_positivity",
    "build_mobility",
    "build_covariates",
]

REGIONS = (
    "Abruzzo",
    "Basilicata",
    "Calabria",
    "Campania",
    "Emilia Romagna",
    "Friuli Venezia Giulia",
    "Lazio",
    "Liguria",
    "Lombardia",
    "Marche",
    "Molise",
    "Piemonte",
    "Puglia",
    "Sardegna",
    "Sicilia",
    "Toscana",
    "Trento/Bolzano",
    "Umbria",
    "Valle d'Aosta",
    "Veneto",
)

COVARIATES = (
    "% Over 65",
    "% Diabetics",
    "% Allergic",
    "Adults per family doctor",
    "ICU beds per 100K inhabitants",
    "Ave. beds per hospital (whole)",
    "Ave. beds per nursing home (ward)",
    "Ave. students per classroom",
    "Ave. employees per firm",
    "Ave. members per household",
    "Public transport rides per capita",
    "PM10",
)

COVARIATE_ABBREV = dict(
    zip(
        COVARIATES,
        (
            "%65+",
            "%Dbts",
            "%Allrgs",
            "Adlts/doct",
            "ICUBds/cpt",
            "AvBds/hspt",
            "AvBds/nrsg",
            "AvStdns/clrm",
            "AvEmpls/firm",
            "AvMbrs/hshld",
            "PubTrsp/cpt",
            "PM10",
        ),
    )
)

STUDY_GRID = TimeGrid(dt.date(2020, 2, 16), 75)  # Feb 16 .. Apr 30, 2020
BLACKOUT_END = dt.date(2020, 2, 23)  # no civil-protection releases before Feb 24

_PROVINCES = {"P.A. Trento", "P.A. Bolzano", "Trento", "Bolzano", "Provincia autonoma di Trento",
              "Provincia autonoma di Bolzano"}
_ALIASES = {
    "Emilia-Romagna": "Emilia Romagna",
    "Friuli-Venezia Giulia": "Friuli Venezia Giulia",
    "Friuli Venezia-Giulia": "Friuli Venezia Giulia",
    "Valle d’Aosta": "Valle d'Aosta",
    "Valle D'Aosta": "Valle d'Aosta",
    "Trentino-Alto Adige": "Trento/Bolzano",
    "Trentino Alto Adige": "Trento/Bolzano",
    "Trento/Bolzano": "Trento/Bolzano",
}


def canonical_region(name: str) -> str:
    """Map a raw region label to one of the 20 canonical names."""
    name = str(name).strip()
    if name in REGIONS:
        return name
    if name in _PROVINCES:
        return "Trento/Bolzano"
    if name in _ALIASES:
        return _ALIASES[name]
    raise ValueError(f"unknown region {name!r}; expected one of: {', '.join(REGIONS)}")


def _read_csv(path, required) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"input file not found: {path}")
    df = pd.read_csv(path, encoding="utf-8")
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValueError(f"{path}: missing columns {missing}")
    return df


def read_dpc(path) -> pd.DataFrame:
    """``date,region,cumulative_deaths,new_cases,new_tests``."""
    df = _read_csv(path, ["date", "region", "cumulative_deaths", "new_cases", "new_tests"])
    df["date"] = pd.to_datetime(df["date"]).dt.date
    return df


def read_istat(path) -> pd.DataFrame:
    """``date,region,deaths_2015,...,deaths_2020`` keyed by the 2020 calendar day."""
    cols = ["date", "region"] + [f"deaths_{y}" for y in range(2015, 2021)]
    df = _read_csv(path, cols)
    df["date"] = pd.to_datetime(df["date"]).dt.date
    return df


def read_mobility(path) -> pd.DataFrame:
    """``date,region,grocery_pharmacy_change`` (fractions, e.g. -0.30)."""
    df = _read_csv(path, ["date", "region", "grocery_pharmacy_change"])
    df["date"] = pd.to_datetime(df["date"]).dt.date
    return df


def read_population(path) -> dict:
    """``region,population,population_covered`` -> dict of two dicts.

    ``population`` is the resident population, ``population_covered`` the
    population of the municipalities contributing all-cause death counts.
    Province rows are summed into Trento/Bolzano.
    """
    df = _read_csv(path, ["region", "population", "population_covered"])
    df["region"] = df["region"].map(canonical_region)
    agg = df.groupby("region", sort=True)[["population", "population_covered"]].sum()
    return {
        "population": agg["population"].astype(float).to_dict(),
        "population_covered": agg["population_covered"].astype(float).to_dict(),
    }


def _canonicalize(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    df["region"] = df["region"].map(canonical_region)
    return df


def _check_regions(present, wanted, population=None):
    present = set(present)
    missing = [r for r in wanted if r not in present]
    if missing:
        raise ValueError(f"regions missing from the raw table: {missing}")
    if population is not None:
        nopop = [r for r in wanted if r not in population]
        if nopop:
            raise ValueError(f"no population recorded for: {nopop}")


def _zero_blackout(values: np.ndarray, grid: TimeGrid, blackout_end) -> None:
    if blackout_end is None:
        return
    k = (blackout_end - grid.start_day).days + 1
    if k > 0:
        values[:, : min(k, grid.length)] = 0.0


def build_dpc_mortality(raw: pd.DataFrame, population: dict, grid: TimeGrid = STUDY_GRID,
                        blackout_end=BLACKOUT_END, regions=REGIONS) -> FunctionalDataset:
    """Daily COVID-19 deaths per 100,000 from cumulative counts.

    Increments are taken over the full raw record (the first recorded day is
    differenced against zero), negative increments from cumulative-count
    corrections are clipped to zero with a warning, and days up to
    ``blackout_end`` are set to exactly zero.  Days of the grid with no raw
    record count as zero deaths.
    """
    df = _canonicalize(raw)
    _check_regions(df["region"].unique(), regions, population)
    df = df.groupby(["region", "date"], sort=True)["cumulative_deaths"].sum().reset_index()
    values = np.zeros((len(regions), grid.length))
    for r, region in enumerate(regions):
        sub = df[df["region"] == region].sort_values("date")
        cum = sub["cumulative_deaths"].to_numpy(dtype=float)
        inc = np.diff(cum, prepend=0.0)
        if np.any(inc < 0):
            bad = [str(d) for d, v in zip(sub["date"], inc) if v < 0]
            warnings.warn(f"{region}: cumulative deaths decrease on {bad}; increments clipped to 0",
                          stacklevel=2)
            inc = np.clip(inc, 0.0, None)
        for day, v in zip(sub["date"], inc):
            k = (day - grid.start_day).days
            if 0 <= k < grid.length:
                values[r, k] = v / population[region] * 1e5
    _zero_blackout(values, grid, blackout_end)
    return FunctionalDataset(grid, tuple(regions), values)


def build_istat_differential(raw: pd.DataFrame, population_covered: dict,
                             grid: TimeGrid = STUDY_GRID, regions=REGIONS) -> FunctionalDataset:
    """2020 all-cause deaths minus the 2015-19 same-day mean, per 100,000.

    Feb 29 has no counterpart in the reference years; its reference mean is
    taken from the Feb 28 reference counts.  Negative differences are kept.
    """
    df = _canonicalize(raw)
    _check_regions(df["region"].unique(), regions, population_covered)
    ycols = [f"deaths_{y}" for y in range(2015, 2020)]
    df = df.groupby(["region", "date"], sort=True)[ycols + ["deaths_2020"]].sum(min_count=1)
    df = df.reset_index()
    values = np.zeros((len(regions), grid.length))
    for r, region in enumerate(regions):
        sub = df[df["region"] == region].set_index("date")
        for k, day in enumerate(grid.dates):
            if day not in sub.index:
                raise ValueError(f"{region}: no ISTAT record for {day}")
            row = sub.loc[day]
            ref_day = day
            if day.month == 2 and day.day == 29:
                ref_day = day.replace(day=28)
                if ref_day not in sub.index:
                    raise ValueError(f"{region}: missing reference day {ref_day} for Feb 29")
            ref = sub.loc[ref_day, ycols].to_numpy(dtype=float)
            if np.any(np.isnan(ref)):
                raise ValueError(f"{region}: missing reference-year deaths for {ref_day}")
            d2020 = float(row["deaths_2020"])
            if np.isnan(d2020):
                raise ValueError(f"{region}: missing 2020 deaths for {day}")
            values[r, k] = (d2020 - ref.mean()) / population_covered[region] * 1e5
    return FunctionalDataset(grid, tuple(regions), values)


def build_max_mortality(dpc: FunctionalDataset, istat: FunctionalDataset) -> FunctionalDataset:
    """Pointwise maximum of the two raw (unsmoothed) mortality datasets."""
    if dpc.grid != istat.grid:
        raise ValueError(f"grid mismatch: {dpc.grid} vs {istat.grid}")
    if dpc.names != istat.names:
        istat = istat.reorder(dpc.names)
    return FunctionalDataset(dpc.grid, dpc.names, np.maximum(dpc.values, istat.values))


def build_positivity(raw: pd.DataFrame, grid: TimeGrid = STUDY_GRID, blackout_end=BLACKOUT_END,
                     regions=REGIONS) -> FunctionalDataset:
    """Daily ratio of new cases to new tests, truncated to ``[0, 1]``.

    Anomalies never abort: days with no tests give 0 (with a warning), and
    missing days give 0.
    """
    df = _canonicalize(raw)
    _check_regions(df["region"].unique(), regions)
    df = df.groupby(["region", "date"], sort=True)[["new_cases", "new_tests"]].sum().reset_index()
    values = np.zeros((len(regions), grid.length))
    for r, region in enumerate(regions):
        sub = df[df["region"] == region]
        for day, cases, tests in zip(sub["date"], sub["new_cases"], sub["new_tests"]):
            k = (day - grid.start_day).days
            if not 0 <= k < grid.length:
                continue
            if tests <= 0:
                if blackout_end is None or day > blackout_end:
                    warnings.warn(f"{region}: no tests recorded on {day}; positivity set to 0",
                                  stacklevel=2)
                values[r, k] = 0.0
            else:
                values[r, k] = min(max(cases / tests, 0.0), 1.0)
    _zero_blackout(values, grid, blackout_end)
    return FunctionalDataset(grid, tuple(regions), values)


def build_mobility(raw: pd.DataFrame, grid: TimeGrid = STUDY_GRID, regions=REGIONS) -> FunctionalDataset:
    """Grocery-and-pharmacy mobility change (fraction) on the study grid.

    Separate province rows are averaged; missing days are filled by linear
    interpolation (with a warning).
    """
    df = _canonicalize(raw)
    _check_regions(df["region"].unique(), regions)
    df = df.groupby(["region", "date"], sort=True)["grocery_pharmacy_change"].mean().reset_index()
    values = np.full((len(regions), grid.length), np.nan)
    for r, region in enumerate(regions):
        sub = df[df["region"] == region]
        for day, v in zip(sub["date"], sub["grocery_pharmacy_change"]):
            k = (day - grid.start_day).days
            if 0 <= k < grid.length:
                values[r, k] = v
        row = values[r]
        gaps = np.isnan(row)
        if gaps.all():
            raise ValueError(f"{region}: no mobility records on the grid")
        if gaps.any():
            warnings.warn(f"{region}: {int(gaps.sum())} missing mobility days interpolated",
                          stacklevel=2)
            x = np.arange(grid.length)
            row[gaps] = np.interp(x[gaps], x[~gaps], row[~gaps])
    return FunctionalDataset(grid, tuple(regions), values)


@dataclass(frozen=True)
class CovariateTable:
    """The 20 x 12 scalar covariate matrix after imputation.

    ``missing`` flags cells that were empty in the raw table; ``imputation_log``
    lists one human-readable line per imputed cell.
    """

    regions: tuple
    columns: tuple
    values: np.ndarray
    missing: np.ndarray
    imputation_log: tuple = field(default=())

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(name)]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.values, index=list(self.regions), columns=list(self.columns))


def read_covariates(path) -> pd.DataFrame:
    df = _read_csv(path, ["region"] + list(COVARIATES))
    return df


def build_covariates(raw: pd.DataFrame, regions=REGIONS, columns=COVARIATES,
                     max_missing: float = 0.25) -> CovariateTable:
    """Assemble the covariate table, imputing missing cells by column median.

    The median is taken over the observed cells of the column.  Columns with
    more than ``max_missing`` missing cells are rejected.
    """
    df = raw.copy()
    df["region"] = df["region"].map(canonical_region)
    if df["region"].duplicated().any():
        dup = sorted(df.loc[df["region"].duplicated(), "region"])
        raise ValueError(f"duplicate covariate rows for {dup}")
    missing_cols = [c for c in columns if c not in df.columns]
    if missing_cols:
        raise ValueError(f"covariate columns not found: {missing_cols}")
    df = df.set_index("region")
    absent = [r for r in regions if r not in df.index]
    if absent:
        raise ValueError(f"no covariate row for {absent}")
    frame = df.loc[list(regions), list(columns)].apply(pd.to_numeric, errors="coerce")
    values = frame.to_numpy(dtype=float)
    missing = np.isnan(values)
    log = []
    for j, col in enumerate(columns):
        frac = missing[:, j].mean()
        if frac > max_missing:
            raise ValueError(f"column {col!r} has {frac:.0%} missing cells (limit {max_missing:.0%})")
        if missing[:, j].any():
            med = float(np.median(values[~missing[:, j], j]))
            for i in np.flatnonzero(missing[:, j]):
                values[i, j] = med
                log.append(f"{regions[i]} / {col}: imputed column median {med:.6g}")
    return CovariateTable(tuple(regions), tuple(columns), values, missing, tuple(log))
