import datetime as dt

import numpy as np
import pandas as pd
import pytest

from fdepi import ingest
from fdepi.fdcore import TimeGrid
from fdepi.pipeline import default_data_dir

D = dt.date
GRID = TimeGrid(D(2020, 3, 1), 4)


def _dpc(rows):
    return pd.DataFrame(rows, columns=["date", "region", "cumulative_deaths", "new_cases", "new_tests"])


def _days(n, start=D(2020, 3, 1)):
    return [start + dt.timedelta(k) for k in range(n)]


class TestRegions:
    def test_canonical_list(self):
        assert len(ingest.REGIONS) == 20
        assert "Trento/Bolzano" in ingest.REGIONS

    @pytest.mark.parametrize("raw", ["P.A. Trento", "P.A. Bolzano", "Trentino-Alto Adige"])
    def test_provinces_merge(self, raw):
        assert ingest.canonical_region(raw) == "Trento/Bolzano"

    def test_aliases(self):
        assert ingest.canonical_region("Emilia-Romagna") == "Emilia Romagna"
        assert ingest.canonical_region("Valle d’Aosta") == "Valle d'Aosta"

    def test_unknown_lists_names(self):
        with pytest.raises(ValueError, match="Lombardia"):
            ingest.canonical_region("Atlantis")


class TestDpcMortality:
    def test_difference_and_scale(self):
        raw = _dpc([(d, "Lazio", c, 0, 1) for d, c in zip(_days(4), [0, 0, 3, 5])])
        out = ingest.build_dpc_mortality(raw, {"Lazio": 1e5}, GRID, blackout_end=None, regions=("Lazio",))
        np.testing.assert_allclose(out.values[0], [0, 0, 3, 2])

    def test_decrease_clipped_with_warning(self):
        raw = _dpc([(d, "Lazio", c, 0, 1) for d, c in zip(_days(4), [5, 4, 4, 6])])
        with pytest.warns(UserWarning, match="decrease"):
            out = ingest.build_dpc_mortality(raw, {"Lazio": 1e5}, GRID, blackout_end=None, regions=("Lazio",))
        np.testing.assert_allclose(out.values[0], [5, 0, 0, 2])

    def test_blackout_zeroed(self):
        grid = TimeGrid(D(2020, 2, 16), 12)
        raw = _dpc([(d, "Lazio", 10 * k, 0, 1) for k, d in enumerate(_days(12, D(2020, 2, 16)))])
        out = ingest.build_dpc_mortality(raw, {"Lazio": 1e5}, grid, regions=("Lazio",))
        assert np.all(out.values[0, :8] == 0.0)
        np.testing.assert_allclose(out.values[0, 8:], 10.0)

    def test_provinces_summed(self):
        rows = [(d, p, c, 0, 1) for p in ("P.A. Trento", "P.A. Bolzano") for d, c in zip(_days(2), [1, 3])]
        grid = TimeGrid(D(2020, 3, 1), 2)
        out = ingest.build_dpc_mortality(_dpc(rows), {"Trento/Bolzano": 2e5}, grid, None, ("Trento/Bolzano",))
        np.testing.assert_allclose(out.values[0], [1.0, 2.0])

    def test_unknown_region(self):
        raw = _dpc([(D(2020, 3, 1), "Narnia", 0, 0, 1)])
        with pytest.raises(ValueError, match="unknown region"):
            ingest.build_dpc_mortality(raw, {}, GRID, None, ("Lazio",))


def _istat(rows):
    cols = ["date", "region"] + [f"deaths_{y}" for y in range(2015, 2021)]
    return pd.DataFrame(rows, columns=cols)


class TestIstat:
    def test_positive_and_negative(self):
        grid = TimeGrid(D(2020, 3, 1), 2)
        raw = _istat([(D(2020, 3, 1), "Lazio", 10, 10, 10, 10, 10, 12),
                      (D(2020, 3, 2), "Lazio", 10, 10, 10, 10, 10, 8)])
        out = ingest.build_istat_differential(raw, {"Lazio": 1e6}, grid, ("Lazio",))
        np.testing.assert_allclose(out.values[0], [0.2, -0.2])

    def test_leap_day_uses_feb_28(self):
        grid = TimeGrid(D(2020, 2, 28), 2)
        raw = _istat([(D(2020, 2, 28), "Lazio", 10, 20, 30, 40, 50, 30),
                      (D(2020, 2, 29), "Lazio", None, None, None, None, None, 35)])
        out = ingest.build_istat_differential(raw, {"Lazio": 1e5}, grid, ("Lazio",))
        np.testing.assert_allclose(out.values[0], [0.0, 5.0])

    def test_missing_reference_day(self):
        grid = TimeGrid(D(2020, 3, 1), 2)
        raw = _istat([(D(2020, 3, 1), "Lazio", 1, 1, 1, 1, 1, 1)])
        with pytest.raises(ValueError, match="no ISTAT record"):
            ingest.build_istat_differential(raw, {"Lazio": 1e5}, grid, ("Lazio",))

    def test_missing_reference_year(self):
        grid = TimeGrid(D(2020, 3, 1), 2)
        raw = _istat([(D(2020, 3, 1), "Lazio", 1, 1, 1, 1, 1, 1),
                      (D(2020, 3, 2), "Lazio", 1, None, 1, 1, 1, 1)])
        with pytest.raises(ValueError, match="reference-year"):
            ingest.build_istat_differential(raw, {"Lazio": 1e5}, grid, ("Lazio",))


class TestMax:
    def test_pointwise_max(self):
        from _synth import dataset
        a = dataset([[0.5, 0.0, 1.0]], ["Lazio"])
        b = dataset([[0.3, -0.2, 2.0]], ["Lazio"])
        np.testing.assert_array_equal(ingest.build_max_mortality(a, b).values, [[0.5, 0.0, 2.0]])

    def test_grid_mismatch(self):
        from _synth import dataset
        a = dataset([[0.5, 0.0, 1.0]], ["Lazio"])
        b = dataset([[0.3, -0.2, 2.0]], ["Lazio"], start=D(2020, 1, 1))
        with pytest.raises(ValueError, match="grid mismatch"):
            ingest.build_max_mortality(a, b)


class TestPositivity:
    def test_ratios_and_truncation(self):
        raw = _dpc([(d, "Lazio", 0, c, t) for d, c, t in zip(_days(4), [30, -1, 60, 5], [100, 50, 50, 0])])
        with pytest.warns(UserWarning, match="no tests"):
            out = ingest.build_positivity(raw, GRID, blackout_end=None, regions=("Lazio",))
        np.testing.assert_allclose(out.values[0], [0.3, 0.0, 1.0, 0.0])

    def test_blackout_zero(self):
        grid = TimeGrid(D(2020, 2, 22), 4)
        raw = _dpc([(d, "Lazio", 0, 5, 10) for d in _days(4, D(2020, 2, 22))])
        out = ingest.build_positivity(raw, grid, regions=("Lazio",))
        np.testing.assert_allclose(out.values[0], [0, 0, 0.5, 0.5])


class TestMobility:
    def test_interpolates_gap(self):
        raw = pd.DataFrame({"date": [D(2020, 3, 1), D(2020, 3, 4)], "region": ["Lazio"] * 2,
                            "grocery_pharmacy_change": [-0.3, 0.0]})
        with pytest.warns(UserWarning, match="interpolated"):
            out = ingest.build_mobility(raw, GRID, ("Lazio",))
        np.testing.assert_allclose(out.values[0], [-0.3, -0.2, -0.1, 0.0])

    def test_provinces_averaged(self):
        grid = TimeGrid(D(2020, 3, 1), 2)
        raw = pd.DataFrame({"date": _days(2) * 2, "region": ["Trento"] * 2 + ["Bolzano"] * 2,
                            "grocery_pharmacy_change": [-0.2, -0.4, -0.4, -0.6]})
        out = ingest.build_mobility(raw, grid, ("Trento/Bolzano",))
        np.testing.assert_allclose(out.values[0], [-0.3, -0.5])


class TestCovariates:
    def _raw(self):
        rng = np.random.default_rng(0)
        df = pd.DataFrame(rng.uniform(1, 2, (20, 12)), columns=ingest.COVARIATES)
        df.insert(0, "region", ingest.REGIONS)
        return df

    def test_complete_unchanged(self):
        raw = self._raw()
        tab = ingest.build_covariates(raw)
        np.testing.assert_array_equal(tab.values, raw[list(ingest.COVARIATES)].to_numpy())
        assert tab.imputation_log == ()
        assert not tab.missing.any()

    def test_median_imputation_logged(self):
        raw = self._raw()
        col = "Ave. employees per firm"
        raw.loc[raw["region"] == "Valle d'Aosta", col] = np.nan
        tab = ingest.build_covariates(raw)
        i = tab.regions.index("Valle d'Aosta")
        observed = np.delete(raw[col].to_numpy(), i)
        assert tab.column(col)[i] == np.median(observed)
        assert tab.missing[i, tab.columns.index(col)]
        assert len(tab.imputation_log) == 1 and "Valle d'Aosta" in tab.imputation_log[0]

    def test_too_many_missing(self):
        raw = self._raw()
        raw.loc[:5, "PM10"] = np.nan
        with pytest.raises(ValueError, match="PM10"):
            ingest.build_covariates(raw)


@pytest.fixture(scope="module")
def built():
    import warnings
    d = default_data_dir()
    pop = ingest.read_population(d / "population.csv")
    raw = ingest.read_dpc(d / "dpc.csv")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        dpc = ingest.build_dpc_mortality(raw, pop["population"])
        ist = ingest.build_istat_differential(ingest.read_istat(d / "istat.csv"), pop["population_covered"])
        pos = ingest.build_positivity(raw)
        mob = ingest.build_mobility(ingest.read_mobility(d / "mobility.csv"))
    return dpc, ist, ingest.build_max_mortality(dpc, ist), pos, mob


class TestBundledFixtures:
    """Invariants that must hold for whatever fixture set is active."""

    def test_shared_grid_and_regions(self, built):
        for ds in built:
            assert ds.grid == ingest.STUDY_GRID
            assert ds.names == ingest.REGIONS

    def test_max_dominance(self, built):
        dpc, ist, mx, _, _ = built
        np.testing.assert_array_equal(mx.values, np.maximum(dpc.values, ist.values))

    def test_positivity_range(self, built):
        pos = built[3].values
        assert pos.min() >= 0 and pos.max() <= 1

    def test_blackout(self, built):
        assert np.all(built[0].values[:, :8] == 0)
