import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fdepi.depth import band_counts, functional_boxplot, modified_band_depth, signed_ranking

from _oracles import mbd_brute
from _synth import dataset


class TestBandDepth:
    def test_matches_brute_force_exactly(self):
        Y = np.random.default_rng(0).normal(size=(10, 30))
        np.testing.assert_array_equal(modified_band_depth(Y), mbd_brute(Y))

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, st.tuples(st.integers(3, 8), st.integers(1, 6)),
                  elements=st.integers(-3, 3).map(float)))
    def test_matches_brute_force_with_ties(self, Y):
        np.testing.assert_allclose(modified_band_depth(Y), mbd_brute(Y), rtol=0, atol=1e-15)

    def test_counts_are_integers(self):
        c = band_counts(np.array([[0.0], [1.0], [2.0]]))
        np.testing.assert_array_equal(c.ravel(), [2, 3, 2])

    @settings(max_examples=20, deadline=None)
    @given(arrays(float, (6, 5), elements=st.floats(-10, 10)), st.permutations(range(6)))
    def test_permutation_equivariant(self, Y, perm):
        np.testing.assert_array_equal(modified_band_depth(Y[list(perm)]), modified_band_depth(Y)[list(perm)])

    @settings(max_examples=20, deadline=None)
    @given(arrays(float, (6, 5), elements=st.integers(-50, 50).map(float)), st.integers(1, 9), st.integers(-5, 5))
    def test_invariant_to_increasing_maps(self, Y, a, b):
        np.testing.assert_array_equal(modified_band_depth(a * Y + b), modified_band_depth(Y))

    def test_needs_three_curves(self):
        with pytest.raises(ValueError, match="at least 3"):
            modified_band_depth(np.zeros((2, 4)))


def _bundle(seed=1, n=15, T=40):
    rng = np.random.default_rng(seed)
    t = np.linspace(0, 1, T)
    return np.sin(2 * np.pi * t) + rng.normal(0, 0.2, (n, 1)) + rng.normal(0, 0.2, (n, 1)) * t


class TestBoxplot:
    def test_flags_planted_outlier(self):
        Y = _bundle()
        Y[3] += 3.0
        rep = functional_boxplot(dataset(Y))
        assert rep.outliers == ["c03"]

    def test_central_region_envelope(self):
        Y = _bundle()
        rep = functional_boxplot(dataset(Y))
        assert len(rep.central_indices) == 8
        lo, hi = rep.central_region
        np.testing.assert_array_equal(lo, Y[rep.central_indices].min(axis=0))
        f_lo, f_hi = rep.fence
        np.testing.assert_allclose(f_hi - hi, 1.5 * (hi - lo))
        assert rep.median_index == int(np.argmax(rep.depths))

    def test_too_few(self):
        with pytest.raises(ValueError, match="at least 4"):
            functional_boxplot(dataset(np.zeros((3, 5))))


class TestSignedRanking:
    def test_order_and_signs(self):
        Y = np.array([np.full(10, v) for v in (0.0, 1.0, 2.0, 3.0, 4.0)]) + np.linspace(0, 0.1, 10)
        rep = signed_ranking(dataset(Y, list("abcde")))
        assert rep.median == "c"
        assert rep.ranking == ("e", "d", "c", "b", "a")
        assert list(np.sign(rep.signed_depths)) == [-1, -1, 1, 1, 1]

    def test_csv(self):
        rep = signed_ranking(dataset(_bundle()))
        buf = io.StringIO()
        rep.write_csv(buf)
        lines = buf.getvalue().splitlines()
        assert lines[0] == "region,depth,above_share,sign,rank,outlier"
        assert [int(l.split(",")[4]) for l in lines[1:]] == list(range(1, 16))

    def test_half_above_warns(self):
        Y = np.array([[0, 0, 0, 0], [1, 1, -1, -1], [0.1, 0.1, 0.1, 0.1], [-2, -2, -2, -2], [3, 3, 3, 3.0]])
        with pytest.warns(RuntimeWarning, match="exactly half"):
            signed_ranking(dataset(Y))
