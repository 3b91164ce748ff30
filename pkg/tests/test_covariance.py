import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from paleorecon.errors import DomainError
from paleorecon.spatial import (
    CovarianceParams,
    Location,
    distance_matrix,
    exp_cov,
    great_circle_distance,
    haversine,
    round_index,
)

lons = st.floats(-180, 359.999, allow_nan=False)
lats = st.floats(-90, 90, allow_nan=False)


class TestExpCov:
    def test_zero_distance_returns_process_variance(self):
        p = CovarianceParams(120.0, 0.42, 0.1)
        assert exp_cov(p, 0.0) == 0.42

    def test_one_range_is_variance_over_e(self):
        p = CovarianceParams(299.1, 0.739, 0.146)
        assert exp_cov(p, 299.1) == pytest.approx(0.739 * math.exp(-1), rel=1e-14)
        assert exp_cov(p, 299.1) == pytest.approx(0.2719, abs=5e-5)

    def test_far_limit(self):
        assert exp_cov(CovarianceParams(1.0, 1.0, 0.0), 1e6) == 0.0

    @pytest.mark.parametrize("d", [np.nan, np.inf, -1.0])
    def test_bad_distance(self, d):
        with pytest.raises(DomainError):
            exp_cov(CovarianceParams(1.0, 1.0, 0.0), d)

    @given(st.floats(0, 5000), st.floats(1e-3, 5000))
    def test_strictly_decreasing(self, d, step):
        p = CovarianceParams(300.0, 0.75, 0.15)
        a, b = exp_cov(p, d), exp_cov(p, d + step)
        assert b <= a
        if a > 1e-300 and step > 1e-9 * d:
            assert b < a


class TestParams:
    @pytest.mark.parametrize("args", [(0, 1, 0), (-1, 1, 0), (1, 0, 0), (1, 1, -0.1)])
    def test_invalid(self, args):
        with pytest.raises(DomainError):
            CovarianceParams(*args)

    def test_total(self):
        assert CovarianceParams(1, 0.739, 0.146).var_total == pytest.approx(0.885)


class TestRounding:
    @pytest.mark.parametrize("x,expected", [
        (0.3, 0), (-1.6, -2), (0.5, 0), (0.500001, 1), (-0.5, 0), (-0.500001, -1),
        (-1.5, -1), (-1.500001, -2), (5.0, 1), (-9.0, -2),
    ])
    def test_cells(self, x, expected):
        assert round_index(x) == expected

    def test_vectorized(self):
        np.testing.assert_array_equal(round_index(np.array([-3, -1, 0, 2.0])), [-2, -1, 0, 1])

    @given(st.floats(-10, 10), st.floats(0, 5))
    def test_monotone(self, x, dx):
        assert round_index(x) <= round_index(x + dx)


class TestLocations:
    def test_longitude_normalized(self):
        assert Location(190.0, 0.0).lon == pytest.approx(-170.0)
        assert Location(116.4, 39.9).lon == 116.4

    @pytest.mark.parametrize("lon,lat", [(0, 91), (0, -90.5), (360, 0), (-181, 0), (np.nan, 0)])
    def test_invalid(self, lon, lat):
        with pytest.raises(DomainError):
            Location(lon, lat)

    def test_antipodal_on_equator(self):
        d = great_circle_distance(Location(0, 0), Location(180, 0))
        assert d == pytest.approx(math.pi * 6371.0, rel=1e-12)
        assert d == pytest.approx(20015.1, abs=0.1)

    def test_beijing_shanghai(self):
        d = great_circle_distance(Location(116.4, 39.9), Location(121.5, 31.2))
        # independent spherical law of cosines
        p1, p2 = math.radians(39.9), math.radians(31.2)
        dl = math.radians(121.5 - 116.4)
        ref = 6371.0 * math.acos(math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(dl))
        assert d == pytest.approx(ref, rel=1e-9)
        assert d == pytest.approx(1071.286, abs=1e-3)
        # the commonly quoted rounded figure of about 1067 km is within 0.5%
        assert d == pytest.approx(1067, rel=5e-3)

    @given(lons, lats, lons, lats)
    def test_metric_properties(self, lo1, la1, lo2, la2):
        a, b = Location(lo1, la1), Location(lo2, la2)
        assert great_circle_distance(a, a) == 0.0
        assert great_circle_distance(a, b) == pytest.approx(great_circle_distance(b, a), abs=1e-9)
        assert 0.0 <= great_circle_distance(a, b) <= math.pi * 6371.0 + 1e-6

    def test_matrix_agrees_with_pairwise(self):
        rng = np.random.default_rng(0)
        lon, lat = rng.uniform(100, 130, 7), rng.uniform(18, 45, 7)
        d = distance_matrix(lon, lat)
        assert np.all(np.diag(d) == 0)
        for i in range(7):
            for j in range(7):
                assert d[i, j] == pytest.approx(float(haversine(lon[i], lat[i], lon[j], lat[j])), abs=1e-9)
