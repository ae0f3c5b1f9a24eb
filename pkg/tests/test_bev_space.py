import pytest
from hypothesis import given, strategies as st

from atlasbench.bev_space import (
    KINEMATIC_BINS,
    SPATIAL_BINS,
    BevPoint,
    BinSpec,
    decode_bin,
    decode_point,
    encode_bin,
    encode_point,
)


class TestEncodeBin:
    def test_lower_bound(self):
        assert encode_bin(-50.0) == 0

    def test_upper_bound_clamps_to_last_bin(self):
        assert encode_bin(50.0) == 999

    def test_zero_maps_to_bin_500(self):
        # oracle: floor((0 + 50) / 0.1) = 500
        assert encode_bin(0.0) == 500

    @pytest.mark.parametrize("value,expected", [(-60.0, 0), (120.0, 999), (1e6, 999), (-1e6, 0)])
    def test_out_of_range_clamps(self, value, expected):
        assert encode_bin(value) == expected

    @pytest.mark.parametrize("value", [float("nan"), float("inf"), float("-inf")])
    def test_non_finite_rejected(self, value):
        with pytest.raises(ValueError):
            encode_bin(value)

    def test_decimal_boundary_values(self):
        # floor(42.4 / 0.1) = 424 in exact decimal arithmetic
        assert encode_bin(-7.6) == 424
        assert encode_bin(-0.1) == 499
        assert encode_bin(0.1) == 501


class TestDecodeBin:
    @pytest.mark.parametrize("b,expected", [(0, -49.95), (999, 49.95), (500, 0.05)])
    def test_bin_centers(self, b, expected):
        assert decode_bin(b) == pytest.approx(expected, abs=1e-12)

    @pytest.mark.parametrize("b", [-1, 1000, 10**9])
    def test_out_of_range_index(self, b):
        with pytest.raises(ValueError):
            decode_bin(b)


class TestPoints:
    def test_origin(self):
        assert encode_point(BevPoint(0.0, 0.0)) == (500, 500)

    def test_lower_corner(self):
        assert encode_point(BevPoint(-50.0, -50.0)) == (0, 0)

    def test_mixed_point(self):
        # floor(62.34 / 0.1), floor(42.4 / 0.1)
        assert encode_point(BevPoint(12.34, -7.6)) == (623, 424)

    def test_decode_point(self):
        p = decode_point((500, 500))
        assert p.x == pytest.approx(0.05) and p.y == pytest.approx(0.05)


class TestBinSpecValidation:
    def test_lo_ge_hi_rejected(self):
        with pytest.raises(ValueError):
            BinSpec(lo=1.0, hi=1.0)

    def test_nonpositive_n_rejected(self):
        with pytest.raises(ValueError):
            BinSpec(n=0)


@pytest.mark.parametrize("spec", [SPATIAL_BINS, KINEMATIC_BINS])
class TestProperties:
    def test_idempotence_exhaustive(self, spec):
        for b in range(spec.n):
            assert encode_bin(decode_bin(b, spec), spec) == b

    def test_round_trip_error_bound(self, spec):
        # Guard band of 1e-9 covers the deliberate boundary snap in encode_bin.
        half_width = (spec.hi - spec.lo) / (2 * spec.n)
        for i in range(5000):
            v = spec.lo + (spec.hi - spec.lo) * (i / 5000.0)
            err = abs(decode_bin(encode_bin(v, spec), spec) - v)
            assert err <= half_width + 1e-9


@given(st.floats(min_value=-50.0, max_value=49.999, allow_nan=False))
def test_round_trip_property(v):
    err = abs(decode_bin(encode_bin(v)) - v)
    assert err <= 0.05 + 1e-9


@given(
    st.floats(min_value=-80.0, max_value=80.0, allow_nan=False),
    st.floats(min_value=-80.0, max_value=80.0, allow_nan=False),
)
def test_monotonicity(v1, v2):
    if v1 > v2:
        v1, v2 = v2, v1
    assert encode_bin(v1) <= encode_bin(v2)


def test_kinematic_spec_same_geometry():
    assert KINEMATIC_BINS.lo == SPATIAL_BINS.lo
    assert KINEMATIC_BINS.hi == SPATIAL_BINS.hi
    assert KINEMATIC_BINS.n == SPATIAL_BINS.n
    assert KINEMATIC_BINS.unit != SPATIAL_BINS.unit
