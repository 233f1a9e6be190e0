import math

import numpy as np
import pytest

from src.exceptions import LocatorError, LocatorParseError
from src.grid import (
    SUBSQUARE_LAT_DEG, SUBSQUARE_LON_DEG, block_area_sq_miles, block_center,
    encode_locator, is_valid_locator, parse_locator, prefix4,
)


@pytest.mark.parametrize("lat, lon, expected", [
    (-90.0, -180.0, "AA00aa"),
    (47.5, -103.5, "DN87gm"),
    (47.9, -102.9, "DN87nv"),
])
def test_encode_known_points(lat, lon, expected):
    assert encode_locator(lat, lon) == expected


def test_cell_edges_belong_to_the_upper_cell():
    # 47.5 is the low edge of subsquare "m" in latitude
    assert encode_locator(47.5, -103.5)[5] == "m"
    assert encode_locator(47.5 - 1e-9, -103.5)[5] == "l"


@pytest.mark.parametrize("lat, lon, expected", [
    (47.5 - 1e-11, -103.5, "DN87gl"),
    (47.5, -103.5 - 1e-11, "DN87fm"),
    (47.0 - 1e-12, -104.0 - 1e-12, "DN76xx"),
    (47.5 + 1e-11, -103.5 + 1e-11, "DN87gm"),
])
def test_points_just_off_an_edge_stay_in_their_cell(lat, lon, expected):
    code = encode_locator(lat, lon)
    assert code == expected
    c_lat, c_lon = block_center(code)
    assert c_lat - SUBSQUARE_LAT_DEG / 2 <= lat < c_lat + SUBSQUARE_LAT_DEG / 2
    assert c_lon - SUBSQUARE_LON_DEG / 2 <= lon < c_lon + SUBSQUARE_LON_DEG / 2


@pytest.mark.parametrize("lat, lon, name", [
    (90.0, 0.0, "lat"),
    (-90.1, 0.0, "lat"),
    (0.0, 180.0, "lon"),
    (0.0, -181.0, "lon"),
    (float("nan"), 0.0, "lat"),
])
def test_encode_rejects_out_of_range(lat, lon, name):
    with pytest.raises(LocatorError) as err:
        encode_locator(lat, lon)
    assert err.value.name == name


def test_block_center_of_origin():
    lat, lon = block_center("AA00aa")
    assert lat == pytest.approx(-90 + 1.25 / 60)
    assert lon == pytest.approx(-180 + 2.5 / 60)


def test_block_center_inside_square():
    lat, lon = block_center("DN87gm")
    assert 47 <= lat < 48
    assert -104 <= lon < -102


@pytest.mark.parametrize("code, position", [
    ("dN87gm", 1),
    ("DS87gm", 2),
    ("DNx7gm", 3),
    ("DN8Agm", 4),
    ("DN87ym", 5),
    ("DN87gM", 6),
    ("DN87g", 6),
    ("DN87gma", 7),
])
def test_parse_errors_name_the_position(code, position):
    with pytest.raises(LocatorParseError) as err:
        parse_locator(code)
    assert err.value.position == position
    assert not is_valid_locator(code)


def _random_codes(rng, n):
    for _ in range(n):
        yield "".join((
            chr(ord("A") + rng.integers(18)),
            chr(ord("A") + rng.integers(18)),
            str(rng.integers(10)),
            str(rng.integers(10)),
            chr(ord("a") + rng.integers(24)),
            chr(ord("a") + rng.integers(24)),
        ))


def test_center_round_trip_on_random_codes():
    rng = np.random.default_rng(12345)
    for code in _random_codes(rng, 1000):
        assert encode_locator(*block_center(code)) == code


def test_center_is_near_random_points():
    rng = np.random.default_rng(54321)
    lats = rng.uniform(-90, 90, 1000)
    lons = rng.uniform(-180, 180, 1000)
    for lat, lon in zip(lats, lons):
        c_lat, c_lon = block_center(encode_locator(lat, lon))
        assert abs(c_lat - lat) <= SUBSQUARE_LAT_DEG / 2 + 1e-9
        assert abs(c_lon - lon) <= SUBSQUARE_LON_DEG / 2 + 1e-9


@pytest.mark.parametrize("code, expected", [
    ("DN87gm", "DN87"), ("AA00aa", "AA00"), ("DN97xv", "DN97"),
])
def test_prefix4(code, expected):
    assert prefix4(code) == expected


def test_prefix4_rejects_bad_code():
    with pytest.raises(LocatorParseError):
        prefix4("DN87")


def test_equatorial_area():
    # "JJ00aa" is the first block north of the equator
    area = block_area_sq_miles("JJ00aa")
    assert area == pytest.approx(16.6, abs=0.1)


def test_area_halves_longitude_width_at_sixty_degrees():
    # No block is centred exactly on 60 degrees
    code = encode_locator(60.0, 10.0)
    lat, _ = block_center(code)
    equator = block_area_sq_miles("JJ00aa") / math.cos(math.radians(block_center("JJ00aa")[0]))
    assert block_area_sq_miles(code) == pytest.approx(equator * math.cos(math.radians(lat)))
    assert block_area_sq_miles(code) == pytest.approx(equator * 0.5, rel=1e-3)


def test_area_decreases_towards_the_poles():
    areas = [block_area_sq_miles(encode_locator(lat, -103.0)) for lat in (0.5, 20.0, 47.5, 70.0, 89.9)]
    assert all(a > b for a, b in zip(areas, areas[1:]))


def test_bakken_blocks_are_about_eleven_square_miles():
    assert 10.5 < block_area_sq_miles("DN87gm") < 12.0
