"""
Maidenhead grid module.
Encodes well coordinates into 6-character Maidenhead blocks (MHB) and derives
the coarser 4-character grouping used for zero imputation.

Character pairs encode longitude first, then latitude:
  field     A-R  (20 deg lon x 10 deg lat)
  square    0-9  ( 2 deg lon x  1 deg lat)
  subsquare a-x  ( 5' lon    x  2.5' lat)
Cells are half-open [low, high) on both axes.
"""
import math
from fractions import Fraction
from typing import Tuple

from src.config import EARTH_RADIUS_MILES
from src.exceptions import LocatorError, LocatorParseError

# Subsquares per degree
SUBSQUARES_PER_DEG_LON = 12
SUBSQUARES_PER_DEG_LAT = 24

SUBSQUARE_LON_DEG = 1.0 / SUBSQUARES_PER_DEG_LON
SUBSQUARE_LAT_DEG = 1.0 / SUBSQUARES_PER_DEG_LAT

# 240 subsquares span one field and 24 span one square on both axes
_PER_FIELD = 240
_PER_SQUARE = 24


def _cell_index(value_deg: float, origin_deg: int, per_degree: int) -> int:
    """Index of the cell holding `value_deg`, computed on the exact binary value."""
    return math.floor((Fraction(value_deg) + origin_deg) * per_degree)


def encode_locator(lat: float, lon: float) -> str:
    """
    Encodes a coordinate into its 6-character Maidenhead locator.

    Args:
        lat (float): Latitude in degrees, -90 <= lat < 90.
        lon (float): Longitude in degrees, -180 <= lon < 180.

    Returns:
        str: Locator such as "DN87gm".
    """
    if not (-90.0 <= lat < 90.0) or math.isnan(lat):
        raise LocatorError("lat", lat)
    if not (-180.0 <= lon < 180.0) or math.isnan(lon):
        raise LocatorError("lon", lon)

    lon_idx = min(_cell_index(lon, 180, SUBSQUARES_PER_DEG_LON), 18 * _PER_FIELD - 1)
    lat_idx = min(_cell_index(lat, 90, SUBSQUARES_PER_DEG_LAT), 18 * _PER_FIELD - 1)

    return "".join((
        chr(ord("A") + lon_idx // _PER_FIELD),
        chr(ord("A") + lat_idx // _PER_FIELD),
        str((lon_idx // _PER_SQUARE) % 10),
        str((lat_idx // _PER_SQUARE) % 10),
        chr(ord("a") + lon_idx % _PER_SQUARE),
        chr(ord("a") + lat_idx % _PER_SQUARE),
    ))


def parse_locator(code: str) -> Tuple[int, int]:
    """
    Validates a 6-character locator and returns its (lon, lat) subsquare indices.
    Raises LocatorParseError naming the first offending character position.
    """
    if not isinstance(code, str):
        raise LocatorParseError(str(code), 1, "locator must be a string")
    if len(code) != 6:
        position = len(code) + 1 if len(code) < 6 else 7
        raise LocatorParseError(code, position, f"expected 6 characters, got {len(code)}")

    checks = (
        ("A", "R", "field letter A-R"),
        ("A", "R", "field letter A-R"),
        ("0", "9", "square digit 0-9"),
        ("0", "9", "square digit 0-9"),
        ("a", "x", "subsquare letter a-x"),
        ("a", "x", "subsquare letter a-x"),
    )
    for position, (char, (low, high, expected)) in enumerate(zip(code, checks), start=1):
        if not (low <= char <= high):
            raise LocatorParseError(code, position, f"expected {expected}, got {char!r}")

    lon_idx = ((ord(code[0]) - ord("A")) * _PER_FIELD
               + int(code[2]) * _PER_SQUARE
               + ord(code[4]) - ord("a"))
    lat_idx = ((ord(code[1]) - ord("A")) * _PER_FIELD
               + int(code[3]) * _PER_SQUARE
               + ord(code[5]) - ord("a"))
    return lon_idx, lat_idx


def is_valid_locator(code: str) -> bool:
    try:
        parse_locator(code)
    except LocatorParseError:
        return False
    return True


def block_center(code: str) -> Tuple[float, float]:
    """
    Returns the (lat, lon) geometric center of a 6-character block.
    """
    lon_idx, lat_idx = parse_locator(code)
    lat = -90.0 + (lat_idx + 0.5) * SUBSQUARE_LAT_DEG
    lon = -180.0 + (lon_idx + 0.5) * SUBSQUARE_LON_DEG
    return lat, lon


def prefix4(code: str) -> str:
    """First four characters (field + square) of a valid 6-character locator."""
    parse_locator(code)
    return code[:4]


def block_area_sq_miles(code: str) -> float:
    """
    Spherical-earth area of a block: latitude arc of 2.5' times the longitude arc
    of 5' measured at the block's center latitude.
    """
    center_lat, _ = block_center(code)
    miles_per_deg = EARTH_RADIUS_MILES * math.pi / 180.0
    lat_arc = SUBSQUARE_LAT_DEG * miles_per_deg
    lon_arc = SUBSQUARE_LON_DEG * miles_per_deg * math.cos(math.radians(center_lat))
    return lat_arc * lon_arc
