"""Top-down car-frame observations with rain and fog.

The 32 x 32 view covers 8 m ahead of the car by 4 m to either side. Row 0
is farthest ahead and column 0 is leftmost. The bottom row is a speed bar
so the driver can see its own speed.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..data import render_sign
from ..errors import ConfigError
from .car import CarParams
from .track import MAP_RES

VIEW = 32
AHEAD = 8.0
SIDE = 4.0
SUPERSAMPLE = 2
SIGN_RANGE = 6.0
SIGN_PX = 8

GRASS = np.array([0.22, 0.45, 0.2])
ROAD = np.array([0.36, 0.36, 0.4])
EDGE = np.array([0.92, 0.92, 0.92])
DASH = np.array([0.95, 0.8, 0.2])
STREAK = np.array([0.85, 0.88, 0.95])
FOG_GRAY = 0.5
FOG_STRENGTH = 0.85
# fraction of pixels covered by rain streaks at intensity 1
STREAK_DENSITY = 0.12
STREAK_LEN = 4

WEATHER_KINDS = ("clear", "rain", "fog")


@dataclass(frozen=True)
class Weather:
    kind: str = "clear"
    intensity: float = 0.0

    def __post_init__(self):
        if self.kind not in WEATHER_KINDS:
            raise ConfigError(f"weather kind must be one of {WEATHER_KINDS}, got {self.kind!r}")
        if not 0 <= self.intensity <= 1:
            raise ConfigError(f"weather intensity must be in [0, 1], got {self.intensity}")

    @property
    def label(self):
        return self.kind


def _sample_grid():
    n = VIEW * SUPERSAMPLE
    step = AHEAD / n
    fwd = AHEAD - (np.arange(n) + 0.5) * step
    lat = -SIDE + (np.arange(n) + 0.5) * (2 * SIDE / n)
    return np.meshgrid(fwd, lat, indexing="ij")


_FWD, _LAT = _sample_grid()


@lru_cache(maxsize=None)
def _sign_patch(class_id):
    black = render_sign(class_id, SIGN_PX * 2, background=(0, 0, 0))
    white = render_sign(class_id, SIGN_PX * 2, background=(1, 1, 1))
    sign = black.reshape(SIGN_PX, 2, SIGN_PX, 2, 3).mean(axis=(1, 3))
    clear = (white - black).reshape(SIGN_PX, 2, SIGN_PX, 2, 3).mean(axis=(1, 3))
    return sign, clear


def _road_colors(track, s, lateral):
    hw = track.half_width
    a = np.abs(lateral)
    img = np.where((a <= hw)[..., None], ROAD, GRASS)
    edge = (a > hw - 0.15) & (a <= hw + 0.1)
    img[edge] = EDGE
    dash = (a < 0.12) & (np.mod(s, 3.0) < 1.5)
    img[dash] = DASH
    return img


def render_clear(fleet, track, params=CarParams()):
    """Weather-free observations for every car in ``fleet``: N x 32 x 32 x 3 float32."""
    raster = track.raster
    ox, oy = raster["origin"]
    lat_map, s_map = raster["lateral"], raster["s"]
    h, w = lat_map.shape
    n = len(fleet)
    cos, sin = np.cos(fleet.heading), np.sin(fleet.heading)
    # car frame: forward f = (cos, sin), right r = (sin, -cos)
    wx = fleet.x[:, None, None] + _FWD * cos[:, None, None] + _LAT * sin[:, None, None]
    wy = fleet.y[:, None, None] + _FWD * sin[:, None, None] - _LAT * cos[:, None, None]
    ix = np.rint((wx - ox) / MAP_RES).astype(np.intp)
    iy = np.rint((wy - oy) / MAP_RES).astype(np.intp)
    inside = (ix >= 0) & (ix < w) & (iy >= 0) & (iy < h)
    ixc, iyc = np.clip(ix, 0, w - 1), np.clip(iy, 0, h - 1)
    lateral = np.where(inside, lat_map[iyc, ixc], np.inf)
    s = s_map[iyc, ixc]
    img = _road_colors(track, s, lateral)
    k = SUPERSAMPLE
    img = img.reshape(n, VIEW, k, VIEW, k, 3).mean(axis=(2, 4))
    _draw_signs(img, fleet, track, cos, sin)
    _draw_speed(img, fleet.speed, params.v_max)
    return img.astype(np.float32)


def _draw_signs(img, fleet, track, cos, sin):
    if not track.signs:
        return
    s_car, _ = track.project(fleet.position)
    px_per_m = VIEW / AHEAD
    for i in range(len(fleet)):
        sign, dist = track.next_sign(s_car[i])
        if sign is None or dist > SIGN_RANGE:
            continue
        d = track.sign_position(sign) - (fleet.x[i], fleet.y[i])
        fwd = d[0] * cos[i] + d[1] * sin[i]
        lat = d[0] * sin[i] - d[1] * cos[i]
        row = int(round((AHEAD - fwd) * px_per_m - SIGN_PX / 2))
        col = int(round((lat + SIDE) * px_per_m - SIGN_PX / 2))
        patch, clear = _sign_patch(sign.class_id)
        r0, c0 = max(row, 0), max(col, 0)
        r1, c1 = min(row + SIGN_PX, VIEW), min(col + SIGN_PX, VIEW)
        if r0 >= r1 or c0 >= c1:
            continue
        pr, pc = slice(r0 - row, r1 - row), slice(c0 - col, c1 - col)
        img[i, r0:r1, c0:c1] = patch[pr, pc] + clear[pr, pc] * img[i, r0:r1, c0:c1]


def _draw_speed(img, speed, v_max):
    filled = np.rint(np.clip(speed / v_max, 0, 1) * VIEW).astype(int)
    cols = np.arange(VIEW)
    on = cols[None, :] < filled[:, None]
    img[:, -1] = np.where(on[..., None], 1.0, 0.0)


def rain_mask(rng, intensity, shape=(VIEW, VIEW)):
    """Boolean streak mask: short vertical streaks covering about
    ``STREAK_DENSITY * intensity`` of the pixels."""
    h, w = shape
    count = int(round(STREAK_DENSITY * intensity * h * w / STREAK_LEN))
    mask = np.zeros(shape, bool)
    if count == 0:
        return mask
    rows = rng.integers(0, h - STREAK_LEN + 1, count)
    cols = rng.integers(0, w, count)
    for k in range(STREAK_LEN):
        mask[rows + k, cols] = True
    return mask


def apply_weather(img, weather, rng):
    """Apply rain streaks or fog to a batch of clear renders (returns a new array)."""
    if weather.kind == "clear" or weather.intensity == 0:
        return img
    out = img.copy()
    if weather.kind == "fog":
        b = np.float32(FOG_STRENGTH * weather.intensity)
        return (out * (1 - b) + FOG_GRAY * b).astype(np.float32)
    for i in range(len(out)):
        m = rain_mask(rng, weather.intensity)
        out[i][m] = 0.4 * out[i][m] + 0.6 * STREAK
    return out


def render_observation(state, track, weather=Weather(), rng=None, params=CarParams()):
    """32 x 32 x 3 float observation for a single car state."""
    from .car import Fleet

    img = render_clear(Fleet.from_states([state]), track, params)
    if weather.kind == "rain" and weather.intensity > 0 and rng is None:
        raise ConfigError("rain rendering needs an rng")
    return apply_weather(img, weather, rng)[0]
