"""Closed-loop road geometry with roadside signs.

Coordinates are meters in a world frame with x east and y north. The car
drives in the direction of increasing arclength ``s``. Lateral offsets are
signed with positive meaning right of the centerline.
"""
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.spatial import cKDTree

from ..data import STOP_CLASS
from ..errors import ConfigError

# rasterized-map resolution used for rendering (meters per cell)
MAP_RES = 0.1


@dataclass(frozen=True)
class Sign:
    s: float
    class_id: int
    offset: float = 3.0


@dataclass
class Track:
    """Closed centerline polyline (first point repeated last), lane half-width and signs."""

    centerline: np.ndarray
    half_width: float = 2.0
    signs: list = field(default_factory=list)
    car_half_width: float = 0.9

    def __post_init__(self):
        c = np.asarray(self.centerline, dtype=np.float64)
        if c.ndim != 2 or c.shape[1] != 2 or len(c) < 4:
            raise ConfigError(f"centerline must be an M x 2 polyline, got {c.shape}")
        if not np.allclose(c[0], c[-1]):
            raise ConfigError("centerline must be closed (first point == last point)")
        if self.half_width <= self.car_half_width:
            raise ConfigError(f"lane half-width {self.half_width} must exceed car half-width "
                              f"{self.car_half_width}")
        self.centerline = c
        seg = np.diff(c, axis=0)
        self._seg_len = np.hypot(seg[:, 0], seg[:, 1])
        self._s = np.concatenate([[0.0], np.cumsum(self._seg_len)])
        self.signs = sorted(self.signs, key=lambda sg: sg.s)

    @property
    def length(self):
        return float(self._s[-1])

    @cached_property
    def _dense(self):
        # resample at ~2 cm so nearest-sample lookup is effectively exact
        n = max(int(math.ceil(self.length / 0.02)), 8)
        s = np.arange(n) * (self.length / n)
        return s, self.point_at(s), cKDTree(self.point_at(s))

    def point_at(self, s):
        s = np.mod(np.asarray(s, dtype=np.float64), self.length)
        i = np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._seg_len) - 1)
        t = (s - self._s[i]) / self._seg_len[i]
        c = self.centerline
        return c[i] + (c[i + 1] - c[i]) * t[..., None]

    def tangent_at(self, s):
        s = np.mod(np.asarray(s, dtype=np.float64), self.length)
        i = np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._seg_len) - 1)
        d = self.centerline[i + 1] - self.centerline[i]
        return d / self._seg_len[i][..., None]

    def heading_at(self, s):
        t = self.tangent_at(s)
        return np.arctan2(t[..., 1], t[..., 0])

    def project(self, points):
        """Arclength and signed lateral offset (right positive) of the nearest centerline point."""
        p = np.asarray(points, dtype=np.float64)
        s_grid, _, tree = self._dense
        _, idx = tree.query(p.reshape(-1, 2))
        s = s_grid[idx].reshape(p.shape[:-1])
        d = p - self.point_at(s)
        t = self.tangent_at(s)
        lateral = d[..., 0] * t[..., 1] - d[..., 1] * t[..., 0]
        return s, lateral

    def ahead(self, s_from, s_to):
        """Forward arclength distance from ``s_from`` to ``s_to`` in [0, length)."""
        return np.mod(np.asarray(s_to) - np.asarray(s_from), self.length)

    def next_sign(self, s):
        """The first sign strictly ahead of arclength ``s`` and its distance, or (None, inf)."""
        if not self.signs:
            return None, math.inf
        dist = [float(self.ahead(s, sg.s)) or self.length for sg in self.signs]
        k = int(np.argmin(dist))
        return self.signs[k], dist[k]

    def sign_position(self, sign):
        p = self.point_at(sign.s)
        t = self.tangent_at(sign.s)
        return p + sign.offset * np.array([t[1], -t[0]])

    @cached_property
    def raster(self):
        """World-aligned maps of (lateral offset, arclength) on a MAP_RES grid around the track."""
        margin = self.half_width + 8.0
        lo = self.centerline.min(axis=0) - margin
        hi = self.centerline.max(axis=0) + margin
        nx, ny = (np.ceil((hi - lo) / MAP_RES).astype(int) + 1)
        xs = lo[0] + np.arange(nx) * MAP_RES
        ys = lo[1] + np.arange(ny) * MAP_RES
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx, gy], axis=-1).reshape(-1, 2)
        s_grid, _, tree = self._dense
        # cells well off the road only need to be marked as off-road
        _, idx = tree.query(pts, distance_upper_bound=self.half_width + 1.0)
        near = idx < len(s_grid)
        s = np.zeros(len(pts))
        lateral = np.full(len(pts), np.inf)
        s[near] = s_grid[idx[near]]
        d = pts[near] - self.point_at(s[near])
        t = self.tangent_at(s[near])
        lateral[near] = d[:, 0] * t[:, 1] - d[:, 1] * t[:, 0]
        return {"origin": lo, "lateral": lateral.reshape(gx.shape).astype(np.float32),
                "s": s.reshape(gx.shape).astype(np.float32)}

    def is_simple(self):
        """True if no two non-adjacent centerline segments intersect."""
        c = self.centerline
        a, b = c[:-1], c[1:]
        m = len(a)
        for i in range(m):
            p, r = a[i], b[i] - a[i]
            q, sv = a, b - a
            denom = r[0] * sv[:, 1] - r[1] * sv[:, 0]
            qp = q - p
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (qp[:, 0] * sv[:, 1] - qp[:, 1] * sv[:, 0]) / denom
                u = (qp[:, 0] * r[1] - qp[:, 1] * r[0]) / denom
            hit = (np.abs(denom) > 1e-12) & (t > 0) & (t < 1) & (u > 0) & (u < 1)
            adjacent = np.zeros(m, bool)
            adjacent[[i, (i - 1) % m, (i + 1) % m]] = True
            if np.any(hit & ~adjacent):
                return False
        return True


def polar_track(radius=28.0, waist=0.3, points=720, half_width=2.0, sign_spacing=25.0,
                sign_classes=10, stop_every=2):
    """Peanut-shaped loop ``r = radius * (1 + waist * cos 2phi)``.

    With ``waist > 0.2`` the sides pinch inward, so the loop has both left and
    right bends. Signs are placed every ``sign_spacing`` meters on the right;
    every ``stop_every``-th sign is the stop class, the rest cycle through the
    other classes.
    """
    phi = np.linspace(0, 2 * np.pi, points + 1)
    r = radius * (1 + waist * np.cos(2 * phi))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
    pts[-1] = pts[0]
    track = Track(pts, half_width)
    n = int(track.length // sign_spacing)
    others = [c for c in range(sign_classes) if c != STOP_CLASS]
    signs = []
    for i in range(n):
        cls = STOP_CLASS if i % stop_every == 0 else others[(i // stop_every) % len(others)]
        signs.append(Sign(s=(i + 0.5) * sign_spacing, class_id=cls))
    track.signs = signs
    return track


def straight_track(length=200.0, half_width=2.0, width=60.0):
    """Rounded rectangle with two long straights, for kinematics tests."""
    r = width / 2
    n = 200
    top = np.stack([np.linspace(0, length, n), np.full(n, 0.0)], axis=1)
    a = np.linspace(-np.pi / 2, np.pi / 2, n)
    right = np.stack([length + r * np.cos(a), r + r * np.sin(a)], axis=1)
    bottom = np.stack([np.linspace(length, 0, n), np.full(n, width)], axis=1)
    left = np.stack([-r * np.cos(a), r - r * np.sin(a)], axis=1)
    pts = np.concatenate([top, right[1:], bottom[1:], left[1:]])
    # counter-clockwise in world frame
    pts = np.concatenate([pts, pts[:1]])
    keep = np.concatenate([[True], np.hypot(*np.diff(pts, axis=0).T) > 1e-9])
    return Track(pts[keep], half_width)
