"""Rule-based driver with full state access, used to label cloning data."""
from dataclasses import dataclass

import numpy as np

from ..data import STOP_CLASS
from .car import BRAKE, COAST, PEDALS, THROTTLE, Action, Fleet, action_id


@dataclass(frozen=True)
class OracleConfig:
    lookahead: float = 4.0
    steer_threshold: float = 0.05
    # speed thresholds (cruise +- band, crawl) sit on pixel edges of the
    # 4 px per m/s speed bar, so every pedal label is readable from the image
    cruise: float = 5.0
    band: float = 0.375
    stop_distance: float = 3.0
    crawl: float = 1.125


def heading_error(fleet, track, lookahead):
    """Angle to the pure-pursuit target point; positive means the target is to the right."""
    s, _ = track.project(fleet.position)
    target = track.point_at(s + lookahead)
    dx = target[:, 0] - fleet.x
    dy = target[:, 1] - fleet.y
    cos, sin = np.cos(fleet.heading), np.sin(fleet.heading)
    fwd = dx * cos + dy * sin
    right = dx * sin - dy * cos
    return np.arctan2(right, fwd), s


def stop_distance(track, s):
    """Arclength to the next stop sign ahead of each ``s`` (inf if none)."""
    stops = np.array([sg.s for sg in track.signs if sg.class_id == STOP_CLASS])
    if stops.size == 0:
        return np.full(np.shape(s), np.inf)
    return track.ahead(np.asarray(s)[..., None], stops).min(axis=-1)


def oracle_controls(fleet, track, cfg=OracleConfig()):
    """(steer, pedal index) arrays for every car.

    Steering is pure pursuit toward the centerline point ``lookahead`` meters
    ahead, quantized by a dead band. The pedal holds cruise speed, except that
    a stop sign within ``stop_distance`` forces braking down to ``crawl`` speed.
    """
    alpha, s = heading_error(fleet, track, cfg.lookahead)
    steer = np.where(alpha > cfg.steer_threshold, 1,
                     np.where(alpha < -cfg.steer_threshold, -1, 0))
    v = fleet.speed
    near_stop = stop_distance(track, s) <= cfg.stop_distance
    pedal = np.select(
        [near_stop & (v > cfg.crawl), v < cfg.cruise - cfg.band, v > cfg.cruise + cfg.band],
        [BRAKE, THROTTLE, BRAKE], COAST)
    return steer, pedal


def oracle_actions(fleet, track, cfg=OracleConfig()):
    steer, pedal = oracle_controls(fleet, track, cfg)
    return action_id(steer + 1, pedal)


def oracle_driver(state, track, cfg=OracleConfig()):
    """Action for a single :class:`CarState`."""
    steer, pedal = oracle_controls(Fleet.from_states([state]), track, cfg)
    return Action(int(steer[0]), PEDALS[int(pedal[0])])


class OracleDriver:
    """Benchmark driver that ignores the image and reads the true state."""

    def __init__(self, track, cfg=OracleConfig()):
        self.track = track
        self.cfg = cfg

    def __call__(self, obs, fleet):
        return oracle_actions(fleet, self.track, self.cfg)
