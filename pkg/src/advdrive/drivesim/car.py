"""Kinematic bicycle car, discrete actions and the collision/respawn rule."""
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError

PEDALS = ("throttle", "brake", "coast", "reverse")
STEERS = (-1, 0, 1)
N_ACTIONS = len(STEERS) * len(PEDALS)
# action id -> steering index, for attacks that only need to flip the steering
STEER_GROUPS = tuple(k // len(PEDALS) for k in range(N_ACTIONS))
THROTTLE, BRAKE, COAST, REVERSE = range(4)


@dataclass(frozen=True)
class Action:
    steer: int
    pedal: str

    def __post_init__(self):
        if self.steer not in STEERS:
            raise ConfigError(f"steer must be one of {STEERS}, got {self.steer}")
        if self.pedal not in PEDALS:
            raise ConfigError(f"pedal must be one of {PEDALS}, got {self.pedal!r}")

    @property
    def id(self):
        return action_id(self.steer + 1, PEDALS.index(self.pedal))

    @classmethod
    def from_id(cls, k):
        steer_idx, pedal_idx = divmod(int(k), len(PEDALS))
        return cls(STEERS[steer_idx], PEDALS[pedal_idx])


def action_id(steer_idx, pedal_idx):
    """Class id ``steer_idx * 4 + pedal_idx`` with steer_idx 0/1/2 for left/none/right."""
    return np.asarray(steer_idx) * len(PEDALS) + np.asarray(pedal_idx)


def split_action(ids):
    """(steer in {-1, 0, 1}, pedal index) arrays from action ids."""
    steer_idx, pedal = np.divmod(np.asarray(ids), len(PEDALS))
    return steer_idx - 1, pedal


@dataclass(frozen=True)
class CarParams:
    wheelbase: float = 2.5
    v_max: float = 8.0
    accel: float = 2.0
    brake: float = 6.0
    drag: float = 0.5
    steer_max: float = 0.5
    steer_rate: float = 4.0


@dataclass
class CarState:
    x: float
    y: float
    heading: float
    speed: float = 0.0
    steer: float = 0.0


class Fleet:
    """Struct-of-arrays state for several cars stepped in lockstep."""

    def __init__(self, x, y, heading, speed=None, steer=None):
        self.x = np.asarray(x, dtype=np.float64).copy()
        n = self.x.shape[0]
        self.y = np.asarray(y, dtype=np.float64).copy()
        self.heading = np.asarray(heading, dtype=np.float64).copy()
        self.speed = np.zeros(n) if speed is None else np.asarray(speed, np.float64).copy()
        self.steer = np.zeros(n) if steer is None else np.asarray(steer, np.float64).copy()

    def __len__(self):
        return len(self.x)

    @classmethod
    def from_states(cls, states):
        cols = np.array([[s.x, s.y, s.heading, s.speed, s.steer] for s in states]).T
        return cls(*cols)

    def state(self, i):
        return CarState(float(self.x[i]), float(self.y[i]), float(self.heading[i]),
                        float(self.speed[i]), float(self.steer[i]))

    @property
    def position(self):
        return np.stack([self.x, self.y], axis=-1)


def advance(fleet, steer, pedal, dt=0.05, params=CarParams()):
    """Advance ``fleet`` in place by one step of the discrete controls.

    The steering angle slews toward ``steer * steer_max``; speed integrates a
    constant acceleration clipped to [0, v_max]. Position uses the trapezoid
    rule on speed and heading, so straight-line motion under constant
    acceleration is exact. Positive steer turns right (heading decreases).
    """
    if dt <= 0:
        raise ConfigError(f"dt must be positive, got {dt}")
    p = params
    steer = np.asarray(steer, dtype=np.float64)
    pedal = np.asarray(pedal)
    target = steer * p.steer_max
    delta = np.clip(target - fleet.steer, -p.steer_rate * dt, p.steer_rate * dt)
    new_steer = fleet.steer + delta

    v = fleet.speed
    # reverse cannot drive speed negative (speed >= 0), so it acts as a brake
    acc = np.select([pedal == THROTTLE, (pedal == BRAKE) | (pedal == REVERSE)],
                    [p.accel, -p.brake], -p.drag)
    new_v = np.clip(v + acc * dt, 0.0, p.v_max)
    # exact time of reaching 0 or v_max keeps the distance integral piecewise exact
    dist = _distance(v, new_v, acc, dt)

    yaw_rate0 = -v * np.tan(fleet.steer) / p.wheelbase
    yaw_rate1 = -new_v * np.tan(new_steer) / p.wheelbase
    new_heading = fleet.heading + 0.5 * (yaw_rate0 + yaw_rate1) * dt
    mid = 0.5 * (fleet.heading + new_heading)
    fleet.x = fleet.x + dist * np.cos(mid)
    fleet.y = fleet.y + dist * np.sin(mid)
    fleet.heading = np.mod(new_heading + np.pi, 2 * np.pi) - np.pi
    fleet.speed = new_v
    fleet.steer = new_steer
    return fleet


def _distance(v0, v1, acc, dt):
    with np.errstate(divide="ignore", invalid="ignore"):
        # time spent accelerating before the clip; the rest is at constant v1
        t_ramp = np.where(acc != 0, np.clip((v1 - v0) / acc, 0.0, dt), dt)
    return 0.5 * (v0 + v1) * t_ramp + v1 * (dt - t_ramp)


def check_collisions(fleet, track):
    """Respawn cars whose center left the lane; return the boolean collision mask."""
    s, lateral = track.project(fleet.position)
    hit = np.abs(lateral) > track.half_width
    if hit.any():
        p = track.point_at(s[hit])
        fleet.x[hit] = p[:, 0]
        fleet.y[hit] = p[:, 1]
        fleet.heading[hit] = track.heading_at(s[hit])
        fleet.speed[hit] = 0.0
        fleet.steer[hit] = 0.0
    return hit


def step(state, action, track, dt=0.05, params=CarParams()):
    """Single-car step: ``(new_state, collided)``."""
    fleet = Fleet.from_states([state])
    advance(fleet, [action.steer], [PEDALS.index(action.pedal)], dt, params)
    hit = check_collisions(fleet, track)
    return fleet.state(0), bool(hit[0])


def spawn(track, s, speed=0.0):
    """Fleet aligned with the centerline at arclengths ``s``."""
    s = np.atleast_1d(np.asarray(s, dtype=np.float64))
    p = track.point_at(s)
    return Fleet(p[:, 0], p[:, 1], track.heading_at(s), np.full(len(s), speed))
