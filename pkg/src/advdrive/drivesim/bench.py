"""Oracle data collection, behavior cloning and the closed-loop collision benchmark."""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import models
from ..data import ImageDataset, to_bytes
from ..errors import ConfigError
from ..tensor import derive_seed, make_rng, no_grad
from ..training import fit_classifier
from .car import BRAKE, N_ACTIONS, advance, check_collisions, spawn, split_action
from .oracle import OracleConfig, oracle_controls, stop_distance
from .render import SIGN_RANGE, Weather, apply_weather, render_clear

log = logging.getLogger(__name__)

DEFAULT_WEATHERS = (Weather("clear", 0.0), Weather("rain", 0.5), Weather("fog", 0.5))


def _quantize(obs):
    # observations are stored as bytes; drivers always see the byte-grid values
    return to_bytes(obs).astype(np.float32) / np.float32(255)


@dataclass(frozen=True)
class CollectConfig:
    """Oracle rollouts with occasional forced steering and braking so the data shows recoveries."""

    n_cars: int = 4
    weather_every: int = 200
    disturb_prob: float = 0.02
    disturb_steps: tuple = (4, 12)
    brake_prob: float = 0.01
    brake_steps: tuple = (4, 20)
    stop_brake_prob: float = 0.1


def collect(track, weathers=DEFAULT_WEATHERS, n_steps=1000, seed=0, cfg=CollectConfig(),
            oracle_cfg=OracleConfig()):
    """Roll out the oracle and record ``(observation, oracle action)`` pairs.

    ``n_steps`` observations are recorded in total, spread over ``cfg.n_cars``
    cars driven in lockstep. Each car redraws its weather every
    ``weather_every`` steps. With probability ``disturb_prob`` per step a car
    starts a short burst of random full-lock steering, and with probability
    ``brake_prob`` (``stop_brake_prob`` within braking distance of a stop
    sign) a burst of forced braking. The recorded label is always the
    oracle's action, which teaches recovery from drift and pulling away from
    a standstill at a stop sign.
    """
    if n_steps < 1:
        raise ConfigError(f"n_steps must be >= 1, got {n_steps}")
    rng = make_rng(derive_seed(seed, "collect"))
    n_cars = min(cfg.n_cars, n_steps)
    per_car = -(-n_steps // n_cars)
    fleet = spawn(track, rng.uniform(0, track.length, n_cars))
    weather_idx = rng.integers(0, len(weathers), n_cars)
    disturb_left = np.zeros(n_cars, int)
    disturb_dir = np.zeros(n_cars, int)
    brake_left = np.zeros(n_cars, int)
    pixels = np.empty((per_car * n_cars, 32, 32, 3), np.uint8)
    labels = np.empty(per_car * n_cars, np.uint8)
    k = 0
    for t in range(per_car):
        if t and t % cfg.weather_every == 0:
            weather_idx = rng.integers(0, len(weathers), n_cars)
        obs = render_clear(fleet, track)
        for w in np.unique(weather_idx):
            sel = weather_idx == w
            obs[sel] = apply_weather(obs[sel], weathers[w], rng)
        steer, pedal = oracle_controls(fleet, track, oracle_cfg)
        pixels[k:k + n_cars] = to_bytes(obs)
        labels[k:k + n_cars] = (steer + 1) * 4 + pedal
        k += n_cars
        start = (disturb_left == 0) & (rng.random(n_cars) < cfg.disturb_prob)
        disturb_left[start] = rng.integers(cfg.disturb_steps[0], cfg.disturb_steps[1] + 1,
                                           start.sum())
        disturb_dir[start] = rng.choice([-1, 1], start.sum())
        active = disturb_left > 0
        steer = np.where(active, disturb_dir, steer)
        disturb_left[active] -= 1
        s_now, _ = track.project(fleet.position)
        p_brake = np.where(stop_distance(track, s_now) <= oracle_cfg.stop_distance,
                           cfg.stop_brake_prob, cfg.brake_prob)
        start = (brake_left == 0) & (rng.random(n_cars) < p_brake)
        brake_left[start] = rng.integers(cfg.brake_steps[0], cfg.brake_steps[1] + 1, start.sum())
        braking = brake_left > 0
        pedal = np.where(braking, BRAKE, pedal)
        brake_left[braking] -= 1
        advance(fleet, steer, pedal)
        check_collisions(fleet, track)
    # interleave order is car-major within each step; keep the first n_steps
    return ImageDataset(pixels[:n_steps], labels[:n_steps], N_ACTIONS)


def train_driver(ds, epochs, seed=0, batch_size=64, lr=1e-3, x_val=None, y_val=None):
    """Behavior-clone a 12-way action classifier from observation data."""
    if ds.n == 0:
        raise ConfigError("driver dataset is empty")
    net = models.build_classifier(N_ACTIONS, seed=derive_seed(seed, "driver"), name="driver")
    x = ds.pixels.astype(np.float32) / np.float32(255)
    hist = fit_classifier(net, x, ds.labels.astype(np.int64), epochs, batch_size, lr,
                          seed=derive_seed(seed, "driver"), x_val=x_val, y_val=y_val)
    return net, hist


class NetworkDriver:
    """Argmax policy of an action classifier over the (possibly perturbed) observation."""

    def __init__(self, net):
        self.net = net

    def __call__(self, obs, fleet):
        with no_grad(), self.net.mode(False):
            return self.net(obs, logits=True).data.argmax(axis=1)


def as_driver(driver):
    return NetworkDriver(driver) if isinstance(driver, models.Network) else driver


@dataclass
class BenchmarkResult:
    steps: int
    collisions: dict
    total_collisions: int
    sign_accuracy: float
    sign_steps: int
    steps_per_weather: dict
    perturbed: bool = False
    trace: list = field(default_factory=list, repr=False)

    def to_dict(self):
        out = asdict(self)
        out.pop("trace")
        return out

    def write_json(self, path, **extra):
        doc = {**self.to_dict(), **extra}
        with open(path, "w") as f:
            json.dump(doc, f, indent=2, sort_keys=True)
            f.write("\n")

    def write_trace(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "weather", "x", "y", "action", "collided"])
            w.writerows(self.trace)


def run_benchmark(driver, track, weathers=DEFAULT_WEATHERS, n_steps=36_000, perturbation=None,
                  seed=0, n_cars=12, oracle_cfg=OracleConfig(), trace=False):
    """Closed-loop collision count for ``driver``.

    ``n_steps`` total steps are split over ``n_cars`` cars spaced evenly
    around the track and simulated in lockstep; car ``i`` drives in
    ``weathers[i % len(weathers)]`` for the whole run. Each step renders the
    view, optionally perturbs it with ``perturbation = (generator, budget)``,
    and applies the driver's action. Lane departures are counted per weather
    kind and the car respawns on the centerline.

    ``sign_accuracy`` is the fraction of steps with a sign in view on which
    the driver's pedal choice matches the oracle's.
    """
    if n_steps < n_cars:
        raise ConfigError(f"n_steps {n_steps} must be at least n_cars {n_cars}")
    if n_steps % n_cars:
        raise ConfigError(f"n_steps {n_steps} must be a multiple of n_cars {n_cars}")
    drive = as_driver(driver)
    rng = make_rng(derive_seed(seed, "benchmark"))
    per_car = n_steps // n_cars
    fleet = spawn(track, np.arange(n_cars) * track.length / n_cars)
    widx = np.arange(n_cars) % len(weathers)
    kinds = [weathers[i].kind for i in widx]
    collisions = {w.kind: 0 for w in weathers}
    steps_per_weather = {w.kind: 0 for w in weathers}
    for k in kinds:
        steps_per_weather[k] += per_car
    sign_hits = sign_steps = 0
    rows = []
    for t in range(per_car):
        obs = render_clear(fleet, track)
        for w in np.unique(widx):
            sel = widx == w
            obs[sel] = apply_weather(obs[sel], weathers[w], rng)
        obs = _quantize(obs)
        if perturbation is not None:
            g, budget = perturbation
            obs = models.perturb_array(obs, g, budget)
        ids = np.asarray(drive(obs, fleet))
        steer, pedal = split_action(ids)

        o_steer, o_pedal = oracle_controls(fleet, track, oracle_cfg)
        s_now, _ = track.project(fleet.position)
        in_view = np.array([track.next_sign(s)[1] <= SIGN_RANGE for s in s_now])
        # the benchmark only distinguishes stopping from not stopping
        sign_hits += int(((pedal == BRAKE) == (o_pedal == BRAKE))[in_view].sum())
        sign_steps += int(in_view.sum())

        advance(fleet, steer, pedal)
        hit = check_collisions(fleet, track)
        for i in np.flatnonzero(hit):
            collisions[kinds[i]] += 1
        if trace:
            for i in range(n_cars):
                rows.append((t * n_cars + i, kinds[i], round(float(fleet.x[i]), 4),
                             round(float(fleet.y[i]), 4), int(ids[i]), int(hit[i])))
    total = sum(collisions.values())
    log.info("benchmark %d steps: %s collisions", n_steps, collisions)
    return BenchmarkResult(
        steps=n_steps, collisions=collisions, total_collisions=total,
        sign_accuracy=sign_hits / sign_steps if sign_steps else float("nan"),
        sign_steps=sign_steps, steps_per_weather=steps_per_weather,
        perturbed=perturbation is not None, trace=rows)
