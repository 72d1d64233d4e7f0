"""2-D top-down driving simulator: track, car, renderer, oracle and benchmark."""
from .bench import (DEFAULT_WEATHERS, BenchmarkResult, CollectConfig, NetworkDriver, collect,
                    run_benchmark, train_driver)
from .car import (N_ACTIONS, PEDALS, STEER_GROUPS, Action, CarParams, CarState, Fleet, action_id, advance,
                  check_collisions, spawn, split_action, step)
from .oracle import OracleConfig, OracleDriver, oracle_actions, oracle_driver
from .render import Weather, apply_weather, rain_mask, render_clear, render_observation
from .track import Sign, Track, polar_track, straight_track

default_track = polar_track

__all__ = [
    "DEFAULT_WEATHERS", "BenchmarkResult", "CollectConfig", "NetworkDriver", "collect",
    "run_benchmark", "train_driver", "N_ACTIONS", "PEDALS", "STEER_GROUPS", "Action", "CarParams", "CarState",
    "Fleet", "action_id", "advance", "check_collisions", "spawn", "split_action", "step",
    "OracleConfig", "OracleDriver", "oracle_actions", "oracle_driver", "Weather",
    "apply_weather", "rain_mask", "render_clear", "render_observation", "Sign", "Track",
    "polar_track", "straight_track", "default_track",
]
