import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from advdrive import drivesim as sim
from advdrive.data import STOP_CLASS
from advdrive.drivesim import render
from advdrive.drivesim.car import BRAKE, COAST, THROTTLE, CarParams
from advdrive.errors import ConfigError
from advdrive.tensor import no_grad


@pytest.fixture(scope="module")
def track():
    return sim.polar_track()


@pytest.fixture(scope="module")
def straight():
    return sim.straight_track()


def car_at(track, s, lateral=0.0, speed=0.0, dheading=0.0):
    p = track.point_at(s)
    t = track.tangent_at(s)
    p = p + lateral * np.array([t[1], -t[0]])
    return sim.CarState(float(p[0]), float(p[1]), float(track.heading_at(s)) + dheading, speed)


class TestTrack:
    def test_closed_and_simple(self, track):
        c = track.centerline
        assert np.array_equal(c[0], c[-1])
        assert track.is_simple()
        assert track.half_width > track.car_half_width

    def test_turns_both_ways(self, track):
        h = np.unwrap(track.heading_at(np.linspace(0, track.length, 2000, endpoint=False)))
        turn = np.diff(h)
        assert (turn > 1e-4).any() and (turn < -1e-4).any()

    def test_project_signs(self, straight):
        s, lat = straight.project(np.array([[50.0, 0.0], [50.0, -1.0], [50.0, 1.5]]))
        np.testing.assert_allclose(s, 50.0, atol=0.02)
        np.testing.assert_allclose(lat, [0.0, 1.0, -1.5], atol=1e-9)

    def test_open_polyline_rejected(self):
        with pytest.raises(ConfigError):
            sim.Track(np.array([[0, 0], [1, 0], [1, 1], [0, 1.0]]))

    def test_narrow_lane_rejected(self):
        with pytest.raises(ConfigError):
            sim.straight_track(half_width=0.5)

    def test_has_stop_signs(self, track):
        assert any(sg.class_id == STOP_CLASS for sg in track.signs)


class TestActions:
    def test_id_round_trip(self):
        for k in range(sim.N_ACTIONS):
            assert sim.Action.from_id(k).id == k
        assert sim.Action(-1, "throttle").id == 0
        assert sim.Action(1, "reverse").id == 11

    def test_invalid(self):
        with pytest.raises(ConfigError):
            sim.Action(2, "throttle")
        with pytest.raises(ConfigError):
            sim.Action(0, "boost")


class TestStep:
    def test_coast_at_rest_is_fixed_point(self, straight):
        st = car_at(straight, 50.0)
        new, hit = sim.step(st, sim.Action(0, "coast"), straight)
        assert new == st and not hit

    def test_throttle_closed_form(self, straight):
        p = CarParams()
        st = car_at(straight, 20.0, speed=1.0)
        for _ in range(10):
            st, hit = sim.step(st, sim.Action(0, "throttle"), straight)
            assert not hit
        t = 10 * 0.05
        assert st.x - 20.0 == pytest.approx(1.0 * t + 0.5 * p.accel * t * t, abs=1e-9)
        assert st.speed == pytest.approx(1.0 + p.accel * t)
        assert st.y == pytest.approx(0.0, abs=1e-12)

    def test_speed_clamped(self, straight):
        st = car_at(straight, 20.0, speed=CarParams().v_max)
        st, _ = sim.step(st, sim.Action(0, "throttle"), straight)
        assert st.speed == CarParams().v_max
        st, _ = sim.step(car_at(straight, 20.0, speed=0.1), sim.Action(0, "reverse"), straight)
        assert st.speed == 0.0

    def test_positive_steer_turns_right(self, straight):
        st = car_at(straight, 20.0, speed=5.0)
        for _ in range(5):
            st, _ = sim.step(st, sim.Action(1, "coast"), straight)
        assert st.heading < 0 and st.y < 0

    def test_collision_at_first_exceedance(self, straight):
        st = car_at(straight, 10.0, speed=5.0)
        for _ in range(500):
            fleet = sim.Fleet.from_states([st])
            sim.advance(fleet, [1], [COAST])
            _, lat = straight.project(fleet.position)
            new, hit = sim.step(st, sim.Action(1, "coast"), straight)
            assert hit == (abs(lat[0]) > straight.half_width)
            if hit:
                s, lat_new = straight.project(np.array([[new.x, new.y]]))
                assert new.speed == 0.0 and abs(lat_new[0]) < 1e-9
                return
            st = new
        pytest.fail("car never left the lane")

    def test_bad_dt(self, straight):
        with pytest.raises(ConfigError):
            sim.step(car_at(straight, 0.0), sim.Action(0, "coast"), straight, dt=0)


class TestRender:
    def test_shape_and_range(self, track):
        obs = sim.render_observation(car_at(track, 10.0, speed=3.0), track)
        assert obs.shape == (32, 32, 3) and obs.dtype == np.float32
        assert obs.min() >= 0 and obs.max() <= 1

    def test_clear_deterministic_and_rng_free(self, track):
        st = car_at(track, 33.0, lateral=0.4, speed=2.0)
        a = sim.render_observation(st, track, sim.Weather(), np.random.default_rng(1))
        b = sim.render_observation(st, track, sim.Weather(), np.random.default_rng(2))
        c = sim.render_observation(st, track)
        assert np.array_equal(a, b) and np.array_equal(a, c)

    def test_fog_full(self, track):
        obs = sim.render_observation(car_at(track, 80.0, speed=4.0), track,
                                     sim.Weather("fog", 1.0))
        assert np.abs(obs - 0.5).max() <= 0.1

    def test_rain_density(self, track):
        st = car_at(track, 80.0, speed=4.0)
        clear = sim.render_observation(st, track)
        fracs = []
        for seed in range(20):
            wet = sim.render_observation(st, track, sim.Weather("rain", 0.5),
                                         np.random.default_rng(seed))
            fracs.append(np.any(wet != clear, axis=-1).mean())
        target = render.STREAK_DENSITY * 0.5
        assert abs(np.mean(fracs) - target) <= 0.3 * target

    def test_speed_bar(self, track):
        slow = sim.render_observation(car_at(track, 80.0, speed=0.0), track)
        fast = sim.render_observation(car_at(track, 80.0, speed=CarParams().v_max), track)
        assert slow[-1].max() == 0 and fast[-1].min() == 1

    def test_sign_visible_only_when_near(self, track):
        sign = track.signs[0]
        near = sim.render_observation(car_at(track, sign.s - 4.0), track)
        far = sim.render_observation(car_at(track, sign.s - 7.0), track)
        bare = sim.Track(track.centerline, track.half_width)
        assert not np.array_equal(near, sim.render_observation(car_at(bare, sign.s - 4.0), bare))
        assert np.array_equal(far, sim.render_observation(car_at(bare, sign.s - 7.0), bare))

    def test_rain_needs_rng(self, track):
        with pytest.raises(ConfigError):
            sim.render_observation(car_at(track, 0.0), track, sim.Weather("rain", 0.5))

    def test_weather_validation(self):
        with pytest.raises(ConfigError):
            sim.Weather("snow", 0.5)
        with pytest.raises(ConfigError):
            sim.Weather("fog", 1.5)


class TestOracle:
    def test_aligned_on_straight(self, straight):
        assert sim.oracle_driver(car_at(straight, 50.0), straight).steer == 0

    def test_offset_left_steers_right(self, straight):
        assert sim.oracle_driver(car_at(straight, 50.0, lateral=-1.0), straight).steer == 1
        assert sim.oracle_driver(car_at(straight, 50.0, lateral=1.0), straight).steer == -1

    def test_pedal_cruise(self, straight):
        assert sim.oracle_driver(car_at(straight, 50.0, speed=0.0), straight).pedal == "throttle"
        assert sim.oracle_driver(car_at(straight, 50.0, speed=7.5), straight).pedal == "brake"
        assert sim.oracle_driver(car_at(straight, 50.0, speed=5.0), straight).pedal == "coast"

    @given(st.floats(0.0, 8.0))
    @settings(max_examples=80, deadline=None)
    def test_pedal_readable_from_speed_bar(self, straight, v):
        # the label must be a function of the rendered bar, not of hidden speed
        assume(abs((v * 4) % 1 - 0.5) > 1e-6)
        obs = sim.render_observation(car_at(straight, 50.0, speed=v), straight)
        lit = int((obs[-1, :, 0] > 0.5).sum())
        pedal = sim.oracle_driver(car_at(straight, 50.0, speed=v), straight).pedal
        expected = "throttle" if lit <= 18 else "coast" if lit <= 21 else "brake"
        assert pedal == expected

    def test_brakes_for_stop_sign(self, straight):
        straight.signs = [sim.Sign(60.0, STOP_CLASS)]
        try:
            assert sim.oracle_driver(car_at(straight, 58.0, speed=5.0), straight).pedal == "brake"
            # crawl past once slowed down
            assert sim.oracle_driver(car_at(straight, 58.0, speed=0.5),
                                     straight).pedal == "throttle"
            assert sim.oracle_driver(car_at(straight, 50.0, speed=5.0), straight).pedal == "coast"
        finally:
            straight.signs = []

    def test_ten_thousand_steps_no_collision(self, track):
        fleet = sim.spawn(track, [0.0])
        collisions = 0
        for _ in range(10_000):
            steer, pedal = sim.oracle.oracle_controls(fleet, track)
            sim.advance(fleet, steer, pedal)
            collisions += int(sim.check_collisions(fleet, track).sum())
        assert collisions == 0

    def test_oracle_benchmark_zero(self, track):
        res = sim.run_benchmark(sim.OracleDriver(track), track, n_steps=1200, seed=3)
        assert res.total_collisions == 0
        assert set(res.collisions) == {"clear", "rain", "fog"}
        assert res.sign_accuracy == 1.0


class TestCollect:
    def test_size_and_labels(self, track):
        ds = sim.collect(track, n_steps=100, seed=1)
        assert ds.n == 100 and ds.class_count == 12
        assert ds.pixels.shape[1:] == (32, 32, 3)
        assert len(np.unique(ds.labels)) >= 3

    def test_deterministic(self, track):
        a = sim.collect(track, n_steps=60, seed=2)
        b = sim.collect(track, n_steps=60, seed=2)
        assert a == b

    def test_bad_steps(self, track):
        with pytest.raises(ConfigError):
            sim.collect(track, n_steps=0)

    def test_brake_bursts_add_recovery_labels(self, track):
        # forced braking slows cars, and the oracle answers with throttle
        calm = sim.CollectConfig(disturb_prob=0.0, brake_prob=0.0)
        braked = sim.CollectConfig(disturb_prob=0.0, brake_prob=0.2)
        n_calm = (sim.collect(track, n_steps=400, seed=3, cfg=calm).labels % 4 == 0).sum()
        n_braked = (sim.collect(track, n_steps=400, seed=3, cfg=braked).labels % 4 == 0).sum()
        assert n_braked > n_calm


@pytest.fixture(scope="module")
def driver(track):
    ds = sim.collect(track, n_steps=48, seed=0)
    return sim.train_driver(ds, epochs=1, batch_size=16)[0]


class TestDriverAndBenchmark:
    def test_epochs_zero_is_init(self, track):
        ds = sim.collect(track, n_steps=8, seed=0)
        net, _ = sim.train_driver(ds, epochs=0, seed=4)
        ref, _ = sim.train_driver(ds, epochs=0, seed=4)
        assert all(np.array_equal(a, b) for a, b in
                   zip(net.state_dict().values(), ref.state_dict().values()))

    def test_empty_dataset(self, track):
        ds = sim.collect(track, n_steps=4)
        with pytest.raises(ConfigError):
            sim.train_driver(ds.subset(np.arange(0)), epochs=1)

    def test_action_distribution(self, driver, track):
        obs = sim.render_observation(car_at(track, 5.0), track)[None]
        with no_grad():
            p = driver(obs).data
        assert p.shape == (1, 12) and abs(p.sum() - 1) < 1e-5

    def test_benchmark_deterministic_and_monotone(self, driver, track):
        a = sim.run_benchmark(driver, track, n_steps=240, seed=1, trace=True)
        b = sim.run_benchmark(driver, track, n_steps=240, seed=1, trace=True)
        assert a.to_dict() == b.to_dict() and a.trace == b.trace
        tally = np.cumsum([row[-1] for row in a.trace])
        assert np.all(np.diff(tally) >= 0) and tally[-1] == a.total_collisions
        assert sum(a.steps_per_weather.values()) == 240

    def test_benchmark_json_and_trace(self, driver, track, tmp_path):
        res = sim.run_benchmark(driver, track, n_steps=24, seed=1, trace=True)
        res.write_json(tmp_path / "b.json", stage="test")
        res.write_trace(tmp_path / "b.csv")
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "step,weather,x,y,action,collided" and len(lines) == 25

    def test_benchmark_step_validation(self, driver, track):
        with pytest.raises(ConfigError):
            sim.run_benchmark(driver, track, n_steps=25)

    def test_perturbed_observations_bounded(self, driver, track):
        from advdrive import models

        seen = []

        def spy(obs, fleet):
            seen.append(obs.copy())
            return np.full(len(obs), 5)

        g = models.build_generator(seed=0)
        budget = models.PerturbationBudget()
        sim.run_benchmark(spy, track, n_steps=12, perturbation=(g, budget), seed=0)
        clean = []
        sim.run_benchmark(lambda o, f: clean.append(o.copy()) or np.full(len(o), 5), track,
                          n_steps=12, seed=0)
        assert np.abs(seen[0] - clean[0]).max() <= np.float32(budget.epsilon)
        assert not math.isclose(float(np.abs(seen[0] - clean[0]).max()), 0.0)
