import datetime as dt
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imbarb.battery_env import (
    Action,
    BatteryEnv,
    BatteryParams,
    EnvState,
    NormStats,
    StateBatch,
    encode_state,
    soc_transition,
    step_reward,
)
from tests.conftest import series_from_hourly

ETA = math.sqrt(0.9)
PARAMS = BatteryParams(
    capacity_mwh=8.0, p_max_mw=4.0, eta_charge=ETA, eta_discharge=ETA, soc_min=0.10, step_minutes=2
)


class TestSocTransition:
    # expected values are direct evaluations of the transition formula
    # soc + (max(a,0)*eta_c + min(a,0)/eta_d) * dt/capacity, clipped to [0.1, 1]
    cases = [
        (0.5, Action.CHARGE, 0.5 + 4 * ETA * (1 / 30) / 8),
        (0.5, Action.IDLE, 0.5),
        (0.5, Action.DISCHARGE, 0.5 + (-4 / ETA) * (1 / 30) / 8),
        (0.995, Action.CHARGE, 1.0),
        (0.11, Action.DISCHARGE, 0.10),
    ]

    @pytest.mark.parametrize("soc,action,expected", cases)
    def test_tabulated_cases(self, soc, action, expected):
        assert soc_transition(soc, action, PARAMS) == pytest.approx(expected, abs=1e-12)

    def test_spec_magnitudes(self):
        # the same cases against their decimal expansions
        assert soc_transition(0.5, Action.CHARGE, PARAMS) == pytest.approx(0.5158114, abs=5e-8)
        assert soc_transition(0.5, Action.DISCHARGE, PARAMS) == pytest.approx(0.4824318, abs=5e-8)

    @given(st.floats(0.1, 1.0), st.sampled_from([0, 1, 2]))
    @settings(max_examples=200, deadline=None)
    def test_output_stays_in_band(self, soc, action):
        out = soc_transition(soc, action, PARAMS)
        assert PARAMS.soc_min <= out <= PARAMS.soc_max

    @given(st.floats(0.2, 0.9))
    @settings(max_examples=100, deadline=None)
    def test_round_trip_loss(self, soc):
        # a soc-neutral cycle returns eta_c * eta_d of the consumed energy;
        # equivalently the discharge leg drains 1/(eta_c * eta_d) times what
        # the equal-duration charge leg stored
        up = soc_transition(soc, Action.CHARGE, PARAMS)
        if up >= 1.0:  # clipped, identity does not apply
            return
        down = soc_transition(up, Action.DISCHARGE, PARAMS)
        if down <= PARAMS.soc_min:
            return
        assert down < soc
        stored = up - soc
        drained = up - down
        assert stored / drained == pytest.approx(ETA * ETA, rel=1e-12)


class TestStepReward:
    def test_charge_cost(self):
        assert step_reward(Action.CHARGE, 100.0, PARAMS) == pytest.approx(-4 * 100 / 30, abs=1e-9)

    def test_idle_free(self):
        assert step_reward(Action.IDLE, 12345.6, PARAMS) == 0.0

    def test_discharge_at_negative_price(self):
        assert step_reward(Action.DISCHARGE, -50.0, PARAMS) == pytest.approx(-200 / 30, abs=1e-9)

    def test_no_dt_scaling_flag(self):
        literal = BatteryParams(reward_dt_scaling=False)
        assert step_reward(Action.CHARGE, 100.0, literal) == pytest.approx(-400.0)

    @given(st.floats(-1000, 2000))
    @settings(max_examples=100, deadline=None)
    def test_antisymmetry(self, price):
        charge = step_reward(Action.CHARGE, price, PARAMS)
        discharge = step_reward(Action.DISCHARGE, price, PARAMS)
        assert charge == pytest.approx(-discharge, abs=1e-9)


@pytest.fixture()
def hourly_env():
    hourly = np.tile(np.linspace(20, 180, 24), (2, 1))
    series = series_from_hourly(hourly)
    return BatteryEnv(series, PARAMS), series


class TestEpisodeLifecycle:
    def test_reset_state(self, hourly_env):
        env, series = hourly_env
        state = env.reset(dt.date(2023, 1, 1), 0.5)
        assert state == EnvState(0, 0, 1, 0.5, series.indicative(dt.date(2023, 1, 1))[0])

    def test_reset_rejects_low_soc(self, hourly_env):
        env, _ = hourly_env
        with pytest.raises(ValueError):
            env.reset(dt.date(2023, 1, 1), 0.05)

    def test_reset_unknown_day(self, hourly_env):
        env, _ = hourly_env
        with pytest.raises(KeyError):
            env.reset(dt.date(2024, 6, 6), 0.5)

    def test_idle_episode_conserves(self, hourly_env):
        env, _ = hourly_env
        env.reset(dt.date(2023, 1, 1), 0.37)
        total = 0.0
        steps = 0
        done = False
        while not done:
            _, reward, done = env.step(Action.IDLE)
            total += reward
            steps += 1
        assert steps == 720
        assert total == 0.0
        assert env.soc == 0.37

    def test_done_exactly_once_then_error(self, hourly_env):
        env, _ = hourly_env
        env.reset(dt.date(2023, 1, 1), 0.5)
        dones = [env.step(Action.IDLE)[2] for _ in range(720)]
        assert sum(dones) == 1 and dones[-1]
        with pytest.raises(RuntimeError):
            env.step(Action.IDLE)

    def test_charge_at_zero_settled_price(self):
        hourly = np.zeros((1, 24))
        env = BatteryEnv(series_from_hourly(hourly), PARAMS)
        env.reset(dt.date(2023, 1, 1), 0.5)
        _, reward, _ = env.step(Action.CHARGE)
        assert reward == 0.0
        assert env.soc == pytest.approx(0.5 + 0.0158114, abs=5e-8)

    def test_quarter_hour_rollover(self, hourly_env):
        env, _ = hourly_env
        state = env.reset(dt.date(2023, 1, 1), 0.5)
        seen = [state]
        for _ in range(8):  # minutes 0,2,...,14 then 16
            state, _, _ = env.step(Action.IDLE)
            seen.append(state)
        at_14 = seen[7]
        after = seen[8]
        assert at_14.minute_of_qh == 14 and at_14.qh_of_day == 0
        assert after.qh_of_day == 1
        assert after.minute_of_qh == 1  # hour-aligned 2-minute grid: 14 -> 16

    def test_episode_length_other_steps(self):
        hourly = np.tile(np.linspace(20, 180, 24), (1, 1))
        series = series_from_hourly(hourly)
        for step_minutes in (1, 3, 5, 15, 60):
            params = BatteryParams(step_minutes=step_minutes)
            env = BatteryEnv(series, params)
            env.reset(dt.date(2023, 1, 1), 0.5)
            steps = 0
            done = False
            while not done:
                _, _, done = env.step(Action.IDLE)
                steps += 1
            assert steps == 1440 // step_minutes

    def test_minute_rollover_with_divisor_steps(self):
        series = series_from_hourly(np.tile(np.linspace(20, 180, 24), (1, 1)))
        env = BatteryEnv(series, BatteryParams(step_minutes=1))
        state = env.reset(dt.date(2023, 1, 1), 0.5)
        for _ in range(15):
            state, _, _ = env.step(Action.IDLE)
        assert (state.minute_of_qh, state.qh_of_day) == (0, 1)

    def test_settled_price_used_for_reward(self):
        # indicative differs from settled within the quarter hour
        minutes = np.full(1440, 10.0)
        minutes[0] = 99.0  # indicative at the observed minute
        settled = np.full(1440, 40.0)
        from tests.conftest import series_from_minutes

        series = series_from_minutes(minutes[None, :], settled_days=settled[None, :])
        env = BatteryEnv(series, PARAMS)
        state = env.reset(dt.date(2023, 1, 1), 0.5)
        assert state.indicative_price == 99.0
        _, reward, _ = env.step(Action.CHARGE)
        assert reward == pytest.approx(-4 * 40.0 / 30)

    def test_step_minutes_must_divide_hour(self):
        with pytest.raises(ValueError):
            BatteryParams(step_minutes=7)


class TestEncodeState:
    NORM = NormStats(price_mean=100.0, price_std=50.0)

    def test_centered_state(self):
        state = EnvState(0, 0, 1, 0.5, 100.0)
        np.testing.assert_allclose(encode_state(state, self.NORM), [0, 0, 0, 0.5, 0])

    def test_range_endpoints(self):
        state = EnvState(14, 95, 12, 0.5, 100.0)
        np.testing.assert_allclose(encode_state(state, self.NORM)[:3], [1.0, 1.0, 1.0])

    def test_unit_standardisation(self):
        state = EnvState(0, 0, 1, 0.5, 150.0)
        assert encode_state(state, self.NORM)[4] == pytest.approx(1.0)

    def test_zero_std_rejected(self):
        with pytest.raises(ValueError):
            encode_state(EnvState(0, 0, 1, 0.5, 1.0), NormStats(0.0, 0.0))

    def test_batch_matches_scalar(self):
        states = [EnvState(3, 17, 6, 0.42, 87.0), EnvState(14, 95, 12, 1.0, -200.0)]
        batch = StateBatch.from_states(states)
        feats = batch.features(self.NORM)
        for i, s in enumerate(states):
            np.testing.assert_allclose(feats[i], encode_state(s, self.NORM))
