from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hvac_gp import sim
from hvac_gp.errors import SimulatorDivergenceError, ValidationError
from hvac_gp.sim import Action, ComfortBounds, SimState, ZoneParams

import oracles

WINTER = ComfortBounds.for_season("winter")


def test_free_float_inside_deadband():
    zp = ZoneParams()
    nxt, energy = sim.simulate_step(zp, SimState(21.0), Action(15.0, 30.0), (21.0, 50, 2, 0), 0)
    assert nxt.zone_temp == 21.0 and energy == 0.0


def test_heating_lands_on_setpoint():
    # passive -0.4 kW; reaching 20.5 needs 8.4 kW of heat, clipped at 6 kW
    zp = ZoneParams()
    nxt, energy = sim.simulate_step(zp, SimState(18.0), Action(20.5, 25.0), (16.0, 50, 2, 0), 4)
    assert nxt.zone_temp == pytest.approx(18.0 + 0.125 * (-0.4 + 0.4 + 6.0))
    assert energy == pytest.approx(6.0 * 0.25 / 3.0)
    nxt, energy = sim.simulate_step(zp, SimState(20.0), Action(20.5, 25.0), (16.0, 50, 2, 0), 4)
    assert nxt.zone_temp == pytest.approx(20.5)


def test_cooling_lands_on_setpoint():
    zp = ZoneParams()
    nxt, energy = sim.simulate_step(zp, SimState(26.0), Action(20.0, 25.5), (27.0, 30, 1, 0), 0)
    assert nxt.zone_temp == pytest.approx(25.5)
    assert energy > 0


@settings(max_examples=200, deadline=None)
@given(
    T=st.floats(5.0, 35.0), t_out=st.floats(-15.0, 40.0), occ=st.integers(0, 4),
    rad=st.floats(0.0, 1000.0), h=st.floats(15.0, 30.0), width=st.floats(0.0, 10.0),
)
def test_step_matches_oracle(T, t_out, occ, rad, h, width):
    c = min(30.0, h + width)
    zp = ZoneParams()
    nxt, energy = sim.simulate_step(zp, SimState(T), Action(h, c), (t_out, 50.0, 3.0, rad), occ)
    T_ref, e_ref = oracles.rc_step(T, t_out, occ, rad, h, c)
    assert nxt.zone_temp == pytest.approx(T_ref, abs=1e-12)
    assert energy == pytest.approx(e_ref, abs=1e-12)
    assert energy >= 0
    assert nxt.step_index == 1


@settings(max_examples=100, deadline=None)
@given(T=st.floats(10.0, 30.0), h=st.floats(15.0, 30.0), width=st.floats(0.0, 5.0), occupied=st.booleans())
def test_reward_matches_oracle(T, h, width, occupied):
    c = min(30.0, h + width)
    r = sim.compute_reward(T, Action(h, c), occupied, WINTER)
    assert r == pytest.approx(oracles.reward(T, h, c, occupied, 20.0, 23.5), abs=1e-12)
    arr = sim.reward_array(np.array([T]), np.array([h]), np.array([c]), np.array([occupied]), WINTER)
    assert arr[0] == pytest.approx(r, abs=1e-12)
    assert r <= 0


def test_reward_examples():
    assert sim.compute_reward(21.0, Action(21.0, 21.0), True, WINTER) == 0.0
    # occupied, 1 degC below band with setpoints at the band
    assert sim.compute_reward(19.0, Action(20.0, 23.5), True, WINTER) == pytest.approx(-0.1 * 5.5 - 0.9)


def test_monotone_in_heat_setpoint():
    zp = ZoneParams()
    temps = [sim.simulate_step(zp, SimState(18.0), Action(h, 30.0), (0.0, 50, 2, 0), 0)[0].zone_temp
             for h in np.linspace(15, 30, 31)]
    assert np.all(np.diff(temps) >= -1e-12)


def test_divergence_detected():
    zp = ZoneParams(thermal_capacitance=0.001)
    with pytest.raises(SimulatorDivergenceError):
        sim.simulate_step(zp, SimState(20.0), Action(15.0, 30.0), (-40.0, 50, 2, 0), 0)


def test_action_validation():
    with pytest.raises(ValidationError):
        Action(25.0, 20.0)
    with pytest.raises(ValidationError):
        Action(14.0, 20.0)
    with pytest.raises(ValidationError):
        ZoneParams(thermal_resistance=0.0)
    with pytest.raises(ValidationError):
        ComfortBounds.for_season("autumn")


def test_rule_based_action():
    assert sim.rule_based_action(None, True, WINTER) == Action(20.0, 23.5)
    assert sim.rule_based_action(None, False, WINTER) == Action(15.0, 30.0)


def test_occupancy_schedule():
    per_day = 96
    assert sim.occupancy_at(0) == 0
    assert sim.occupancy_at(32) == 4      # Monday 08:00
    assert sim.occupancy_at(71) == 4      # 17:45
    assert sim.occupancy_at(72) == 0      # 18:00
    assert sim.occupancy_at(5 * per_day + 40) == 0  # Saturday
    assert sim.occupancy_at(7 * per_day + 40) == 4  # next Monday
    assert sim.occupancy_at(40, start_weekday=5) == 0


def test_synth_weather_is_seeded_and_valid():
    a = sim.synth_weather(3, 2)
    b = sim.synth_weather(3, 2)
    c = sim.synth_weather(4, 2)
    assert len(a) == 192
    np.testing.assert_array_equal(a.records(), b.records())
    assert not np.array_equal(a.records(), c.records())
    assert a.start_weekday == 0
    summer = sim.synth_weather(3, 2, season="summer")
    assert summer.drybulb.mean() > a.drybulb.mean() + 10


def test_weather_roundtrip(tmp_path):
    series = sim.synth_weather(1, 1, profile="desert")
    path = tmp_path / "w.csv"
    sim.save_weather(series, path)
    back = sim.load_weather(path)
    np.testing.assert_array_equal(back.records(), series.records())
    assert back.start == series.start and back.timestep == 15


def test_weather_rejects_bad_files(tmp_path):
    path = tmp_path / "w.csv"
    path.write_text("time,t\n")
    with pytest.raises(ValidationError, match="header"):
        sim.load_weather(path)
    path.write_text(",".join(sim.WEATHER_HEADER) + "\n2021-01-04T00:00:00,1.0,50,2,nan\n")
    with pytest.raises(ValidationError, match="radiation|not finite"):
        sim.load_weather(path)


def test_transition_roundtrip(tmp_path):
    row = [1.0, 50.0, 2.0, 0.0, 4.0, 21.0, 20.0, 23.5, 21.1, 0.1, -0.3, 1.0]
    path = tmp_path / "t.csv"
    sim.save_transitions(np.array([row, row]), path)
    np.testing.assert_array_equal(sim.load_transitions(path), [row, row])


def test_transition_log_validates_rows(tmp_path):
    row = [1.0, 50.0, 2.0, 0.0, 4.0, 21.0, 24.0, 23.5, 21.1, 0.1, -0.3, 1.0]
    path = tmp_path / "t.csv"
    sim.save_transitions(np.array([row]), path)
    with pytest.raises(ValidationError, match="heat_setpoint"):
        sim.load_transitions(path)
