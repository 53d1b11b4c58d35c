import dataclasses
import json

import numpy as np
import pytest

from conftest import bundled_spec
from mrsafe import metrics, scenario as sc, sim


def _log_with_constant_offset(offset=0.1, records=101, dt=0.1):
    """Hand-built log: robot glued offset meters beside a straight reference."""
    doc = {
        "robots": [{"start": [0.0, 0.0, 0.0], "goal": [5.0, 0.0], "duration": 10.0}],
        "sim": {"dt": dt, "t_end": dt * (records - 1)},
    }
    spec = sc.parse_scenario(json.dumps(doc))
    t = np.arange(records) * dt
    pose = np.zeros((records, 1, 3))
    pose[:, 0, 0] = 0.5 * t          # on-schedule x
    pose[:, 0, 1] = offset           # constant lateral error
    zeros = np.zeros((records, 1))
    log = sim.SimLog(spec, t, pose, np.zeros((records, 1, 2)),
                     np.zeros((records, 1, 2)), zeros.copy(), zeros.copy(),
                     np.zeros((records, 1), dtype=np.int32), zeros.copy(),
                     np.ones((records, 1), dtype=np.int8))
    return spec, log


def test_tracking_stats_constant_error():
    _, log = _log_with_constant_offset(0.1)
    rmse, mae, std = metrics.tracking_stats(log, 0)
    assert rmse == pytest.approx(0.1)
    assert mae == pytest.approx(0.1)
    assert std == pytest.approx(0.0, abs=1e-12)


def test_tracking_stats_perfect():
    _, log = _log_with_constant_offset(0.0)
    assert metrics.tracking_stats(log, 0) == pytest.approx((0.0, 0.0, 0.0))


def test_tracking_stats_jensen_and_consistency():
    spec = bundled_spec("swap2_deadlock", sim__t_end=6.0, sim__dt=0.004)
    log = sim.run(spec)
    for robot in range(2):
        rmse, mae, std = metrics.tracking_stats(log, robot)
        assert rmse >= mae >= 0.0
        assert rmse ** 2 == pytest.approx(mae ** 2 + std ** 2, rel=1e-9)


def test_intervention_window_arithmetic():
    _, log = _log_with_constant_offset(0.0, records=101, dt=0.1)
    assert metrics.intervention_time(log, 0) == 0.0
    log.active_count[50:72, 0] = 1  # steps 50..71 inclusive
    assert metrics.intervention_time(log, 0) == pytest.approx(2.2)
    # gaps inside the window do not split it
    log.active_count[55:60, 0] = 0
    assert metrics.intervention_time(log, 0) == pytest.approx(2.2)
    # a later zeta activation extends the window
    log.zeta[90, 0] = 2.0
    assert metrics.intervention_time(log, 0) == pytest.approx(4.1)


def test_clearance_and_smoothness_stationary():
    doc = {
        "robots": [
            {"start": [0.0, 0.0, 0.0], "goal": [0.0, 0.0], "duration": 1.0},
            {"start": [5.0, 0.0, 0.0], "goal": [5.0, 0.0], "duration": 1.0},
        ],
        "sim": {"dt": 0.05, "t_end": 2.0},
    }
    spec = sc.parse_scenario(json.dumps(doc))
    log = sim.run(spec, backend="pure")
    clearance, _, tv = metrics.clearance_and_smoothness(log)
    assert clearance == pytest.approx(5.0 - spec.rho(0, 1), abs=1e-9)
    assert tv <= 1e-9


def test_total_variation_constant_speed_run():
    doc = {
        "robots": [{"start": [0.0, 0.0, 0.0], "goal": [4.0, 0.0],
                    "duration": 8.0, "u0": [0.5, 0.5],
                    "params": {"wheel_radius": 1.0, "axle_length": 1.0,
                               "offset": 3.0, "body_radius": 0.2}}],
        "sim": {"dt": 0.002, "t_end": 6.0},
    }
    spec = sc.parse_scenario(json.dumps(doc))
    log = sim.run(spec, backend="pure")
    _, _, tv = metrics.clearance_and_smoothness(log)
    assert tv < 1e-6  # launched at cruise speed: profile stays flat


def test_min_speed_window_excludes_parking():
    spec = bundled_spec("example1_static", sim__dt=0.004)
    log = sim.run(spec)
    _, min_speed, _ = metrics.clearance_and_smoothness(log)
    speeds = log.speeds()[:, 0]
    assert speeds[-1] < 0.05  # essentially parked at the goal by the end
    assert min_speed > 0.05   # but the transit window never stalls


def test_report_shape_and_purity():
    spec = bundled_spec("swap2_deadlock", sim__t_end=4.0, sim__dt=0.004)
    log = sim.run(spec)
    a = metrics.build_report(log)
    b = metrics.build_report(log)
    assert a == b
    assert len(a.robots) == 2
    assert a.collisions == 0
    doc = json.loads(a.to_json())
    assert set(doc) == {"robots", "min_clearance", "min_speed_after_start",
                        "velocity_total_variation", "goal_reach_times",
                        "collisions", "fallback_steps"}
    table = a.to_table()
    assert "rmse" in table and "min_clearance" in table


def test_intervention_zero_iff_never_active():
    spec = dataclasses.replace(bundled_spec("example1_static", sim__dt=0.004),
                               obstacles=())
    log = sim.run(spec)
    assert metrics.intervention_time(log, 0) == 0.0
    assert int(log.active_count.sum()) == 0 and float(log.zeta.max()) == 0.0
