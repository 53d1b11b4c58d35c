"""Quantitative run evaluation: tracking-error statistics, intervention
time, clearance, and a scalar smoothness proxy (total variation of speed).
All metrics are pure functions of a log and its scenario."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kinematics
from .sim import SimLog, audit_collisions, pair_series, pair_rho

GOAL_TOLERANCE = 0.15  # meters; a robot has "reached" inside this disk


@dataclass(frozen=True)
class RobotMetrics:
    rmse: float
    mae: float
    std_dev: float
    intervention_time: float
    goal_reach_time: float | None
    final_goal_distance: float


@dataclass(frozen=True)
class MetricReport:
    robots: tuple
    min_clearance: float
    min_speed_after_start: float
    velocity_total_variation: float
    goal_reach_times: tuple
    collisions: int
    fallback_steps: int | None

    def to_json(self) -> str:
        doc = {
            "robots": [
                {
                    "rmse": r.rmse, "mae": r.mae, "std_dev": r.std_dev,
                    "intervention_time": r.intervention_time,
                    "goal_reach_time": r.goal_reach_time,
                    "final_goal_distance": r.final_goal_distance,
                }
                for r in self.robots
            ],
            "min_clearance": self.min_clearance,
            "min_speed_after_start": self.min_speed_after_start,
            "velocity_total_variation": self.velocity_total_variation,
            "goal_reach_times": list(self.goal_reach_times),
            "collisions": self.collisions,
            "fallback_steps": self.fallback_steps,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = ["robot  rmse      mae       std_dev   intervention  reach_time"]
        for i, r in enumerate(self.robots):
            reach = "-" if r.goal_reach_time is None else f"{r.goal_reach_time:.3f}"
            lines.append(f"{i:<6d} {r.rmse:<9.4f} {r.mae:<9.4f} {r.std_dev:<9.4f} "
                         f"{r.intervention_time:<13.4f} {reach}")
        lines.append(f"min_clearance={self.min_clearance:.4f}  "
                     f"min_speed={self.min_speed_after_start:.4f}  "
                     f"total_variation={self.velocity_total_variation:.4f}  "
                     f"collisions={self.collisions}  "
                     f"fallback_steps={self.fallback_steps}")
        return "\n".join(lines) + "\n"


def tracking_stats(log: SimLog, robot: int) -> tuple[float, float, float]:
    """(rmse, mae, population std) of the planar error ||p - p_d|| over the
    reference's active window [0, duration]."""
    ref = log.spec.robots[robot].reference
    mask = log.t <= ref.duration
    table = kinematics.reference_table(ref, log.t[mask])
    errs = np.hypot(log.pose[mask, robot, 0] - table[:, 0],
                    log.pose[mask, robot, 1] - table[:, 1])
    rmse = float(np.sqrt(np.mean(errs ** 2)))
    mae = float(np.mean(errs))
    std = float(np.std(errs))
    return rmse, mae, std


def intervention_time(log: SimLog, robot: int) -> float:
    """Width of the window from the first to the last instant the robot's
    avoidance is active (constraint multiplier engaged or escape term on),
    inclusive of interior gaps; zero when never active."""
    active = (log.active_count[:, robot] > 0) | (log.zeta[:, robot] > 0.0)
    idx = np.flatnonzero(active)
    if idx.size == 0:
        return 0.0
    return float(log.t[idx[-1]] - log.t[idx[0]] + log.dt)


def clearance_and_smoothness(log: SimLog, spec=None) -> tuple[float, float, float]:
    """(min_clearance, min_speed, total_variation).

    min_clearance: least distance-minus-rho over all pairs and times (true
    radii).  min_speed: least planar speed over 1 s < t <= reference
    duration, per robot.  total_variation: sum over robots and steps of
    |d||v|||, a scalar proxy for velocity-profile oscillation."""
    spec = spec or log.spec
    pairs, dist, _ = pair_series(log, spec)
    min_clearance = math.inf
    for p_idx, pair in enumerate(pairs):
        gap = float(np.min(dist[:, p_idx])) - pair_rho(spec, pair)
        min_clearance = min(min_clearance, gap)
    speeds = log.speeds()
    min_speed = math.inf
    for i, setup in enumerate(spec.robots):
        window = (log.t > 1.0) & (log.t <= setup.reference.duration)
        if np.any(window):
            min_speed = min(min_speed, float(np.min(speeds[window, i])))
    total_variation = float(np.sum(np.abs(np.diff(speeds, axis=0))))
    return min_clearance, min_speed, total_variation


def goal_reach_time(log: SimLog, robot: int, tolerance: float = GOAL_TOLERANCE):
    goal = log.spec.robots[robot].reference.goal
    d = np.hypot(log.pose[:, robot, 0] - goal[0], log.pose[:, robot, 1] - goal[1])
    idx = np.flatnonzero(d <= tolerance)
    return None if idx.size == 0 else float(log.t[idx[0]])


def build_report(log: SimLog, spec=None) -> MetricReport:
    spec = spec or log.spec
    robots = []
    reach_times = []
    for i in range(spec.n_robots):
        rmse, mae, std = tracking_stats(log, i)
        reach = goal_reach_time(log, i)
        goal = spec.robots[i].reference.goal
        final = math.hypot(log.pose[-1, i, 0] - goal[0], log.pose[-1, i, 1] - goal[1])
        robots.append(RobotMetrics(rmse=rmse, mae=mae, std_dev=std,
                                   intervention_time=intervention_time(log, i),
                                   goal_reach_time=reach,
                                   final_goal_distance=final))
        reach_times.append(reach)
    min_clearance, min_speed, tv = clearance_and_smoothness(log, spec)
    return MetricReport(robots=tuple(robots), min_clearance=min_clearance,
                        min_speed_after_start=min_speed,
                        velocity_total_variation=tv,
                        goal_reach_times=tuple(reach_times),
                        collisions=len(audit_collisions(log, spec)),
                        fallback_steps=log.fallback_steps())
