"""Scenario schema, shared domain types, and validation.

A scenario file is JSON with top-level keys ``robots``, ``obstacles``,
``gains``, ``sim``, ``noise`` and optionally ``safety``.  Angles are given
in degrees in files and converted to radians internally.

    {
      "robots": [
        {"start": [x, y, theta_deg], "goal": [gx, gy], "duration": 12.0,
         "kind": "straight",            # or "circle-antipodal" | "waypoints"
         "u0": [0.0, 0.0],              # optional wheel rates, rad/s
         "ref_start": null,             # optional [x, y, theta_deg], defaults to start
         "waypoints": null,             # required for kind "waypoints": [[x,y], ...]
         "params": {"body_radius": 0.2, "wheel_radius": 0.033,
                    "axle_length": 0.16, "offset": 0.08}}   # optional
      ],
      "obstacles": [
        {"position": [x, y], "velocity": [vx, vy], "radius": 0.3}
      ],
      "gains": {"kappa1": 1.0, "kappa2": 8.0, "kappa3": 1.0, "kappa4": 8.0,
                "lambda": 0.5, "zeta": 2.0, "q": 68.0},
      "sim": {"dt": 0.001, "t_end": 20.0, "seed": 0,
              "sensing_radius": null,            # null = unbounded
              "udot_bounds": [-20.0, 20.0],
              "u_bounds": null,                  # optional [lo, hi] rad/s
              "zeta_fixed_point": false,
              "force_escape_side": null},        # debug: -1 / 1 pins the turn side
      "noise": {"enabled": false, "r_m": 0.0},
      "safety": {"inflate_rho": 0.0, "noise_compensation": false}
    }

Every section except ``robots`` may be omitted; defaults above apply.
Specs are immutable after validation and safe to share across workers.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

TWO_PI = 2.0 * math.pi
_DEG = math.pi / 180.0


class ScenarioError(ValueError):
    """Base class for scenario document problems."""


class ParseError(ScenarioError):
    """Document does not conform to the schema; message names the field."""


class ValidationError(ScenarioError):
    """Well-formed document violates a scenario invariant."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, TWO_PI)
    if w <= -math.pi:
        w += TWO_PI
    return w


def _deg_to_rad(deg: float) -> float:
    return deg * _DEG


def _rad_to_deg(rad: float) -> float:
    # Prefer a degree value whose parse maps back to the exact radian value;
    # probe a couple of ulps around the rounded quotient.
    d = rad / _DEG
    if d * _DEG == rad:
        return d
    for step in (1, -1, 2, -2):
        cand = math.nextafter(d, math.copysign(math.inf, step))
        for _ in range(abs(step) - 1):
            cand = math.nextafter(cand, math.copysign(math.inf, step))
        if cand * _DEG == rad:
            return cand
    return d


def _snap_angle(rad: float) -> float:
    """Round to the nearest radian value exactly representable in degrees
    (sub-ulp) so serialize/parse round-trips are lossless."""
    return _rad_to_deg(rad) * _DEG


@dataclass(frozen=True)
class Pose:
    """Planar pose; theta is wrapped to (-pi, pi] on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValidationError("pose entries must be finite")
        object.__setattr__(self, "theta", _snap_angle(wrap_angle(self.theta)))


@dataclass(frozen=True)
class RobotState:
    pose: Pose
    u: tuple[float, float] = (0.0, 0.0)  # (left, right) wheel rates, rad/s

    def __post_init__(self):
        if not all(math.isfinite(v) for v in self.u):
            raise ValidationError("wheel rates must be finite")
        object.__setattr__(self, "u", (float(self.u[0]), float(self.u[1])))


@dataclass(frozen=True)
class RobotParams:
    """Differential-drive geometry.

    body_radius is the enclosing safety disk; wheel_radius, axle_length and
    offset (control point ahead of the axle midpoint) enter the Jacobians.
    Defaults are TurtleBot3-class values.
    """

    body_radius: float = 0.2
    wheel_radius: float = 0.033
    axle_length: float = 0.16
    offset: float = 0.08

    def __post_init__(self):
        for name in ("body_radius", "wheel_radius", "axle_length", "offset"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValidationError(f"params.{name} must be positive (offset 0 "
                                      "makes the velocity Jacobian singular)")


@dataclass(frozen=True)
class ControlGains:
    """Shared controller gains.

    kappa1/kappa2 shape the pairwise barrier, kappa3/kappa4 the tracking
    loop; lam in (0, 1] is the prediction window (1 = no look-ahead);
    zeta_gain scales the deadlock escape and q is the escape attitude angle
    in radians.
    """

    kappa1: float = 1.0
    kappa2: float = 8.0
    kappa3: float = 1.0
    kappa4: float = 8.0
    lam: float = 0.5
    zeta_gain: float = 2.0
    q: float = 68.0 * _DEG

    def __post_init__(self):
        object.__setattr__(self, "q", _snap_angle(self.q))
        for name in ("kappa1", "kappa2", "kappa3", "kappa4"):
            if not getattr(self, name) > 0.0:
                raise ValidationError(f"gains.{name} must be > 0")
        if not 0.0 < self.lam <= 1.0:
            raise ValidationError("gains.lambda must lie in (0, 1]")
        if self.zeta_gain < 0.0:
            raise ValidationError("gains.zeta must be >= 0")
        if not self.kappa4 > self.zeta_gain:
            raise ValidationError("gains.kappa4 must exceed gains.zeta "
                                  "(tracking convergence condition)")
        if not 0.0 <= self.q <= math.pi:
            raise ValidationError("gains.q must lie in [0, 180] degrees")


@dataclass(frozen=True)
class Obstacle:
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)  # constant over a run
    radius: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "position", (float(self.position[0]), float(self.position[1])))
        object.__setattr__(self, "velocity", (float(self.velocity[0]), float(self.velocity[1])))
        if not self.radius > 0.0:
            raise ValidationError("obstacle radius must be > 0")

    def position_at(self, t: float) -> tuple[float, float]:
        return (self.position[0] + self.velocity[0] * t,
                self.position[1] + self.velocity[1] * t)


_REF_KINDS = ("straight", "circle-antipodal", "waypoints")


@dataclass(frozen=True)
class ReferenceSpec:
    """Constant-speed reference path (implied speed = length / duration)."""

    kind: str
    start: Pose
    goal: tuple[float, float]
    duration: float
    waypoints: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in _REF_KINDS:
            raise ParseError(f"reference kind must be one of {_REF_KINDS}, got {self.kind!r}")
        object.__setattr__(self, "goal", (float(self.goal[0]), float(self.goal[1])))
        if not self.duration > 0.0:
            raise ValidationError("reference duration must be > 0")
        if self.kind == "waypoints":
            if not self.waypoints:
                raise ParseError("kind 'waypoints' requires a non-empty waypoints list")
            pts = tuple((float(p[0]), float(p[1])) for p in self.waypoints)
            object.__setattr__(self, "waypoints", pts)
            if pts[-1] != self.goal:
                raise ValidationError("last waypoint must equal the goal")
        elif self.waypoints is not None:
            raise ParseError("waypoints are only valid with kind 'waypoints'")


@dataclass(frozen=True)
class NoiseSpec:
    r_m: float = 0.0      # bound on position-measurement error, meters
    enabled: bool = False

    def __post_init__(self):
        if self.r_m < 0.0:
            raise ValidationError("noise.r_m must be >= 0")


@dataclass(frozen=True)
class SafetyOptions:
    """Optional constraint-side adjustments (audits always use true radii)."""

    inflate_rho: float = 0.0
    noise_compensation: bool = False

    def __post_init__(self):
        if self.inflate_rho < 0.0:
            raise ValidationError("safety.inflate_rho must be >= 0")


@dataclass(frozen=True)
class RobotSetup:
    state: RobotState
    params: RobotParams
    reference: ReferenceSpec


@dataclass(frozen=True)
class ScenarioSpec:
    robots: tuple[RobotSetup, ...]
    obstacles: tuple[Obstacle, ...] = ()
    gains: ControlGains = field(default_factory=ControlGains)
    udot_bounds: tuple[float, float] = (-20.0, 20.0)
    u_bounds: tuple[float, float] | None = None
    dt: float = 1e-3
    t_end: float = 10.0
    sensing_radius: float = math.inf
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    safety: SafetyOptions = field(default_factory=SafetyOptions)
    rng_seed: int = 0
    zeta_fixed_point: bool = False
    force_escape_side: int | None = None

    def __post_init__(self):
        if not self.robots:
            raise ValidationError("scenario needs at least one robot")
        if not self.dt > 0.0:
            raise ValidationError("sim.dt must be > 0")
        if self.t_end < 0.0:
            raise ValidationError("sim.t_end must be >= 0")
        if not self.udot_bounds[0] < self.udot_bounds[1]:
            raise ValidationError("sim.udot_bounds must satisfy lo < hi")
        if self.u_bounds is not None and not self.u_bounds[0] < self.u_bounds[1]:
            raise ValidationError("sim.u_bounds must satisfy lo < hi")
        if self.sensing_radius <= 0.0:
            raise ValidationError("sim.sensing_radius must be > 0")
        if self.force_escape_side not in (None, -1, 1):
            raise ValidationError("sim.force_escape_side must be null, -1 or 1")
        _check_initial_separation(self)

    @property
    def n_robots(self) -> int:
        return len(self.robots)

    @property
    def n_steps(self) -> int:
        """Number of integration steps; the log holds n_steps + 1 records."""
        return int(round(self.t_end / self.dt))

    def rho(self, i: int, j: int) -> float:
        """True safety threshold between robots i and j."""
        return self.robots[i].params.body_radius + self.robots[j].params.body_radius

    def rho_obstacle(self, i: int, k: int) -> float:
        return self.robots[i].params.body_radius + self.obstacles[k].radius

    def rho_margin(self) -> float:
        """Additive margin the constraint builder applies on top of rho."""
        extra = self.safety.inflate_rho
        if self.safety.noise_compensation and self.noise.enabled:
            extra += self.noise.r_m
        return extra


def _check_initial_separation(spec: ScenarioSpec) -> None:
    """Initial states must lie inside the lambda-scaled safe set."""
    lam = spec.gains.lam
    margin = spec.rho_margin()
    pos = [(r.state.pose.x, r.state.pose.y) for r in spec.robots]
    for i in range(len(pos)):
        for j in range(i + 1, len(pos)):
            d2 = (pos[i][0] - pos[j][0]) ** 2 + (pos[i][1] - pos[j][1]) ** 2
            rho = spec.rho(i, j) + margin
            if lam * d2 < rho * rho:
                raise ValidationError(
                    f"initial safe-set violation: robots {i} and {j} start "
                    f"{math.sqrt(d2):.4f} m apart, need >= {rho / math.sqrt(lam):.4f} m")
        for k, obs in enumerate(spec.obstacles):
            d2 = (pos[i][0] - obs.position[0]) ** 2 + (pos[i][1] - obs.position[1]) ** 2
            rho = spec.rho_obstacle(i, k) + margin
            if lam * d2 < rho * rho:
                raise ValidationError(
                    f"initial safe-set violation: robot {i} and obstacle {k} start "
                    f"{math.sqrt(d2):.4f} m apart, need >= {rho / math.sqrt(lam):.4f} m")


# ---------------------------------------------------------------------------
# JSON parsing / serialization
# ---------------------------------------------------------------------------

def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ParseError(f"{where}: missing required field '{key}'")
    return doc[key]


def _numbers(value, count: int, where: str) -> tuple:
    if (not isinstance(value, (list, tuple)) or len(value) != count
            or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
        raise ParseError(f"{where}: expected {count} numbers")
    return tuple(float(v) for v in value)


def _number(value, where: str) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ParseError(f"{where}: expected a number")
    return float(value)


def _check_keys(doc: dict, allowed: set, where: str) -> None:
    unknown = set(doc) - allowed
    if unknown:
        raise ParseError(f"{where}: unknown field '{sorted(unknown)[0]}'")


def _parse_pose(value, where: str) -> Pose:
    x, y, theta_deg = _numbers(value, 3, where)
    return Pose(x, y, _deg_to_rad(theta_deg))


def _parse_robot(doc, index: int) -> RobotSetup:
    where = f"robots[{index}]"
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    _check_keys(doc, {"start", "goal", "duration", "kind", "u0", "ref_start",
                      "waypoints", "params"}, where)
    start = _parse_pose(_require(doc, "start", where), f"{where}.start")
    goal = _numbers(_require(doc, "goal", where), 2, f"{where}.goal")
    duration = _number(_require(doc, "duration", where), f"{where}.duration")
    kind = doc.get("kind", "straight")
    if not isinstance(kind, str):
        raise ParseError(f"{where}.kind: expected a string")
    u0 = _numbers(doc.get("u0", [0.0, 0.0]), 2, f"{where}.u0")
    ref_start = start
    if doc.get("ref_start") is not None:
        ref_start = _parse_pose(doc["ref_start"], f"{where}.ref_start")
    waypoints = None
    if doc.get("waypoints") is not None:
        raw = doc["waypoints"]
        if not isinstance(raw, list):
            raise ParseError(f"{where}.waypoints: expected a list of points")
        waypoints = tuple(_numbers(p, 2, f"{where}.waypoints[{n}]") for n, p in enumerate(raw))
    params = RobotParams()
    if doc.get("params") is not None:
        pdoc = doc["params"]
        if not isinstance(pdoc, dict):
            raise ParseError(f"{where}.params: expected an object")
        _check_keys(pdoc, {"body_radius", "wheel_radius", "axle_length", "offset"},
                    f"{where}.params")
        kwargs = {k: _number(v, f"{where}.params.{k}") for k, v in pdoc.items()}
        params = RobotParams(**kwargs)
    reference = ReferenceSpec(kind=kind, start=ref_start, goal=goal,
                              duration=duration, waypoints=waypoints)
    return RobotSetup(state=RobotState(pose=start, u=u0), params=params,
                      reference=reference)


def _parse_obstacle(doc, index: int) -> Obstacle:
    where = f"obstacles[{index}]"
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    _check_keys(doc, {"position", "velocity", "radius"}, where)
    position = _numbers(_require(doc, "position", where), 2, f"{where}.position")
    velocity = _numbers(doc.get("velocity", [0.0, 0.0]), 2, f"{where}.velocity")
    radius = _number(_require(doc, "radius", where), f"{where}.radius")
    return Obstacle(position=position, velocity=velocity, radius=radius)


def _parse_gains(doc) -> ControlGains:
    if not isinstance(doc, dict):
        raise ParseError("gains: expected an object")
    _check_keys(doc, {"kappa1", "kappa2", "kappa3", "kappa4", "lambda", "zeta", "q"}, "gains")
    kwargs = {}
    for key in ("kappa1", "kappa2", "kappa3", "kappa4"):
        if key in doc:
            kwargs[key] = _number(doc[key], f"gains.{key}")
    if "lambda" in doc:
        kwargs["lam"] = _number(doc["lambda"], "gains.lambda")
    if "zeta" in doc:
        kwargs["zeta_gain"] = _number(doc["zeta"], "gains.zeta")
    if "q" in doc:
        kwargs["q"] = _deg_to_rad(_number(doc["q"], "gains.q"))
    return ControlGains(**kwargs)


def parse_scenario(text: str) -> ScenarioSpec:
    """Parse and validate a scenario document; raises ParseError or
    ValidationError with the offending field or robot pair named."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("top level: expected an object")
    _check_keys(doc, {"robots", "obstacles", "gains", "sim", "noise", "safety"}, "top level")

    robots_doc = _require(doc, "robots", "top level")
    if not isinstance(robots_doc, list) or not robots_doc:
        raise ParseError("robots: expected a non-empty list")
    robots = tuple(_parse_robot(r, i) for i, r in enumerate(robots_doc))

    obstacles_doc = doc.get("obstacles", [])
    if not isinstance(obstacles_doc, list):
        raise ParseError("obstacles: expected a list")
    obstacles = tuple(_parse_obstacle(o, k) for k, o in enumerate(obstacles_doc))

    gains = _parse_gains(doc.get("gains", {}))

    sim = doc.get("sim", {})
    if not isinstance(sim, dict):
        raise ParseError("sim: expected an object")
    _check_keys(sim, {"dt", "t_end", "seed", "sensing_radius", "udot_bounds",
                      "u_bounds", "zeta_fixed_point", "force_escape_side"}, "sim")
    dt = _number(sim.get("dt", 1e-3), "sim.dt")
    t_end = _number(sim.get("t_end", 10.0), "sim.t_end")
    seed = sim.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ParseError("sim.seed: expected an integer")
    sensing = sim.get("sensing_radius")
    sensing_radius = math.inf if sensing is None else _number(sensing, "sim.sensing_radius")
    udot_bounds = _numbers(sim.get("udot_bounds", [-20.0, 20.0]), 2, "sim.udot_bounds")
    u_bounds = None
    if sim.get("u_bounds") is not None:
        u_bounds = _numbers(sim["u_bounds"], 2, "sim.u_bounds")
    zeta_fixed_point = sim.get("zeta_fixed_point", False)
    if not isinstance(zeta_fixed_point, bool):
        raise ParseError("sim.zeta_fixed_point: expected a boolean")
    force = sim.get("force_escape_side")
    if force is not None:
        if force not in (-1, 1) or isinstance(force, bool):
            raise ParseError("sim.force_escape_side: expected null, -1 or 1")

    noise_doc = doc.get("noise", {})
    if not isinstance(noise_doc, dict):
        raise ParseError("noise: expected an object")
    _check_keys(noise_doc, {"r_m", "enabled"}, "noise")
    enabled = noise_doc.get("enabled", False)
    if not isinstance(enabled, bool):
        raise ParseError("noise.enabled: expected a boolean")
    noise = NoiseSpec(r_m=_number(noise_doc.get("r_m", 0.0), "noise.r_m"), enabled=enabled)

    safety_doc = doc.get("safety", {})
    if not isinstance(safety_doc, dict):
        raise ParseError("safety: expected an object")
    _check_keys(safety_doc, {"inflate_rho", "noise_compensation"}, "safety")
    comp = safety_doc.get("noise_compensation", False)
    if not isinstance(comp, bool):
        raise ParseError("safety.noise_compensation: expected a boolean")
    safety = SafetyOptions(inflate_rho=_number(safety_doc.get("inflate_rho", 0.0),
                                               "safety.inflate_rho"),
                           noise_compensation=comp)

    return ScenarioSpec(robots=robots, obstacles=obstacles, gains=gains,
                        udot_bounds=udot_bounds, u_bounds=u_bounds, dt=dt,
                        t_end=t_end, sensing_radius=sensing_radius, noise=noise,
                        safety=safety, rng_seed=seed,
                        zeta_fixed_point=zeta_fixed_point,
                        force_escape_side=force)


def load_scenario(path) -> ScenarioSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def _pose_doc(pose: Pose) -> list:
    return [pose.x, pose.y, _rad_to_deg(pose.theta)]


def scenario_to_doc(spec: ScenarioSpec) -> dict:
    robots = []
    for setup in spec.robots:
        ref = setup.reference
        entry = {
            "start": _pose_doc(setup.state.pose),
            "goal": list(ref.goal),
            "duration": ref.duration,
            "kind": ref.kind,
            "u0": list(setup.state.u),
            "params": {
                "body_radius": setup.params.body_radius,
                "wheel_radius": setup.params.wheel_radius,
                "axle_length": setup.params.axle_length,
                "offset": setup.params.offset,
            },
        }
        if ref.start != setup.state.pose:
            entry["ref_start"] = _pose_doc(ref.start)
        if ref.waypoints is not None:
            entry["waypoints"] = [list(p) for p in ref.waypoints]
        robots.append(entry)
    return {
        "robots": robots,
        "obstacles": [
            {"position": list(o.position), "velocity": list(o.velocity), "radius": o.radius}
            for o in spec.obstacles
        ],
        "gains": {
            "kappa1": spec.gains.kappa1, "kappa2": spec.gains.kappa2,
            "kappa3": spec.gains.kappa3, "kappa4": spec.gains.kappa4,
            "lambda": spec.gains.lam, "zeta": spec.gains.zeta_gain,
            "q": _rad_to_deg(spec.gains.q),
        },
        "sim": {
            "dt": spec.dt, "t_end": spec.t_end, "seed": spec.rng_seed,
            "sensing_radius": None if math.isinf(spec.sensing_radius) else spec.sensing_radius,
            "udot_bounds": list(spec.udot_bounds),
            "u_bounds": None if spec.u_bounds is None else list(spec.u_bounds),
            "zeta_fixed_point": spec.zeta_fixed_point,
            "force_escape_side": spec.force_escape_side,
        },
        "noise": {"r_m": spec.noise.r_m, "enabled": spec.noise.enabled},
        "safety": {"inflate_rho": spec.safety.inflate_rho,
                   "noise_compensation": spec.safety.noise_compensation},
    }


def serialize_scenario(spec: ScenarioSpec) -> str:
    return json.dumps(scenario_to_doc(spec), indent=2, sort_keys=True) + "\n"


def apply_overrides(doc: dict, overrides: dict) -> dict:
    """Patch a raw scenario document with dotted-path overrides, e.g.
    ``{"gains.lambda": 1.0, "robots.0.goal": [1, 2]}``. Returns a new doc."""
    patched = json.loads(json.dumps(doc))
    for path, value in overrides.items():
        keys = path.split(".")
        node = patched
        for key in keys[:-1]:
            node = _descend(node, key, path)
        leaf = keys[-1]
        if isinstance(node, list):
            node[_list_index(leaf, node, path)] = value
        elif isinstance(node, dict):
            node[leaf] = value
        else:
            raise ParseError(f"override '{path}': cannot set a field on a scalar")
    return patched


def _descend(node, key: str, path: str):
    if isinstance(node, list):
        return node[_list_index(key, node, path)]
    if isinstance(node, dict):
        if key not in node:
            node[key] = {}
        return node[key]
    raise ParseError(f"override '{path}': cannot descend into a scalar at '{key}'")


def _list_index(key: str, node: list, path: str) -> int:
    try:
        idx = int(key)
    except ValueError:
        raise ParseError(f"override '{path}': '{key}' is not a list index") from None
    if not 0 <= idx < len(node):
        raise ParseError(f"override '{path}': index {idx} out of range")
    return idx
