"""Finger linkage and gripper forward kinematics.

Each finger is bent by a planar four-bar linkage. A linear actuator moves its
endpoint by ``y`` and drives the crank through a lever of radius ``R1``
(scotch-yoke coupling, ``y = R1 * sin(phi - crank_home)``). The follower angle
comes from the closed-form Freudenstein solution of the loop closure, and the
finger bend angle is the follower rotation measured from the home position.

Palm frame: origin at the palm centre, +z along the resting fingers. The fixed
finger is mounted at ``(-R2, 0)`` and closes toward +x. The two side fingers
sit at ``(R2/2, +-R2*sqrt(3)/2)``; each servo turns its finger's closing
direction about the vertical axis through the mount.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import InsufficientSamples, InvalidGeometry, OutOfTravel, SingularLinkage

_TRAVEL_CHECK_POINTS = 257


class Mode(enum.IntEnum):
    """Gripper configuration. Integer values follow the configuration numbers 1-3."""

    PARALLEL = 1
    TRIGONAL = 2
    TSHAPED = 3

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        if isinstance(value, str):
            key = value.strip().upper().replace("-", "").replace("_", "")
            if key.isdigit():
                return cls(int(key))
            aliases = {"PARALLEL": cls.PARALLEL, "TRIGONAL": cls.TRIGONAL, "TSHAPED": cls.TSHAPED}
            if key in aliases:
                return aliases[key]
            raise ValueError(f"unknown mode {value!r}")
        return cls(int(value))


# Canonical servo angles: rotation of the side fingers' closing direction away
# from "facing the fixed finger" (-x). 60 deg gives 120 deg spacing; 90 deg puts
# the side fingers on one line facing each other. Parallel mode pinches with
# the side fingers alone; T-shaped mode adds the fixed finger as the stem.
DEFAULT_SERVO_PRESETS = {
    Mode.PARALLEL: np.pi / 2,
    Mode.TRIGONAL: np.pi / 3,
    Mode.TSHAPED: np.pi / 2,
}
DEFAULT_SERVO_LIMITS = {
    Mode.PARALLEL: (np.radians(80.0), np.radians(100.0)),
    Mode.TRIGONAL: (np.radians(57.0), np.radians(63.0)),
    Mode.TSHAPED: (np.radians(74.0), np.radians(106.0)),
}


@dataclass(frozen=True)
class LinkageGeometry:
    """Four-bar finger linkage dimensions (mm, rad).

    ``theta_offset`` is the follower angle at ``y_min``; leave it as ``None``
    and it is calibrated on construction so that ``solve_theta(y_min) == 0``.
    ``rest_splay`` tilts the unbent finger outward, away from the palm centre.
    """

    ground_link: float = 13.0
    crank_link: float = 40.0
    coupler_link: float = 35.0
    follower_link: float = 29.0
    pivot_radius_1: float = 28.0
    pivot_radius_2: float = 72.0
    actuator_travel: tuple = (-16.0, 11.0)
    finger_length: float = 94.0
    crank_home: float = 0.32
    rest_splay: float = 0.23
    theta_offset: float | None = None

    def __post_init__(self):
        lengths = (self.ground_link, self.crank_link, self.coupler_link, self.follower_link,
                   self.pivot_radius_1, self.pivot_radius_2, self.finger_length)
        if not all(np.isfinite(v) and v > 0 for v in lengths):
            raise InvalidGeometry("all link lengths and radii must be strictly positive")
        y_min, y_max = map(float, self.actuator_travel)
        object.__setattr__(self, "actuator_travel", (y_min, y_max))
        if not y_min < y_max:
            raise InvalidGeometry("actuator_travel must satisfy y_min < y_max")
        if max(abs(y_min), abs(y_max)) > self.pivot_radius_1:
            raise InvalidGeometry("actuator travel exceeds the crank lever radius R1")
        ys = np.linspace(y_min, y_max, _TRAVEL_CHECK_POINTS)
        psi = _follower_angle(self, _crank_angle(self, ys))
        if not np.all(np.isfinite(psi)):
            raise InvalidGeometry("loop closure has no real solution somewhere in the actuator travel")
        if self.theta_offset is None:
            object.__setattr__(self, "theta_offset", float(psi[0]))

    @property
    def y_min(self) -> float:
        return self.actuator_travel[0]

    @property
    def y_max(self) -> float:
        return self.actuator_travel[1]

    @classmethod
    def from_dict(cls, d: dict) -> "LinkageGeometry":
        kw = dict(d)
        if "actuator_travel" in kw:
            kw["actuator_travel"] = tuple(kw["actuator_travel"])
        return cls(**kw)

    def to_dict(self) -> dict:
        return {
            "ground_link": self.ground_link,
            "crank_link": self.crank_link,
            "coupler_link": self.coupler_link,
            "follower_link": self.follower_link,
            "pivot_radius_1": self.pivot_radius_1,
            "pivot_radius_2": self.pivot_radius_2,
            "actuator_travel": list(self.actuator_travel),
            "finger_length": self.finger_length,
            "crank_home": self.crank_home,
            "rest_splay": self.rest_splay,
            "theta_offset": self.theta_offset,
        }


def _crank_angle(g: LinkageGeometry, y):
    return g.crank_home + np.arcsin(np.asarray(y, dtype=float) / g.pivot_radius_1)


def _follower_angle(g: LinkageGeometry, phi):
    """Open-branch Freudenstein solution; NaN where the discriminant is negative."""
    a, b, c, d = g.crank_link, g.coupler_link, g.follower_link, g.ground_link
    k1 = d / a
    k2 = d / c
    k3 = (a * a - b * b + c * c + d * d) / (2.0 * a * c)
    cos_phi = np.cos(phi)
    A = cos_phi - k1 - k2 * cos_phi + k3
    B = -2.0 * np.sin(phi)
    C = k1 - (k2 + 1.0) * cos_phi + k3
    disc = B * B - 4.0 * A * C
    with np.errstate(invalid="ignore"):
        root = np.sqrt(disc)
    # Minus root = open assembly; for a parallelogram this gives psi == phi.
    return 2.0 * np.arctan2(-B - root, 2.0 * A)


def solve_theta(geometry: LinkageGeometry, y):
    """Finger bend angle (rad) for actuator displacement ``y`` (mm).

    Accepts scalars or arrays. Raises :class:`OutOfTravel` if any ``y`` lies
    outside the actuator travel, :class:`SingularLinkage` if the loop closure
    has no real solution.
    """
    y_arr = np.asarray(y, dtype=float)
    tol = 1e-12 * max(1.0, abs(geometry.y_max) + abs(geometry.y_min))
    if np.any(y_arr < geometry.y_min - tol) or np.any(y_arr > geometry.y_max + tol):
        raise OutOfTravel(f"y outside actuator travel {geometry.actuator_travel}")
    y_arr = np.clip(y_arr, geometry.y_min, geometry.y_max)
    psi = _follower_angle(geometry, _crank_angle(geometry, y_arr))
    if not np.all(np.isfinite(psi)):
        raise SingularLinkage("loop closure discriminant is negative")
    theta = np.mod(psi - geometry.theta_offset + np.pi, 2.0 * np.pi) - np.pi
    theta = np.maximum(theta, 0.0)
    if theta.ndim == 0:
        return float(theta)
    return theta


def crank_rotation(geometry: LinkageGeometry, y):
    """Crank rotation from its ``y_min`` position (rad)."""
    return _crank_angle(geometry, y) - _crank_angle(geometry, geometry.y_min)


def fit_linear_map(geometry: LinkageGeometry, n_samples: int = 200) -> dict:
    """Least-squares line ``theta = slope * y + intercept`` over a uniform sweep.

    Returns a dict with ``slope`` (rad/mm), ``intercept`` (rad), ``r_squared``
    and the sweep arrays ``y`` and ``theta``.
    """
    if n_samples < 3:
        raise InsufficientSamples("need at least 3 samples for a linear fit")
    ys = np.linspace(geometry.y_min, geometry.y_max, int(n_samples))
    thetas = solve_theta(geometry, ys)
    return linear_fit(ys, thetas)


def linear_fit(x, y) -> dict:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise InsufficientSamples("need at least 3 samples for a linear fit")
    design = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_res = float(resid @ resid)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return {
        "slope": float(slope),
        "intercept": float(intercept),
        "r_squared": float(min(max(r2, 0.0), 1.0)),
        "y": x,
        "theta": y,
    }


@dataclass(frozen=True)
class FingerState:
    y: float
    theta: float

    @classmethod
    def at(cls, geometry: LinkageGeometry, y: float) -> "FingerState":
        return cls(float(y), solve_theta(geometry, y))


@dataclass(frozen=True)
class FingertipPose:
    position: np.ndarray
    normal: np.ndarray


@dataclass(frozen=True)
class GripperConfiguration:
    """Configuration mode, side-finger servo angles and the three finger states.

    Finger 0 is the fixed finger; fingers 1 and 2 are the servo-driven side
    fingers at +y and -y.
    """

    mode: Mode
    servo_angle_1: float
    servo_angle_2: float
    fingers: tuple
    geometry: LinkageGeometry = field(repr=False, default_factory=LinkageGeometry)
    servo_limits: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode.parse(self.mode))
        if len(self.fingers) != 3:
            raise ValueError("a configuration has exactly three finger states")
        if self.servo_limits is not None:
            lo, hi = self.servo_limits
            eps = 1e-12
            for s in (self.servo_angle_1, self.servo_angle_2):
                if not lo - eps <= s <= hi + eps:
                    raise ValueError(f"servo angle {s:.4f} rad outside limits {self.servo_limits}")

    @classmethod
    def from_mode(cls, geometry: LinkageGeometry, mode, ys=None, servo_presets=None,
                  servo_limits=None) -> "GripperConfiguration":
        """Canonical configuration for ``mode`` with actuator positions ``ys``."""
        mode = Mode.parse(mode)
        presets = servo_presets or DEFAULT_SERVO_PRESETS
        limits = (servo_limits or DEFAULT_SERVO_LIMITS)[mode]
        if ys is None:
            ys = (geometry.y_min,) * 3
        elif np.isscalar(ys):
            ys = (ys,) * 3
        fingers = tuple(FingerState.at(geometry, y) for y in ys)
        s = float(presets[mode])
        return cls(mode, s, s, fingers, geometry, tuple(limits))

    def with_fingers(self, ys) -> "GripperConfiguration":
        return replace(self, fingers=tuple(FingerState.at(self.geometry, y) for y in ys))


def finger_mounts(geometry: LinkageGeometry) -> np.ndarray:
    """Mount points of fingers 0, 1, 2 in the palm plane (3x3, mm)."""
    r = geometry.pivot_radius_2
    return np.array([
        [-r, 0.0, 0.0],
        [0.5 * r, 0.5 * np.sqrt(3.0) * r, 0.0],
        [0.5 * r, -0.5 * np.sqrt(3.0) * r, 0.0],
    ])


def closing_directions(servo_1, servo_2) -> np.ndarray:
    """Unit closing directions (..., 3, 3) for the three fingers."""
    s1 = np.asarray(servo_1, dtype=float)
    s2 = np.asarray(servo_2, dtype=float)
    shape = np.broadcast(s1, s2).shape
    u = np.zeros(shape + (3, 3))
    u[..., 0, 0] = 1.0
    u[..., 1, 0] = -np.cos(s1)
    u[..., 1, 1] = -np.sin(s1)
    u[..., 2, 0] = -np.cos(s2)
    u[..., 2, 1] = np.sin(s2)
    return u


def fingertip_positions(geometry: LinkageGeometry, thetas, servo_1, servo_2):
    """Vectorised tip positions and inner-face normals.

    ``thetas`` has shape (..., 3); the servo angles broadcast against the
    leading dimensions. Returns ``(positions, normals)``, each (..., 3, 3).
    """
    thetas = np.asarray(thetas, dtype=float)
    u = closing_directions(servo_1, servo_2)
    u = np.broadcast_to(u, thetas.shape[:-1] + (3, 3))
    bend = thetas - geometry.rest_splay
    s = np.sin(bend)[..., None]
    c = np.cos(bend)[..., None]
    z = np.array([0.0, 0.0, 1.0])
    bent = s * u + c * z
    tips = finger_mounts(geometry) + geometry.finger_length * bent
    normals = c * u - s * z
    return tips, normals


def fingertip_position(config: GripperConfiguration, finger_index: int) -> FingertipPose:
    """Tip pose of one finger in the palm frame."""
    if finger_index not in (0, 1, 2):
        raise IndexError("finger_index must be 0, 1 or 2")
    thetas = np.array([f.theta for f in config.fingers])
    tips, normals = fingertip_positions(config.geometry, thetas,
                                        config.servo_angle_1, config.servo_angle_2)
    n = normals[finger_index]
    return FingertipPose(tips[finger_index].copy(), n / np.linalg.norm(n))
