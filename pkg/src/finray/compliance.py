"""Quasi-static pseudo-rigid-body model of a Fin Ray finger.

The finger is an isosceles triangle of two side beams meeting at a tip and
joined by crossbeam ribs. Each beam is split into rigid segments (stiff axial
springs) connected by torsional springs. The base is clamped; actuation
rotates the clamp about the front base node toward the object. Equilibrium is
found by minimising

    E = sum 1/2 k_b (beta - beta0)^2 + sum 1/2 k_r (l - l0)^2
        + sum 1/2 k_a (s - s0)^2 + sum 1/2 k_p depth^2 - F . x_tip

with gradient descent (Barzilai-Borwein trial step, Armijo backtracking).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import InvalidPlacement, NonConvergence


class Shape(str, Enum):
    CIRCLE = "circle"
    SQUARE = "square"
    RECTANGLE = "rectangle"

    @classmethod
    def parse(cls, value) -> "Shape":
        aliases = {"sphere": "circle", "cube": "square", "cylinder": "rectangle"}
        if isinstance(value, Shape):
            return value
        key = str(value).lower()
        return cls(aliases.get(key, key))


# long/short half-extent ratio of the rectangle cross-section
RECTANGLE_ASPECT = 1.5


@dataclass(frozen=True)
class ObjectPrimitive:
    """Rigid object cross-section in the finger plane.

    Squares and rectangles are oriented by ``angle`` (rad); the rectangle's
    long half-extent is ``RECTANGLE_ASPECT * characteristic_radius`` along the
    rotated y axis.
    """

    shape: Shape
    characteristic_radius: float
    center: tuple
    angle: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "shape", Shape.parse(self.shape))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.characteristic_radius > 0:
            raise ValueError("characteristic_radius must be positive")

    def half_extents(self) -> np.ndarray:
        r = self.characteristic_radius
        if self.shape is Shape.RECTANGLE:
            return np.array([r, RECTANGLE_ASPECT * r])
        return np.array([r, r])

    def signed_distance(self, pts: np.ndarray):
        """Signed distance (positive outside) and its gradient for (m, 2) points."""
        c = np.asarray(self.center)
        d = pts - c
        if self.shape is Shape.CIRCLE:
            r = np.linalg.norm(d, axis=1)
            safe = np.where(r > 0, r, 1.0)
            grad = d / safe[:, None]
            grad[r == 0] = (1.0, 0.0)
            return r - self.characteristic_radius, grad
        ca, sa = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[ca, -sa], [sa, ca]])
        local = d @ rot
        half = self.half_extents()
        q = np.abs(local) - half
        sgn = np.where(local >= 0, 1.0, -1.0)
        outside = np.maximum(q, 0.0)
        out_len = np.linalg.norm(outside, axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        dist = out_len + inside
        g_local = np.zeros_like(local)
        is_out = out_len > 0
        g_local[is_out] = outside[is_out] / out_len[is_out, None]
        axis = np.argmax(q, axis=1)
        ins = ~is_out
        g_local[ins, axis[ins]] = 1.0
        g_local *= sgn
        return dist, g_local @ rot.T


@dataclass(frozen=True)
class FinRayModel:
    """Structural parameters (mm, N, rad).

    ``rest_shape`` is ``(base_width, height)``. ``axial_stiffness`` keeps the
    segments nearly rigid; ``contact_samples`` points per segment are checked
    against the object.
    """

    n_segments: int = 10
    joint_stiffness: float = 400.0
    rib_stiffness: float = 5.0
    rib_count: int = 4
    rest_shape: tuple = (24.0, 90.0)
    contact_penalty: float = 500.0
    axial_stiffness: float = 200.0
    contact_samples: int = 3
    nominal_actuation: float = 0.15
    tol: float = 1e-6
    max_iter: int = 50_000

    def __post_init__(self):
        if self.n_segments < 3:
            raise ValueError("n_segments must be >= 3")
        for name in ("joint_stiffness", "rib_stiffness", "contact_penalty", "axial_stiffness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        b, h = self.rest_shape
        if not (b > 0 and h > 0):
            raise ValueError("rest_shape dimensions must be positive")
        if not 0 <= self.rib_count <= self.n_segments - 1:
            raise ValueError("rib_count must be in [0, n_segments - 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "FinRayModel":
        d = dict(d)
        if "rest_shape" in d:
            d["rest_shape"] = tuple(d["rest_shape"])
        return cls(**d)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["rest_shape"] = list(self.rest_shape)
        return out


@dataclass(frozen=True)
class ComplianceResult:
    max_deformation: float
    total_contact_force: float
    contact_point_count: int
    converged: bool
    iterations: int
    nodes: np.ndarray = field(repr=False, compare=False)
    energy_history: tuple = field(default=(), repr=False, compare=False)
    max_penetration: float = 0.0


class _Structure:
    """Index bookkeeping for one model; node positions live in flat arrays."""

    def __init__(self, model: FinRayModel):
        n = model.n_segments
        b, h = model.rest_shape
        t = np.linspace(0.0, 1.0, n + 1)
        front = np.column_stack([-b / 2 + t * b / 2, t * h])
        back = np.column_stack([b / 2 - t * b / 2, t * h])
        # nodes: front 0..n (n = tip), back 1..n-1, base back, two ghosts
        self.tip = n
        back_idx = [2 * n + 1] + list(range(n + 1, 2 * n)) + [n]
        self.front = list(range(n + 1))
        self.back = back_idx
        nodes = np.zeros((2 * n + 4, 2))
        nodes[: n + 1] = front
        nodes[n + 1: 2 * n] = back[1:n]
        nodes[2 * n + 1] = back[0]
        ghost_f, ghost_b = 2 * n + 2, 2 * n + 3
        nodes[ghost_f] = front[0] - (front[1] - front[0])
        nodes[ghost_b] = back[0] - (back[1] - back[0])
        self.rest = nodes
        self.fixed = np.zeros(len(nodes), dtype=bool)
        self.fixed[[0, 2 * n + 1, ghost_f, ghost_b]] = True

        segs = [(self.front[i], self.front[i + 1]) for i in range(n)]
        segs += [(self.back[i], self.back[i + 1]) for i in range(n)]
        self.segments = np.array(segs)

        joints = [(ghost_f, self.front[0], self.front[1])]
        joints += [(self.front[i - 1], self.front[i], self.front[i + 1]) for i in range(1, n)]
        joints += [(ghost_b, self.back[0], self.back[1])]
        joints += [(self.back[i - 1], self.back[i], self.back[i + 1]) for i in range(1, n)]
        joints += [(self.front[n - 1], self.tip, self.back[n - 1])]
        self.joints = np.array(joints)

        if model.rib_count:
            levels = np.round(np.linspace(0, n, model.rib_count + 2)[1:-1]).astype(int)
            self.ribs = np.array([(self.front[i], self.back[i]) for i in levels])
        else:
            self.ribs = np.zeros((0, 2), dtype=int)

        k = model.contact_samples
        frac = np.arange(k) / k
        si, sf = np.meshgrid(np.arange(len(self.segments)), frac, indexing="ij")
        # the tip node closes the last front segment
        self.sample_seg = np.append(si.ravel(), n - 1)
        self.sample_t = np.append(sf.ravel(), 1.0)

        self.seg_rest = _lengths(nodes, self.segments)
        self.rib_rest = _lengths(nodes, self.ribs)
        self.joint_rest = _turning(nodes, self.joints)[0]


def _lengths(x, pairs):
    if len(pairs) == 0:
        return np.zeros(0)
    return np.linalg.norm(x[pairs[:, 1]] - x[pairs[:, 0]], axis=1)


def _turning(x, joints):
    d1 = x[joints[:, 1]] - x[joints[:, 0]]
    d2 = x[joints[:, 2]] - x[joints[:, 1]]
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    dot = (d1 * d2).sum(axis=1)
    return np.arctan2(cross, dot), d1, d2


def _perp_over_sq(d):
    return np.column_stack([-d[:, 1], d[:, 0]]) / (d * d).sum(axis=1)[:, None]


def _spring(x, pairs, rest, k, grad):
    if len(pairs) == 0:
        return 0.0
    d = x[pairs[:, 1]] - x[pairs[:, 0]]
    length = np.linalg.norm(d, axis=1)
    ext = length - rest
    f = (k * ext / length)[:, None] * d
    np.add.at(grad, pairs[:, 1], f)
    np.add.at(grad, pairs[:, 0], -f)
    return 0.5 * k * float(ext @ ext)


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


class _Problem:
    def __init__(self, model, obj, actuation, tip_load):
        self.m = model
        self.s = _Structure(model)
        self.obj = obj
        pivot = self.s.rest[0]
        self.reference = (self.s.rest - pivot) @ _rotation(actuation).T + pivot
        self.tip_load = np.zeros(2) if tip_load is None else np.asarray(tip_load, float)
        self.free = ~self.s.fixed

    def full(self, free_x):
        x = self.reference.copy()
        x[self.free] = free_x.reshape(-1, 2)
        return x

    def contact(self, x):
        s = self.s
        segs = s.segments[s.sample_seg]
        t = s.sample_t[:, None]
        pts = (1 - t) * x[segs[:, 0]] + t * x[segs[:, 1]]
        dist, g = self.obj.signed_distance(pts)
        depth = np.maximum(-dist, 0.0)
        return depth, g, segs, t

    def energy_grad(self, free_x):
        m, s = self.m, self.s
        x = self.full(free_x)
        grad = np.zeros_like(x)
        e = _spring(x, s.segments, s.seg_rest, m.axial_stiffness, grad)
        e += _spring(x, s.ribs, s.rib_rest, m.rib_stiffness, grad)

        beta, d1, d2 = _turning(x, s.joints)
        db = np.mod(beta - s.joint_rest + np.pi, 2 * np.pi) - np.pi
        e += 0.5 * m.joint_stiffness * float(db @ db)
        w = (m.joint_stiffness * db)[:, None]
        g1, g2 = _perp_over_sq(d1), _perp_over_sq(d2)
        np.add.at(grad, s.joints[:, 0], w * g1)
        np.add.at(grad, s.joints[:, 1], -w * (g1 + g2))
        np.add.at(grad, s.joints[:, 2], w * g2)

        if self.obj is not None:
            depth, g, segs, t = self.contact(x)
            e += 0.5 * m.contact_penalty * float(depth @ depth)
            f = (-m.contact_penalty * depth)[:, None] * g
            np.add.at(grad, segs[:, 0], (1 - t) * f)
            np.add.at(grad, segs[:, 1], t * f)

        e -= float(self.tip_load @ x[s.tip])
        grad[s.tip] -= self.tip_load
        return e, grad[self.free].ravel()


def _minimise(problem: _Problem, x0: np.ndarray, tol: float, max_iter: int):
    """Gradient descent with a BB trial step and Armijo backtracking.

    Returns the final point, energy, gradient, accepted-step count and energy
    history. Accepted steps never raise the energy beyond round-off.
    """
    x = x0.copy()
    e, g = problem.energy_grad(x)
    history = [e]
    alpha = 1.0 / problem.m.axial_stiffness
    it = 0
    while np.max(np.abs(g)) > tol and it < max_iter:
        gg = float(g @ g)
        step = alpha
        for _ in range(60):
            x_new = x - step * g
            e_new, g_new = problem.energy_grad(x_new)
            if e_new <= e - 1e-4 * step * gg and e_new < e:
                break
            # below round-off the energy cannot rank steps; keep the step if
            # the slope along -g is still downhill at the new point
            if abs(e_new - e) <= 1e-12 * (1.0 + abs(e)) and float(g_new @ g) >= 0.0:
                break
            step *= 0.5
        else:
            break  # no descent possible at machine precision
        s_vec, y_vec = x_new - x, g_new - g
        sy = float(s_vec @ y_vec)
        alpha = float(s_vec @ s_vec) / sy if sy > 0 else 2.0 * step
        alpha = min(max(alpha, 1e-8), 1e3)
        x, e, g = x_new, e_new, g_new
        history.append(e)
        it += 1
    return x, e, g, it, history


def _check_placement(problem: _Problem):
    if problem.obj is None:
        return
    rest = _Problem(problem.m, problem.obj, 0.0, None)
    depth = rest.contact(rest.reference)[0]
    if np.any(depth > 0):
        raise InvalidPlacement("object penetrates the rest shape of the finger")


def solve_equilibrium(model: FinRayModel, obj: ObjectPrimitive | None, actuation: float,
                      *, tip_load=None, warm_start=None, raise_on_cap: bool = True) -> ComplianceResult:
    """Quasi-static equilibrium at base-bend ``actuation`` (rad, >= 0).

    ``obj`` may be None for a contact-free solve; ``tip_load`` is an optional
    external force (N) on the tip node. With ``raise_on_cap`` False a capped
    run returns ``converged=False`` instead of raising.
    """
    if actuation < 0:
        raise ValueError("actuation must be >= 0")
    problem = _Problem(model, obj, actuation, tip_load)
    _check_placement(problem)
    if warm_start is None:
        x0 = problem.reference[problem.free].ravel()
    else:
        x0 = np.asarray(warm_start, float)[problem.free].ravel()
    x, e, g, it, history = _minimise(problem, x0, model.tol, model.max_iter)
    converged = bool(np.max(np.abs(g)) <= model.tol)
    if not converged and raise_on_cap:
        raise NonConvergence(f"gradient norm {np.max(np.abs(g)):.3g} after {it} iterations")
    nodes = problem.full(x)
    deform = np.linalg.norm(nodes - problem.reference, axis=1)
    if obj is not None:
        depth = problem.contact(nodes)[0]
    else:
        depth = np.zeros(0)
    return ComplianceResult(
        max_deformation=float(deform.max()),
        total_contact_force=float(model.contact_penalty * depth.sum()),
        contact_point_count=int(np.count_nonzero(depth > 0)),
        converged=converged,
        iterations=it,
        nodes=nodes,
        energy_history=tuple(history),
        max_penetration=float(depth.max()) if depth.size else 0.0,
    )


def contact_force_profile(model: FinRayModel, obj: ObjectPrimitive, schedule) -> list:
    """Solve along a non-decreasing actuation schedule, warm-starting each step."""
    schedule = [float(a) for a in schedule]
    if any(b < a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("actuation schedule must be non-decreasing")
    out, warm = [], None
    for a in schedule:
        if warm is not None:
            # carry the deformation, re-clamp the base at the new angle
            prev = _Problem(model, obj, a, None)
            warm = warm.copy()
            warm[prev.s.fixed] = prev.reference[prev.s.fixed]
        res = solve_equilibrium(model, obj, a, warm_start=warm)
        out.append(res)
        warm = res.nodes
    return out


def rest_nodes(model: FinRayModel) -> np.ndarray:
    """Rest node positions (including clamped base and ghost nodes)."""
    return _Structure(model).rest.copy()


def front_beam_frame(model: FinRayModel):
    """Base point, unit direction and outward (object-side) normal of the front beam."""
    b, h = model.rest_shape
    base = np.array([-b / 2, 0.0])
    d = np.array([b / 2, h]) / np.hypot(b / 2, h)
    normal = np.array([-d[1], d[0]])
    return base, d, normal


def place_object(model: FinRayModel, shape, radius: float, along: float = 0.45,
                 gap: float = 1.0) -> ObjectPrimitive:
    """Object facing the front beam at fraction ``along`` of its length, ``gap`` mm clear.

    Boxes are aligned with the beam so a flat face meets it.
    """
    shape = Shape.parse(shape)
    base, d, normal = front_beam_frame(model)
    length = np.hypot(model.rest_shape[0] / 2, model.rest_shape[1])
    center = base + along * length * d + (radius + gap) * normal
    angle = float(np.arctan2(d[1], d[0]) - np.pi / 2)
    return ObjectPrimitive(shape, radius, tuple(center), angle)


def with_params(model: FinRayModel, **kw) -> FinRayModel:
    return replace(model, **kw)
