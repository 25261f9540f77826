"""Grasp plant with Coulomb slip, slip-reactive controllers and benchmarks.

The plant is deliberately small. Each finger contact carries its share of
the tangential load and slips when that share exceeds ``mu * N``. Tactile
frames report the grip force through a seeded contact patch; while the
object slips the reported force decays geometrically as contact is lost.
Undetected slip moves the object, and an accumulated slip distance beyond
``drop_distance`` counts as a drop.

Controllers observe only frames. On a detected slip the episode pauses the
task for a re-grasp and raises the grip by a fixed increment.
"""

from __future__ import annotations

import copy
import csv
import enum
import io as _io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import BudgetExceeded, WorkspaceNotComputed
from .kinematics import LinkageGeometry, Mode
from .rng import substream
from .slipnet import GcnParams, forward, standard_a_hat
from .tactile import (
    N_ARRAYS,
    SlipThresholdModel,
    TactileFrame,
    aggregate_force,
    contact_patch,
)
from .workspace import histogram_support, radius_histogram, sample_workspace

GRAVITY = 9.81  # m/s^2


# ------------------------------------------------------------------ objects

@dataclass(frozen=True)
class CatalogObject:
    """One catalog entry. ``radius`` in mm, ``weight`` in g."""

    name: str
    radius: float
    weight: float
    shape: str = "cylinder"
    mu: float = 0.6

    def __post_init__(self):
        if not (self.radius > 0 and self.weight > 0):
            raise ValueError(f"{self.name}: radius and weight must be positive")
        if not self.mu > 0:
            raise ValueError(f"{self.name}: friction coefficient must be positive")

    @property
    def weight_n(self) -> float:
        return self.weight * 1e-3 * GRAVITY


ObjectCatalogEntry = CatalogObject

CATALOG_FIELDS = ["name", "radius_mm", "weight_g", "shape", "mu"]


def parse_catalog(text: str) -> list:
    rows = list(csv.DictReader(_io.StringIO(text)))
    missing = set(CATALOG_FIELDS) - set(rows[0].keys() if rows else CATALOG_FIELDS)
    if missing:
        raise ValueError(f"catalog is missing columns {sorted(missing)}")
    return [CatalogObject(r["name"], float(r["radius_mm"]), float(r["weight_g"]),
                          r["shape"], float(r["mu"])) for r in rows]


def format_catalog(objects) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CATALOG_FIELDS)
    for o in objects:
        w.writerow([o.name, repr(float(o.radius)), repr(float(o.weight)), o.shape, repr(float(o.mu))])
    return buf.getvalue()


def default_catalog() -> list:
    """The fifteen test objects shipped with the package."""
    return parse_catalog(resources.files("finray").joinpath("data/objects.csv").read_text())


# Bottle cap used by the cap-removal scenario.
DEFAULT_CAP = CatalogObject("Bottle cap", 15.0, 20.0, "cylinder", 0.5)


# -------------------------------------------------------------------- plant

@dataclass(frozen=True)
class PlantParams:
    slip_decay: float = 0.85          # reported force factor per slipping step
    noise_sigma: float = 0.03         # N, on the aggregate
    slip_speed: float = 3.0           # mm per step at fully unbalanced load
    drop_distance: float = 14.0       # mm, side of one sensing pad
    patch_spread: float = 1.0         # taxels
    rate: float = 100.0               # Hz

    def __post_init__(self):
        if not 0 < self.slip_decay < 1:
            raise ValueError("slip_decay must be in (0, 1)")
        if self.noise_sigma < 0 or self.slip_speed < 0 or self.drop_distance <= 0:
            raise ValueError("invalid plant parameters")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "PlantParams":
        return cls(**d)


@dataclass(frozen=True)
class PlantState:
    """Per-contact quantities: ``normal_force`` and ``tangential_load`` in N."""

    object: CatalogObject
    normal_force: float = 0.0
    tangential_load: float = 0.0
    slipping: bool = False
    cap_rotation: float = 0.0
    contact_level: float = 0.0        # noise-free reported aggregate, N
    slip_distance: float = 0.0        # mm
    step: int = 0
    weights: np.ndarray | None = field(default=None, compare=False, repr=False)


def is_slipping(load: float, mu: float, normal: float) -> bool:
    """Coulomb condition."""
    return bool(load > mu * normal)


def new_patch(rng: np.random.Generator, spread: float) -> np.ndarray:
    centers = rng.uniform(1.0, 2.0, size=(N_ARRAYS, 2))
    return contact_patch(centers, spread)


def step_plant(state: PlantState, grip_command: float, task_load: float, noise,
               params: PlantParams = PlantParams(), rotation: float = 0.0) -> tuple:
    """Advance one control step.

    ``noise`` is a Generator or an integer seed. Exactly one normal draw is
    consumed per step, so identical command sequences give identical
    trajectories whatever produced them. Returns ``(state', frame)``.
    """
    if grip_command < 0:
        raise ValueError("grip_command must be >= 0")
    rng = noise if isinstance(noise, np.random.Generator) else substream(int(noise), "control/plant")
    weights = state.weights if state.weights is not None else new_patch(rng, params.patch_spread)
    mu = state.object.mu
    slipping = is_slipping(task_load, mu, grip_command)
    assert slipping == (task_load > mu * grip_command)
    if slipping:
        prev = state.contact_level if state.slipping else grip_command
        level = prev * params.slip_decay
        excess = (task_load - mu * grip_command) / task_load
        slip = state.slip_distance + params.slip_speed * excess
        turned = state.cap_rotation
    else:
        level = grip_command
        slip = state.slip_distance
        turned = state.cap_rotation + rotation
    n = rng.normal(0.0, params.noise_sigma) if params.noise_sigma > 0 else 0.0
    total = max(level + n, 0.0)
    t = state.step / params.rate
    frame = TactileFrame(t, total * weights)
    new = replace(state, normal_force=float(grip_command), tangential_load=float(task_load),
                  slipping=slipping, cap_rotation=float(turned), contact_level=float(level),
                  slip_distance=float(slip), step=state.step + 1, weights=weights)
    return new, frame


# -------------------------------------------------------------- controllers

class ThresholdController:
    """Slip when the low-pass filtered and window-averaged aggregate drops below ``f_min``.

    The reading is first smoothed by an EMA (``alpha``) and then averaged
    over the last ``window`` frames. Detection is single-frame.
    """

    name = "threshold"

    def __init__(self, model: SlipThresholdModel, alpha: float = 0.5, window: int = 1):
        self.model = model
        self.alpha = float(alpha)
        self.window = int(window)
        self.reset()

    def reset(self):
        self._ema = None
        self._hist = []
        self.grasping = False

    def detect(self, frame: TactileFrame) -> bool:
        a = aggregate_force(frame)
        self._ema = a if self._ema is None else self.alpha * a + (1 - self.alpha) * self._ema
        self._hist = (self._hist + [self._ema])[-self.window:]
        level = float(np.mean(self._hist))
        if level >= self.model.f_min:
            self.grasping = True
        return self.grasping and level < self.model.f_min

    def regrasped(self):
        pass


class GcnController:
    """Slip when the classifier puts ``consecutive`` filtered frames in class 0.

    Class 0 is the below-threshold class; see the label convention in
    :mod:`finray.slipnet`. The counter restarts after each trigger.
    """

    name = "gcn"

    def __init__(self, params: GcnParams, alpha: float = 0.5, consecutive: int = 2):
        self.params = params
        self.alpha = float(alpha)
        self.consecutive = int(consecutive)
        self._a = standard_a_hat()
        self.reset()

    def reset(self):
        self._ema = None
        self._history = []
        self._count = 0
        self.grasping = False

    @property
    def window(self) -> int:
        return self.params.dims[0]

    def probability(self, forces: np.ndarray) -> float:
        """``forces`` is one frame, or (48, window) for a windowed model."""
        x = forces.reshape(1, -1) if self.window == 1 else forces.reshape(1, -1, self.window)
        p, _ = forward(self.params, x, self._a)
        return float(p[0])

    def detect(self, frame: TactileFrame) -> bool:
        x = frame.forces
        self._ema = x if self._ema is None else self.alpha * x + (1 - self.alpha) * self._ema
        self._history = ([self._ema.ravel()] + self._history)[: self.window]
        # until the window fills, the oldest reading stands in for missing ones
        hist = self._history + [self._history[-1]] * (self.window - len(self._history))
        above = self.probability(np.stack(hist, axis=-1)) > 0.5
        if above:
            self.grasping = True
            self._count = 0
            return False
        if not self.grasping:
            return False
        self._count += 1
        if self._count >= self.consecutive:
            self._count = 0
            return True
        return False

    def regrasped(self):
        self._count = 0


class ScriptedController:
    """Replays a fixed detection sequence; used to drive the plant in tests."""

    name = "scripted"

    def __init__(self, detections):
        self.detections = list(detections)
        self._i = 0

    def reset(self):
        pass

    def detect(self, frame) -> bool:
        i = self._i
        self._i += 1
        return bool(self.detections[i]) if i < len(self.detections) else False

    def regrasped(self):
        pass


# --------------------------------------------------------------- scenarios

class ScenarioKind(enum.Enum):
    PICK_HOLD = "pick-hold"
    CAP_REMOVAL = "cap-removal"


class Phase(enum.Enum):
    P1 = "adjust-and-grasp"
    P2 = "rotate"
    P3 = "reorient"
    P4 = "lift-off"
    LIFT = "lift"
    HOLD = "hold"


ALLOWED_TRANSITIONS = {
    Phase.P1: {Phase.P2, Phase.LIFT},
    Phase.P2: {Phase.P3},
    Phase.P3: {Phase.P1, Phase.P4},
    Phase.P4: set(),
    Phase.LIFT: {Phase.HOLD},
    Phase.HOLD: set(),
}


@dataclass(frozen=True)
class Scenario:
    kind: ScenarioKind = ScenarioKind.PICK_HOLD
    mode: int = 2
    initial_grip: float = 1.5          # N per contact
    grip_increment: float = 0.5
    grip_cap: float = 20.0
    grasp_steps: int = 5
    regrasp_steps: int = 1
    lift_steps: int = 60
    hold_steps: int = 100
    rotation_per_pass: float = 0.5     # rad
    loosen_threshold: float = 3.0      # rad
    rotation_rate: float = 0.05        # rad per step
    cap_load: tuple = (0.5, 1.5)       # N per contact while turning, drawn per episode
    reorient_steps: int = 10
    liftoff_steps: int = 20
    budget: int = 3000

    def __post_init__(self):
        object.__setattr__(self, "kind", ScenarioKind(self.kind))
        object.__setattr__(self, "mode", int(Mode.parse(self.mode)))
        object.__setattr__(self, "cap_load", tuple(float(v) for v in self.cap_load))
        if self.rotation_per_pass <= 0 or self.loosen_threshold <= 0 or self.rotation_rate <= 0:
            raise ValueError("rotation parameters must be positive")
        if self.initial_grip < 0 or self.grip_increment <= 0 or self.grip_cap <= 0:
            raise ValueError("grip parameters must be positive")
        if self.budget < 1:
            raise ValueError("budget must be >= 1")

    @classmethod
    def pick_hold(cls, **kw) -> "Scenario":
        return cls(kind=ScenarioKind.PICK_HOLD, **kw)

    @classmethod
    def cap_removal(cls, **kw) -> "Scenario":
        kw.setdefault("mode", 1)
        return cls(kind=ScenarioKind.CAP_REMOVAL, **kw)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["kind"] = self.kind.value
        d["cap_load"] = list(self.cap_load)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(**d)


def contacts(mode) -> int:
    """Finger contacts sharing the load: the parallel pinch uses two."""
    return 2 if Mode.parse(mode) == Mode.PARALLEL else 3


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    success: bool
    iterations: int
    mean_contact_force: float
    regrasps: int
    phases: tuple
    reason: str = ""
    frames: tuple = field(default=(), repr=False)
    grips: tuple = field(default=(), repr=False)

    def summary(self) -> dict:
        return {
            "success": self.success,
            "iterations": self.iterations,
            "mean_contact_force": self.mean_contact_force,
            "regrasps": self.regrasps,
            "phases": [p.value for p in self.phases],
            "reason": self.reason,
        }

    def same_as(self, other: "EpisodeResult") -> bool:
        return (self.summary() == other.summary()
                and len(self.frames) == len(other.frames)
                and all(a.equals(b) for a, b in zip(self.frames, other.frames)))


class _Episode:
    """Mutable bookkeeping for one run; the plant state itself stays immutable."""

    def __init__(self, scenario, controller, obj, rng, plant):
        self.sc, self.ctl, self.plant, self.rng = scenario, controller, plant, rng
        self.state = PlantState(obj)
        self.grip = scenario.initial_grip
        self.frames, self.grips, self.measured = [], [], []
        self.phases = []
        self.regrasps = 0

    def enter(self, phase):
        if self.phases and phase not in ALLOWED_TRANSITIONS[self.phases[-1]]:
            raise RuntimeError(f"illegal transition {self.phases[-1]} -> {phase}")
        self.phases.append(phase)

    def new_grasp(self):
        self.state = replace(self.state, weights=new_patch(self.rng, self.plant.patch_spread),
                             slipping=False, contact_level=0.0)
        self.grip = self.sc.initial_grip
        self.ctl.reset()

    def tick(self, load, rotation=0.0, measure=False, watch=True):
        if self.state.step >= self.sc.budget:
            raise BudgetExceeded("step budget exhausted")
        self.state, frame = step_plant(self.state, self.grip, load, self.rng, self.plant, rotation)
        self.frames.append(frame)
        self.grips.append(self.grip)
        if measure:
            self.measured.append(aggregate_force(frame))
        if self.state.slip_distance >= self.plant.drop_distance:
            raise _Dropped()
        slip = self.ctl.detect(frame) if watch else False
        return slip

    def regrasp(self, load):
        """Pause the task, squeeze harder and restore contact."""
        self.regrasps += 1
        self.grip = min(self.grip + self.sc.grip_increment, self.sc.grip_cap)
        self.ctl.regrasped()
        # re-seating the object ends the slip event
        self.state = replace(self.state, slip_distance=0.0)
        for _ in range(self.sc.regrasp_steps):
            self.tick(load, watch=False)


class _Dropped(Exception):
    pass


def acquire(ep: _Episode, obj: CatalogObject, feasibility) -> bool:
    p = feasibility.acquisition_probability(obj.radius, ep.sc.mode) if feasibility else 1.0
    return bool(ep.rng.random() < p)


def _pick_hold(ep: _Episode, obj: CatalogObject, feasibility):
    sc = ep.sc
    share = obj.weight_n / contacts(sc.mode)
    ep.enter(Phase.P1)
    ep.new_grasp()
    if not acquire(ep, obj, feasibility):
        for _ in range(sc.grasp_steps):
            ep.tick(0.0, watch=False)
        return False, "object outside the graspable size range"
    for _ in range(sc.grasp_steps):
        ep.tick(0.0)
    ep.enter(Phase.LIFT)
    k = 0
    while k < sc.lift_steps:
        load = share * (k + 1) / sc.lift_steps
        if ep.tick(load, measure=True):
            ep.regrasp(load)
        else:
            k += 1
    ep.enter(Phase.HOLD)
    for _ in range(sc.hold_steps):
        if ep.tick(share, measure=True):
            ep.regrasp(share)
    return True, ""


def _cap_removal(ep: _Episode, obj: CatalogObject, feasibility):
    sc = ep.sc
    lo, hi = sc.cap_load
    turning = ep.rng.uniform(lo, hi)
    static = obj.weight_n / contacts(sc.mode)
    if not acquire(ep, obj, feasibility):
        ep.enter(Phase.P1)
        ep.new_grasp()
        ep.tick(0.0, watch=False)
        return False, "cap outside the graspable size range"
    while True:
        ep.enter(Phase.P1)
        ep.new_grasp()
        for _ in range(sc.grasp_steps):
            ep.tick(static)
        ep.enter(Phase.P2)
        turned = 0.0
        while turned < sc.rotation_per_pass - 1e-12:
            before = ep.state.cap_rotation
            if ep.tick(static + turning, rotation=sc.rotation_rate, measure=True):
                ep.regrasp(static)
            turned += ep.state.cap_rotation - before
        ep.enter(Phase.P3)
        for _ in range(sc.reorient_steps):
            ep.tick(0.0, watch=False)
        ep.state = replace(ep.state, slip_distance=0.0)
        if ep.state.cap_rotation >= sc.loosen_threshold - 1e-12:
            break
    ep.enter(Phase.P4)
    lift_share = obj.weight_n / 3
    ep.new_grasp()
    for k in range(sc.liftoff_steps):
        if ep.tick(lift_share * (k + 1) / sc.liftoff_steps):
            ep.regrasp(lift_share)
    return True, ""


def run_episode(scenario: Scenario, controller, obj: CatalogObject | None = None, seed: int = 0,
                plant: PlantParams = PlantParams(), feasibility=None, keep_frames: bool = True) -> EpisodeResult:
    """Run one seeded episode. Budget overruns and drops are failures, not errors.

    Without a ``feasibility`` table the cached default-geometry table is used,
    so out-of-range objects are never silently treated as graspable.
    """
    if feasibility is None:
        feasibility = compute_feasibility()
    if obj is None:
        obj = DEFAULT_CAP if scenario.kind is ScenarioKind.CAP_REMOVAL else default_catalog()[0]
    rng = substream(seed, "control/episode")
    ep = _Episode(scenario, controller, obj, rng, plant)
    body = _cap_removal if scenario.kind is ScenarioKind.CAP_REMOVAL else _pick_hold
    try:
        success, reason = body(ep, obj, feasibility)
    except _Dropped:
        success, reason = False, "object dropped"
    except BudgetExceeded:
        success, reason = False, "step budget exhausted"
    force = float(np.mean(ep.measured)) if ep.measured else 0.0
    return EpisodeResult(
        success=bool(success),
        iterations=max(ep.state.step, 1),
        mean_contact_force=max(force, 0.0),
        regrasps=ep.regrasps,
        phases=tuple(ep.phases),
        reason=reason,
        frames=tuple(ep.frames) if keep_frames else (),
        grips=tuple(ep.grips),
    )


# ------------------------------------------------------------- feasibility

class FeasibilityTable:
    """Per-mode radius histograms from a seeded workspace run."""

    def __init__(self, geometry: LinkageGeometry | None = None, n: int = 20000, seed: int = 0,
                 tail: float = 0.05, threads: int = 1):
        geometry = geometry or LinkageGeometry()
        self.tail = tail
        self.hist, self.support = {}, {}
        for m in Mode:
            h = radius_histogram(sample_workspace(geometry, m, n, seed, threads=threads))
            self.hist[m] = h
            self.support[m] = histogram_support(h, tail)

    def feasible(self, radius: float, mode) -> bool:
        if not radius > 0:
            raise ValueError("radius must be positive")
        lo, hi = self.support[Mode.parse(mode)]
        return bool(lo <= radius <= hi)

    def acquisition_probability(self, radius: float, mode) -> float:
        """1 inside the support; outside it, the workspace mass beyond ``radius``
        relative to the trimmed tail, so success fades with distance from the support."""
        mode = Mode.parse(mode)
        if self.feasible(radius, mode):
            return 1.0
        h = self.hist[mode]
        edges = h.bin_edges[1:-1]
        cdf = np.concatenate([[0.0], np.cumsum(h.counts[1:-1])]) / h.counts.sum()
        below = float(np.interp(radius, edges, cdf))
        lo, _ = self.support[mode]
        frac = below if radius < lo else 1.0 - below
        return float(min(1.0, max(frac, 0.0) / self.tail))


_FEASIBILITY: dict = {}


def compute_feasibility(geometry: LinkageGeometry | None = None, n: int = 20000, seed: int = 0,
                        threads: int = 1) -> FeasibilityTable:
    key = (geometry, n, seed)
    if key not in _FEASIBILITY:
        _FEASIBILITY[key] = FeasibilityTable(geometry, n, seed, threads=threads)
    _FEASIBILITY["latest"] = _FEASIBILITY[key]
    return _FEASIBILITY[key]


def clear_feasibility():
    _FEASIBILITY.clear()


def grasp_feasibility(radius: float, mode, table: FeasibilityTable | None = None) -> dict:
    """Whether ``radius`` lies in the mode's workspace support (needs a computed table)."""
    table = table or _FEASIBILITY.get("latest")
    if table is None:
        raise WorkspaceNotComputed("call compute_feasibility() first")
    return {"feasible": table.feasible(radius, mode), "support": table.support[Mode.parse(mode)]}


# --------------------------------------------------------------- benchmark

BENCH_FIELDS = ["object", "controller", "mode", "episodes", "successes", "success_rate",
                "mean_iterations", "mean_contact_force"]


def episode_seed(seed: int, *index: int) -> int:
    """Episode seed shared by all controllers so comparisons are paired."""
    return int(substream(seed, "control/bench", *index).integers(2 ** 31))


def run_benchmark(objects, controllers: dict, episodes_per_cell: int = 10, seed: int = 0,
                  modes=(1, 2, 3), scenario: Scenario | None = None, feasibility=None,
                  plant: PlantParams = PlantParams(), threads: int = 1) -> list:
    """One row per (object, controller, mode), in catalog order."""
    if episodes_per_cell < 1:
        raise ValueError("episodes_per_cell must be >= 1")
    scenario = scenario or Scenario.pick_hold()
    cells = [(i, o, name, m) for i, o in enumerate(objects) for name in controllers for m in modes]

    def run(cell):
        i, o, name, m = cell
        # controllers keep per-episode state, so each cell gets its own copy
        ctl = copy.deepcopy(controllers[name])
        sc = replace(scenario, mode=m)
        res = [run_episode(sc, ctl, o, episode_seed(seed, i, m, e), plant, feasibility,
                           keep_frames=False)
               for e in range(episodes_per_cell)]
        succ = sum(r.success for r in res)
        return {
            "object": o.name, "controller": name, "mode": int(m),
            "episodes": episodes_per_cell, "successes": succ,
            "success_rate": succ / episodes_per_cell,
            "mean_iterations": float(np.mean([r.iterations for r in res])),
            "mean_contact_force": float(np.mean([r.mean_contact_force for r in res])),
        }

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, cells))
    return [run(c) for c in cells]


def format_benchmark(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(BENCH_FIELDS)
    for r in rows:
        w.writerow([r["object"], r["controller"], r["mode"], r["episodes"], r["successes"],
                    f"{r['success_rate']:.6f}", f"{r['mean_iterations']:.6f}",
                    f"{r['mean_contact_force']:.6f}"])
    return buf.getvalue()


def overall_success(rows, controller: str, best_mode: bool = True) -> float:
    """Catalog-wide success rate. With ``best_mode`` each object counts in its best configuration."""
    rows = [r for r in rows if r["controller"] == controller]
    if not best_mode:
        return sum(r["successes"] for r in rows) / sum(r["episodes"] for r in rows)
    best = {}
    for r in rows:
        if r["object"] not in best or r["success_rate"] > best[r["object"]]["success_rate"]:
            best[r["object"]] = r
    return sum(r["successes"] for r in best.values()) / sum(r["episodes"] for r in best.values())
