"""Deterministic synthetic data for every other module.

* ``gen_manifold``: points on a d-dimensional patch with known dimension.
* ``gen_scene``: a traffic scene of one of six types.  Each frame carries a
  16-channel augmented point cloud, noisy detections for the tracker,
  ground-truth agent tracks and seed subspaces for message passing.
* ``occlusion_scenario``: small scripted suites for the memory ablation.

Channel layout of the augmented clouds::

    0-2   x, y, z (m)
    3-4   velocity of the emitting object
    5     local density class
    6-7   height mean / spread of the emitting object
    8-15  auxiliary returns (zero before jitter)

The first ``motion_dims`` channels starting at 3 receive Gaussian jitter of
the scene type's scale.  Jitter on top of the 2-d surfaces (ground, bodies)
and 3-d clutter is what moves the estimated intrinsic dimension between
scene types; the tables below were calibrated once against ``estimate_lid``
with 0.5 m voxels and frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .errors import ScenarioError
from .ghn import AgentState, HypergraphScene, max_hyperedge_membership
from .grassmann import Subspace, qr_retract_batch
from .lid import PointCloud
from .memory import DetectedObject, FrameObservation

SCENE_TYPES = ("highway", "suburban", "urban", "intersection", "construction", "adverse")
CHANNELS = 16
JITTER_START = 3
AMBIENT_N = 48
SEED_K = 32
FEATURE_DIM = 16

_BOX = np.array([4.5, 1.8, 1.5])


@dataclass(frozen=True)
class SceneProfile:
    num_agents: int
    motion_dims: int
    jitter: float
    noise_level: float
    flows: tuple[float, ...]  # headings (rad) of the traffic streams
    heading_spread: float
    speed: float
    aspect: float  # extent width / height
    agent_density: float  # agents per m^2, sets the extent
    ground_points: int
    clutter_points: int
    groups: int
    min_sep: float = 2.0
    cluster_spread: float | None = None  # std (m) around group centres; None = uniform


PROFILES: dict[str, SceneProfile] = {
    "highway": SceneProfile(16, 1, 3.0, 0.1, (0.0,), 0.02, 25.0, 8.0, 0.004, 2000, 0, 2),
    "suburban": SceneProfile(20, 3, 3.0, 0.2, (0.0, math.pi), 0.1, 12.0, 2.0, 0.01, 2000, 0, 3, 1.5, 12.0),
    "urban": SceneProfile(30, 6, 3.0, 0.3, (0.0, math.pi / 2, math.pi, -math.pi / 2), 0.2, 8.0, 1.0, 0.03, 2000, 200, 4, 1.0, 6.0),
    "intersection": SceneProfile(30, 9, 3.0, 0.4, (0.0, math.pi / 2, math.pi, -math.pi / 2), 0.6, 6.0, 1.0, 0.06, 2000, 400, 6, 1.0, 4.0),
    "construction": SceneProfile(24, 13, 6.0, 0.8, (0.0, math.pi), 1.2, 4.0, 2.0, 0.08, 1200, 1600, 8, 1.0, 3.0),
    "adverse": SceneProfile(24, 13, 6.0, 2.0, (0.0, math.pi / 2, math.pi, -math.pi / 2), 0.8, 6.0, 1.0, 0.06, 1200, 1600, 8, 1.0, 3.0),
}


@dataclass(frozen=True)
class Occlusion:
    object_id: int
    start_frame: int
    duration_frames: int

    def to_dict(self) -> dict:
        return {"object_id": self.object_id, "start_frame": self.start_frame, "duration_frames": self.duration_frames}


@dataclass(frozen=True)
class ScenarioConfig:
    scene_type: str = "highway"
    num_agents: int | None = None
    motion_dims: int | None = None
    frames: int = 1
    frame_rate_hz: float = 10.0
    noise_level: float | None = None
    occlusions: tuple[Occlusion, ...] = ()
    seed: int = 0
    rho_max: float = 0.5
    eps_s: float = 3.0
    with_points: bool = True

    def __post_init__(self):
        if self.scene_type not in PROFILES:
            raise ScenarioError(f"unknown scene type {self.scene_type!r}; expected one of {SCENE_TYPES}")
        prof = PROFILES[self.scene_type]
        for name in ("num_agents", "motion_dims", "noise_level"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, getattr(prof, name))
        occ = tuple(o if isinstance(o, Occlusion) else Occlusion(**o) for o in self.occlusions)
        object.__setattr__(self, "occlusions", occ)
        if self.frames < 1:
            raise ScenarioError("frames must be >= 1")
        if not 0 <= self.motion_dims <= CHANNELS - JITTER_START:
            raise ScenarioError(f"motion_dims must lie in [0, {CHANNELS - JITTER_START}]")
        if not (self.frame_rate_hz > 0 and self.noise_level >= 0):
            raise ScenarioError("frame_rate_hz must be positive and noise_level nonnegative")
        if not (self.rho_max > 0 and self.eps_s > 0):
            raise ScenarioError("rho_max and eps_s must be positive")

    @property
    def profile(self) -> SceneProfile:
        return PROFILES[self.scene_type]

    def to_dict(self) -> dict:
        return {
            "scene_type": self.scene_type,
            "num_agents": self.num_agents,
            "motion_dims": self.motion_dims,
            "frames": self.frames,
            "frame_rate_hz": self.frame_rate_hz,
            "noise_level": self.noise_level,
            "occlusions": [o.to_dict() for o in self.occlusions],
            "seed": self.seed,
            "rho_max": self.rho_max,
            "eps_s": self.eps_s,
            "with_points": self.with_points,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        d["occlusions"] = tuple(Occlusion(**o) for o in d.get("occlusions", ()))
        return cls(**d)


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    positions: np.ndarray  # (frames, L, 2) ground truth
    velocities: np.ndarray  # (L, 2)
    agents: tuple[AgentState, ...]  # frame-0 seed states
    observations: tuple[FrameObservation, ...]
    clouds: tuple[PointCloud, ...] = ()
    owners: tuple[np.ndarray, ...] = ()  # per-point agent id, -1 for background

    @property
    def num_agents(self) -> int:
        return self.positions.shape[1]

    def hypergraph(self, frame: int = 0) -> HypergraphScene:
        return HypergraphScene(
            tuple(a._with_position(self.positions[frame, i]) for i, a in enumerate(self.agents))
        )

    def ground_truth_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "ground_truth": {
                "velocities": self.velocities.tolist(),
                "positions": self.positions.tolist(),
                "agents": [a.to_dict() for a in self.agents],
            },
        }


# ---------------------------------------------------------------------------
# manifolds


def _warp(x: np.ndarray) -> np.ndarray:
    # smooth, injective per coordinate (derivative 1 + 0.3 cos >= 0.7)
    return x + 0.3 * np.sin(x)


def gen_manifold(d: int, n: int, N: int, kind: Literal["linear", "curved"] = "linear", seed: int = 0) -> PointCloud:
    """N points uniform on a d-dimensional patch embedded in R^n.

    ``linear`` maps [0, 1]^d through a random orthonormal frame; ``curved``
    passes that flat through a coordinatewise sinusoidal warp, a smooth
    diffeomorphism of R^n, so the intrinsic dimension stays d.
    """
    if not (1 <= d <= n):
        raise ScenarioError(f"need 1 <= d <= n, got d={d}, n={n}")
    if N < 1:
        raise ScenarioError("N must be positive")
    if kind not in ("linear", "curved"):
        raise ScenarioError(f"unknown manifold kind {kind!r}")
    rng = np.random.default_rng(seed)
    frame, _ = np.linalg.qr(rng.standard_normal((n, d)))
    X = rng.uniform(0.0, 1.0, size=(N, d)) @ frame.T
    if kind == "curved":
        X = _warp(3.0 * X)
    return PointCloud(X)


# ---------------------------------------------------------------------------
# agent layout


def layout_agents(
    num: int, width: float, height: float, rho_max: float, eps_s: float, rng: np.random.Generator,
    min_sep: float = 2.0, max_attempts: int | None = None, sampler=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Rejection-sample ``num`` positions so every eps_s-disk holds at most
    ``max_hyperedge_membership(rho_max, eps_s)`` agents and no two agents are
    closer than ``min_sep``.

    ``sampler()`` proposes ``(position, group)``; the default is uniform over
    the extent with group 0.  Returns positions (num, 2) and groups (num,).
    """
    if num < 1:
        raise ScenarioError("infeasible scene: no agents")
    cap = max_hyperedge_membership(rho_max, eps_s)
    sampler = sampler or (lambda: (rng.uniform((0.0, 0.0), (width, height)), 0))
    max_attempts = max_attempts or 200 * num
    cell = max(eps_s, min_sep)
    grid: dict[tuple[int, int], list[int]] = {}
    pos = np.zeros((num, 2))
    groups = np.zeros(num, dtype=np.int64)
    counts = np.zeros(num, dtype=np.int64)  # agents within eps_s, self included
    placed = 0
    for _ in range(max_attempts):
        if placed == num:
            break
        p, group = sampler()
        cx, cy = int(math.floor(p[0] / cell)), int(math.floor(p[1] / cell))
        near = []
        ok = True
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in grid.get((cx + dx, cy + dy), ()):
                    dist = math.hypot(p[0] - pos[j, 0], p[1] - pos[j, 1])
                    if dist < min_sep:
                        ok = False
                    elif dist <= eps_s:
                        near.append(j)
        if not ok or len(near) + 1 > cap or any(counts[j] + 1 > cap for j in near):
            continue
        pos[placed] = p
        groups[placed] = group
        counts[placed] = len(near) + 1
        counts[near] += 1
        grid.setdefault((cx, cy), []).append(placed)
        placed += 1
    if placed < num:
        raise ScenarioError(f"infeasible scene: placed {placed} of {num} agents under the density cap")
    return pos, groups


def _group_sampler(prof: SceneProfile, extent: tuple[float, float], rng: np.random.Generator):
    width, height = extent
    if prof.cluster_spread is None:
        return lambda: (rng.uniform((0.0, 0.0), extent), int(rng.integers(prof.groups)))
    centres = rng.uniform((0.0, 0.0), extent, size=(prof.groups, 2))

    def sample():
        g = int(rng.integers(prof.groups))
        p = centres[g] + prof.cluster_spread * rng.standard_normal(2)
        return np.clip(p, (0.0, 0.0), (width, height)), g

    return sample


def membership_ok(positions: np.ndarray, rho_max: float, eps_s: float) -> bool:
    """True when no agent has more than the capped number of agents (itself included) within eps_s."""
    cap = max_hyperedge_membership(rho_max, eps_s)
    counts = np.array([len(n) for n in cKDTree(positions).query_ball_point(positions, eps_s)])
    return bool(counts.max() <= cap)


def group_subspaces(which: np.ndarray, rng: np.random.Generator, n: int = AMBIENT_N, k: int = SEED_K,
                    noise: float = 0.015) -> np.ndarray:
    """Bases scattered tightly around one random anchor (behavior mode) per group."""
    which = np.asarray(which)
    num = len(which)
    anchors = rng.standard_normal((int(which.max()) + 1, n, k))
    Q, ok = qr_retract_batch(anchors[which] + noise * rng.standard_normal((num, n, k)))
    if not np.all(ok):
        raise ScenarioError("degenerate seed subspace")
    return Q


# ---------------------------------------------------------------------------
# point clouds


def _box_surface(center: np.ndarray, heading: float, count: int, rng: np.random.Generator) -> np.ndarray:
    half = _BOX / 2
    areas = np.array([_BOX[1] * _BOX[2], _BOX[0] * _BOX[2], _BOX[0] * _BOX[1]])
    axis = rng.choice(3, size=count, p=areas / areas.sum())
    local = rng.uniform(-half, half, size=(count, 3))
    side = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    # the top face only; the bottom is not visible
    side[axis == 2] = 1.0
    local[np.arange(count), axis] = side * half[axis]
    local[:, 2] += half[2]
    c, s = math.cos(heading), math.sin(heading)
    x = c * local[:, 0] - s * local[:, 1] + center[0]
    y = s * local[:, 0] + c * local[:, 1] + center[1]
    return np.column_stack([x, y, local[:, 2]])


def _frame_cloud(
    positions: np.ndarray, velocities: np.ndarray, extent: tuple[float, float], prof: SceneProfile,
    motion_dims: int, rng: np.random.Generator, per_agent: int = 60,
) -> tuple[np.ndarray, np.ndarray]:
    width, height = extent
    blocks, owners = [], []

    g = prof.ground_points
    ground = np.zeros((g, CHANNELS))
    ground[:, 0] = rng.uniform(0, width, g)
    ground[:, 1] = rng.uniform(0, height, g)
    ground[:, 5] = 0.2
    blocks.append(ground)
    owners.append(np.full(g, -1))

    for i, (p, v) in enumerate(zip(positions, velocities)):
        heading = math.atan2(v[1], v[0])
        pts = np.zeros((per_agent, CHANNELS))
        pts[:, :3] = _box_surface(p, heading, per_agent, rng)
        pts[:, 3:5] = v
        pts[:, 5] = 1.0
        pts[:, 6] = _BOX[2] / 2
        pts[:, 7] = _BOX[2] / math.sqrt(12)
        blocks.append(pts)
        owners.append(np.full(per_agent, i))

    c = prof.clutter_points
    if c:
        clutter = np.zeros((c, CHANNELS))
        clutter[:, 0] = rng.uniform(0, width, c)
        clutter[:, 1] = rng.uniform(0, height, c)
        clutter[:, 2] = rng.uniform(0, 3.0, c)
        clutter[:, 5] = 0.5
        clutter[:, 6] = 1.5
        clutter[:, 7] = 3.0 / math.sqrt(12)
        blocks.append(clutter)
        owners.append(np.full(c, -1))

    pts = np.vstack(blocks)
    if motion_dims:
        pts[:, JITTER_START : JITTER_START + motion_dims] += prof.jitter * rng.standard_normal((len(pts), motion_dims))
    return pts, np.concatenate(owners)


# ---------------------------------------------------------------------------
# scenes


def _headings(num: int, prof: SceneProfile, rng: np.random.Generator) -> np.ndarray:
    flows = np.asarray(prof.flows)[rng.integers(0, len(prof.flows), size=num)]
    return flows + prof.heading_spread * rng.standard_normal(num)


def _observations(
    positions: np.ndarray, features: np.ndarray, cfg: ScenarioConfig, rng: np.random.Generator
) -> tuple[FrameObservation, ...]:
    frames, L, _ = positions.shape
    f_sigma = 0.02 * (1.0 + cfg.noise_level)
    p_sigma = 0.05 * (1.0 + cfg.noise_level)
    out = []
    for f in range(frames):
        feats = features + f_sigma * rng.standard_normal(features.shape)
        pos = positions[f] + p_sigma * rng.standard_normal((L, 2))
        objs = tuple(DetectedObject(feats[i], pos[i], i) for i in range(L))
        out.append(FrameObservation(f / cfg.frame_rate_hz, objs, cfg.noise_level))
    return tuple(out)


def _assemble(
    cfg: ScenarioConfig, pos0: np.ndarray, velocities: np.ndarray, groups: np.ndarray,
    extent: tuple[float, float], rng: np.random.Generator,
) -> Scenario:
    L = len(pos0)
    t = np.arange(cfg.frames)[:, None, None] / cfg.frame_rate_hz
    positions = pos0[None] + t * velocities[None]
    bases = group_subspaces(groups, rng)
    agents = tuple(
        AgentState(i, pos0[i], Subspace.trusted(bases[i]), velocities[i]) for i in range(L)
    )
    features = rng.standard_normal((L, FEATURE_DIM))
    features /= np.linalg.norm(features, axis=1, keepdims=True)
    observations = _observations(positions, features, cfg, rng)
    clouds: tuple[PointCloud, ...] = ()
    owners: tuple[np.ndarray, ...] = ()
    if cfg.with_points:
        made = [_frame_cloud(positions[f], velocities, extent, cfg.profile, cfg.motion_dims, rng) for f in range(cfg.frames)]
        clouds = tuple(PointCloud(p) for p, _ in made)
        owners = tuple(o for _, o in made)
    return Scenario(cfg, positions, velocities, agents, observations, clouds, owners)


def gen_scene(config: ScenarioConfig, max_resamples: int = 20) -> Scenario:
    """Generate a scenario, then apply its occlusion script.

    Agents are placed under the density cap at frame 0 and move at constant
    velocity; if a later frame breaks the cap the layout is resampled from
    the next sub-seed.
    """
    cfg = config
    if cfg.num_agents < 1:
        raise ScenarioError("infeasible scene: no agents")
    prof = cfg.profile
    area = cfg.num_agents / prof.agent_density
    height = math.sqrt(area / prof.aspect)
    extent = (prof.aspect * height, height)
    for attempt in range(max_resamples):
        rng = np.random.default_rng([cfg.seed, attempt])
        pos0, groups = layout_agents(cfg.num_agents, *extent, cfg.rho_max, cfg.eps_s, rng, min_sep=prof.min_sep,
                                     sampler=_group_sampler(prof, extent, rng))
        heading = _headings(cfg.num_agents, prof, rng)
        speed = prof.speed * rng.uniform(0.9, 1.1, size=cfg.num_agents)
        vel = np.column_stack([speed * np.cos(heading), speed * np.sin(heading)])
        steps = np.arange(cfg.frames) / cfg.frame_rate_hz
        if all(membership_ok(pos0 + t * vel, cfg.rho_max, cfg.eps_s) for t in steps):
            return apply_occlusions(_assemble(cfg, pos0, vel, groups, extent, rng))
    raise ScenarioError("infeasible scene: density cap violated in every resample")


def apply_occlusions(scenario: Scenario, script: Sequence[Occlusion] | None = None) -> Scenario:
    """Delete scripted objects from observations and point clouds.

    With ``script=None`` the scenario's own config script is applied.  A
    custom script is applied on top and appended to the config.  Deletion is
    idempotent, so re-applying a script changes nothing.
    """
    cfg = scenario.config
    extra = () if script is None else tuple(o if isinstance(o, Occlusion) else Occlusion(**o) for o in script)
    todo = cfg.occlusions if script is None else extra
    L, F = scenario.num_agents, cfg.frames
    hidden = [set() for _ in range(F)]
    for o in todo:
        if not 0 <= o.object_id < L:
            raise ScenarioError(f"unknown object_id {o.object_id}")
        if o.duration_frames < 0 or o.start_frame < 0 or o.start_frame + o.duration_frames > F:
            raise ScenarioError(f"occlusion window [{o.start_frame}, {o.start_frame + o.duration_frames}) outside [0, {F})")
        for f in range(o.start_frame, o.start_frame + o.duration_frames):
            hidden[f].add(o.object_id)
    if not any(hidden):
        return scenario if script is None else replace(scenario, config=replace(cfg, occlusions=cfg.occlusions + extra))

    obs = tuple(
        replace(fr, objects=tuple(d for d in fr.objects if d.id_hint not in hidden[f])) if hidden[f] else fr
        for f, fr in enumerate(scenario.observations)
    )
    clouds, owners = scenario.clouds, scenario.owners
    if clouds:
        keep = [~np.isin(owners[f], list(hidden[f])) for f in range(F)]
        clouds = tuple(PointCloud(c.points[k]) if hidden[f] else c for f, (c, k) in enumerate(zip(clouds, keep)))
        owners = tuple(o[k] if hidden[f] else o for f, (o, k) in enumerate(zip(owners, keep)))
    new_cfg = cfg if script is None else replace(cfg, occlusions=cfg.occlusions + extra)
    return replace(scenario, config=new_cfg, observations=obs, clouds=clouds, owners=owners)


# ---------------------------------------------------------------------------
# scripted occlusion suites


def occlusion_scenario(gap: int, seed: int = 0, randomized: bool = False, lead: int = 20, tail: int = 20) -> Scenario:
    """Well-separated objects in parallel lanes, one or more hidden for ``gap`` frames.

    The deterministic suite (``randomized=False``) hides object 1 of four
    for exactly ``gap`` frames.  The randomized suite draws lane spacing,
    speeds, noise and which objects are hidden from ``seed``; every hidden
    window still lasts ``gap`` frames.
    """
    if gap < 0:
        raise ScenarioError("gap must be nonnegative")
    rng = np.random.default_rng([seed, gap, int(randomized)])
    if randomized:
        num = int(rng.integers(3, 7))
        spacing = rng.uniform(10.0, 20.0)
        speed = rng.uniform(5.0, 15.0, size=num)
        noise = float(rng.uniform(0.0, 1.0))
        hidden_ids = rng.choice(num, size=int(rng.integers(1, num)), replace=False)
        starts = rng.integers(lead // 2, lead + 1, size=len(hidden_ids))
    else:
        num, spacing, noise = 4, 15.0, 0.0
        speed = np.full(num, 10.0)
        hidden_ids, starts = np.array([1]), np.array([lead])
    frames = int(starts.max()) + gap + tail
    occ = tuple(Occlusion(int(i), int(s), gap) for i, s in zip(hidden_ids, starts))
    cfg = ScenarioConfig("highway", num_agents=num, frames=frames, noise_level=noise, occlusions=occ,
                         seed=seed, with_points=False)
    pos0 = np.column_stack([rng.uniform(0.0, 5.0, size=num) if randomized else np.zeros(num), spacing * np.arange(num)])
    vel = np.column_stack([speed, np.zeros(num)])
    extent = (float(speed.max() * frames / cfg.frame_rate_hz + 10.0), spacing * num)
    return apply_occlusions(_assemble(cfg, pos0, vel, np.arange(num), extent, rng))


# ---------------------------------------------------------------------------
# directory I/O


def write_scenario(scenario: Scenario, out_dir) -> Path:
    from .io import write_hpc, write_json

    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    write_json(out / "scenario.json", scenario.ground_truth_dict())
    for f, obs in enumerate(scenario.observations):
        write_json(out / "frames" / f"obs_{f:05d}.json", obs.to_dict())
    for f, cloud in enumerate(scenario.clouds):
        write_hpc(out / "frames" / f"frame_{f:05d}.hpc", cloud)
    return out


def read_observations(scenario_dir) -> list[FrameObservation]:
    from .io import read_json

    files = sorted((Path(scenario_dir) / "frames").glob("obs_*.json"))
    if not files:
        raise ScenarioError(f"{scenario_dir}: no observation files")
    return [FrameObservation.from_dict(read_json(p)) for p in files]


def scaling_scene(num_agents: int, seed: int = 0, density: float = 0.2, groups: int = 4,
                  rho_max: float = 0.5, eps_s: float = 3.0) -> HypergraphScene:
    """Uniform layout at a fixed agent density, so the extent grows with the count."""
    rng = np.random.default_rng([seed, num_agents])
    side = math.sqrt(num_agents / density)

    def sampler():
        return rng.uniform((0.0, 0.0), (side, side)), int(rng.integers(groups))

    pos, which = layout_agents(num_agents, side, side, rho_max, eps_s, rng, min_sep=1.0, sampler=sampler)
    bases = group_subspaces(which, rng)
    return HypergraphScene(tuple(AgentState(i, pos[i], Subspace.trusted(bases[i])) for i in range(num_agents)))


def mixed_stream(num_frames: int, seed: int = 0, low_fraction: float = 0.61, num_agents: int | None = None,
                 low_type: str = "highway") -> list[Scenario]:
    """Seeded single-frame scenes: ``round(low_fraction * num_frames)`` of
    ``low_type`` and the rest cycling through the other scene types, shuffled."""
    if num_frames < 1 or not 0.0 <= low_fraction <= 1.0:
        raise ScenarioError("need num_frames >= 1 and low_fraction in [0, 1]")
    rng = np.random.default_rng([seed, 0x5712])
    n_low = int(round(low_fraction * num_frames))
    others = [t for t in SCENE_TYPES if t != low_type]
    types = [low_type] * n_low + [others[i % len(others)] for i in range(num_frames - n_low)]
    types = [types[i] for i in rng.permutation(num_frames)]
    return [
        gen_scene(ScenarioConfig(t, num_agents=num_agents, seed=seed * 100_003 + i))
        for i, t in enumerate(types)
    ]
