"""Grassmannian hypergraph message passing and the dense-attention baseline.

Each agent carries a k-dimensional subspace.  One round:

    M_e      = (1/|e|) sum_{i in e} U_i W_phi
    U_i_bar  = U_i + eta * sum_{e ni i} (I - U_i U_i^T) M_e W_psi
    U_i      = qr(U_i_bar)

Hyperedges are per-agent neighborhoods (spatial radius ``eps_s`` and
projection distance ``eps_g``), found through a uniform grid so that under
a density cap both construction and aggregation are linear in the agent
count.  All per-agent sums run in ascending agent-id order, which makes the
result exactly equivariant under relabeling.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import GraphError, SubspaceError
from .grassmann import Subspace, pairwise_sq_distances, qr_retract, qr_retract_batch, redimension
from .router import PATH_TABLE, PathSpec

MAX_ETA_HALVINGS = 5


@dataclass(frozen=True, eq=False)
class AgentState:
    id: int
    position: np.ndarray
    subspace: Subspace
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        pos = np.array(self.position, dtype=np.float64).reshape(2)
        vel = np.array(self.velocity, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise GraphError(f"agent {self.id}: non-finite position or velocity")
        object.__setattr__(self, "id", int(self.id))
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "velocity", vel)

    def with_basis(self, U: np.ndarray) -> "AgentState":
        return replace(self, subspace=Subspace(U))

    def _copy_with(self, **changes) -> "AgentState":
        # fields are already validated; skip __post_init__
        obj = object.__new__(AgentState)
        for name in ("id", "position", "subspace", "velocity"):
            object.__setattr__(obj, name, changes.get(name, getattr(self, name)))
        return obj

    def _with_subspace(self, subspace: Subspace) -> "AgentState":
        return self._copy_with(subspace=subspace)

    def _with_position(self, position) -> "AgentState":
        return self._copy_with(position=np.array(position, dtype=np.float64).reshape(2))

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "position": self.position.tolist(),
            "velocity": self.velocity.tolist(),
            "subspace": self.subspace.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AgentState":
        return cls(
            id=d["id"],
            position=d["position"],
            velocity=d.get("velocity", [0.0, 0.0]),
            subspace=Subspace.from_dict(d["subspace"]),
        )


@dataclass(frozen=True)
class Hyperedge:
    members: tuple[int, ...]

    def __post_init__(self):
        if len(self.members) == 0:
            raise GraphError("empty hyperedge")
        object.__setattr__(self, "members", tuple(int(m) for m in self.members))

    def __len__(self):
        return len(self.members)


@dataclass(frozen=True, eq=False)
class HypergraphScene:
    agents: tuple[AgentState, ...]
    edges: tuple[Hyperedge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "edges", tuple(self.edges))
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise GraphError("agent ids must be unique")
        L = len(self.agents)
        for e in self.edges:
            if any(m < 0 or m >= L for m in e.members):
                raise GraphError("hyperedge member index out of range")

    def __len__(self):
        return len(self.agents)

    @property
    def bases(self) -> np.ndarray:
        return np.stack([a.subspace.basis for a in self.agents])

    @property
    def positions(self) -> np.ndarray:
        return np.stack([a.position for a in self.agents]) if self.agents else np.zeros((0, 2))


@dataclass(frozen=True, eq=False)
class GhnParams:
    eta: float = 0.1
    eps_s: float = 3.0
    eps_g: float = 0.8
    rho_max: float = 0.5
    phi_weights: np.ndarray | None = None
    psi_weights: np.ndarray | None = None
    seed: int = 0

    def __post_init__(self):
        for name in ("eta", "eps_s", "eps_g", "rho_max"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise GraphError(f"{name} must be positive and finite")

    def weights(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        """(W_phi, W_psi) for subspace dimension k; defaults are I + 0.01 * seeded noise."""
        rng = np.random.default_rng([self.seed, k])
        out = []
        for given in (self.phi_weights, self.psi_weights):
            noise = rng.standard_normal((k, k))
            if given is not None:
                W = np.asarray(given, dtype=np.float64)
                if W.shape != (k, k):
                    raise GraphError(f"weight matrix has shape {W.shape}, expected ({k}, {k})")
                out.append(W)
            else:
                out.append(np.eye(k) + 0.01 * noise)
        return out[0], out[1]

    def to_dict(self) -> dict:
        d = {"eta": self.eta, "eps_s": self.eps_s, "eps_g": self.eps_g, "rho_max": self.rho_max, "seed": self.seed}
        if self.phi_weights is not None:
            d["phi_weights"] = np.asarray(self.phi_weights).tolist()
        if self.psi_weights is not None:
            d["psi_weights"] = np.asarray(self.psi_weights).tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GhnParams":
        kw = {k: d[k] for k in ("eta", "eps_s", "eps_g", "rho_max") if k in d}
        if "seed" in d:
            kw["seed"] = int(d["seed"])
        for k in ("phi_weights", "psi_weights"):
            if d.get(k) is not None:
                kw[k] = np.asarray(d[k], dtype=np.float64)
        return cls(**kw)


def scene_to_dict(scene: HypergraphScene, params: GhnParams | None = None) -> dict:
    d = {"agents": [a.to_dict() for a in scene.agents]}
    if scene.edges:
        d["edges"] = [list(e.members) for e in scene.edges]
    if params is not None:
        d["params"] = params.to_dict()
    return d


def scene_from_dict(d: dict) -> tuple[HypergraphScene, GhnParams]:
    agents = [AgentState.from_dict(a) for a in d["agents"]]
    edges = [Hyperedge(tuple(m)) for m in d.get("edges", [])]
    return HypergraphScene(agents, edges), GhnParams.from_dict(d.get("params", {}))


# ---------------------------------------------------------------------------
# hyperedges


def _check_dims(agents: Sequence[AgentState]) -> tuple[int, int]:
    if not agents:
        raise GraphError("scene has no agents")
    shapes = {a.subspace.basis.shape for a in agents}
    if len(shapes) != 1:
        raise GraphError(f"mixed subspace dimensions: {sorted(shapes)}")
    return shapes.pop()


def _grid_pairs(pos: np.ndarray, eps_s: float) -> tuple[np.ndarray, np.ndarray]:
    """Unordered index pairs with ||p_i - p_j|| <= eps_s, via a grid of cell size eps_s."""
    cells = np.floor(pos / eps_s).astype(np.int64)
    grid: dict[tuple[int, int], list[int]] = defaultdict(list)
    for idx, (cx, cy) in enumerate(cells.tolist()):
        grid[(cx, cy)].append(idx)
    ii: list[int] = []
    jj: list[int] = []
    # half of the 3x3 stencil plus the own cell visits each unordered pair once
    half = ((0, 1), (1, -1), (1, 0), (1, 1))
    for (cx, cy), members in grid.items():
        for a_pos, a in enumerate(members):
            for b in members[a_pos + 1 :]:
                ii.append(a)
                jj.append(b)
        for dx, dy in half:
            other = grid.get((cx + dx, cy + dy))
            if other:
                for a in members:
                    for b in other:
                        ii.append(a)
                        jj.append(b)
    i = np.asarray(ii, dtype=np.int64)
    j = np.asarray(jj, dtype=np.int64)
    if len(i) == 0:
        return i, j
    d = pos[i] - pos[j]
    near = np.sqrt(np.sum(d * d, axis=1)) <= eps_s
    return i[near], j[near]


def _neighbors(agents: Sequence[AgentState], eps_s: float, eps_g: float) -> list[list[int]]:
    L = len(agents)
    pos = np.stack([a.position for a in agents])
    i, j = _grid_pairs(pos, eps_s)
    if len(i):
        # distance evaluated once per unordered pair, lower id first
        ids = np.array([a.id for a in agents])
        swap = ids[i] > ids[j]
        lo = np.where(swap, j, i)
        hi = np.where(swap, i, j)
        U = np.stack([a.subspace.basis for a in agents])
        close = pairwise_sq_distances(U[lo], U[hi]) <= eps_g * eps_g
        i, j = lo[close], hi[close]
    nbrs: list[list[int]] = [[v] for v in range(L)]
    for a, b in zip(i.tolist(), j.tolist()):
        nbrs[a].append(b)
        nbrs[b].append(a)
    return nbrs


def build_hyperedges(agents: Sequence[AgentState], eps_s: float = 3.0, eps_g: float = 0.8) -> list[Hyperedge]:
    """One neighborhood edge per agent, duplicates merged.

    e_i = {j : ||p_i - p_j|| <= eps_s and d_Gr(U_i, U_j) <= eps_g} | {i}.
    Members are listed in ascending agent-id order and edges are sorted by
    their member-id tuples.
    """
    agents = list(agents)
    _check_dims(agents)
    ids = [a.id for a in agents]
    unique: dict[tuple[int, ...], tuple[int, ...]] = {}
    for members in _neighbors(agents, eps_s, eps_g):
        members.sort(key=ids.__getitem__)
        key = tuple(ids[m] for m in members)
        unique.setdefault(key, tuple(members))
    return [Hyperedge(unique[key]) for key in sorted(unique)]


def edge_membership(edges: Iterable[Hyperedge], num_agents: int) -> np.ndarray:
    """Number of hyperedges each agent belongs to."""
    counts = np.zeros(num_agents, dtype=np.int64)
    for e in edges:
        counts[list(e.members)] += 1
    return counts


def max_hyperedge_membership(rho_max: float, eps_s: float) -> int:
    """Upper bound ceil(rho_max * pi * eps_s^2) on edges per agent under a density cap."""
    if not (rho_max > 0 and eps_s > 0):
        raise GraphError("rho_max and eps_s must be positive")
    return max(1, math.ceil(rho_max * math.pi * eps_s * eps_s))


# ---------------------------------------------------------------------------
# message passing


def edge_message(edge: Hyperedge, agents: Sequence[AgentState], phi_weights: np.ndarray) -> np.ndarray:
    if len(edge.members) == 0:
        raise GraphError("empty hyperedge")
    total = np.array(agents[edge.members[0]].subspace.basis)
    for m in edge.members[1:]:
        total += agents[m].subspace.basis
    # phi is linear, so averaging before mapping equals averaging the phi(U_i)
    return (total / len(edge.members)) @ phi_weights


def _tangent_step(U: np.ndarray, S: np.ndarray, psi_weights: np.ndarray) -> np.ndarray:
    # psi(M, U) = (I - U U^T) M W_psi, summed over incident messages (linear in M)
    return (S - U @ (np.swapaxes(U, -1, -2) @ S)) @ psi_weights


def node_update(
    agent: AgentState, incident_messages: Sequence[np.ndarray], params: GhnParams, psi_weights: np.ndarray | None = None
) -> Subspace:
    """Apply one update to a single agent and retract.

    If the step is rank-deficient, eta is halved up to five times before
    giving up with ``SubspaceError("degenerate update")``.
    """
    if len(incident_messages) == 0:
        raise GraphError("node_update needs at least one incident message")
    U = agent.subspace.basis
    if psi_weights is None:
        psi_weights = params.weights(U.shape[1])[1]
    S = np.array(incident_messages[0], dtype=np.float64)
    for M in incident_messages[1:]:
        S += M
    step = _tangent_step(U, S, psi_weights)
    return _retract_with_retry(U, step, params.eta)


def _retract_with_retry(U: np.ndarray, step: np.ndarray, eta: float) -> Subspace:
    for _ in range(MAX_ETA_HALVINGS + 1):
        try:
            return qr_retract(U + eta * step)
        except SubspaceError:
            eta *= 0.5
    raise SubspaceError("degenerate update")


def _ordered_sums(X: np.ndarray, segments: list[list[int]]) -> np.ndarray:
    """Row sums of X over each index list, accumulated left to right in list order."""
    sizes = np.fromiter((len(seg) for seg in segments), dtype=np.int64, count=len(segments))
    table = np.zeros((len(segments), int(sizes.max())), dtype=np.int64)
    for r, seg in enumerate(segments):
        table[r, : len(seg)] = seg
    out = X[table[:, 0]].copy()
    for slot in range(1, table.shape[1]):
        rows = np.flatnonzero(sizes > slot)
        out[rows] += X[table[rows, slot]]
    return out


def _round(agents: tuple[AgentState, ...], edges: list[Hyperedge], params: GhnParams, k: int) -> tuple[AgentState, ...]:
    phi, psi = params.weights(k)
    U = np.stack([a.subspace.basis for a in agents])
    L, n, _ = U.shape

    # members are id-ordered and edges sorted by member ids, so every sum
    # below runs in an order that does not depend on agent labeling
    sizes = np.array([len(e) for e in edges], dtype=np.float64)
    sums = _ordered_sums(U.reshape(L, n * k), [list(e.members) for e in edges])
    messages = (sums.reshape(-1, n, k) / sizes[:, None, None]) @ phi

    incident: list[list[int]] = [[] for _ in range(L)]
    for e_idx, e in enumerate(edges):
        for m in e.members:
            incident[m].append(e_idx)
    if any(not inc for inc in incident):
        raise GraphError("every agent must belong to at least one hyperedge")
    S = _ordered_sums(messages.reshape(-1, n * k), incident).reshape(L, n, k)

    step = _tangent_step(U, S, psi)
    Q, ok = qr_retract_batch(U + params.eta * step)
    new_agents = []
    for idx, a in enumerate(agents):
        if ok[idx]:
            sub = Subspace.trusted(Q[idx])
        else:
            sub = _retract_with_retry(U[idx], step[idx], params.eta * 0.5)
        new_agents.append(a._with_subspace(sub))
    return tuple(new_agents)


def run_ghn(scene: HypergraphScene, spec: PathSpec, params: GhnParams = GhnParams()) -> HypergraphScene:
    """Run ``spec.rounds`` synchronous rounds of message passing.

    Hyperedges are rebuilt from the current subspaces at the start of every
    round; the returned scene carries the edges of its final state.  All
    agents must already have ``spec.subspace_dim`` columns (see
    :func:`redimension_scene`).
    """
    agents = tuple(scene.agents)
    _, k = _check_dims(agents)
    if k != spec.subspace_dim:
        raise GraphError(f"agents have k={k} but the path needs k={spec.subspace_dim}")
    for _ in range(spec.rounds):
        edges = build_hyperedges(agents, params.eps_s, params.eps_g)
        agents = _round(agents, edges, params, k)
    return HypergraphScene(agents, build_hyperedges(agents, params.eps_s, params.eps_g))


def redimension_scene(scene: HypergraphScene, k: int, seed: int = 0) -> HypergraphScene:
    agents = [a._with_subspace(Subspace.trusted(redimension(a.subspace.basis, k, seed=[seed, a.id]))) for a in scene.agents]
    return HypergraphScene(agents)


def run_mixed_paths(scene: HypergraphScene, weights: Sequence[float], params: GhnParams = GhnParams()) -> np.ndarray:
    """Soft mixture of every path: sum_j w_j U_j U_j^T per agent, shape (L, n, n).

    The paths return bases of different widths, so the mixture lives on
    projectors.  Paths with zero weight are skipped.  This is the training
    option where all paths execute; inference runs a single path.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (len(PATH_TABLE),) or np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
        raise GraphError(f"path weights must be {len(PATH_TABLE)} nonnegative values summing to 1")
    n, _ = _check_dims(scene.agents)
    out = np.zeros((len(scene), n, n))
    for j, wj in enumerate(w):
        if wj == 0.0:
            continue
        spec = PathSpec.for_index(j)
        sub = scene if scene.agents[0].subspace.dim == spec.subspace_dim else redimension_scene(scene, spec.subspace_dim, params.seed)
        B = run_ghn(sub, spec, params).bases
        out += wj * (B @ np.swapaxes(B, 1, 2))
    return out


def ghn_op_count(num_agents: int, spec: PathSpec, n: int) -> int:
    """Nominal multiply-add count of a run: rounds * L * n * k^2 (retraction-dominated)."""
    return spec.rounds * num_agents * n * spec.subspace_dim**2


# ---------------------------------------------------------------------------
# quadratic baseline


@lru_cache(maxsize=16)
def _attention_projections(in_width: int, feat_dim: int, seed: int, layers: int) -> tuple[np.ndarray, ...]:
    # model parameters: drawn once per configuration, not per forward pass
    rng = np.random.default_rng(seed)
    projections = []
    width = in_width
    for _ in range(layers):
        W = rng.standard_normal((3, width, feat_dim)) / math.sqrt(width)
        W.setflags(write=False)
        projections.append(W)
        width = feat_dim
    return tuple(projections)


def _attention_inputs(scene: HypergraphScene, feat_dim: int, seed: int, layers: int):
    if len(scene) == 0:
        raise GraphError("scene has no agents")
    if feat_dim < 1 or layers < 1:
        raise GraphError("feat_dim and layers must be positive")
    X = np.stack([a.subspace.basis.ravel() for a in scene.agents])
    return X, _attention_projections(X.shape[1], feat_dim, seed, layers)


def attention_baseline(
    scene: HypergraphScene, feat_dim: int = 64, seed: int = 0, layers: int = 1, kernel: str = "pairwise"
) -> np.ndarray:
    """softmax(Q K^T / sqrt(d)) V over all L agents, repeated ``layers`` times.

    Agents are featurized as flatten(U) and mapped to queries, keys and
    values of width ``feat_dim`` by seeded random projections; layer t > 1
    projects the previous layer's output.  ``kernel="pairwise"`` evaluates
    every query-key score and every weighted value term as its own
    operation, so cost follows the L^2 interaction count; ``kernel="dense"``
    uses one matrix product per layer.
    """
    if kernel not in ("pairwise", "dense"):
        raise GraphError(f"unknown attention kernel {kernel!r}")
    X, projections = _attention_inputs(scene, feat_dim, seed, layers)
    scale = 1.0 / math.sqrt(feat_dim)
    for Wq, Wk, Wv in projections:
        Q, K, V = X @ Wq, X @ Wk, X @ Wv
        if kernel == "dense":
            scores = (Q @ K.T) * scale
            scores -= scores.max(axis=1, keepdims=True)
            A = np.exp(scores)
            A /= A.sum(axis=1, keepdims=True)
            X = A @ V
        else:
            X = _pairwise_attention(Q, K, V, scale)
    return X


def _pairwise_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, scale: float) -> np.ndarray:
    keys = list(K)
    values = list(V)
    scores = np.array([[float(np.dot(q, key)) for key in keys] for q in Q]) * scale
    scores -= scores.max(axis=1, keepdims=True)
    A = np.exp(scores)
    A /= A.sum(axis=1, keepdims=True)
    out = np.zeros_like(V)
    for i, row in enumerate(A.tolist()):
        acc = out[i]
        for a, v in zip(row, values):
            acc += a * v
    return out


def attention_op_count(num_agents: int, feat_dim: int, layers: int = 1) -> int:
    return layers * 2 * num_agents * num_agents * feat_dim
