"""Dual-timescale episodic memory and an occlusion-aware tracker.

Short-term memory (STM) is a 50-frame FIFO of tracked object states read by
cross-attention.  Long-term memory (LTM) is a single associative matrix W
written with a gated, normalized delta rule

    W <- W + g (v - W k) k^T / (k^T k),    g = sigmoid(w_s s + w_r r + b)

where s is the tracker's squared prediction error and r = 1 - sigmoid(noise)
is the sensor reliability.  ``track_sequence`` strings these together into a
greedy tracker whose three modes (no memory, STM, STM + LTM) differ only in
how lost tracks can be revived.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import TrackingError

STM_CAPACITY = 50
LTM_NORM_CAP = 1e6

TrackMode = Literal["none", "stm", "stm+ltm"]
MODES: tuple[str, ...] = ("none", "stm", "stm+ltm")


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # split by sign so neither branch overflows
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# observations


@dataclass(frozen=True, eq=False)
class DetectedObject:
    feature: np.ndarray
    position: np.ndarray
    id_hint: int | None = None

    def __post_init__(self):
        f = np.array(self.feature, dtype=np.float64).ravel()
        p = np.array(self.position, dtype=np.float64).reshape(2)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(p))):
            raise TrackingError("malformed frame: non-finite feature or position")
        object.__setattr__(self, "feature", f)
        object.__setattr__(self, "position", p)

    def to_dict(self) -> dict:
        return {"id_hint": self.id_hint, "feature": self.feature.tolist(), "position": self.position.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedObject":
        return cls(d["feature"], d["position"], d.get("id_hint"))


@dataclass(frozen=True, eq=False)
class FrameObservation:
    timestamp: float
    objects: tuple[DetectedObject, ...] = ()
    noise_level: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if not math.isfinite(self.timestamp):
            raise TrackingError("malformed frame: non-finite timestamp")
        if not (self.noise_level >= 0 and math.isfinite(self.noise_level)):
            raise TrackingError("malformed frame: noise_level must be finite and >= 0")

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "noise_level": self.noise_level,
            "objects": [o.to_dict() for o in self.objects],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FrameObservation":
        return cls(float(d["timestamp"]), tuple(DetectedObject.from_dict(o) for o in d["objects"]), float(d.get("noise_level", 0.0)))


# ---------------------------------------------------------------------------
# short-term memory


@dataclass(frozen=True, eq=False)
class ObjectState:
    track_id: int
    frame: int
    timestamp: float
    feature: np.ndarray
    position: np.ndarray
    velocity: np.ndarray


class StmBuffer:
    """Sliding window over the last ``capacity`` frames of object states."""

    def __init__(self, capacity: int = STM_CAPACITY):
        if capacity < 1:
            raise TrackingError("STM capacity must be positive")
        self.capacity = capacity
        self._frames: deque[tuple[int, tuple[ObjectState, ...]]] = deque(maxlen=capacity)

    def push(self, frame: int, states: Iterable[ObjectState]) -> None:
        self._frames.append((frame, tuple(states)))

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def frame_ids(self) -> list[int]:
        return [f for f, _ in self._frames]

    def states(self) -> list[ObjectState]:
        return [s for _, frame_states in self._frames for s in frame_states]

    def without_tracks(self, track_ids) -> "StmBuffer":
        view = StmBuffer(self.capacity)
        for f, frame_states in self._frames:
            view.push(f, (s for s in frame_states if s.track_id not in track_ids))
        return view


def stm_cross_attend(query, buffer: StmBuffer, temperature: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Cross-attention of ``query`` over every object state in the buffer.

    Keys and values are the stored features; weights are proportional to
    exp(<query, key> / (sqrt(d_f) * temperature)).  Returns the retrieved
    feature and the weights in ``buffer.states()`` order.
    """
    states = buffer.states()
    if not states:
        raise TrackingError("cold start")
    if not temperature > 0:
        raise TrackingError("temperature must be positive")
    q = np.asarray(query, dtype=np.float64)
    keys = np.stack([s.feature for s in states])
    if keys.shape[1] != q.shape[0]:
        raise TrackingError("query and stored features differ in length")
    logits = keys @ q / (math.sqrt(q.shape[0]) * temperature)
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return w @ keys, w


# ---------------------------------------------------------------------------
# long-term memory and gating


@dataclass(frozen=True, eq=False)
class LtmState:
    W: np.ndarray
    norm_cap: float = LTM_NORM_CAP

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64)
        if W.ndim != 2:
            raise TrackingError("LTM matrix must be 2-d (d_v x d_k)")
        if not np.all(np.isfinite(W)):
            raise TrackingError("LTM matrix has non-finite entries")
        if np.linalg.norm(W) > self.norm_cap:
            raise TrackingError(f"LTM norm exceeds cap {self.norm_cap:g}")
        W.setflags(write=False)
        object.__setattr__(self, "W", W)

    @classmethod
    def zeros(cls, key_dim: int, value_dim: int, norm_cap: float = LTM_NORM_CAP) -> "LtmState":
        return cls(np.zeros((value_dim, key_dim)), norm_cap)

    @property
    def key_dim(self) -> int:
        return self.W.shape[1]

    @property
    def value_dim(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class GateParams:
    w_s: float = 2.0
    w_r: float = 4.0
    b: float = -2.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.w_s, self.w_r, self.b)):
            raise TrackingError("gate parameters must be finite")


def surprise(pred, obs) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64)
    if pred.shape != obs.shape:
        raise TrackingError(f"length mismatch: {pred.shape} vs {obs.shape}")
    diff = pred - obs
    return float(np.dot(diff.ravel(), diff.ravel()))


def reliability(noise_level: float) -> float:
    if not noise_level >= 0:
        raise TrackingError("noise_level must be nonnegative")
    # 1 - sigmoid(x) = sigmoid(-x), without cancellation for large x
    return float(sigmoid(-noise_level))


def gate(s_t: float, r_t: float, params: GateParams = GateParams()) -> float:
    if not (math.isfinite(s_t) and math.isfinite(r_t)):
        raise TrackingError("gate inputs must be finite")
    return float(sigmoid(params.w_s * s_t + params.w_r * r_t + params.b))


def ltm_write(ltm: LtmState, key, value, g: float) -> LtmState:
    k = np.asarray(key, dtype=np.float64)
    v = np.asarray(value, dtype=np.float64)
    if k.shape != (ltm.key_dim,) or v.shape != (ltm.value_dim,):
        raise TrackingError("key/value length does not match the LTM shape")
    if not 0.0 <= g <= 1.0:
        raise TrackingError("write gate must lie in [0, 1]")
    kk = float(np.dot(k, k))
    if kk == 0.0:
        raise TrackingError("degenerate key")
    if g == 0.0:
        return ltm
    err = v - ltm.W @ k
    return LtmState(ltm.W + np.outer((g / kk) * err, k), ltm.norm_cap)


def ltm_read(ltm: LtmState, key) -> np.ndarray:
    k = np.asarray(key, dtype=np.float64)
    if not np.all(np.isfinite(k)):
        raise TrackingError("non-finite key")
    return ltm.W @ k


# ---------------------------------------------------------------------------
# tracker


@dataclass(frozen=True)
class TrackerConfig:
    frame_rate_hz: float = 10.0
    assoc_gate: float = 4.0
    max_coast: int = 3
    occ_threshold_frames: int = 3
    stm_capacity: int = STM_CAPACITY
    temperature: float = 0.05
    pos_sigma: float = 0.5
    pos_sigma_growth: float = 1.0
    feature_weight: float = 2.0
    min_cosine: float = 0.8
    revive_radius: float = 3.0
    revive_radius_growth: float = 1.5
    # coarse: the LTM kinematic readout error scales with the stored
    # coordinates times the query-key noise; identity rests on the code
    ltm_revive_radius: float = 25.0
    velocity_window: int = 50
    feature_smoothing: float = 0.2
    code_dim: int = 16
    min_code_match: float = 0.5
    min_code_margin: float = 0.3
    gate: GateParams = field(default_factory=GateParams)

    def __post_init__(self):
        if self.max_coast < 0 or self.occ_threshold_frames < 0:
            raise TrackingError("max_coast and occ_threshold_frames must be >= 0")
        if not (self.frame_rate_hz > 0 and self.assoc_gate > 0 and self.temperature > 0):
            raise TrackingError("frame_rate_hz, assoc_gate and temperature must be positive")


@dataclass
class _Track:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    feature: np.ndarray
    last_frame: int
    last_time: float
    missed: int = 0
    history: deque = field(default_factory=deque)
    intercept: np.ndarray | None = None


@dataclass(frozen=True)
class OcclusionEvent:
    object: int
    gap_frames: int
    recovered: bool
    start_frame: int

    def to_dict(self) -> dict:
        return {"object": self.object, "gap_frames": self.gap_frames, "recovered": self.recovered, "start_frame": self.start_frame}


@dataclass(frozen=True)
class TrackReport:
    mode: str
    occ_track: float | None
    events: tuple[OcclusionEvent, ...]
    tracks: tuple[dict, ...]
    assignments: tuple[tuple[int, ...], ...]

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "occ_track": self.occ_track,
            "events": [e.to_dict() for e in self.events],
            "tracks": list(self.tracks),
            "assignments": [list(a) for a in self.assignments],
        }


def id_code(track_id: int, dim: int) -> np.ndarray:
    """Deterministic +-1/sqrt(dim) code that lets LTM values name a track."""
    rng = np.random.default_rng([0x7AC4, track_id])
    return rng.choice([-1.0, 1.0], size=dim) / math.sqrt(dim)


def _fit_constant_velocity(history) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares p(t) = p0 + v t over the history; returns (v, p0)."""
    ts = np.array([h[0] for h in history])
    ps = np.stack([h[1] for h in history])
    t_mean = ts.mean()
    p_mean = ps.mean(axis=0)
    dt = ts - t_mean
    denom = float(np.dot(dt, dt))
    v = (dt @ (ps - p_mean)) / denom if denom > 0 else np.zeros(2)
    return v, p_mean - v * t_mean


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


class _Tracker:
    def __init__(self, mode: str, config: TrackerConfig, feat_dim: int):
        self.mode = mode
        self.cfg = config
        self.d_f = feat_dim
        self.live: dict[int, _Track] = {}
        self.next_id = 0
        self.stm = StmBuffer(config.stm_capacity)
        # value = feature | intercept p - v t | velocity | id code.  The
        # intercept is constant under constant velocity, so interleaved
        # writes from other tracks do not drag a stored entry along.
        self.ltm = LtmState.zeros(feat_dim, feat_dim + 4 + config.code_dim)

    # -- association -------------------------------------------------------

    def _sigma(self, frames_since: int) -> float:
        dt = frames_since / self.cfg.frame_rate_hz
        return math.hypot(self.cfg.pos_sigma, self.cfg.pos_sigma_growth * dt)

    def _associate(self, frame: int, time: float, dets: Sequence[DetectedObject]) -> dict[int, int]:
        candidates = []
        for t in self.live.values():
            pred = t.position + t.velocity * (time - t.last_time)
            sigma = self._sigma(frame - t.last_frame)
            tf = _unit(t.feature)
            for d_idx, det in enumerate(dets):
                maha = float(np.linalg.norm(det.position - pred)) / sigma
                cos = float(np.dot(tf, _unit(det.feature)))
                if maha <= self.cfg.assoc_gate and cos >= self.cfg.min_cosine:
                    candidates.append((maha + self.cfg.feature_weight * (1.0 - cos), d_idx, t.id))
        # greedy: cheapest pair first; ties broken by detection index then track id
        candidates.sort()
        matched: dict[int, int] = {}
        used_tracks = set()
        for _, d_idx, t_id in candidates:
            if d_idx in matched or t_id in used_tracks:
                continue
            matched[d_idx] = t_id
            used_tracks.add(t_id)
        return matched

    # -- revival -----------------------------------------------------------

    def _plausible(self, det: DetectedObject, pred, radius: float, feature) -> bool:
        cos = float(np.dot(_unit(np.asarray(feature)), _unit(det.feature)))
        return float(np.linalg.norm(det.position - pred)) <= radius and cos >= self.cfg.min_cosine

    def _revive_from_stm(self, det: DetectedObject, time: float, taken: set[int]) -> int | None:
        view = self.stm.without_tracks(set(self.live) | taken)
        states = view.states()
        if not states:
            return None
        _, w = stm_cross_attend(det.feature, view, self.cfg.temperature)
        per_track: dict[int, float] = {}
        for s, wi in zip(states, w):
            per_track[s.track_id] = per_track.get(s.track_id, 0.0) + float(wi)
        best = max(per_track, key=lambda tid: (per_track[tid], -tid))
        latest = max((s for s in states if s.track_id == best), key=lambda s: s.frame)
        gap = time - latest.timestamp
        pred = latest.position + latest.velocity * gap
        radius = self.cfg.revive_radius + self.cfg.revive_radius_growth * gap
        if self._plausible(det, pred, radius, latest.feature):
            return best
        return None

    def _revive_from_ltm(self, det: DetectedObject, time: float, taken: set[int]) -> int | None:
        dead = [i for i in range(self.next_id) if i not in self.live and i not in taken]
        if not dead:
            return None
        v = ltm_read(self.ltm, _unit(det.feature))
        d = self.d_f
        feature, intercept, velocity = v[:d], v[d : d + 2], v[d + 2 : d + 4]
        code = v[d + 4 :]
        scores = [float(np.dot(code, id_code(i, self.cfg.code_dim))) for i in dead]
        order = np.argsort(scores)[::-1]
        j = int(order[0])
        runner_up = scores[order[1]] if len(order) > 1 else 0.0
        if scores[j] < self.cfg.min_code_match or scores[j] - runner_up < self.cfg.min_code_margin:
            return None
        if self._plausible(det, intercept + velocity * time, self.cfg.ltm_revive_radius, feature):
            return dead[j]
        return None

    # -- per-frame step ----------------------------------------------------

    def _ltm_value(self, t: _Track) -> np.ndarray:
        intercept = t.intercept if t.intercept is not None else t.position - t.velocity * t.last_time
        return np.concatenate([t.feature, intercept, t.velocity, id_code(t.id, self.cfg.code_dim)])

    def _write_ltm(self, t: _Track, pred_state: np.ndarray, obs_state: np.ndarray, noise: float) -> None:
        g = gate(surprise(pred_state, obs_state), reliability(noise), self.cfg.gate)
        self.ltm = ltm_write(self.ltm, _unit(t.feature), self._ltm_value(t), g)

    def step(self, frame: int, obs: FrameObservation) -> list[int]:
        dets = obs.objects
        time = obs.timestamp
        matched = self._associate(frame, time, dets)
        ids = [-1] * len(dets)
        taken: set[int] = set(matched.values())
        cfg = self.cfg

        for d_idx, det in enumerate(dets):
            if d_idx in matched:
                t = self.live[matched[d_idx]]
                dt = time - t.last_time
                pred_pos = t.position + t.velocity * dt
                pred_state = np.concatenate([t.feature, pred_pos / cfg.pos_sigma])
                obs_state = np.concatenate([det.feature, det.position / cfg.pos_sigma])
                t.history.append((time, det.position.copy()))
                while len(t.history) > cfg.velocity_window:
                    t.history.popleft()
                t.velocity, t.intercept = _fit_constant_velocity(t.history)
                t.position = det.position.copy()
                t.feature = (1 - cfg.feature_smoothing) * t.feature + cfg.feature_smoothing * det.feature
                t.last_frame, t.last_time = frame, time
                t.missed = 0
                if self.mode == "stm+ltm":
                    self._write_ltm(t, pred_state, obs_state, obs.noise_level)
                ids[d_idx] = t.id

        for d_idx, det in enumerate(dets):
            if ids[d_idx] != -1:
                continue
            revived = None
            if self.mode in ("stm", "stm+ltm"):
                revived = self._revive_from_stm(det, time, taken)
            if revived is None and self.mode == "stm+ltm":
                revived = self._revive_from_ltm(det, time, taken)
            if revived is None:
                revived = self.next_id
                self.next_id += 1
            # a revived track restarts its kinematics from the detection
            track = _Track(revived, det.position.copy(), np.zeros(2), det.feature.copy(), frame, time)
            track.history.append((time, det.position.copy()))
            self.live[revived] = track
            taken.add(revived)
            ids[d_idx] = revived

        seen = set(ids)
        for t_id in list(self.live):
            if t_id not in seen:
                t = self.live[t_id]
                t.missed += 1
                if t.missed > cfg.max_coast:
                    del self.live[t_id]

        if self.mode in ("stm", "stm+ltm"):
            self.stm.push(
                frame,
                (
                    ObjectState(t_id, frame, time, dets[d].feature, dets[d].position, self.live[t_id].velocity.copy())
                    for d, t_id in enumerate(ids)
                ),
            )
        return ids


def _occlusion_events(frames: Sequence[FrameObservation], assignments, threshold: int) -> list[OcclusionEvent]:
    history: dict[int, list[tuple[int, int]]] = {}
    for f, (obs, ids) in enumerate(zip(frames, assignments)):
        for det, t_id in zip(obs.objects, ids):
            if det.id_hint is not None:
                history.setdefault(int(det.id_hint), []).append((f, t_id))
    events = []
    for obj in sorted(history):
        seq = history[obj]
        for (f0, id0), (f1, id1) in zip(seq, seq[1:]):
            gap = f1 - f0 - 1
            if gap > threshold:
                events.append(OcclusionEvent(obj, gap, id0 == id1, f0 + 1))
    return events


def track_sequence(frames: Sequence[FrameObservation], mode: str = "stm+ltm", config: TrackerConfig = TrackerConfig()) -> TrackReport:
    """Track detections through a sequence and score recovery after occlusions.

    ``id_hint`` on detections is ground truth: the tracker never reads it,
    it is only used afterwards to find occlusion events (gaps longer than
    ``config.occ_threshold_frames`` in an object's detections) and whether
    the track id after the gap equals the one before it.
    """
    if mode not in MODES:
        raise TrackingError(f"unknown mode {mode!r}; expected one of {MODES}")
    frames = list(frames)
    if not frames:
        raise TrackingError("need at least one frame")
    feat_dims = {len(o.feature) for fr in frames for o in fr.objects}
    if len(feat_dims) > 1:
        raise TrackingError("malformed frames: inconsistent feature lengths")
    for a, b in zip(frames, frames[1:]):
        if not b.timestamp > a.timestamp:
            raise TrackingError("malformed frames: timestamps must strictly increase")

    tracker = _Tracker(mode, config, feat_dims.pop() if feat_dims else 1)
    assignments = [tuple(tracker.step(f, obs)) for f, obs in enumerate(frames)]

    events = _occlusion_events(frames, assignments, config.occ_threshold_frames)
    occ = sum(e.recovered for e in events) / len(events) if events else None

    spans: dict[int, list[int]] = {}
    for f, ids in enumerate(assignments):
        for t_id in ids:
            spans.setdefault(t_id, []).append(f)
    tracks = tuple(
        {"id": t_id, "first_frame": fs[0], "last_frame": fs[-1], "detections": len(fs)} for t_id, fs in sorted(spans.items())
    )
    return TrackReport(mode, occ, tuple(events), tracks, tuple(assignments))
