"""Synthetic multi-agent scenes and the learned per-agent context encoder.

Scenes are toy road layouts (four-way intersection, two-lane merge,
parallel straights) with 2..8 agents. Every agent approaches at constant
speed during the 6-step history, then its future branches according to a
hidden intent (left / straight / right / stop) sampled from a prior, so
histories never reveal the intent and the future distribution is genuinely
multimodal. When two agents would occupy the conflict zone at nearly the
same time, a fair coin decides who yields; that makes the joint modes
anti-correlated across agents rather than a product of marginals.
Ground-truth futures never come within 0.5 scene units of each other.

Units: positions in scene units (1 unit is roughly 5 m), dt = 0.5 s,
16 future steps (8 s horizon), 6 history steps.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import DataError, ShapeError
from .pca import Pose, canonicalize

CORPUS_FORMAT_VERSION = 1

N_T_FUT = 16
N_T_HIST = 6
DT = 0.5
V_MAX = 3.0  # units / second
LANE_OFFSET = 0.3
BOX_RADIUS = 1.6
STOP_MARGIN = 1.3  # stop line distance from scene center along the lane
V_TURN = 1.6  # units / second; every turn is taken at this speed
T_BEND = 1.4  # seconds from t=0 to the turn entry point

LAYOUTS = ("intersection", "merge", "straight")
INTENTS = ("left", "straight", "right", "stop")

_ARM_DIRS = np.array([[0.0, 1.0], [1.0, 0.0], [0.0, -1.0], [-1.0, 0.0]])


@dataclass(frozen=True)
class SceneParams:
    layout: str = "intersection"
    n_agents: int | None = None  # None: sample uniformly from agent_range
    agent_range: tuple[int, int] = (2, 4)
    intent_probs: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)
    speed_range: tuple[float, float] = (1.6, 2.4)  # units / second
    n_t: int = N_T_FUT
    n_hist: int = N_T_HIST
    dt: float = DT

    def __post_init__(self):
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}, got {self.layout!r}")
        if abs(sum(self.intent_probs) - 1.0) > 1e-9:
            raise ValueError(f"intent probabilities must sum to 1, got {self.intent_probs}")
        if self.n_agents is not None and not 2 <= self.n_agents <= 8:
            raise ValueError(f"n_agents must be in [2, 8], got {self.n_agents}")
        lo, hi = self.agent_range
        if not 2 <= lo <= hi <= 8:
            raise ValueError(f"agent_range must lie within [2, 8], got {self.agent_range}")
        if self.speed_range[1] * self.dt >= 2.0:
            raise ValueError("speeds too high for the 0.5-unit separation guarantee")


@dataclass
class AgentTrack:
    history: np.ndarray  # (n_hist, 2)
    future: np.ndarray  # (n_t, 2)
    pose: Pose  # position and heading at t = 0
    intent: str | None = None  # hidden label; never serialized


@dataclass
class Scenario:
    scenario_id: str
    layout: str
    rng_seed: int
    agents: list[AgentTrack] = field(default_factory=list)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    def futures(self) -> np.ndarray:
        return np.stack([a.future for a in self.agents])

    def poses(self) -> list[Pose]:
        return [a.pose for a in self.agents]


# ---------------------------------------------------------------------------
# Geometry helpers


def _rot(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s], [s, c]])


def _right_of(direction: np.ndarray) -> np.ndarray:
    return np.array([direction[1], -direction[0]])


def _bezier(p0, c, p1, n: int = 24) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return (1 - t) ** 2 * p0 + 2 * (1 - t) * t * c + t**2 * p1


def _line_intersection(p1, d1, p2, d2) -> np.ndarray:
    mat = np.array([d1, -np.asarray(d2)]).T
    if abs(np.linalg.det(mat)) < 1e-9:
        return (np.asarray(p1) + np.asarray(p2)) / 2.0
    s = np.linalg.solve(mat, np.asarray(p2) - np.asarray(p1))
    return np.asarray(p1) + s[0] * np.asarray(d1)


class _Path:
    """Polyline walked by arc length."""

    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64)
        seg = np.diff(self.points, axis=0)
        self.cum = np.concatenate([[0.0], np.cumsum(np.hypot(seg[:, 0], seg[:, 1]))])

    @property
    def length(self) -> float:
        return float(self.cum[-1])

    def at(self, s) -> np.ndarray:
        s = np.clip(np.asarray(s, dtype=np.float64), 0.0, self.length)
        x = np.interp(s, self.cum, self.points[:, 0])
        y = np.interp(s, self.cum, self.points[:, 1])
        return np.stack([x, y], axis=-1)


@dataclass
class _AgentGeometry:
    start: np.ndarray  # position at t = 0
    direction: np.ndarray  # unit approach direction
    speed: float  # units / second
    dist_to_center: float  # arc length from start to the scene center
    arm: int  # approach arm index (lane id for straight layout)
    lane: float  # lateral offset used on the approach
    paths: dict  # intent -> _Path, starting at `start`


def _intersection_geometry(rng: np.random.Generator, n_a: int, params: SceneParams) -> list[_AgentGeometry]:
    arms = rng.permutation(4)[: min(n_a, 4)].tolist()
    if n_a > 4:
        arms += rng.permutation(4)[: n_a - 4].tolist()
    geoms = []
    seen_arms: dict[int, int] = {}
    for arm in arms:
        rank = seen_arms.get(arm, 0)
        seen_arms[arm] = rank + 1
        d = _ARM_DIRS[arm]
        right = _right_of(d)
        speed = rng.uniform(*params.speed_range)
        # Start distance is the same function of speed for every intent, so
        # the constant-velocity history never reveals what comes next; a
        # turner decelerating to V_TURN reaches the box edge at exactly T_BEND.
        d0 = (speed + V_TURN) * T_BEND / 2 + 1.0 + 3.2 * rank
        start = -d * d0 + right * LANE_OFFSET
        geoms.append(_build_intersection_paths(start, d, speed, d0, arm, LANE_OFFSET))
    return geoms


def _build_intersection_paths(start, d, speed, d0, arm, lane) -> _AgentGeometry:
    right = _right_of(d)
    b = 1.0  # box entry distance from center
    approach_len = d0 - b
    p1 = start + d * approach_len
    paths = {}
    # straight: continue through, exit on the same lane.
    exit_pt = p1 + d * (2 * b + 30.0)
    paths["straight"] = _Path(np.vstack([start, p1, exit_pt]))
    paths["stop"] = paths["straight"]
    for intent, turn in (("left", 1), ("right", -1)):
        d_out = _rot(turn * math.pi / 2) @ d
        r_out = _right_of(d_out)
        p2 = d_out * b + r_out * lane
        c = _line_intersection(p1, d, p2, d_out)
        curve = _bezier(p1, c, p2, n=24)
        tail = p2 + d_out * np.linspace(0.0, 30.0, 8)[:, None]
        paths[intent] = _Path(np.vstack([start[None], curve, tail[1:]]))
    return _AgentGeometry(
        start=start, direction=d, speed=speed, dist_to_center=d0, arm=arm, lane=lane, paths=paths
    )


def _merge_geometry(rng: np.random.Generator, n_a: int, params: SceneParams) -> list[_AgentGeometry]:
    geoms = []
    out_dir = np.array([0.0, 1.0])
    for k in range(n_a):
        side = 1 if k % 2 == 0 else -1
        angle = side * math.radians(22.0)
        d = _rot(angle) @ out_dir
        speed = rng.uniform(*params.speed_range)
        d0 = rng.uniform(2.8, 4.6) + 3.2 * (k // 2)
        start = -d * d0
        b = 1.0
        p1 = start + d * (d0 - b)
        paths = {}
        for intent, off in (("left", -0.35), ("straight", 0.0), ("right", 0.35)):
            p2 = out_dir * b + np.array([off, 0.0])
            c = _line_intersection(p1, d, p2, out_dir)
            curve = _bezier(p1, c, p2, n=24)
            tail = p2 + out_dir * np.linspace(0.0, 30.0, 8)[:, None]
            paths[intent] = _Path(np.vstack([start[None], curve, tail[1:]]))
        paths["stop"] = paths["straight"]
        geoms.append(
            _AgentGeometry(
                start=start, direction=d, speed=speed, dist_to_center=d0, arm=k % 2, lane=0.0, paths=paths
            )
        )
    return geoms


def _straight_geometry(rng: np.random.Generator, n_a: int, params: SceneParams) -> list[_AgentGeometry]:
    # Lateral drift magnitudes form a continuum across intents (left
    # < -0.25 < straight < 0.25 < right), so the conditional future family
    # has no gaps: constraints can slide a sample to any endpoint.
    geoms = []
    d = np.array([0.0, 1.0])
    lane_w = 2.2
    for k in range(n_a):
        lane_x = (k - (n_a - 1) / 2.0) * lane_w
        speed = rng.uniform(*params.speed_range)
        y0 = -(2.5 + 2.4 * k + rng.uniform(0.0, 1.0))
        start = np.array([lane_x, y0])
        length = 40.0
        shifts = {
            "left": -rng.uniform(0.25, 1.25),
            "straight": rng.uniform(-0.25, 0.25),
            "right": rng.uniform(0.25, 1.25),
        }

        def drift_path(shift: float) -> _Path:
            # smooth lateral drift completed over ~4 s of travel
            ys = np.linspace(0.0, length, 48)
            span = 4.0 * speed
            u = np.clip((ys - 1.0) / span, 0.0, 1.0)
            blend = u * u * (3 - 2 * u)  # smoothstep
            xs = lane_x + shift * blend
            return _Path(np.stack([xs, y0 + ys], axis=-1))

        paths = {intent: drift_path(shift) for intent, shift in shifts.items()}
        paths["stop"] = _Path(np.vstack([start, start + d * length]))
        geoms.append(
            _AgentGeometry(
                start=start,
                direction=d,
                speed=speed,
                dist_to_center=abs(y0),
                arm=k,
                lane=lane_x,
                paths=paths,
            )
        )
    return geoms


_GEOMETRY_BUILDERS = {
    "intersection": _intersection_geometry,
    "merge": _merge_geometry,
    "straight": _straight_geometry,
}


# ---------------------------------------------------------------------------
# Speed profiles (arc length as a function of continuous time)


def _s_constant(v: float, t: np.ndarray) -> np.ndarray:
    return v * t


def _s_stop(v: float, s_stop: float, t: np.ndarray) -> np.ndarray:
    """Uniform deceleration from t=0, at rest exactly at s_stop."""
    if s_stop <= 0:
        return np.zeros_like(t)
    t_s = 2.0 * s_stop / v
    s = v * t - (v / (2.0 * t_s)) * t * t
    return np.where(t < t_s, s, s_stop)


def _s_turn(v: float, t: np.ndarray) -> np.ndarray:
    """Uniform deceleration from v to V_TURN over [0, T_BEND], then constant."""
    a = (v - V_TURN) / T_BEND
    dec = v * t - 0.5 * a * t * t
    after = (v + V_TURN) * T_BEND / 2 + V_TURN * (t - T_BEND)
    return np.where(t <= T_BEND, dec, after)


def _s_yield(v: float, s_hold: float, t_release: float, t: np.ndarray, v_resume: float | None = None) -> np.ndarray:
    """Decelerate to a hold point, wait, then accelerate to the resume speed."""
    v_out = v if v_resume is None else v_resume
    s = _s_stop(v, s_hold, t)
    t_a = 1.0  # seconds to regain full speed
    t_stopped = 2.0 * max(s_hold, 0.0) / v  # when the hold point is reached
    tau = np.maximum(t - max(t_release, t_stopped), 0.0)
    a = v_out / t_a
    ramp = np.where(tau < t_a, 0.5 * a * tau * tau, 0.5 * v_out * t_a + v_out * (tau - t_a))
    return s + ramp


# ---------------------------------------------------------------------------
# Scenario assembly


def _future_times(params: SceneParams) -> np.ndarray:
    return np.arange(1, params.n_t + 1) * params.dt


def _occupancy_window(path: _Path, s_of_t, t_grid: np.ndarray) -> tuple[float, float] | None:
    pos = path.at(s_of_t(t_grid))
    inside = np.hypot(pos[:, 0], pos[:, 1]) <= BOX_RADIUS
    if not inside.any():
        return None
    idx = np.nonzero(inside)[0]
    return float(t_grid[idx[0]]), float(t_grid[idx[-1]])


def _min_separation(futures: np.ndarray) -> tuple[float, tuple[int, int]]:
    n = futures.shape[0]
    best, pair = math.inf, (0, 1)
    for i in range(n):
        for j in range(i + 1, n):
            d = float(np.hypot(*(futures[i] - futures[j]).T).min())
            if d < best:
                best, pair = d, (i, j)
    return best, pair


def generate_scenario(seed: int, params: SceneParams | None = None) -> Scenario:
    """Deterministically build one scenario from its seed.

    The same seed and params always produce the identical scenario; the
    scenario id encodes (layout, n_agents, seed) so any scene in a corpus
    can be regenerated without the corpus file.
    """
    params = params or SceneParams()
    rng = np.random.default_rng(seed)
    # always consume the draw so the stream is identical whether or not the
    # agent count is pinned (regeneration from the id relies on this)
    n_draw = int(rng.integers(params.agent_range[0], params.agent_range[1] + 1))
    n_a = params.n_agents or n_draw
    geoms = _GEOMETRY_BUILDERS[params.layout](rng, n_a, params)
    intents = [INTENTS[k] for k in rng.choice(len(INTENTS), size=n_a, p=params.intent_probs)]
    coins = rng.random(n_a * n_a)  # yield lotteries, fixed consumption order

    t_fut = _future_times(params)

    for _attempt in range(30):
        profiles = _build_profiles(geoms, intents, coins, params)
        futures = np.stack([g.paths[intents[i]].at(profiles[i](t_fut)) for i, g in enumerate(geoms)])
        sep, pair = _min_separation(futures)
        if sep > 0.55:
            break
        # Push the later-arriving member of the offending pair back and retry.
        i, j = pair
        later = max(i, j, key=lambda k: geoms[k].dist_to_center / geoms[k].speed)
        geom = geoms[later]
        shift = 0.7 * geom.direction
        geom.start = geom.start - shift
        geom.dist_to_center += 0.7
        for p in set(geom.paths.values()):
            p.points[0] = p.points[0] - shift
            p.__init__(p.points)
    else:
        raise DataError(f"could not separate agents for seed {seed} after 30 attempts")

    step = np.hypot(*np.diff(futures, axis=1).T).T.max() if params.n_t > 1 else 0.0
    if step > V_MAX * params.dt + 1e-9:
        raise DataError(f"generated speed exceeds v_max for seed {seed}")

    agents = []
    for i, g in enumerate(geoms):
        hist_t = np.arange(-(params.n_hist - 1), 1) * params.dt
        history = g.start + g.direction * (g.speed * hist_t)[:, None]
        heading = math.atan2(g.direction[1], g.direction[0])
        agents.append(
            AgentTrack(
                history=history,
                future=futures[i],
                pose=Pose(x=float(g.start[0]), y=float(g.start[1]), heading=heading),
                intent=intents[i],
            )
        )
    sid = make_scenario_id(params.layout, n_a, seed)
    return Scenario(scenario_id=sid, layout=params.layout, rng_seed=int(seed), agents=agents)


def _build_profiles(geoms, intents, coins, params):
    """Per-agent arc-length profiles with stop, car-following and yield logic."""
    n_a = len(geoms)
    t_fut = _future_times(params)
    t_fine = np.linspace(0.0, t_fut[-1], 8 * params.n_t + 1)

    profiles: list = []
    for i, g in enumerate(geoms):
        v = g.speed
        if intents[i] == "stop":
            s_stop = g.dist_to_center - STOP_MARGIN
            profiles.append(lambda t, v=v, s=s_stop: _s_stop(v, s, t))
        elif intents[i] in ("left", "right") and params.layout == "intersection":
            profiles.append(lambda t, v=v: _s_turn(v, t))
        else:
            profiles.append(lambda t, v=v: _s_constant(v, t))

    # Car-following on shared approach lanes (intersection/merge followers).
    by_arm: dict[int, list[int]] = {}
    for i, g in enumerate(geoms):
        by_arm.setdefault(g.arm, []).append(i)
    for members in by_arm.values():
        members.sort(key=lambda i: geoms[i].dist_to_center)
        for lead, follow in zip(members, members[1:]):
            gap = geoms[follow].dist_to_center - geoms[lead].dist_to_center
            lead_p, follow_p = profiles[lead], profiles[follow]

            def clamped(t, lp=lead_p, fp=follow_p, gap=gap):
                # keep 1.6 units headway behind the leader on the shared lane
                return np.minimum(fp(t), np.maximum(lp(t) + gap - 1.6, 0.0))

            profiles[follow] = clamped

    if params.layout != "straight" and len({g.arm for g in geoms}) > 1:
        # Yield at crossing conflicts between different arms.
        windows = []
        for i, g in enumerate(geoms):
            windows.append(_occupancy_window(g.paths[intents[i]], profiles[i], t_fine))
        order = sorted(range(n_a), key=lambda i: windows[i][0] if windows[i] else math.inf)
        for a_idx in range(len(order)):
            for b_idx in range(a_idx + 1, len(order)):
                i, j = order[a_idx], order[b_idx]
                wi, wj = windows[i], windows[j]
                if wi is None or wj is None or geoms[i].arm == geoms[j].arm:
                    continue
                if wj[0] > wi[1] + 0.4:
                    continue  # clear gap, no conflict
                turning = [
                    k for k in (i, j) if intents[k] in ("left", "right") and params.layout == "intersection"
                ]
                if len(turning) == 2:
                    # two committed turners: leave separation to the retry loop
                    continue
                if len(turning) == 1:
                    # through-traffic waits for the committed turner
                    goer = turning[0]
                    yielder = j if goer == i else i
                elif abs(wi[0] - wj[0]) < 1.5:
                    # near-simultaneous arrival: a fair coin picks who yields
                    yielder, goer = (i, j) if coins[i * n_a + j] < 0.5 else (j, i)
                else:
                    yielder, goer = (j, i) if wi[0] < wj[0] else (i, j)
                g = geoms[yielder]
                s_hold = g.dist_to_center - STOP_MARGIN
                t_release = windows[goer][1] + 0.4
                v = g.speed
                v_resume = V_TURN if intents[yielder] in ("left", "right") else v
                profiles[yielder] = lambda t, v=v, s=s_hold, r=t_release, vr=v_resume: _s_yield(
                    v, s, r, t, v_resume=vr
                )
                windows[yielder] = _occupancy_window(
                    g.paths[intents[yielder]], profiles[yielder], t_fine
                )
    return profiles


def make_scenario_id(layout: str, n_agents: int, seed: int) -> str:
    return f"{layout}-a{n_agents}-s{seed:x}"


_ID_RE = re.compile(r"^(?P<layout>[a-z]+)-a(?P<na>\d+)-s(?P<seed>[0-9a-f]+)$")


def parse_scenario_id(scenario_id: str) -> tuple[str, int, int]:
    m = _ID_RE.match(scenario_id)
    if not m:
        raise DataError(f"malformed scenario id {scenario_id!r}")
    layout = m.group("layout")
    if layout not in LAYOUTS:
        raise DataError(f"unknown layout in scenario id {scenario_id!r}")
    return layout, int(m.group("na")), int(m.group("seed"), 16)


def regenerate_from_id(scenario_id: str, params: SceneParams | None = None) -> Scenario:
    """Rebuild a scenario from its id alone.

    Valid when the corpus was generated with the same params (the default
    pipeline); the agent count encoded in the id is cross-checked.
    """
    layout, n_a, seed = parse_scenario_id(scenario_id)
    from dataclasses import replace

    p = replace(params or SceneParams(), layout=layout, n_agents=n_a)
    return generate_scenario(seed, p)


def intent_prototypes(scenario: Scenario, params: SceneParams | None = None) -> list[dict[str, np.ndarray]]:
    """Unimpeded future per intent for every agent (for mode classification).

    Rebuilds the scene geometry from the scenario's seed, consuming the rng
    exactly as generate_scenario does; no yield or car-following
    modifications are applied to the prototypes.
    """
    from dataclasses import replace

    layout, n_a, seed = parse_scenario_id(scenario.scenario_id)
    p = replace(params or SceneParams(), layout=layout, n_agents=None)
    rng = np.random.default_rng(seed)
    rng.integers(p.agent_range[0], p.agent_range[1] + 1)  # match generation's draw
    geoms = _GEOMETRY_BUILDERS[layout](rng, n_a, p)
    t_fut = _future_times(p)
    protos = []
    for g in geoms:
        per_intent = {}
        for intent in INTENTS:
            if intent == "stop":
                s = _s_stop(g.speed, g.dist_to_center - STOP_MARGIN, t_fut)
            elif intent in ("left", "right") and layout == "intersection":
                s = _s_turn(g.speed, t_fut)
            else:
                s = _s_constant(g.speed, t_fut)
            per_intent[intent] = g.paths[intent].at(s)
        protos.append(per_intent)
    return protos


# ---------------------------------------------------------------------------
# Context encoding

CONTEXT_FEATURE_DIM = 2 * N_T_HIST + len(LAYOUTS) + 4


def context_features(scenario: Scenario) -> np.ndarray:
    """Per-agent conditioning features: canonicalized history, layout
    one-hot, and the agent's scene-frame pose (x, y, cos h, sin h)."""
    onehot = np.zeros(len(LAYOUTS))
    onehot[LAYOUTS.index(scenario.layout)] = 1.0
    rows = []
    for agent in scenario.agents:
        hist = canonicalize(agent.history, agent.pose).ravel()
        pose = np.array(
            [agent.pose.x, agent.pose.y, math.cos(agent.pose.heading), math.sin(agent.pose.heading)]
        )
        rows.append(np.concatenate([hist, onehot, pose]))
    return np.stack(rows)


class ContextEncoder:
    """Small learned MLP mapping per-agent features to N_c context tokens.

    Applied independently per agent (locality: changing one agent's history
    changes only that agent's tokens); trained jointly with the denoiser.
    """

    def __init__(self, n_tokens: int = 4, d_ctx: int = 32, d_hidden: int = 64, seed: int = 0,
                 feature_dim: int = CONTEXT_FEATURE_DIM):
        rng = np.random.default_rng(seed)
        self.n_tokens = n_tokens
        self.d_ctx = d_ctx
        self.feature_dim = feature_dim
        self.params = {
            "enc.w1": T.parameter(rng.normal(0, math.sqrt(2.0 / feature_dim), (feature_dim, d_hidden))),
            "enc.b1": T.parameter(np.zeros(d_hidden)),
            "enc.w2": T.parameter(rng.normal(0, 1.0 / math.sqrt(d_hidden), (d_hidden, n_tokens * d_ctx))),
            "enc.b2": T.parameter(np.zeros(n_tokens * d_ctx)),
        }

    def forward_t(self, feats: T.Tensor) -> T.Tensor:
        """(..., N_a, F) -> (..., N_a, N_c, d_ctx)"""
        if feats.shape[-1] != self.feature_dim:
            raise ShapeError(f"context features have width {feats.shape[-1]}, expected {self.feature_dim}")
        p = self.params
        h = T.relu(T.add(T.matmul(feats, p["enc.w1"]), p["enc.b1"]))
        out = T.add(T.matmul(h, p["enc.w2"]), p["enc.b2"])
        return T.reshape(out, out.shape[:-1] + (self.n_tokens, self.d_ctx))

    def encode(self, scenario: Scenario) -> np.ndarray:
        feats = context_features(scenario)
        with T.no_grad():
            return self.forward_t(T.Tensor(feats[None])).data[0]


def encode_context(scenario: Scenario, encoder: ContextEncoder) -> np.ndarray:
    """ContextSet tokens of shape (N_a, N_c, d_ctx)."""
    return encoder.encode(scenario)


# ---------------------------------------------------------------------------
# Corpus IO (JSONL)


def scenario_to_dict(scenario: Scenario) -> dict:
    """Serialized form; hidden intent labels are withheld."""
    return {
        "format_version": CORPUS_FORMAT_VERSION,
        "scenario_id": scenario.scenario_id,
        "layout": scenario.layout,
        "seed": scenario.rng_seed,
        "agents": [
            {
                "history": a.history.tolist(),
                "future": a.future.tolist(),
                "pose": {"x": a.pose.x, "y": a.pose.y, "heading": a.pose.heading},
            }
            for a in scenario.agents
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    version = doc.get("format_version")
    if version != CORPUS_FORMAT_VERSION:
        raise DataError(f"corpus format version {version!r} unsupported (expected {CORPUS_FORMAT_VERSION})")
    try:
        agents = [
            AgentTrack(
                history=np.asarray(a["history"], dtype=np.float64),
                future=np.asarray(a["future"], dtype=np.float64),
                pose=Pose(**a["pose"]),
            )
            for a in doc["agents"]
        ]
        return Scenario(
            scenario_id=str(doc["scenario_id"]),
            layout=str(doc["layout"]),
            rng_seed=int(doc["seed"]),
            agents=agents,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed scenario record: {exc}") from exc


def write_corpus(path, scenarios) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sc in scenarios:
            fh.write(json.dumps(scenario_to_dict(sc), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_corpus(path) -> list[Scenario]:
    """Whole-file read; malformed lines raise DataError naming the line."""
    scenarios = []
    try:
        fh = open(path, "r", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open corpus {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: parse error on line {lineno}: {exc}") from exc
            try:
                scenarios.append(scenario_from_dict(doc))
            except DataError as exc:
                raise DataError(f"{path}: line {lineno}: {exc}") from exc
    return scenarios
