"""Spatio-temporal inference over a heatmap sequence.

Messages travel simultaneously across every directed edge channel each
iteration (synchronous flood schedule). A spatial message is one distance
transform of the child's score map from the previous iteration; a temporal
message first warps the child's score map into the recipient's frame along
the stored flow. Node scores are then rebuilt as unary plus the sum of all
incoming messages, optionally shift-normalised per map.

Two update modes are supported:

* ``broadcast`` (default): a message is computed from the child's full
  score, i.e. every neighbour contributes to every outgoing message.
* ``bp``: the child's score minus the previous reverse message feeds each
  outgoing message (standard max-product exclusion); exact on acyclic
  graphs after diameter-many iterations.

The two coincide at the first iteration. Every distance-transform argmax,
normalisation peak, and message map is retained so the whole computation
can be differentiated afterwards (:mod:`posegraph.learning`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dt import DtResult, gdt_2d
from .errors import ConfigError
from .graph import SPATIAL, TEMPORAL, PartGraph, SpringParams, spring_energy
from .grids import (
    FlowField,
    FlowSet,
    HeatmapSequence,
    JointTrack,
    argmax_2d,
    bilinear_sample,
)

MODES = ("broadcast", "bp")


@dataclass(frozen=True)
class InferenceConfig:
    iterations: int = 3
    mode: str = "broadcast"
    normalize: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass(frozen=True)
class EdgeInstance:
    """One directed message channel between two (frame, part) nodes."""

    child: tuple[int, int]
    recipient: tuple[int, int]
    param_key: tuple
    temporal: bool


def edge_instances(graph: PartGraph, frames: int) -> list[EdgeInstance]:
    """All directed channels of the graph unrolled over ``frames`` frames.

    Order is fixed (spatial frame-major, then temporal by offset) so runs
    are reproducible regardless of how results are reduced.
    """
    out = []
    for t in range(frames):
        for (a, b) in graph.spatial_edges:
            out.append(EdgeInstance((t, a), (t, b), (SPATIAL, a, b), False))
            out.append(EdgeInstance((t, b), (t, a), (SPATIAL, b, a), False))
    for o in graph.temporal_offsets:
        for p in range(graph.part_count):
            for t0 in range(frames - o):
                out.append(EdgeInstance((t0, p), (t0 + o, p), (TEMPORAL, p, o, +1), True))
                out.append(EdgeInstance((t0 + o, p), (t0, p), (TEMPORAL, p, o, -1), True))
    return out


def reverse_indices(edges: list[EdgeInstance]) -> np.ndarray:
    lookup = {(e.child, e.recipient): i for i, e in enumerate(edges)}
    return np.array([lookup[(e.recipient, e.child)] for e in edges], dtype=np.int64)


class BilinearWarp:
    """Precomputed linear resampling along a flow field.

    ``apply`` performs backward warping (out[p] = source sampled at
    p + flow(p), zero outside the grid); ``transpose`` is its exact adjoint,
    used to route gradients back to the source map.
    """

    def __init__(self, flow: FlowField):
        h, w = flow.shape
        ys, xs = np.mgrid[0:h, 0:w]
        sx = xs + flow.dx
        sy = ys + flow.dy
        x0 = np.floor(sx).astype(np.int64)
        y0 = np.floor(sy).astype(np.int64)
        fx = sx - x0
        fy = sy - y0
        idx, wgt = [], []
        for oy, ox, weight in (
            (0, 0, (1 - fx) * (1 - fy)),
            (0, 1, fx * (1 - fy)),
            (1, 0, (1 - fx) * fy),
            (1, 1, fx * fy),
        ):
            xi = x0 + ox
            yi = y0 + oy
            ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            idx.append(np.where(ok, yi * w + xi, 0).reshape(-1))
            wgt.append(np.where(ok, weight, 0.0).reshape(-1))
        self._idx = np.stack(idx)
        self._wgt = np.stack(wgt)
        self.shape = (h, w)

    def apply(self, source: np.ndarray) -> np.ndarray:
        if source.shape != self.shape:
            raise ValueError(f"map shape {source.shape} does not match flow {self.shape}")
        flat = source.reshape(-1)
        out = np.zeros(flat.shape)
        for i in range(4):
            out += self._wgt[i] * flat[self._idx[i]]
        return out.reshape(self.shape)

    def transpose(self, grad: np.ndarray) -> np.ndarray:
        if grad.shape != self.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match flow {self.shape}")
        g = grad.reshape(-1)
        out = np.zeros(g.shape)
        for i in range(4):
            np.add.at(out, self._idx[i], self._wgt[i] * g)
        return out.reshape(self.shape)


def warp_heatmap(source, flow: FlowField) -> np.ndarray:
    """Backward-warp a map along a flow field (zero padding off-grid)."""
    source = np.asarray(source, dtype=np.float64)
    if source.shape != flow.shape:
        raise ValueError(f"map shape {source.shape} does not match flow {flow.shape}")
    return BilinearWarp(flow).apply(source)


class WarpCache:
    """Lazily built warp operators for the frame pairs an inference run needs."""

    def __init__(self, flows: FlowSet | None):
        self.flows = flows
        self._ops: dict[tuple[int, int], BilinearWarp] = {}

    def single(self, target: int, source: int) -> BilinearWarp:
        key = (target, source)
        if key not in self._ops:
            if self.flows is None or not self.flows.has_pair(target, source):
                raise ConfigError(
                    f"temporal edge needs a flow field for frame pair (target={target}, source={source}) "
                    "but none was provided"
                )
            self._ops[key] = BilinearWarp(self.flows.pair(target, source))
        return self._ops[key]

    def chain(self, recipient_frame: int, child_frame: int) -> list[BilinearWarp]:
        """Warps bringing the child frame's map onto the recipient's grid,
        in application order (multi-frame offsets compose single steps)."""
        step = 1 if child_frame > recipient_frame else -1
        frames = list(range(recipient_frame, child_frame + step, step))
        return [self.single(frames[i - 1], frames[i]) for i in range(len(frames) - 1, 0, -1)]

    def map_position(self, from_frame: int, to_frame: int, x: float, y: float):
        """Follow the stored flows to carry a position between frames."""
        step = 1 if to_frame > from_frame else -1
        f = from_frame
        while f != to_frame:
            fl = self.flows.pair(f, f + step)
            x, y = x + bilinear_sample(fl.dx, x, y), y + bilinear_sample(fl.dy, x, y)
            f += step
        return x, y


@dataclass
class MessageState:
    """Everything one inference run produces, kept for the backward pass.

    ``score_hist[n]`` holds the (T, K, H, W) node scores after iteration n
    (index 0 is the unaries). ``messages[n-1][e]`` is iteration n's message
    map and retained transform result for channel e; ``norm_peaks[n-1]``
    records where each map's maximum sat before normalisation.
    """

    graph: PartGraph
    config: InferenceConfig
    unaries: HeatmapSequence
    edges: list[EdgeInstance]
    reverse: np.ndarray
    warps: WarpCache
    score_hist: list[np.ndarray] = field(default_factory=list)
    messages: list[list[tuple[np.ndarray, DtResult]]] = field(default_factory=list)
    norm_peaks: list[np.ndarray] = field(default_factory=list)

    @property
    def iteration(self) -> int:
        return len(self.messages)

    @property
    def scores(self) -> np.ndarray:
        return self.score_hist[-1]


def initial_state(
    unaries: HeatmapSequence,
    graph: PartGraph,
    config: InferenceConfig,
    flows: FlowSet | None = None,
) -> MessageState:
    edges = edge_instances(graph, unaries.frames)
    rev = reverse_indices(edges) if edges else np.zeros(0, dtype=np.int64)
    state = MessageState(
        graph=graph,
        config=config,
        unaries=unaries,
        edges=edges,
        reverse=rev,
        warps=WarpCache(flows),
    )
    state.score_hist.append(unaries.maps.copy())
    return state


def compute_message(state: MessageState, edge_index: int, params: SpringParams):
    """Message and retained transform for one channel, from the latest scores."""
    edge = state.edges[edge_index]
    prev = state.score_hist[-1]
    base = prev[edge.child]
    if state.config.mode == "bp" and state.iteration >= 1:
        base = base - state.messages[-1][int(state.reverse[edge_index])][0]
    if edge.temporal:
        for op in state.warps.chain(edge.recipient[0], edge.child[0]):
            base = op.apply(base)
    result = gdt_2d(base, params[edge.param_key])
    return result.values, result


def run_iteration(state: MessageState, params: SpringParams) -> MessageState:
    """Advance the state by one synchronous iteration (in place, returns state)."""
    new_msgs = [compute_message(state, i, params) for i in range(len(state.edges))]
    raw = state.unaries.maps.copy()
    for edge, (values, _) in zip(state.edges, new_msgs):
        raw[edge.recipient] += values
    t, k = raw.shape[:2]
    peaks = np.zeros((t, k, 2), dtype=np.int64)
    if state.config.normalize:
        for ti in range(t):
            for ki in range(k):
                x, y, top = argmax_2d(raw[ti, ki])
                peaks[ti, ki] = (x, y)
                raw[ti, ki] -= top
    state.messages.append(new_msgs)
    state.norm_peaks.append(peaks)
    state.score_hist.append(raw)
    return state


def decode_track(scores: np.ndarray) -> JointTrack:
    """Independent per-map argmax of node scores."""
    t, k = scores.shape[:2]
    positions = np.zeros((t, k, 2))
    for ti in range(t):
        for ki in range(k):
            x, y, _ = argmax_2d(scores[ti, ki])
            positions[ti, ki] = (x, y)
    return JointTrack(positions, np.ones((t, k), dtype=bool))


def infer_slice(
    unaries: HeatmapSequence,
    flows: FlowSet | None,
    graph: PartGraph,
    params: SpringParams,
    config: InferenceConfig = InferenceConfig(),
):
    """Run the configured number of iterations and decode a track.

    Returns ``(state, track)``; the state retains everything the learning
    backward pass needs.
    """
    state = initial_state(unaries, graph, config, flows)
    for _ in range(config.iterations):
        run_iteration(state, params)
    return state, decode_track(state.scores)


def _check_integer_positions(track: JointTrack, grid) -> np.ndarray:
    pos = track.positions
    if not np.all(pos == np.round(pos)):
        raise ValueError("slice scoring requires integer pixel positions")
    h, w = grid
    if np.any(pos[:, :, 0] < 0) or np.any(pos[:, :, 0] >= w) or np.any(pos[:, :, 1] < 0) or np.any(pos[:, :, 1] >= h):
        raise ValueError("track position outside the grid")
    return pos.astype(np.int64)


def score_slice(
    track: JointTrack,
    unaries: HeatmapSequence,
    flows: FlowSet | None,
    graph: PartGraph,
    params: SpringParams,
) -> float:
    """Objective value of a full slice configuration.

    Sums per-frame unary and spatial spring terms, plus one temporal term
    per (frame pair, part): the earlier frame's joint is carried through the
    flow into the later frame and the displacement to the later joint is
    scored by that channel's spring. Flow lookups are bilinear.
    """
    pos = _check_integer_positions(track, unaries.grid)
    total = 0.0
    for t in range(track.frames):
        for k in range(track.parts):
            x, y = pos[t, k]
            total += unaries.maps[t, k, y, x]
        for (a, b) in graph.spatial_edges:
            w = params[(SPATIAL, a, b)]
            dx = float(pos[t, a, 0] - pos[t, b, 0])
            dy = float(pos[t, a, 1] - pos[t, b, 1])
            total += spring_energy(w, dx, dy)
    if graph.temporal_offsets:
        cache = WarpCache(flows)
        if flows is None:
            raise ConfigError("temporal edges need flow fields to score a slice")
        for o in graph.temporal_offsets:
            for p in range(graph.part_count):
                for t0 in range(track.frames - o):
                    w = params[(TEMPORAL, p, o, +1)]
                    vx, vy = float(pos[t0, p, 0]), float(pos[t0, p, 1])
                    wx, wy = cache.map_position(t0, t0 + o, vx, vy)
                    dx = wx - float(pos[t0 + o, p, 0])
                    dy = wy - float(pos[t0 + o, p, 1])
                    total += spring_energy(w, dx, dy)
    return float(total)
