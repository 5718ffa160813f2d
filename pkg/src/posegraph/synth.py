"""Synthetic ground-truth worlds: articulated tracks, corrupted unary maps,
and motion-consistent flow fields.

Each corruption knob targets one edge family of the graph: occlusion wipes
a part's map so only temporal neighbours can recover it; a distractor adds
an equal-height peak at the symmetric twin's location, the confusion the
symmetric spatial links exist to resolve; blur and noise degrade evidence
uniformly. With every knob off the unary argmax already sits on the truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import GenerationError
from .graph import PartGraph
from .grids import FlowField, FlowSet, HeatmapSequence, JointTrack


@dataclass(frozen=True)
class CorruptionSpec:
    occlusion_prob: float = 0.0
    distractor_prob: float = 0.0
    blur_sigma: float = 0.0
    noise_sigma: float = 0.0
    peak_sigma: float = 1.2
    seed: int = 0

    def __post_init__(self):
        for name in ("occlusion_prob", "distractor_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if self.blur_sigma < 0 or self.noise_sigma < 0 or self.peak_sigma <= 0:
            raise ValueError("sigmas must be non-negative (peak_sigma positive)")

    @property
    def clean(self) -> bool:
        return (
            self.occlusion_prob == 0.0
            and self.distractor_prob == 0.0
            and self.blur_sigma == 0.0
            and self.noise_sigma == 0.0
        )


@dataclass(frozen=True)
class SyntheticSlice:
    track: JointTrack
    unaries: HeatmapSequence
    flows: FlowSet | None
    spec: CorruptionSpec


# Canonical stance for the 13-part skeleton, in template units. Angles and
# lengths are jittered per slice and per frame but chirality never flips,
# mirroring how real pose data is overwhelmingly upright and left/right
# consistent. y grows downward (image convention).
PENN13_TEMPLATE = {
    "head": (0.0, -10.0),
    "lsho": (-3.0, -6.0), "rsho": (3.0, -6.0),
    "lelb": (-4.2, -2.0), "relb": (4.2, -2.0),
    "lwri": (-4.0, 0.5), "rwri": (4.0, 0.5),
    "lhip": (-2.0, 0.0), "rhip": (2.0, 0.0),
    "lkne": (-2.5, 5.0), "rkne": (2.5, 5.0),
    "lank": (-3.0, 10.0), "rank": (3.0, 10.0),
}


def template_for(graph: PartGraph) -> dict[str, tuple[float, float]] | None:
    if set(graph.part_names) <= set(PENN13_TEMPLATE):
        return PENN13_TEMPLATE
    return None


def _limb_forest(graph: PartGraph):
    """Spanning forest of the limb edges: (roots, ordered (parent, child) list)."""
    adj = {p: [] for p in range(graph.part_count)}
    for (a, b) in graph.limb_edges:
        adj[a].append(b)
        adj[b].append(a)
    seen = set()
    roots, order = [], []
    for start in range(graph.part_count):
        if start in seen:
            continue
        roots.append(start)
        seen.add(start)
        queue = [start]
        while queue:
            node = queue.pop(0)
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    order.append((node, nb))
                    queue.append(nb)
    return roots, order


def _pose_positions(graph, roots, order, root_pos, angles, lengths):
    pos = np.zeros((graph.part_count, 2))
    for r_idx, r in enumerate(roots):
        pos[r] = root_pos[r_idx]
    for e_idx, (parent, child) in enumerate(order):
        a, l = angles[e_idx], lengths[e_idx]
        pos[child] = pos[parent] + (l * math.cos(a), l * math.sin(a))
    return pos


def generate_tracks(
    graph: PartGraph,
    frames: int,
    grid,
    seed: int,
    max_velocity: float = 3.0,
    bone_range=(4.0, 6.5),
    margin: float = 5.0,
    min_extent: float = 14.0,
) -> JointTrack:
    """Kinematically plausible joint tracks inside the grid.

    Graphs whose part names match the 13-part skeleton start from the
    canonical stance template with jittered limb angles and lengths; other
    graphs get a random articulated star. Either way, bones (limb edges)
    keep their lengths inside a per-slice sampled band within
    ``bone_range``, per-frame joint displacement never exceeds
    ``max_velocity``, and all joints stay ``margin`` pixels from the
    border. Deterministic per seed.
    """
    if frames < 1:
        raise ValueError("frames must be >= 1")
    h, w = grid
    lo, hi = bone_range
    if w - 2 * margin < hi or h - 2 * margin < hi:
        raise GenerationError(f"grid {grid} too small to fit a skeleton with bones up to {hi}")
    rng = np.random.default_rng(seed)
    roots, order = _limb_forest(graph)
    template = template_for(graph)

    def in_box(p):
        return margin <= p[0] <= w - 1 - margin and margin <= p[1] <= h - 1 - margin

    def extent_of(pos):
        return max(np.ptp(pos[:, 0]), np.ptp(pos[:, 1])) if graph.part_count > 1 else 0.0

    min_ext = min(min_extent, w - 2 * margin - 2, h - 2 * margin - 2)

    # initial pose plus the per-slice bone-length band
    placed = False
    for _ in range(300):
        if template is not None:
            t_pos = np.array([template[name] for name in graph.part_names])
            base_len = {
                (p, c): math.dist(template[graph.part_names[p]], template[graph.part_names[c]])
                for (p, c) in order
            }
            # scale the stance so a typical bone sits mid band
            mean_bone = float(np.mean(list(base_len.values()))) if order else 1.0
            scale0 = rng.uniform(0.88, 1.02) * (lo + hi) / (2 * mean_bone)
            lengths0 = np.array([base_len[e] * scale0 for e in order])
            band_lo = np.maximum(lengths0 * 0.88, 1.0)
            band_hi = lengths0 * 1.12
            angles_ref = np.array(
                [
                    math.atan2(
                        template[graph.part_names[c]][1] - template[graph.part_names[p]][1],
                        template[graph.part_names[c]][0] - template[graph.part_names[p]][0],
                    )
                    for (p, c) in order
                ]
            )
            # limbs articulate but never stray far from the stance, keeping
            # chirality and part separations learnable
            ang_dev = 0.15
            angles0 = angles_ref + rng.uniform(-ang_dev, ang_dev, len(order))
            lengths0 = np.clip(lengths0 * rng.uniform(0.95, 1.05, len(order)), band_lo, band_hi)
            # root placement window from the template extents (plus jitter slack)
            rel = (t_pos - t_pos[roots[0]]) * scale0
            slack = 2.5
            x_lo = margin + slack - rel[:, 0].min()
            x_hi = w - 1 - margin - slack - rel[:, 0].max()
            y_lo = margin + slack - rel[:, 1].min()
            y_hi = h - 1 - margin - slack - rel[:, 1].max()
            if x_lo >= x_hi or y_lo >= y_hi:
                continue
            root_pos = rng.uniform([x_lo, y_lo], [x_hi, y_hi], (len(roots), 2))
        else:
            lengths0 = rng.uniform(lo, hi, len(order))
            band_lo = np.maximum(lengths0 - 0.6, 1.0)
            band_hi = lengths0 + 0.6
            angles_ref = rng.uniform(0, 2 * math.pi, len(order))
            ang_dev = 0.5
            angles0 = angles_ref.copy()
            root_pos = rng.uniform([margin + 2, margin + 2], [w - 3 - margin, h - 3 - margin], (len(roots), 2))
        pos = _pose_positions(graph, roots, order, root_pos, angles0, lengths0)
        if all(in_box(p) for p in pos) and extent_of(pos) >= (min_ext if graph.part_count > 2 else 0.0):
            placed = True
            break
    if not placed:
        raise GenerationError(f"could not place a {graph.part_count}-part skeleton inside grid {grid}")

    positions = np.zeros((frames, graph.part_count, 2))
    positions[0] = pos
    state = (root_pos, angles0, lengths0)
    init_extent = extent_of(pos)
    step_cap = min(max_velocity * 0.6, 2.0)
    for t in range(1, frames):
        root_prev, ang_prev, len_prev = state
        theta = rng.uniform(0, 2 * math.pi, len(roots))
        radius = rng.uniform(0, step_cap, len(roots))
        d_root = np.stack([radius * np.cos(theta), radius * np.sin(theta)], axis=1)
        d_ang = rng.uniform(-0.1, 0.1, len(order))
        d_len = rng.uniform(-0.35, 0.35, len(order))
        scale = 1.0
        for _ in range(40):
            root_c = root_prev + scale * d_root
            ang_c = np.clip(ang_prev + scale * d_ang, angles_ref - ang_dev, angles_ref + ang_dev)
            len_c = np.clip(len_prev + scale * d_len, band_lo, band_hi)
            cand = _pose_positions(graph, roots, order, root_c, ang_c, len_c)
            disp = np.sqrt(((cand - positions[t - 1]) ** 2).sum(axis=1)).max() if graph.part_count else 0.0
            if disp <= max_velocity and all(in_box(p) for p in cand) and extent_of(cand) >= 0.85 * init_extent:
                break
            scale *= 0.5
        else:
            root_c, ang_c, len_c = root_prev, ang_prev, len_prev
            cand = positions[t - 1].copy()
        positions[t] = cand
        state = (root_c, ang_c, len_c)
    return JointTrack(positions, np.ones((frames, graph.part_count), dtype=bool))


def render_unaries(track: JointTrack, spec: CorruptionSpec, graph: PartGraph, grid) -> HeatmapSequence:
    """Gaussian peak per joint, then the corruption pipeline in order:
    occlusion zeroes the map, a distractor adds an equal-height peak at the
    symmetric twin's position, blur smooths, noise adds per-pixel jitter."""
    h, w = grid
    ys, xs = np.mgrid[0:h, 0:w]
    rng = np.random.default_rng(spec.seed)
    inv = 1.0 / (2.0 * spec.peak_sigma**2)
    maps = np.zeros((track.frames, track.parts, h, w))

    occluded = rng.random((track.frames, track.parts)) < spec.occlusion_prob
    distracted = rng.random((track.frames, track.parts)) < spec.distractor_prob

    def peak(x0, y0):
        return np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) * inv)

    for t in range(track.frames):
        for k in range(track.parts):
            x0, y0 = track.positions[t, k]
            m = peak(x0, y0)
            if occluded[t, k]:
                m = np.zeros_like(m)
            twin = graph.symmetric_twin(k)
            if distracted[t, k] and twin is not None and not occluded[t, k]:
                tx, ty = track.positions[t, twin]
                m = m + peak(tx, ty)
            if spec.blur_sigma > 0:
                m = gaussian_filter(m, spec.blur_sigma, mode="constant")
            if spec.noise_sigma > 0:
                m = m + spec.noise_sigma * rng.standard_normal((h, w))
            maps[t, k] = m
    return HeatmapSequence(maps)


def derive_flows(track: JointTrack, grid, flow_noise: float = 0.0, seed: int = 0) -> FlowSet:
    """Smooth flow fields consistent with the joint motion.

    For each ordered adjacent frame pair the field on the target grid blends
    the joints' frame-to-frame displacements by inverse-distance weighting,
    so it is exact at the joints and smooth in between. ``flow_noise`` adds
    seeded per-pixel jitter of that amplitude.
    """
    if track.frames < 2:
        raise ValueError("flows need at least two frames")
    h, w = grid
    ys, xs = np.mgrid[0:h, 0:w]
    rng = np.random.default_rng(seed)
    fields = {}
    for q in range(track.frames - 1):
        for target, source in ((q, q + 1), (q + 1, q)):
            anchors = track.positions[target]
            delta = track.positions[source] - track.positions[target]
            wsum = np.zeros((h, w))
            dx = np.zeros((h, w))
            dy = np.zeros((h, w))
            for k in range(track.parts):
                d2 = (xs - anchors[k, 0]) ** 2 + (ys - anchors[k, 1]) ** 2
                wk = 1.0 / (d2**1.5 + 1e-6)
                wsum += wk
                dx += wk * delta[k, 0]
                dy += wk * delta[k, 1]
            dx /= wsum
            dy /= wsum
            if flow_noise > 0:
                dx = dx + flow_noise * rng.standard_normal((h, w))
                dy = dy + flow_noise * rng.standard_normal((h, w))
            fields[(target, source)] = FlowField(dx, dy)
    return FlowSet(fields)


def make_slice(
    graph: PartGraph,
    frames: int,
    grid,
    corruption: CorruptionSpec,
    seed: int,
    max_velocity: float = 3.0,
    flow_noise: float = 0.0,
    bone_range=(4.0, 6.5),
    margin: float = 5.0,
    min_extent: float = 14.0,
) -> SyntheticSlice:
    """One fully assembled synthetic slice, deterministic per seed."""
    h, w = grid
    # compact grids get proportionally compact skeletons
    cap = max(2.0, (min(h, w) - 2.0) / 4.0)
    if bone_range[1] > cap:
        bone_range = (max(1.5, cap * 0.6), cap)
        margin = min(margin, 2.5)
        min_extent = 0.0
    track_seed, render_seed, flow_seed = np.random.SeedSequence([seed, 0x5EED]).generate_state(3)
    track = generate_tracks(
        graph,
        frames,
        grid,
        int(track_seed),
        max_velocity=max_velocity,
        bone_range=bone_range,
        margin=margin,
        min_extent=min_extent,
    )
    spec = replace(corruption, seed=int(render_seed))
    unaries = render_unaries(track, spec, graph, grid)
    flows = derive_flows(track, grid, flow_noise, int(flow_seed)) if frames > 1 else None
    return SyntheticSlice(track=track, unaries=unaries, flows=flows, spec=spec)
