"""Built-in verification suites backing the ``check`` command.

Each suite pits a fast implementation against an independent oracle:
envelope distance transforms against exhaustive scans, message passing on
acyclic graphs against dense-table elimination (itself cross-checked by
full enumeration on tiny cases), analytic gradients against central finite
differences, and warping against closed-form identities.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import dt
from .engine import BilinearWarp, InferenceConfig, infer_slice, warp_heatmap
from .graph import (
    SPATIAL,
    TEMPORAL,
    PartGraph,
    SpringParams,
    init_spring_params,
    mirrored,
    spring_energy,
)
from .grids import FlowField, FlowSet, HeatmapSequence, JointTrack
from .learning import TrainConfig, backward_slice, slice_loss


@dataclass
class SuiteResult:
    name: str
    cases: int
    max_error: float
    passed: bool
    detail: str = ""

    def line(self) -> str:
        status = "pass" if self.passed else "FAIL"
        extra = f"  {self.detail}" if self.detail else ""
        return f"[{status}] {self.name}: {self.cases} cases, max error {self.max_error:.3e}{extra}"


def random_mirror_params(graph: PartGraph, rng, quad_range=(0.005, 0.08), lin_range=(-0.15, 0.15)) -> SpringParams:
    """Random weights where both directions of an edge describe one spring
    (quadratic terms equal, linear terms negated), so a single undirected
    energy function exists for oracle comparisons."""
    params = init_spring_params(graph)
    values = params.values.copy()

    def draw():
        w = np.zeros(4)
        w[[1, 3]] = rng.uniform(*quad_range, 2)
        w[[0, 2]] = rng.uniform(*lin_range, 2)
        return w

    for (a, b) in graph.spatial_edges:
        w = draw()
        values[params.index[(SPATIAL, a, b)]] = w
        values[params.index[(SPATIAL, b, a)]] = mirrored(w)
    for o in graph.temporal_offsets:
        for p in range(graph.part_count):
            w = draw()
            values[params.index[(TEMPORAL, p, o, +1)]] = w
            values[params.index[(TEMPORAL, p, o, -1)]] = mirrored(w)
    return params.with_values(values)


def dt_1d_suite(cases: int = 1000, max_n: int = 64, seed: int = 1_001) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    mismatches = 0
    start = time.perf_counter()
    for _ in range(cases):
        n = int(rng.integers(1, max_n + 1))
        score = rng.normal(0, 3, n)
        w_quad = float(np.exp(rng.uniform(np.log(1e-3), np.log(10.0))))
        w_lin = float(rng.uniform(-2, 2))
        v_fast, a_fast = dt.gdt_1d(score, w_quad, w_lin)
        v_ref, a_ref = dt.brute_force_1d(score, w_quad, w_lin)
        worst = max(worst, float(np.max(np.abs(v_fast - v_ref))))
        mismatches += int(np.sum(a_fast != a_ref))
    elapsed = time.perf_counter() - start
    passed = worst < 1e-9 and mismatches == 0
    return SuiteResult(
        "dt-1d envelope vs exhaustive",
        cases,
        worst,
        passed,
        f"argmax mismatches {mismatches}, {elapsed:.2f}s",
    )


def dt_2d_suite(cases: int = 100, size: int = 16, seed: int = 1_002) -> SuiteResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    mismatches = 0
    worst_consistency = 0.0
    start = time.perf_counter()
    for _ in range(cases):
        m = rng.normal(0, 2, (size, size))
        w = np.array(
            [
                rng.uniform(-1, 1),
                np.exp(rng.uniform(np.log(1e-3), np.log(5.0))),
                rng.uniform(-1, 1),
                np.exp(rng.uniform(np.log(1e-3), np.log(5.0))),
            ]
        )
        fast = dt.gdt_2d(m, w)
        ref = dt.brute_force_2d(m, w)
        worst = max(worst, float(np.max(np.abs(fast.values - ref.values))))
        mismatches += int(np.sum(fast.argx != ref.argx)) + int(np.sum(fast.argy != ref.argy))
        worst_consistency = max(worst_consistency, dt.consistency_error(m, fast, w))
    elapsed = time.perf_counter() - start
    passed = worst < 1e-9 and mismatches == 0 and worst_consistency < 1e-9
    return SuiteResult(
        "dt-2d separable vs exhaustive",
        cases,
        max(worst, worst_consistency),
        passed,
        f"argmax mismatches {mismatches}, {elapsed:.2f}s",
    )


# -- exact inference oracle on acyclic graphs --------------------------------


def random_tree_graph(rng, max_parts: int = 6) -> PartGraph:
    """Random connected spatial tree over 2..max_parts parts (no temporal)."""
    k = int(rng.integers(2, max_parts + 1))
    edges = []
    for child in range(1, k):
        parent = int(rng.integers(0, child))
        edges.append((parent, child))
    return PartGraph(
        part_names=tuple(f"p{i}" for i in range(k)),
        limb_edges=tuple(edges),
        symmetric_pairs=(),
        temporal_offsets=(),
    )


def chain_graph() -> PartGraph:
    """Single part linked to itself across frames: a temporal chain."""
    return PartGraph(part_names=("p0",), limb_edges=(), symmetric_pairs=(), temporal_offsets=(1,))


def unrolled_factors(graph: PartGraph, frames: int, grid, params: SpringParams):
    """Dense potentials of the unrolled model on identity (zero-flow) warps.

    Nodes are (frame, part); states enumerate the grid row-major. Returns
    the ordered node list and one table per undirected edge, built straight
    from the spring energy (nothing shared with the transform code).
    """
    h, w = grid
    grid_x = np.tile(np.arange(w), h).astype(np.float64)      # state -> x, row-major
    grid_y = np.repeat(np.arange(h), w).astype(np.float64)

    def table(w_vec):
        dx = grid_x[:, None] - grid_x[None, :]
        dy = grid_y[:, None] - grid_y[None, :]
        return spring_energy(w_vec, dx, dy)

    nodes = [(t, k) for t in range(frames) for k in range(graph.part_count)]
    factors = []
    for t in range(frames):
        for (a, b) in graph.spatial_edges:
            factors.append(((t, a), (t, b), table(params[(SPATIAL, a, b)])))
    for o in graph.temporal_offsets:
        for p in range(graph.part_count):
            for t0 in range(frames - o):
                factors.append(((t0, p), (t0 + o, p), table(params[(TEMPORAL, p, o, +1)])))
    return nodes, factors


def eliminate_to_root(node_pot: dict, factors: list, root) -> np.ndarray:
    """Max-marginal of ``root`` by repeated leaf elimination over dense tables."""
    pot = {n: v.copy() for n, v in node_pot.items()}
    edges = [(a, b, t) for (a, b, t) in factors]
    alive = set(pot)
    while len(alive) > 1:
        degree = {n: 0 for n in alive}
        for (a, b, _) in edges:
            degree[a] += 1
            degree[b] += 1
        leaf = next(n for n in sorted(alive) if n != root and degree[n] <= 1)
        attached = [(i, e) for i, e in enumerate(edges) if leaf in (e[0], e[1])]
        if attached:
            i, (a, b, tab) = attached[0]
            if a == leaf:
                pot[b] = pot[b] + np.max(pot[leaf][:, None] + tab, axis=0)
            else:
                pot[a] = pot[a] + np.max(pot[leaf][None, :] + tab, axis=1)
            edges.pop(i)
        else:
            # disconnected remainder: its best value is a constant for every node
            other = next(n for n in sorted(alive) if n != leaf)
            pot[other] = pot[other] + float(np.max(pot[leaf]))
        alive.discard(leaf)
    return pot[root]


def enumerate_max_marginals(node_pot: dict, factors: list) -> dict:
    """Full-enumeration max-marginals; only feasible for <= 3 nodes."""
    nodes = sorted(node_pot)
    if len(nodes) > 3:
        raise ValueError("enumeration oracle limited to 3 nodes")
    shape = [node_pot[n].size for n in nodes]
    total = np.zeros(shape)
    for i, n in enumerate(nodes):
        dims = [1] * len(nodes)
        dims[i] = shape[i]
        total = total + node_pot[n].reshape(dims)
    for (a, b, tab) in factors:
        ia, ib = nodes.index(a), nodes.index(b)
        t = tab if ia < ib else tab.T
        dims = [1] * len(nodes)
        dims[min(ia, ib)] = t.shape[0]
        dims[max(ia, ib)] = t.shape[1]
        total = total + t.reshape(dims)
    out = {}
    for i, n in enumerate(nodes):
        axes = tuple(j for j in range(len(nodes)) if j != i)
        out[n] = total.max(axis=axes)
    return out


def graph_diameter(nodes, factors) -> int:
    adj = {n: [] for n in nodes}
    for (a, b, _) in factors:
        adj[a].append(b)
        adj[b].append(a)
    diameter = 0
    for start in nodes:
        dist = {start: 0}
        queue = [start]
        while queue:
            cur = queue.pop(0)
            for nb in adj[cur]:
                if nb not in dist:
                    dist[nb] = dist[cur] + 1
                    queue.append(nb)
        diameter = max(diameter, max(dist.values()))
    return diameter


def tree_exactness_suite(graphs: int = 50, grid_size: int = 8, seed: int = 1_003) -> SuiteResult:
    """Exclusion-mode message passing on random acyclic models must reproduce
    exact max-marginals: argmax everywhere, values up to a per-node constant
    when normalising (exactly, without)."""
    rng = np.random.default_rng(seed)
    grid = (grid_size, grid_size)
    mismatched_nodes = 0
    total_nodes = 0
    worst_value = 0.0
    for g_idx in range(graphs):
        temporal = g_idx % 3 == 2
        if temporal:
            graph = chain_graph()
            frames = int(rng.integers(2, 5))
        else:
            graph = random_tree_graph(rng)
            frames = 1
        params = random_mirror_params(graph, rng)
        unaries = HeatmapSequence(rng.normal(0, 1.5, (frames, graph.part_count, *grid)))
        flows = FlowSet.zero(frames, *grid) if frames > 1 else None
        nodes, factors = unrolled_factors(graph, frames, grid, params)
        node_pot = {(t, k): unaries.maps[t, k].reshape(-1).copy() for (t, k) in nodes}
        exact = {n: eliminate_to_root(node_pot, factors, n) for n in nodes}
        iters = max(1, graph_diameter(nodes, factors))
        for normalize in (False, True):
            config = InferenceConfig(iterations=iters, mode="bp", normalize=normalize)
            state, _ = infer_slice(unaries, flows, graph, params, config)
            for (t, k) in nodes:
                total_nodes += 1
                belief = state.scores[t, k].reshape(-1)
                mm = exact[(t, k)]
                if int(np.argmax(belief)) != int(np.argmax(mm)):
                    mismatched_nodes += 1
                diff = belief - mm
                spread = float(np.max(diff) - np.min(diff)) if normalize else float(np.max(np.abs(diff)))
                worst_value = max(worst_value, spread)
    passed = mismatched_nodes == 0 and worst_value < 1e-9
    return SuiteResult(
        "tree exactness vs elimination",
        graphs,
        worst_value,
        passed,
        f"{mismatched_nodes}/{total_nodes} node argmax mismatches",
    )


def _argmax_signature(state) -> bytes:
    parts = []
    for it in state.messages:
        for _, res in it:
            parts.append(res.argx.tobytes())
            parts.append(res.argy.tobytes())
    for p in state.norm_peaks:
        parts.append(p.tobytes())
    return b"".join(parts)


def gradient_fd_suite(seed: int = 1_004, unary_samples: int = 50, step: float = 1e-5) -> SuiteResult:
    """Central finite differences of the total hinge loss against the
    analytic backward pass: every spring coordinate plus sampled unary
    pixels on a T=3, K=4, 12x12, two-iteration model."""
    from .graph import builtin_graph

    rng = np.random.default_rng(seed)
    graph = builtin_graph("toy4")
    frames, h, w = 3, 12, 12
    # wide unary spread keeps transform argmaxes well-separated, so nearly
    # every sampled coordinate stays argmax-stable under the probe step
    unary_arr = rng.normal(0, 3, (frames, graph.part_count, h, w))
    fields = {}
    for t in range(frames - 1):
        for pair in ((t, t + 1), (t + 1, t)):
            fields[pair] = FlowField(rng.normal(0, 0.8, (h, w)), rng.normal(0, 0.8, (h, w)))
    flows = FlowSet(fields)
    gt = JointTrack(rng.uniform(2, h - 3, (frames, graph.part_count, 2)))
    params = random_mirror_params(graph, rng)
    infer_config = InferenceConfig(iterations=2)
    train_config = TrainConfig()

    from .learning import hinge_indicators

    indicators = hinge_indicators(gt, (h, w), train_config.hinge_radius)

    def forward(p: SpringParams, arr: np.ndarray):
        loss, state, grad = slice_loss(HeatmapSequence(arr), flows, graph, p, infer_config, train_config, gt)
        return loss, state, grad

    def signature(state):
        # stability = no transform argmax moved AND no hinge margin crossed
        active = ((1.0 - state.scores * indicators) > 0) & (indicators != 0)
        return _argmax_signature(state) + active.tobytes()

    start = time.perf_counter()
    loss0, state0, grad0 = forward(params, unary_arr)
    bundle = backward_slice(state0, grad0, params)

    checked = stable = 0
    worst = 0.0
    # cancellation noise of the central difference at this loss magnitude;
    # gradients below ~1000x that are indistinguishable from zero
    noise = abs(loss0) * np.finfo(np.float64).eps / (2 * step)
    floor = max(1e-6, 2e3 * noise)

    def fd_check(analytic, plus, minus, sig_p, sig_m):
        nonlocal checked, stable, worst
        checked += 1
        if sig_p != sig_m:
            return
        stable += 1
        fd = (plus - minus) / (2 * step)
        rel = abs(fd - analytic) / max(abs(fd), abs(analytic), floor)
        worst = max(worst, rel)

    flat = params.values.reshape(-1)
    for i in range(flat.size):
        vp = flat.copy()
        vp[i] += step
        vm = flat.copy()
        vm[i] -= step
        lp, sp, _ = forward(params.from_vector(vp), unary_arr)
        lm, sm, _ = forward(params.from_vector(vm), unary_arr)
        fd_check(bundle.params_grad.reshape(-1)[i], lp, lm, signature(sp), signature(sm))

    pixel_idx = rng.choice(unary_arr.size, unary_samples, replace=False)
    for i in pixel_idx:
        ap = unary_arr.copy().reshape(-1)
        ap[i] += step
        am = unary_arr.copy().reshape(-1)
        am[i] -= step
        lp, sp, _ = forward(params, ap.reshape(unary_arr.shape))
        lm, sm, _ = forward(params, am.reshape(unary_arr.shape))
        fd_check(bundle.unaries_grad.reshape(-1)[i], lp, lm, signature(sp), signature(sm))

    elapsed = time.perf_counter() - start
    fraction = stable / checked if checked else 0.0
    passed = worst < 1e-3 and fraction >= 0.95
    return SuiteResult(
        "gradients vs finite differences",
        checked,
        worst,
        passed,
        f"stable {stable}/{checked} ({fraction:.1%}), {elapsed:.1f}s",
    )


def warp_suite(seed: int = 1_005) -> SuiteResult:
    rng = np.random.default_rng(seed)
    h, w = 10, 12
    worst = 0.0
    detail = []
    # identity
    m = rng.normal(0, 1, (h, w))
    out = warp_heatmap(m, FlowField.zero(h, w))
    worst = max(worst, float(np.max(np.abs(out - m))))
    # integer shift with zero fill
    flow = FlowField(np.full((h, w), 2.0), np.zeros((h, w)))
    out = warp_heatmap(m, flow)
    expect = np.zeros_like(m)
    expect[:, : w - 2] = m[:, 2:]
    worst = max(worst, float(np.max(np.abs(out - expect))))
    # adjoint identity <W x, y> == <x, W^T y>
    for _ in range(20):
        flow = FlowField(rng.normal(0, 1.5, (h, w)), rng.normal(0, 1.5, (h, w)))
        op = BilinearWarp(flow)
        x = rng.normal(0, 1, (h, w))
        y = rng.normal(0, 1, (h, w))
        lhs = float(np.sum(op.apply(x) * y))
        rhs = float(np.sum(x * op.transpose(y)))
        worst = max(worst, abs(lhs - rhs))
    passed = worst < 1e-9
    return SuiteResult("warp identities and adjoint", 22, worst, passed, "; ".join(detail))


def run_all_checks() -> list[SuiteResult]:
    return [
        dt_1d_suite(),
        dt_2d_suite(),
        tree_exactness_suite(),
        gradient_fd_suite(),
        warp_suite(),
    ]
