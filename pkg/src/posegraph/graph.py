"""Relational part graph and learnable spring parameters.

The graph joins body parts with two edge families: spatial edges inside a
frame (limb connections plus symmetric-part links) and temporal edges
joining the same part across frames at configurable offsets. Every
undirected edge is realised as two directed message channels with
independent weights.

A spring weight vector ``w = (w_x1, w_x2, w_y1, w_y2)`` scores a
displacement ``(dx, dy)`` from child to recipient as::

    psi(dx, dy) = -(w_x2*dx^2 + w_x1*dx + w_y2*dy^2 + w_y1*dy)

i.e. a penalty subtracted from the score being maximised. The quadratic
coefficients must stay >= QUAD_FLOOR so the distance transform stays
well-posed; the linear coefficients encode the spring's rest offset.

Parameter sharing: a spatial channel (i -> j) has one weight vector used
in every frame; a temporal channel has one weight vector per
(part, offset, time direction) shared across all frame pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import GraphSpecError

QUAD_FLOOR = 1e-4

# (kind, a, b[, offset, direction]); direction +1 sends messages forward in time
SPATIAL = "spatial"
TEMPORAL = "temporal"


@dataclass(frozen=True)
class PartGraph:
    part_names: tuple[str, ...]
    limb_edges: tuple[tuple[int, int], ...]
    symmetric_pairs: tuple[tuple[int, int], ...]
    temporal_offsets: tuple[int, ...]

    def __post_init__(self):
        k = self.part_count
        if k < 1:
            raise GraphSpecError("graph needs at least one part")
        if len(set(self.part_names)) != k:
            raise GraphSpecError("part names must be unique")
        seen = set()
        for (i, j) in self.spatial_edges:
            if not (0 <= i < k and 0 <= j < k):
                raise GraphSpecError(f"edge ({i}, {j}) references a part outside [0, {k})")
            if i == j:
                raise GraphSpecError(f"self-loop on part {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise GraphSpecError(f"duplicate edge between parts {key[0]} and {key[1]}")
            seen.add(key)
        for o in self.temporal_offsets:
            if o < 1:
                raise GraphSpecError(f"temporal offset must be >= 1, got {o}")
        if len(set(self.temporal_offsets)) != len(self.temporal_offsets):
            raise GraphSpecError("duplicate temporal offsets")

    @property
    def part_count(self) -> int:
        return len(self.part_names)

    @property
    def spatial_edges(self) -> tuple[tuple[int, int], ...]:
        """Limb edges followed by symmetric pairs, in spec order."""
        return self.limb_edges + self.symmetric_pairs

    def symmetric_twin(self, part: int) -> int | None:
        for (a, b) in self.symmetric_pairs:
            if part == a:
                return b
            if part == b:
                return a
        return None

    def without_temporal(self) -> "PartGraph":
        return PartGraph(self.part_names, self.limb_edges, self.symmetric_pairs, ())

    def param_keys(self) -> list[tuple]:
        """Canonical ordering of every learnable weight vector."""
        keys = []
        for (i, j) in self.spatial_edges:
            keys.append((SPATIAL, i, j))
            keys.append((SPATIAL, j, i))
        for o in self.temporal_offsets:
            for p in range(self.part_count):
                keys.append((TEMPORAL, p, o, +1))
                keys.append((TEMPORAL, p, o, -1))
        return keys

    def to_spec(self) -> dict:
        return {
            "parts": list(self.part_names),
            "limb_edges": [list(e) for e in self.limb_edges],
            "symmetric_pairs": [list(e) for e in self.symmetric_pairs],
            "temporal_offsets": list(self.temporal_offsets),
        }


def build_graph(spec: dict) -> PartGraph:
    """Materialise a graph from its declarative JSON description."""
    if not isinstance(spec, dict):
        raise GraphSpecError(f"graph spec must be an object, got {type(spec).__name__}")
    unknown = set(spec) - {"parts", "limb_edges", "symmetric_pairs", "temporal_offsets"}
    if unknown:
        raise GraphSpecError(f"unknown graph spec keys: {sorted(unknown)}")
    try:
        parts = tuple(str(p) for p in spec["parts"])
    except KeyError:
        raise GraphSpecError("graph spec is missing 'parts'") from None

    def edge_list(key):
        out = []
        for e in spec.get(key, []):
            if len(e) != 2:
                raise GraphSpecError(f"{key} entry {e!r} is not a pair")
            out.append((int(e[0]), int(e[1])))
        return tuple(out)

    return PartGraph(
        part_names=parts,
        limb_edges=edge_list("limb_edges"),
        symmetric_pairs=edge_list("symmetric_pairs"),
        temporal_offsets=tuple(int(o) for o in spec.get("temporal_offsets", [])),
    )


# Built-in topologies. "penn13" is the standard 13-joint human skeleton:
# a limb tree plus symmetric links for shoulders/elbows/wrists/hips/knees/ankles.
_PENN13_PARTS = (
    "head",
    "lsho", "rsho",
    "lelb", "relb",
    "lwri", "rwri",
    "lhip", "rhip",
    "lkne", "rkne",
    "lank", "rank",
)
_BUILTIN_SPECS = {
    "penn13": {
        "parts": list(_PENN13_PARTS),
        "limb_edges": [
            [0, 1], [0, 2],          # head - shoulders
            [1, 3], [3, 5],          # left arm
            [2, 4], [4, 6],          # right arm
            [1, 7], [2, 8],          # torso
            [7, 9], [9, 11],         # left leg
            [8, 10], [10, 12],       # right leg
        ],
        "symmetric_pairs": [[1, 2], [3, 4], [5, 6], [7, 8], [9, 10], [11, 12]],
        "temporal_offsets": [1],
    },
    "toy2": {
        "parts": ["a", "b"],
        "limb_edges": [[0, 1]],
        "symmetric_pairs": [],
        "temporal_offsets": [1],
    },
    "toy4": {
        "parts": ["root", "mid", "ltip", "rtip"],
        "limb_edges": [[0, 1], [1, 2], [1, 3]],
        "symmetric_pairs": [[2, 3]],
        "temporal_offsets": [1],
    },
}


def builtin_graph(name: str) -> PartGraph:
    try:
        return build_graph(_BUILTIN_SPECS[name])
    except KeyError:
        raise GraphSpecError(f"unknown built-in graph {name!r}; have {sorted(_BUILTIN_SPECS)}") from None


def builtin_names() -> list[str]:
    return sorted(_BUILTIN_SPECS)


class SpringParams:
    """One 4-vector ``(w_x1, w_x2, w_y1, w_y2)`` per directed edge channel.

    Values are held in a dense ``(n_channels, 4)`` array indexed by the
    graph's canonical key order; instances are treated as immutable and
    replaced wholesale by learning steps. Quadratic coefficients below
    QUAD_FLOOR are representable (raw gradient steps produce them) but the
    transforms reject them; run :func:`clamp_spring_params` after updates.
    """

    def __init__(self, keys, values):
        self.keys = list(keys)
        self.index = {k: i for i, k in enumerate(self.keys)}
        if len(self.index) != len(self.keys):
            raise GraphSpecError("duplicate parameter keys")
        v = np.asarray(values, dtype=np.float64)
        if v.shape != (len(self.keys), 4):
            raise ValueError(f"expected ({len(self.keys)}, 4) weights, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spring weights must be finite")
        self.values = v

    def __getitem__(self, key) -> np.ndarray:
        return self.values[self.index[key]]

    def copy(self) -> "SpringParams":
        return SpringParams(self.keys, self.values.copy())

    def with_values(self, values) -> "SpringParams":
        return SpringParams(self.keys, values)

    def as_vector(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    def from_vector(self, vec) -> "SpringParams":
        return SpringParams(self.keys, np.asarray(vec, dtype=np.float64).reshape(len(self.keys), 4))

    def to_json_obj(self) -> dict:
        edges = []
        for key, w in zip(self.keys, self.values):
            if key[0] == SPATIAL:
                entry = {"from": key[1], "to": key[2], "kind": SPATIAL}
            else:
                _, part, offset, direction = key
                entry = {"from": part, "to": part, "kind": TEMPORAL, "offset": direction * offset}
            entry["w"] = [float(x) for x in w]
            edges.append(entry)
        return {"edges": edges}

    @staticmethod
    def from_json_obj(obj) -> "SpringParams":
        keys, rows = [], []
        for entry in obj["edges"]:
            kind = entry["kind"]
            if kind == SPATIAL:
                keys.append((SPATIAL, int(entry["from"]), int(entry["to"])))
            elif kind == TEMPORAL:
                signed = int(entry["offset"])
                keys.append((TEMPORAL, int(entry["from"]), abs(signed), 1 if signed > 0 else -1))
            else:
                raise ValueError(f"unknown edge kind {kind!r}")
            rows.append([float(x) for x in entry["w"]])
        return SpringParams(keys, np.asarray(rows))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_obj(), fh, indent=1)
            fh.write("\n")

    @staticmethod
    def load(path) -> "SpringParams":
        with open(path, "r", encoding="utf-8") as fh:
            return SpringParams.from_json_obj(json.load(fh))


def init_spring_params(graph: PartGraph) -> SpringParams:
    """Fresh weights: quadratic terms 0.01, linear terms 0, for every channel."""
    keys = graph.param_keys()
    values = np.zeros((len(keys), 4))
    values[:, [1, 3]] = 0.01
    return SpringParams(keys, values)


def clamp_spring_params(params: SpringParams) -> SpringParams:
    """Floor the quadratic coefficients at QUAD_FLOOR; linear terms pass through."""
    v = np.asarray(params.values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite spring weight")
    clamped = v.copy()
    clamped[:, [1, 3]] = np.maximum(clamped[:, [1, 3]], QUAD_FLOOR)
    return params.with_values(clamped)


def spring_energy(w, dx, dy):
    """psi(dx, dy) under the negative-penalty convention. Broadcasts over dx/dy."""
    return -(w[1] * dx * dx + w[0] * dx + w[3] * dy * dy + w[2] * dy)


def mirrored(w) -> np.ndarray:
    """Weights of the same spring viewed from the opposite end (linear terms negate)."""
    w = np.asarray(w, dtype=np.float64)
    return np.array([-w[0], w[1], -w[2], w[3]])
