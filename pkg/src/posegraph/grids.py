"""Dense grid containers and elementary grid operations.

A heatmap is a plain ``(H, W)`` float64 numpy array indexed ``[y, x]``;
coordinates are ``(x, y)`` with x running along columns. Composite
containers below are thin immutable wrappers around arrays so they can be
shared freely across workers. All values are kept in float64 internally;
the file formats in :mod:`posegraph.io` quantise to float32.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


def _as_map(values) -> np.ndarray:
    m = np.asarray(values, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValueError(f"heatmap must be a non-empty 2-D grid, got shape {m.shape}")
    return m


@dataclass(frozen=True)
class HeatmapSequence:
    """Per-frame, per-part confidence maps: ``maps[t, k]`` is an (H, W) grid."""

    maps: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.maps, dtype=np.float64)
        if m.ndim != 4:
            raise ValueError(f"expected (T, K, H, W) maps, got shape {m.shape}")
        if min(m.shape) < 1:
            raise ValueError(f"all dimensions must be >= 1, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("heatmap values must be finite")
        object.__setattr__(self, "maps", m)

    @property
    def frames(self) -> int:
        return self.maps.shape[0]

    @property
    def parts(self) -> int:
        return self.maps.shape[1]

    @property
    def shape(self):
        return self.maps.shape

    @property
    def grid(self):
        """(H, W) of every map."""
        return self.maps.shape[2], self.maps.shape[3]


@dataclass(frozen=True)
class FlowField:
    """Dense 2-D displacement field: sampling position = pixel + (dx, dy)."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = _as_map(self.dx)
        dy = _as_map(self.dy)
        if dx.shape != dy.shape:
            raise ValueError(f"dx/dy shapes differ: {dx.shape} vs {dy.shape}")
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dy))):
            raise ValueError("flow displacements must be finite")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def shape(self):
        return self.dx.shape

    @staticmethod
    def zero(height: int, width: int) -> "FlowField":
        return FlowField(np.zeros((height, width)), np.zeros((height, width)))


class FlowSet:
    """Flow fields for every ordered adjacent frame pair of a slice.

    ``pair(target, source)`` returns the field living on the *target*
    frame's pixel grid and pointing at matching content in the *source*
    frame (the form consumed directly by backward warping). Both orders
    are stored for every adjacent pair, so a slice of T frames carries
    2*(T-1) fields.
    """

    def __init__(self, fields: dict[tuple[int, int], FlowField]):
        if not fields:
            raise ValueError("empty flow set")
        shapes = {f.shape for f in fields.values()}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent flow field shapes: {shapes}")
        for (a, b) in fields:
            if abs(a - b) != 1:
                raise ValueError(f"flow pair ({a}, {b}) is not frame-adjacent")
        self._fields = dict(fields)
        self.shape = next(iter(fields.values())).shape

    @property
    def frames(self) -> int:
        return max(max(k) for k in self._fields) + 1

    def pairs(self):
        return sorted(self._fields)

    def has_pair(self, target: int, source: int) -> bool:
        return (target, source) in self._fields

    def pair(self, target: int, source: int) -> FlowField:
        try:
            return self._fields[(target, source)]
        except KeyError:
            raise KeyError(f"no flow stored for target frame {target}, source frame {source}") from None

    @staticmethod
    def zero(frames: int, height: int, width: int) -> "FlowSet":
        fields = {}
        for t in range(frames - 1):
            fields[(t, t + 1)] = FlowField.zero(height, width)
            fields[(t + 1, t)] = FlowField.zero(height, width)
        return FlowSet(fields)


@dataclass(frozen=True)
class JointTrack:
    """Per-frame 2-D joint coordinates ``positions[t, k] = (x, y)`` plus visibility."""

    positions: np.ndarray
    visibility: np.ndarray = field(default=None)

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim != 3 or pos.shape[2] != 2:
            raise ValueError(f"expected (T, K, 2) positions, got shape {pos.shape}")
        vis = self.visibility
        if vis is None:
            vis = np.ones(pos.shape[:2], dtype=bool)
        vis = np.asarray(vis, dtype=bool)
        if vis.shape != pos.shape[:2]:
            raise ValueError(f"visibility shape {vis.shape} does not match positions {pos.shape[:2]}")
        if not np.all(np.isfinite(pos[vis])):
            raise ValueError("visible joint positions must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "visibility", vis)

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def parts(self) -> int:
        return self.positions.shape[1]


def bilinear_sample(map_, x, y) -> float:
    """Sample a heatmap at a continuous coordinate with zero padding.

    Neighbours outside the grid contribute zero, so samples fully outside
    ``[0, W-1] x [0, H-1]`` return 0 and samples straddling the border blend
    with zeros rather than clamping.
    """
    m = _as_map(map_)
    if not (np.isfinite(x) and np.isfinite(y)):
        raise ValueError(f"sample coordinate must be finite, got ({x}, {y})")
    return float(bilinear_sample_many(m, np.asarray([x]), np.asarray([y]))[0])


def bilinear_sample_many(m: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorised :func:`bilinear_sample` over coordinate arrays."""
    h, w = m.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    fx = xs - x0
    fy = ys - y0
    out = np.zeros(xs.shape, dtype=np.float64)
    for dy_, dx_, wgt in (
        (0, 0, (1 - fx) * (1 - fy)),
        (0, 1, fx * (1 - fy)),
        (1, 0, (1 - fx) * fy),
        (1, 1, fx * fy),
    ):
        xi = x0 + dx_
        yi = y0 + dy_
        ok = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
        if np.any(ok):
            out[ok] += wgt[ok] * m[yi[ok], xi[ok]]
    return out


def argmax_2d(map_) -> tuple[int, int, float]:
    """Location and value of the maximum, ties broken by smallest row-major index."""
    m = _as_map(map_)
    flat = int(np.argmax(m))
    y, x = divmod(flat, m.shape[1])
    return x, y, float(m[y, x])


def shift_normalize(map_) -> np.ndarray:
    """Shift a map so its maximum is exactly zero. Idempotent, argmax-preserving."""
    m = _as_map(map_)
    return m - m.max()
