"""Binary and JSON file formats for the grid containers.

Heatmap container (``.hmsq``)::

    magic "HMSQ" | version u32 LE = 1 | T, K, H, W u32 LE
    | T*K*H*W float32 LE, row-major, frame-major then part-major

Flow container (``.flsq``)::

    magic "FLSQ" | version u32 LE = 1 | P, H, W u32 LE
    | per pair: H*W dx float32 LE, then H*W dy float32 LE

A flow container for a slice of T frames holds P = 2*(T-1) fields: pair
index ``2*q`` is the field on frame ``q``'s grid pointing into frame
``q+1``, pair index ``2*q+1`` the reverse (frame ``q+1`` grid pointing
into frame ``q``).

Joint tracks are JSON: an array of frames, each an array of K objects
``{"x": float, "y": float, "visible": bool}``.

Values are quantised to float32 on save; loading a saved file reproduces
the stored bytes exactly.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from .errors import FormatError
from .grids import FlowField, FlowSet, HeatmapSequence, JointTrack

_HM_MAGIC = b"HMSQ"
_FL_MAGIC = b"FLSQ"
_VERSION = 1


def _read_exact(fh, n, offset, what):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated payload while reading {what}", offset + len(data))
    return data


def _read_header(fh, magic, dim_count, path):
    got = fh.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}", 0)
    (version,) = struct.unpack("<I", _read_exact(fh, 4, 4, "version"))
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported version {version}", 4)
    raw = _read_exact(fh, 4 * dim_count, 8, "dimensions")
    dims = struct.unpack(f"<{dim_count}I", raw)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: zero dimension in header {dims}", 8)
    return dims, 8 + 4 * dim_count


def _read_f32_block(fh, count, offset, path):
    raw = _read_exact(fh, 4 * count, offset, "float payload")
    values = np.frombuffer(raw, dtype="<f4")
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise FormatError(f"{path}: non-finite value in payload", offset + 4 * int(bad[0]))
    return values.astype(np.float64)


def save_heatmap_sequence(seq: HeatmapSequence, path) -> None:
    t, k, h, w = seq.shape
    with open(path, "wb") as fh:
        fh.write(_HM_MAGIC)
        fh.write(struct.pack("<5I", _VERSION, t, k, h, w))
        fh.write(seq.maps.astype("<f4").tobytes(order="C"))


def load_heatmap_sequence(path) -> HeatmapSequence:
    with open(path, "rb") as fh:
        (t, k, h, w), offset = _read_header(fh, _HM_MAGIC, 4, path)
        values = _read_f32_block(fh, t * k * h * w, offset, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload", offset + 4 * t * k * h * w)
    return HeatmapSequence(values.reshape(t, k, h, w))


def save_flow_set(flows: FlowSet, path) -> None:
    frames = flows.frames
    h, w = flows.shape
    with open(path, "wb") as fh:
        fh.write(_FL_MAGIC)
        fh.write(struct.pack("<4I", _VERSION, 2 * (frames - 1), h, w))
        for q in range(frames - 1):
            for target, source in ((q, q + 1), (q + 1, q)):
                f = flows.pair(target, source)
                fh.write(f.dx.astype("<f4").tobytes(order="C"))
                fh.write(f.dy.astype("<f4").tobytes(order="C"))


def load_flow_set(path) -> FlowSet:
    with open(path, "rb") as fh:
        (p, h, w), offset = _read_header(fh, _FL_MAGIC, 3, path)
        if p % 2 != 0:
            raise FormatError(f"{path}: pair count {p} is not even", 8)
        fields = {}
        for idx in range(p):
            dx = _read_f32_block(fh, h * w, offset, path)
            offset += 4 * h * w
            dy = _read_f32_block(fh, h * w, offset, path)
            offset += 4 * h * w
            q, rev = divmod(idx, 2)
            target, source = (q + 1, q) if rev else (q, q + 1)
            fields[(target, source)] = FlowField(dx.reshape(h, w), dy.reshape(h, w))
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload", offset)
    return FlowSet(fields)


def track_to_obj(track: JointTrack) -> list:
    frames = []
    for t in range(track.frames):
        frames.append(
            [
                {
                    "x": float(track.positions[t, k, 0]),
                    "y": float(track.positions[t, k, 1]),
                    "visible": bool(track.visibility[t, k]),
                }
                for k in range(track.parts)
            ]
        )
    return frames


def save_track(track: JointTrack, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(track_to_obj(track), fh, indent=1)
        fh.write("\n")


def track_from_json(frames) -> JointTrack:
    if not isinstance(frames, list) or not frames:
        raise FormatError("track JSON must be a non-empty array of frames")
    positions = np.array([[(j["x"], j["y"]) for j in frame] for frame in frames], dtype=np.float64)
    visibility = np.array([[bool(j.get("visible", True)) for j in frame] for frame in frames], dtype=bool)
    return JointTrack(positions, visibility)


def load_track(path) -> JointTrack:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            frames = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: invalid JSON ({exc})") from exc
    try:
        return track_from_json(frames)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed track entry ({exc})") from exc
