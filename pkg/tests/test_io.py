import struct

import numpy as np
import pytest

from posegraph.errors import FormatError
from posegraph.grids import FlowField, FlowSet, HeatmapSequence, JointTrack
from posegraph.io import (
    load_flow_set,
    load_heatmap_sequence,
    load_track,
    save_flow_set,
    save_heatmap_sequence,
    save_track,
)


def f32(rng, shape):
    # quantised up front so round-trips are bit-exact
    return rng.normal(0, 1, shape).astype(np.float32).astype(np.float64)


class TestHeatmapContainer:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        seq = HeatmapSequence(f32(rng, (2, 3, 4, 4)))
        path = tmp_path / "seq.hmsq"
        save_heatmap_sequence(seq, path)
        loaded = load_heatmap_sequence(path)
        np.testing.assert_array_equal(loaded.maps, seq.maps)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.hmsq"
        path.write_bytes(b"XXXX" + b"\0" * 32)
        with pytest.raises(FormatError, match="magic"):
            load_heatmap_sequence(path)

    def test_nan_payload_names_offset(self, rng, tmp_path):
        seq = HeatmapSequence(f32(rng, (1, 1, 2, 2)))
        path = tmp_path / "nan.hmsq"
        save_heatmap_sequence(seq, path)
        raw = bytearray(path.read_bytes())
        # corrupt the third float of the payload (header is 24 bytes)
        raw[24 + 8 : 24 + 12] = struct.pack("<f", np.nan)
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError) as exc:
            load_heatmap_sequence(path)
        assert exc.value.offset == 24 + 8

    def test_truncated(self, rng, tmp_path):
        seq = HeatmapSequence(f32(rng, (1, 2, 3, 3)))
        path = tmp_path / "trunc.hmsq"
        save_heatmap_sequence(seq, path)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="truncated"):
            load_heatmap_sequence(path)

    def test_trailing_bytes(self, rng, tmp_path):
        seq = HeatmapSequence(f32(rng, (1, 1, 2, 2)))
        path = tmp_path / "trail.hmsq"
        save_heatmap_sequence(seq, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(FormatError, match="trailing"):
            load_heatmap_sequence(path)


class TestFlowContainer:
    def test_round_trip_bit_exact(self, rng, tmp_path):
        fields = {}
        for t in range(2):
            for pair in ((t, t + 1), (t + 1, t)):
                fields[pair] = FlowField(f32(rng, (5, 4)), f32(rng, (5, 4)))
        flows = FlowSet(fields)
        path = tmp_path / "f.flsq"
        save_flow_set(flows, path)
        loaded = load_flow_set(path)
        assert loaded.frames == 3
        for pair in fields:
            np.testing.assert_array_equal(loaded.pair(*pair).dx, flows.pair(*pair).dx)
            np.testing.assert_array_equal(loaded.pair(*pair).dy, flows.pair(*pair).dy)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.flsq"
        path.write_bytes(b"HMSQ" + b"\0" * 16)
        with pytest.raises(FormatError, match="magic"):
            load_flow_set(path)


class TestTrackJson:
    def test_round_trip(self, rng, tmp_path):
        track = JointTrack(rng.uniform(0, 10, (3, 4, 2)), rng.random((3, 4)) > 0.3)
        path = tmp_path / "t.json"
        save_track(track, path)
        loaded = load_track(path)
        np.testing.assert_allclose(loaded.positions, track.positions)
        np.testing.assert_array_equal(loaded.visibility, track.visibility)

    def test_malformed(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[[{\"x\": 1}]]")
        with pytest.raises(FormatError):
            load_track(path)
        path.write_text("not json")
        with pytest.raises(FormatError):
            load_track(path)
