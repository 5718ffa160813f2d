import numpy as np
import pytest

from posegraph.graph import builtin_graph
from posegraph.grids import FlowField, FlowSet, HeatmapSequence, JointTrack


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy2():
    return builtin_graph("toy2")


@pytest.fixture
def toy4():
    return builtin_graph("toy4")


@pytest.fixture
def penn13():
    return builtin_graph("penn13")


def random_flows(rng, frames, h, w, scale=0.8):
    fields = {}
    for t in range(frames - 1):
        for pair in ((t, t + 1), (t + 1, t)):
            fields[pair] = FlowField(rng.normal(0, scale, (h, w)), rng.normal(0, scale, (h, w)))
    return FlowSet(fields)


@pytest.fixture
def small_problem(rng, toy4):
    """Random unaries, flows and a ground-truth track on a 12x12 grid."""
    frames, h, w = 3, 12, 12
    unaries = HeatmapSequence(rng.normal(0, 1, (frames, toy4.part_count, h, w)))
    flows = random_flows(rng, frames, h, w)
    gt = JointTrack(rng.uniform(2, h - 3, (frames, toy4.part_count, 2)))
    return unaries, flows, gt
