"""Spatio-temporal pose inference on heatmap sequences.

Max-sum message passing over a loopy part graph with learnable quadratic
springs, computed by generalized distance transforms; temporal edges warp
evidence between frames along dense flow fields; the whole layer is
differentiable so the springs can be trained by gradient descent; PCK
metrics and report emission close the loop.
"""

from .dt import DtResult, brute_force_1d, brute_force_2d, dt_backward, gdt_1d, gdt_2d
from .engine import (
    InferenceConfig,
    MessageState,
    decode_track,
    infer_slice,
    run_iteration,
    score_slice,
    warp_heatmap,
)
from .graph import (
    PartGraph,
    SpringParams,
    build_graph,
    builtin_graph,
    clamp_spring_params,
    init_spring_params,
)
from .grids import (
    FlowField,
    FlowSet,
    HeatmapSequence,
    JointTrack,
    argmax_2d,
    bilinear_sample,
    shift_normalize,
)
from .io import (
    load_flow_set,
    load_heatmap_sequence,
    load_track,
    save_flow_set,
    save_heatmap_sequence,
    save_track,
)
from .learning import (
    GradientBundle,
    TrainConfig,
    backward_slice,
    gaussian_maps,
    hinge_loss,
    l2_loss,
    sgd_train,
)
from .metrics import PckReport, emit_report, pck, pck_curve
from .synth import CorruptionSpec, SyntheticSlice, derive_flows, generate_tracks, make_slice, render_unaries

__version__ = "0.1.0"

__all__ = [
    "DtResult", "brute_force_1d", "brute_force_2d", "dt_backward", "gdt_1d", "gdt_2d",
    "InferenceConfig", "MessageState", "decode_track", "infer_slice", "run_iteration",
    "score_slice", "warp_heatmap",
    "PartGraph", "SpringParams", "build_graph", "builtin_graph", "clamp_spring_params",
    "init_spring_params",
    "FlowField", "FlowSet", "HeatmapSequence", "JointTrack", "argmax_2d",
    "bilinear_sample", "shift_normalize",
    "load_flow_set", "load_heatmap_sequence", "load_track",
    "save_flow_set", "save_heatmap_sequence", "save_track",
    "GradientBundle", "TrainConfig", "backward_slice", "gaussian_maps", "hinge_loss",
    "l2_loss", "sgd_train",
    "PckReport", "emit_report", "pck", "pck_curve",
    "CorruptionSpec", "SyntheticSlice", "derive_flows", "generate_tracks", "make_slice",
    "render_unaries",
    "__version__",
]
