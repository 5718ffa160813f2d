"""Losses and gradient-based training of the spring parameters.

The forward computation (message passing over distance transforms, flow
warping, shift normalisation) is piecewise differentiable; every max is
differentiated by routing the gradient to its stored argmax. The backward
pass here replays the retained :class:`~posegraph.engine.MessageState` in
reverse, producing gradients both for every spring weight vector and for
the input unaries (exposed so an upstream map regressor could be trained
through this layer).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dt import dt_backward
from .engine import InferenceConfig, MessageState, infer_slice
from .errors import ConfigError, TrainingDiverged
from .graph import PartGraph, SpringParams, clamp_spring_params
from .grids import HeatmapSequence, JointTrack

LOSSES = ("hinge", "l2")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    lr_decay_factor: float = 3.0
    decay_interval: int = 5000
    epochs: int = 3
    hinge_radius: float = 2.0
    gt_sigma: float = 1.5
    loss: str = "hinge"
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.hinge_radius < 1:
            raise ConfigError(f"hinge_radius must be >= 1, got {self.hinge_radius}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.lr_decay_factor < 1 or self.decay_interval < 1 or self.epochs < 0:
            raise ConfigError("invalid decay schedule")


@dataclass(frozen=True)
class GradientBundle:
    """Gradients mirroring their primals: one 4-vector per channel plus
    unary-shaped maps."""

    keys: list
    params_grad: np.ndarray
    unaries_grad: np.ndarray

    def by_key(self, key) -> np.ndarray:
        return self.params_grad[self.keys.index(key)]


def gaussian_maps(track: JointTrack, grid, sigma: float = 1.5) -> np.ndarray:
    """Ideal belief maps: unit-height Gaussian at each visible joint, else zero."""
    h, w = grid
    ys, xs = np.mgrid[0:h, 0:w]
    out = np.zeros((track.frames, track.parts, h, w))
    inv = 1.0 / (2.0 * sigma * sigma)
    for t in range(track.frames):
        for k in range(track.parts):
            if not track.visibility[t, k]:
                continue
            x0, y0 = track.positions[t, k]
            out[t, k] = np.exp(-((xs - x0) ** 2 + (ys - y0) ** 2) * inv)
    return out


def l2_loss(pred: np.ndarray, gt_maps: np.ndarray):
    """Summed squared distance to the ideal maps; gradient is 2*(pred - gt)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt_maps = np.asarray(gt_maps, dtype=np.float64)
    if pred.shape != gt_maps.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt_maps.shape}")
    diff = pred - gt_maps
    return float(np.sum(diff * diff)), 2.0 * diff


def hinge_indicators(track: JointTrack, grid, radius: float) -> np.ndarray:
    """+1 inside the closed disc of ``radius`` around each visible joint, -1
    outside; 0 marks maps of invisible joints (excluded from the loss)."""
    h, w = grid
    ys, xs = np.mgrid[0:h, 0:w]
    ind = np.zeros((track.frames, track.parts, h, w))
    r2 = radius * radius
    for t in range(track.frames):
        for k in range(track.parts):
            if not track.visibility[t, k]:
                continue
            x0, y0 = track.positions[t, k]
            inside = (xs - x0) ** 2 + (ys - y0) ** 2 <= r2
            ind[t, k] = np.where(inside, 1.0, -1.0)
    return ind


def hinge_loss(pred: np.ndarray, gt: JointTrack, radius: float = 2.0):
    """Margin loss sum(max(0, 1 - pred * indicator)) with its sub-gradient."""
    pred = np.asarray(pred, dtype=np.float64)
    ind = hinge_indicators(gt, pred.shape[2:], radius)
    if pred.shape != ind.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs track {ind.shape}")
    margin = 1.0 - pred * ind
    active = (margin > 0) & (ind != 0)
    loss = float(np.sum(margin[active]))
    grad = np.where(active, -ind, 0.0)
    return loss, grad


def backward_slice(state: MessageState, loss_grad: np.ndarray, params: SpringParams) -> GradientBundle:
    """Gradient of a scalar loss on the final scores w.r.t. springs and unaries.

    Walks the retained iterations in reverse: normalisation backward leaves
    the gradient untouched except for subtracting its total at the stored
    peak pixel; the score sum copies the gradient to the unary and to every
    incoming message; each message routes through its transform's argmax
    (and, for temporal channels, through the warp adjoints) back onto the
    child's previous-iteration score. In ``bp`` mode the excluded reverse
    message also receives the negated contribution.
    """
    n_iters = state.iteration
    if n_iters < 1:
        raise ValueError("state holds no completed iterations to differentiate")
    gscore = np.asarray(loss_grad, dtype=np.float64)
    if gscore.shape != state.unaries.shape:
        raise ValueError(f"loss gradient shape {gscore.shape} does not match scores {state.unaries.shape}")
    gscore = gscore.copy()

    params_grad = np.zeros_like(params.values)
    unaries_grad = np.zeros(state.unaries.shape)
    pending: dict[int, np.ndarray] = {}

    for n in range(n_iters, 0, -1):
        if state.config.normalize:
            peaks = state.norm_peaks[n - 1]
            graw = gscore
            for t in range(graw.shape[0]):
                for k in range(graw.shape[1]):
                    total = gscore[t, k].sum()
                    px, py = peaks[t, k]
                    graw[t, k, py, px] -= total
        else:
            graw = gscore
        unaries_grad += graw

        msgs = state.messages[n - 1]
        gscore_prev = np.zeros_like(gscore)
        new_pending: dict[int, np.ndarray] = {}
        for e_idx, edge in enumerate(state.edges):
            g_msg = graw[edge.recipient].copy()
            if e_idx in pending:
                g_msg += pending[e_idx]
            ginp, gw = dt_backward(msgs[e_idx][1], g_msg)
            params_grad[params.index[edge.param_key]] += gw
            if edge.temporal:
                for op in reversed(state.warps.chain(edge.recipient[0], edge.child[0])):
                    ginp = op.transpose(ginp)
            gscore_prev[edge.child] += ginp
            if state.config.mode == "bp" and n >= 2:
                rev = int(state.reverse[e_idx])
                if rev in new_pending:
                    new_pending[rev] -= ginp
                else:
                    new_pending[rev] = -ginp
        gscore = gscore_prev
        pending = new_pending

    unaries_grad += gscore
    return GradientBundle(keys=params.keys, params_grad=params_grad, unaries_grad=unaries_grad)


def slice_loss(
    unaries: HeatmapSequence,
    flows,
    graph: PartGraph,
    params: SpringParams,
    infer_config: InferenceConfig,
    train_config: TrainConfig,
    gt_track: JointTrack,
):
    """Forward pass to a scalar loss; returns (loss, state, loss_grad)."""
    state, _ = infer_slice(unaries, flows, graph, params, infer_config)
    if train_config.loss == "hinge":
        loss, grad = hinge_loss(state.scores, gt_track, train_config.hinge_radius)
    else:
        gt = gaussian_maps(gt_track, unaries.grid, train_config.gt_sigma)
        loss, grad = l2_loss(state.scores, gt)
    return loss, state, grad


def sgd_train(
    dataset,
    graph: PartGraph,
    train_config: TrainConfig,
    infer_config: InferenceConfig = InferenceConfig(),
    init_params: SpringParams | None = None,
):
    """Stochastic gradient descent over a set of slices.

    Each step runs one slice forward, backpropagates the loss to the spring
    weights, applies ``params <- clamp(params - lr * grad)``, and decays the
    learning rate by ``lr_decay_factor`` every ``decay_interval`` steps.
    Returns the final params and the per-step ``(step, loss, lr)`` trace.
    """
    from .graph import init_spring_params

    if not dataset:
        raise ValueError("empty training dataset")
    params = (init_params or init_spring_params(graph)).copy()
    rng = np.random.default_rng(train_config.seed)
    trace = []
    step = 0
    for _ in range(train_config.epochs):
        order = rng.permutation(len(dataset))
        for idx in order:
            item = dataset[int(idx)]
            lr = train_config.learning_rate * train_config.lr_decay_factor ** (
                -(step // train_config.decay_interval)
            )
            loss, state, grad = slice_loss(
                item.unaries, item.flows, graph, params, infer_config, train_config, item.track
            )
            if not np.isfinite(loss) or not np.all(np.isfinite(state.scores)):
                raise TrainingDiverged(step, loss)
            bundle = backward_slice(state, grad, params)
            params = clamp_spring_params(params.with_values(params.values - lr * bundle.params_grad))
            trace.append((step, loss, lr))
            step += 1
    return params, trace
