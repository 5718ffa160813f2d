"""Generalized distance transforms for quadratic spring maximisation.

For a score grid and spring weights, computes for every target pixel p

    values[p] = max_q  score[q] + psi(q - p)

where ``psi`` is the negative quadratic penalty of :mod:`posegraph.graph`.
Because psi has no xy cross term the 2-D maximum factorises into a pass
over rows then columns, each a 1-D transform solved in O(n) by the upper
envelope of same-curvature parabolas. The maximising source location is
stored per pixel so the operation can be differentiated by routing
gradients back along the argmax.

``brute_force_1d`` / ``brute_force_2d`` are deliberately naive O(n^2)
oracles kept for cross-checking; they share nothing with the envelope
implementation beyond the tie-break rule (smallest index, row-major).
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .graph import QUAD_FLOOR


@dataclass(frozen=True)
class DtResult:
    """Transformed scores plus the per-pixel maximising source location."""

    values: np.ndarray
    argx: np.ndarray
    argy: np.ndarray

    @property
    def shape(self):
        return self.values.shape


@numba.njit(cache=True)
def _gdt_rows(scores, w_quad, lam):
    """Envelope transform of every row of a (B, n) array.

    Parabola j peaks at j + lam with lam = w_lin / (2 * w_quad); the constant
    w_quad * lam^2 restores the completed square. Intersection boundaries
    assign the boundary pixel to the earlier parabola so ties resolve to the
    smallest source index.
    """
    b_count, n = scores.shape
    vals = np.empty((b_count, n))
    args = np.empty((b_count, n), dtype=np.int32)
    v = np.empty(n, dtype=np.int32)
    z = np.empty(n + 1)
    c = w_quad * lam * lam
    for b in range(b_count):
        row = scores[b]
        k = 0
        v[0] = 0
        z[0] = -np.inf
        z[1] = np.inf
        for j in range(1, n):
            s = 0.5 * ((row[v[k]] - row[j]) / (w_quad * (j - v[k])) + v[k] + j) + lam
            while s <= z[k]:
                k -= 1
                s = 0.5 * ((row[v[k]] - row[j]) / (w_quad * (j - v[k])) + v[k] + j) + lam
            k += 1
            v[k] = j
            z[k] = s
            z[k + 1] = np.inf
        k = 0
        for i in range(n):
            while z[k + 1] < i:
                k += 1
            j = v[k]
            d = i - j - lam
            vals[b, i] = row[j] + c - w_quad * d * d
            args[b, i] = j
    return vals, args


def _check_quad(w_quad):
    if not np.isfinite(w_quad) or w_quad < QUAD_FLOOR:
        raise ValueError(f"quadratic weight {w_quad} below floor {QUAD_FLOOR}: transform is ill-posed")


def gdt_1d(score, w_quad: float, w_lin: float):
    """1-D transform: values[i] = max_j score[j] - w_quad*(j-i)^2 - w_lin*(j-i).

    Returns (values, argmax); ties go to the smallest j. O(n).
    """
    score = np.asarray(score, dtype=np.float64)
    if score.ndim != 1 or score.size < 1:
        raise ValueError(f"score must be a non-empty 1-D array, got shape {score.shape}")
    if not np.all(np.isfinite(score)):
        raise ValueError("scores must be finite")
    _check_quad(w_quad)
    lam = w_lin / (2.0 * w_quad)
    vals, args = _gdt_rows(np.ascontiguousarray(score[None, :]), float(w_quad), float(lam))
    return vals[0], args[0]


def brute_force_1d(score, w_quad: float, w_lin: float):
    """O(n^2) reference for :func:`gdt_1d`: same contract, exhaustive scan."""
    score = np.asarray(score, dtype=np.float64)
    if score.ndim != 1 or score.size < 1:
        raise ValueError(f"score must be a non-empty 1-D array, got shape {score.shape}")
    if not np.all(np.isfinite(score)):
        raise ValueError("scores must be finite")
    _check_quad(w_quad)
    n = score.size
    j = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    u = j - i
    table = score[:, None] - w_quad * u * u - w_lin * u
    return table.max(axis=0), table.argmax(axis=0)


def gdt_2d(score, w) -> DtResult:
    """Separable 2-D transform: rows along x with (w_x2, w_x1), then columns
    along y with (w_y2, w_y1); the composed argmax is exact because the
    penalty has no cross term."""
    m = np.asarray(score, dtype=np.float64)
    if m.ndim != 2 or min(m.shape) < 1:
        raise ValueError(f"score must be a non-empty 2-D grid, got shape {m.shape}")
    w = np.asarray(w, dtype=np.float64)
    _check_quad(w[1])
    _check_quad(w[3])
    h, wd = m.shape
    lam_x = w[0] / (2.0 * w[1])
    lam_y = w[2] / (2.0 * w[3])
    row_vals, row_argx = _gdt_rows(np.ascontiguousarray(m), float(w[1]), float(lam_x))
    col_vals, col_argy = _gdt_rows(np.ascontiguousarray(row_vals.T), float(w[3]), float(lam_y))
    values = np.ascontiguousarray(col_vals.T)
    argy = np.ascontiguousarray(col_argy.T)
    cols = np.broadcast_to(np.arange(wd, dtype=np.int32), (h, wd))
    argx = row_argx[argy, cols]
    return DtResult(values=values, argx=argx, argy=argy)


def brute_force_2d(score, w) -> DtResult:
    """Exhaustive O((HW)^2) reference for :func:`gdt_2d`.

    The per-axis penalties are added in the same association order as the
    separable pass (x first, then y) so values agree to rounding error;
    argmax ties resolve to the smallest row-major source index.
    """
    m = np.asarray(score, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    _check_quad(w[1])
    _check_quad(w[3])
    h, wd = m.shape
    xs = np.arange(wd)
    ys = np.arange(h)
    ux = xs[:, None] - xs[None, :]                      # (x_src, x_tgt)
    uy = ys[:, None] - ys[None, :]
    psix = -(w[1] * ux * ux + w[0] * ux)
    psiy = -(w[3] * uy * uy + w[2] * uy)
    # table[(y_src, x_src), (y_tgt, x_tgt)] built row-major over sources
    table = (m.reshape(h, wd, 1, 1) + psix.reshape(1, wd, 1, wd)) + psiy.reshape(h, 1, h, 1)
    flat = table.reshape(h * wd, h * wd)
    best = flat.argmax(axis=0)
    values = flat[best, np.arange(h * wd)].reshape(h, wd)
    argy, argx = np.divmod(best.reshape(h, wd), wd)
    return DtResult(values=values, argx=argx.astype(np.int32), argy=argy.astype(np.int32))


def dt_backward(result: DtResult, upstream):
    """Sub-gradient of a 2-D transform.

    Routes each pixel's upstream gradient to its stored source location and
    accumulates the spring-weight gradient from the displacement features:
    with delta = argmax[p] - p, d(psi)/dw = -[dx, dx^2, dy, dy^2].

    Returns (grad_score, grad_w).
    """
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != result.values.shape:
        raise ValueError(f"upstream shape {g.shape} does not match transform {result.values.shape}")
    h, wd = g.shape
    grad_score = np.zeros((h, wd))
    np.add.at(grad_score, (result.argy, result.argx), g)
    dx = result.argx - np.arange(wd)[None, :]
    dy = result.argy - np.arange(h)[:, None]
    grad_w = -np.array(
        [
            np.sum(g * dx),
            np.sum(g * dx * dx),
            np.sum(g * dy),
            np.sum(g * dy * dy),
        ]
    )
    return grad_score, grad_w


def consistency_error(score, result: DtResult, w) -> float:
    """Max |values[p] - (score[argmax[p]] + psi(argmax[p] - p))| over the grid."""
    m = np.asarray(score, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    h, wd = m.shape
    dx = result.argx - np.arange(wd)[None, :]
    dy = result.argy - np.arange(h)[:, None]
    psi = -(w[1] * dx * dx + w[0] * dx) - (w[3] * dy * dy + w[2] * dy)
    recon = m[result.argy, result.argx] + psi
    return float(np.max(np.abs(result.values - recon)))
