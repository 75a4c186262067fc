"""Discrete grid operators and the physics-regularized training loss.

Derivatives use second-order stencils: central in the interior,
one-sided 3-point at the edges. On flattened fields they act as constant
matrices, so the whole loss is expressible inside an autodiff graph.

The loss couples four mean-square terms: the field mismatch e, the
boundary-solution mismatch pi1, the boundary-flux mismatch pi2, and the
local balance residual pi3, each weighted and summed in a fixed order so
recomputing the total from the parts is bit-exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .autodiff import Graph
from .data import boundary_pixel_indices


@dataclass(frozen=True)
class LossWeights:
    c0: float = 1e7
    c1: float = 1e4
    c2: float = 1e3
    c3: float = 1e5

    def __post_init__(self):
        for name in ("c0", "c1", "c2", "c3"):
            if getattr(self, name) <= 0:
                raise ValueError(f"loss weight {name} must be positive")


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    mse_e: float
    mse_pi1: float
    mse_pi2: float
    mse_pi3: float

    @staticmethod
    def compose(weights: LossWeights, mse_e: float, mse_pi1: float, mse_pi2: float, mse_pi3: float):
        # fixed accumulation order; the loss graph mirrors it exactly
        total = (
            (weights.c0 * mse_e + weights.c1 * mse_pi1) + weights.c2 * mse_pi2
        ) + weights.c3 * mse_pi3
        return LossBreakdown(total, mse_e, mse_pi1, mse_pi2, mse_pi3)


@lru_cache(maxsize=None)
def first_derivative_matrix(m: int, h: float) -> np.ndarray:
    """Matrix D with (D @ field) differentiating along axis 0 at spacing h."""
    if m < 3:
        raise ValueError("stencils need m >= 3")
    D = np.zeros((m, m))
    for i in range(1, m - 1):
        D[i, i - 1], D[i, i + 1] = -0.5, 0.5
    D[0, 0], D[0, 1], D[0, 2] = -1.5, 2.0, -0.5
    D[-1, -1], D[-1, -2], D[-1, -3] = 1.5, -2.0, 0.5
    D /= h
    D.setflags(write=False)
    return D


def grad2d(field: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """(d/dx, d/dy) of an m x m field."""
    D = first_derivative_matrix(field.shape[0], h)
    return D @ field, field @ D.T


def div2d(qx: np.ndarray, qy: np.ndarray, h: float) -> np.ndarray:
    """Discrete divergence d(qx)/dx + d(qy)/dy."""
    D = first_derivative_matrix(qx.shape[0], h)
    return D @ qx + qy @ D.T


def flux(K_hat: np.ndarray, dudx: np.ndarray, dudy: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Constitutive flux q = -K grad u, elementwise."""
    return -K_hat * dudx, -K_hat * dudy


@lru_cache(maxsize=None)
def flattened_gradient_operators(m: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Right-multiplication operators on row-major flattened field batches.

    For U of shape (batch, m*m): U @ Gx is d/dx, U @ Gy is d/dy.
    """
    D = np.asarray(first_derivative_matrix(m, h))
    eye = np.eye(m)
    Gx = np.kron(D.T, eye)
    Gy = np.kron(eye, D.T)
    Gx.setflags(write=False)
    Gy.setflags(write=False)
    return Gx, Gy


def pgnniv_loss(
    batch: dict[str, np.ndarray],
    u_hat: np.ndarray,
    K_hat: np.ndarray,
    weights: LossWeights,
    pi3_interior_only: bool = False,
) -> LossBreakdown:
    """Weighted physics loss of a batch of predictions.

    `batch` comes from data.batch_arrays: observed fields u (batch x m^2),
    boundary_u, boundary_q, and sources f. MSE(v) sums the squares of all
    components of v and divides by the batch size only.
    """
    u_data = batch["u"]
    n_batch, n_pix = u_data.shape
    m = int(round(n_pix**0.5))
    if m * m != n_pix:
        raise ValueError(f"fields of {n_pix} pixels are not square")
    for name, arr in (("u_hat", u_hat), ("K_hat", K_hat)):
        if arr.shape != u_data.shape:
            raise ValueError(f"{name} shape {arr.shape} does not match data {u_data.shape}")
    if "f" not in batch:
        raise ValueError("batch is missing the source field f")
    h = 1.0 / (m - 1)
    inv_batch = 1.0 / n_batch

    def mse(v: np.ndarray) -> float:
        return float(np.sum(v * v)) * inv_batch

    e = u_hat - u_data
    bidx = boundary_pixel_indices(m)
    pi1 = u_hat[:, bidx] - batch["boundary_u"]

    Gx, Gy = flattened_gradient_operators(m, h)
    dudx = u_hat @ Gx
    dudy = u_hat @ Gy
    qx_hat = -K_hat * dudx
    qy_hat = -K_hat * dudy
    boundary_flux = np.concatenate([qx_hat[:, bidx[: 2 * m]], qy_hat[:, bidx[2 * m :]]], axis=1)
    pi2 = boundary_flux - batch["boundary_q"]

    residual = (qx_hat @ Gx + qy_hat @ Gy) - batch["f"]
    if pi3_interior_only:
        residual = residual[:, interior_pixel_indices(m)]
    pi3 = residual

    return LossBreakdown.compose(weights, mse(e), mse(pi1), mse(pi2), mse(pi3))


@lru_cache(maxsize=None)
def interior_pixel_indices(m: int) -> np.ndarray:
    inner = np.arange(1, m - 1)
    idx = (inner[:, None] * m + inner[None, :]).ravel()
    idx.setflags(write=False)
    return idx


@dataclass
class LossNodes:
    """Node ids of the loss terms inside a graph."""

    total: int
    mse_e: int
    mse_pi1: int
    mse_pi2: int
    mse_pi3: int

    def breakdown(self, graph: Graph) -> LossBreakdown:
        parts = [
            float(graph.value(i)[0, 0])
            for i in (self.mse_e, self.mse_pi1, self.mse_pi2, self.mse_pi3)
        ]
        return LossBreakdown(float(graph.value(self.total)[0, 0]), *parts)


def attach_loss(
    g: Graph,
    u_hat_id: int,
    K_hat_id: int,
    batch: dict[str, np.ndarray],
    weights: LossWeights,
    pi3_interior_only: bool = False,
) -> LossNodes:
    """Append the loss computation to a graph ending at the total-loss node.

    Mirrors pgnniv_loss operation for operation so the two agree bitwise.
    """
    n_batch, n_pix = batch["u"].shape
    m = int(round(n_pix**0.5))
    h = 1.0 / (m - 1)
    inv_batch = 1.0 / n_batch
    bidx = boundary_pixel_indices(m)
    Gx, Gy = flattened_gradient_operators(m, h)

    u_data = g.constant(batch["u"], name="data_u")
    bu_data = g.constant(batch["boundary_u"], name="data_boundary_u")
    bq_data = g.constant(batch["boundary_q"], name="data_boundary_q")
    f_data = g.constant(batch["f"], name="data_f")
    gx = g.constant(np.asarray(Gx), name="op_ddx")
    gy = g.constant(np.asarray(Gy), name="op_ddy")

    e = g.sub(u_hat_id, u_data, name="e")
    pi1 = g.sub(g.gather_cols(u_hat_id, bidx, name="u_hat_boundary"), bu_data, name="pi1")

    dudx = g.matmul(u_hat_id, gx, name="dudx")
    dudy = g.matmul(u_hat_id, gy, name="dudy")
    qx_hat = g.scale(g.mul(K_hat_id, dudx), -1.0, name="qx_hat")
    qy_hat = g.scale(g.mul(K_hat_id, dudy), -1.0, name="qy_hat")
    boundary_flux = g.concat(
        [g.gather_cols(qx_hat, bidx[: 2 * m]), g.gather_cols(qy_hat, bidx[2 * m :])],
        axis=1,
        name="boundary_flux",
    )
    pi2 = g.sub(boundary_flux, bq_data, name="pi2")

    divergence = g.add(g.matmul(qx_hat, gx), g.matmul(qy_hat, gy), name="divergence")
    residual = g.sub(divergence, f_data, name="pi3")
    if pi3_interior_only:
        residual = g.gather_cols(residual, interior_pixel_indices(m), name="pi3_interior")

    mse_e = g.scale(g.sumsq(e), inv_batch, name="mse_e")
    mse_pi1 = g.scale(g.sumsq(pi1), inv_batch, name="mse_pi1")
    mse_pi2 = g.scale(g.sumsq(pi2), inv_batch, name="mse_pi2")
    mse_pi3 = g.scale(g.sumsq(residual), inv_batch, name="mse_pi3")

    weighted = g.add(
        g.add(
            g.add(g.scale(mse_e, weights.c0), g.scale(mse_pi1, weights.c1)),
            g.scale(mse_pi2, weights.c2),
        ),
        g.scale(mse_pi3, weights.c3),
        name="total_loss",
    )
    return LossNodes(weighted, mse_e, mse_pi1, mse_pi2, mse_pi3)
