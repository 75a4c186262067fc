"""Reduced-order field reconstructions that replace a trainable decoder.

Three interchangeable low-dimensional representations of m x m fields:

- a truncated real Fourier basis (cosine/sine pairs on the periodic grid,
  ordered by ascending total frequency),
- a proper-orthogonal-decomposition basis obtained from a hand-rolled
  one-sided Jacobi SVD of a snapshot matrix,
- a frozen decoder half of a pretrained dense autoencoder.

Fourier and POD decoding are pure linear maps `basis @ z`; the autoencoder
decoder is a fixed nonlinear map whose weights never receive gradient
updates. Fields are flattened row-major: pixel (i, j) sits at index i*m+j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    AdamState,
    AffineLayer,
    AutodiffError,
    Graph,
    adam_step,
    affine_chain,
    affine_forward,
    backward,
    declare_affine_leaves,
    forward,
    init_affine,
)
from .rng import INIT, stream

Array = np.ndarray

# Autoencoder layer widths between the field and the latent vector, and the
# activation pattern of each half (hidden layers tanh, final layer linear).
AE_HIDDEN = (20, 10)
AE_HALF_ACTIVATIONS = ("tanh", "tanh", "linear")

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100


@dataclass(frozen=True)
class SpectralBasis:
    """Truncated real Fourier basis: columns are orthonormal grid functions."""

    m: int
    n: int
    basis: Array  # (m*m, n)
    mode_order: tuple[tuple[int, int, str], ...]  # (k1, k2, "cos"|"sin") per column


@dataclass(frozen=True)
class PodBasis:
    """Leading right singular vectors of a snapshot matrix, as columns."""

    modes: Array  # (pixels, n), orthonormal columns
    singular_values: Array  # every singular value, descending
    energy_error: float  # fraction of squared-singular-value mass dropped


@dataclass(frozen=True)
class FrozenDecoder:
    """Decoder half of a pretrained autoencoder; weights are never trained."""

    layers: tuple[AffineLayer, ...]  # n -> 10 -> 20 -> pixels
    n: int
    trainable: bool = False


# ---- Fourier basis -----------------------------------------------------


def _mode_key(k1: int, k2: int) -> tuple[int, int]:
    return (k1 + k2, k1)


def enumerate_fourier_modes(m: int) -> list[tuple[int, int, str]]:
    """All m*m independent real Fourier modes on the m x m grid, in order.

    Wavevectors (k1, k2) and (m-k1, m-k2) generate the same cosine and a
    negated sine, so only the lower-frequency representative of each such
    pair is kept; representatives equal to their own partner contribute a
    cosine only (their sine vanishes identically), as does (0, 0). Modes
    are sorted by (k1+k2, k1, cosine-before-sine).
    """
    entries: list[tuple[int, int, str]] = []
    for k1 in range(m):
        for k2 in range(m):
            partner = ((m - k1) % m, (m - k2) % m)
            if _mode_key(*partner) < _mode_key(k1, k2):
                continue  # covered by its lower-frequency partner
            entries.append((k1, k2, "cos"))
            if partner != (k1, k2):
                entries.append((k1, k2, "sin"))
    entries.sort(key=lambda e: (e[0] + e[1], e[0], 0 if e[2] == "cos" else 1))
    return entries


def fourier_basis(m: int, n: int) -> SpectralBasis:
    """First n modes of the real Fourier family, L2-normalized per column."""
    pixels = m * m
    if not 1 <= n <= pixels:
        raise ValueError(f"mode count must lie in [1, {pixels}] for m={m}; got {n}")
    chosen = enumerate_fourier_modes(m)[:n]
    rows = np.repeat(np.arange(m), m)  # i of flat index i*m+j
    cols = np.tile(np.arange(m), m)  # j of flat index
    columns = []
    for k1, k2, phase in chosen:
        angle = 2.0 * np.pi * (k1 * rows + k2 * cols) / m
        col = np.cos(angle) if phase == "cos" else np.sin(angle)
        columns.append(col / np.linalg.norm(col))
    return SpectralBasis(m=m, n=n, basis=np.column_stack(columns), mode_order=tuple(chosen))


def spectral_decode(z, basis: SpectralBasis | PodBasis) -> Array:
    """Linear reconstruction `basis @ z`, reshaped to the square grid."""
    matrix = basis.basis if isinstance(basis, SpectralBasis) else basis.modes
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    if z.size != matrix.shape[1]:
        raise ValueError(f"latent length {z.size} does not match basis with {matrix.shape[1]} modes")
    side = math.isqrt(matrix.shape[0])
    if side * side != matrix.shape[0]:
        raise ValueError(f"basis rows {matrix.shape[0]} do not form a square grid")
    return (matrix @ z).reshape(side, side)


# ---- singular value decomposition --------------------------------------


def compute_svd(snapshots) -> tuple[Array, Array, Array]:
    """Economy SVD `A = U @ diag(s) @ V.T` by one-sided Jacobi rotations.

    Columns of the narrower orientation of A are rotated pairwise until
    mutually orthogonal (relative tolerance 1e-12, at most 100 sweeps);
    column norms become the singular values, returned descending.
    """
    a = np.asarray(snapshots, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("snapshots must be a non-empty 2-D array")
    transposed = a.shape[0] < a.shape[1]
    work = np.array(a.T if transposed else a)
    cols = work.shape[1]
    v = np.eye(cols)
    for _ in range(JACOBI_MAX_SWEEPS):
        rotated = False
        for p in range(cols - 1):
            for q in range(p + 1, cols):
                col_p = work[:, p]
                col_q = work[:, q]
                app = float(col_p @ col_p)
                aqq = float(col_q @ col_q)
                apq = float(col_p @ col_q)
                if abs(apq) <= JACOBI_TOLERANCE * math.sqrt(app * aqq):
                    continue
                rotated = True
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for target in (work, v):
                    tp = target[:, p].copy()
                    target[:, p] = c * tp - s * target[:, q]
                    target[:, q] = s * tp + c * target[:, q]
        if not rotated:
            break
    else:
        gram = work.T @ work
        off = float(np.linalg.norm(gram - np.diag(np.diag(gram))))
        raise RuntimeError(
            f"SVD failed to converge within {JACOBI_MAX_SWEEPS} sweeps; "
            f"off-diagonal norm {off:.3e}"
        )
    norms = np.linalg.norm(work, axis=0)
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    left = np.zeros_like(work)
    for k, idx in enumerate(order):
        if sigma[k] > 0.0:
            left[:, k] = work[:, idx] / sigma[k]
    v = v[:, order]
    if transposed:
        return v, sigma, left
    return left, sigma, v


# ---- proper orthogonal decomposition -----------------------------------


def pod_basis(snapshots, n: int) -> PodBasis:
    """Best rank-n basis for the snapshot rows, with its dropped-energy fraction."""
    a = np.asarray(snapshots, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError("snapshots must be a non-empty 2-D array")
    available = min(a.shape)
    if not 1 <= n <= available:
        raise ValueError(
            f"mode count must lie in [1, {available}] for a {a.shape[0]}x{a.shape[1]} "
            f"snapshot matrix; got {n}"
        )
    _, sigma, v = compute_svd(a)
    total = float(np.sum(sigma**2))
    if total == 0.0:
        raise ValueError("snapshot matrix is identically zero")
    kept = float(np.sum(sigma[:n] ** 2))
    energy_error = max(1.0 - kept / total, 0.0)
    return PodBasis(modes=v[:, :n].copy(), singular_values=sigma, energy_error=energy_error)


# ---- pretrained autoencoder --------------------------------------------


def pretrain_autoencoder(
    fields, n: int, epochs: int, learning_rate: float, seed: int
) -> tuple[tuple[AffineLayer, ...], FrozenDecoder]:
    """Train a dense autoencoder on field samples; freeze its decoder half.

    The stack is pixels -> 20 -> 10 -> n -> 10 -> 20 -> pixels with tanh on
    hidden layers and linear latent/output layers, optimized full-batch by
    Adam on the squared reconstruction error averaged over samples. Returns
    (encoder layers, frozen decoder). Raises RuntimeError with the epoch
    index if the loss leaves the finite range.
    """
    fields = np.asarray(fields, dtype=np.float64)
    if fields.ndim != 2 or fields.shape[0] == 0:
        raise ValueError("fields must be a non-empty (samples x pixels) array")
    if n < 1:
        raise ValueError(f"latent size must be positive; got {n}")
    if epochs < 1:
        raise ValueError(f"epochs must be positive; got {epochs}")
    count, pixels = fields.shape
    sizes = (pixels, *AE_HIDDEN, n, *AE_HIDDEN[::-1], pixels)
    draws = stream(seed, INIT)
    layers = [init_affine(draws, sizes[k], sizes[k + 1]) for k in range(len(sizes) - 1)]

    graph = Graph()
    x_id = graph.constant(fields, name="ae_fields")
    layer_ids, bindings = declare_affine_leaves(graph, layers, "ae")
    out = affine_chain(graph, x_id, layer_ids, AE_HALF_ACTIVATIONS + AE_HALF_ACTIVATIONS, "ae")
    error = graph.sub(out, x_id, name="ae_error")
    graph.scale(graph.sumsq(error), 1.0 / count, name="ae_loss")

    state = AdamState()
    for epoch in range(epochs):
        try:
            loss = float(forward(graph, bindings)[0, 0])
        except AutodiffError as exc:
            raise RuntimeError(f"autoencoder pretraining diverged at epoch {epoch}: {exc}") from exc
        if not math.isfinite(loss):
            raise RuntimeError(
                f"autoencoder pretraining diverged at epoch {epoch}: loss {loss!r}"
            )
        grads = backward(graph)
        adam_step(bindings, grads, state, learning_rate)

    encoder = tuple(layers[:3])
    decoder = FrozenDecoder(layers=tuple(layers[3:]), n=n)
    return encoder, decoder


def ae_encode(field_flat, encoder_layers) -> Array:
    """Latent vector of one flattened field under the encoder half."""
    x = np.asarray(field_flat, dtype=np.float64).reshape(1, -1)
    expected = encoder_layers[0].weights.shape[0]
    if x.shape[1] != expected:
        raise ValueError(f"field length {x.shape[1]} does not match encoder input {expected}")
    return affine_forward(x, encoder_layers, AE_HALF_ACTIVATIONS).reshape(-1)


def ae_decode(z, dec: FrozenDecoder) -> Array:
    """Field reconstructed from a latent vector by the frozen decoder."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != dec.n:
        raise ValueError(f"latent length {z.shape[1]} does not match decoder with n={dec.n}")
    flat = affine_forward(z, dec.layers, AE_HALF_ACTIVATIONS).reshape(-1)
    side = math.isqrt(flat.size)
    if side * side != flat.size:
        raise ValueError(f"decoder output length {flat.size} does not form a square grid")
    return flat.reshape(side, side)


# ---- persistence -------------------------------------------------------


def basis_to_json(basis: SpectralBasis | PodBasis) -> dict:
    """JSON-ready description: kind, sizes, mode bookkeeping, row-major matrix."""
    if isinstance(basis, SpectralBasis):
        return {
            "kind": "fourier",
            "m": basis.m,
            "n": basis.n,
            "mode_order": [[k1, k2, phase] for k1, k2, phase in basis.mode_order],
            "matrix": basis.basis.reshape(-1).tolist(),
        }
    side = math.isqrt(basis.modes.shape[0])
    return {
        "kind": "pod",
        "m": side,
        "n": basis.modes.shape[1],
        "singular_values": np.asarray(basis.singular_values).tolist(),
        "matrix": basis.modes.reshape(-1).tolist(),
    }


def basis_from_json(payload: dict) -> SpectralBasis | PodBasis:
    kind = payload.get("kind")
    m = int(payload["m"])
    n = int(payload["n"])
    matrix = np.asarray(payload["matrix"], dtype=np.float64).reshape(m * m, n)
    if kind == "fourier":
        mode_order = tuple((int(k1), int(k2), str(phase)) for k1, k2, phase in payload["mode_order"])
        return SpectralBasis(m=m, n=n, basis=matrix, mode_order=mode_order)
    if kind == "pod":
        sigma = np.asarray(payload["singular_values"], dtype=np.float64)
        total = float(np.sum(sigma**2))
        kept = float(np.sum(sigma[:n] ** 2))
        energy_error = max(1.0 - kept / total, 0.0) if total > 0.0 else 0.0
        return PodBasis(modes=matrix, singular_values=sigma, energy_error=energy_error)
    raise ValueError(f"unknown basis kind {kind!r}")


def save_basis(basis: SpectralBasis | PodBasis, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(basis_to_json(basis), handle)


def load_basis(path: str) -> SpectralBasis | PodBasis:
    with open(path, encoding="utf-8") as handle:
        return basis_from_json(json.load(handle))


def _layer_to_json(layer: AffineLayer) -> dict:
    return {
        "rows": layer.weights.shape[0],
        "cols": layer.weights.shape[1],
        "weights": layer.weights.reshape(-1).tolist(),
        "bias": layer.bias.reshape(-1).tolist(),
    }


def _layer_from_json(doc: dict) -> AffineLayer:
    rows, cols = int(doc["rows"]), int(doc["cols"])
    weights = np.asarray(doc["weights"], dtype=np.float64).reshape(rows, cols)
    bias = np.asarray(doc["bias"], dtype=np.float64).reshape(1, cols)
    return AffineLayer(weights, bias)


def autoencoder_to_json(
    encoder_layers: tuple[AffineLayer, ...], frozen: FrozenDecoder
) -> dict:
    return {
        "kind": "autoencoder",
        "n": frozen.n,
        "encoder": [_layer_to_json(layer) for layer in encoder_layers],
        "decoder": [_layer_to_json(layer) for layer in frozen.layers],
    }


def autoencoder_from_json(payload: dict) -> tuple[tuple[AffineLayer, ...], FrozenDecoder]:
    if payload.get("kind") != "autoencoder":
        raise ValueError(f"unknown autoencoder kind {payload.get('kind')!r}")
    encoder = tuple(_layer_from_json(doc) for doc in payload["encoder"])
    decoder = tuple(_layer_from_json(doc) for doc in payload["decoder"])
    return encoder, FrozenDecoder(layers=decoder, n=int(payload["n"]))


def save_autoencoder(
    encoder_layers: tuple[AffineLayer, ...], frozen: FrozenDecoder, path: str
) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(autoencoder_to_json(encoder_layers, frozen), handle)


def load_autoencoder(path: str) -> tuple[tuple[AffineLayer, ...], FrozenDecoder]:
    with open(path, encoding="utf-8") as handle:
        return autoencoder_from_json(json.load(handle))
