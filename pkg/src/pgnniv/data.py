"""Synthetic datasets for the nonlinear 2-D diffusion problem.

Two manufactured material families on the unit square, grid nodes
x_i = y_j = (i-1)/(m-1), solution u determined by coefficients (a, b, c):

  material 1: u = sqrt(a + b x + c y),  K(u) = u (1 - u)
  material 2: u = a + b x + c y,        K(u) = 1 / (1 + exp(-5 (u - 2)))

All stored fields satisfy the flux law q = -K grad u and the balance
div q = f exactly, so for material 1 q = (-(b/2)(1-u), -(c/2)(1-u)) with
f = (b^2+c^2)/(4u), and for material 2 q = (-K b, -K c) with
f = -5 (b^2+c^2) exp(-5(u-2)) / (1 + exp(-5(u-2)))^2.

Arrays index as field[i, j] = value at (x_i, y_j); flattening is
row-major, so pixel p = i * m + j.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rng import COEFFS, NOISE, SHUFFLE, stream

MATERIALS = (1, 2)


@dataclass(frozen=True)
class Coefficients:
    a: float
    b: float
    c: float


@dataclass
class SampleBundle:
    """One sample's fields on the m x m grid plus its boundary vectors."""

    coeffs: Coefficients
    material: int
    u: np.ndarray
    qx: np.ndarray
    qy: np.ndarray
    K: np.ndarray
    f: np.ndarray
    boundary_u: np.ndarray
    boundary_q: np.ndarray


@dataclass
class Dataset:
    samples: list[SampleBundle]
    material: int
    m: int
    mu: float
    seed: int

    @property
    def count(self) -> int:
        return len(self.samples)


@dataclass
class SplitIndices:
    """Index partition of a dataset; ae_* fields only for the Autoencoder scheme.

    In the Autoencoder scheme `train`/`test` are the 70/30 split of the
    half that trains the physics-guided model (`ae_pgnniv`), while
    `ae_train_train`/`ae_train_test` split the autoencoder half.
    """

    validation: list[int]
    train: list[int]
    test: list[int]
    ae_train: list[int] = field(default_factory=list)
    ae_pgnniv: list[int] = field(default_factory=list)
    ae_train_train: list[int] = field(default_factory=list)
    ae_train_test: list[int] = field(default_factory=list)


def grid(m: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, m)


def conductivity(material: int, u) -> np.ndarray:
    """The material's true constitutive law K(u), applied elementwise."""
    if material not in MATERIALS:
        raise ValueError(f"material must be one of {MATERIALS}, got {material}")
    u = np.asarray(u, dtype=np.float64)
    if material == 1:
        return u * (1.0 - u)
    return 1.0 / (1.0 + np.exp(-5.0 * (u - 2.0)))


def sample_coefficients(count: int, seed: int) -> list[Coefficients]:
    """i.i.d. uniform [0,1] triples; a < 1e-6 rejected to dodge the sqrt singularity."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = []
    for k in range(count):
        s = stream(seed, COEFFS, k)
        a, b, c = s.uniforms(3)
        while a < 1e-6:
            a, b, c = s.uniforms(3)
        out.append(Coefficients(float(a), float(b), float(c)))
    return out


def evaluate_fields(material: int, coeffs: Coefficients, m: int) -> SampleBundle:
    """Closed-form u, K, q, f of the chosen material at every grid node."""
    if material not in MATERIALS:
        raise ValueError(f"material must be one of {MATERIALS}, got {material}")
    if m < 3:
        raise ValueError("m must be at least 3")
    a, b, c = coeffs.a, coeffs.b, coeffs.c
    x = grid(m)
    X, Y = np.meshgrid(x, x, indexing="ij")
    arg = a + b * X + c * Y
    if material == 1:
        if arg.min() <= 0.0:
            raise ValueError(
                f"material 1 needs a + b x + c y > 0 on the grid; min is {arg.min()}"
            )
        u = np.sqrt(arg)
        K = u * (1.0 - u)
        qx = -0.5 * b * (1.0 - u)
        qy = -0.5 * c * (1.0 - u)
        f = (b * b + c * c) / (4.0 * u)
    else:
        u = arg
        e = np.exp(-5.0 * (u - 2.0))
        K = 1.0 / (1.0 + e)
        qx = -K * b
        qy = -K * c
        f = -5.0 * (b * b + c * c) * e / (1.0 + e) ** 2
    bundle = SampleBundle(coeffs, material, u, qx, qy, K, f, np.empty(0), np.empty(0))
    bundle.boundary_u, bundle.boundary_q = extract_boundaries(bundle)
    return bundle


def boundary_pixel_indices(m: int) -> np.ndarray:
    """Flattened pixel index of each boundary slot, edge order x=0, x=1, y=0, y=1."""
    i = np.arange(m)
    return np.concatenate([i, (m - 1) * m + i, i * m, i * m + (m - 1)])


def extract_boundaries(bundle: SampleBundle) -> tuple[np.ndarray, np.ndarray]:
    """Edge traces of u and of the edge-normal flux component.

    Order: edges x=0, x=1, y=0, y=1, m values each (corners appear in both
    adjacent edges), so each vector has 4m entries. The flux vector takes
    qx on the two x edges and qy on the two y edges.
    """
    u, qx, qy = bundle.u, bundle.qx, bundle.qy
    boundary_u = np.concatenate([u[0, :], u[-1, :], u[:, 0], u[:, -1]])
    boundary_q = np.concatenate([qx[0, :], qx[-1, :], qy[:, 0], qy[:, -1]])
    return boundary_u, boundary_q


def add_noise(bundle: SampleBundle, mu: float, noise_seed: int, sample_index: int = 0) -> SampleBundle:
    """Additive Gaussian noise on the observable fields; the input is never mutated.

    Per object (u with boundary_u, qx, qy, boundary_q) the standard
    deviation is mu times that object's max absolute value in this
    sample. K and f are ground truth and stay untouched. Draw order:
    u row-major, boundary_u, qx, qy, boundary_q.
    """
    if mu < 0:
        raise ValueError("mu must be non-negative")
    if mu == 0:
        return replace(
            bundle,
            u=bundle.u.copy(),
            qx=bundle.qx.copy(),
            qy=bundle.qy.copy(),
            K=bundle.K.copy(),
            f=bundle.f.copy(),
            boundary_u=bundle.boundary_u.copy(),
            boundary_q=bundle.boundary_q.copy(),
        )
    s = stream(noise_seed, NOISE, sample_index)
    m = bundle.u.shape[0]

    def noisy(arr: np.ndarray, sigma: float) -> np.ndarray:
        draws = s.normals(arr.size).reshape(arr.shape)
        return arr + sigma * draws

    sigma_u = mu * float(np.abs(bundle.u).max())
    u = noisy(bundle.u, sigma_u)
    boundary_u = noisy(bundle.boundary_u, sigma_u)
    qx = noisy(bundle.qx, mu * float(np.abs(bundle.qx).max()))
    qy = noisy(bundle.qy, mu * float(np.abs(bundle.qy).max()))
    boundary_q = noisy(bundle.boundary_q, mu * float(np.abs(bundle.boundary_q).max()))
    return replace(
        bundle,
        u=u,
        qx=qx,
        qy=qy,
        K=bundle.K.copy(),
        f=bundle.f.copy(),
        boundary_u=boundary_u,
        boundary_q=boundary_q,
    )


def generate_dataset(material: int, count: int, mu: float, m: int, seed: int) -> Dataset:
    """Sample coefficients, evaluate fields, and apply noise, all from one seed."""
    samples = []
    for k, coeffs in enumerate(sample_coefficients(count, seed)):
        bundle = evaluate_fields(material, coeffs, m)
        samples.append(add_noise(bundle, mu, seed, sample_index=k))
    return Dataset(samples, material, m, mu, seed)


def clean_fields(dataset: Dataset, index: int) -> SampleBundle:
    """Noise-free fields of one sample, recomputed from its coefficients."""
    return evaluate_fields(dataset.material, dataset.samples[index].coeffs, dataset.m)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(dataset: Dataset, scheme: str, seed: int) -> SplitIndices:
    """Partition sample indices; scheme 'standard' or 'autoencoder'.

    standard: 20% validation, then 30% test / 70% train of the remainder.
    autoencoder: 20% validation, remainder halved (autoencoder half first)
    with each half split 30% test / 70% train. Slices are taken in that
    order from one seeded shuffle; fractions round to nearest.
    """
    d = dataset.count
    if d < 10:
        raise ValueError("split needs at least 10 samples")
    if scheme not in ("standard", "autoencoder"):
        raise ValueError(f"unknown split scheme '{scheme}'")
    order = [int(i) for i in stream(seed, SHUFFLE).permutation(d)]
    n_val = _round_half_up(0.2 * d)
    validation, rest = order[:n_val], order[n_val:]

    def split_70_30(indices: list[int], label: str) -> tuple[list[int], list[int]]:
        n_test = _round_half_up(0.3 * len(indices))
        test, train = indices[:n_test], indices[n_test:]
        for part, name in ((test, f"{label} test"), (train, f"{label} train")):
            if not part:
                raise ValueError(f"partition '{name}' would be empty")
        return train, test

    if not validation:
        raise ValueError("partition 'validation' would be empty")
    if scheme == "standard":
        train, test = split_70_30(rest, "standard")
        return SplitIndices(validation, train, test)
    half = len(rest) // 2
    ae_half, pg_half = rest[:half], rest[half:]
    if not ae_half:
        raise ValueError("partition 'ae_train' would be empty")
    ae_tr, ae_te = split_70_30(ae_half, "autoencoder")
    train, test = split_70_30(pg_half, "pgnniv")
    return SplitIndices(
        validation,
        train,
        test,
        ae_train=ae_half,
        ae_pgnniv=pg_half,
        ae_train_train=ae_tr,
        ae_train_test=ae_te,
    )


def batch_arrays(dataset: Dataset, indices) -> dict[str, np.ndarray]:
    """Stacked training arrays for the given samples.

    x is the network input, the concatenation of boundary_u and
    boundary_q (length 8m); u is the flattened observed field; f is the
    flattened source term.
    """
    samples = [dataset.samples[i] for i in indices]
    bu = np.stack([s.boundary_u for s in samples])
    bq = np.stack([s.boundary_q for s in samples])
    return {
        "x": np.concatenate([bu, bq], axis=1),
        "u": np.stack([s.u.ravel() for s in samples]),
        "boundary_u": bu,
        "boundary_q": bq,
        "f": np.stack([s.f.ravel() for s in samples]),
    }


# ---- persistence -------------------------------------------------------


def dataset_filename(material: int, count: int, mu: float, m: int) -> str:
    return f"material{material}_D{count}_mu{mu * 100:g}_m{m}.json"


def save_dataset(dataset: Dataset, path: str) -> None:
    doc = {
        "material": dataset.material,
        "m": dataset.m,
        "mu": dataset.mu,
        "seed": dataset.seed,
        "count": dataset.count,
        "samples": [
            {
                "coeffs": [s.coeffs.a, s.coeffs.b, s.coeffs.c],
                "u": s.u.ravel().tolist(),
                "qx": s.qx.ravel().tolist(),
                "qy": s.qy.ravel().tolist(),
                "K": s.K.ravel().tolist(),
                "f": s.f.ravel().tolist(),
                "boundary_u": s.boundary_u.tolist(),
                "boundary_q": s.boundary_q.tolist(),
            }
            for s in dataset.samples
        ],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        doc = json.load(fh)
    m = doc["m"]
    samples = []
    for rec in doc["samples"]:
        a, b, c = rec["coeffs"]
        samples.append(
            SampleBundle(
                Coefficients(a, b, c),
                doc["material"],
                np.array(rec["u"]).reshape(m, m),
                np.array(rec["qx"]).reshape(m, m),
                np.array(rec["qy"]).reshape(m, m),
                np.array(rec["K"]).reshape(m, m),
                np.array(rec["f"]).reshape(m, m),
                np.array(rec["boundary_u"]),
                np.array(rec["boundary_q"]),
            )
        )
    if len(samples) != doc["count"]:
        raise ValueError(f"dataset file lists count {doc['count']} but has {len(samples)} samples")
    return Dataset(samples, doc["material"], m, doc["mu"], doc["seed"])
