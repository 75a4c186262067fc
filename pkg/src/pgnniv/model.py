"""The two coupled networks and their parameter accounting.

The predictive network maps boundary measurements (length 8m) through an
encoder 8m -> 20 -> 10 -> n to a latent vector, then reconstructs the full
m x m field through one of four decoders: a trainable dense stack
n -> 10 -> 20 -> m*m, a fixed Fourier basis, a fixed POD basis, or a frozen
pretrained autoencoder decoder. The explanatory network is a single scalar
map u -> K shared across every grid node: 1 -> 5 channel expansion, a
5 -> 10 -> 5 dense core, and a 5 -> 1 contraction.

Hidden layers use tanh; latent and output layers are linear so latent codes
and field values range over all reals.

Parameter counts are reported two ways: the closed-form expressions
P_encoding = 160*m + 230 + 11*n and P_decoding = 230 + 10*n + 21*m*m
(whose sum is P_pre for the trainable decoder), and the literal count of
trainable arrays of a built model; the two agree by construction. The
explanatory net counts 131 parameters as implemented; a nominal figure of
161 circulates for this layout and is reported alongside, never silently
substituted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    AffineLayer,
    Graph,
    affine_chain,
    affine_forward,
    init_affine,
)
from .basis import (
    AE_HALF_ACTIVATIONS,
    FrozenDecoder,
    PodBasis,
    SpectralBasis,
    basis_from_json,
    basis_to_json,
)
from .rng import INIT, stream

Array = np.ndarray

DECODER_KINDS = ("trainable", "fourier", "pod", "autoencoder")
ENCODER_HIDDEN = (20, 10)
DECODER_HIDDEN = (10, 20)
CHAIN_ACTIVATIONS = ("tanh", "tanh", "linear")
EXPLANATORY_ACTIVATIONS = ("tanh", "tanh", "tanh", "linear")

# Literal count of the explanatory layers below is 131; 161 is a nominal
# figure often quoted for this architecture. Both are surfaced by
# count_parameters so the discrepancy stays visible.
EXPLANATORY_COUNT_NOMINAL = 161


@dataclass(frozen=True)
class PredictiveSpec:
    """Grid size, latent size, and decoder kind of the predictive network."""

    m: int
    n: int
    decoder: str

    def __post_init__(self):
        if self.m < 3:
            raise ValueError(f"grid size must be at least 3; got {self.m}")
        if self.n < 1:
            raise ValueError(f"latent size must be positive; got {self.n}")
        if self.decoder not in DECODER_KINDS:
            raise ValueError(
                f"unknown decoder kind {self.decoder!r}; valid kinds: {', '.join(DECODER_KINDS)}"
            )

    @property
    def input_size(self) -> int:
        return 8 * self.m

    @property
    def output_size(self) -> int:
        return self.m * self.m


@dataclass(frozen=True)
class ExplanatorySpec:
    """Widths of the shared per-node scalar map u -> K."""

    channels: int = 5
    hidden: int = 10

    def __post_init__(self):
        if self.channels < 1 or self.hidden < 1:
            raise ValueError("explanatory widths must be positive")


@dataclass
class PredictiveHalf:
    spec: PredictiveSpec
    encoder: tuple[AffineLayer, ...]
    decoder: tuple[AffineLayer, ...]  # empty unless the trainable kind
    basis: SpectralBasis | PodBasis | None
    frozen_decoder: FrozenDecoder | None


@dataclass
class ExplanatoryHalf:
    spec: ExplanatorySpec
    layers: tuple[AffineLayer, ...]


@dataclass
class Model:
    """Both halves plus the per-leaf trainability mask."""

    predictive: PredictiveHalf
    explanatory: ExplanatoryHalf
    seed: int
    trainable: dict[str, bool] = field(default_factory=dict)


# ---- construction ------------------------------------------------------


def _check_attachment(spec: PredictiveSpec, basis, frozen_decoder) -> None:
    kind = spec.decoder
    pixels = spec.output_size
    if kind in ("fourier", "pod"):
        if basis is None:
            raise ValueError(f"decoder kind {kind!r} needs an attached basis")
        matrix = basis.basis if isinstance(basis, SpectralBasis) else basis.modes
        if matrix.shape != (pixels, spec.n):
            raise ValueError(
                f"attached basis is {matrix.shape[0]}x{matrix.shape[1]}; decoder kind "
                f"{kind!r} at m={spec.m}, n={spec.n} needs {pixels}x{spec.n}"
            )
    elif kind == "autoencoder":
        if frozen_decoder is None:
            raise ValueError("decoder kind 'autoencoder' needs an attached frozen decoder")
        if frozen_decoder.n != spec.n:
            raise ValueError(
                f"frozen decoder has latent size {frozen_decoder.n}; spec has n={spec.n}"
            )
        out = frozen_decoder.layers[-1].weights.shape[1]
        if out != pixels:
            raise ValueError(f"frozen decoder emits {out} pixels; spec needs {pixels}")


def build_predictive(
    spec: PredictiveSpec,
    seed: int,
    basis: SpectralBasis | PodBasis | None = None,
    frozen_decoder: FrozenDecoder | None = None,
) -> PredictiveHalf:
    """Seeded encoder (and, for the trainable kind, decoder) initialization."""
    _check_attachment(spec, basis, frozen_decoder)
    draws = stream(seed, INIT, 1)
    sizes = (spec.input_size, *ENCODER_HIDDEN, spec.n)
    encoder = tuple(init_affine(draws, sizes[k], sizes[k + 1]) for k in range(3))
    decoder: tuple[AffineLayer, ...] = ()
    if spec.decoder == "trainable":
        dsizes = (spec.n, *DECODER_HIDDEN, spec.output_size)
        decoder = tuple(init_affine(draws, dsizes[k], dsizes[k + 1]) for k in range(3))
    return PredictiveHalf(
        spec=spec,
        encoder=encoder,
        decoder=decoder,
        basis=basis if spec.decoder in ("fourier", "pod") else None,
        frozen_decoder=frozen_decoder if spec.decoder == "autoencoder" else None,
    )


def build_explanatory(spec: ExplanatorySpec, seed: int) -> ExplanatoryHalf:
    """Seeded initialization of the shared per-node map."""
    draws = stream(seed, INIT, 2)
    sizes = (1, spec.channels, spec.hidden, spec.channels, 1)
    layers = tuple(init_affine(draws, sizes[k], sizes[k + 1]) for k in range(4))
    return ExplanatoryHalf(spec=spec, layers=layers)


def build_model(
    predictive_spec: PredictiveSpec,
    explanatory_spec: ExplanatorySpec,
    seed: int,
    basis: SpectralBasis | PodBasis | None = None,
    frozen_decoder: FrozenDecoder | None = None,
) -> Model:
    """Both halves from one seed, every owned parameter marked trainable."""
    predictive = build_predictive(predictive_spec, seed, basis, frozen_decoder)
    explanatory = build_explanatory(explanatory_spec, seed)
    model = Model(predictive=predictive, explanatory=explanatory, seed=seed)
    model.trainable = {name: kind != "ae" for name, _, kind in _leaf_triples(model)}
    return model


# ---- leaf enumeration --------------------------------------------------


def _leaf_triples(model: Model) -> list[tuple[str, Array, str]]:
    """Every parameter array as (name, array, group) in a fixed order."""
    triples: list[tuple[str, Array, str]] = []

    def push(prefix: str, layers) -> None:
        for k, layer in enumerate(layers):
            triples.append((f"{prefix}_w{k}", layer.weights, prefix))
            triples.append((f"{prefix}_b{k}", layer.bias, prefix))

    push("enc", model.predictive.encoder)
    push("dec", model.predictive.decoder)
    if model.predictive.frozen_decoder is not None:
        push("ae", model.predictive.frozen_decoder.layers)
    push("exp", model.explanatory.layers)
    return triples


def leaf_entries(model: Model) -> list[tuple[str, Array, bool]]:
    """(name, array, trainable) for every parameter leaf, frozen ones included."""
    return [
        (name, arr, bool(model.trainable.get(name, False)))
        for name, arr, _ in _leaf_triples(model)
    ]


def trainable_arrays(model: Model) -> dict[str, Array]:
    """The arrays an optimizer may update, keyed by leaf name."""
    return {name: arr for name, arr, flag in leaf_entries(model) if flag}


def freeze_group(model: Model, prefix: str) -> None:
    """Mark every leaf of a group (e.g. 'enc') non-trainable."""
    hit = False
    for name in model.trainable:
        if name.startswith(f"{prefix}_"):
            model.trainable[name] = False
            hit = True
    if not hit:
        raise ValueError(f"no parameter group named {prefix!r}")


# ---- plain inference ---------------------------------------------------


def encode_inputs(model: Model, x_batch: Array) -> Array:
    """(B, 8m) boundary inputs -> (B, n) latent codes."""
    return affine_forward(x_batch, model.predictive.encoder, CHAIN_ACTIVATIONS)


def decode_latent(model: Model, z_batch: Array) -> Array:
    """(B, n) latent codes -> (B, m*m) flattened fields, per decoder kind."""
    half = model.predictive
    kind = half.spec.decoder
    if kind == "trainable":
        return affine_forward(z_batch, half.decoder, CHAIN_ACTIVATIONS)
    if kind in ("fourier", "pod"):
        matrix = half.basis.basis if isinstance(half.basis, SpectralBasis) else half.basis.modes
        return z_batch @ matrix.T
    return affine_forward(z_batch, half.frozen_decoder.layers, AE_HALF_ACTIVATIONS)


def predict_fields(model: Model, x_batch: Array) -> tuple[Array, Array]:
    """Batched prediction: (B, 8m) -> ((B, m*m) fields, (B, n) latents)."""
    x_batch = np.asarray(x_batch, dtype=np.float64)
    expected = model.predictive.spec.input_size
    if x_batch.ndim != 2 or x_batch.shape[1] != expected:
        raise ValueError(f"inputs must be (batch, {expected}); got {x_batch.shape}")
    z = encode_inputs(model, x_batch)
    return decode_latent(model, z), z


def predict_field(model: Model, x) -> tuple[Array, Array]:
    """One boundary-input vector -> (m x m field, latent vector)."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    expected = model.predictive.spec.input_size
    if x.size != expected:
        raise ValueError(f"input length {x.size} does not match expected {expected}")
    fields, z = predict_fields(model, x.reshape(1, -1))
    m = model.predictive.spec.m
    return fields[0].reshape(m, m), z[0]


def explain_K(model: Model, u_field) -> Array:
    """Apply the shared scalar map u -> K at every entry of any-shaped input."""
    u_field = np.asarray(u_field, dtype=np.float64)
    flat = u_field.reshape(-1, 1)
    out = affine_forward(flat, model.explanatory.layers, EXPLANATORY_ACTIVATIONS)
    return out.reshape(u_field.shape)


# ---- graph assembly ----------------------------------------------------


def _declare_masked(
    graph: Graph,
    model: Model,
    layers,
    prefix: str,
    param_leaves: dict[str, int],
    bindings: dict[int, Array],
) -> list[tuple[int, int]]:
    """Leaves for trainable arrays, inlined constants for frozen ones."""
    ids = []
    for k, layer in enumerate(layers):
        pair = []
        for suffix, arr in ((f"w{k}", layer.weights), (f"b{k}", layer.bias)):
            name = f"{prefix}_{suffix}"
            if model.trainable.get(name, False):
                nid = graph.leaf(arr.shape[0], arr.shape[1], name=name)
                param_leaves[name] = nid
                bindings[nid] = arr
            else:
                nid = graph.constant(arr, name=name)
            pair.append(nid)
        ids.append((pair[0], pair[1]))
    return ids


def attach_predictive(
    graph: Graph, model: Model, x_id: int
) -> tuple[int, int, dict[str, int], dict[int, Array]]:
    """Encoder + decoder nodes on top of an input node of shape (B, 8m).

    Returns (u_hat node, latent node, trainable leaf ids by name, their
    bindings). Frozen parameters enter as constants, so only the trainable
    ones appear in the binding map.
    """
    half = model.predictive
    param_leaves: dict[str, int] = {}
    bindings: dict[int, Array] = {}
    enc_ids = _declare_masked(graph, model, half.encoder, "enc", param_leaves, bindings)
    z_id = affine_chain(graph, x_id, enc_ids, CHAIN_ACTIVATIONS, "enc")
    u_hat, dec_leaves, dec_bindings = attach_decoder(graph, model, z_id)
    param_leaves.update(dec_leaves)
    bindings.update(dec_bindings)
    return u_hat, z_id, param_leaves, bindings


def attach_decoder(
    graph: Graph, model: Model, z_id: int
) -> tuple[int, dict[str, int], dict[int, Array]]:
    """Decoder nodes only, on top of a latent node of shape (B, n).

    Serves training modes that bypass a frozen encoder by feeding
    precomputed latent codes.
    """
    half = model.predictive
    param_leaves: dict[str, int] = {}
    bindings: dict[int, Array] = {}
    kind = half.spec.decoder
    if kind == "trainable":
        dec_ids = _declare_masked(graph, model, half.decoder, "dec", param_leaves, bindings)
        u_hat = affine_chain(graph, z_id, dec_ids, CHAIN_ACTIVATIONS, "dec")
    elif kind in ("fourier", "pod"):
        matrix = half.basis.basis if isinstance(half.basis, SpectralBasis) else half.basis.modes
        basis_t = graph.constant(np.ascontiguousarray(matrix.T), name="basis_t")
        u_hat = graph.matmul(z_id, basis_t, name="decode")
    else:
        ae_ids = _declare_masked(
            graph, model, half.frozen_decoder.layers, "ae", param_leaves, bindings
        )
        u_hat = affine_chain(graph, z_id, ae_ids, AE_HALF_ACTIVATIONS, "ae")
    return u_hat, param_leaves, bindings


def attach_explanatory(
    graph: Graph, model: Model, field_id: int
) -> tuple[int, dict[str, int], dict[int, Array]]:
    """Shared per-node map applied to a (B, m*m) field node; returns K_hat."""
    rows, cols = graph.nodes[field_id].rows, graph.nodes[field_id].cols
    param_leaves: dict[str, int] = {}
    bindings: dict[int, Array] = {}
    exp_ids = _declare_masked(
        graph, model, model.explanatory.layers, "exp", param_leaves, bindings
    )
    column = graph.reshape(field_id, rows * cols, 1, name="exp_in")
    out = affine_chain(graph, column, exp_ids, EXPLANATORY_ACTIVATIONS, "exp")
    k_hat = graph.reshape(out, rows, cols, name="k_hat")
    return k_hat, param_leaves, bindings


# ---- parameter accounting ----------------------------------------------


def parameter_formulas(m: int, n: int, decoder: str = "trainable") -> dict[str, int]:
    """Closed-form trainable counts for the predictive halves."""
    encoding = 160 * m + 230 + 11 * n
    decoding = 230 + 10 * n + 21 * m * m if decoder == "trainable" else 0
    return {"P_encoding": encoding, "P_decoding": decoding, "P_pre": encoding + decoding}


def _explanatory_formula(spec: ExplanatorySpec) -> int:
    c, h = spec.channels, spec.hidden
    return (1 * c + c) + (c * h + h) + (h * c + c) + (c * 1 + 1)


def count_parameters(obj) -> dict[str, int]:
    """Trainable-parameter counts, keyed P_encoding/P_decoding/P_pre/P_exp.

    For a spec the closed-form expressions are evaluated; for a built model
    the trainable arrays are literally counted (so frozen groups count 0).
    P_exp_nominal carries the nominal 161 figure alongside the literal count.
    """
    if isinstance(obj, PredictiveSpec):
        counts = parameter_formulas(obj.m, obj.n, obj.decoder)
        counts["P_exp"] = _explanatory_formula(ExplanatorySpec())
    elif isinstance(obj, Model):
        groups = {"enc": 0, "dec": 0, "exp": 0, "ae": 0}
        for name, arr, trainable in leaf_entries(obj):
            if trainable:
                groups[name.split("_")[0]] += arr.size
        counts = {
            "P_encoding": groups["enc"],
            "P_decoding": groups["dec"] + groups["ae"],
            "P_pre": groups["enc"] + groups["dec"] + groups["ae"],
            "P_exp": groups["exp"],
        }
    else:
        raise TypeError(f"count_parameters takes a PredictiveSpec or Model; got {type(obj)!r}")
    counts["P_exp_nominal"] = EXPLANATORY_COUNT_NOMINAL
    return counts


# ---- checkpoints -------------------------------------------------------


def checkpoint_to_json(model: Model) -> dict:
    """Everything needed to rebuild the model: specs, seed, leaves, basis."""
    return {
        "spec": {
            "m": model.predictive.spec.m,
            "n": model.predictive.spec.n,
            "decoder": model.predictive.spec.decoder,
            "explanatory": {
                "channels": model.explanatory.spec.channels,
                "hidden": model.explanatory.spec.hidden,
            },
        },
        "seed": model.seed,
        "leaves": [
            {
                "name": name,
                "rows": arr.shape[0],
                "cols": arr.shape[1],
                "values": arr.reshape(-1).tolist(),
                "trainable": trainable,
            }
            for name, arr, trainable in leaf_entries(model)
        ],
        "basis": basis_to_json(model.predictive.basis)
        if model.predictive.basis is not None
        else None,
    }


def _layers_from_leaves(leaves: dict[str, Array], prefix: str) -> tuple[AffineLayer, ...]:
    layers = []
    for k in range(len([n for n in leaves if n.startswith(f"{prefix}_w")])):
        layers.append(AffineLayer(leaves[f"{prefix}_w{k}"], leaves[f"{prefix}_b{k}"]))
    return tuple(layers)


def model_from_json(payload: dict) -> Model:
    spec_info = payload["spec"]
    pspec = PredictiveSpec(
        m=int(spec_info["m"]), n=int(spec_info["n"]), decoder=str(spec_info["decoder"])
    )
    espec = ExplanatorySpec(
        channels=int(spec_info["explanatory"]["channels"]),
        hidden=int(spec_info["explanatory"]["hidden"]),
    )
    arrays: dict[str, Array] = {}
    mask: dict[str, bool] = {}
    for leaf in payload["leaves"]:
        arr = np.asarray(leaf["values"], dtype=np.float64).reshape(leaf["rows"], leaf["cols"])
        arrays[leaf["name"]] = arr
        mask[leaf["name"]] = bool(leaf["trainable"])
    basis = basis_from_json(payload["basis"]) if payload.get("basis") else None
    frozen = None
    if pspec.decoder == "autoencoder":
        frozen = FrozenDecoder(layers=_layers_from_leaves(arrays, "ae"), n=pspec.n)
    predictive = PredictiveHalf(
        spec=pspec,
        encoder=_layers_from_leaves(arrays, "enc"),
        decoder=_layers_from_leaves(arrays, "dec"),
        basis=basis,
        frozen_decoder=frozen,
    )
    explanatory = ExplanatoryHalf(spec=espec, layers=_layers_from_leaves(arrays, "exp"))
    model = Model(
        predictive=predictive,
        explanatory=explanatory,
        seed=int(payload["seed"]),
        trainable=mask,
    )
    _check_attachment(pspec, basis, frozen)
    if len(predictive.encoder) != 3 or len(explanatory.layers) != 4:
        raise ValueError("checkpoint is missing encoder or explanatory leaves")
    return model


def save_checkpoint(model: Model, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(checkpoint_to_json(model), handle)


def load_checkpoint(path: str) -> Model:
    with open(path, encoding="utf-8") as handle:
        return model_from_json(json.load(handle))
