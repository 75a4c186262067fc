"""Reverse-mode automatic differentiation on dense 2-D float64 arrays.

A Graph is a static, topologically ordered list of operation nodes built
once and evaluated many times. `forward` caches every intermediate so
`backward` can accumulate vector-Jacobian products down to the leaves.
The op vocabulary is the small set the networks and physics penalties
need: matmul, add (with row broadcast for biases), elementwise multiply,
tanh, subtract, sum of squares, scalar scale, row/column gather,
concatenation, and reshape.

All arithmetic is 64-bit; every completed node value is checked finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

Array = np.ndarray


class AutodiffError(Exception):
    """Raised for malformed graphs, bad bindings, or non-finite values."""


@dataclass
class Node:
    op: str
    inputs: tuple[int, ...]
    rows: int
    cols: int
    attr: object = None
    name: str = ""


@dataclass
class Graph:
    """Static computation graph; the last added node is the output."""

    nodes: list[Node] = field(default_factory=list)
    _values: list[Array | None] = field(default_factory=list)
    _grads: list[Array | None] = field(default_factory=list)
    _defaults: dict[int, Array] = field(default_factory=dict)
    _live: list[bool] | None = None
    _forward_done: bool = False
    backward_calls: int = 0

    # ---- construction -------------------------------------------------

    def _push(self, node: Node) -> int:
        nid = len(self.nodes)
        if not node.name:
            node.name = f"{node.op}#{nid}"
        self.nodes.append(node)
        self._values.append(None)
        self._grads.append(None)
        return nid

    def _shape(self, nid: int) -> tuple[int, int]:
        n = self.nodes[nid]
        return n.rows, n.cols

    def _live_mask(self) -> list[bool]:
        """live[nid] iff a differentiable (non-constant) leaf feeds node nid.

        Backward skips vector-Jacobian products into dead branches, so fixed
        data arrays, operator stencils, and frozen bases cost nothing there.
        """
        if self._live is None or len(self._live) != len(self.nodes):
            live: list[bool] = []
            for nid, node in enumerate(self.nodes):
                if node.op == "leaf":
                    live.append(nid not in self._defaults)
                else:
                    live.append(any(live[i] for i in node.inputs))
            self._live = live
        return self._live

    def leaf(self, rows: int, cols: int, name: str = "") -> int:
        return self._push(Node("leaf", (), rows, cols, name=name))

    def constant(self, value: Array, name: str = "") -> int:
        """A leaf with a fixed value; backward never differentiates into it."""
        value = np.asarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise AutodiffError(f"constant '{name}' must be 2-D, got ndim {value.ndim}")
        nid = self._push(Node("leaf", (), value.shape[0], value.shape[1], name=name))
        self._defaults[nid] = value
        return nid

    def matmul(self, a: int, b: int, name: str = "") -> int:
        (ra, ca), (rb, cb) = self._shape(a), self._shape(b)
        if ca != rb:
            raise AutodiffError(f"matmul '{name or len(self.nodes)}': inner dims {ca} vs {rb}")
        return self._push(Node("matmul", (a, b), ra, cb, name=name))

    def add(self, a: int, b: int, name: str = "") -> int:
        (ra, ca), (rb, cb) = self._shape(a), self._shape(b)
        if (ra, ca) == (rb, cb):
            return self._push(Node("add", (a, b), ra, ca, name=name))
        if rb == 1 and cb == ca:
            # row vector broadcast over the rows of a (bias add)
            return self._push(Node("add_rowbcast", (a, b), ra, ca, name=name))
        raise AutodiffError(f"add '{name or len(self.nodes)}': shapes {(ra, ca)} vs {(rb, cb)}")

    def mul(self, a: int, b: int, name: str = "") -> int:
        if self._shape(a) != self._shape(b):
            raise AutodiffError(
                f"mul '{name or len(self.nodes)}': shapes {self._shape(a)} vs {self._shape(b)}"
            )
        ra, ca = self._shape(a)
        return self._push(Node("mul", (a, b), ra, ca, name=name))

    def tanh(self, a: int, name: str = "") -> int:
        ra, ca = self._shape(a)
        return self._push(Node("tanh", (a,), ra, ca, name=name))

    def sub(self, a: int, b: int, name: str = "") -> int:
        if self._shape(a) != self._shape(b):
            raise AutodiffError(
                f"sub '{name or len(self.nodes)}': shapes {self._shape(a)} vs {self._shape(b)}"
            )
        ra, ca = self._shape(a)
        return self._push(Node("sub", (a, b), ra, ca, name=name))

    def sumsq(self, a: int, name: str = "") -> int:
        return self._push(Node("sumsq", (a,), 1, 1, name=name))

    def scale(self, a: int, alpha: float, name: str = "") -> int:
        ra, ca = self._shape(a)
        return self._push(Node("scale", (a,), ra, ca, attr=float(alpha), name=name))

    def gather_rows(self, a: int, indices, name: str = "") -> int:
        idx = np.asarray(indices, dtype=np.intp)
        ra, ca = self._shape(a)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= ra:
            raise AutodiffError(f"gather_rows '{name or len(self.nodes)}': indices out of range")
        return self._push(Node("gather_rows", (a,), idx.size, ca, attr=idx, name=name))

    def gather_cols(self, a: int, indices, name: str = "") -> int:
        idx = np.asarray(indices, dtype=np.intp)
        ra, ca = self._shape(a)
        if idx.size == 0 or idx.min() < 0 or idx.max() >= ca:
            raise AutodiffError(f"gather_cols '{name or len(self.nodes)}': indices out of range")
        return self._push(Node("gather_cols", (a,), ra, idx.size, attr=idx, name=name))

    def concat(self, ids, axis: int, name: str = "") -> int:
        ids = tuple(ids)
        if not ids:
            raise AutodiffError("concat: no inputs")
        if axis not in (0, 1):
            raise AutodiffError(f"concat: axis must be 0 or 1, got {axis}")
        shapes = [self._shape(i) for i in ids]
        other = 1 - axis
        if any(s[other] != shapes[0][other] for s in shapes):
            raise AutodiffError(f"concat '{name or len(self.nodes)}': mismatched shapes {shapes}")
        total = sum(s[axis] for s in shapes)
        rows, cols = (total, shapes[0][1]) if axis == 0 else (shapes[0][0], total)
        return self._push(Node("concat", ids, rows, cols, attr=axis, name=name))

    def reshape(self, a: int, rows: int, cols: int, name: str = "") -> int:
        ra, ca = self._shape(a)
        if ra * ca != rows * cols:
            raise AutodiffError(
                f"reshape '{name or len(self.nodes)}': {ra}x{ca} has no {rows}x{cols} view"
            )
        return self._push(Node("reshape", (a,), rows, cols, name=name))

    # ---- inspection ---------------------------------------------------

    def leaf_ids(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.op == "leaf"]

    def value(self, nid: int) -> Array:
        v = self._values[nid]
        if v is None:
            raise AutodiffError(f"no cached value for node '{self.nodes[nid].name}'; run forward")
        return v

    @property
    def output_id(self) -> int:
        if not self.nodes:
            raise AutodiffError("empty graph")
        return len(self.nodes) - 1


def forward(graph: Graph, leaf_bindings: dict[int, Array] | None = None) -> Array:
    """Evaluate the graph, caching every intermediate for backward.

    Leaves take their value from `leaf_bindings`, falling back to the
    value stored by `constant`. Raises AutodiffError on a missing or
    mis-shaped binding or a non-finite intermediate, naming the node.
    """
    bindings = leaf_bindings or {}
    values = graph._values
    # overflow/invalid warnings are redundant: the per-node finite check
    # below converts any non-finite value into a named failure
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward_unchecked(graph, bindings, values)


def _forward_unchecked(graph: Graph, bindings, values) -> Array:
    for nid, node in enumerate(graph.nodes):
        op = node.op
        if op == "leaf":
            v = bindings.get(nid)
            if v is None:
                v = graph._defaults.get(nid)
            if v is None:
                raise AutodiffError(f"leaf '{node.name}' has no binding and no stored value")
            if v.shape != (node.rows, node.cols):
                raise AutodiffError(
                    f"leaf '{node.name}' expects {(node.rows, node.cols)}, got {v.shape}"
                )
        elif op == "matmul":
            values_a, values_b = values[node.inputs[0]], values[node.inputs[1]]
            v = values_a @ values_b
        elif op == "add":
            v = values[node.inputs[0]] + values[node.inputs[1]]
        elif op == "add_rowbcast":
            v = values[node.inputs[0]] + values[node.inputs[1]]
        elif op == "mul":
            v = values[node.inputs[0]] * values[node.inputs[1]]
        elif op == "tanh":
            v = np.tanh(values[node.inputs[0]])
        elif op == "sub":
            v = values[node.inputs[0]] - values[node.inputs[1]]
        elif op == "sumsq":
            a = values[node.inputs[0]]
            v = np.array([[float(np.sum(a * a))]])
        elif op == "scale":
            v = values[node.inputs[0]] * node.attr
        elif op == "gather_rows":
            v = values[node.inputs[0]][node.attr, :]
        elif op == "gather_cols":
            v = values[node.inputs[0]][:, node.attr]
        elif op == "concat":
            v = np.concatenate([values[i] for i in node.inputs], axis=node.attr)
        elif op == "reshape":
            v = values[node.inputs[0]].reshape(node.rows, node.cols)
        else:
            raise AutodiffError(f"unknown op kind '{op}'")
        # cheap screen first: a lone NaN or Inf makes the sum non-finite;
        # confirm elementwise so huge-but-finite values do not false-alarm
        screen = float(np.sum(v))
        if not math.isfinite(screen) and not np.isfinite(v).all():
            raise AutodiffError(f"non-finite value at node '{node.name}'")
        values[nid] = v
    graph._forward_done = True
    return values[graph.output_id]


def backward(graph: Graph) -> dict[int, Array]:
    """Accumulate d(output)/d(leaf) for every differentiable leaf.

    Requires a prior forward pass and a 1x1 output node.  Leaves created by
    `constant` are non-differentiable: branches that reach no other kind of
    leaf are skipped entirely, and constants report a zero gradient.
    Accumulators are reset afterward.
    """
    if not graph._forward_done:
        raise AutodiffError("backward before forward")
    out = graph.output_id
    root = graph.nodes[out]
    if (root.rows, root.cols) != (1, 1):
        raise AutodiffError(f"backward needs a scalar root; '{root.name}' is {root.rows}x{root.cols}")
    values = graph._values
    live = graph._live_mask()
    grads: list[Array | None] = graph._grads
    for i in range(len(grads)):
        grads[i] = None
    # pass-through VJPs hand over views or shared arrays; `owned` marks
    # accumulators that are safe to mutate in place
    owned = [False] * len(grads)
    grads[out] = np.ones((1, 1))
    owned[out] = True

    def accumulate(nid: int, contribution: Array) -> None:
        if grads[nid] is None:
            grads[nid] = contribution
        elif owned[nid]:
            grads[nid] += contribution
        else:
            grads[nid] = grads[nid] + contribution
            owned[nid] = True

    for nid in range(out, -1, -1):
        g = grads[nid]
        if g is None:
            continue
        node = graph.nodes[nid]
        op = node.op
        if op == "leaf":
            continue
        if op == "matmul":
            a, b = node.inputs
            if live[a]:
                accumulate(a, g @ values[b].T)
            if live[b]:
                accumulate(b, values[a].T @ g)
        elif op == "add":
            a, b = node.inputs
            if live[a]:
                accumulate(a, g)
            if live[b]:
                accumulate(b, g)
        elif op == "add_rowbcast":
            a, b = node.inputs
            if live[a]:
                accumulate(a, g)
            if live[b]:
                accumulate(b, g.sum(axis=0, keepdims=True))
        elif op == "mul":
            a, b = node.inputs
            if live[a]:
                accumulate(a, g * values[b])
            if live[b]:
                accumulate(b, g * values[a])
        elif op == "tanh":
            (a,) = node.inputs
            if live[a]:
                accumulate(a, g * (1.0 - values[nid] ** 2))
        elif op == "sub":
            a, b = node.inputs
            if live[a]:
                accumulate(a, g)
            if live[b]:
                accumulate(b, -g)
        elif op == "sumsq":
            (a,) = node.inputs
            if live[a]:
                accumulate(a, (2.0 * float(g[0, 0])) * values[a])
        elif op == "scale":
            (a,) = node.inputs
            if live[a]:
                accumulate(a, g * node.attr)
        elif op == "gather_rows":
            (a,) = node.inputs
            if live[a]:
                d = np.zeros((graph.nodes[a].rows, graph.nodes[a].cols))
                np.add.at(d, node.attr, g)
                accumulate(a, d)
        elif op == "gather_cols":
            (a,) = node.inputs
            if live[a]:
                d = np.zeros((graph.nodes[a].rows, graph.nodes[a].cols))
                np.add.at(d, (slice(None), node.attr), g)
                accumulate(a, d)
        elif op == "concat":
            axis = node.attr
            offset = 0
            for i in node.inputs:
                extent = graph.nodes[i].rows if axis == 0 else graph.nodes[i].cols
                if live[i]:
                    piece = (
                        g[offset : offset + extent, :]
                        if axis == 0
                        else g[:, offset : offset + extent]
                    )
                    accumulate(i, piece)
                offset += extent
        elif op == "reshape":
            (a,) = node.inputs
            if live[a]:
                accumulate(a, g.reshape(graph.nodes[a].rows, graph.nodes[a].cols))

    result: dict[int, Array] = {}
    for nid in graph.leaf_ids():
        g = grads[nid]
        if g is None:
            g = np.zeros((graph.nodes[nid].rows, graph.nodes[nid].cols))
        elif not owned[nid]:
            g = g.copy()
        result[nid] = g
    for i in range(len(grads)):
        grads[i] = None
    graph.backward_calls += 1
    return result


# ---- finite difference checking ---------------------------------------


class ScalarFunction:
    """A scalar-valued function of one 2-D array, with its gradient."""

    def value(self, point: Array) -> float:
        raise NotImplementedError

    def gradient(self, point: Array) -> Array:
        raise NotImplementedError


class GraphScalarFunction(ScalarFunction):
    """One leaf of a scalar graph viewed as the free variable."""

    def __init__(self, graph: Graph, leaf_id: int, bindings: dict[int, Array] | None = None):
        self.graph = graph
        self.leaf_id = leaf_id
        self.bindings = dict(bindings or {})

    def _bound(self, point: Array) -> dict[int, Array]:
        b = dict(self.bindings)
        b[self.leaf_id] = point
        return b

    def value(self, point: Array) -> float:
        return float(forward(self.graph, self._bound(point))[0, 0])

    def gradient(self, point: Array) -> Array:
        forward(self.graph, self._bound(point))
        return backward(self.graph)[self.leaf_id]


def finite_difference_check(scalar_function: ScalarFunction, point: Array, step: float) -> float:
    """Max relative deviation of the autodiff gradient from central differences.

    Per coordinate: |fd - grad| / max(|grad|, 1e-8), fd from a +-step stencil.
    """
    if step <= 0:
        raise AutodiffError("finite difference step must be positive")
    grad = scalar_function.gradient(point)
    work = point.copy()
    flat = work.ravel()
    worst = 0.0
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        f_plus = scalar_function.value(work)
        flat[i] = original - step
        f_minus = scalar_function.value(work)
        flat[i] = original
        fd = (f_plus - f_minus) / (2.0 * step)
        g = grad.ravel()[i]
        worst = max(worst, abs(fd - g) / max(abs(g), 1e-8))
    return worst


# ---- dense layer building blocks ---------------------------------------


@dataclass
class AffineLayer:
    """One dense layer: weights (fan_in x fan_out) and a bias row (1 x fan_out)."""

    weights: Array
    bias: Array


def init_affine(draws, fan_in: int, fan_out: int) -> AffineLayer:
    """Initialize a layer from a deterministic draw source.

    Every weight and bias entry is uniform on +-1/sqrt(fan_in); weights are
    consumed first (row-major), then the bias.
    """
    bound = 1.0 / math.sqrt(fan_in)
    w = (2.0 * draws.uniforms(fan_in * fan_out) - 1.0) * bound
    b = (2.0 * draws.uniforms(fan_out) - 1.0) * bound
    return AffineLayer(w.reshape(fan_in, fan_out), b.reshape(1, fan_out))


def affine_forward(x: Array, layers, activations) -> Array:
    """Plain numpy forward pass through affine layers with tanh/linear stages."""
    out = x
    for layer, act in zip(layers, activations):
        out = out @ layer.weights + layer.bias
        if act == "tanh":
            out = np.tanh(out)
        elif act != "linear":
            raise AutodiffError(f"affine_forward: unknown activation '{act}'")
    return out


def declare_affine_leaves(
    graph: Graph, layers, prefix: str
) -> tuple[list[tuple[int, int]], dict[int, Array]]:
    """Add weight/bias leaves for each layer; returns (leaf id pairs, bindings)."""
    ids: list[tuple[int, int]] = []
    bindings: dict[int, Array] = {}
    for k, layer in enumerate(layers):
        wid = graph.leaf(layer.weights.shape[0], layer.weights.shape[1], name=f"{prefix}_w{k}")
        bid = graph.leaf(1, layer.bias.shape[1], name=f"{prefix}_b{k}")
        ids.append((wid, bid))
        bindings[wid] = layer.weights
        bindings[bid] = layer.bias
    return ids, bindings


def affine_chain(graph: Graph, input_id: int, layer_ids, activations, prefix: str = "") -> int:
    """Stack matmul + bias stages, each optionally followed by tanh.

    `activations` holds one of "tanh" or "linear" per layer. Returns the id
    of the final node.
    """
    layer_ids = list(layer_ids)
    activations = list(activations)
    if len(layer_ids) != len(activations):
        raise AutodiffError(
            f"affine_chain: {len(layer_ids)} layers but {len(activations)} activations"
        )
    out = input_id
    for k, ((wid, bid), act) in enumerate(zip(layer_ids, activations)):
        tag = f"{prefix}_h{k}" if prefix else ""
        out = graph.add(graph.matmul(out, wid), bid, name=tag)
        if act == "tanh":
            out = graph.tanh(out)
        elif act != "linear":
            raise AutodiffError(f"affine_chain: unknown activation '{act}'")
    return out


# ---- Adam --------------------------------------------------------------


@dataclass
class AdamState:
    """Per-parameter Adam moments plus the shared step counter."""

    first_moment: dict[int, Array] = field(default_factory=dict)
    second_moment: dict[int, Array] = field(default_factory=dict)
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


def adam_step(
    params: dict[int, Array],
    grads: dict[int, Array],
    state: AdamState,
    learning_rate: float,
) -> tuple[dict[int, Array], AdamState]:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    if learning_rate <= 0:
        raise AutodiffError("learning_rate must be positive")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for key, p in params.items():
        g = grads[key]
        if g.shape != p.shape:
            raise AutodiffError(f"adam_step: gradient shape {g.shape} vs parameter {p.shape}")
        m = state.first_moment.get(key)
        if m is None:
            m = state.first_moment[key] = np.zeros_like(p)
            state.second_moment[key] = np.zeros_like(p)
        v = state.second_moment[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state
