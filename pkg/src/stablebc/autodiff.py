"""Reverse-mode automatic differentiation over small dense matrices.

Eager scalar-free engine: every node holds a 2-D float64 array, ops build
the value immediately and register a backward closure. The op set is the
minimum needed to express the cloning loss, the linearized error-dynamics
matrix and the two stability penalties, including matrix nodes whose
gradients come from eigenvalue perturbation theory and the top singular
pair. Subgraphs that depend on no parameter carry no backward closures, so
constants are free.
"""

from __future__ import annotations

import numpy as np

from . import linalg
from .errors import DegenerateGradientError, DimensionError, UnsupportedConfigError


class Node:
    """One value in the computation graph."""

    __slots__ = ("value", "parents", "op", "requires_grad", "_backward")

    def __init__(self, value, parents=(), backward=None, requires_grad=False, op="leaf"):
        value = np.asarray(value, dtype=float)
        if value.ndim != 2:
            raise DimensionError(f"graph values must be 2-D, got shape {value.shape}")
        self.value = value
        self.parents = parents
        self.op = op
        self.requires_grad = requires_grad
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op}, shape={self.value.shape})"


def constant(value) -> Node:
    return Node(value, op="const")


def parameter(value) -> Node:
    return Node(value, requires_grad=True, op="param")


def _make(value, parents, backward, op) -> Node:
    if any(p.requires_grad for p in parents):
        return Node(value, parents, backward, True, op)
    return Node(value, (), None, False, op)


def _accum(acc: dict, node: Node, delta: np.ndarray) -> None:
    if not node.requires_grad:
        return
    nid = id(node)
    if nid in acc:
        acc[nid] = acc[nid] + delta
    else:
        acc[nid] = delta


# ---------------------------------------------------------------------------
# Ops
# ---------------------------------------------------------------------------


def matmul(a: Node, b: Node) -> Node:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul mismatch: {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def backward(g, acc):
        _accum(acc, a, g @ b.value.T)
        _accum(acc, b, a.value.T @ g)

    return _make(out, (a, b), backward, "matmul")


def add(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"add mismatch: {a.shape} + {b.shape}")

    def backward(g, acc):
        _accum(acc, a, g)
        _accum(acc, b, g)

    return _make(a.value + b.value, (a, b), backward, "add")


def sub(a: Node, b: Node) -> Node:
    if a.shape != b.shape:
        raise DimensionError(f"sub mismatch: {a.shape} - {b.shape}")

    def backward(g, acc):
        _accum(acc, a, g)
        _accum(acc, b, -g)

    return _make(a.value - b.value, (a, b), backward, "sub")


def scale(a: Node, c: float) -> Node:
    c = float(c)

    def backward(g, acc):
        _accum(acc, a, c * g)

    return _make(c * a.value, (a,), backward, "scale")


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)

    def backward(g, acc):
        _accum(acc, a, (1.0 - t * t) * g)

    return _make(t, (a,), backward, "tanh")


def relu(a: Node) -> Node:
    mask = a.value > 0.0

    def backward(g, acc):
        # subgradient 0 at the kink
        _accum(acc, a, np.where(mask, g, 0.0))

    return _make(np.where(mask, a.value, 0.0), (a,), backward, "relu")


def square(a: Node) -> Node:
    def backward(g, acc):
        _accum(acc, a, 2.0 * a.value * g)

    return _make(a.value * a.value, (a,), backward, "square")


def sum_entries(a: Node) -> Node:
    def backward(g, acc):
        _accum(acc, a, np.full(a.shape, g[0, 0]))

    return _make(np.array([[a.value.sum()]]), (a,), backward, "sum")


def transpose(a: Node) -> Node:
    def backward(g, acc):
        _accum(acc, a, g.T)

    return _make(a.value.T.copy(), (a,), backward, "transpose")


def diag_from_row(a: Node) -> Node:
    """Square diagonal matrix from a (1, k) row."""
    if a.shape[0] != 1:
        raise DimensionError(f"diag expects a (1, k) row, got {a.shape}")
    k = a.shape[1]

    def backward(g, acc):
        _accum(acc, a, np.diag(g).reshape(1, k))

    return _make(np.diag(a.value[0]), (a,), backward, "diag")


def eig_penalty_node(a: Node) -> Node:
    """Sum of positive real parts of the eigenvalues, as a (1,1) node.

    The gradient with respect to the matrix comes from first-order
    eigenvalue perturbation theory using the left/right eigenvectors of
    each strictly unstable eigenvalue. Raises
    :class:`DegenerateGradientError` for near-defective unstable eigenpairs
    when a gradient will be needed.
    """
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"eig penalty needs a square matrix, got {a.shape}")
    if not a.requires_grad:
        return Node(np.array([[linalg.eig_penalty(a.value)]]), op="eig_penalty")
    value, grad, _ = linalg.eig_penalty_with_grad(a.value)

    def backward(g, acc):
        _accum(acc, a, g[0, 0] * grad)

    return _make(np.array([[value]]), (a,), backward, "eig_penalty")


def spectral_norm_node(a: Node) -> Node:
    """Largest singular value as a (1,1) node; gradient is u1 v1^T.

    Raises :class:`DegenerateGradientError` when a gradient will be needed
    and the top two singular values coincide within the gap tolerance (the
    norm is not differentiable there).
    """
    info = linalg.spectral_norm_full(a.value)
    if not a.requires_grad:
        return Node(np.array([[info.value]]), op="spectral_norm")
    if info.value - info.second < linalg.SPECTRAL_GAP_TOL:
        raise DegenerateGradientError(
            f"top singular values coincide: {info.value:.6g} vs {info.second:.6g}"
        )
    grad = np.outer(info.left, info.right)

    def backward(g, acc):
        _accum(acc, a, g[0, 0] * grad)

    return _make(np.array([[info.value]]), (a,), backward, "spectral_norm")


# ---------------------------------------------------------------------------
# Backward pass
# ---------------------------------------------------------------------------


class GradStore:
    """Gradients from one backward sweep, addressable by node."""

    def __init__(self, grads: dict[int, np.ndarray], holders: dict[int, Node]):
        self._grads = grads
        self._holders = holders  # strong refs keep ids stable

    def of(self, node: Node) -> np.ndarray:
        g = self._grads.get(id(node))
        if g is None:
            return np.zeros_like(node.value)
        return g

    def all_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self._grads.values())


def backward(root: Node) -> GradStore:
    """Reverse-mode sweep from a scalar (1,1) root node."""
    if root.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar (1,1) root, got {root.shape}")
    acc: dict[int, np.ndarray] = {}
    holders: dict[int, Node] = {}
    if not root.requires_grad:
        return GradStore(acc, holders)
    # iterative topological order: parents before children
    order: list[Node] = []
    seen: set[int] = set()
    stack: list[tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    acc[id(root)] = np.ones((1, 1))
    holders[id(root)] = root
    for node in reversed(order):
        holders[id(node)] = node
        g = acc.get(id(node))
        if g is None or node._backward is None:
            continue
        node._backward(g, acc)
    return GradStore(acc, holders)


# ---------------------------------------------------------------------------
# Differentiable MLP
# ---------------------------------------------------------------------------


class MlpGraph:
    """One forward/backward episode of a fully connected network.

    Wraps the network's weight/bias arrays as parameter leaves, runs a
    batched forward pass, and can emit the analytic input Jacobian of any
    batch row as a graph node (so penalties on the Jacobian backpropagate
    into the parameters). Inputs are standardized by fixed mean/std before
    entering the network; the Jacobian includes the 1/std factor so it is
    taken with respect to the raw inputs.
    """

    def __init__(self, weights, biases, activation="tanh", in_mean=None, in_std=None):
        if len(weights) != len(biases) or not weights:
            raise DimensionError("need matching, non-empty weight/bias lists")
        if activation not in ("tanh", "relu"):
            raise UnsupportedConfigError(f"unknown activation {activation!r}")
        self.activation = activation
        self.w_nodes = [parameter(w) for w in weights]
        self.b_nodes = [parameter(b.reshape(1, -1)) for b in biases]
        n_in = weights[0].shape[1]
        self.in_mean = np.zeros(n_in) if in_mean is None else np.asarray(in_mean, float)
        self.in_std = np.ones(n_in) if in_std is None else np.asarray(in_std, float)
        if self.in_mean.shape != (n_in,) or self.in_std.shape != (n_in,):
            raise DimensionError("normalization stats must match the input width")
        if np.any(self.in_std <= 0.0):
            raise DimensionError("normalization std must be positive")
        self._acts: list[Node] = []
        self._out: Node | None = None
        self._batch = 0

    def params(self) -> list[Node]:
        out = []
        for w, b in zip(self.w_nodes, self.b_nodes):
            out.append(w)
            out.append(b)
        return out

    def forward(self, z: np.ndarray) -> Node:
        z = np.asarray(z, dtype=float)
        if z.ndim != 2 or z.shape[1] != self.w_nodes[0].shape[1]:
            raise DimensionError(
                f"input batch must be (B, {self.w_nodes[0].shape[1]}), got {z.shape}"
            )
        batch = z.shape[0]
        x = constant((z - self.in_mean) / self.in_std)
        ones = constant(np.ones((batch, 1)))
        self._acts = []
        n_layers = len(self.w_nodes)
        for layer in range(n_layers):
            s = add(matmul(x, transpose(self.w_nodes[layer])), matmul(ones, self.b_nodes[layer]))
            if layer < n_layers - 1:
                x = tanh(s) if self.activation == "tanh" else relu(s)
                self._acts.append(x)
            else:
                x = s
        self._out = x
        self._batch = batch
        return x

    def output(self) -> Node:
        if self._out is None:
            raise UnsupportedConfigError("forward() has not been called")
        return self._out

    def input_jacobian(self, row: int) -> Node:
        """Jacobian of output row ``row`` with respect to its raw input.

        Built as the analytic layer product W_L diag(a'_{L-1}) ... W_1 from
        the stored activations, so it is itself differentiable with respect
        to the parameters. Only smooth activations are supported.
        """
        if self._out is None:
            raise UnsupportedConfigError("forward() has not been called")
        if self.activation != "tanh":
            raise UnsupportedConfigError(
                "input Jacobian requires a smooth activation, got "
                f"{self.activation!r}"
            )
        if not 0 <= row < self._batch:
            raise DimensionError(f"row {row} out of range for batch {self._batch}")
        selector = np.zeros((1, self._batch))
        selector[0, row] = 1.0
        sel = constant(selector)
        jac = self.w_nodes[0]
        for layer, act in enumerate(self._acts):
            a_row = matmul(sel, act)  # (1, width)
            one = constant(np.ones(a_row.shape))
            dact = sub(one, square(a_row))  # tanh'(s) = 1 - tanh(s)^2
            jac = matmul(diag_from_row(dact), jac)
            jac = matmul(self.w_nodes[layer + 1], jac)
        # d z_norm / d z_raw = diag(1/std)
        return matmul(jac, constant(np.diag(1.0 / self.in_std)))
