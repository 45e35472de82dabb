"""Linearized error dynamics and the cloning losses built on them.

Around a demonstration point (x, y) with closed-loop action u = pi(x, y),
the coupled error state z = [x' - x, y' - y] evolves to first order as
z' = A z with

    A = [ dfdx + dfdu Jx ,  dfdu Jy  ]
        [ dgdx + dgdu Jx ,  dgdy + dgdu Jy ]

where (Jx, Jy) are the policy Jacobian blocks with respect to x and y.
``A1`` (top-left) and ``A2`` (top-right) are the blocks available without
an environment model. The three training losses are the plain cloning
objective, the model-based variant penalizing unstable eigenvalues of A,
and the model-free variant penalizing ||A2|| and unstable eigenvalues of
A1.

System Jacobians are evaluated at the policy's own action and enter the
graph as constants: the penalty shapes the policy through the policy
Jacobian blocks, not through the action's effect on the system Jacobians.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import policy as pol
from .errors import DegenerateGradientError, DimensionError

Array = np.ndarray


@dataclass(frozen=True)
class SystemModel:
    """Analytic (or numerical) Jacobians of the env dynamics.

    ``f_jacobians(x, u) -> (dfdx (m,m), dfdu (m,n))`` describes the robot
    flow; ``g_jacobians(x, y, u) -> (dgdx (d,m), dgdy (d,d), dgdu (d,n))``
    the environment flow, or None when no model is available (model-free
    training). ``g_static`` marks environments whose observation y does not
    evolve (g identically zero), which licenses a cheaper exact path for
    the model-based penalty.
    """

    m: int
    d: int
    n: int
    f_jacobians: Callable[[Array, Array], tuple[Array, Array]]
    g_jacobians: Callable[[Array, Array, Array], tuple[Array, Array, Array]] | None = None
    g_static: bool = False
    name: str = ""

    @property
    def model_based(self) -> bool:
        return self.g_jacobians is not None or self.g_static


_EMBED_CACHE: dict[tuple[int, int], tuple[Array, Array]] = {}


def _embeddings(m: int, d: int) -> tuple[Array, Array]:
    # Ex stacks an m-block on top, Ey a d-block below: A = Ex TL Ex^T + ...
    key = (m, d)
    if key not in _EMBED_CACHE:
        ex = np.zeros((m + d, m))
        ex[:m, :m] = np.eye(m)
        ey = np.zeros((m + d, d))
        ey[m:, :] = np.eye(d)
        _EMBED_CACHE[key] = (ex, ey)
    return _EMBED_CACHE[key]


def _check_batch(model: SystemModel, x: Array, y: Array, u: Array) -> None:
    if x.ndim != 2 or y.ndim != 2 or u.ndim != 2:
        raise DimensionError("batch arrays must be 2-D")
    if not (x.shape[0] == y.shape[0] == u.shape[0]) or x.shape[0] == 0:
        raise DimensionError(
            f"batch sizes disagree or empty: {x.shape[0]}, {y.shape[0]}, {u.shape[0]}"
        )
    if x.shape[1] != model.m or y.shape[1] != model.d or u.shape[1] != model.n:
        raise DimensionError(
            f"expected widths ({model.m}, {model.d}, {model.n}), got "
            f"({x.shape[1]}, {y.shape[1]}, {u.shape[1]})"
        )
    for name, arr in (("x", x), ("y", y), ("u", u)):
        if not np.isfinite(arr).all():
            raise DimensionError(f"batch array {name} has non-finite entries")


def _f_blocks(model: SystemModel, x: Array, u: Array) -> tuple[Array, Array]:
    dfdx, dfdu = model.f_jacobians(x, u)
    dfdx = np.asarray(dfdx, float)
    dfdu = np.asarray(dfdu, float)
    if dfdx.shape != (model.m, model.m) or dfdu.shape != (model.m, model.n):
        raise DimensionError(
            f"f jacobian shapes {dfdx.shape}, {dfdu.shape} do not match model"
        )
    return dfdx, dfdu


def _g_blocks(model: SystemModel, x: Array, y: Array, u: Array) -> tuple[Array, Array, Array]:
    if model.g_static or model.g_jacobians is None:
        z_dm = np.zeros((model.d, model.m))
        z_dd = np.zeros((model.d, model.d))
        z_dn = np.zeros((model.d, model.n))
        if model.g_jacobians is None and not model.g_static:
            raise DimensionError(
                "model has no environment jacobians; only A1/A2 are available"
            )
        return z_dm, z_dd, z_dn
    dgdx, dgdy, dgdu = model.g_jacobians(x, y, u)
    return (
        np.asarray(dgdx, float),
        np.asarray(dgdy, float),
        np.asarray(dgdu, float),
    )


# ---------------------------------------------------------------------------
# Graph (differentiable) assembly
# ---------------------------------------------------------------------------


def policy_jacobian_blocks(
    graph: ad.MlpGraph, row: int, m: int
) -> tuple[ad.Node, ad.Node]:
    """(Jx, Jy) nodes: the policy Jacobian split at column m."""
    jac = graph.input_jacobian(row)
    total = jac.shape[1]
    ex, ey = _embeddings(m, total - m)
    return ad.matmul(jac, ad.constant(ex)), ad.matmul(jac, ad.constant(ey))


def assemble_a1_a2(
    model: SystemModel, graph: ad.MlpGraph, row: int, x: Array, u: Array | None = None
) -> tuple[ad.Node, ad.Node]:
    """Model-free blocks for one batch row, as graph nodes.

    ``A1 = dfdx + dfdu Jx`` and ``A2 = dfdu Jy``, with the system Jacobians
    evaluated at ``u`` (default: the policy's current action for that row).
    """
    if u is None:
        u = graph.output().value[row]
    dfdx, dfdu = _f_blocks(model, np.asarray(x, float), np.asarray(u, float))
    jx, jy = policy_jacobian_blocks(graph, row, model.m)
    dfdu_c = ad.constant(dfdu)
    a1 = ad.add(ad.constant(dfdx), ad.matmul(dfdu_c, jx))
    a2 = ad.matmul(dfdu_c, jy)
    return a1, a2


def assemble_a(
    model: SystemModel,
    graph: ad.MlpGraph,
    row: int,
    x: Array,
    y: Array,
    u: Array | None = None,
) -> ad.Node:
    """Full closed-loop error-dynamics matrix for one batch row."""
    if u is None:
        u = graph.output().value[row]
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    u = np.asarray(u, float)
    dfdx, dfdu = _f_blocks(model, x, u)
    dgdx, dgdy, dgdu = _g_blocks(model, x, y, u)
    jx, jy = policy_jacobian_blocks(graph, row, model.m)
    dfdu_c = ad.constant(dfdu)
    dgdu_c = ad.constant(dgdu)
    a1 = ad.add(ad.constant(dfdx), ad.matmul(dfdu_c, jx))
    a2 = ad.matmul(dfdu_c, jy)
    b1 = ad.add(ad.constant(dgdx), ad.matmul(dgdu_c, jx))
    b2 = ad.add(ad.constant(dgdy), ad.matmul(dgdu_c, jy))
    ex, ey = _embeddings(model.m, model.d)
    ex_n, ey_n = ad.constant(ex), ad.constant(ey)
    ex_t, ey_t = ad.constant(ex.T), ad.constant(ey.T)
    out = ad.add(
        ad.add(
            ad.matmul(ad.matmul(ex_n, a1), ex_t),
            ad.matmul(ad.matmul(ex_n, a2), ey_t),
        ),
        ad.add(
            ad.matmul(ad.matmul(ey_n, b1), ex_t),
            ad.matmul(ad.matmul(ey_n, b2), ey_t),
        ),
    )
    return out


# ---------------------------------------------------------------------------
# Plain-numpy assembly (analysis loops; no gradients)
# ---------------------------------------------------------------------------


def assemble_a_values(
    model: SystemModel, policy: pol.PolicyNetwork, x, y, u=None
) -> Array:
    """Full error-dynamics matrix as a plain array."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if u is None:
        u = pol.act(policy, x, y)
    u = np.asarray(u, float)
    jac = pol.input_jacobian_values(policy, x, y)
    jx, jy = jac[:, : model.m], jac[:, model.m :]
    dfdx, dfdu = _f_blocks(model, x, u)
    dgdx, dgdy, dgdu = _g_blocks(model, x, y, u)
    top = np.hstack([dfdx + dfdu @ jx, dfdu @ jy])
    bottom = np.hstack([dgdx + dgdu @ jx, dgdy + dgdu @ jy])
    return np.vstack([top, bottom])


def assemble_a1_a2_values(
    model: SystemModel, policy: pol.PolicyNetwork, x, y, u=None
) -> tuple[Array, Array]:
    """Model-free blocks as plain arrays."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if u is None:
        u = pol.act(policy, x, y)
    jac = pol.input_jacobian_values(policy, x, y)
    jx, jy = jac[:, : model.m], jac[:, model.m :]
    dfdx, dfdu = _f_blocks(model, x, np.asarray(u, float))
    return dfdx + dfdu @ jx, dfdu @ jy


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


@dataclass
class LossBundle:
    """One batch's loss graph plus its auditable decomposition.

    ``bc``, ``penalty_eig`` and ``penalty_norm`` are unweighted sums over
    the batch; ``total`` applies the lambda weights. ``skipped`` counts
    samples whose penalty term was dropped because the matrix function had
    no usable gradient there (near-defective eigenpair or coinciding top
    singular values).
    """

    total: ad.Node
    bc: ad.Node
    penalty_eig: ad.Node | None
    penalty_norm: ad.Node | None
    skipped: int
    graph: ad.MlpGraph

    @property
    def bc_value(self) -> float:
        return float(self.bc.value[0, 0])

    @property
    def penalty_eig_value(self) -> float:
        return 0.0 if self.penalty_eig is None else float(self.penalty_eig.value[0, 0])

    @property
    def penalty_norm_value(self) -> float:
        return 0.0 if self.penalty_norm is None else float(self.penalty_norm.value[0, 0])

    @property
    def total_value(self) -> float:
        return float(self.total.value[0, 0])


def _forward(policy: pol.PolicyNetwork, x: Array, y: Array) -> tuple[ad.MlpGraph, ad.Node]:
    graph = pol.graph(policy)
    out = graph.forward(np.hstack([x, y]))
    return graph, out


def build_bc_loss(policy: pol.PolicyNetwork, x, y, u) -> LossBundle:
    """Sum of squared action errors over the batch (no penalty terms)."""
    x, y, u = (np.asarray(a, float) for a in (x, y, u))
    if x.ndim != 2:
        raise DimensionError("batch arrays must be 2-D")
    graph, out = _forward(policy, x, y)
    bc = ad.sum_entries(ad.square(ad.sub(out, ad.constant(u))))
    return LossBundle(
        total=bc, bc=bc, penalty_eig=None, penalty_norm=None, skipped=0, graph=graph
    )


def build_model_based_loss(
    policy: pol.PolicyNetwork, model: SystemModel, x, y, u, lam: float
) -> LossBundle:
    """Cloning loss plus lam * sum_i (unstable-eigenvalue penalty of A_i).

    With ``lam == 0`` this builds exactly the plain cloning graph: no
    penalty nodes exist, so values and gradients are bit-identical to
    :func:`build_bc_loss`. For static environments (g identically zero) A
    is block triangular with a zero lower band, so the penalty of A equals
    the penalty of A1 exactly, in value and gradient; the cheap block is
    used there.
    """
    x, y, u = (np.asarray(a, float) for a in (x, y, u))
    _check_batch(model, x, y, u)
    if not model.model_based:
        raise DimensionError("model-based loss needs environment jacobians")
    if lam == 0.0:
        return build_bc_loss(policy, x, y, u)
    graph, out = _forward(policy, x, y)
    bc = ad.sum_entries(ad.square(ad.sub(out, ad.constant(u))))
    penalties = []
    skipped = 0
    for i in range(x.shape[0]):
        try:
            if model.g_static:
                a1, _ = assemble_a1_a2(model, graph, i, x[i])
                penalties.append(ad.eig_penalty_node(a1))
            else:
                a_full = assemble_a(model, graph, i, x[i], y[i])
                penalties.append(ad.eig_penalty_node(a_full))
        except DegenerateGradientError:
            skipped += 1
    pen = _sum_nodes(penalties)
    total = bc if pen is None else ad.add(bc, ad.scale(pen, lam))
    return LossBundle(
        total=total,
        bc=bc,
        penalty_eig=pen,
        penalty_norm=None,
        skipped=skipped,
        graph=graph,
    )


def build_model_free_loss(
    policy: pol.PolicyNetwork,
    model: SystemModel,
    x,
    y,
    u,
    lam1: float,
    lam2: float,
) -> LossBundle:
    """Cloning loss plus lam1 * sum ||A2_i|| + lam2 * sum eig-penalty(A1_i).

    With both lambdas zero this builds exactly the plain cloning graph.
    """
    x, y, u = (np.asarray(a, float) for a in (x, y, u))
    _check_batch(model, x, y, u)
    if lam1 == 0.0 and lam2 == 0.0:
        return build_bc_loss(policy, x, y, u)
    graph, out = _forward(policy, x, y)
    bc = ad.sum_entries(ad.square(ad.sub(out, ad.constant(u))))
    eig_terms = []
    norm_terms = []
    skipped = 0
    for i in range(x.shape[0]):
        a1, a2 = assemble_a1_a2(model, graph, i, x[i])
        bad = False
        term_norm = None
        term_eig = None
        if lam1 != 0.0:
            try:
                term_norm = ad.spectral_norm_node(a2)
            except DegenerateGradientError:
                bad = True
        if lam2 != 0.0 and not bad:
            try:
                term_eig = ad.eig_penalty_node(a1)
            except DegenerateGradientError:
                bad = True
        if bad:
            # drop the whole sample's penalty so the two terms stay paired
            skipped += 1
            continue
        if term_norm is not None:
            norm_terms.append(term_norm)
        if term_eig is not None:
            eig_terms.append(term_eig)
    pen_norm = _sum_nodes(norm_terms)
    pen_eig = _sum_nodes(eig_terms)
    total = bc
    if pen_norm is not None:
        total = ad.add(total, ad.scale(pen_norm, lam1))
    if pen_eig is not None:
        total = ad.add(total, ad.scale(pen_eig, lam2))
    return LossBundle(
        total=total,
        bc=bc,
        penalty_eig=pen_eig,
        penalty_norm=pen_norm,
        skipped=skipped,
        graph=graph,
    )


def _sum_nodes(nodes: list[ad.Node]) -> ad.Node | None:
    if not nodes:
        return None
    acc = nodes[0]
    for node in nodes[1:]:
        acc = ad.add(acc, node)
    return acc
