"""Spanning tree polytope operations for the outer tightening loop.

The entropy bound is tightened by Frank-Wolfe over edge appearance
probabilities: the gradient of the TRW entropy with respect to rho_ij is
the negated edge mutual information, so the FW vertex is the minimum
spanning tree of the negated MI weights (callers pass weights = -I; this
module computes minimum spanning trees of whatever weights it is given).
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import xlogy

from .mrf import DisconnectedGraphError, MarginalVector, MarkovRandomField
from .objective import EdgeAppearance

__all__ = [
    "SpanningTreeIndicator",
    "edges_mutual_information",
    "min_spanning_tree",
    "rho_fw_update",
    "matrix_tree_init",
    "default_tree_weights",
    "tree_indicator_rho",
]


@dataclass(frozen=True)
class SpanningTreeIndicator:
    """Boolean edge-selection vector forming a spanning tree."""

    edge_in_tree: tuple[bool, ...]
    num_vars: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        selected = [e for e, used in zip(self.edges, self.edge_in_tree) if used]
        if len(selected) != self.num_vars - 1:
            raise ValueError(
                f"{len(selected)} edges selected; a spanning tree needs "
                f"{self.num_vars - 1}"
            )
        parent = list(range(self.num_vars))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        for i, j in selected:
            ri, rj = find(i), find(j)
            if ri == rj:
                raise ValueError(f"selected edges contain a cycle through ({i}, {j})")
            parent[ri] = rj

    def as_array(self) -> np.ndarray:
        return np.array(self.edge_in_tree, dtype=np.float64)


def _entropy(p: np.ndarray) -> float:
    return float(-xlogy(p, p).sum())


def edges_mutual_information(mu: MarginalVector) -> np.ndarray:
    """Per-edge mutual information H(mu_i) + H(mu_j) - H(mu_ij).

    Requires a locally consistent input; nonnegative up to numerical slack.
    """
    mu.validate()
    node_h = [_entropy(mu.node_block(i)) for i in range(mu.layout.num_nodes)]
    out = np.empty(len(mu.layout.edges))
    for e, (i, j) in enumerate(mu.layout.edges):
        out[e] = node_h[i] + node_h[j] - _entropy(mu.edge_block(e))
    return out


def min_spanning_tree(mrf: MarkovRandomField, weights) -> SpanningTreeIndicator:
    """Exact minimum spanning tree (Kruskal); ties go to lower edge index."""
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (mrf.num_edges,):
        raise ValueError(
            f"weights has shape {weights.shape}, expected ({mrf.num_edges},)"
        )
    order = sorted(range(mrf.num_edges), key=lambda e: (weights[e], e))
    parent = list(range(mrf.num_vars))

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    in_tree = [False] * mrf.num_edges
    count = 0
    for e in order:
        i, j = mrf.edges[e]
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            in_tree[e] = True
            count += 1
            if count == mrf.num_vars - 1:
                break
    if count != mrf.num_vars - 1:
        raise DisconnectedGraphError("graph has no spanning tree")
    return SpanningTreeIndicator(
        edge_in_tree=tuple(in_tree), num_vars=mrf.num_vars, edges=mrf.edges
    )


def rho_fw_update(
    rho_current: EdgeAppearance,
    tree: SpanningTreeIndicator,
    outer_iter: int,
    schedule: str = "literal",
) -> EdgeAppearance:
    """Fixed-schedule FW step toward a spanning tree vertex.

    The "literal" schedule uses step i/(i+2) (a zero step at i = 0);
    "standard" uses the usual 2/(i+2). Either keeps rho strictly inside
    the polytope when it starts there.
    """
    if schedule == "literal":
        step = outer_iter / (outer_iter + 2.0)
    elif schedule == "standard":
        step = 2.0 / (outer_iter + 2.0)
    else:
        raise ValueError(f"unknown schedule {schedule!r}")
    vertex = tree.as_array()
    new = rho_current.rho + step * (vertex - rho_current.rho)
    return EdgeAppearance(new, rho_current.num_vars)


def matrix_tree_init(mrf: MarkovRandomField, weights) -> EdgeAppearance:
    """Edge appearance probabilities of the weighted random spanning tree.

    With tree weight proportional to the product of its edge weights, the
    Matrix-Tree Theorem gives rho_ij = w_ij * r_ij where r_ij is the
    effective resistance across the edge; each edge costs one linear solve
    against the LU-factored reduced Laplacian (node 0 grounded).
    """
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (mrf.num_edges,):
        raise ValueError(
            f"weights has shape {weights.shape}, expected ({mrf.num_edges},)"
        )
    if np.any(weights <= 0):
        raise ValueError("matrix-tree weights must be strictly positive")
    n = mrf.num_vars
    if n == 1:
        return EdgeAppearance(np.zeros(0), 1)
    laplacian = np.zeros((n, n))
    for e, (i, j) in enumerate(mrf.edges):
        w = weights[e]
        laplacian[i, i] += w
        laplacian[j, j] += w
        laplacian[i, j] -= w
        laplacian[j, i] -= w
    reduced = laplacian[1:, 1:]
    try:
        lu = lu_factor(reduced)
    except Exception as exc:  # singular reduced Laplacian
        raise DisconnectedGraphError(
            "reduced Laplacian is singular; graph must be connected"
        ) from exc
    rho = np.empty(mrf.num_edges)
    for e, (i, j) in enumerate(mrf.edges):
        rhs = np.zeros(n - 1)
        if i > 0:
            rhs[i - 1] = 1.0
        if j > 0:
            rhs[j - 1] -= 1.0
        sol = lu_solve(lu, rhs)
        resistance = float(rhs @ sol)
        rho[e] = weights[e] * resistance
    return EdgeAppearance(rho, n)


def default_tree_weights(mrf: MarkovRandomField) -> np.ndarray:
    """Coupling-strength weights for the rho initialization.

    w_ij = 1 + sum_{x_i, x_j} |theta_ij|, so strongly coupled edges are
    more likely to appear; the +1 keeps weights positive.
    """
    return np.array(
        [1.0 + float(np.abs(t).sum()) for t in mrf.edge_potentials]
    )


def tree_indicator_rho(mrf: MarkovRandomField) -> EdgeAppearance:
    """rho = 1 on every edge; valid only when the graph is a tree."""
    if mrf.num_edges != mrf.num_vars - 1:
        raise ValueError("tree indicator rho requires a tree-structured graph")
    return EdgeAppearance(np.ones(mrf.num_edges), mrf.num_vars)
