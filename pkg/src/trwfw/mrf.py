"""Data model for pairwise discrete Markov random fields.

Potentials are stored in log space throughout. Pseudomarginals live in flat
vectors with one block per node followed by one block per edge; the block
layout is fixed by the MRF at construction so that inner products between
potential vectors, gradients and marginal vectors are plain dot products.
"""

from collections import deque
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "UaiParseError",
    "ArityError",
    "DisconnectedGraphError",
    "StructureMismatchError",
    "BlockLayout",
    "MarkovRandomField",
    "MarginalVector",
    "parse_uai",
    "to_uai",
    "vertex_from_assignment",
    "uniform_point",
    "contract",
    "block_norm_inf1",
    "validate_assignment",
]

# Probability entries are clamped here before taking logs so that zeros in
# UAI tables become large negative log-potentials instead of -inf.
LOG_CLAMP = 1e-300


class UaiParseError(ValueError):
    """Malformed UAI input (bad header, counts, or table sizes)."""


class ArityError(UaiParseError):
    """A factor has arity greater than two."""


class DisconnectedGraphError(ValueError):
    """The variable graph is not connected."""


class StructureMismatchError(ValueError):
    """Two block-structured objects do not share the same layout."""


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


class BlockLayout:
    """Flat storage layout: one block per node, then one per edge."""

    __slots__ = (
        "cardinalities",
        "edges",
        "num_nodes",
        "size",
        "node_slices",
        "edge_slices",
        "block_slices",
        "uniform",
    )

    def __init__(self, cardinalities: Sequence[int], edges: Sequence[tuple[int, int]]):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.edges = tuple((int(i), int(j)) for i, j in edges)
        self.num_nodes = len(self.cardinalities)

        offset = 0
        node_slices = []
        for c in self.cardinalities:
            node_slices.append(slice(offset, offset + c))
            offset += c
        edge_slices = []
        for i, j in self.edges:
            n = self.cardinalities[i] * self.cardinalities[j]
            edge_slices.append(slice(offset, offset + n))
            offset += n
        self.node_slices = tuple(node_slices)
        self.edge_slices = tuple(edge_slices)
        self.block_slices = self.node_slices + self.edge_slices
        self.size = offset

        u = np.empty(self.size)
        for sl in self.block_slices:
            u[sl] = 1.0 / (sl.stop - sl.start)
        self.uniform = _readonly(u)

    def __eq__(self, other):
        if not isinstance(other, BlockLayout):
            return NotImplemented
        return self.cardinalities == other.cardinalities and self.edges == other.edges

    def __hash__(self):
        return hash((self.cardinalities, self.edges))

    def edge_shape(self, e: int) -> tuple[int, int]:
        i, j = self.edges[e]
        return (self.cardinalities[i], self.cardinalities[j])

    def node_block(self, data: np.ndarray, i: int) -> np.ndarray:
        return data[self.node_slices[i]]

    def edge_block(self, data: np.ndarray, e: int) -> np.ndarray:
        return data[self.edge_slices[e]].reshape(self.edge_shape(e))

    def pack(self, node_blocks, edge_blocks) -> np.ndarray:
        """Concatenate per-node and per-edge tables into a flat vector."""
        data = np.empty(self.size)
        for i, sl in enumerate(self.node_slices):
            block = np.asarray(node_blocks[i], dtype=np.float64)
            if block.shape != (self.cardinalities[i],):
                raise StructureMismatchError(
                    f"node block {i} has shape {block.shape}, "
                    f"expected ({self.cardinalities[i]},)"
                )
            data[sl] = block
        for e, sl in enumerate(self.edge_slices):
            block = np.asarray(edge_blocks[e], dtype=np.float64)
            if block.shape != self.edge_shape(e):
                raise StructureMismatchError(
                    f"edge block {e} has shape {block.shape}, "
                    f"expected {self.edge_shape(e)}"
                )
            data[sl] = block.ravel()
        return data


def _check_connected(num_vars: int, edges: Iterable[tuple[int, int]]):
    adjacency = [[] for _ in range(num_vars)]
    for i, j in edges:
        adjacency[i].append(j)
        adjacency[j].append(i)
    seen = [False] * num_vars
    seen[0] = True
    queue = deque([0])
    while queue:
        v = queue.popleft()
        for w in adjacency[v]:
            if not seen[w]:
                seen[w] = True
                queue.append(w)
    if not all(seen):
        missing = [v for v, s in enumerate(seen) if not s]
        raise DisconnectedGraphError(
            f"graph is disconnected: variables {missing} unreachable from 0"
        )


class MarkovRandomField:
    """Pairwise MRF with log-potentials.

    Immutable after construction; potential arrays are read-only. The graph
    must be connected (spanning-tree machinery assumes it).
    """

    def __init__(
        self,
        cardinalities: Sequence[int],
        edges: Sequence[tuple[int, int]],
        node_potentials: Sequence[np.ndarray],
        edge_potentials: Sequence[np.ndarray],
    ):
        self.cardinalities = tuple(int(c) for c in cardinalities)
        self.num_vars = len(self.cardinalities)
        if self.num_vars == 0:
            raise ValueError("MRF needs at least one variable")
        if any(c < 1 for c in self.cardinalities):
            raise ValueError("cardinalities must be >= 1")

        seen = set()
        norm_edges = []
        for i, j in edges:
            i, j = int(i), int(j)
            if i == j:
                raise ValueError(f"self-loop edge ({i}, {j})")
            if not (0 <= i < self.num_vars and 0 <= j < self.num_vars):
                raise ValueError(f"edge ({i}, {j}) endpoint out of range")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ValueError(f"duplicate edge ({i}, {j})")
            seen.add(key)
            norm_edges.append((i, j))
        self.edges = tuple(norm_edges)

        if len(node_potentials) != self.num_vars:
            raise ValueError("one node potential table per variable required")
        if len(edge_potentials) != len(self.edges):
            raise ValueError("one edge potential table per edge required")
        pots = []
        for i, table in enumerate(node_potentials):
            t = np.asarray(table, dtype=np.float64)
            if t.shape != (self.cardinalities[i],):
                raise ValueError(
                    f"node potential {i} has shape {t.shape}, "
                    f"expected ({self.cardinalities[i]},)"
                )
            pots.append(_readonly(t))
        self.node_potentials = tuple(pots)
        pots = []
        for e, table in enumerate(edge_potentials):
            i, j = self.edges[e]
            t = np.asarray(table, dtype=np.float64)
            if t.shape != (self.cardinalities[i], self.cardinalities[j]):
                raise ValueError(
                    f"edge potential {e} has shape {t.shape}, expected "
                    f"({self.cardinalities[i]}, {self.cardinalities[j]})"
                )
            pots.append(_readonly(t))
        self.edge_potentials = tuple(pots)

        if not all(np.all(np.isfinite(t)) for t in self.node_potentials):
            raise ValueError("node potentials must be finite")
        if not all(np.all(np.isfinite(t)) for t in self.edge_potentials):
            raise ValueError("edge potentials must be finite")

        _check_connected(self.num_vars, self.edges)

        self.layout = BlockLayout(self.cardinalities, self.edges)
        self.theta_flat = _readonly(
            self.layout.pack(self.node_potentials, self.edge_potentials)
        )
        neighbors = [[] for _ in range(self.num_vars)]
        for i, j in self.edges:
            neighbors[i].append(j)
            neighbors[j].append(i)
        self.neighbors = tuple(tuple(n) for n in neighbors)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def num_states(self) -> int:
        """Total joint state-space size (exact python int)."""
        total = 1
        for c in self.cardinalities:
            total *= c
        return total

    def is_binary(self) -> bool:
        return all(c == 2 for c in self.cardinalities)

    def __repr__(self):
        return (
            f"MarkovRandomField(num_vars={self.num_vars}, "
            f"num_edges={self.num_edges})"
        )


class MarginalVector:
    """Block-structured pseudomarginals: one distribution per node and edge."""

    __slots__ = ("layout", "data")

    def __init__(self, layout: BlockLayout, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.shape != (layout.size,):
            raise StructureMismatchError(
                f"data has shape {data.shape}, layout expects ({layout.size},)"
            )
        self.layout = layout
        self.data = _readonly(data.copy())

    def node_block(self, i: int) -> np.ndarray:
        return self.layout.node_block(self.data, i)

    def edge_block(self, e: int) -> np.ndarray:
        return self.layout.edge_block(self.data, e)

    def validate(self, *, sum_tol: float = 1e-12, consistency_tol: float = 1e-10):
        """Check nonnegativity, block normalization and local consistency."""
        if np.any(self.data < -1e-15):
            raise ValueError("marginal vector has negative entries")
        for c, sl in enumerate(self.layout.block_slices):
            total = self.data[sl].sum()
            if abs(total - 1.0) > sum_tol:
                raise ValueError(f"block {c} sums to {total!r}, expected 1")
        for e, (i, j) in enumerate(self.layout.edges):
            table = self.edge_block(e)
            row = table.sum(axis=1) - self.node_block(i)
            col = table.sum(axis=0) - self.node_block(j)
            if np.max(np.abs(row)) > consistency_tol:
                raise ValueError(f"edge block {e} inconsistent with node {i}")
            if np.max(np.abs(col)) > consistency_tol:
                raise ValueError(f"edge block {e} inconsistent with node {j}")

    def __repr__(self):
        return f"MarginalVector(size={self.layout.size})"


def validate_assignment(mrf: MarkovRandomField, assignment: Sequence[int]):
    if len(assignment) != mrf.num_vars:
        raise ValueError(
            f"assignment has length {len(assignment)}, expected {mrf.num_vars}"
        )
    for i, a in enumerate(assignment):
        if not (0 <= int(a) < mrf.cardinalities[i]):
            raise ValueError(
                f"state {a} out of range for variable {i} "
                f"(cardinality {mrf.cardinalities[i]})"
            )


def vertex_from_assignment(mrf: MarkovRandomField, assignment) -> MarginalVector:
    """Marginal-polytope vertex: indicator blocks of a joint assignment."""
    validate_assignment(mrf, assignment)
    return MarginalVector(mrf.layout, vertex_data(mrf.layout, assignment))


def vertex_data(layout: BlockLayout, assignment) -> np.ndarray:
    """Flat indicator vector of an assignment (no validation)."""
    data = np.zeros(layout.size)
    for i, sl in enumerate(layout.node_slices):
        data[sl.start + int(assignment[i])] = 1.0
    for e, sl in enumerate(layout.edge_slices):
        i, j = layout.edges[e]
        cj = layout.cardinalities[j]
        data[sl.start + int(assignment[i]) * cj + int(assignment[j])] = 1.0
    return data


def uniform_point(mrf: MarkovRandomField) -> MarginalVector:
    """The marginal vector of the uniform distribution (interior of M)."""
    return MarginalVector(mrf.layout, mrf.layout.uniform)


def contract(mu: MarginalVector, delta: float, u0: MarginalVector) -> MarginalVector:
    """Move mu toward u0: (1-delta)*mu + delta*u0."""
    if mu.layout != u0.layout:
        raise StructureMismatchError("mu and u0 have different block layouts")
    if not (0.0 <= delta <= 1.0):
        raise ValueError(f"delta={delta} outside [0, 1]")
    return MarginalVector(mu.layout, (1.0 - delta) * mu.data + delta * u0.data)


def block_norm_inf1(mu_a: MarginalVector, mu_b: MarginalVector) -> float:
    """Max over blocks of the l1 distance between the two vectors' blocks."""
    if mu_a.layout != mu_b.layout:
        raise StructureMismatchError("block structures do not match")
    diff = np.abs(mu_a.data - mu_b.data)
    return max(float(diff[sl].sum()) for sl in mu_a.layout.block_slices)


# ---------------------------------------------------------------------------
# UAI MARKOV text format


class _Tokens:
    def __init__(self, text: str):
        self.toks = text.split()
        self.pos = 0

    def next(self, what: str) -> str:
        if self.pos >= len(self.toks):
            raise UaiParseError(f"unexpected end of input while reading {what}")
        tok = self.toks[self.pos]
        self.pos += 1
        return tok

    def next_int(self, what: str) -> int:
        tok = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise UaiParseError(f"expected integer for {what}, got {tok!r}") from None

    def next_float(self, what: str) -> float:
        tok = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise UaiParseError(f"expected number for {what}, got {tok!r}") from None

    def exhausted(self) -> bool:
        return self.pos >= len(self.toks)


def parse_uai(text: str) -> MarkovRandomField:
    """Parse a UAI "MARKOV" network with unary and pairwise factors only.

    Factor tables are probabilities; they are clamped below at 1e-300 and
    converted to natural-log potentials. Factors sharing a scope are merged
    by summing log-potentials.
    """
    toks = _Tokens(text)
    header = toks.next("network type")
    if header != "MARKOV":
        raise UaiParseError(f"expected MARKOV header, got {header!r}")
    num_vars = toks.next_int("variable count")
    if num_vars < 1:
        raise UaiParseError(f"invalid variable count {num_vars}")
    cards = [toks.next_int(f"cardinality of variable {i}") for i in range(num_vars)]
    if any(c < 1 for c in cards):
        raise UaiParseError("cardinalities must be >= 1")
    num_factors = toks.next_int("factor count")
    if num_factors < 0:
        raise UaiParseError(f"invalid factor count {num_factors}")

    scopes = []
    for f in range(num_factors):
        arity = toks.next_int(f"arity of factor {f}")
        if arity > 2:
            raise ArityError(
                f"factor {f} has arity {arity}; only unary and pairwise "
                "factors are supported"
            )
        if arity < 1:
            raise UaiParseError(f"factor {f} has invalid arity {arity}")
        scope = tuple(toks.next_int(f"scope of factor {f}") for _ in range(arity))
        for v in scope:
            if not (0 <= v < num_vars):
                raise UaiParseError(f"factor {f} references variable {v}")
        if arity == 2 and scope[0] == scope[1]:
            raise UaiParseError(f"factor {f} is a self-loop on variable {scope[0]}")
        scopes.append(scope)

    node_logs = [np.zeros(cards[i]) for i in range(num_vars)]
    edge_logs: dict[tuple[int, int], np.ndarray] = {}
    for f, scope in enumerate(scopes):
        expected = 1
        for v in scope:
            expected *= cards[v]
        count = toks.next_int(f"table size of factor {f}")
        if count != expected:
            raise UaiParseError(
                f"factor {f} table has {count} entries, expected {expected}"
            )
        values = np.array(
            [toks.next_float(f"entry of factor {f}") for _ in range(count)]
        )
        if np.any(values < 0):
            raise UaiParseError(f"factor {f} has negative probability entries")
        logs = np.log(np.maximum(values, LOG_CLAMP))
        if len(scope) == 1:
            node_logs[scope[0]] += logs
        else:
            i, j = scope
            table = logs.reshape(cards[i], cards[j])
            if i > j:
                i, j = j, i
                table = table.T
            if (i, j) in edge_logs:
                edge_logs[(i, j)] = edge_logs[(i, j)] + table
            else:
                edge_logs[(i, j)] = table

    if not toks.exhausted():
        raise UaiParseError(
            f"unexpected trailing tokens starting at {toks.toks[toks.pos]!r}"
        )

    edges = sorted(edge_logs)
    return MarkovRandomField(
        cards, edges, node_logs, [edge_logs[e] for e in edges]
    )


def to_uai(mrf: MarkovRandomField) -> str:
    """Serialize to UAI MARKOV text; tables are exp(log-potential)."""
    lines = ["MARKOV", str(mrf.num_vars), " ".join(map(str, mrf.cardinalities))]
    lines.append(str(mrf.num_vars + mrf.num_edges))
    for i in range(mrf.num_vars):
        lines.append(f"1 {i}")
    for i, j in mrf.edges:
        lines.append(f"2 {i} {j}")
    for i in range(mrf.num_vars):
        table = np.exp(mrf.node_potentials[i])
        lines.append(str(table.size))
        lines.append(" ".join(repr(float(v)) for v in table))
    for e in range(mrf.num_edges):
        table = np.exp(mrf.edge_potentials[e])
        lines.append(str(table.size))
        lines.append(" ".join(repr(float(v)) for v in table.ravel()))
    return "\n".join(lines) + "\n"
