"""Shared builders and independent enumeration oracles for the tests.

The enumeration helpers here deliberately use plain python loops over
itertools.product so expected values never share code with the library
paths they check.
"""

import itertools
import math

import numpy as np
import pytest

from trwfw.mrf import MarginalVector, MarkovRandomField, vertex_from_assignment


def random_tree_mrf(rng, n, scale=2.0, card=2):
    """Random tree-structured MRF with potential entries U[-scale, scale]."""
    cards = [card] * n
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    node_pots = [rng.uniform(-scale, scale, size=card) for _ in range(n)]
    edge_pots = [rng.uniform(-scale, scale, size=(card, card)) for _ in edges]
    return MarkovRandomField(cards, edges, node_pots, edge_pots)


def random_connected_mrf(rng, n, extra_edges=2, scale=1.0, card=2):
    """Random connected graph: a random tree plus extra random edges."""
    edges = [(int(rng.integers(0, k)), k) for k in range(1, n)]
    present = {tuple(sorted(e)) for e in edges}
    candidates = [
        (i, j)
        for i in range(n)
        for j in range(i + 1, n)
        if (i, j) not in present
    ]
    rng.shuffle(candidates)
    edges += candidates[:extra_edges]
    cards = [card] * n
    node_pots = [rng.uniform(-scale, scale, size=card) for _ in range(n)]
    edge_pots = [
        rng.uniform(-scale, scale, size=(cards[i], cards[j])) for i, j in edges
    ]
    return MarkovRandomField(cards, edges, node_pots, edge_pots)


def random_interior_marginal(rng, mrf, pull=0.3, num_vertices=6):
    """Strictly interior point of M: a random mix of vertices pulled
    toward uniform."""
    weights = rng.dirichlet(np.ones(num_vertices))
    data = np.zeros(mrf.layout.size)
    for w in weights:
        assignment = tuple(int(rng.integers(0, c)) for c in mrf.cardinalities)
        data += w * vertex_from_assignment(mrf, assignment).data
    data = (1.0 - pull) * data + pull * mrf.layout.uniform
    return MarginalVector(mrf.layout, data)


def all_assignments(mrf):
    return itertools.product(*(range(c) for c in mrf.cardinalities))


def enum_energy(mrf, assignment):
    """Plain-loop evaluation of the MRF energy of one assignment."""
    total = 0.0
    for i in range(mrf.num_vars):
        total += float(mrf.node_potentials[i][assignment[i]])
    for e, (i, j) in enumerate(mrf.edges):
        total += float(mrf.edge_potentials[e][assignment[i], assignment[j]])
    return total


def enum_linear_energy(mrf, node_tables, edge_tables, assignment):
    total = 0.0
    for i in range(mrf.num_vars):
        total += float(node_tables[i][assignment[i]])
    for e, (i, j) in enumerate(mrf.edges):
        total += float(edge_tables[e][assignment[i], assignment[j]])
    return total


def enum_logz(mrf):
    """Brute-force log partition function (independent of the library)."""
    energies = [enum_energy(mrf, a) for a in all_assignments(mrf)]
    m = max(energies)
    return m + math.log(sum(math.exp(e - m) for e in energies))


def enum_marginals(mrf):
    """Brute-force node and edge marginals via plain loops."""
    logz = enum_logz(mrf)
    node = [np.zeros(c) for c in mrf.cardinalities]
    edge = [
        np.zeros((mrf.cardinalities[i], mrf.cardinalities[j]))
        for i, j in mrf.edges
    ]
    for a in all_assignments(mrf):
        p = math.exp(enum_energy(mrf, a) - logz)
        for i in range(mrf.num_vars):
            node[i][a[i]] += p
        for e, (i, j) in enumerate(mrf.edges):
            edge[e][a[i], a[j]] += p
    return MarginalVector(mrf.layout, mrf.layout.pack(node, edge))


def enum_map(mrf, node_tables, edge_tables):
    """Exhaustive MAP with lexicographic tie-break (strictly-greater wins)."""
    best = None
    best_energy = -math.inf
    for a in all_assignments(mrf):
        e = enum_linear_energy(mrf, node_tables, edge_tables, a)
        if e > best_energy:
            best_energy = e
            best = a
    return tuple(best), best_energy


def enum_spanning_trees(num_vars, edges):
    """All spanning trees as tuples of edge indices (edge-subset scan)."""
    trees = []
    for subset in itertools.combinations(range(len(edges)), num_vars - 1):
        parent = list(range(num_vars))

        def find(v):
            while parent[v] != v:
                parent[v] = parent[parent[v]]
                v = parent[v]
            return v

        ok = True
        for e in subset:
            i, j = edges[e]
            ri, rj = find(i), find(j)
            if ri == rj:
                ok = False
                break
            parent[ri] = rj
        if ok:
            trees.append(subset)
    return trees


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
