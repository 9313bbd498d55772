"""MAP solvers used as Frank-Wolfe linear-minimization oracles.

Every oracle maximizes a linear objective over marginal-polytope vertices,
i.e. solves (exactly or heuristically) MAP inference for a vector of
perturbed potentials with the MRF's block layout. Ties are always broken
toward the lexicographically smallest assignment so results are
deterministic.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .mrf import BlockLayout, MarkovRandomField, StructureMismatchError, validate_assignment

__all__ = [
    "DEFAULT_STATE_CAP",
    "StateSpaceCapError",
    "OracleResult",
    "linear_tables",
    "assignment_energy",
    "energy_tensor",
    "brute_force_map",
    "icm_solve",
    "portfolio_solve",
    "solve_map",
    "MapOracle",
    "BruteForceOracle",
    "IcmOracle",
    "PortfolioOracle",
]

DEFAULT_STATE_CAP = 2**24


class StateSpaceCapError(ValueError):
    """Joint state space too large for exhaustive enumeration."""


@dataclass(frozen=True)
class OracleResult:
    """A MAP-oracle answer.

    energy is the linear objective evaluated at the returned assignment;
    upper_bound, when present, certifies that no vertex scores above it.
    """

    assignment: tuple[int, ...]
    energy: float
    upper_bound: Optional[float] = None

    def __post_init__(self):
        if self.upper_bound is not None and self.upper_bound < self.energy - 1e-9:
            raise ValueError(
                f"upper_bound {self.upper_bound} below achieved energy {self.energy}"
            )


def linear_tables(objective: np.ndarray, layout: BlockLayout):
    """Split a flat linear objective into per-node and per-edge tables."""
    objective = np.asarray(objective, dtype=np.float64)
    if objective.shape != (layout.size,):
        raise StructureMismatchError(
            f"objective has shape {objective.shape}, layout expects ({layout.size},)"
        )
    node = [layout.node_block(objective, i) for i in range(layout.num_nodes)]
    edge = [layout.edge_block(objective, e) for e in range(len(layout.edges))]
    return node, edge


def assignment_energy(objective: np.ndarray, mrf: MarkovRandomField, assignment) -> float:
    """Linear objective value at the vertex of an assignment."""
    node, edge = linear_tables(objective, mrf.layout)
    a = [int(v) for v in assignment]
    total = sum(float(node[i][a[i]]) for i in range(mrf.num_vars))
    for e, (i, j) in enumerate(mrf.edges):
        total += float(edge[e][a[i], a[j]])
    return total


def energy_tensor(objective: np.ndarray, mrf: MarkovRandomField) -> np.ndarray:
    """Dense tensor of shape `cardinalities` with the energy of every
    joint assignment under the given linear objective."""
    node, edge = linear_tables(objective, mrf.layout)
    cards = mrf.cardinalities
    n = mrf.num_vars
    energy = np.zeros(cards)
    for i in range(n):
        shape = [1] * n
        shape[i] = cards[i]
        energy += node[i].reshape(shape)
    for e, (i, j) in enumerate(mrf.edges):
        table = edge[e]
        if i > j:
            i, j = j, i
            table = table.T
        shape = [1] * n
        shape[i] = cards[i]
        shape[j] = cards[j]
        energy += table.reshape(shape)
    return energy


def _check_cap(mrf: MarkovRandomField, max_states: int):
    if mrf.num_states > max_states:
        raise StateSpaceCapError(
            f"state space {mrf.num_states} exceeds cap {max_states}"
        )


def brute_force_map(
    objective: np.ndarray, mrf: MarkovRandomField, max_states: int = DEFAULT_STATE_CAP
) -> OracleResult:
    """Exact MAP by exhaustive enumeration.

    np.argmax on the row-major energy tensor returns the first maximizer,
    which is exactly the lexicographically smallest optimal assignment.
    """
    _check_cap(mrf, max_states)
    energy = energy_tensor(objective, mrf)
    flat_idx = int(np.argmax(energy))
    assignment = tuple(int(v) for v in np.unravel_index(flat_idx, mrf.cardinalities))
    best = float(energy.reshape(-1)[flat_idx])
    return OracleResult(assignment=assignment, energy=best, upper_bound=best)


def icm_solve(
    objective: np.ndarray,
    mrf: MarkovRandomField,
    init,
    max_sweeps: int = 100,
) -> OracleResult:
    """Iterated conditional modes: single-variable coordinate ascent.

    Variables are swept in ascending index order until a full sweep makes
    no change or max_sweeps is reached. Per-variable ties go to the
    smallest state index. No optimality certificate is produced.
    """
    validate_assignment(mrf, init)
    node, edge = linear_tables(objective, mrf.layout)
    incident = [[] for _ in range(mrf.num_vars)]
    for e, (i, j) in enumerate(mrf.edges):
        incident[i].append((e, j, False))
        incident[j].append((e, i, True))

    a = [int(v) for v in init]
    for _ in range(max_sweeps):
        changed = False
        for v in range(mrf.num_vars):
            score = node[v].copy()
            for e, other, transposed in incident[v]:
                score += edge[e][a[other], :] if transposed else edge[e][:, a[other]]
            best = int(np.argmax(score))
            if best != a[v]:
                a[v] = best
                changed = True
        if not changed:
            break
    assignment = tuple(a)
    return OracleResult(
        assignment=assignment,
        energy=assignment_energy(objective, mrf, assignment),
        upper_bound=None,
    )


class MapOracle:
    """Interface for FW linear-minimization oracles bound to one MRF.

    Third-party solvers (e.g. branch-and-cut) plug in here; if they can
    certify an upper bound on the MAP value they should return it in
    OracleResult.upper_bound.
    """

    mrf: MarkovRandomField

    def solve(self, objective: np.ndarray, warm_start=None) -> OracleResult:
        raise NotImplementedError


class BruteForceOracle(MapOracle):
    """Exact enumeration oracle; upper_bound equals the optimum."""

    def __init__(self, mrf: MarkovRandomField, max_states: int = DEFAULT_STATE_CAP):
        _check_cap(mrf, max_states)
        self.mrf = mrf
        self.max_states = max_states

    def solve(self, objective, warm_start=None) -> OracleResult:
        return brute_force_map(objective, self.mrf, self.max_states)


class IcmOracle(MapOracle):
    """ICM oracle; starts from the warm-start vertex when offered.

    fallback picks the start used without (or when ignoring) a warm start:
    "zeros" for the all-zero assignment, "max" for all cardinality-1.
    """

    def __init__(
        self,
        mrf: MarkovRandomField,
        max_sweeps: int = 100,
        fallback: str = "zeros",
        use_warm_start: bool = True,
    ):
        if fallback not in ("zeros", "max"):
            raise ValueError(f"unknown fallback {fallback!r}")
        self.mrf = mrf
        self.max_sweeps = max_sweeps
        self.fallback = fallback
        self.use_warm_start = use_warm_start

    def _init(self, warm_start):
        if self.use_warm_start and warm_start is not None:
            return tuple(int(v) for v in warm_start)
        if self.fallback == "zeros":
            return tuple(0 for _ in range(self.mrf.num_vars))
        return tuple(c - 1 for c in self.mrf.cardinalities)

    def solve(self, objective, warm_start=None) -> OracleResult:
        return icm_solve(objective, self.mrf, self._init(warm_start), self.max_sweeps)


class PortfolioOracle(MapOracle):
    """Runs member oracles and keeps the highest-energy result."""

    def __init__(self, oracles: Sequence[MapOracle]):
        if not oracles:
            raise ValueError("portfolio needs at least one oracle")
        self.oracles = list(oracles)
        self.mrf = self.oracles[0].mrf

    def solve(self, objective, warm_start=None) -> OracleResult:
        return portfolio_solve(self.oracles, objective, warm_start)


def portfolio_solve(
    oracles: Sequence[MapOracle], objective: np.ndarray, warm_start=None
) -> OracleResult:
    """Best-of over oracles; upper_bound is the max of the ones present."""
    if not oracles:
        raise ValueError("portfolio needs at least one oracle")
    results = [o.solve(objective, warm_start) for o in oracles]
    best = max(results, key=lambda r: r.energy)
    bounds = [r.upper_bound for r in results if r.upper_bound is not None]
    bound = max(bounds) if bounds else None
    if bound is not None and bound < best.energy:
        bound = best.energy
    return OracleResult(
        assignment=best.assignment, energy=best.energy, upper_bound=bound
    )


def solve_map(oracle: MapOracle, objective: np.ndarray, warm_start=None) -> OracleResult:
    """Run a MAP oracle on a perturbed-potential vector."""
    return oracle.solve(objective, warm_start)
