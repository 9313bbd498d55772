"""Synthetic generators, exact brute-force oracles, metrics, and the
experiment driver reproducing the synthetic protocol at desk scale.

Record streams are line-delimited dicts with a schema_version field; a
fixed seed makes a run fully deterministic apart from wall-clock fields.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np
from scipy.special import logsumexp

from .engine import (
    EngineConfig,
    correct_state,
    fcfw_inner_loop,
    initial_state,
    logz_upper_bound,
)
from .mrf import MarginalVector, MarkovRandomField, parse_uai
from .objective import EdgeAppearance, TrwObjective
from .oracles import (
    DEFAULT_STATE_CAP,
    BruteForceOracle,
    IcmOracle,
    MapOracle,
    PortfolioOracle,
    StateSpaceCapError,
)
from .spantree import (
    default_tree_weights,
    edges_mutual_information,
    matrix_tree_init,
    min_spanning_tree,
    rho_fw_update,
)

__all__ = [
    "SCHEMA_VERSION",
    "ExperimentSpec",
    "MetricsRecord",
    "TraceRecord",
    "RhoIterationResult",
    "InstanceResult",
    "gen_clique",
    "gen_grid",
    "brute_force_logz",
    "brute_force_marginals",
    "zeta_mu",
    "zeta_logz",
    "make_oracle",
    "iter_solve_instance",
    "solve_instance",
    "run_experiment",
    "record_to_dict",
    "write_records",
    "write_summary_csv",
]

SCHEMA_VERSION = 1

# The grid coupling distribution is taken as uniform on [-4, 4]; the
# metadata record carries this choice explicitly.
GRID_COUPLING = "uniform[-4,4]"


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def gen_clique(n: int, theta: float, seed) -> MarkovRandomField:
    """Binary complete graph: couplings U[-theta, theta] in the symmetric
    (c, -c; -c, c) edge tables, unaries t ~ U[-1, 1] as (-t, t).

    Nodes are drawn first, then edges in lexicographic order.
    """
    if n < 2:
        raise ValueError(f"clique needs n >= 2, got {n}")
    rng = _rng(seed)
    node_pots = []
    for _ in range(n):
        t = rng.uniform(-1.0, 1.0)
        node_pots.append(np.array([-t, t]))
    edges = [(i, j) for i in range(n) for j in range(i + 1, n)]
    edge_pots = []
    for _ in edges:
        c = rng.uniform(-theta, theta)
        edge_pots.append(np.array([[c, -c], [-c, c]]))
    return MarkovRandomField([2] * n, edges, node_pots, edge_pots)


def gen_grid(rows: int, cols: int, seed) -> MarkovRandomField:
    """Binary grid: unaries (-t, t) with t ~ U[-1, 1] and couplings
    (c, -c; -c, c) with c ~ U[-4, 4].

    Nodes are drawn in row-major order, then edges (right edge before the
    down edge of each node).
    """
    if rows < 1 or cols < 1 or rows * cols < 2:
        raise ValueError(f"degenerate grid dimensions {rows}x{cols}")
    rng = _rng(seed)
    n = rows * cols
    node_pots = []
    for _ in range(n):
        t = rng.uniform(-1.0, 1.0)
        node_pots.append(np.array([-t, t]))
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1))
            if r + 1 < rows:
                edges.append((v, v + cols))
    edge_pots = []
    for _ in edges:
        c = rng.uniform(-4.0, 4.0)
        edge_pots.append(np.array([[c, -c], [-c, c]]))
    return MarkovRandomField([2] * n, edges, node_pots, edge_pots)


def _energy_tensor(mrf: MarkovRandomField) -> np.ndarray:
    from .oracles import energy_tensor

    return energy_tensor(mrf.theta_flat, mrf)


def _check_cap(mrf: MarkovRandomField, max_states: int):
    if mrf.num_states > max_states:
        raise StateSpaceCapError(
            f"state space {mrf.num_states} exceeds cap {max_states}"
        )


def brute_force_logz(mrf: MarkovRandomField, max_states: int = DEFAULT_STATE_CAP) -> float:
    """log of the partition function by exhaustive max-shifted log-sum-exp."""
    _check_cap(mrf, max_states)
    return float(logsumexp(_energy_tensor(mrf)))


def brute_force_marginals(
    mrf: MarkovRandomField, max_states: int = DEFAULT_STATE_CAP
) -> MarginalVector:
    """Exact node and edge marginals from full enumeration."""
    _check_cap(mrf, max_states)
    energy = _energy_tensor(mrf)
    probs = np.exp(energy - logsumexp(energy))
    axes = tuple(range(mrf.num_vars))
    node_blocks = []
    for i in range(mrf.num_vars):
        node_blocks.append(probs.sum(axis=tuple(a for a in axes if a != i)))
    edge_blocks = []
    for i, j in mrf.edges:
        keep = (i, j) if i < j else (j, i)
        table = probs.sum(axis=tuple(a for a in axes if a not in keep))
        if i > j:
            table = table.T
        edge_blocks.append(table)
    return MarginalVector(mrf.layout, mrf.layout.pack(node_blocks, edge_blocks))


def zeta_mu(mu: MarginalVector, mu_star: MarginalVector) -> float:
    """Mean L1 error of node marginals at state 1 (binary models)."""
    if mu.layout != mu_star.layout:
        raise ValueError("marginal vectors have different structures")
    if any(c != 2 for c in mu.layout.cardinalities):
        raise ValueError("zeta_mu is defined for binary models only")
    n = mu.layout.num_nodes
    total = sum(
        abs(float(mu.node_block(i)[1]) - float(mu_star.node_block(i)[1]))
        for i in range(n)
    )
    return total / n


def zeta_logz(primal: float, gap: float, logz_true: float, exact_oracle: bool) -> float:
    """Log-partition error: (primal + gap) - truth for exact oracles
    (guaranteed nonnegative), |primal - truth| otherwise."""
    if exact_oracle:
        if gap < 0:
            raise ValueError("exact-oracle gap must be nonnegative")
        return (primal + gap) - logz_true
    return abs(primal - logz_true)


def make_oracle(name: str, mrf: MarkovRandomField, max_states: int = DEFAULT_STATE_CAP) -> MapOracle:
    """Oracle selection: "exact", "icm", or an ICM best-of "portfolio"."""
    if name == "exact":
        return BruteForceOracle(mrf, max_states)
    if name == "icm":
        return IcmOracle(mrf)
    if name == "portfolio":
        return PortfolioOracle(
            [
                IcmOracle(mrf, fallback="zeros"),
                IcmOracle(mrf, fallback="max", use_warm_start=False),
            ]
        )
    raise ValueError(f"unknown oracle {name!r}")


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: an instance family plus engine settings."""

    family: str  # "clique", "grid", or "uai-file"
    trials: int = 1
    seed: int = 0
    n: Optional[int] = None
    rows: Optional[int] = None
    cols: Optional[int] = None
    theta: float = 1.0
    oracle: str = "exact"
    engine: EngineConfig = field(default_factory=EngineConfig)
    max_rho_iters: int = 10
    rho_step: str = "literal"
    truth_cap: int = DEFAULT_STATE_CAP
    uai_text: Optional[str] = None
    out: Optional[str] = None

    def __post_init__(self):
        if self.family not in ("clique", "grid", "uai-file"):
            raise ValueError(f"unknown family {self.family!r}")
        if self.trials < 1:
            raise ValueError("trial count must be >= 1")
        if self.max_rho_iters < 0:
            raise ValueError("max_rho_iters must be >= 0")
        if self.family == "clique" and (self.n is None or self.n < 2):
            raise ValueError("clique family needs n >= 2")
        if self.family == "grid" and (self.rows is None or self.cols is None):
            raise ValueError("grid family needs rows and cols")
        if self.family == "uai-file" and not self.uai_text:
            raise ValueError("uai-file family needs the instance text")

    def instance(self, trial: int) -> MarkovRandomField:
        rng = np.random.default_rng((self.seed, trial))
        if self.family == "clique":
            return gen_clique(self.n, self.theta, rng)
        if self.family == "grid":
            return gen_grid(self.rows, self.cols, rng)
        return parse_uai(self.uai_text)


@dataclass(frozen=True)
class MetricsRecord:
    """Per (trial, rho-iteration) summary."""

    trial: int
    rho_iteration: int
    zeta_mu: Optional[float]
    zeta_logz: Optional[float]
    primal: float
    fw_gap: float
    logz_bound: float
    logz_true: Optional[float]
    map_calls: int
    icm_calls: int
    wall_time: float
    schema_version: int = SCHEMA_VERSION


@dataclass(frozen=True)
class TraceRecord:
    """Engine iteration trace tagged with its trial and rho iteration."""

    trial: int
    rho_iteration: int
    payload: dict
    schema_version: int = SCHEMA_VERSION


def record_to_dict(record) -> dict:
    if isinstance(record, MetricsRecord):
        return {
            "kind": "metrics",
            "schema_version": record.schema_version,
            "trial": record.trial,
            "rho_iteration": record.rho_iteration,
            "zeta_mu": record.zeta_mu,
            "zeta_logz": record.zeta_logz,
            "primal": record.primal,
            "fw_gap": record.fw_gap,
            "logz_bound": record.logz_bound,
            "logz_true": record.logz_true,
            "map_calls": record.map_calls,
            "icm_calls": record.icm_calls,
            "wall_time": record.wall_time,
        }
    if isinstance(record, TraceRecord):
        out = {
            "kind": "trace",
            "schema_version": record.schema_version,
            "trial": record.trial,
            "rho_iteration": record.rho_iteration,
        }
        out.update(record.payload)
        return out
    if isinstance(record, dict):
        return record
    raise TypeError(f"cannot serialize record {record!r}")


@dataclass
class RhoIterationResult:
    rho_iteration: int
    rho: np.ndarray
    marginals: MarginalVector
    primal: float
    fw_gap: float
    logz_bound: float
    map_calls: int
    icm_calls: int
    traces: list


@dataclass
class InstanceResult:
    results: list[RhoIterationResult]

    @property
    def final(self) -> RhoIterationResult:
        return self.results[-1]


def iter_solve_instance(
    mrf: MarkovRandomField,
    oracle: MapOracle,
    config: EngineConfig,
    max_rho_iters: int = 10,
    rho_step: str = "literal",
    rho_init: Optional[EdgeAppearance] = None,
) -> Iterator[RhoIterationResult]:
    """Full two-level optimization: FCFW inner loops threaded through a
    fixed-schedule FW tightening of rho over the spanning tree polytope.

    Yields one result per rho iteration as it completes, so callers can
    flush partial output. After each rho update the iterate is
    re-optimized over the accumulated correction polytope under the new
    entropy weights, so the next inner loop starts warm.
    """
    if rho_init is None:
        rho = matrix_tree_init(mrf, default_tree_weights(mrf))
    else:
        rho = rho_init
    state = initial_state(mrf, config)
    for i in range(max_rho_iters + 1):
        traces = fcfw_inner_loop(mrf, rho, oracle, config, state)
        primal = TrwObjective(mrf, rho).trw(state.x)
        yield RhoIterationResult(
            rho_iteration=i,
            rho=rho.rho.copy(),
            marginals=state.iterate,
            primal=primal,
            fw_gap=state.fw_gap,
            logz_bound=logz_upper_bound(state),
            map_calls=state.map_calls,
            icm_calls=state.icm_calls,
            traces=traces,
        )
        if i < max_rho_iters:
            mi = edges_mutual_information(state.iterate)
            tree = min_spanning_tree(mrf, -mi)
            rho = rho_fw_update(rho, tree, i, schedule=rho_step)
            correct_state(
                state, TrwObjective(mrf, rho), config.resolved_correction_tol()
            )


def solve_instance(
    mrf: MarkovRandomField,
    oracle: MapOracle,
    config: EngineConfig,
    max_rho_iters: int = 10,
    rho_step: str = "literal",
    rho_init: Optional[EdgeAppearance] = None,
) -> InstanceResult:
    """Run the full optimization and collect every rho iteration."""
    return InstanceResult(
        results=list(
            iter_solve_instance(
                mrf, oracle, config, max_rho_iters, rho_step, rho_init
            )
        )
    )


def run_experiment(spec: ExperimentSpec) -> Iterator:
    """Yield a metadata dict, then TraceRecord and MetricsRecord streams
    per trial in rho-iteration order.

    Exact-truth metrics are computed only when the state space fits the
    truth cap; zeta_mu additionally requires a binary model.
    """
    yield {
        "kind": "meta",
        "schema_version": SCHEMA_VERSION,
        "family": spec.family,
        "trials": spec.trials,
        "seed": spec.seed,
        "n": spec.n,
        "rows": spec.rows,
        "cols": spec.cols,
        "theta": spec.theta,
        "oracle": spec.oracle,
        "mode": spec.engine.mode,
        "eps": spec.engine.inner_gap_tol,
        "max_rho_iters": spec.max_rho_iters,
        "rho_step": spec.rho_step,
        "grid_coupling": GRID_COUPLING,
    }
    for trial in range(spec.trials):
        start = time.perf_counter()
        mrf = spec.instance(trial)
        oracle = make_oracle(spec.oracle, mrf, spec.truth_cap)
        exact = spec.oracle == "exact"

        logz_true = None
        mu_star = None
        if mrf.num_states <= spec.truth_cap:
            logz_true = brute_force_logz(mrf, spec.truth_cap)
            mu_star = brute_force_marginals(mrf, spec.truth_cap)
        binary = mrf.is_binary()

        results = iter_solve_instance(
            mrf,
            oracle,
            spec.engine,
            max_rho_iters=spec.max_rho_iters,
            rho_step=spec.rho_step,
        )
        for r in results:
            for t in r.traces:
                yield TraceRecord(
                    trial=trial, rho_iteration=r.rho_iteration, payload=t.to_dict()
                )
            z_mu = None
            z_logz = None
            if mu_star is not None and binary:
                z_mu = zeta_mu(r.marginals, mu_star)
            if logz_true is not None:
                gap = r.fw_gap if exact else 0.0
                z_logz = zeta_logz(r.primal, gap, logz_true, exact)
            yield MetricsRecord(
                trial=trial,
                rho_iteration=r.rho_iteration,
                zeta_mu=z_mu,
                zeta_logz=z_logz,
                primal=r.primal,
                fw_gap=r.fw_gap,
                logz_bound=r.logz_bound,
                logz_true=logz_true,
                map_calls=r.map_calls,
                icm_calls=r.icm_calls,
                wall_time=time.perf_counter() - start,
            )


_CSV_FIELDS = [
    "schema_version",
    "trial",
    "rho_iteration",
    "zeta_mu",
    "zeta_logz",
    "primal",
    "fw_gap",
    "logz_bound",
    "logz_true",
    "map_calls",
    "icm_calls",
    "wall_time",
]


def write_summary_csv(metrics: list[MetricsRecord], path: str):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=_CSV_FIELDS)
        writer.writeheader()
        for m in metrics:
            row = record_to_dict(m)
            row.pop("kind")
            writer.writerow(row)


def write_records(records, ndjson_path: str, csv_path: Optional[str] = None):
    """Stream records to an NDJSON file (flushed per line) and optionally
    collect metrics into a CSV summary. Returns the metrics records."""
    metrics = []
    with open(ndjson_path, "w") as f:
        for record in records:
            f.write(json.dumps(record_to_dict(record)) + "\n")
            f.flush()
            if isinstance(record, MetricsRecord):
                metrics.append(record)
    if csv_path:
        write_summary_csv(metrics, csv_path)
    return metrics
