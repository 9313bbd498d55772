"""Frank-Wolfe machinery over contracted marginal polytopes.

The solver minimizes f = -TRW over M_delta = (1-delta) M + delta u0. A MAP
oracle supplies vertices of M; contracting the returned vertex toward u0
yields the FW vertex of M_delta, so no special oracle is needed. The loop
is fully corrective: visited vertices form a correction polytope that is
re-optimized with away-step Frank-Wolfe after each MAP call. delta is
either fixed or shrunk adaptively from the ratio of the FW gap to the
uniform gap, which keeps the gap over M_delta at least half the gap
over M.
"""

import math
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .mrf import MarginalVector, MarkovRandomField, vertex_data
from .objective import EdgeAppearance, TrwObjective, max_pair_states, uniform_gap_bound
from .oracles import MapOracle, icm_solve

__all__ = [
    "OracleFailureError",
    "CoordinateDriftError",
    "InconsistentCertificateError",
    "EngineConfig",
    "IterationTrace",
    "SolverState",
    "initial_state",
    "compute_gaps",
    "adaptive_delta_update",
    "line_search",
    "rescale_alpha",
    "mfw_over_hull",
    "mfw_correction",
    "correct_state",
    "local_search",
    "fcfw_inner_loop",
    "logz_upper_bound",
    "diagnostics_rate_constants",
    "DiagnosticsReport",
]


class OracleFailureError(RuntimeError):
    """Adaptive update hit a nonpositive working gap with a negative
    uniform gap; the oracle failed to produce a descent vertex."""


class CoordinateDriftError(RuntimeError):
    """Barycentric coordinates drifted from a valid convex combination."""


class InconsistentCertificateError(ValueError):
    """A claimed MAP upper bound is below the energy of a known vertex."""


@dataclass
class EngineConfig:
    """Inner-loop knobs.

    mode "adaptive" shrinks delta per the gap-ratio rule; "fixed" keeps it
    at delta_fixed. Contractions must start at or below 1/4 for the
    gap-relationship guarantee to hold.
    """

    mode: str = "adaptive"
    delta_init: float = 0.01
    delta_fixed: float = 1e-4
    inner_gap_tol: float = 0.5
    correction_tol: Optional[float] = None
    max_inner_iters: int = 200
    use_correction: bool = True
    use_local_search: bool = False
    local_search_iters: int = 5
    icm_max_sweeps: int = 100

    def __post_init__(self):
        if self.mode not in ("adaptive", "fixed"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (0.0 < self.delta_init <= 0.25):
            raise ValueError(f"delta_init={self.delta_init} outside (0, 1/4]")
        if not (0.0 < self.delta_fixed <= 0.25):
            raise ValueError(f"delta_fixed={self.delta_fixed} outside (0, 1/4]")
        if self.inner_gap_tol <= 0:
            raise ValueError("inner_gap_tol must be positive")
        if self.max_inner_iters < 1:
            raise ValueError("max_inner_iters must be >= 1")

    @property
    def initial_delta(self) -> float:
        return self.delta_init if self.mode == "adaptive" else self.delta_fixed

    def resolved_correction_tol(self) -> float:
        if self.correction_tol is not None:
            return self.correction_tol
        return min(self.inner_gap_tol / 10.0, 1e-3)


@dataclass
class IterationTrace:
    """One inner-loop iteration record (line-delimited for the harness)."""

    iteration: int
    delta: float
    fw_gap: float
    uniform_gap: float
    contracted_gap: float
    objective: float
    grad_dot_iterate: float
    oracle_energy: float
    oracle_upper_bound: Optional[float]
    map_calls: int
    icm_calls: int
    wall_time: float
    correction_before: Optional[float] = None
    correction_after: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "delta": self.delta,
            "fw_gap": self.fw_gap,
            "uniform_gap": self.uniform_gap,
            "contracted_gap": self.contracted_gap,
            "objective": self.objective,
            "grad_dot_iterate": self.grad_dot_iterate,
            "oracle_energy": self.oracle_energy,
            "oracle_upper_bound": self.oracle_upper_bound,
            "map_calls": self.map_calls,
            "icm_calls": self.icm_calls,
            "wall_time": self.wall_time,
            "correction_before": self.correction_before,
            "correction_after": self.correction_after,
        }


class SolverState:
    """Mutable Frank-Wolfe solver state.

    The iterate always satisfies x = sum_v alpha_v [(1-delta) v + delta u0]
    with v ranging over the collected assignments plus u0 itself (whose
    contraction is u0, stored at coordinate 0).
    """

    def __init__(self, mrf: MarkovRandomField, delta: float):
        self.mrf = mrf
        self.layout = mrf.layout
        self.x = self.layout.uniform.copy()
        self.delta = float(delta)
        self.vertices: list[tuple[int, ...]] = []
        self.alpha = np.array([1.0])
        self.fw_gap = math.nan
        self.uniform_gap = math.nan
        self.contracted_gap = math.nan
        self.objective = math.nan
        self.grad_dot_iterate = math.nan
        self.oracle_energy = math.nan
        self.oracle_upper_bound: Optional[float] = None
        self.map_calls = 0
        self.icm_calls = 0
        self.last_correction_gap = 0.0
        self.converged = False
        self.iterations = 0
        self.trace: list[IterationTrace] = []
        self._vertex_index: dict[tuple[int, ...], int] = {}
        self._vertex_rows: list[np.ndarray] = []

    @property
    def iterate(self) -> MarginalVector:
        return MarginalVector(self.layout, self.x)

    def vertex_matrix(self) -> np.ndarray:
        if not self._vertex_rows:
            return np.empty((0, self.layout.size))
        return np.vstack(self._vertex_rows)

    def add_vertex(self, assignment: tuple[int, ...]) -> int:
        """Register an assignment in the correction set; returns its index.
        Duplicates are not re-added."""
        idx = self._vertex_index.get(assignment)
        if idx is not None:
            return idx
        idx = len(self.vertices)
        self.vertices.append(assignment)
        self._vertex_index[assignment] = idx
        self._vertex_rows.append(vertex_data(self.layout, assignment))
        self.alpha = np.append(self.alpha, 0.0)
        return idx

    def atoms(self) -> np.ndarray:
        """Contracted correction atoms: u0 at row 0, then contracted
        vertices at the current delta."""
        u0 = self.layout.uniform
        rows = [u0]
        if self._vertex_rows:
            rows.append((1.0 - self.delta) * self.vertex_matrix() + self.delta * u0)
        return np.vstack(rows)

    def reconstruct(self) -> np.ndarray:
        return self.alpha @ self.atoms()

    def check_invariants(self, tol: float = 1e-8):
        if abs(float(self.alpha.sum()) - 1.0) > 1e-8 or np.any(self.alpha < -1e-10):
            raise CoordinateDriftError("alpha is not a valid convex combination")
        drift = float(np.max(np.abs(self.x - self.reconstruct())))
        if drift > tol:
            raise CoordinateDriftError(f"iterate drifted {drift} from its atoms")


def initial_state(mrf: MarkovRandomField, config: EngineConfig) -> SolverState:
    """Fresh state at the uniform distribution with an empty correction set."""
    return SolverState(mrf, config.initial_delta)


def _flat(v) -> np.ndarray:
    return v.data if isinstance(v, MarginalVector) else np.asarray(v, dtype=np.float64)


def compute_gaps(state: SolverState, gradient: np.ndarray, fw_vertex, u0):
    """FW gap over M, uniform gap, and the gap over M_delta.

    fw_gap = <-grad f, s - x>, uniform_gap = <-grad f, u0 - x>; the
    contracted gap follows from the decomposition
    (1 - delta) fw_gap + delta uniform_gap.
    """
    s = _flat(fw_vertex)
    u = _flat(u0)
    lin = -np.asarray(gradient)
    base = float(lin @ state.x)
    fw_gap = float(lin @ s) - base
    uniform_gap = float(lin @ u) - base
    contracted = (1.0 - state.delta) * fw_gap + state.delta * uniform_gap
    return fw_gap, uniform_gap, contracted


def adaptive_delta_update(state: SolverState, working_gap: Optional[float] = None) -> float:
    """New contraction after a MAP call.

    With a nonnegative uniform gap delta stays put. Otherwise the proposal
    is fw_gap / (-4 uniform_gap); when it undercuts the previous delta the
    shrink is by at least a factor of two.
    """
    gap = state.fw_gap if working_gap is None else working_gap
    g_u = state.uniform_gap
    delta = state.delta
    if g_u >= 0:
        return delta
    if gap <= 0:
        raise OracleFailureError(
            f"nonpositive FW gap {gap} with negative uniform gap {g_u}; "
            "the MAP oracle found no descent vertex"
        )
    proposal = gap / (-4.0 * g_u)
    if proposal < delta:
        return min(proposal, delta / 2.0)
    return delta


def line_search(
    dphi: Callable[[float], float],
    gamma_max: float,
    tol: float = 1e-10,
    max_iters: int = 64,
) -> float:
    """Minimize a convex 1-d restriction by bisecting its derivative sign.

    dphi(gamma) is the directional derivative; it may be +inf near the far
    end of the interval (only the sign is used). Returns the left bracket
    end, so the objective at the result never exceeds the value at 0.
    """
    if gamma_max <= 0:
        return 0.0
    if dphi(0.0) >= 0:
        return 0.0
    if dphi(gamma_max) <= 0:
        return gamma_max
    lo, hi = 0.0, gamma_max
    for _ in range(max_iters):
        if hi - lo <= tol:
            break
        mid = 0.5 * (lo + hi)
        if dphi(mid) < 0:
            lo = mid
        else:
            hi = mid
    return lo


def rescale_alpha(
    alpha: np.ndarray, delta_old: float, delta_new: float, u0_index: int = 0
) -> np.ndarray:
    """Rebase barycentric coordinates when the contraction shrinks.

    alpha'_v = alpha_v (1 - delta_old) / (1 - delta_new) for v != u0 and
    alpha'_u0 absorbs the remainder, leaving the represented point
    unchanged.
    """
    if delta_new > delta_old:
        raise ValueError(
            f"delta can only shrink: delta_new={delta_new} > delta_old={delta_old}"
        )
    alpha = np.asarray(alpha, dtype=np.float64)
    scale = (1.0 - delta_old) / (1.0 - delta_new)
    out = alpha * scale
    out[u0_index] = 0.0
    out[u0_index] = 1.0 - float(out.sum())
    return out


@dataclass
class MfwResult:
    x: np.ndarray
    alpha: np.ndarray
    iterations: int
    gap: float


def mfw_over_hull(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    dir_deriv: Callable[[np.ndarray, np.ndarray, float], float],
    atoms: np.ndarray,
    x0: np.ndarray,
    alpha0: np.ndarray,
    tol: float,
    max_iters: int = 500,
) -> MfwResult:
    """Frank-Wolfe with away steps over the convex hull of `atoms`.

    Stops when the pairwise gap <-grad, d_FW + d_A> falls to tol. Away
    steps are capped at alpha_v / (1 - alpha_v) so coordinates stay a
    convex combination; a step that hits the cap drops the away atom.
    """
    x = np.array(x0, dtype=np.float64)
    alpha = np.array(alpha0, dtype=np.float64)
    if atoms.shape[0] != alpha.shape[0]:
        raise ValueError("one coordinate per atom required")
    gap = math.inf
    iterations = 0
    for iterations in range(1, max_iters + 1):
        g = grad_fn(x)
        scores = atoms @ g
        fw_idx = int(np.argmin(scores))
        active = np.flatnonzero(alpha > 0.0)
        away_idx = int(active[np.argmax(scores[active])])
        base = float(x @ g)
        gap_fw = base - float(scores[fw_idx])
        gap_away = float(scores[away_idx]) - base
        gap = gap_fw + gap_away
        if gap <= tol:
            break
        if gap_fw >= gap_away:
            d = atoms[fw_idx] - x
            gamma_max = 1.0
            is_fw = True
        else:
            a_v = float(alpha[away_idx])
            if a_v >= 1.0 - 1e-15:
                break  # singleton active set; the away direction is void
            d = x - atoms[away_idx]
            gamma_max = a_v / (1.0 - a_v)
            is_fw = False
        gamma = line_search(lambda t: dir_deriv(x, d, t), gamma_max)
        if gamma <= 0.0:
            break
        x = x + gamma * d
        if is_fw:
            alpha *= 1.0 - gamma
            alpha[fw_idx] += gamma
        else:
            alpha *= 1.0 + gamma
            alpha[away_idx] -= gamma
            if gamma >= gamma_max or alpha[away_idx] < 0.0:
                alpha[away_idx] = 0.0
        if abs(float(alpha.sum()) - 1.0) > 1e-8 or np.any(alpha < -1e-8):
            raise CoordinateDriftError("correction coordinates drifted")
        np.clip(alpha, 0.0, None, out=alpha)
    drift = float(np.max(np.abs(x - alpha @ atoms)))
    if drift > 1e-8:
        raise CoordinateDriftError(f"correction iterate drifted {drift}")
    return MfwResult(x=x, alpha=alpha, iterations=iterations, gap=gap)


def mfw_correction(
    vertex_rows: np.ndarray,
    delta: float,
    u0: np.ndarray,
    x: np.ndarray,
    alpha: np.ndarray,
    objective: TrwObjective,
    tol: float,
    max_iters: int = 500,
) -> MfwResult:
    """Re-optimize f over the contracted correction polytope.

    Atoms are u0 (coordinate 0) followed by (1-delta) v + delta u0 for the
    collected vertices v; the TRW objective never increases.
    """
    rows = [np.asarray(u0, dtype=np.float64)]
    if vertex_rows is not None and len(vertex_rows):
        rows.append((1.0 - delta) * np.asarray(vertex_rows) + delta * u0)
    atoms = np.vstack(rows)
    return mfw_over_hull(
        objective.gradient,
        objective.directional_derivative,
        atoms,
        x,
        alpha,
        tol,
        max_iters,
    )


def correct_state(
    state: SolverState,
    objective: TrwObjective,
    tol: float,
    max_iters: int = 500,
) -> float:
    """Run the correction step in place; returns its exit pairwise gap."""
    result = mfw_correction(
        state.vertex_matrix(),
        state.delta,
        state.layout.uniform,
        state.x,
        state.alpha,
        objective,
        tol,
        max_iters,
    )
    state.x = result.x
    state.alpha = result.alpha
    state.last_correction_gap = max(result.gap, 0.0)
    return state.last_correction_gap


def local_search(
    mrf: MarkovRandomField,
    rho: EdgeAppearance,
    state: SolverState,
    last_vertex: tuple[int, ...],
    iters: int,
    max_sweeps: int = 100,
):
    """FW steps using ICM as a cheap approximate oracle.

    Each round warm-starts ICM at the previously found assignment, adds the
    result to the correction set, and takes a contracted line-search step.
    Returns the state and the assignments found.
    """
    objective = TrwObjective(mrf, rho)
    found: list[tuple[int, ...]] = []
    seed = tuple(int(v) for v in last_vertex)
    u0 = state.layout.uniform
    for _ in range(iters):
        grad = objective.gradient(state.x)
        res = icm_solve(-grad, mrf, seed, max_sweeps)
        state.icm_calls += 1
        seed = res.assignment
        found.append(seed)
        idx = state.add_vertex(seed)
        s_delta = (1.0 - state.delta) * state._vertex_rows[idx] + state.delta * u0
        d = s_delta - state.x
        gamma = line_search(
            lambda t: objective.directional_derivative(state.x, d, t), 1.0
        )
        if gamma > 0.0:
            state.x = state.x + gamma * d
            state.alpha *= 1.0 - gamma
            state.alpha[1 + idx] += gamma
    return state, found


def fcfw_inner_loop(
    mrf: MarkovRandomField,
    rho: EdgeAppearance,
    oracle: MapOracle,
    config: EngineConfig,
    state: SolverState,
) -> list[IterationTrace]:
    """Fully corrective Frank-Wolfe until the gap over M reaches tolerance.

    Per iteration: gradient, MAP call, gap computation, delta update
    (adaptive mode, applied before the stopping test so the recorded gaps
    always satisfy the contracted >= fw/2 relation), then contracted FW
    step with line search, optional correction over the vertex set, and
    optional ICM local search. f never increases. Returns the traces of
    this call; cumulative counters live in the state.
    """
    objective = TrwObjective(mrf, rho)
    layout = mrf.layout
    u0 = layout.uniform
    floor = u0  # per-entry 1/n_c; iterates stay >= delta * floor
    traces: list[IterationTrace] = []
    correction_tol = config.resolved_correction_tol()
    state.converged = False
    start = time.perf_counter()

    for k in range(config.max_inner_iters):
        grad = objective.gradient(state.x)
        lin = -grad
        warm = state.vertices[-1] if state.vertices else None
        result = oracle.solve(lin, warm_start=warm)
        state.map_calls += 1
        s_row = vertex_data(layout, result.assignment)

        grad_dot_x = float(lin @ state.x)
        fw_gap = result.energy - grad_dot_x
        uniform_gap = float(lin @ u0) - grad_dot_x
        state.fw_gap = fw_gap
        state.uniform_gap = uniform_gap
        state.grad_dot_iterate = grad_dot_x
        state.oracle_energy = result.energy
        state.oracle_upper_bound = result.upper_bound

        if config.mode == "adaptive":
            # The update rule needs a positive gap. Approximate oracles can
            # miss every descent vertex; the last gap measured over the
            # correction polytope stands in then, and if that is also
            # nonpositive the update is skipped (the loop exits below,
            # since fw_gap <= 0 < tolerance).
            working = fw_gap if fw_gap > 0.0 else max(fw_gap, state.last_correction_gap)
            if working > 0.0:
                new_delta = adaptive_delta_update(state, working_gap=working)
                if new_delta != state.delta:
                    state.alpha = rescale_alpha(state.alpha, state.delta, new_delta)
                    state.delta = new_delta

        contracted = (1.0 - state.delta) * fw_gap + state.delta * uniform_gap
        state.contracted_gap = contracted
        state.objective = objective.value(state.x)
        state.iterations += 1

        record = IterationTrace(
            iteration=k,
            delta=state.delta,
            fw_gap=fw_gap,
            uniform_gap=uniform_gap,
            contracted_gap=contracted,
            objective=state.objective,
            grad_dot_iterate=grad_dot_x,
            oracle_energy=result.energy,
            oracle_upper_bound=result.upper_bound,
            map_calls=state.map_calls,
            icm_calls=state.icm_calls,
            wall_time=time.perf_counter() - start,
        )
        traces.append(record)
        state.trace.append(record)

        if __debug__:
            direct = float(lin @ ((1.0 - state.delta) * s_row + state.delta * u0)) - grad_dot_x
            assert abs(contracted - direct) <= 1e-9, "gap decomposition broken"
            if config.mode == "adaptive" and fw_gap > 0:
                assert contracted >= 0.5 * fw_gap - 1e-9, "gap relation broken"

        if fw_gap <= config.inner_gap_tol:
            state.converged = True
            break

        s_delta = (1.0 - state.delta) * s_row + state.delta * u0
        d = s_delta - state.x
        gamma = line_search(
            lambda t: objective.directional_derivative(state.x, d, t), 1.0
        )
        f_before_step = state.objective
        state.x = state.x + gamma * d
        idx = state.add_vertex(result.assignment)
        state.alpha *= 1.0 - gamma
        state.alpha[1 + idx] += gamma

        if config.use_correction:
            record.correction_before = objective.value(state.x)
            correct_state(state, objective, correction_tol)
            record.correction_after = objective.value(state.x)
            assert record.correction_after <= record.correction_before + 1e-9

        if config.use_local_search and config.local_search_iters > 0:
            local_search(
                mrf,
                rho,
                state,
                result.assignment,
                config.local_search_iters,
                config.icm_max_sweeps,
            )
            record.icm_calls = state.icm_calls

        if __debug__:
            state.check_invariants()
            assert np.all(state.x >= state.delta * floor - 1e-12), "iterate left M_delta"
            assert objective.value(state.x) <= f_before_step + 1e-9, "objective increased"

    return traces


def logz_upper_bound(state: SolverState, kappa: Optional[float] = None) -> float:
    """Upper bound on log Z from the current iterate.

    Without a certificate this is -f(x) + fw_gap (valid for exact
    oracles). With a MAP value bound kappa it is
    -f(x) + kappa - <-grad f(x), x>, which coincides with the first form
    when kappa is the exact oracle's energy.
    """
    if math.isnan(state.fw_gap) or math.isnan(state.objective):
        raise ValueError("state has no computed gap; run the inner loop first")
    if kappa is None:
        return -state.objective + state.fw_gap
    if kappa < state.oracle_energy - 1e-9:
        raise InconsistentCertificateError(
            f"kappa={kappa} is below the energy {state.oracle_energy} of a "
            "known vertex"
        )
    return -state.objective + kappa - state.grad_dot_iterate


@dataclass(frozen=True)
class DiagnosticsReport:
    """Closed-form convergence-rate constants (reporting only).

    Both the raw negative-uniform-gap bound (2 ||theta||_{1,inf}) and the
    8x variant used by the adaptive-rate constants are listed; the rate
    thresholds use the 8x form.
    """

    delta_init: float
    lipschitz_l: float
    lipschitz_at_delta: float
    c_tilde: float
    uniform_gap_bound: float
    rate_b: float
    stage2_threshold: float
    stage3_threshold: float
    k1_after_k0_bound: float

    def to_dict(self) -> dict:
        return {
            "delta_init": self.delta_init,
            "lipschitz_l": self.lipschitz_l,
            "lipschitz_at_delta": self.lipschitz_at_delta,
            "c_tilde": self.c_tilde,
            "uniform_gap_bound": self.uniform_gap_bound,
            "rate_b": self.rate_b,
            "stage2_threshold": self.stage2_threshold,
            "stage3_threshold": self.stage3_threshold,
            "k1_after_k0_bound": self.k1_after_k0_bound,
        }


def diagnostics_rate_constants(
    mrf: MarkovRandomField, rho: EdgeAppearance, delta_init: float
) -> DiagnosticsReport:
    """Rate constants for the adaptive variant (p = 1): C~ = 16 |V| max
    VAL_i VAL_j, B = 8 x the negative-uniform-gap bound, and the
    suboptimality thresholds separating the three convergence stages."""
    if len(rho) != mrf.num_edges:
        raise ValueError("rho does not match the MRF edge set")
    if not (0.0 < delta_init <= 0.25):
        raise ValueError(f"delta_init={delta_init} outside (0, 1/4]")
    l_const = 4.0 * mrf.num_vars * max_pair_states(mrf)
    c_tilde = 4.0 * l_const  # L * diam(M)^2 with diameter 2
    b_unif = uniform_gap_bound(mrf)
    rate_b = 8.0 * b_unif
    if rate_b > 0:
        k1_bound = max(0.0, math.ceil(8.0 * c_tilde / (rate_b * delta_init**2)) - 4.0)
    else:
        k1_bound = math.inf
    return DiagnosticsReport(
        delta_init=delta_init,
        lipschitz_l=l_const,
        lipschitz_at_delta=l_const / delta_init,
        c_tilde=c_tilde,
        uniform_gap_bound=b_unif,
        rate_b=rate_b,
        stage2_threshold=2.0 * c_tilde / delta_init,
        stage3_threshold=rate_b * delta_init,
        k1_after_k0_bound=k1_bound,
    )
