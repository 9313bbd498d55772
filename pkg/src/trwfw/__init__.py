"""Marginal inference for pairwise MRFs via Frank-Wolfe over the marginal
polytope, optimizing the tree-reweighted upper bound on log Z with MAP
oracles and adaptively contracted feasible sets."""

from .bench import (
    ExperimentSpec,
    MetricsRecord,
    brute_force_logz,
    brute_force_marginals,
    gen_clique,
    gen_grid,
    make_oracle,
    run_experiment,
    solve_instance,
    zeta_logz,
    zeta_mu,
)
from .engine import (
    EngineConfig,
    SolverState,
    adaptive_delta_update,
    compute_gaps,
    diagnostics_rate_constants,
    fcfw_inner_loop,
    initial_state,
    line_search,
    local_search,
    logz_upper_bound,
    mfw_correction,
    rescale_alpha,
)
from .mrf import (
    MarginalVector,
    MarkovRandomField,
    block_norm_inf1,
    contract,
    parse_uai,
    to_uai,
    uniform_point,
    vertex_from_assignment,
)
from .objective import (
    EdgeAppearance,
    EntropyCoefficients,
    entropy_coefficients,
    lipschitz_growth_bound,
    modulus_of_continuity,
    trw_gradient,
    trw_value,
    uniform_gap_bound,
)
from .oracles import (
    BruteForceOracle,
    IcmOracle,
    OracleResult,
    PortfolioOracle,
    brute_force_map,
    icm_solve,
    portfolio_solve,
    solve_map,
)
from .spantree import (
    SpanningTreeIndicator,
    edges_mutual_information,
    matrix_tree_init,
    min_spanning_tree,
    rho_fw_update,
)

__version__ = "0.1.0"
