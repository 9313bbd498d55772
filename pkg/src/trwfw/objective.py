"""Tree-reweighted objective, its gradient, and diagnostic constants.

The engine minimizes f(mu) = -(<theta, mu> + sum_i K_i H(mu_i)
+ sum_ij rho_ij H(mu_ij)) where H is the Shannon entropy in nats and
K_i = 1 - sum_{j in nbrs(i)} rho_ij. Entropies use the 0*log(0) = 0
convention so f is finite on the whole local polytope; the gradient is
only defined at strictly positive points.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

from .mrf import MarginalVector, MarkovRandomField, StructureMismatchError

__all__ = [
    "BoundaryGradientError",
    "EdgeAppearance",
    "EntropyCoefficients",
    "TrwObjective",
    "trw_value",
    "trw_gradient",
    "entropy_coefficients",
    "lipschitz_growth_bound",
    "modulus_of_continuity",
    "uniform_gap_bound",
    "max_pair_states",
]


class BoundaryGradientError(ValueError):
    """Gradient requested at a point with a zero pseudomarginal entry."""


class EdgeAppearance:
    """Per-edge appearance probabilities rho from the spanning tree polytope.

    Any distribution over spanning trees puts exactly num_vars - 1 expected
    edges, so the entries must sum to num_vars - 1.
    """

    __slots__ = ("rho", "num_vars")

    def __init__(self, rho, num_vars: int):
        rho = np.asarray(rho, dtype=np.float64)
        if rho.ndim != 1:
            raise ValueError("rho must be a 1-d per-edge vector")
        if np.any(rho < -1e-12) or np.any(rho > 1.0 + 1e-12):
            raise ValueError("edge appearance probabilities must lie in [0, 1]")
        target = num_vars - 1
        if abs(float(rho.sum()) - target) > 1e-9:
            raise ValueError(
                f"rho sums to {float(rho.sum())!r}, expected {target} "
                "(num_vars - 1)"
            )
        self.rho = np.clip(rho, 0.0, 1.0)
        self.rho.flags.writeable = False
        self.num_vars = num_vars

    def __len__(self):
        return self.rho.shape[0]

    def __repr__(self):
        return f"EdgeAppearance({self.rho!r})"


@dataclass(frozen=True)
class EntropyCoefficients:
    """Entropy weights: K_i = 1 - sum of incident rho, K_ij = rho_ij."""

    node_coeff: np.ndarray
    edge_coeff: np.ndarray


def entropy_coefficients(
    mrf: MarkovRandomField, rho: EdgeAppearance
) -> EntropyCoefficients:
    _check_rho(mrf, rho)
    node = np.ones(mrf.num_vars)
    for e, (i, j) in enumerate(mrf.edges):
        node[i] -= rho.rho[e]
        node[j] -= rho.rho[e]
    return EntropyCoefficients(node_coeff=node, edge_coeff=rho.rho.copy())


def _check_rho(mrf: MarkovRandomField, rho: EdgeAppearance):
    if len(rho) != mrf.num_edges or rho.num_vars != mrf.num_vars:
        raise StructureMismatchError(
            f"rho has {len(rho)} entries for {rho.num_vars} vars; "
            f"MRF has {mrf.num_edges} edges, {mrf.num_vars} vars"
        )


class TrwObjective:
    """Evaluator for f = -TRW bound to one (mrf, rho) pair.

    Operates on flat block vectors (the layout of the MRF); the per-entry
    entropy coefficient vector is precomputed once.
    """

    def __init__(self, mrf: MarkovRandomField, rho: EdgeAppearance):
        _check_rho(mrf, rho)
        self.mrf = mrf
        self.rho = rho
        self.layout = mrf.layout
        self.theta = mrf.theta_flat
        coeffs = entropy_coefficients(mrf, rho)
        k = np.empty(self.layout.size)
        for i, sl in enumerate(self.layout.node_slices):
            k[sl] = coeffs.node_coeff[i]
        for e, sl in enumerate(self.layout.edge_slices):
            k[sl] = coeffs.edge_coeff[e]
        self.k_flat = k
        self.k_flat.flags.writeable = False

    def trw(self, data: np.ndarray) -> float:
        """TRW value <theta, mu> + weighted entropies (0 log 0 = 0)."""
        return float(self.theta @ data - self.k_flat @ xlogy(data, data))

    def value(self, data: np.ndarray) -> float:
        """f = -TRW, the minimization objective."""
        return -self.trw(data)

    def gradient(self, data: np.ndarray) -> np.ndarray:
        """Gradient of f: -theta_c(x_c) + K_c (1 + log mu_c(x_c))."""
        if np.any(data <= 0.0):
            raise BoundaryGradientError(
                "gradient requested at a boundary point (zero entry); "
                "engine iterates must stay inside the contracted polytope"
            )
        return -self.theta + self.k_flat * (1.0 + np.log(data))

    def directional_derivative(self, x: np.ndarray, d: np.ndarray, gamma: float) -> float:
        """d/dgamma f(x + gamma d); +inf outside the positive orthant."""
        point = x + gamma * d
        if np.any(point <= 0.0):
            return math.inf
        g = -self.theta + self.k_flat * (1.0 + np.log(point))
        return float(g @ d)


def trw_value(mu: MarginalVector, mrf: MarkovRandomField, rho: EdgeAppearance) -> float:
    """TRW objective at mu; finite on the whole local polytope."""
    if mu.layout != mrf.layout:
        raise StructureMismatchError("marginal vector does not match the MRF")
    return TrwObjective(mrf, rho).trw(mu.data)


def trw_gradient(
    mu: MarginalVector, mrf: MarkovRandomField, rho: EdgeAppearance
) -> np.ndarray:
    """Gradient of the minimization objective f = -TRW at an interior mu.

    Returned flat vector has the same block layout as mu; the negated
    vector is the perturbed-potential MAP objective for the FW oracle.
    """
    if mu.layout != mrf.layout:
        raise StructureMismatchError("marginal vector does not match the MRF")
    return TrwObjective(mrf, rho).gradient(mu.data)


def max_pair_states(mrf: MarkovRandomField) -> int:
    """Largest VAL_i * VAL_j over edges (1 for edgeless graphs)."""
    return max(
        (mrf.cardinalities[i] * mrf.cardinalities[j] for i, j in mrf.edges),
        default=1,
    )


def lipschitz_growth_bound(mrf: MarkovRandomField, delta: float) -> float:
    """Gradient Lipschitz bound over the delta-contraction: L/delta.

    L = 4 |V| max_ij VAL_i VAL_j in the l_inf/l1 block-norm pairing;
    the growth exponent is p = 1.
    """
    if delta <= 0:
        raise ValueError(f"delta={delta} must be positive")
    return 4.0 * mrf.num_vars * max_pair_states(mrf) / delta


def modulus_of_continuity(sigma: float, mrf: MarkovRandomField) -> float:
    """Uniform-continuity bound: |TRW(mu) - TRW(mu')| <= omega(sigma)
    whenever ||mu - mu'||_inf <= sigma.

    omega(sigma) = sigma ||theta||_1 + 2 sigma K max(-log(2 sigma), 1)
    with K = 4 |V| max_ij VAL_i VAL_j; omega(0) = 0.
    """
    if sigma < 0:
        raise ValueError(f"sigma={sigma} must be nonnegative")
    if sigma == 0.0:
        return 0.0
    theta_l1 = float(np.abs(mrf.theta_flat).sum())
    k_tilde = 4.0 * mrf.num_vars * max_pair_states(mrf)
    return sigma * theta_l1 + 2.0 * sigma * k_tilde * max(-math.log(2.0 * sigma), 1.0)


def uniform_gap_bound(mrf: MarkovRandomField) -> float:
    """Bound B on the negative uniform gap: <grad f(mu), u0 - mu> <= B.

    B = 2 sum_c max_{x_c} |theta_c(x_c)| over all nodes and edges. The
    adaptive-rate constants use 8x this value; that scaling is applied by
    the engine diagnostics, not here.
    """
    total = 0.0
    for t in mrf.node_potentials:
        total += float(np.max(np.abs(t)))
    for t in mrf.edge_potentials:
        total += float(np.max(np.abs(t)))
    return 2.0 * total
