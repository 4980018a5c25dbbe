"""
Joint metric learning across heterogeneous domains.

Each domain m owns a nonnegative factor U_m (d_m x r); its metric is
A_m = U_m U_m^T. The objective adds, over domains, the pairwise GL-loss
and a smoothed l1 penalty, plus a coupling term that pulls the shared
transformation tensor E_r x_1 U_1 ... x_M U_M towards the rank-one weight
tensors w_1^p ∘ ... ∘ w_M^p of the P binary tasks.

The coupling term is evaluated through Gram matrices and rank-one
contractions; nothing of size prod(d_m) is built unless ``dense=True``.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import structlog

from hmtml.core.config import HmtmlConfig
from hmtml.core.errors import RejectedInputError, SolverDivergenceError
from hmtml.core.models import DomainData, PairSet, SolverState, SubproblemStats, TaskWeights
from hmtml.core.multilinear import (
    DenseTensor,
    frobenius_norm_sq,
    identity_tensor,
    multi_mode_product,
    rank1_tensor,
)
from hmtml.core.pairs import empirical_loss, generate_pairs, loss_gradient

logger = structlog.get_logger(__name__)

WeightsLike = Union[TaskWeights, np.ndarray]

# counts commonly seen in practice; exceeding them only warns
TYPICAL_OUTER = 10
TYPICAL_INNER = 20
TYPICAL_CHECKS = 50


def smoothed_l1(factor: np.ndarray, sigma: float) -> float:
    absolute = np.abs(factor)
    values = np.where(absolute > sigma, absolute - sigma / 2.0, factor * factor / (2.0 * sigma))
    return float(values.sum())


def smoothed_l1_grad(factor: np.ndarray, sigma: float) -> np.ndarray:
    """Entrywise median{u / sigma, -1, 1}."""
    return np.clip(factor / sigma, -1.0, 1.0)


def _as_matrices(weights: Sequence[WeightsLike]) -> List[np.ndarray]:
    matrices = [
        w.weights if isinstance(w, TaskWeights) else np.asarray(w, dtype=np.float64)
        for w in weights
    ]
    if len({m.shape[1] for m in matrices}) != 1:
        raise RejectedInputError(
            "every domain needs the same task columns", tasks=[m.shape[1] for m in matrices]
        )
    return matrices


def _check_factors(factors: Sequence[np.ndarray], weights: Sequence[np.ndarray]) -> None:
    if len(factors) != len(weights):
        raise RejectedInputError(
            "one factor per domain", factors=len(factors), weights=len(weights)
        )
    ranks = {f.shape[1] for f in factors}
    if len(ranks) != 1:
        raise RejectedInputError(
            "factors must share the number of common factors", ranks=sorted(ranks)
        )
    for m, (factor, weight) in enumerate(zip(factors, weights)):
        if factor.shape[0] != weight.shape[0]:
            raise RejectedInputError(
                "factor and task weights disagree on the domain dimension",
                domain=m,
                factor_rows=factor.shape[0],
                weight_rows=weight.shape[0],
            )


def gram_other(factors: Sequence[np.ndarray], m: int) -> np.ndarray:
    """B_(m) B_(m)^T as the Hadamard product of the other domains' U^T U."""
    if len({f.shape[1] for f in factors}) != 1:
        raise RejectedInputError("factors must share the number of common factors")
    rank = factors[0].shape[1]
    gram = np.ones((rank, rank))
    for other, factor in enumerate(factors):
        if other != m:
            gram *= factor.T @ factor
    return gram


def cross_term(factors: Sequence[np.ndarray], weights: Sequence[WeightsLike], m: int) -> np.ndarray:
    """sum_p W_(m)^p B_(m)^T = sum_p w_m^p c_p^T, c_p = Hadamard of U_m'^T w_m'^p over m' != m."""
    matrices = _as_matrices(weights)
    _check_factors(factors, matrices)
    rank = factors[0].shape[1]
    contracted = np.ones((rank, matrices[0].shape[1]))
    for other, (factor, weight) in enumerate(zip(factors, matrices)):
        if other != m:
            contracted *= factor.T @ weight
    return matrices[m] @ contracted.T


@dataclass(frozen=True)
class CouplingTerms:
    """Quantities of the coupling term that stay fixed while U_m is optimized."""

    gram: np.ndarray
    cross: np.ndarray
    constant: float
    n_tasks: int


def coupling_terms(
    factors: Sequence[np.ndarray], weights: Sequence[WeightsLike], m: int
) -> CouplingTerms:
    matrices = _as_matrices(weights)
    norms = np.ones(matrices[0].shape[1])
    for weight in matrices:
        norms *= np.einsum("dp,dp->p", weight, weight)
    return CouplingTerms(
        gram=gram_other(factors, m),
        cross=cross_term(factors, matrices, m),
        constant=float(norms.sum()),
        n_tasks=matrices[0].shape[1],
    )


def coupling_value(factors: Sequence[np.ndarray], weights: Sequence[WeightsLike]) -> float:
    """sum_p ||W^p - E_r x_1 U_1 ... x_M U_M||_F^2 (before the gamma / P weight)."""
    matrices = _as_matrices(weights)
    _check_factors(factors, matrices)
    rank = factors[0].shape[1]
    n_tasks = matrices[0].shape[1]
    norms = np.ones(n_tasks)
    inner = np.ones((rank, n_tasks))
    gram = np.ones((rank, rank))
    for factor, weight in zip(factors, matrices):
        norms *= np.einsum("dp,dp->p", weight, weight)
        inner *= factor.T @ weight
        gram *= factor.T @ factor
    return float(norms.sum() - 2.0 * inner.sum() + n_tasks * gram.sum())


def coupling_value_dense(factors: Sequence[np.ndarray], weights: Sequence[WeightsLike]) -> float:
    """Same quantity as ``coupling_value`` with every tensor materialized."""
    matrices = _as_matrices(weights)
    _check_factors(factors, matrices)
    shared = multi_mode_product(identity_tensor(factors[0].shape[1], len(factors)), factors)
    total = 0.0
    for p in range(matrices[0].shape[1]):
        task_tensor = rank1_tensor([w[:, p] for w in matrices])
        total += frobenius_norm_sq(DenseTensor(task_tensor.data - shared.data))
    return total


def regularizer(factor: np.ndarray, config: HmtmlConfig) -> float:
    if config.gamma_m == 0.0:
        return 0.0
    if config.frobenius_reg:
        return config.gamma_m * 0.5 * float(np.sum(factor * factor))
    return config.gamma_m * smoothed_l1(factor, config.sigma)


def regularizer_grad(factor: np.ndarray, config: HmtmlConfig) -> np.ndarray:
    if config.gamma_m == 0.0:
        return np.zeros_like(factor)
    if config.frobenius_reg:
        return config.gamma_m * factor
    return config.gamma_m * smoothed_l1_grad(factor, config.sigma)


def objective(
    factors: Sequence[np.ndarray],
    pair_sets: Sequence[PairSet],
    weights: Sequence[WeightsLike],
    config: HmtmlConfig,
    dense: bool = False,
) -> float:
    """Full smoothed objective over all domains."""
    matrices = _as_matrices(weights)
    _check_factors(factors, matrices)
    if len(pair_sets) != len(factors):
        raise RejectedInputError(
            "one pair set per domain", pair_sets=len(pair_sets), factors=len(factors)
        )
    total = 0.0
    if not config.drop_loss:
        total += sum(empirical_loss(f, pairs, config.rho) for f, pairs in zip(factors, pair_sets))
    gamma = config.effective_gamma
    if gamma > 0.0:
        evaluate = coupling_value_dense if dense else coupling_value
        total += gamma / matrices[0].shape[1] * evaluate(factors, matrices)
    total += sum(regularizer(f, config) for f in factors)
    return float(total)


def subproblem_objective(
    factor: np.ndarray, pairs: PairSet, terms: CouplingTerms, config: HmtmlConfig
) -> float:
    """F(U_m) with the other factors folded into ``terms``."""
    value = 0.0
    if not config.drop_loss:
        value += empirical_loss(factor, pairs, config.rho)
    gamma = config.effective_gamma
    if gamma > 0.0:
        coupling = (
            terms.constant
            - 2.0 * float(np.sum(factor * terms.cross))
            + terms.n_tasks * float(np.sum((factor.T @ factor) * terms.gram))
        )
        value += gamma / terms.n_tasks * coupling
    return value + regularizer(factor, config)


def subproblem_gradient(
    factor: np.ndarray, pairs: PairSet, terms: CouplingTerms, config: HmtmlConfig
) -> np.ndarray:
    gradient = regularizer_grad(factor, config)
    if not config.drop_loss:
        gradient = gradient + loss_gradient(factor, pairs, config.rho)
    gamma = config.effective_gamma
    if gamma > 0.0:
        gradient = (
            gradient
            + 2.0 * gamma * (factor @ terms.gram)
            - (2.0 * gamma / terms.n_tasks) * terms.cross
        )
    return gradient


def gradient_Um(
    factors: Sequence[np.ndarray],
    pairs: PairSet,
    weights: Sequence[WeightsLike],
    config: HmtmlConfig,
    m: int,
) -> np.ndarray:
    """Gradient of the objective with respect to U_m."""
    terms = coupling_terms(factors, weights, m)
    return subproblem_gradient(factors[m], pairs, terms, config)


def _projector(config: HmtmlConfig) -> Callable[[np.ndarray], np.ndarray]:
    if config.no_nonneg:
        return lambda x: x
    return lambda x: np.maximum(x, 0.0)


def solve_subproblem(
    initial: np.ndarray,
    m: int,
    factors: Sequence[np.ndarray],
    pairs: PairSet,
    weights: Sequence[WeightsLike],
    config: HmtmlConfig,
    step_size: Optional[float] = None,
) -> Tuple[np.ndarray, SubproblemStats]:
    """
    Projected gradient descent on U_m with the other factors held fixed.

    The step size starts from the previous one; while the sufficient
    decrease test passes it grows by 1/beta (until the test fails or the
    projected point stops moving), otherwise it shrinks by beta until the
    test passes. At most ``max_step_checks`` tests per iteration.
    """
    if not config.no_nonneg and np.any(initial < 0):
        raise RejectedInputError("initial factor must be nonnegative", domain=m)
    terms = coupling_terms(factors, weights, m)
    project = _projector(config)

    def value(u: np.ndarray) -> float:
        return subproblem_objective(u, pairs, terms, config)

    current = np.array(initial, dtype=np.float64)
    start = value(current)
    trace = [start]
    if not np.isfinite(start):
        raise SolverDivergenceError(
            "objective is not finite at the starting point", trace=trace, domain=m
        )

    stats = SubproblemStats(step_size=step_size or config.mu0, objective=start)
    mu = stats.step_size
    previous = start

    for _ in range(config.max_inner):
        gradient = subproblem_gradient(current, pairs, terms, config)
        if not np.all(np.isfinite(gradient)):
            raise SolverDivergenceError("gradient is not finite", trace=trace, domain=m)

        def attempt(
            step: float,
            origin: np.ndarray = current,
            direction: np.ndarray = gradient,
            reference: float = previous,
        ) -> Tuple[np.ndarray, float, bool]:
            candidate = project(origin - step * direction)
            candidate_value = value(candidate)
            bound = config.kappa * float(np.sum(direction * (candidate - origin)))
            return candidate, candidate_value, bool(candidate_value - reference <= bound)

        candidate, candidate_value, accepted = attempt(mu)
        checks = 1
        if accepted:
            while checks < config.max_step_checks:
                grown, grown_value, grown_ok = attempt(mu / config.beta)
                checks += 1
                if not grown_ok or np.array_equal(grown, candidate):
                    break
                mu, candidate, candidate_value = mu / config.beta, grown, grown_value
        else:
            while not accepted and checks < config.max_step_checks:
                mu *= config.beta
                candidate, candidate_value, accepted = attempt(mu)
                checks += 1

        stats.step_checks += checks
        stats.max_step_checks = max(stats.max_step_checks, checks)
        if not accepted:
            logger.debug("subproblem.no_step_found", domain=m, step_size=mu)
            break
        if not np.isfinite(candidate_value):
            raise SolverDivergenceError("objective is not finite", trace=trace, domain=m)

        current = candidate
        trace.append(candidate_value)
        stats.steps += 1

        spread = abs(candidate_value - start)
        if spread < 1e-15 or abs(candidate_value - previous) / spread < config.eps_inner:
            previous = candidate_value
            break
        previous = candidate_value

    stats.step_size = mu
    stats.objective = previous
    return current, stats


def initialize_factors(
    dims: Sequence[int], config: HmtmlConfig, seed: Optional[int] = None
) -> List[np.ndarray]:
    """Entries drawn uniformly from [0, 1/sqrt(d_m r)] (or [0, init_scale])."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    factors = []
    for dim in dims:
        scale = config.init_scale or 1.0 / np.sqrt(dim * config.rank)
        factors.append(rng.uniform(0.0, scale, size=(dim, config.rank)))
    return factors


def build_pair_sets(domains: Sequence[DomainData], config: HmtmlConfig) -> List[PairSet]:
    return [
        generate_pairs(d, cap=config.pair_cap, seed=config.seed + m)
        for m, d in enumerate(domains)
    ]


def fit(
    domains: Sequence[DomainData],
    weights: Sequence[WeightsLike],
    config: HmtmlConfig,
    init: Optional[Sequence[np.ndarray]] = None,
    update_order: Optional[Sequence[int]] = None,
) -> SolverState:
    """
    Alternate over the domains, solving each U_m subproblem warm-started
    from its previous value, until the relative change of the objective
    drops below ``eps_outer`` or ``max_outer`` sweeps have run.
    """
    n_domains = len(domains)
    if n_domains < 2:
        raise RejectedInputError("joint learning needs at least two domains", n_domains=n_domains)
    matrices = _as_matrices(weights)
    if len(matrices) != n_domains:
        raise RejectedInputError(
            "one task weight matrix per domain", weights=len(matrices), domains=n_domains
        )
    for m, (domain, weight) in enumerate(zip(domains, matrices)):
        if domain.dim != weight.shape[0]:
            raise RejectedInputError(
                "task weights do not match the domain dimension",
                domain=m,
                dim=domain.dim,
                weight_rows=weight.shape[0],
            )

    order = tuple(range(n_domains)) if update_order is None else tuple(update_order)
    if sorted(order) != list(range(n_domains)):
        raise RejectedInputError("update order must be a permutation of the domains", order=order)

    pair_sets = build_pair_sets(domains, config)
    if init is None:
        factors = initialize_factors([d.dim for d in domains], config)
    else:
        factors = [np.array(f, dtype=np.float64) for f in init]
        if any(f.shape != (d.dim, config.rank) for f, d in zip(factors, domains)):
            raise RejectedInputError("initial factors must be d_m x r", rank=config.rank)

    state = SolverState(factors=factors, update_order=order)
    state.objective_trace.append(objective(factors, pair_sets, matrices, config))
    log = logger.bind(domains=n_domains, rank=config.rank)

    for sweep in range(config.max_outer):
        sweep_steps: List[int] = []
        sweep_checks: List[int] = []
        for m in order:
            factors[m], stats = solve_subproblem(
                factors[m], m, factors, pair_sets[m], matrices, config
            )

            sweep_steps.append(stats.steps)
            sweep_checks.append(stats.max_step_checks)
        state.inner_steps.append(sweep_steps)
        state.step_checks.append(sweep_checks)
        state.outer_iterations = sweep + 1

        current = objective(factors, pair_sets, matrices, config)
        previous = state.objective_trace[-1]
        state.objective_trace.append(current)
        if not np.isfinite(current):
            raise SolverDivergenceError("objective is not finite", trace=state.objective_trace)
        log.debug("fit.sweep", sweep=sweep + 1, objective=current, inner_steps=sweep_steps)

        if previous == 0.0 or abs(previous - current) / abs(previous) < config.eps_outer:
            state.converged = True
            break

    summary = state.summary()
    if (
        summary["outer_iterations"] >= TYPICAL_OUTER
        or summary["max_inner_steps"] >= TYPICAL_INNER
        or summary["max_step_checks"] >= TYPICAL_CHECKS
    ):
        log.warning("fit.iteration_counts_above_typical", **summary)
    else:
        log.debug("fit.done", **summary)
    state.factors = factors
    return state
