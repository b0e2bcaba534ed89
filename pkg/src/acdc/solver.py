"""Objective, gradient and batch gradient descent with Armijo backtracking
and Barzilai-Borwein step proposals.

Parameters live in one flat vector.  For LR and PR2 it is laid out exactly
like the component blocks of the Gram system (g is the identity).  For the
factorization machine it holds the degree-1 blocks followed by one
``(domain size x rank)`` factor matrix per feature.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .catalog import ModelSpec
from .errors import LineSearchStall, NonlinearModel
from .gram import GramSystem, ParamBlocks, c_vector, dot_c, quadratic_form, sigma_times_g, sY

log = logging.getLogger(__name__)

FIRST_STEP = 1e-3
STEP_MIN, STEP_MAX = 1e-12, 1e12
MAX_HALVINGS = 50
# an Armijo margin this close to zero (relative to the magnitudes it was
# computed from) is a tie and counts as a rejection
TIE_BAND = 16 * np.finfo(np.float64).eps


class LinearParams:
    """g(theta) = theta over the component layout."""

    linear = True

    def __init__(self, system: GramSystem):
        self.system = system
        self.size = system.layout.size

    def init(self, seed: int) -> np.ndarray:
        return np.zeros(self.size)

    def g(self, theta: np.ndarray) -> ParamBlocks:
        return ParamBlocks(theta)

    def pullback(self, theta: np.ndarray, q: np.ndarray) -> np.ndarray:
        return q.copy()


class FactorizationParams:
    """Degree-2 factorization machine: interaction blocks are kept as
    sums of rank-1 outer products of per-feature factor matrices."""

    linear = False

    def __init__(self, system: GramSystem, rank: int):
        self.system = system
        self.rank = rank
        layout = system.layout
        comps = layout.components
        self.degree1 = [i for i, c in enumerate(comps) if len(c.variables) <= 1]
        if self.degree1 != list(range(len(self.degree1))):
            raise ValueError("degree-1 components must precede interactions")
        self.n_linear = int(layout.offsets[len(self.degree1)])
        self.pairs: dict[int, tuple[str, str]] = {
            i: c.variables for i, c in enumerate(comps) if c.is_interaction}
        self.features = [c.variables[0] for c in comps if len(c.variables) == 1]
        self.slices: dict[str, slice] = {}
        start = self.n_linear
        for v in self.features:
            n = len(system.variable_domains[v])
            self.slices[v] = slice(start, start + n * rank)
            start += n * rank
        self.size = start
        # component key -> per-variable domain positions, for the pullback
        self.pair_index: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        for i, (a, b) in self.pairs.items():
            comp = comps[i]
            keys = layout.keys[i]
            idx = []
            for v in (a, b):
                if v in comp.categorical:
                    k = comp.categorical.index(v)
                    dom = {key: n for n, key in enumerate(system.variable_domains[v])}
                    idx.append(np.fromiter((dom[(key[k],)] for key in keys), np.int64, len(keys)))
                else:
                    idx.append(np.zeros(len(keys), dtype=np.int64))
            self.pair_index[i] = (idx[0], idx[1])

    def factor(self, theta: np.ndarray, v: str) -> np.ndarray:
        return theta[self.slices[v]].reshape(-1, self.rank)

    def init(self, seed: int) -> np.ndarray:
        rng = np.random.default_rng(seed)
        theta = np.zeros(self.size)
        theta[self.n_linear:] = rng.uniform(-0.01, 0.01, self.size - self.n_linear)
        return theta

    def g(self, theta: np.ndarray) -> ParamBlocks:
        flat = np.zeros(self.system.layout.size)
        flat[:self.n_linear] = theta[:self.n_linear]
        factors = {v: self.factor(theta, v) for v in self.features}
        return ParamBlocks(flat, self.pairs, factors)

    def pullback(self, theta: np.ndarray, q: np.ndarray) -> np.ndarray:
        """Chain rule: contract the component-space residual into theta."""
        layout = self.system.layout
        grad = np.zeros(self.size)
        grad[:self.n_linear] = q[:self.n_linear]
        gfac = {v: np.zeros((len(self.system.variable_domains[v]), self.rank))
                for v in self.features}
        for i, (a, b) in self.pairs.items():
            qb = layout.block(q, i)[:, None]
            ia, ib = self.pair_index[i]
            fa, fb = self.factor(theta, a), self.factor(theta, b)
            np.add.at(gfac[a], ia, qb * fb[ib])
            np.add.at(gfac[b], ib, qb * fa[ia])
        for v in self.features:
            grad[self.slices[v]] = gfac[v].ravel()
        return grad


class Objective:
    """J(theta) = 1/2 g'Sigma g - <g, c> + s_Y/2 + lambda/2 * penalty(theta).

    ``penalty`` is the squared norm unless an FD context supplies the
    reparameterised regulariser.
    """

    def __init__(self, system: GramSystem, spec: ModelSpec, fd=None):
        self.system = system
        self.spec = spec
        self.lam = spec.lam
        self.fd = fd
        if spec.kind == "fama":
            self.params = FactorizationParams(system, spec.rank)
        else:
            self.params = LinearParams(system)
        self.c = c_vector(system)
        self.sy = sY(system)

    @property
    def linear(self) -> bool:
        return self.params.linear

    @property
    def size(self) -> int:
        return self.params.size

    def penalty(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        """(Omega, 1/2 dOmega/dtheta)."""
        if self.fd is not None:
            from .fd import penalty_and_grad
            return penalty_and_grad(self.fd, theta)
        return float(theta @ theta), theta


def g_eval(objective: Objective, theta: np.ndarray) -> ParamBlocks:
    return objective.params.g(theta)


def eval_J(objective: Objective, theta: np.ndarray) -> float:
    g = objective.params.g(theta)
    omega, _ = objective.penalty(theta)
    return (0.5 * quadratic_form(objective.system, g, g) - dot_c(objective.system, g)
            + 0.5 * objective.sy + 0.5 * objective.lam * omega)


def grad_J(objective: Objective, theta: np.ndarray) -> np.ndarray:
    g = objective.params.g(theta)
    q = sigma_times_g(objective.system, g).flat - objective.c
    _, half = objective.penalty(theta)
    return objective.params.pullback(theta, q) + objective.lam * half


# -- linear-model fast path --------------------------------------------------
#
# With g the identity and a quadratic penalty Omega(theta) = theta' P theta
# (P = I for ridge, blockdiag(I, B^-1) under FD reparameterisation), J along
# the ray theta - alpha d is a quadratic in alpha whose coefficients need one
# Sigma product and one P product per iteration.

@dataclass
class ArmijoTerms:
    sigma_d: np.ndarray
    theta_sigma_d: float
    d_sigma_d: float
    c_d: float
    theta_d: float      # <theta, P d>
    d_norm2: float
    p_d: np.ndarray | None = None
    d_p_d: float | None = None

    def __post_init__(self):
        if self.d_p_d is None:
            self.d_p_d = self.d_norm2


def _require_linear(objective: Objective) -> None:
    if not objective.linear:
        raise NonlinearModel("the closed-form line search needs g = identity")


def armijo_terms(objective: Objective, theta: np.ndarray, d: np.ndarray) -> ArmijoTerms:
    """Everything the O(1) Armijo test needs; costs one Sigma product."""
    _require_linear(objective)
    sd = sigma_times_g(objective.system, ParamBlocks(d)).flat
    if objective.fd is None:
        pd, dpd = d, float(d @ d)
    else:
        dpd, pd = objective.penalty(d)
    return ArmijoTerms(sd, float(theta @ sd), float(d @ sd), float(objective.c @ d),
                       float(theta @ pd), float(d @ d), pd, dpd)


def armijo_fast_check(objective: Objective, alpha: float, terms: ArmijoTerms) -> bool:
    """True when J(theta - alpha d) >= J(theta) - alpha/2 |d|^2, i.e. the step
    must be halved.  Uses only precomputed scalars; for ridge this is

        alpha th'Sd - alpha^2/2 d'Sd - alpha <c,d> + lam alpha <th,d>
            <= alpha/2 (lam alpha + 1) |d|^2
    """
    _require_linear(objective)
    lam, t = objective.lam, terms
    parts = (alpha * t.theta_sigma_d, -0.5 * alpha * alpha * t.d_sigma_d,
             -alpha * t.c_d, lam * alpha * t.theta_d)
    lhs = sum(parts)
    rhs = 0.5 * alpha * t.d_norm2 + 0.5 * lam * alpha * alpha * t.d_p_d
    band = TIE_BAND * (sum(abs(x) for x in parts) + rhs)
    return lhs <= rhs + band


def armijo_naive_check(objective: Objective, J: float, J_try: float, alpha: float,
                       d_norm2: float) -> bool:
    """The same test from two direct objective evaluations."""
    band = TIE_BAND * (objective.sy + abs(J) + abs(J_try))
    return J_try >= J - 0.5 * alpha * d_norm2 - band


def step_objective(objective: Objective, J: float, alpha: float, terms: ArmijoTerms) -> float:
    """J(theta - alpha d) from J(theta) and the precomputed terms."""
    lam, t = objective.lam, terms
    return (J - alpha * t.theta_sigma_d + 0.5 * alpha * alpha * t.d_sigma_d
            + alpha * t.c_d - lam * alpha * t.theta_d + 0.5 * lam * alpha * alpha * t.d_p_d)


def next_grad_linear(objective: Objective, d: np.ndarray, sigma_d: np.ndarray,
                     alpha: float, p_d: np.ndarray | None = None) -> np.ndarray:
    """grad J(theta - alpha d) = d - alpha (Sigma d + lambda P d) for g = identity
    (P d = d for ridge)."""
    _require_linear(objective)
    if p_d is None:
        if objective.fd is not None:
            _, p_d = objective.penalty(d)
        else:
            p_d = d
    return d - alpha * (sigma_d + objective.lam * p_d)


# -- BGD -----------------------------------------------------------------------

@dataclass
class TrainResult:
    theta: np.ndarray
    J: float
    iterations: int
    converged: bool
    thetas: list[np.ndarray] = field(default_factory=list)
    objectives: list[float] = field(default_factory=list)
    halvings: int = 0
    line_search_products: int = 0


def _bb_step(s: np.ndarray, y: np.ndarray, previous: float) -> float:
    sy = float(s @ y)
    alpha = float(s @ s) / sy if sy > 0 else 2.0 * previous
    return min(max(alpha, STEP_MIN), STEP_MAX)


def bgd_train(objective: Objective, theta0: np.ndarray | None = None,
              fast_path: bool | None = None, record: bool = False,
              gradient_update: str | None = None) -> TrainResult:
    """Batch gradient descent with Armijo backtracking.

    The first step is ``FIRST_STEP``; later steps start from the
    Barzilai-Borwein ratio <s,s>/<s,y>.  The fast path (LR and PR2)
    decides each backtracking test in O(1).  ``gradient_update`` selects how
    the next gradient is obtained: ``"linear"`` (fast path default) reuses
    Sigma d, ``"recompute"`` evaluates the gradient afresh.
    """
    spec = objective.spec
    if fast_path is None:
        fast_path = objective.linear
    if gradient_update is None:
        gradient_update = "linear" if fast_path else "recompute"
    if gradient_update not in ("linear", "recompute"):
        raise ValueError(f"unknown gradient update {gradient_update!r}")
    if gradient_update == "linear":
        _require_linear(objective)
    system = objective.system
    theta = objective.params.init(spec.seed) if theta0 is None else np.array(theta0, float)
    J = eval_J(objective, theta)
    d = grad_J(objective, theta)
    result = TrainResult(theta, J, 0, False)
    if record:
        result.thetas.append(theta.copy())
        result.objectives.append(J)

    theta_prev = d_prev = None
    alpha = FIRST_STEP
    for it in range(spec.max_iters):
        if theta_prev is not None:
            alpha = _bb_step(theta - theta_prev, d - d_prev, alpha)
        d_norm2 = float(d @ d)
        if d_norm2 == 0.0:
            result.converged = True
            break

        terms = armijo_terms(objective, theta, d) if fast_path or gradient_update == "linear" else None
        before = system.sigma_products
        halvings = 0
        while True:
            if fast_path:
                reject = armijo_fast_check(objective, alpha, terms)
            else:
                J_try = eval_J(objective, theta - alpha * d)
                reject = armijo_naive_check(objective, J, J_try, alpha, d_norm2)
            if not reject:
                break
            alpha /= 2.0
            halvings += 1
            if halvings > MAX_HALVINGS:
                break
        result.line_search_products += system.sigma_products - before
        result.halvings += halvings
        scale = max(1.0, float(np.linalg.norm(theta)))
        if halvings > MAX_HALVINGS:
            if alpha * np.sqrt(d_norm2) <= spec.tolerance * scale:
                # no representable descent left: the iterate is stationary to
                # working precision
                result.converged = True
                break
            raise LineSearchStall(f"no acceptable step after {MAX_HALVINGS} halvings "
                                  f"(iteration {it})")

        theta_new = theta - alpha * d
        J = step_objective(objective, J, alpha, terms) if fast_path else J_try
        if gradient_update == "linear":
            d_new = next_grad_linear(objective, d, terms.sigma_d, alpha, terms.p_d)
        else:
            d_new = grad_J(objective, theta_new)
        change = float(np.linalg.norm(theta_new - theta)) / scale
        theta_prev, d_prev = theta, d
        theta, d = theta_new, d_new
        result.iterations = it + 1
        if record:
            result.thetas.append(theta.copy())
            result.objectives.append(J)
        if change < spec.tolerance:
            result.converged = True
            break

    result.theta = theta
    result.J = eval_J(objective, theta)
    log.info("bgd: %d iterations, J=%.12g, converged=%s", result.iterations,
             result.J, result.converged)
    return result
