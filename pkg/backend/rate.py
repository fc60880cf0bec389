"""
Rate functions of the empirical measures.

Every rate is a float in [0, inf]; math.inf marks an infeasible argument.
Natural logarithms throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, List, Mapping, Optional, Tuple

import numpy as np
from scipy import optimize, special

from shared.debug_config import debug_dump_state, debug_step
from shared.errors import DomainError, ResourceBudgetError
from shared.types import ConsistencyClass

from .empirical import (CONSISTENCY_TOL, OffspringMeasure, PairMeasure, check_consistency,
                        multiplicity_pair, nu_first, pair_second)
from .laws import CountLaw
from .model import (Alphabet, OffspringConfig, OffspringKernel, grow_bracket, classify,
                    mean_matrix, multiplicity_vector)

MARGINAL_TOL = 1e-9
ORACLE_DAMPING = 0.5
ORACLE_MAX_ITER = 10_000
ORACLE_TOL = 1e-8
BALL_BUDGET = 200_000
LOG_FLOOR = 1e-300

RateValue = float


def relative_entropy(nu, mu) -> RateValue:
    """H(nu | mu) = sum nu log(nu / mu), with 0 log 0 = 0 and inf off supp(mu).

    Accepts two arrays of equal shape or two mappings; for mappings only the
    support of nu is visited.
    """
    if isinstance(nu, Mapping):
        total = 0.0
        for key, x in nu.items():
            if x <= 0.0:
                continue
            y = mu.get(key, 0.0) if isinstance(mu, Mapping) else mu(key)
            if y <= 0.0:
                return math.inf
            total += x * math.log(x / y)
        return total
    terms = special.rel_entr(np.asarray(nu, dtype=float), np.asarray(mu, dtype=float))
    return float(np.sum(terms))


def _entropy_against_kernel(nu: OffspringMeasure, Q: OffspringKernel,
                            marginal: np.ndarray) -> RateValue:
    """H(nu | marginal (x) Q), evaluated on supp(nu) only."""
    value = relative_entropy(nu.weights, lambda atom: marginal[atom[0]] * Q.prob(atom[1], atom[0]))
    return max(value, 0.0) if math.isfinite(value) else value


def _marginal_gap_ok(gap: np.ndarray, tol: float, root_slack: float) -> bool:
    return bool(np.all(gap >= -tol) and np.all(gap <= root_slack + tol)
                and gap.sum() <= root_slack + tol)


def rate_J(varpi: PairMeasure, nu: OffspringMeasure, Q: OffspringKernel,
           tol: float = MARGINAL_TOL, consistency_tol: float = CONSISTENCY_TOL,
           root_slack: float = 0.0, project: bool = False) -> RateValue:
    """H(nu | nu_1 (x) Q) on (sub-)consistent pairs with varpi_2 = nu_1.

    root_slack allows nu_1 to exceed varpi_2 by a total of root_slack, which is
    1/|T| for the empirical measures of a realized tree. With project=True the
    reference marginal is snapped to varpi_2 once the gap is within tolerance.
    """
    if check_consistency(varpi, nu, consistency_tol) is ConsistencyClass.NEITHER:
        return math.inf
    nu_1 = nu_first(nu)
    varpi_2 = pair_second(varpi)
    if not _marginal_gap_ok(nu_1 - varpi_2, tol, root_slack):
        return math.inf
    marginal = varpi_2 if project else nu_1
    return _entropy_against_kernel(nu, Q, marginal)


def rate_Jk(varpi: PairMeasure, nu: OffspringMeasure, Q_k: OffspringKernel,
            k: Optional[int] = None, tol: float = MARGINAL_TOL,
            consistency_tol: float = CONSISTENCY_TOL, root_slack: float = 0.0,
            project: bool = False) -> RateValue:
    """rate_J restricted to consistent pairs supported on X_k*."""
    k = Q_k.support_bound if k is None else k
    if k is None:
        raise DomainError("rate_Jk needs a kernel with bounded support or an explicit k")
    if nu.max_count > k:
        return math.inf
    if check_consistency(varpi, nu, consistency_tol) is not ConsistencyClass.CONSISTENT:
        return math.inf
    return rate_J(varpi, nu, Q_k, tol=tol, consistency_tol=consistency_tol,
                  root_slack=root_slack, project=project)


def rate_K(nu: OffspringMeasure, Q: OffspringKernel, tol: float = MARGINAL_TOL) -> RateValue:
    """H(nu | nu_1 (x) Q) when <m>nu(b) <= nu_1(b) for every b."""
    nu_1 = nu_first(nu)
    children = multiplicity_pair(nu).sum(axis=0)
    if np.any(children > nu_1 + tol):
        return math.inf
    return _entropy_against_kernel(nu, Q, nu_1)


def log_mgf(p: CountLaw, lam: float) -> float:
    """Lambda_p(lam) = log sum_n e^{lam n} p(n)"""
    return p.log_mgf(lam)


def log_mgf_derivatives(p: CountLaw, lam: float) -> Tuple[float, float, float]:
    """(Lambda, Lambda', Lambda'') at lam."""
    return p.log_mgf(lam), p.slope(lam), p.curvature(lam)


def _legendre_at_boundary(p: CountLaw, x: float) -> RateValue:
    """lam_b x - Lambda(lam_b-) when Lambda' stays below x up to the boundary."""
    b = p.domain_boundary
    inner = b - 1e-15 * max(1.0, abs(b))
    return max(b * x - p.log_mgf(inner), 0.0)


def legendre_Ip(p: CountLaw, x: float) -> RateValue:
    """I_p(x) = sup_lam {lam x - Lambda_p(lam)}."""
    if x < 0:
        raise DomainError(f"I_p is defined for x >= 0, got {x}")
    lo_support = p.min_support
    hi_support = p.max_support
    if x < lo_support or (hi_support is not None and x > hi_support):
        return math.inf
    if x == lo_support or (hi_support is not None and x == hi_support):
        mass = p.pmf(int(x))
        return -math.log(mass) if mass > 0 else math.inf
    if p.mean() == x:
        return 0.0

    try:
        lo, hi = grow_bracket(lambda t: p.slope(t) - x, p.domain_boundary)
    except DomainError:
        debug_step("LEGENDRE_IP", f"{p.spec()} x={x}: supremum at the MGF boundary")
        return _legendre_at_boundary(p, x)
    lam = optimize.brentq(lambda t: p.slope(t) - x, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                          maxiter=500)
    return max(lam * x - p.log_mgf(lam), 0.0)


def ip_geometric_closed(x: float) -> RateValue:
    """I_p for p(l) = 2^{-(l+1)}: x log x - (x+1) log((x+1)/2)."""
    if x < 0:
        raise DomainError(f"I_p is defined for x >= 0, got {x}")
    return float(special.xlogy(x, x) - (x + 1.0) * math.log((x + 1.0) / 2.0))


def _as_matrix(mu) -> np.ndarray:
    return mu.entries if isinstance(mu, PairMeasure) else np.asarray(mu, dtype=float)


def rate_I(mu, transition, p: CountLaw,
           ip: Optional[Callable[[float], float]] = None) -> RateValue:
    """Rate of the edge measure of a Markov-chain-indexed tree.

    H(mu | mu_1 (x) Q) + sum_a mu_2(a) I_p(mu_1(a) / mu_2(a)), infinite unless
    mu_1 << mu_2. `ip` replaces the Legendre transform (e.g. a closed form).
    """
    mu = _as_matrix(mu)
    T = np.asarray(transition, dtype=float)
    mu_1, mu_2 = mu.sum(axis=1), mu.sum(axis=0)
    if np.any((mu_1 > 0) & (mu_2 <= 0)):
        return math.inf
    ip = ip or (lambda x: legendre_Ip(p, x))
    entropy = relative_entropy(mu, mu_1[:, None] * T)
    if not math.isfinite(entropy):
        return math.inf
    legendre = sum(mu_2[a] * ip(mu_1[a] / mu_2[a]) for a in range(len(mu_2)) if mu_2[a] > 0)
    return max(entropy + legendre, 0.0)


def rate_I_geometric(mu, transition, mass_tol: float = 1e-9) -> RateValue:
    """Closed form of rate_I for p(l) = 2^{-(l+1)}."""
    mu = _as_matrix(mu)
    T = np.asarray(transition, dtype=float)
    mu_1, mu_2 = mu.sum(axis=1), mu.sum(axis=0)
    if np.any((mu_1 > 0) & (mu_2 <= 0)):
        return math.inf
    if abs(mu.sum() - 1.0) > mass_tol:
        debug_step("RATE_I_GEOMETRIC", f"input mass {mu.sum()!r} differs from 1", "WARNING")
    middle = 0.5 * (mu_1 + mu_2)
    value = (relative_entropy(mu, mu_1[:, None] * T)
             + relative_entropy(mu_1, middle) + relative_entropy(mu_2, middle))
    return max(value, 0.0)


def _compositions(n: int, parts: int):
    """All nonnegative integer vectors of length `parts` summing to n."""
    if parts == 0:
        if n == 0:
            yield ()
        return
    for bars in itertools.combinations(range(n + parts - 1), parts - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + parts - 2 - prev)
        yield tuple(out)


def _exponential_family_min(log_w: np.ndarray, M: np.ndarray, target: np.ndarray,
                            damping: float = ORACLE_DAMPING, max_iter: int = ORACLE_MAX_ITER,
                            tol: float = ORACLE_TOL) -> Tuple[float, int, float]:
    """sup_beta {beta . target - log sum exp(log_w + M beta)} by damped Newton.

    The minimizing law of inf H(nu | w) under the moment constraint M^T nu = target
    is an exponential tilt of w, so the entropy problem is solved on this
    concave dual in beta instead of by fixed-point iteration on the tilt. The
    dual has the covariance of M under the tilted law as its Hessian, and
    Newton steps on it converge quadratically near the optimum. A fixed-point
    update of beta contracts only linearly and slows down as target nears
    the boundary of the moment polytope.

    Returns (value, iterations, final constraint error). Each Newton step is
    shrunk by `damping` until the dual objective decreases.
    """
    beta = np.zeros(M.shape[1])

    def dual(b):
        return special.logsumexp(log_w + M @ b) - b @ target

    error = math.inf
    for it in range(1, max_iter + 1):
        logits = log_w + M @ beta
        w = np.exp(logits - special.logsumexp(logits))
        mean = w @ M
        grad = mean - target
        error = float(np.max(np.abs(grad)))
        if error <= tol:
            return -dual(beta), it, error
        centered = M - mean
        hess = (centered * w[:, None]).T @ centered
        step = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        current = dual(beta)
        scale = 1.0
        while scale > 1e-12 and dual(beta + scale * step) > current:
            scale *= damping
        beta = beta + scale * step
    debug_step("LEMMA_INF_ORACLE", f"no convergence, constraint error {error:.2e}", "WARNING")
    return -dual(beta), max_iter, error


def lemma_inf_oracle(phi, q_hat, p: CountLaw, k: int) -> Tuple[RateValue, RateValue]:
    """(brute force, closed form) for inf H(nu~ | q) subject to sum_c m(., c) nu~(c) = phi.

    q(c) = p(n) prod_i q_hat(a_i) on X*; the brute force searches X_k* only.
    Configurations with the same multiplicity vector carry the same optimal
    weight relative to q, so the search runs over multiplicity vectors.
    """
    phi = np.asarray(phi, dtype=float)
    q_hat = np.asarray(q_hat, dtype=float)
    if np.any(phi < 0):
        raise DomainError("phi must be nonnegative")
    z = float(phi.sum())

    if z == 0.0:
        p0 = p.pmf(0)
        value = -math.log(p0) if p0 > 0 else math.inf
        return value, value

    closed = z * relative_entropy(phi / z, q_hat) + legendre_Ip(p, z)

    active = [b for b in range(len(phi)) if phi[b] > 0]
    if any(q_hat[b] <= 0 for b in active) or z > k:
        return math.inf, closed

    log_q = np.log(q_hat[active])
    counts = range(k, k + 1) if z == k else range(0, k + 1)
    rows, log_w = [], []
    for n in counts:
        pn = p.pmf(n)
        if pn <= 0:
            continue
        for m in _compositions(n, len(active)):
            m = np.array(m, dtype=float)
            rows.append(m)
            log_w.append(math.log(pn) + special.gammaln(n + 1) - special.gammaln(m + 1).sum()
                         + m @ log_q)
    if not rows:
        return math.inf, closed
    M = np.array(rows)
    if z == k:
        M, target = M[:, :-1], phi[active][:-1]
    else:
        target = phi[active]
    log_w = np.array(log_w)
    if M.shape[1] == 0:
        value = -special.logsumexp(log_w)
        return float(value), closed
    value, iterations, error = _exponential_family_min(log_w, M, target)
    debug_step("LEMMA_INF_ORACLE", f"k={k} z={z:.4g}: {iterations} iterations, error {error:.1e}")
    return float(value), closed


@dataclass(frozen=True)
class BallSearchResult:
    """Approximate inf of rate_J over a ball, with the search resolution"""
    rate: RateValue
    resolution: int
    evaluations: int
    nu: Optional[OffspringMeasure]
    pair: Optional[PairMeasure]


def closest_pair_distance(nu_weights: np.ndarray, atoms, alphabet: Alphabet,
                          center_pair: np.ndarray) -> float:
    """min TV(varpi, center) over varpi >= <m>nu with varpi_2 = nu_1; inf if none exists."""
    S = alphabet.size
    D = np.zeros((S, S))
    nu_1 = np.zeros(S)
    for w, (a, c) in zip(nu_weights, atoms):
        nu_1[a] += w
        if c.count:
            D[a] += w * multiplicity_vector(c, S)
    if np.any(D.sum(axis=0) > nu_1 + MARGINAL_TOL):
        return math.inf
    raised = np.maximum(center_pair, D)
    l1 = float(np.sum(raised - center_pair) + np.sum(np.abs(nu_1 - raised.sum(axis=0))))
    return 0.5 * l1


def _closest_pair(nu_weights, atoms, alphabet, center_pair) -> np.ndarray:
    """A varpi attaining closest_pair_distance."""
    S = alphabet.size
    D = np.zeros((S, S))
    nu_1 = np.zeros(S)
    for w, (a, c) in zip(nu_weights, atoms):
        nu_1[a] += w
        if c.count:
            D[a] += w * multiplicity_vector(c, S)
    varpi = np.maximum(center_pair, D)
    for b in range(S):
        excess = varpi[:, b].sum() - nu_1[b]
        if excess < 0:
            varpi[b, b] -= excess
        else:
            for a in range(S):
                take = min(excess, varpi[a, b] - D[a, b])
                varpi[a, b] -= take
                excess -= take
    return varpi


def minimize_rate_ball(center_pair: PairMeasure, center_nu: OffspringMeasure, radius: float,
                       Q: OffspringKernel, k: int, resolution: int = 10,
                       budget: int = BALL_BUDGET, refine: bool = True) -> BallSearchResult:
    """Approximate inf of rate_J over {max(TV(varpi, center_pair), TV(nu, center_nu)) <= radius}.

    nu ranges over measures on X_k* with Q > 0. Candidates are the centre,
    the segment from the centre to the zero of J (when it lies on X_k*) and a
    simplex lattice of the given resolution; the best candidate is refined by
    SLSQP on (nu, varpi) jointly.
    """
    if radius < 0:
        raise DomainError(f"radius must be nonnegative, got {radius}")
    alphabet = Q.alphabet
    S = alphabet.size
    center_value = rate_J(center_pair, center_nu, Q)
    if radius == 0.0:
        return BallSearchResult(center_value, resolution, 1, center_nu, center_pair)

    atoms: List[Tuple[int, OffspringConfig]] = []
    log_q: List[float] = []
    for a in range(S):
        for c, q in Q.law_upto(a, k, budget=budget):
            atoms.append((a, c))
            log_q.append(math.log(q))
    log_q = np.array(log_q)
    N = len(atoms)
    atom_index = {atom: i for i, atom in enumerate(atoms)}
    center_vec = np.zeros(N)
    outside = 0.0
    for atom, w in center_nu:
        if atom in atom_index:
            center_vec[atom_index[atom]] = w
        else:
            outside += w
    C = center_pair.entries
    parent = np.array([a for a, _ in atoms])

    def value_of(x: np.ndarray) -> float:
        nu_1 = np.bincount(parent, weights=x, minlength=S)
        ref = np.log(np.maximum(nu_1[parent], LOG_FLOOR)) + log_q
        return float(max(np.sum(special.xlogy(x, x)) - x @ ref, 0.0))

    def distance(x: np.ndarray) -> float:
        nu_dist = 0.5 * (np.abs(x - center_vec).sum() + outside)
        return max(nu_dist, closest_pair_distance(x, atoms, alphabet, C))

    best_value, best_x, evaluations = math.inf, None, 0
    candidates: List[np.ndarray] = []
    if math.isfinite(center_value) and outside == 0.0:
        candidates.append(center_vec)

    report = classify(mean_matrix(Q))
    zero = None
    if Q.support_bound is not None and Q.support_bound <= k and report.weakly_irreducible \
            and not report.transient and report.pf_eigenvalue <= 1.0 + 1e-8:
        pf = alphabet.vector(report.right_eigenvector)
        zero = np.array([pf[a] * math.exp(lq) for (a, _), lq in zip(atoms, log_q)])
        zero = zero / zero.sum()
        start = center_vec if candidates else zero
        for j in range(resolution + 1):
            t = j / resolution
            candidates.append((1 - t) * start + t * zero)

    lattice_size = math.comb(resolution + N - 1, N - 1)
    if lattice_size + len(candidates) > budget:
        raise ResourceBudgetError(
            f"simplex lattice with {N} atoms at resolution {resolution} has {lattice_size} points",
            budget)

    def lattice():
        for composition in _compositions(resolution, N):
            yield np.array(composition, dtype=float) / resolution

    for x in itertools.chain(candidates, lattice()):
        evaluations += 1
        if distance(x) > radius + 1e-12:
            continue
        v = value_of(x)
        if v < best_value:
            best_value, best_x = v, x

    if best_x is None:
        debug_step("MINIMIZE_RATE_BALL", "no feasible candidate at this resolution", "WARNING")
        return BallSearchResult(math.inf, resolution, evaluations, None, None)

    best_pair = _closest_pair(best_x, atoms, alphabet, C)
    if refine and best_value > 0.0:
        refined = _refine_ball(best_x, best_pair, atoms, parent, log_q, center_vec, outside, C,
                               radius, S, value_of)
        if refined is not None and refined[0] < best_value:
            best_value, best_x, best_pair = refined
    debug_dump_state({"rate": best_value, "evaluations": evaluations}, "Ball search")

    nu = OffspringMeasure(alphabet, {atom: float(w) for atom, w in zip(atoms, best_x) if w > 0})
    return BallSearchResult(best_value, resolution, evaluations, nu, PairMeasure(alphabet, best_pair))


def _refine_ball(x0, pair0, atoms, parent, log_q, center_vec, outside, C, radius, S, value_of):
    """SLSQP on (nu, varpi, |nu - c|, |varpi - C|) starting from a feasible point."""
    N = len(atoms)
    P = S * S
    D_rows = np.zeros((P, N))
    for i, (a, c) in enumerate(atoms):
        if c.count:
            D_rows[a * S:(a + 1) * S, i] = multiplicity_vector(c, S)
    onehot_parent = np.zeros((S, N))
    onehot_parent[parent, np.arange(N)] = 1.0
    col_sum = np.zeros((S, P))
    for a in range(S):
        for b in range(S):
            col_sum[b, a * S + b] = 1.0
    c_flat = C.reshape(-1)

    n_var = 2 * N + 2 * P
    nu_sl, pi_sl = slice(0, N), slice(N, N + P)
    snu_sl, spi_sl = slice(N + P, 2 * N + P), slice(2 * N + P, n_var)

    def objective(z):
        return value_of(np.maximum(z[nu_sl], 0.0))

    def gradient(z):
        x = np.maximum(z[nu_sl], 1e-15)
        nu_1 = onehot_parent @ x
        g = np.zeros(n_var)
        g[nu_sl] = np.log(x) - np.log(np.maximum(nu_1[parent], LOG_FLOOR)) - log_q
        return g

    constraints = [
        {"type": "eq", "fun": lambda z: np.array([z[nu_sl].sum() - 1.0])},
        {"type": "eq", "fun": lambda z: col_sum @ z[pi_sl] - onehot_parent @ z[nu_sl]},
        {"type": "ineq", "fun": lambda z: z[pi_sl] - D_rows @ z[nu_sl]},
        {"type": "ineq", "fun": lambda z: z[snu_sl] - (z[nu_sl] - center_vec)},
        {"type": "ineq", "fun": lambda z: z[snu_sl] + (z[nu_sl] - center_vec)},
        {"type": "ineq", "fun": lambda z: z[spi_sl] - (z[pi_sl] - c_flat)},
        {"type": "ineq", "fun": lambda z: z[spi_sl] + (z[pi_sl] - c_flat)},
        {"type": "ineq", "fun": lambda z: np.array([2 * radius - outside - z[snu_sl].sum()])},
        {"type": "ineq", "fun": lambda z: np.array([2 * radius - z[spi_sl].sum()])},
    ]
    pi0 = pair0.reshape(-1)
    z0 = np.concatenate([x0, pi0, np.abs(x0 - center_vec), np.abs(pi0 - c_flat)])
    bounds = [(0.0, 1.0)] * N + [(0.0, None)] * P + [(0.0, None)] * (N + P)
    result = optimize.minimize(objective, z0, jac=gradient, method="SLSQP", bounds=bounds,
                               constraints=constraints, options={"maxiter": 500, "ftol": 1e-12})
    z = result.x
    x = np.maximum(z[nu_sl], 0.0)
    x = x / x.sum()
    violation = max(
        abs(x.sum() - 1.0),
        float(np.max(np.abs(col_sum @ z[pi_sl] - onehot_parent @ x))),
        float(max(0.0, np.max(D_rows @ x - z[pi_sl]))),
        0.5 * (np.abs(x - center_vec).sum() + outside) - radius,
        0.5 * np.abs(z[pi_sl] - c_flat).sum() - radius,
    )
    debug_step("MINIMIZE_RATE_BALL", f"SLSQP {result.message}; violation {violation:.1e}")
    if violation > 1e-8:
        return None
    return value_of(x), x, z[pi_sl].reshape(S, S)
