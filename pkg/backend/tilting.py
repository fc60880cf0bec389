"""
Exponential change of measure for typed trees and the importance-sampling
estimators built on it.

A tilt g(a, c) reweights the offspring law of a type-a vertex by e^{g(a, c)}.
Tilts are given as a finite table of values plus a background that is linear
in the child types, g(a, c) = default + sum_i linear[a, a_i], which covers
constant tilts and the size tilt theta * n(c).
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize, special

from shared.debug_config import debug_step
from shared.errors import DomainError, GWLDPError
from shared.types import (ConditionalEstimateReport, DecayPoint, EstimateReport, TiltDocument,
                          TiltEntry)

from .empirical import (OffspringMeasure, PairMeasure, nu_first, offspring_measure,
                        pair_measure_tilde, tv_distance)
from .laws import DEFAULT_TAIL_MASS
from .model import (EXPANSION_BUDGET, Alphabet, ExplicitKernel, FactoredKernel, OffspringConfig,
                    OffspringKernel, grow_bracket, multiplicity_vector, validate_root_law)
from .trees import TypedTree, sample_tree

GIBBS_CLIP = 20.0
WEIGHT_FORMS_TOL = 1e-9

Atom = Tuple[int, OffspringConfig]


@dataclass(frozen=True)
class TiltFunction:
    """g(a, c): table values, else default + sum_i linear[a, a_i]"""
    values: Mapping[Atom, float] = field(default_factory=dict)
    default: float = 0.0
    linear: Optional[np.ndarray] = None

    def __post_init__(self):
        values = {(int(a), c): float(v) for (a, c), v in self.values.items()}
        if any(not math.isfinite(v) for v in values.values()) or not math.isfinite(self.default):
            raise DomainError("tilt values must be finite")
        object.__setattr__(self, "values", values)
        if self.linear is not None:
            linear = np.array(self.linear, dtype=float)
            if linear.ndim != 2 or linear.shape[0] != linear.shape[1]:
                raise DomainError(f"linear tilt must be a square matrix, got shape {linear.shape}")
            if not np.all(np.isfinite(linear)):
                raise DomainError("linear tilt entries must be finite")
            linear.setflags(write=False)
            object.__setattr__(self, "linear", linear)

    @classmethod
    def constant(cls, kappa: float) -> "TiltFunction":
        return cls(default=kappa)

    @classmethod
    def size_tilt(cls, theta: float, size: int) -> "TiltFunction":
        """g(a, c) = theta * n(c)"""
        return cls(linear=np.full((size, size), float(theta)))

    @property
    def is_zero(self) -> bool:
        return (self.default == 0.0 and all(v == 0.0 for v in self.values.values())
                and (self.linear is None or not np.any(self.linear)))

    @property
    def bound(self) -> float:
        """max |g|; infinite when a nonzero linear part meets unbounded counts"""
        if self.linear is not None and np.any(self.linear):
            return math.inf
        return max([abs(self.default)] + [abs(v) for v in self.values.values()])

    def linear_row(self, a: int, size: int) -> np.ndarray:
        if self.linear is None:
            return np.zeros(size)
        return self.linear[a]

    def background(self, a: int, c: OffspringConfig) -> float:
        if self.linear is None or not c.count:
            return self.default
        return self.default + float(self.linear[a, list(c.children)].sum())

    def __call__(self, a: int, c: OffspringConfig) -> float:
        value = self.values.get((a, c))
        return self.background(a, c) if value is None else value

    def table_for(self, a: int) -> List[Tuple[OffspringConfig, float]]:
        return [(c, v) for (b, c), v in self.values.items() if b == a]


ZERO_TILT = TiltFunction()


def u_g(g: TiltFunction, Q: OffspringKernel) -> np.ndarray:
    """U_g(a) = log sum_c e^{g(a, c)} Q{c | a}"""
    S = Q.size
    out = np.zeros(S)
    for a in range(S):
        lam = g.linear_row(a, S)
        total = math.exp(g.default) * Q.linear_mgf(a, lam)
        for c, value in g.table_for(a):
            q = Q.prob(c, a)
            if q > 0.0:
                total += q * (math.exp(value) - math.exp(g.background(a, c)))
        if total <= 0.0:
            raise DomainError(f"tilt has no mass left for type '{Q.alphabet.label(a)}'")
        out[a] = math.log(total)
    return out


class TiltedKernel(OffspringKernel):
    """Q{c | a} e^{g(a, c) - U_g(a)} over a factored base kernel.

    Sampling mixes the finitely many tabulated configurations with a
    background that is again factored per type (count law tilted by
    log sum_b T(a, b) e^{linear[a, b]}, children drawn from the reweighted
    row), rejecting background draws that land on a tabulated configuration.
    """

    def __init__(self, base: FactoredKernel, g: TiltFunction, U: Optional[np.ndarray] = None):
        self.base = base
        self.g = g
        self.alphabet = base.alphabet
        self.support_bound = base.support_bound
        S = base.size
        self.U = u_g(g, base) if U is None else np.asarray(U, dtype=float)

        self._bg_laws = []
        self._bg_rows = []
        self._bg_log_scale = []
        self._tables = []
        self._table_mass = []
        for a in range(S):
            weights = base.transition[a] * np.exp(g.linear_row(a, S))
            s = float(weights.sum())
            self._bg_log_scale.append(math.log(s))
            self._bg_laws.append(base.count_law.tilt(math.log(s)))
            self._bg_rows.append(list(accumulate(weights / s)))
            table = []
            for c, value in g.table_for(a):
                q = base.prob(c, a)
                if q > 0.0:
                    table.append((c, q * math.exp(value - self.U[a])))
            self._tables.append(table)
            self._table_mass.append(math.fsum(w for _, w in table))

    def __repr__(self) -> str:
        return f"TiltedKernel(base={self.base!r}, tabulated={sum(len(t) for t in self._tables)})"

    def prob(self, c, a):
        q = self.base.prob(c, a)
        return q * math.exp(self.g(a, c) - self.U[a]) if q > 0.0 else 0.0

    def law_upto(self, a, k, budget=EXPANSION_BUDGET):
        for c, q in self.base.law_upto(a, k, budget=budget):
            yield c, q * math.exp(self.g(a, c) - self.U[a])

    def law(self, a, tail=DEFAULT_TAIL_MASS, budget=EXPANSION_BUDGET):
        cutoff = self._bg_laws[a].tail_cutoff(tail)
        seen = set()
        for c, q in self.law_upto(a, cutoff, budget=budget):
            seen.add(c)
            yield c, q
        for c, q in self._tables[a]:
            if c not in seen:
                yield c, q

    def sample(self, a, rng):
        u = rng.random()
        if u < self._table_mass[a]:
            cumulative = list(accumulate(w for _, w in self._tables[a]))
            i = bisect_right(cumulative, u)
            return self._tables[a][min(i, len(cumulative) - 1)][0]
        tabulated = {c for c, _ in self._tables[a]}
        rows = self._bg_rows[a]
        while True:
            n = int(self._bg_laws[a].sample(rng))
            children = tuple(min(bisect_right(rows, x * rows[-1]), len(rows) - 1)
                             for x in rng.random(n)) if n else ()
            c = OffspringConfig(children)
            if c not in tabulated:
                return c

    def mass_upto(self, k, a):
        return math.fsum(q for _, q in self.law_upto(a, k))

    def linear_mgf(self, a, lam):
        lam = np.asarray(lam, dtype=float)
        S = self.size
        shifted = self.g.linear_row(a, S) + lam
        total = math.exp(self.g.default) * self.base.linear_mgf(a, shifted)
        for c, value in self.g.table_for(a):
            q = self.base.prob(c, a)
            if q > 0.0:
                extra = float(lam[list(c.children)].sum()) if c.count else 0.0
                total += q * (math.exp(value + extra) - math.exp(self.g.background(a, c) + extra))
        return total * math.exp(-self.U[a])

    def mean_entries(self):
        S = self.size
        A = np.zeros((S, S))
        for b in range(S):
            law = self._bg_laws[b]
            rows = np.diff(np.concatenate([[0.0], self._bg_rows[b]]))
            bg_weight = math.exp(self.g.default + self.base.count_law.log_mgf(self._bg_log_scale[b])
                                 - self.U[b])
            A[:, b] = bg_weight * law.mean() * rows
            for c, value in self.g.table_for(b):
                q = self.base.prob(c, b)
                if q > 0.0 and c.count:
                    delta = q * (math.exp(value) - math.exp(self.g.background(b, c))) * math.exp(-self.U[b])
                    A[:, b] += delta * multiplicity_vector(c, S)
        return A


def tilted_model(Q: OffspringKernel, mu, g: TiltFunction) -> Tuple[OffspringKernel, np.ndarray]:
    """(Q~, mu~) with Q~{c | a} = Q{c | a} e^{g(a, c) - U(a)} and mu~(a) proportional to mu(a) e^{U(a)}."""
    mu = validate_root_law(mu, Q.alphabet)
    if g.is_zero:
        return Q, mu
    U = u_g(g, Q)
    log_root = np.log(np.where(mu > 0, mu, 1.0)) + U
    root = np.where(mu > 0, np.exp(log_root - special.logsumexp(log_root[mu > 0])), 0.0)

    if isinstance(Q, ExplicitKernel):
        laws = [{c: q * math.exp(g(a, c) - U[a]) for c, q in Q.laws[a].items()}
                for a in range(Q.size)]
        return ExplicitKernel(Q.alphabet, laws, support_bound=Q.support_bound), root
    if isinstance(Q, FactoredKernel):
        if not g.values and g.linear is not None and np.all(g.linear == g.linear[0, 0]):
            theta = float(g.linear[0, 0])
            return FactoredKernel(Q.alphabet, Q.count_law.tilt(theta), Q.transition), root
        return TiltedKernel(Q, g, U), root
    raise DomainError(f"cannot tilt a {type(Q).__name__}")


def _log_normalizer(mu: np.ndarray, U: np.ndarray) -> float:
    """log sum_b mu(b) e^{U(b)}"""
    support = mu > 0
    return float(special.logsumexp(U[support], b=mu[support]))


def log_rn_weight_product(tree: TypedTree, g: TiltFunction, U: np.ndarray, mu: np.ndarray) -> float:
    """U(X(root)) - log sum mu e^U + sum_v [g(X(v), C(v)) - U(X(v))]"""
    total = U[tree.types[0]] - _log_normalizer(mu, U)
    for v, c in enumerate(tree.configs()):
        a = tree.types[v]
        total += g(a, c) - U[a]
    return float(total)


def log_rn_weight_empirical(tree: TypedTree, g: TiltFunction, U: np.ndarray, mu: np.ndarray) -> float:
    """n <g - sum_b m(b, .) U(b), M_X> - log sum mu e^U"""
    nu = offspring_measure(tree)
    S = tree.alphabet.size
    inner = 0.0
    for (a, c), w in nu:
        inner += w * (g(a, c) - float(multiplicity_vector(c, S) @ U))
    return float(tree.size * inner - _log_normalizer(mu, U))


def log_rn_weight(tree: TypedTree, g: TiltFunction, Q: OffspringKernel, mu,
                  U: Optional[np.ndarray] = None) -> float:
    """log (dP~/dP)(tree), computed in both algebraic forms which must agree."""
    mu = validate_root_law(mu, Q.alphabet)
    U = u_g(g, Q) if U is None else U
    product = log_rn_weight_product(tree, g, U, mu)
    empirical = log_rn_weight_empirical(tree, g, U, mu)
    if abs(product - empirical) > WEIGHT_FORMS_TOL * max(1.0, abs(product)):
        raise GWLDPError(f"weight forms disagree: {product!r} vs {empirical!r}")
    return product


class Event(ABC):
    """Predicate on (L~_X, M_X)"""

    @abstractmethod
    def __call__(self, pair: PairMeasure, nu: OffspringMeasure) -> bool:
        ...

    @abstractmethod
    def describe(self) -> str:
        ...

    def suggested_tilt(self, Q: OffspringKernel) -> TiltFunction:
        """Tilt that makes the event typical; zero when there is nothing to aim at."""
        return ZERO_TILT


class AlwaysEvent(Event):
    def __call__(self, pair, nu):
        return True

    def describe(self):
        return "true"


@dataclass(frozen=True)
class BallEvent(Event):
    """Total-variation ball around a pair or offspring measure"""
    kind: str
    center: object
    radius: float

    def __post_init__(self):
        if self.kind not in ("pair", "offspring"):
            raise DomainError(f"ball kind must be 'pair' or 'offspring', got {self.kind!r}")
        if self.radius < 0:
            raise DomainError(f"radius must be nonnegative, got {self.radius}")

    def __call__(self, pair, nu):
        observed = pair if self.kind == "pair" else nu
        return tv_distance(observed, self.center) <= self.radius

    def describe(self):
        return f"ball:kind={self.kind},radius={self.radius!r}"

    def suggested_tilt(self, Q):
        if self.kind == "offspring":
            return gibbs_tilt(self.center, Q)
        return pair_gibbs_tilt(self.center, Q)


def gibbs_tilt(nu_star: OffspringMeasure, Q: OffspringKernel, clip: float = GIBBS_CLIP,
               default: float = -GIBBS_CLIP) -> TiltFunction:
    """g = log(nu* / nu*_1 (x) Q) clipped to [-clip, clip] on supp(nu*), `default` elsewhere."""
    nu_1 = nu_first(nu_star)
    values: Dict[Atom, float] = {}
    for (a, c), w in nu_star:
        q = Q.prob(c, a)
        if q > 0.0:
            values[(a, c)] = float(np.clip(math.log(w / (nu_1[a] * q)), -clip, clip))
    return TiltFunction(values=values, default=default)


def _solve_linear_tilt(Q: OffspringKernel, a: int, target: np.ndarray, clip: float) -> np.ndarray:
    """lam with E_{Q tilted by exp(sum_i lam[a_i])}[m(., c) | a] = target."""
    S = Q.size
    lam = np.full(S, -clip)
    total = float(target.sum())
    if total <= 0.0:
        return lam
    if isinstance(Q, FactoredKernel):
        law = Q.count_law
        try:
            lo, hi = grow_bracket(lambda t: law.slope(t) - total, law.domain_boundary)
            theta = optimize.brentq(lambda t: law.slope(t) - total, lo, hi, xtol=1e-12)
        except DomainError:
            theta = clip if total > law.mean() else -clip
        row = Q.transition[a]
        share = target / total
        for b in range(S):
            if share[b] > 0 and row[b] > 0:
                lam[b] = theta + math.log(share[b] / row[b])
        return np.clip(lam, -clip, clip)

    configs = [(c, q) for c, q in Q.law(a)]
    M = np.array([multiplicity_vector(c, S) for c, _ in configs], dtype=float)
    log_w = np.log([q for _, q in configs])
    active = target > 0
    keep = np.all(M[:, ~active] == 0, axis=1)
    M, log_w = M[keep][:, active], log_w[keep]
    beta = np.zeros(M.shape[1])
    for _ in range(200):
        logits = log_w + M @ beta
        w = np.exp(logits - special.logsumexp(logits))
        grad = w @ M - target[active]
        if np.max(np.abs(grad)) <= 1e-10:
            break
        centered = M - w @ M
        hess = (centered * w[:, None]).T @ centered
        beta = beta - 0.5 * np.linalg.lstsq(hess, grad, rcond=None)[0]
    lam[active] = beta
    return np.clip(lam, -clip, clip)


def pair_gibbs_tilt(center: PairMeasure, Q: OffspringKernel, clip: float = GIBBS_CLIP) -> TiltFunction:
    """Linear tilt whose children-per-parent means match a target pair measure.

    For each parent type a the mean vector of child types is set to
    center(a, .) / nu_1(a) with nu_1 the normalized second marginal of center.
    """
    S = Q.size
    marginal = center.entries.sum(axis=0)
    if marginal.sum() <= 0:
        return ZERO_TILT
    marginal = marginal / marginal.sum()
    linear = np.zeros((S, S))
    for a in range(S):
        if marginal[a] > 0:
            linear[a] = _solve_linear_tilt(Q, a, center.entries[a] / marginal[a], clip)
    return TiltFunction(linear=linear)


def tilt_from_document(doc: TiltDocument, alphabet: Alphabet) -> TiltFunction:
    values = {(alphabet.index(e.type), alphabet.config(*e.children)): e.value for e in doc.values}
    linear = None
    if doc.count_slope:
        linear = np.full((alphabet.size, alphabet.size), doc.count_slope)
    return TiltFunction(values=values, default=doc.default, linear=linear)


def tilt_to_document(g: TiltFunction, alphabet: Alphabet) -> TiltDocument:
    entries = [TiltEntry(type=alphabet.label(a), children=alphabet.config_labels(c), value=v)
               for (a, c), v in sorted(g.values.items(), key=lambda kv: (kv[0][0], kv[0][1].children))]
    slope = 0.0
    if g.linear is not None:
        if not np.all(g.linear == g.linear[0, 0]):
            raise DomainError("only constant linear tilts have a document form")
        slope = float(g.linear[0, 0])
    return TiltDocument(values=entries, default=g.default, count_slope=slope)


@dataclass
class EstimatePartial:
    """Running sums for X = 1{event, |T| = n} w and Y = 1{|T| = n} w"""
    samples: int = 0
    hits: int = 0
    size_hits: int = 0
    sum_x: float = 0.0
    sum_xx: float = 0.0
    sum_y: float = 0.0
    sum_yy: float = 0.0

    def merge(self, other: "EstimatePartial") -> "EstimatePartial":
        return EstimatePartial(
            self.samples + other.samples, self.hits + other.hits, self.size_hits + other.size_hits,
            self.sum_x + other.sum_x, self.sum_xx + other.sum_xx,
            self.sum_y + other.sum_y, self.sum_yy + other.sum_yy,
        )

    def _mean_stderr(self, total: float, squares: float) -> Tuple[float, float]:
        if self.samples == 0:
            return 0.0, 0.0
        mean = total / self.samples
        if self.samples < 2:
            return mean, 0.0
        var = max(squares / self.samples - mean * mean, 0.0) * self.samples / (self.samples - 1)
        return mean, math.sqrt(var / self.samples)

    def joint(self) -> Tuple[float, float]:
        return self._mean_stderr(self.sum_x, self.sum_xx)

    def size(self) -> Tuple[float, float]:
        return self._mean_stderr(self.sum_y, self.sum_yy)

    def ess(self) -> float:
        return self.sum_x ** 2 / self.sum_xx if self.sum_xx > 0 else 0.0

    def size_ess(self) -> float:
        return self.sum_y ** 2 / self.sum_yy if self.sum_yy > 0 else 0.0


@dataclass(frozen=True)
class TiltedSampler:
    """Everything needed to draw weighted samples under (Q~, mu~)"""
    Q: OffspringKernel
    mu: np.ndarray
    g: TiltFunction
    Q_tilted: OffspringKernel
    mu_tilted: np.ndarray
    U: np.ndarray

    @classmethod
    def build(cls, Q: OffspringKernel, mu, g: Optional[TiltFunction] = None) -> "TiltedSampler":
        mu = validate_root_law(mu, Q.alphabet)
        g = g or ZERO_TILT
        Q_tilted, mu_tilted = tilted_model(Q, mu, g)
        U = np.zeros(Q.size) if g.is_zero else u_g(g, Q)
        return cls(Q, mu, g, Q_tilted, mu_tilted, U)

    def run(self, n: int, event: Event, samples: int, rng: np.random.Generator) -> EstimatePartial:
        partial = EstimatePartial()
        zero = self.g.is_zero
        for _ in range(samples):
            tree = sample_tree(self.Q_tilted, self.mu_tilted, rng, max_vertices=n)
            partial.samples += 1
            if not isinstance(tree, TypedTree) or tree.size != n:
                continue
            w = 1.0 if zero else math.exp(-log_rn_weight_product(tree, self.g, self.U, self.mu))
            partial.size_hits += 1
            partial.sum_y += w
            partial.sum_yy += w * w
            if event(pair_measure_tilde(tree), offspring_measure(tree)):
                partial.hits += 1
                partial.sum_x += w
                partial.sum_xx += w * w
        return partial


def estimate_report(partial: EstimatePartial, n: int, seed: int, tilted: bool) -> EstimateReport:
    estimate, stderr = partial.joint()
    unreliable = partial.hits == 0
    if unreliable:
        debug_step("ESTIMATE", f"n={n}: no sample hit the event", "WARNING")
    return EstimateReport(n=n, estimate=estimate, stderr=stderr, samples=partial.samples,
                          hits=partial.hits, effective_sample_size=partial.ess(), seed=seed,
                          unreliable=unreliable, tilted=tilted)


def conditional_report(partial: EstimatePartial, n: int, seed: int,
                       tilted: bool) -> ConditionalEstimateReport:
    """Ratio P{event, n} / P{|T| = n} with a delta-method standard error."""
    joint = estimate_report(partial, n, seed, tilted)
    y_mean, y_err = partial.size()
    size = EstimateReport(n=n, estimate=y_mean, stderr=y_err, samples=partial.samples,
                          hits=partial.size_hits, effective_sample_size=partial.size_ess(),
                          seed=seed, unreliable=partial.size_hits == 0, tilted=tilted)
    if y_mean <= 0.0:
        return ConditionalEstimateReport(n=n, estimate=0.0, stderr=0.0, joint=joint, size=size,
                                         unreliable=True)
    N = partial.samples
    x_mean = partial.sum_x / N
    ratio = x_mean / y_mean
    # X = Y * 1{event}, so E[XY] = E[X^2]
    var_x = partial.sum_xx / N - x_mean ** 2
    var_y = partial.sum_yy / N - y_mean ** 2
    cov = partial.sum_xx / N - x_mean * y_mean
    var_ratio = (var_x - 2 * ratio * cov + ratio ** 2 * var_y) / (y_mean ** 2 * N)
    return ConditionalEstimateReport(n=n, estimate=min(ratio, 1.0), stderr=math.sqrt(max(var_ratio, 0.0)),
                                     joint=joint, size=size, unreliable=joint.unreliable)


def estimate_prob(Q: OffspringKernel, mu, n: int, event: Event, samples: int,
                  g: Optional[TiltFunction], rng: np.random.Generator, seed: int = 0) -> EstimateReport:
    """Importance-sampling estimate of P{event(L~_X, M_X), |T| = n}."""
    sampler = TiltedSampler.build(Q, mu, g)
    partial = sampler.run(n, event, samples, rng)
    return estimate_report(partial, n, seed, not sampler.g.is_zero)


def estimate_conditional_prob(Q: OffspringKernel, mu, n: int, event: Event, samples: int,
                              g: Optional[TiltFunction], rng: np.random.Generator,
                              seed: int = 0) -> ConditionalEstimateReport:
    """P{event | |T| = n} as a ratio of two joint estimates on shared samples."""
    sampler = TiltedSampler.build(Q, mu, g)
    partial = sampler.run(n, event, samples, rng)
    return conditional_report(partial, n, seed, not sampler.g.is_zero)


def decay_value(n: int, estimate: float) -> float:
    """-(1/n) log estimate, +inf for a zero estimate."""
    return -math.log(estimate) / n if estimate > 0.0 else math.inf


def decay_point(n: int, estimate: float, stderr: float, unreliable: bool) -> DecayPoint:
    value = decay_value(n, estimate)
    if not math.isfinite(value):
        debug_step("DECAY", f"n={n}: zero estimate, decay reported as +inf", "WARNING")
    return DecayPoint.from_value(n, estimate, stderr, value, unreliable or not math.isfinite(value))


def estimate_decay_rate(Q: OffspringKernel, mu, event: Event, n_list: Sequence[int], samples: int,
                        g: Optional[TiltFunction], rng: np.random.Generator,
                        conditional: bool = False) -> List[DecayPoint]:
    """-(1/n) log P{event, |T| = n} (or of the conditional probability) for each n."""
    sampler = TiltedSampler.build(Q, mu, g)
    points = []
    for n in n_list:
        partial = sampler.run(n, event, samples, rng)
        if conditional:
            report = conditional_report(partial, n, 0, not sampler.g.is_zero)
        else:
            report = estimate_report(partial, n, 0, not sampler.g.is_zero)
        points.append(decay_point(n, report.estimate, report.stderr, report.unreliable))
    return points
