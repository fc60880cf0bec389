"""
Core model: alphabets, offspring configurations, offspring kernels, mean
matrices and the recurrent/transient analysis of a multitype
Galton-Watson tree.

Configurations store their children as type indices into an Alphabet;
labels only appear at the edges (documents, CSV files, error messages).
"""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy import optimize

from shared.debug_config import debug_dump_state, debug_step
from shared.errors import DomainError, KernelValidationError, ResourceBudgetError
from shared.types import (CountLawDocument, ExplicitEntry, IrreducibilityReport, KernelDocument,
                          KernelSpecDocument)

from .laws import (DEFAULT_TAIL_MASS, CountLaw, count_law_from_parameters,
                   count_law_parameters)

NORMALIZATION_TOL = 1e-12
KERNEL_EQUALITY_TOL = 1e-10
CRITICALITY_TOL = 1e-8
PF_RELATIVE_TOL = 1e-12
PF_MAX_ITER = 200_000
TILT_CAP = 700.0
EXPANSION_BUDGET = 1_000_000


@dataclass(frozen=True)
class Alphabet:
    """Finite ordered set of type labels"""
    symbols: Tuple[str, ...]
    _index: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        symbols = tuple(str(s) for s in self.symbols)
        if not symbols:
            raise KernelValidationError("alphabet must contain at least one type")
        if len(set(symbols)) != len(symbols):
            raise KernelValidationError(f"alphabet labels are not distinct: {symbols}")
        for s in symbols:
            if not s or any(ch in s for ch in ",|:\n"):
                raise KernelValidationError(f"type label {s!r} is empty or contains one of , | :")
        object.__setattr__(self, "symbols", symbols)
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def index(self, label: str) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise DomainError(f"unknown type label '{label}'; alphabet is {list(self.symbols)}") from None

    def label(self, index: int) -> str:
        return self.symbols[index]

    def config(self, *labels: str) -> "OffspringConfig":
        """Configuration from child labels, left to right."""
        return OffspringConfig(tuple(self.index(l) for l in labels))

    def config_labels(self, c: "OffspringConfig") -> List[str]:
        return [self.symbols[i] for i in c.children]

    def multiplicity(self, label: str, c: "OffspringConfig") -> int:
        """m(a, c) with a given by label."""
        return multiplicity(self.index(label), c)

    def vector(self, mapping: Mapping[str, float]) -> np.ndarray:
        """Dense vector from a label -> value map; missing labels are 0."""
        out = np.zeros(self.size)
        for label, value in mapping.items():
            out[self.index(label)] = float(value)
        return out


class OffspringConfig(NamedTuple):
    """c = (n, a_1, ..., a_n): ordered child types of one vertex"""
    children: Tuple[int, ...] = ()

    @property
    def count(self) -> int:
        return len(self.children)

    def key(self, alphabet: Alphabet) -> str:
        """Canonical text key 'count:label|label|...'"""
        return f"{self.count}:" + "|".join(alphabet.config_labels(self))


EMPTY_CONFIG = OffspringConfig(())


def multiplicity(a: int, c: OffspringConfig) -> int:
    """m(a, c): number of children of type a in c."""
    return sum(1 for x in c.children if x == a)


def multiplicity_vector(c: OffspringConfig, size: int) -> np.ndarray:
    """(m(a, c))_a as an integer vector."""
    return np.bincount(np.asarray(c.children, dtype=int), minlength=size)[:size]


def validate_root_law(mu, alphabet: Alphabet, tol: float = 1e-9) -> np.ndarray:
    """Root law as a probability vector over the alphabet."""
    if isinstance(mu, Mapping):
        mu = alphabet.vector(mu)
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (alphabet.size,):
        raise KernelValidationError(f"root law has shape {mu.shape}, expected ({alphabet.size},)")
    if np.any(mu < 0):
        raise KernelValidationError("root law has a negative entry")
    if abs(mu.sum() - 1.0) > tol:
        raise KernelValidationError(f"root law sums to {mu.sum()!r}, not 1")
    return mu


class OffspringKernel(ABC):
    """Offspring law Q{. | a} on X* for every type a"""

    alphabet: Alphabet
    support_bound: Optional[int]

    @abstractmethod
    def prob(self, c: OffspringConfig, a: int) -> float:
        """Q{c | a}"""

    @abstractmethod
    def law(self, a: int, tail: float = DEFAULT_TAIL_MASS,
            budget: int = EXPANSION_BUDGET) -> Iterator[Tuple[OffspringConfig, float]]:
        """Configurations with positive probability under Q{. | a}.

        Unbounded kernels are enumerated up to the offspring count where the
        remaining tail mass drops below `tail`.
        """

    @abstractmethod
    def sample(self, a: int, rng: np.random.Generator) -> OffspringConfig:
        ...

    @abstractmethod
    def mass_upto(self, k: int, a: int) -> float:
        """Q{X_k* | a}"""

    @abstractmethod
    def linear_mgf(self, a: int, lam: np.ndarray) -> float:
        """sum_c Q{c | a} exp(sum_i lam[a_i]) for a vector lam over child types"""

    def count_mgf(self, a: int, theta: float) -> float:
        """sum_c Q{c | a} e^{theta n(c)}"""
        return self.linear_mgf(a, np.full(self.size, float(theta)))

    @abstractmethod
    def mean_entries(self) -> np.ndarray:
        """A(a, b) = sum_c Q{c | b} m(a, c)"""

    @property
    def size(self) -> int:
        return self.alphabet.size

    @property
    def is_bounded(self) -> bool:
        return self.support_bound is not None

    def log_prob(self, c: OffspringConfig, a: int) -> float:
        p = self.prob(c, a)
        return math.log(p) if p > 0.0 else -math.inf

    def transient_bound(self, transient: Sequence[int]) -> float:
        """sup over configs with positive probability of sum_{t in X_t} m(t, c)."""
        transient = set(transient)
        if not transient:
            return 0.0
        worst = 0
        for a in range(self.size):
            for c, _ in self.law(a):
                worst = max(worst, sum(1 for x in c.children if x in transient))
        return float(worst)

    def law_upto(self, a: int, k: int,
                 budget: int = EXPANSION_BUDGET) -> Iterator[Tuple[OffspringConfig, float]]:
        """Exact list of configurations with at most k children."""
        return ((c, p) for c, p in self.law(a, budget=budget) if c.count <= k)

    def to_explicit(self, tail: float = DEFAULT_TAIL_MASS,
                    budget: int = EXPANSION_BUDGET) -> "ExplicitKernel":
        """Explicit kernel from the enumerated law, renormalized per type."""
        laws = []
        for a in range(self.size):
            entries = dict(self.law(a, tail=tail, budget=budget))
            total = sum(entries.values())
            laws.append({c: p / total for c, p in entries.items()})
        return ExplicitKernel(self.alphabet, tuple(laws))


class ExplicitKernel(OffspringKernel):
    """Kernel given as a finite list of (config, probability) per type"""

    def __init__(self, alphabet: Alphabet, laws: Sequence[Mapping[OffspringConfig, float]],
                 support_bound: Optional[int] = None):
        self.alphabet = alphabet
        if len(laws) != alphabet.size:
            raise KernelValidationError(
                f"kernel has {len(laws)} per-type laws for {alphabet.size} types")
        cleaned = []
        for a, law in enumerate(laws):
            entries = {}
            for c, p in law.items():
                if not isinstance(c, OffspringConfig):
                    c = OffspringConfig(tuple(int(x) for x in c))
                p = float(p)
                if p < 0.0 or math.isnan(p):
                    raise KernelValidationError("negative probability", alphabet.label(a))
                if any(x < 0 or x >= alphabet.size for x in c.children):
                    raise KernelValidationError(f"config {c.children} uses an unknown type",
                                                alphabet.label(a))
                if p > 0.0:
                    entries[c] = entries.get(c, 0.0) + p
            total = sum(entries.values())
            if abs(total - 1.0) > NORMALIZATION_TOL:
                raise KernelValidationError(f"offspring law sums to {total!r}, not 1",
                                            alphabet.label(a))
            cleaned.append(entries)
        self.laws: Tuple[Dict[OffspringConfig, float], ...] = tuple(cleaned)
        observed = max((c.count for law in cleaned for c in law), default=0)
        if support_bound is not None and observed > support_bound:
            raise KernelValidationError(
                f"kernel has a config with {observed} children above support bound {support_bound}")
        self.support_bound = observed if support_bound is None else support_bound
        self._samplers = None

    def __repr__(self) -> str:
        return f"ExplicitKernel(alphabet={list(self.alphabet)}, support_bound={self.support_bound})"

    def prob(self, c: OffspringConfig, a: int) -> float:
        return self.laws[a].get(c, 0.0)

    def law(self, a, tail=DEFAULT_TAIL_MASS, budget=EXPANSION_BUDGET):
        return iter(self.laws[a].items())

    def _build_samplers(self):
        samplers = []
        for law in self.laws:
            configs = list(law.keys())
            cumulative = list(itertools.accumulate(law[c] for c in configs))
            samplers.append((configs, cumulative))
        self._samplers = samplers

    def sample(self, a, rng):
        if self._samplers is None:
            self._build_samplers()
        configs, cumulative = self._samplers[a]
        i = bisect_right(cumulative, rng.random() * cumulative[-1])
        return configs[min(i, len(configs) - 1)]

    def mass_upto(self, k, a):
        return sum(p for c, p in self.laws[a].items() if c.count <= k)

    def linear_mgf(self, a, lam):
        lam = np.asarray(lam, dtype=float)
        return math.fsum(p * math.exp(lam[list(c.children)].sum()) for c, p in self.laws[a].items())

    def mean_entries(self):
        A = np.zeros((self.size, self.size))
        for b, law in enumerate(self.laws):
            for c, p in law.items():
                for x in c.children:
                    A[x, b] += p
        return A


class FactoredKernel(OffspringKernel):
    """Q{(n, a_1..a_n) | b} = p(n) * prod_i T(b -> a_i)"""

    def __init__(self, alphabet: Alphabet, count_law: CountLaw, transition):
        self.alphabet = alphabet
        self.count_law = count_law
        T = np.asarray(transition, dtype=float)
        if T.shape != (alphabet.size, alphabet.size):
            raise KernelValidationError(
                f"transition matrix has shape {T.shape}, expected {(alphabet.size, alphabet.size)}")
        if np.any(T < 0):
            row = int(np.argwhere(T < 0)[0][0])
            raise KernelValidationError("transition matrix has a negative entry", f"row {row}")
        sums = T.sum(axis=1)
        for row, s in enumerate(sums):
            if abs(s - 1.0) > NORMALIZATION_TOL:
                raise KernelValidationError(
                    f"transition row sums to {s!r}, not 1", f"row {row} ({alphabet.label(row)})")
        self.transition = T
        self.transition.setflags(write=False)
        self.support_bound = count_law.max_support
        self._count_cumulative = None
        self._row_cumulative = np.cumsum(T, axis=1)

    def __repr__(self) -> str:
        return (f"FactoredKernel(alphabet={list(self.alphabet)}, count_law={self.count_law.spec()}, "
                f"transition={self.transition.tolist()})")

    def prob(self, c, a):
        p = self.count_law.pmf(c.count)
        for x in c.children:
            p *= self.transition[a, x]
        return p

    def law(self, a, tail=DEFAULT_TAIL_MASS, budget=EXPANSION_BUDGET):
        return self.law_upto(a, self.count_law.tail_cutoff(tail), budget)

    def law_upto(self, a, k, budget=EXPANSION_BUDGET):
        bound = self.count_law.max_support
        cutoff = k if bound is None else min(k, bound)
        total = sum(self.size ** n for n in range(cutoff + 1))
        if total > budget:
            raise ResourceBudgetError(
                f"enumerating {total} configurations (counts up to {cutoff}) exceeds budget {budget}",
                budget)
        row = self.transition[a]
        for n in range(cutoff + 1):
            pn = self.count_law.pmf(n)
            if pn <= 0.0:
                continue
            for children in itertools.product(range(self.size), repeat=n):
                p = pn
                for x in children:
                    p *= row[x]
                if p > 0.0:
                    yield OffspringConfig(children), p

    def _count_table(self):
        cutoff = self.count_law.tail_cutoff(1e-16)
        self._count_cumulative = list(itertools.accumulate(self.count_law.pmf_array(cutoff)))

    def sample_count(self, rng: np.random.Generator) -> int:
        if self._count_cumulative is None:
            self._count_table()
        u = rng.random()
        n = bisect_right(self._count_cumulative, u)
        if n < len(self._count_cumulative):
            return n
        return int(self.count_law.sample(rng))

    def sample_children(self, a: int, n: int, rng: np.random.Generator) -> OffspringConfig:
        if n == 0:
            return EMPTY_CONFIG
        idx = np.searchsorted(self._row_cumulative[a], rng.random(n) * self._row_cumulative[a, -1],
                              side="right")
        return OffspringConfig(tuple(int(min(i, self.size - 1)) for i in idx))

    def sample(self, a, rng):
        return self.sample_children(a, self.sample_count(rng), rng)

    def mass_upto(self, k, a):
        return self.count_law.mass_upto(k)

    def linear_mgf(self, a, lam):
        s = float(self.transition[a] @ np.exp(np.asarray(lam, dtype=float)))
        return math.exp(self.count_law.log_mgf(math.log(s)))

    def mean_entries(self):
        mean = self.count_law.mean()
        if not math.isfinite(mean):
            raise DomainError(f"offspring-count law {self.count_law.spec()} has infinite mean")
        return mean * self.transition.T

    def transient_bound(self, transient):
        transient = list(transient)
        if not transient:
            return 0.0
        if not np.any(self.transition[:, transient] > 0):
            return 0.0
        bound = self.count_law.max_support
        return math.inf if bound is None else float(bound)


@dataclass(frozen=True)
class MeanMatrix:
    """A(a, b): expected number of type-a children of a type-b parent"""
    alphabet: Alphabet
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        if entries.shape != (self.alphabet.size, self.alphabet.size):
            raise DomainError(f"mean matrix has shape {entries.shape}")
        if np.any(entries < 0):
            raise DomainError("mean matrix has a negative entry")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)


def mean_matrix(Q: OffspringKernel) -> MeanMatrix:
    """Mean matrix of a kernel, column index = parent type."""
    return MeanMatrix(Q.alphabet, Q.mean_entries())


def reachability(A: np.ndarray) -> np.ndarray:
    """reach[b, a] is True iff A^k(a, b) > 0 for some k >= 1."""
    reach = (np.asarray(A) > 0).T.copy()
    for k in range(reach.shape[0]):
        reach |= np.outer(reach[:, k], reach[k, :])
    return reach


def _power_iteration(B: np.ndarray, tol: float = PF_RELATIVE_TOL,
                     max_iter: int = PF_MAX_ITER) -> Tuple[float, np.ndarray]:
    """Dominant eigenpair of a primitive nonnegative matrix."""
    v = np.full(B.shape[0], 1.0 / B.shape[0])
    lam = 0.0
    for it in range(max_iter):
        w = B @ v
        lam_new = w.sum()
        w = w / lam_new
        if abs(lam_new - lam) <= tol * abs(lam_new) and np.max(np.abs(w - v)) <= tol:
            debug_step("POWER_ITERATION", f"converged after {it + 1} iterations")
            return float(lam_new), w
        v, lam = w, lam_new
    debug_step("POWER_ITERATION", f"no convergence after {max_iter} iterations", "WARNING")
    return float(lam), v


def classify(A: MeanMatrix) -> IrreducibilityReport:
    """Recurrent/transient partition and Perron-Frobenius data of A.

    Positivity of A* is decided on the support graph of A. The eigenvalue is
    computed on the recurrent block shifted by the identity, which is
    primitive even when the block itself is periodic.
    """
    entries = A.entries
    labels = A.alphabet.symbols
    S = entries.shape[0]
    reach = reachability(entries)

    recurrent = [b for b in range(S) if reach[b].all()]
    transient = [b for b in range(S) if b not in recurrent]
    valid = bool(recurrent) and all(
        not reach[b, b] and not reach[b, recurrent].any() for b in transient
    )

    if not valid:
        radius = float(np.max(np.abs(np.linalg.eigvals(entries)))) if S else 0.0
        debug_step("CLASSIFY", f"no weakly irreducible partition; spectral radius {radius}")
        return IrreducibilityReport(
            recurrent=[],
            transient=list(labels),
            weakly_irreducible=False,
            pf_eigenvalue=radius,
            critical=abs(radius - 1.0) <= CRITICALITY_TOL,
        )

    block = entries[np.ix_(recurrent, recurrent)]
    shifted = block + np.eye(len(recurrent))
    lam_right, right = _power_iteration(shifted)
    _, left = _power_iteration(shifted.T)
    rho = lam_right - 1.0
    debug_dump_state({"block": block.tolist(), "rho": rho}, "Recurrent block")

    return IrreducibilityReport(
        recurrent=[labels[b] for b in recurrent],
        transient=[labels[b] for b in transient],
        weakly_irreducible=True,
        pf_eigenvalue=rho,
        right_eigenvector={labels[b]: float(v) for b, v in zip(recurrent, right)},
        left_eigenvector={labels[b]: float(v) for b, v in zip(recurrent, left)},
        critical=abs(rho - 1.0) <= CRITICALITY_TOL,
    )


def analyze_kernel(Q: OffspringKernel) -> IrreducibilityReport:
    """classify(mean_matrix(Q)) plus the observed transient-offspring bound."""
    report = classify(mean_matrix(Q))
    transient = [Q.alphabet.index(label) for label in report.transient]
    if report.weakly_irreducible:
        report.transient_offspring_bound = Q.transient_bound(transient)
    return report


def grow_bracket(f, boundary: float) -> Tuple[float, float]:
    """Bracket the sign change of an increasing f, starting from [-1, 1].

    The upper end approaches a finite domain boundary by halving the gap.
    Returns (lo, hi) with f(lo) < 0 < f(hi) or raises DomainError.
    """
    lo = -1.0
    while f(lo) >= 0:
        if lo <= -TILT_CAP:
            raise DomainError(f"target not reached for tilts down to {-TILT_CAP}")
        lo = max(2.0 * lo, -TILT_CAP)

    hi = min(1.0, 0.5 * boundary) if boundary > 0 else 0.5 * boundary
    while f(hi) <= 0:
        if math.isfinite(boundary):
            gap = boundary - hi
            if gap <= 1e-15 * max(1.0, abs(boundary)):
                raise DomainError(
                    f"target not reached inside the MGF domain; boundary at t = {boundary}")
            hi = boundary - 0.5 * gap
        else:
            if hi >= TILT_CAP:
                raise DomainError(f"target not reached for tilts up to {TILT_CAP}")
            hi = min(2.0 * hi, TILT_CAP)
    return lo, hi


def tilt_to_critical(p: CountLaw) -> Tuple[float, CountLaw]:
    """theta* and p_theta* with mean one."""
    p0, p1 = p.pmf(0), p.pmf(1)
    if not 0.0 < p0 < 1.0 - p1:
        raise DomainError(f"need 0 < p(0) < 1 - p(1); got p(0)={p0}, p(1)={p1}")
    if p.mean() == 1.0:
        return 0.0, p

    lo, hi = grow_bracket(lambda t: p.slope(t) - 1.0, p.domain_boundary)
    theta = optimize.brentq(lambda t: p.slope(t) - 1.0, lo, hi, xtol=1e-15, maxiter=500)
    debug_step("TILT_TO_CRITICAL", f"{p.spec()} -> theta*={theta!r}")
    return float(theta), p.tilt(theta)


def truncate_kernel(Q: OffspringKernel, k: int) -> OffspringKernel:
    """Q_k{c | a} = Q{c | a} / Q{X_k* | a} on X_k*."""
    if k < 0:
        raise DomainError(f"truncation level must be nonnegative, got {k}")
    for a in range(Q.size):
        if Q.mass_upto(k, a) <= 0.0:
            raise DomainError(f"type '{Q.alphabet.label(a)}' puts no mass on configs with at most {k} children")

    if isinstance(Q, FactoredKernel):
        return FactoredKernel(Q.alphabet, Q.count_law.truncate(k), Q.transition)

    if isinstance(Q, ExplicitKernel) and Q.support_bound <= k:
        return ExplicitKernel(Q.alphabet, Q.laws, support_bound=k)

    laws = []
    for a in range(Q.size):
        kept = {c: p for c, p in Q.law(a) if c.count <= k}
        mass = sum(kept.values())
        laws.append({c: p / mass for c, p in kept.items()})
    return ExplicitKernel(Q.alphabet, laws, support_bound=k)


def factored_kernel(p: CountLaw, transition, alphabet: Alphabet) -> FactoredKernel:
    """Kernel whose children are i.i.d. Markov steps from the parent type."""
    return FactoredKernel(alphabet, p, transition)


def restriction_bound(Q: OffspringKernel, k: int, n: int) -> float:
    """n * log min_a Q{X_k* | a}.

    For any typed tree x with n vertices,
    log P{X = x} >= this + log P_k{X = x} where P_k uses truncate_kernel(Q, k).
    """
    worst = min(Q.mass_upto(k, a) for a in range(Q.size))
    return n * math.log(worst) if worst > 0 else -math.inf


def _count_law_tv(p: CountLaw, q: CountLaw, tail: float) -> float:
    cutoff = max(p.tail_cutoff(tail), q.tail_cutoff(tail))
    pa, qa = p.pmf_array(cutoff), q.pmf_array(cutoff)
    outside = abs((1.0 - pa.sum()) - (1.0 - qa.sum()))
    return 0.5 * (np.abs(pa - qa).sum() + outside)


def kernel_distance(Q1: OffspringKernel, Q2: OffspringKernel,
                    tail: float = DEFAULT_TAIL_MASS) -> float:
    """max_a of the total variation distance between Q1{. | a} and Q2{. | a}."""
    if Q1.alphabet != Q2.alphabet:
        raise DomainError("kernels are over different alphabets")
    if (isinstance(Q1, FactoredKernel) and isinstance(Q2, FactoredKernel)
            and np.array_equal(Q1.transition, Q2.transition)):
        return _count_law_tv(Q1.count_law, Q2.count_law, tail)

    worst = 0.0
    for a in range(Q1.size):
        first = dict(Q1.law(a, tail=tail))
        second = dict(Q2.law(a, tail=tail))
        keys = first.keys() | second.keys()
        d = 0.5 * sum(abs(first.get(c, 0.0) - second.get(c, 0.0)) for c in keys)
        worst = max(worst, d)
    return worst


def kernels_equal(Q1: OffspringKernel, Q2: OffspringKernel, tol: float = KERNEL_EQUALITY_TOL) -> bool:
    return kernel_distance(Q1, Q2) <= tol


def single_type_kernel(p: CountLaw, label: str = "a") -> FactoredKernel:
    """Plain Galton-Watson kernel with one type."""
    return FactoredKernel(Alphabet((label,)), p, [[1.0]])


def kernel_from_document(doc: KernelSpecDocument) -> Tuple[OffspringKernel, np.ndarray]:
    """(kernel, root law) from a validated kernel spec document."""
    alphabet = Alphabet(tuple(doc.alphabet))
    mu = validate_root_law(doc.root_law, alphabet)
    spec = doc.kernel
    if spec.form == "factored":
        law = count_law_from_parameters(spec.offspring_law.kind, spec.offspring_law.parameters)
        return FactoredKernel(alphabet, law, spec.transition), mu

    missing = set(doc.alphabet) - set(spec.configs)
    if missing:
        raise KernelValidationError("no offspring law given", sorted(missing)[0])
    laws = []
    for label in alphabet:
        entries: Dict[OffspringConfig, float] = {}
        for entry in spec.configs[label]:
            try:
                c = alphabet.config(*entry.children)
            except DomainError as e:
                raise KernelValidationError(str(e), label) from e
            entries[c] = entries.get(c, 0.0) + entry.probability
        laws.append(entries)
    return ExplicitKernel(alphabet, laws, support_bound=spec.support_bound), mu


def kernel_to_document(Q: OffspringKernel, mu) -> KernelSpecDocument:
    labels = list(Q.alphabet)
    root_law = {label: float(p) for label, p in zip(labels, np.asarray(mu, dtype=float))}
    if isinstance(Q, FactoredKernel):
        kernel = KernelDocument(
            form="factored",
            offspring_law=CountLawDocument(kind=Q.count_law.kind,
                                           parameters=count_law_parameters(Q.count_law)),
            transition=Q.transition.tolist(),
        )
    else:
        configs = {
            Q.alphabet.label(a): [ExplicitEntry(children=Q.alphabet.config_labels(c), probability=p)
                                  for c, p in Q.law(a)]
            for a in range(Q.size)
        }
        kernel = KernelDocument(form="explicit", configs=configs, support_bound=Q.support_bound)
    return KernelSpecDocument(alphabet=labels, root_law=root_law, kernel=kernel)


def load_kernel_spec(path) -> Tuple[OffspringKernel, np.ndarray]:
    """Read and validate a kernel spec JSON file."""
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        doc = KernelSpecDocument.model_validate_json(text)
    except ValidationError as e:
        raise KernelValidationError(f"invalid kernel spec: {e}", str(path)) from e
    return kernel_from_document(doc)
