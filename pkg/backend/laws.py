"""
Offspring-count laws on the nonnegative integers.

Three families are supported: an explicit finite table, geometric(q) with
p(l) = q (1-q)^l, and poisson(lam). Each law knows its log-MGF
Lambda(t) = log sum_l p(l) e^{t l}, the first two derivatives, the right
end of the domain where Lambda is finite, and how to tilt and truncate
itself while staying inside the family where possible.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import special, stats

from shared.errors import DomainError, KernelValidationError

NORMALIZATION_TOL = 1e-12
DEFAULT_TAIL_MASS = 1e-12


class CountLaw(ABC):
    """Probability law p on {0, 1, 2, ...}"""

    kind: str

    @abstractmethod
    def pmf(self, n: int) -> float:
        ...

    @abstractmethod
    def mean(self) -> float:
        ...

    @property
    @abstractmethod
    def domain_boundary(self) -> float:
        """Supremum of {t : Lambda(t) < inf}; math.inf for entire MGFs."""

    @property
    def max_support(self) -> Optional[int]:
        """Largest n with p(n) > 0, None when unbounded."""
        return None

    @property
    def min_support(self) -> int:
        return 0

    @abstractmethod
    def _log_mgf(self, t: float) -> float:
        ...

    @abstractmethod
    def _slope(self, t: float) -> float:
        ...

    @abstractmethod
    def _curvature(self, t: float) -> float:
        ...

    @abstractmethod
    def tilt(self, theta: float) -> "CountLaw":
        """The law p_theta(l) = p(l) e^{theta l} / sum_j p(j) e^{theta j}."""

    @abstractmethod
    def sample(self, rng: np.random.Generator, size=None):
        ...

    @abstractmethod
    def spec(self) -> str:
        """Compact text form, e.g. 'geometric:0.5'."""

    def _check_domain(self, t: float) -> None:
        if t >= self.domain_boundary:
            raise DomainError(
                f"log-MGF of {self.spec()} is infinite at {t}; "
                f"domain is t < {self.domain_boundary}"
            )

    def log_mgf(self, t: float) -> float:
        self._check_domain(t)
        return self._log_mgf(t)

    def slope(self, t: float) -> float:
        """Lambda'(t), the mean of the tilted law p_t."""
        self._check_domain(t)
        return self._slope(t)

    def curvature(self, t: float) -> float:
        """Lambda''(t), the variance of the tilted law p_t."""
        self._check_domain(t)
        return self._curvature(t)

    def second_moment(self) -> float:
        return self.curvature(0.0) + self.mean() ** 2

    def pmf_array(self, upto: int) -> np.ndarray:
        """p(0), ..., p(upto)"""
        return np.array([self.pmf(n) for n in range(upto + 1)], dtype=float)

    def mass_upto(self, k: int) -> float:
        """P{N <= k}"""
        if k < 0:
            return 0.0
        return float(min(1.0, self.pmf_array(k).sum()))

    def tail_cutoff(self, tail: float = DEFAULT_TAIL_MASS) -> int:
        """Smallest K with P{N > K} <= tail."""
        if self.max_support is not None:
            return self.max_support
        k = 0
        acc = self.pmf(0)
        while 1.0 - acc > tail:
            k += 1
            acc += self.pmf(k)
        return k

    def truncate(self, k: int) -> "TableLaw":
        """Conditional law given N <= k."""
        if k < 0:
            raise DomainError(f"truncation level must be nonnegative, got {k}")
        probs = self.pmf_array(k)
        mass = probs.sum()
        if mass <= 0.0:
            raise DomainError(f"{self.spec()} puts no mass on {{0..{k}}}")
        return TableLaw(tuple(float(v) for v in probs / mass))

    def __str__(self) -> str:
        return self.spec()


@dataclass(frozen=True)
class TableLaw(CountLaw):
    """Explicit finite table p(0), ..., p(L)"""
    probabilities: Tuple[float, ...]
    kind = "table"

    def __post_init__(self):
        probs = [float(v) for v in self.probabilities]
        if not probs:
            raise KernelValidationError("table law needs at least one entry")
        if any(v < 0.0 or math.isnan(v) for v in probs):
            raise KernelValidationError("table law has a negative entry")
        total = sum(probs)
        if abs(total - 1.0) > NORMALIZATION_TOL:
            raise KernelValidationError(f"table law sums to {total!r}, not 1")
        while len(probs) > 1 and probs[-1] == 0.0:
            probs.pop()
        object.__setattr__(self, "probabilities", tuple(probs))

    @property
    def _array(self) -> np.ndarray:
        return np.asarray(self.probabilities, dtype=float)

    @property
    def _support(self) -> np.ndarray:
        return np.arange(len(self.probabilities), dtype=float)

    def pmf(self, n: int) -> float:
        if 0 <= n < len(self.probabilities):
            return self.probabilities[n]
        return 0.0

    def mean(self) -> float:
        return float(self._support @ self._array)

    @property
    def domain_boundary(self) -> float:
        return math.inf

    @property
    def max_support(self) -> int:
        return len(self.probabilities) - 1

    @property
    def min_support(self) -> int:
        return next(n for n, v in enumerate(self.probabilities) if v > 0.0)

    def _tilted_weights(self, t: float) -> np.ndarray:
        with np.errstate(divide="ignore"):
            log_w = np.log(self._array) + t * self._support
        return np.exp(log_w - special.logsumexp(log_w))

    def _log_mgf(self, t: float) -> float:
        return float(special.logsumexp(t * self._support, b=self._array))

    def _slope(self, t: float) -> float:
        return float(self._support @ self._tilted_weights(t))

    def _curvature(self, t: float) -> float:
        w = self._tilted_weights(t)
        m = self._support @ w
        return float(((self._support - m) ** 2) @ w)

    def tilt(self, theta: float) -> "TableLaw":
        w = self._tilted_weights(theta)
        return TableLaw(tuple(float(v) for v in w / w.sum()))

    def pmf_array(self, upto: int) -> np.ndarray:
        out = np.zeros(upto + 1)
        m = min(upto + 1, len(self.probabilities))
        out[:m] = self._array[:m]
        return out

    def sample(self, rng, size=None):
        return rng.choice(len(self.probabilities), size=size, p=self._array)

    def spec(self) -> str:
        return "table:" + ",".join(repr(v) for v in self.probabilities)


@dataclass(frozen=True)
class GeometricLaw(CountLaw):
    """p(l) = q (1-q)^l; the critical case is q = 1/2"""
    q: float
    kind = "geometric"

    def __post_init__(self):
        if not 0.0 < self.q <= 1.0:
            raise KernelValidationError(f"geometric parameter must lie in (0, 1], got {self.q}")

    def pmf(self, n: int) -> float:
        if n < 0:
            return 0.0
        return self.q * (1.0 - self.q) ** n

    def mean(self) -> float:
        return (1.0 - self.q) / self.q

    @property
    def domain_boundary(self) -> float:
        if self.q == 1.0:
            return math.inf
        return -math.log1p(-self.q)

    @property
    def max_support(self) -> Optional[int]:
        return 0 if self.q == 1.0 else None

    def _ratio(self, t: float) -> float:
        return (1.0 - self.q) * math.exp(t)

    def _log_mgf(self, t: float) -> float:
        return math.log(self.q) - math.log1p(-self._ratio(t))

    def _slope(self, t: float) -> float:
        u = self._ratio(t)
        return u / (1.0 - u)

    def _curvature(self, t: float) -> float:
        u = self._ratio(t)
        return u / (1.0 - u) ** 2

    def tilt(self, theta: float) -> "GeometricLaw":
        self._check_domain(theta)
        return GeometricLaw(1.0 - self._ratio(theta))

    def mass_upto(self, k: int) -> float:
        if k < 0:
            return 0.0
        return 1.0 - (1.0 - self.q) ** (k + 1)

    def tail_cutoff(self, tail: float = DEFAULT_TAIL_MASS) -> int:
        if self.q == 1.0:
            return 0
        return max(0, math.ceil(math.log(tail) / math.log1p(-self.q)) - 1)

    def sample(self, rng, size=None):
        return rng.geometric(self.q, size=size) - 1

    def spec(self) -> str:
        return f"geometric:{self.q!r}"


@dataclass(frozen=True)
class PoissonLaw(CountLaw):
    """p(l) = e^{-lam} lam^l / l!"""
    lam: float
    kind = "poisson"

    def __post_init__(self):
        if not self.lam > 0.0:
            raise KernelValidationError(f"poisson rate must be positive, got {self.lam}")

    def pmf(self, n: int) -> float:
        if n < 0:
            return 0.0
        return float(stats.poisson.pmf(n, self.lam))

    def pmf_array(self, upto: int) -> np.ndarray:
        return stats.poisson.pmf(np.arange(upto + 1), self.lam)

    def mean(self) -> float:
        return self.lam

    @property
    def domain_boundary(self) -> float:
        return math.inf

    def _log_mgf(self, t: float) -> float:
        return self.lam * math.expm1(t)

    def _slope(self, t: float) -> float:
        return self.lam * math.exp(t)

    def _curvature(self, t: float) -> float:
        return self.lam * math.exp(t)

    def tilt(self, theta: float) -> "PoissonLaw":
        return PoissonLaw(self.lam * math.exp(theta))

    def mass_upto(self, k: int) -> float:
        if k < 0:
            return 0.0
        return float(stats.poisson.cdf(k, self.lam))

    def tail_cutoff(self, tail: float = DEFAULT_TAIL_MASS) -> int:
        return int(stats.poisson.isf(tail, self.lam))

    def sample(self, rng, size=None):
        return rng.poisson(self.lam, size=size)

    def spec(self) -> str:
        return f"poisson:{self.lam!r}"


def parse_count_law(text: str) -> CountLaw:
    """Parse 'geometric:0.5', 'poisson:1' or 'table:0.25,0.5,0.25'."""
    kind, _, params = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "geometric":
            return GeometricLaw(float(params))
        if kind == "poisson":
            return PoissonLaw(float(params))
        if kind == "table":
            return TableLaw(tuple(float(v) for v in params.split(",")))
    except ValueError as e:
        if isinstance(e, KernelValidationError):
            raise
        raise KernelValidationError(f"cannot parse count law '{text}': {e}") from e
    raise KernelValidationError(f"unknown count law kind '{kind}' in '{text}'")


def count_law_from_parameters(kind: str, parameters) -> CountLaw:
    """Build a law from the kernel-spec document form {kind, parameters}.

    `parameters` is either the document mapping or the bare value.
    """
    kind = kind.lower()
    builders = {
        "geometric": ("q", lambda v: GeometricLaw(float(v))),
        "poisson": ("lambda", lambda v: PoissonLaw(float(v))),
        "table": ("probabilities", lambda v: TableLaw(tuple(float(x) for x in v))),
    }
    if kind not in builders:
        raise KernelValidationError(f"unknown count law kind '{kind}'")
    key, build = builders[kind]
    if isinstance(parameters, dict):
        if key not in parameters:
            raise KernelValidationError(f"{kind} law needs parameter '{key}', got {sorted(parameters)}")
        parameters = parameters[key]
    try:
        return build(parameters)
    except (TypeError, ValueError) as e:
        if isinstance(e, KernelValidationError):
            raise
        raise KernelValidationError(f"bad {kind} parameter {key}={parameters!r}: {e}") from e


def count_law_parameters(law: CountLaw) -> dict:
    """Inverse of count_law_from_parameters."""
    if isinstance(law, GeometricLaw):
        return {"q": law.q}
    if isinstance(law, PoissonLaw):
        return {"lambda": law.lam}
    if isinstance(law, TableLaw):
        return {"probabilities": list(law.probabilities)}
    raise KernelValidationError(f"no document form for {law!r}")
