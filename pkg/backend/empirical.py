"""
Empirical offspring and pair measures of typed trees.

An offspring measure nu lives on X x X* and is stored sparsely as
{(type, config): weight}. A pair measure varpi lives on X x X and is a dense
S x S array with row = parent type, column = child type.
"""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Mapping, Tuple, Union

import numpy as np

from shared.debug_config import debug_step
from shared.errors import DomainError
from shared.types import ConsistencyClass

from .model import Alphabet, OffspringConfig, multiplicity_vector
from .trees import TypedTree

CONSISTENCY_TOL = 1e-10
MASS_TOL = 1e-12

Atom = Tuple[int, OffspringConfig]


@dataclass(frozen=True)
class OffspringMeasure:
    """Finite measure on X x X*, usually a probability"""
    alphabet: Alphabet
    weights: Mapping[Atom, float]

    def __post_init__(self):
        cleaned: Dict[Atom, float] = {}
        for (a, c), w in self.weights.items():
            w = float(w)
            if w < 0.0 or math.isnan(w):
                raise DomainError(f"offspring measure has weight {w} at type {a}")
            if w > 0.0:
                cleaned[(int(a), c)] = w
        object.__setattr__(self, "weights", cleaned)

    def __iter__(self):
        return iter(self.weights.items())

    def __len__(self) -> int:
        return len(self.weights)

    def get(self, a: int, c: OffspringConfig) -> float:
        return self.weights.get((a, c), 0.0)

    @property
    def mass(self) -> float:
        return math.fsum(self.weights.values())

    @property
    def first_moment(self) -> float:
        """integral of n(c) d nu"""
        return math.fsum(c.count * w for (_, c), w in self.weights.items())

    @property
    def max_count(self) -> int:
        return max((c.count for (_, c) in self.weights), default=0)

    def scaled(self, factor: float) -> "OffspringMeasure":
        return OffspringMeasure(self.alphabet, {k: w * factor for k, w in self.weights.items()})


@dataclass(frozen=True)
class PairMeasure:
    """Finite measure on X x X, row = parent type, column = child type"""
    alphabet: Alphabet
    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float)
        S = self.alphabet.size
        if entries.shape != (S, S):
            raise DomainError(f"pair measure has shape {entries.shape}, expected {(S, S)}")
        if not np.all(np.isfinite(entries)) or np.any(entries < 0):
            raise DomainError("pair measure entries must be finite and nonnegative")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def mass(self) -> float:
        return float(self.entries.sum())

    def __getitem__(self, index):
        return self.entries[index]


def offspring_measure(tree: TypedTree) -> OffspringMeasure:
    """M_X(a, c) = #{v : X(v) = a, C(v) = c} / |T|"""
    counts = Counter(zip(tree.types, tree.configs()))
    n = tree.size
    return OffspringMeasure(tree.alphabet, {atom: k / n for atom, k in counts.items()})


def pair_counts(tree: TypedTree) -> np.ndarray:
    """Integer edge counts by (parent type, child type)."""
    S = tree.alphabet.size
    counts = np.zeros((S, S), dtype=np.int64)
    for a, b in tree.edges():
        counts[a, b] += 1
    return counts


def pair_measure_tilde(tree: TypedTree) -> PairMeasure:
    """Edge-type frequencies normalized by the number of vertices."""
    return PairMeasure(tree.alphabet, pair_counts(tree) / tree.size)


def pair_measure(tree: TypedTree) -> PairMeasure:
    """Edge-type frequencies normalized by the number of edges."""
    if tree.size < 2:
        raise DomainError("pair measure of a single-vertex tree is undefined (no edges)")
    return PairMeasure(tree.alphabet, pair_counts(tree) / (tree.size - 1))


def multiplicity_pair(nu: OffspringMeasure) -> np.ndarray:
    """<m>nu(a, b) = sum_c m(b, c) nu(a, c)"""
    S = nu.alphabet.size
    out = np.zeros((S, S))
    for (a, c), w in nu:
        if c.count:
            out[a] += w * multiplicity_vector(c, S)
    return out


def nu_first(nu: OffspringMeasure) -> np.ndarray:
    """nu_1(a) = sum_c nu(a, c)"""
    out = np.zeros(nu.alphabet.size)
    for (a, _), w in nu:
        out[a] += w
    return out


def pair_first(varpi: PairMeasure) -> np.ndarray:
    return varpi.entries.sum(axis=1)


def pair_second(varpi: PairMeasure) -> np.ndarray:
    """varpi_2(b) = sum_a varpi(a, b)"""
    return varpi.entries.sum(axis=0)


def consistency_defect(varpi: PairMeasure, nu: OffspringMeasure) -> np.ndarray:
    """D(a, b) = varpi(a, b) - <m>nu(a, b)"""
    if varpi.alphabet != nu.alphabet:
        raise DomainError("pair and offspring measures use different alphabets")
    return varpi.entries - multiplicity_pair(nu)


def check_consistency(varpi: PairMeasure, nu: OffspringMeasure,
                      tol: float = CONSISTENCY_TOL) -> ConsistencyClass:
    D = consistency_defect(varpi, nu)
    if np.max(np.abs(D)) <= tol:
        return ConsistencyClass.CONSISTENT
    if np.min(D) >= -tol:
        return ConsistencyClass.SUB_CONSISTENT
    return ConsistencyClass.NEITHER


def tv_distance(first: Union[OffspringMeasure, PairMeasure, np.ndarray],
                second: Union[OffspringMeasure, PairMeasure, np.ndarray]) -> float:
    """Half the l1 distance between two measures of the same kind."""
    if isinstance(first, OffspringMeasure) and isinstance(second, OffspringMeasure):
        keys = first.weights.keys() | second.weights.keys()
        return 0.5 * math.fsum(abs(first.weights.get(k, 0.0) - second.weights.get(k, 0.0))
                               for k in keys)
    lhs = first.entries if isinstance(first, PairMeasure) else np.asarray(first, dtype=float)
    rhs = second.entries if isinstance(second, PairMeasure) else np.asarray(second, dtype=float)
    return 0.5 * float(np.abs(lhs - rhs).sum())


def mass_upto(nu: OffspringMeasure, k: int) -> float:
    """||nu||_k = nu(X x X_k*)"""
    return math.fsum(w for (_, c), w in nu if c.count <= k)


def truncate_measure(nu: OffspringMeasure, k: int) -> OffspringMeasure:
    """nu_k = nu restricted to X x X_k*, renormalized"""
    mass = mass_upto(nu, k)
    if mass <= 0.0:
        raise DomainError(f"measure puts no mass on configurations with at most {k} children")
    if mass == nu.mass and nu.max_count <= k:
        return nu
    return OffspringMeasure(nu.alphabet, {(a, c): w / mass for (a, c), w in nu if c.count <= k})


def induced_pair(nu: OffspringMeasure) -> PairMeasure:
    """The pair measure that makes (varpi, nu) consistent."""
    return PairMeasure(nu.alphabet, multiplicity_pair(nu))


def truncation_pair(nu: OffspringMeasure, k: int) -> Tuple[PairMeasure, OffspringMeasure]:
    """(varpi_k, nu_k) with varpi_k = <m>nu_k; consistent by construction."""
    nu_k = truncate_measure(nu, k)
    return induced_pair(nu_k), nu_k


def is_shift_invariant(nu: OffspringMeasure, tol: float = CONSISTENCY_TOL) -> bool:
    """<m>nu(b) = nu_1(b) for every b."""
    return bool(np.max(np.abs(multiplicity_pair(nu).sum(axis=0) - nu_first(nu))) <= tol)


def repair_consistency(varpi: PairMeasure, nu: OffspringMeasure, n: int,
                       tol: float = CONSISTENCY_TOL) -> Tuple[PairMeasure, OffspringMeasure]:
    """Consistent pair close to a sub-consistent one.

    The defect D = varpi - <m>nu is moved onto the configurations with exactly
    n children all of one type b, and nu is shrunk by 1 - delta/n with
    delta = sum D, so the result stays a probability measure within O(1/n).
    """
    if n < 1:
        raise DomainError(f"repair level must be a positive integer, got {n}")
    D = consistency_defect(varpi, nu)
    if np.min(D) < -tol:
        raise DomainError("input is not sub-consistent; the repair needs varpi >= <m>nu")
    D = np.where(np.abs(D) <= tol, 0.0, D)
    delta = float(D.sum())
    shrink = 1.0 - delta / n
    if shrink < 0.0:
        raise DomainError(f"repair at n={n} would make weights negative; use n > {delta:.6g}")

    weights: Dict[Atom, float] = {atom: w * shrink for atom, w in nu}
    S = nu.alphabet.size
    for a in range(S):
        for b in range(S):
            if D[a, b] > 0.0:
                atom = (a, OffspringConfig((b,) * n))
                weights[atom] = weights.get(atom, 0.0) + D[a, b] / n
    repaired = OffspringMeasure(nu.alphabet, weights)
    debug_step("REPAIR_CONSISTENCY", f"n={n} delta={delta:.3e}")
    return induced_pair(repaired), repaired


def product_with_kernel(nu_1: np.ndarray, Q, atoms: Iterable[Atom]) -> Dict[Atom, float]:
    """nu_1 (x) Q evaluated on the given atoms only."""
    return {(a, c): float(nu_1[a]) * Q.prob(c, a) for (a, c) in atoms}


OFFSPRING_HEADER = ["type", "count", "children", "weight"]
PAIR_HEADER = ["from", "to", "weight"]


def offspring_measure_to_csv(nu: OffspringMeasure) -> str:
    """Rows 'type,count,children,weight' in lexicographic order."""
    alphabet = nu.alphabet
    rows = sorted(
        (alphabet.label(a), c.count, "|".join(alphabet.config_labels(c)), w) for (a, c), w in nu
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(OFFSPRING_HEADER)
    for label, count, children, w in rows:
        writer.writerow([label, count, children, repr(w)])
    return buf.getvalue()


def offspring_measure_from_csv(text: str, alphabet: Alphabet) -> OffspringMeasure:
    weights: Dict[Atom, float] = {}
    for row in csv.DictReader(io.StringIO(text)):
        children = row["children"].split("|") if row["children"] else []
        c = alphabet.config(*children)
        if c.count != int(row["count"]):
            raise DomainError(f"row {row}: count does not match children")
        atom = (alphabet.index(row["type"]), c)
        weights[atom] = weights.get(atom, 0.0) + float(row["weight"])
    return OffspringMeasure(alphabet, weights)


def pair_measure_to_csv(varpi: PairMeasure) -> str:
    """Rows 'from,to,weight' for every nonzero entry, lexicographic by labels."""
    alphabet = varpi.alphabet
    rows = sorted(
        (alphabet.label(a), alphabet.label(b), float(varpi.entries[a, b]))
        for a in range(alphabet.size) for b in range(alphabet.size) if varpi.entries[a, b] != 0.0
    )
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PAIR_HEADER)
    for a, b, w in rows:
        writer.writerow([a, b, repr(w)])
    return buf.getvalue()


def pair_measure_from_csv(text: str, alphabet: Alphabet) -> PairMeasure:
    entries = np.zeros((alphabet.size, alphabet.size))
    for row in csv.DictReader(io.StringIO(text)):
        entries[alphabet.index(row["from"]), alphabet.index(row["to"])] += float(row["weight"])
    return PairMeasure(alphabet, entries)
