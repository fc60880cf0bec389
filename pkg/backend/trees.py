"""
Typed planar trees: sampling, size conditioning and exact enumeration.

Vertices are stored in depth-first (preorder) order. A tree is fully
described by the per-vertex pair (type, child count) in that order, which
is also its canonical key.
"""

from __future__ import annotations

from bisect import bisect_right
from dataclasses import dataclass, field
from itertools import accumulate
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from shared.config import get_settings
from shared.debug_config import debug_step
from shared.errors import DomainError, ResourceBudgetError
from shared.types import SampleReport

from .laws import CountLaw
from .model import Alphabet, FactoredKernel, OffspringConfig, OffspringKernel, validate_root_law

SHAPE_BATCH_MIN = 256
SHAPE_BATCH_MAX = 65_536
SHAPE_CHUNK = 16
SHAPE_CELLS = 2_000_000


@dataclass(frozen=True)
class TypedTree:
    """Finite rooted planar tree with a type on every vertex"""
    alphabet: Alphabet
    types: Tuple[int, ...]
    child_counts: Tuple[int, ...]
    parents: Tuple[int, ...]
    _children: Tuple[Tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        children: List[List[int]] = [[] for _ in self.types]
        for v, parent in enumerate(self.parents):
            if v > 0 and 0 <= parent < v:
                children[parent].append(v)
        object.__setattr__(self, "_children", tuple(tuple(c) for c in children))

    @property
    def size(self) -> int:
        return len(self.types)

    def __len__(self) -> int:
        return len(self.types)

    def children(self, v: int) -> Tuple[int, ...]:
        return self._children[v]

    def config(self, v: int) -> OffspringConfig:
        """C(v) = (N(v), X_1(v), ..., X_N(v)(v))"""
        return OffspringConfig(tuple(self.types[w] for w in self._children[v]))

    def configs(self) -> List[OffspringConfig]:
        return [self.config(v) for v in range(self.size)]

    def key(self) -> Tuple[Tuple[int, int], ...]:
        """Canonical key: (type, child count) per vertex in preorder."""
        return tuple(zip(self.types, self.child_counts))

    def edges(self) -> Iterator[Tuple[int, int]]:
        """(parent type, child type) for every edge."""
        for v in range(1, self.size):
            yield self.types[self.parents[v]], self.types[v]

    def validate(self) -> None:
        """Raise DomainError unless the planar-tree invariants hold."""
        n = self.size
        if n == 0:
            raise DomainError("tree has no vertices")
        if not (len(self.child_counts) == len(self.parents) == n):
            raise DomainError("tree arrays have different lengths")
        if self.parents[0] != -1:
            raise DomainError("vertex 0 must be the root")
        if any(not 0 <= t < self.alphabet.size for t in self.types):
            raise DomainError("tree uses a type outside its alphabet")
        if sum(self.child_counts) != n - 1:
            raise DomainError(f"child counts sum to {sum(self.child_counts)}, expected {n - 1} edges")
        # preorder: each new vertex hangs off the deepest vertex with open slots
        open_slots = [[0, self.child_counts[0]]]
        for v in range(1, n):
            while open_slots and open_slots[-1][1] == 0:
                open_slots.pop()
            if not open_slots or open_slots[-1][0] != self.parents[v]:
                raise DomainError(f"vertex {v} is not in depth-first order")
            open_slots[-1][1] -= 1
            open_slots.append([v, self.child_counts[v]])
        if any(slots for _, slots in open_slots):
            raise DomainError("some vertex has fewer children than its child count")


def tree_to_text(tree: TypedTree) -> str:
    """One vertex per line, 'index,parent,type,child_count'; the root has an empty parent."""
    lines = []
    for v in range(tree.size):
        parent = "" if v == 0 else str(tree.parents[v])
        lines.append(f"{v},{parent},{tree.alphabet.label(tree.types[v])},{tree.child_counts[v]}")
    return "\n".join(lines) + "\n"


def tree_from_text(text: str, alphabet: Alphabet) -> TypedTree:
    types, parents, counts = [], [], []
    for line_no, line in enumerate(text.splitlines()):
        if not line.strip():
            continue
        index, parent, label, count = line.split(",")
        if int(index) != len(types):
            raise DomainError(f"line {line_no + 1}: expected vertex {len(types)}, got {index}")
        types.append(alphabet.index(label))
        parents.append(-1 if parent == "" else int(parent))
        counts.append(int(count))
    tree = TypedTree(alphabet, tuple(types), tuple(counts), tuple(parents))
    tree.validate()
    return tree


@dataclass(frozen=True)
class Overflow:
    """The tree grew past max_vertices"""
    vertices: int
    max_vertices: int


@dataclass(frozen=True)
class Exhausted:
    """No tree of the requested size within the retry budget"""
    attempts: int
    n: int


def _cumulative(weights) -> List[float]:
    return list(accumulate(float(w) for w in weights))


def _choose(cumulative: List[float], rng: np.random.Generator) -> int:
    i = bisect_right(cumulative, rng.random() * cumulative[-1])
    return min(i, len(cumulative) - 1)


def sample_tree(Q: OffspringKernel, mu, rng: np.random.Generator,
                max_vertices: int) -> Union[TypedTree, Overflow]:
    """Unconditioned tree, generated depth-first; Overflow past max_vertices."""
    mu = validate_root_law(mu, Q.alphabet)
    root = _choose(_cumulative(mu), rng)
    types: List[int] = []
    counts: List[int] = []
    parents: List[int] = []
    stack = [(root, -1)]
    while stack:
        a, parent = stack.pop()
        v = len(types)
        c = Q.sample(a, rng)
        types.append(a)
        counts.append(c.count)
        parents.append(parent)
        if v + 1 + len(stack) + c.count > max_vertices:
            return Overflow(v + 1 + len(stack) + c.count, max_vertices)
        for child in reversed(c.children):
            stack.append((child, v))
    return TypedTree(Q.alphabet, tuple(types), tuple(counts), tuple(parents))


def sample_conditioned(Q: OffspringKernel, mu, n: int, rng: np.random.Generator,
                       retry_budget: Optional[int] = None,
                       rng_seed: int = 0) -> Union[SampleReport, Exhausted]:
    """Tree with exactly n vertices, by rejection with early abort past n."""
    if n < 1:
        raise DomainError(f"tree size must be at least 1, got {n}")
    budget = get_settings().retry_budget if retry_budget is None else retry_budget
    for attempt in range(1, budget + 1):
        tree = sample_tree(Q, mu, rng, max_vertices=n)
        if isinstance(tree, TypedTree) and tree.size == n:
            debug_step("SAMPLE_CONDITIONED", f"n={n} accepted after {attempt} attempts")
            return SampleReport(tree=tree, attempts=attempt, rng_seed=rng_seed)
    debug_step("SAMPLE_CONDITIONED", f"n={n} exhausted {budget} attempts", "WARNING")
    return Exhausted(budget, n)


def _batch_rows(batch: int, n: int, remaining: int) -> int:
    """Rows of the next candidate batch, keeping rows * n within SHAPE_CELLS."""
    return max(1, min(batch, remaining, SHAPE_CELLS // n))


@dataclass(frozen=True)
class _ConfigTable:
    """Configurations of one parent type with at most n - 1 children.

    A uniform draw past cumulative[-1] is the reject outcome: the remaining
    mass sits on configurations that cannot fit in a tree of size n.
    """
    cumulative: np.ndarray
    counts: np.ndarray
    pushes: np.ndarray  # children in stack order, padded with zeros


def _config_tables(Q: OffspringKernel, n: int, budget: int) -> List[_ConfigTable]:
    tables = []
    for a in range(Q.size):
        law = list(Q.law_upto(a, n - 1, budget=budget))
        width = max((c.count for c, _ in law), default=0)
        pushes = np.zeros((len(law), max(width, 1)), dtype=np.int64)
        for i, (c, _) in enumerate(law):
            pushes[i, :c.count] = c.children[::-1]
        cumulative = np.cumsum([q for _, q in law], dtype=float)
        if cumulative.size and 1.0 - cumulative[-1] < 1e-12:
            cumulative /= cumulative[-1]
        counts = np.array([c.count for c, _ in law], dtype=np.int64)
        tables.append(_ConfigTable(cumulative, counts, pushes))
    return tables


def _grow_rows(tables: List[_ConfigTable], root_cumulative: np.ndarray, n: int, rows: int,
               rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Depth-first generation of `rows` candidate trees side by side.

    Each row keeps its own stack of pending child types. All live rows place
    vertex v in the same step, and a row dies once its tree closes early or
    can no longer fit in n vertices. Returns (types, counts, accepted).
    """
    types = np.zeros((rows, n), dtype=np.int64)
    counts = np.zeros((rows, n), dtype=np.int64)
    stack = np.zeros((rows, n), dtype=np.int64)
    depth = np.ones(rows, dtype=np.int64)
    accepted = np.zeros(rows, dtype=bool)
    root = np.searchsorted(root_cumulative, rng.random(rows) * root_cumulative[-1], side="right")
    stack[:, 0] = np.minimum(root, root_cumulative.size - 1)
    alive = np.arange(rows)
    for v in range(n):
        if not alive.size:
            break
        depth[alive] -= 1
        a = stack[alive, depth[alive]]
        types[alive, v] = a
        u = rng.random(alive.size)
        keep = np.zeros(alive.size, dtype=bool)
        for t, table in enumerate(tables):
            sel = np.flatnonzero(a == t)
            if not sel.size:
                continue
            pick = np.searchsorted(table.cumulative, u[sel], side="right")
            drawn = pick < table.cumulative.size
            sel, pick = sel[drawn], pick[drawn]
            k = table.counts[pick]
            fits = v + 1 + depth[alive[sel]] + k <= n
            sel, pick, k = sel[fits], pick[fits], k[fits]
            grow = alive[sel]
            counts[grow, v] = k
            for j in range(table.pushes.shape[1]):
                more = k > j
                stack[grow[more], depth[grow[more]] + j] = table.pushes[pick[more], j]
            depth[grow] += k
            keep[sel] = True
        alive = alive[keep]
        closed = depth[alive] == 0
        if v + 1 == n:
            accepted[alive[closed]] = True
        alive = alive[~closed]
    return types, counts, accepted


def sample_conditioned_many(Q: OffspringKernel, mu, n: int, count: int, rng: np.random.Generator,
                            retry_budget: Optional[int] = None) -> Union[List[TypedTree], Exhausted]:
    """`count` independent trees with exactly n vertices, by batched rejection.

    Same depth-first rejection as sample_conditioned, run on a batch of
    candidate rows at once. The retry budget applies per requested tree.
    Needs the configurations with at most n - 1 children of every type to
    fit the enumeration budget.
    """
    if n < 1:
        raise DomainError(f"tree size must be at least 1, got {n}")
    if count < 0:
        raise DomainError(f"tree count must be nonnegative, got {count}")
    mu = validate_root_law(mu, Q.alphabet)
    settings = get_settings()
    budget = count * (settings.retry_budget if retry_budget is None else retry_budget)
    tables = _config_tables(Q, n, settings.enumeration_budget)
    root_cumulative = np.cumsum(mu)

    trees: List[TypedTree] = []
    attempts = 0
    batch = SHAPE_BATCH_MIN
    while len(trees) < count and attempts < budget:
        rows = _batch_rows(batch, n, budget - attempts)
        types, counts, accepted = _grow_rows(tables, root_cumulative, n, rows, rng)
        take = np.flatnonzero(accepted)[:count - len(trees)]
        for r in take:
            trees.append(TypedTree(Q.alphabet, tuple(int(t) for t in types[r]),
                                   tuple(int(c) for c in counts[r]), tuple(_parents_from_counts(counts[r]))))
        attempts += int(take[-1]) + 1 if len(trees) == count else rows
        batch = min(2 * batch, SHAPE_BATCH_MAX)
    if len(trees) < count:
        debug_step("SAMPLE_CONDITIONED", f"n={n} exhausted {attempts} attempts with "
                   f"{len(trees)}/{count} trees", "WARNING")
        return Exhausted(attempts, n)
    debug_step("SAMPLE_CONDITIONED", f"n={n}: {count} trees after {attempts} attempts")
    return trees


def _sample_shapes(p: CountLaw, n: int, rng: np.random.Generator, budget: int,
                   wanted: int) -> Tuple[List[np.ndarray], int]:
    """Child counts (preorder) of up to `wanted` plain trees of size n, and the attempt count.

    Candidates are drawn in row batches; each row is the offspring-count walk
    of one unconditioned tree, extended a few columns at a time while it is
    still alive. Rows that die at exactly step n are kept in batch order,
    which is the same law as one-at-a-time rejection.
    """
    shapes: List[np.ndarray] = []
    attempts = 0
    batch = SHAPE_BATCH_MIN
    while len(shapes) < wanted and attempts < budget:
        rows = _batch_rows(batch, n, budget - attempts)
        counts = np.zeros((rows, n), dtype=np.int64)
        level = np.ones(rows, dtype=np.int64)
        finished_at = np.full(rows, -1, dtype=np.int64)
        alive = np.arange(rows)
        col = 0
        while alive.size and col < n:
            width = min(SHAPE_CHUNK, n - col)
            xi = np.asarray(p.sample(rng, size=(alive.size, width)), dtype=np.int64)
            counts[alive, col:col + width] = xi
            walk = level[alive, None] + np.cumsum(xi - 1, axis=1)
            hit = walk <= 0
            died = hit.any(axis=1)
            finished_at[alive[died]] = col + hit[died].argmax(axis=1) + 1
            level[alive] = walk[:, -1]
            alive = alive[~died]
            col += width
        take = np.flatnonzero(finished_at == n)[:wanted - len(shapes)]
        shapes.extend(counts[take])
        attempts += int(take[-1]) + 1 if len(shapes) == wanted else rows
        batch = min(2 * batch, SHAPE_BATCH_MAX)
    return shapes, attempts


def _sample_shape(p: CountLaw, n: int, rng: np.random.Generator,
                  budget: int) -> Tuple[Optional[np.ndarray], int]:
    shapes, attempts = _sample_shapes(p, n, rng, budget, 1)
    return (shapes[0] if shapes else None), attempts


def _parents_from_counts(counts: Sequence[int]) -> List[int]:
    parents = [-1]
    open_slots = [[0, int(counts[0])]]
    for v in range(1, len(counts)):
        while open_slots[-1][1] == 0:
            open_slots.pop()
        parents.append(open_slots[-1][0])
        open_slots[-1][1] -= 1
        open_slots.append([v, int(counts[v])])
    return parents


def _markov_types(counts: np.ndarray, row_cumulative: np.ndarray, root_cumulative: List[float],
                  rng: np.random.Generator) -> Tuple[List[int], List[int]]:
    """Parents and types of a shape; each child type is drawn from its parent's transition row."""
    n = len(counts)
    parents = _parents_from_counts(counts)
    u = rng.random(n)
    types = [_choose(root_cumulative, rng)]
    for v in range(1, n):
        row = row_cumulative[types[parents[v]]]
        types.append(int(min(np.searchsorted(row, u[v] * row[-1], side="right"), len(row) - 1)))
    return parents, types


def _markov_setup(transition, mu, alphabet: Optional[Alphabet]):
    T = np.asarray(transition, dtype=float)
    if alphabet is None:
        alphabet = Alphabet(tuple(f"t{i}" for i in range(T.shape[0])))
    mu = validate_root_law(mu, alphabet)
    return np.cumsum(T, axis=1), _cumulative(mu), alphabet


def sample_markov_indexed(p: CountLaw, transition, mu, n: int, rng: np.random.Generator,
                          retry_budget: Optional[int] = None, rng_seed: int = 0,
                          alphabet: Optional[Alphabet] = None) -> Union[SampleReport, Exhausted]:
    """Plain size-n shape from p, then types passed down edges by the transition matrix."""
    if n < 1:
        raise DomainError(f"tree size must be at least 1, got {n}")
    row_cumulative, root_cumulative, alphabet = _markov_setup(transition, mu, alphabet)
    budget = get_settings().retry_budget if retry_budget is None else retry_budget

    counts, attempts = _sample_shape(p, n, rng, budget)
    if counts is None:
        debug_step("SAMPLE_MARKOV_INDEXED", f"n={n} exhausted {attempts} attempts", "WARNING")
        return Exhausted(attempts, n)

    parents, types = _markov_types(counts, row_cumulative, root_cumulative, rng)
    tree = TypedTree(alphabet, tuple(types), tuple(int(c) for c in counts), tuple(parents))
    debug_step("SAMPLE_MARKOV_INDEXED", f"n={n} accepted after {attempts} attempts")
    return SampleReport(tree=tree, attempts=attempts, rng_seed=rng_seed)


def sample_markov_indexed_many(p: CountLaw, transition, mu, n: int, count: int,
                               rng: np.random.Generator, retry_budget: Optional[int] = None,
                               alphabet: Optional[Alphabet] = None) -> Union[List[TypedTree], Exhausted]:
    """`count` independent Markov-indexed trees of size n; the retry budget applies per tree."""
    if n < 1:
        raise DomainError(f"tree size must be at least 1, got {n}")
    if count < 0:
        raise DomainError(f"tree count must be nonnegative, got {count}")
    row_cumulative, root_cumulative, alphabet = _markov_setup(transition, mu, alphabet)
    budget = count * (get_settings().retry_budget if retry_budget is None else retry_budget)

    shapes, attempts = _sample_shapes(p, n, rng, budget, count)
    if len(shapes) < count:
        debug_step("SAMPLE_MARKOV_INDEXED", f"n={n} exhausted {attempts} attempts with "
                   f"{len(shapes)}/{count} shapes", "WARNING")
        return Exhausted(attempts, n)
    trees = []
    for counts in shapes:
        parents, types = _markov_types(counts, row_cumulative, root_cumulative, rng)
        trees.append(TypedTree(alphabet, tuple(types), tuple(int(c) for c in counts), tuple(parents)))
    debug_step("SAMPLE_MARKOV_INDEXED", f"n={n}: {count} trees after {attempts} attempts")
    return trees


def sample_size_conditioned(Q: OffspringKernel, mu, n: int, rng: np.random.Generator,
                            retry_budget: Optional[int] = None,
                            rng_seed: int = 0) -> Union[SampleReport, Exhausted]:
    """Dispatch: factored kernels use the batched shape sampler."""
    if isinstance(Q, FactoredKernel):
        return sample_markov_indexed(Q.count_law, Q.transition, mu, n, rng, retry_budget,
                                     rng_seed, alphabet=Q.alphabet)
    return sample_conditioned(Q, mu, n, rng, retry_budget, rng_seed)


def sample_size_conditioned_many(Q: OffspringKernel, mu, n: int, count: int, rng: np.random.Generator,
                                 retry_budget: Optional[int] = None) -> Union[List[TypedTree], Exhausted]:
    """Batched counterpart of sample_size_conditioned."""
    if isinstance(Q, FactoredKernel):
        return sample_markov_indexed_many(Q.count_law, Q.transition, mu, n, count, rng, retry_budget,
                                          alphabet=Q.alphabet)
    return sample_conditioned_many(Q, mu, n, count, rng, retry_budget)


def enumerate_trees(Q: OffspringKernel, mu, n: int,
                    budget: Optional[int] = None) -> List[Tuple[TypedTree, float]]:
    """Every typed tree with n vertices and positive probability, with that probability.

    Only configurations with at most n - 1 children can occur, so kernels with
    unbounded support are enumerated exactly as long as that set fits the budget.
    """
    if n < 1:
        raise DomainError(f"tree size must be at least 1, got {n}")
    mu = validate_root_law(mu, Q.alphabet)
    budget = get_settings().enumeration_budget if budget is None else budget
    laws: Dict[int, List[Tuple[OffspringConfig, float]]] = {
        a: sorted(Q.law_upto(a, n - 1, budget=budget), key=lambda cp: (cp[0].count, cp[0].children))
        for a in range(Q.size)
    }

    out: List[Tuple[TypedTree, float]] = []
    types: List[int] = []
    counts: List[int] = []
    parents: List[int] = []

    def extend(stack: List[Tuple[int, int]], prob: float) -> None:
        if not stack:
            if len(types) == n:
                if len(out) >= budget:
                    raise ResourceBudgetError(f"more than {budget} trees of size {n}", budget)
                out.append((TypedTree(Q.alphabet, tuple(types), tuple(counts), tuple(parents)), prob))
            return
        a, parent = stack[-1]
        v = len(types)
        room = n - v - len(stack)
        types.append(a)
        parents.append(parent)
        counts.append(0)
        rest = stack[:-1]
        for c, q in laws[a]:
            if c.count > room:
                break
            counts[-1] = c.count
            extend(rest + [(child, v) for child in reversed(c.children)], prob * q)
        types.pop()
        parents.pop()
        counts.pop()

    for a in range(Q.size):
        if mu[a] > 0.0:
            extend([(a, -1)], float(mu[a]))
    debug_step("ENUMERATE", f"n={n}: {len(out)} trees")
    return out


def size_probabilities(Q: OffspringKernel, mu, n_max: int,
                       budget: Optional[int] = None) -> np.ndarray:
    """P{|T| = n} for n = 0..n_max (entry 0 is 0), by generating functions.

    F_a(x) = x * sum_c Q{c | a} prod_i F_{a_i}(x), iterated n_max times on
    polynomials truncated at degree n_max; each pass fixes one more degree.
    """
    mu = validate_root_law(mu, Q.alphabet)
    budget = get_settings().enumeration_budget if budget is None else budget
    S = Q.size
    size = n_max + 1

    def mul(f, g):
        return np.convolve(f, g)[:size]

    F = np.zeros((S, size))
    if isinstance(Q, FactoredKernel):
        pk = Q.count_law.pmf_array(max(n_max - 1, 0))
        for _ in range(n_max):
            G = Q.transition @ F
            new = np.zeros((S, size))
            for a in range(S):
                power = np.zeros(size)
                power[0] = 1.0
                acc = pk[0] * power
                for k in range(1, n_max):
                    power = mul(power, G[a])
                    acc = acc + pk[k] * power
                new[a, 1:] = acc[:-1]
            F = new
    else:
        laws = {a: list(Q.law_upto(a, n_max - 1, budget=budget)) for a in range(S)}
        for _ in range(n_max):
            new = np.zeros((S, size))
            for a in range(S):
                acc = np.zeros(size)
                for c, q in laws[a]:
                    term = np.zeros(size)
                    term[0] = q
                    for child in c.children:
                        term = mul(term, F[child])
                    acc += term
                new[a, 1:] = acc[:-1]
            F = new
    return mu @ F
