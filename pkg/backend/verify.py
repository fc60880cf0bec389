"""
Acceptance suite behind `gwldp verify`.

Each check is a function returning (passed, detail). Checks belong to a
group so `--only` can select either a single check or a whole group.
The geometric closed form is injectable so a corrupted version can be
shown to fail the suite.
"""

from __future__ import annotations

import math
import os
import tempfile
import time
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy import stats

from shared.debug_config import debug_error, debug_run, debug_step
from shared.types import ConsistencyClass, VerifyResult

from .empirical import (OffspringMeasure, PairMeasure, check_consistency, induced_pair,
                        offspring_measure, pair_counts, pair_measure, pair_measure_tilde,
                        repair_consistency, tv_distance)
from .engine import mean_pair_measure
from .laws import CountLaw, GeometricLaw, PoissonLaw, TableLaw
from .model import Alphabet, ExplicitKernel, FactoredKernel, OffspringConfig, single_type_kernel
from .rate import ip_geometric_closed, lemma_inf_oracle, legendre_Ip, rate_I, rate_I_geometric
from .tilting import TiltFunction, log_rn_weight, tilted_model, u_g
from .trees import (Exhausted, TypedTree, enumerate_trees, sample_conditioned, sample_conditioned_many,
                    sample_markov_indexed_many, sample_tree)

CHECK_SEED = 20240611
X_GRID = [round(0.05 * i, 10) for i in range(1, 101)]
CHAIN_TRANSITION = [[0.9, 0.1], [0.2, 0.8]]

ClosedForm = Callable[[float], float]


@dataclass
class SuiteOptions:
    closed_form: ClosedForm = ip_geometric_closed
    quick: bool = False

    def scale(self, full: int, quick: int) -> int:
        return quick if self.quick else full


@dataclass(frozen=True)
class Check:
    name: str
    group: str
    run: Callable[[SuiteOptions], Tuple[bool, str]]
    budget: Optional[float] = None  # seconds


def critical_laws() -> Dict[str, CountLaw]:
    return {
        "geometric:0.5": GeometricLaw(0.5),
        "poisson:1": PoissonLaw(1.0),
        "table:0.5,0,0.5": TableLaw((0.5, 0.0, 0.5)),
        "table:0.25,0.5,0.25": TableLaw((0.25, 0.5, 0.25)),
    }


def chain_kernel() -> FactoredKernel:
    return FactoredKernel(Alphabet(("a", "b")), GeometricLaw(0.5), CHAIN_TRANSITION)


def two_type_explicit() -> ExplicitKernel:
    """Subcritical two-type kernel with a bounded support"""
    alphabet = Alphabet(("a", "b"))
    return ExplicitKernel(alphabet, [
        {alphabet.config(): 0.5, alphabet.config("a", "b"): 0.25, alphabet.config("b"): 0.25},
        {alphabet.config(): 0.4, alphabet.config("a"): 0.3, alphabet.config("a", "a"): 0.3},
    ])


def check_geometric_closed_form(options: SuiteOptions):
    p = GeometricLaw(0.5)
    worst = max(abs(legendre_Ip(p, x) - options.closed_form(x)) for x in X_GRID)
    return worst < 1e-8, f"max deviation {worst:.3e} on {len(X_GRID)} grid points"


def check_boundary_identity(options: SuiteOptions):
    laws = {"geometric:0.5": GeometricLaw(0.5), "poisson:1": PoissonLaw(1.0),
            "table:0.4,0,0.6": TableLaw((0.4, 0.0, 0.6)), **critical_laws()}
    worst = max(abs(legendre_Ip(p, 0.0) + math.log(p.pmf(0))) for p in laws.values())
    return worst <= 1e-10, f"max |I_p(0) + log p(0)| = {worst:.3e} over {len(laws)} laws"


def check_criticality_zero(options: SuiteOptions):
    failures = []
    for name, p in critical_laws().items():
        values = np.array([legendre_Ip(p, x) for x in X_GRID])
        if abs(legendre_Ip(p, 1.0)) > 1e-10:
            failures.append(f"{name}: I_p(1) != 0")
        finite = values[np.isfinite(values)]
        if np.any(finite < -1e-12):
            failures.append(f"{name}: negative value")
        second = finite[:-2] - 2 * finite[1:-1] + finite[2:]
        if np.any(second < -1e-9):
            failures.append(f"{name}: not convex")
    return not failures, "; ".join(failures) or f"{len(critical_laws())} critical laws"


def check_geometric_rate_equivalence(options: SuiteOptions):
    rng = np.random.default_rng(CHECK_SEED)
    p = GeometricLaw(0.5)
    worst = 0.0
    for S in (2, 3):
        for _ in range(10):
            mu = rng.dirichlet(np.ones(S * S)).reshape(S, S)
            T = rng.dirichlet(np.ones(S), size=S)
            worst = max(worst, abs(rate_I(mu, T, p) - rate_I_geometric(mu, T)))
    return worst <= 1e-10, f"max deviation {worst:.3e} over 20 inputs"


def check_empirical_identities(options: SuiteOptions):
    rng = np.random.default_rng(CHECK_SEED)
    corpus = [
        (single_type_kernel(GeometricLaw(0.5)), np.array([1.0])),
        (chain_kernel(), np.array([0.5, 0.5])),
        (two_type_explicit(), np.array([1.0, 0.0])),
    ]
    total = options.scale(10_000, 600)
    checked = 0
    for i in range(total):
        Q, mu = corpus[i % len(corpus)]
        tree = sample_tree(Q, mu, rng, max_vertices=200)
        if not isinstance(tree, TypedTree):
            continue
        tree.validate()
        n = tree.size
        if int(pair_counts(tree).sum()) != n - 1:
            return False, f"edge count {pair_counts(tree).sum()} for a tree of size {n}"
        tilde = pair_measure_tilde(tree)
        if check_consistency(tilde, offspring_measure(tree), tol=1e-12) != ConsistencyClass.CONSISTENT:
            return False, f"realized measures of a size-{n} tree are not consistent"
        if n >= 2 and not np.allclose(pair_measure(tree).entries, n / (n - 1) * tilde.entries,
                                      rtol=1e-12, atol=0.0):
            return False, "L_X differs from (n/(n-1)) L~_X"
        checked += 1
    return checked > 0, f"{checked} trees checked"


def _chi_square(observed: Dict, expected: Dict[tuple, float], samples: int) -> float:
    """p-value, pooling cells with expected count below 5."""
    obs, exp = [], []
    pooled_obs, pooled_exp = 0, 0.0
    for key, prob in expected.items():
        e = prob * samples
        if e < 5.0:
            pooled_obs += observed.get(key, 0)
            pooled_exp += e
        else:
            obs.append(observed.get(key, 0))
            exp.append(e)
    stray = sum(v for k, v in observed.items() if k not in expected)
    pooled_obs += stray
    if pooled_exp > 0 or pooled_obs > 0:
        obs.append(pooled_obs)
        exp.append(max(pooled_exp, 1e-12))
    if len(obs) < 2:
        return 1.0
    exp = np.array(exp) * (sum(obs) / sum(exp))
    return float(stats.chisquare(obs, exp).pvalue)


def conditional_law(Q, mu, n) -> Dict[tuple, float]:
    trees = enumerate_trees(Q, mu, n)
    total = math.fsum(p for _, p in trees)
    return {t.key(): p / total for t, p in trees}


def check_conditional_law(options: SuiteOptions):
    Q = chain_kernel()
    mu = np.array([0.5, 0.5])
    samples = options.scale(100_000, 4_000)
    rng = np.random.default_rng(CHECK_SEED)
    details = []
    passed = True
    for n in (2, 3, 4, 5):
        expected = conditional_law(Q, mu, n)
        for label, draw in (
            ("rejection", lambda: sample_conditioned_many(Q, mu, n, samples, rng)),
            ("markov", lambda: sample_markov_indexed_many(Q.count_law, Q.transition, mu, n, samples, rng,
                                                          alphabet=Q.alphabet)),
        ):
            trees = draw()
            if isinstance(trees, Exhausted):
                return False, f"{label} sampler exhausted at n={n}"
            observed = Counter(tree.key() for tree in trees)
            pvalue = _chi_square(observed, expected, samples)
            passed = passed and pvalue > 0.001
            details.append(f"n={n} {label} p={pvalue:.3g}")
    # the one-at-a-time rejection path, on a smaller sample
    n, single = 4, options.scale(5_000, 500)
    observed = Counter()
    for _ in range(single):
        report = sample_conditioned(Q, mu, n, rng)
        if isinstance(report, Exhausted):
            return False, f"single-draw sampler exhausted at n={n}"
        observed[report.tree.key()] += 1
    pvalue = _chi_square(observed, conditional_law(Q, mu, n), single)
    details.append(f"n={n} single-draw p={pvalue:.3g}")
    return passed and pvalue > 0.001, ", ".join(details)


def demo_tilts(alphabet: Alphabet) -> Dict[str, TiltFunction]:
    return {
        "zero": TiltFunction(),
        "constant": TiltFunction.constant(0.7),
        "config": TiltFunction(values={
            (0, OffspringConfig(())): math.log(2.0),
            (1, alphabet.config("a", "a")): -0.5,
        }),
    }


def check_change_of_measure(options: SuiteOptions):
    worst_rel = 0.0
    cases = 0
    for Q, mu in ((two_type_explicit(), np.array([0.6, 0.4])), (chain_kernel(), np.array([0.5, 0.5]))):
        for name, g in demo_tilts(Q.alphabet).items():
            Qt, mut = tilted_model(Q, mu, g)
            U = u_g(g, Q)
            for n in range(1, 6):
                tilted = {t.key(): p for t, p in enumerate_trees(Qt, mut, n)}
                for tree, p in enumerate_trees(Q, mu, n):
                    w = log_rn_weight(tree, g, Q, mu, U=U)
                    p_tilde = tilted.get(tree.key(), 0.0)
                    rel = abs(p_tilde * math.exp(-w) - p) / p
                    worst_rel = max(worst_rel, rel)
                    cases += 1
    return worst_rel <= 1e-12, f"max relative error {worst_rel:.3e} over {cases} trees"


def check_infimum_identity(options: SuiteOptions):
    instances = [
        (np.array([0.8, 0.4]), np.array([0.5, 0.5])),
        (np.array([0.3, 0.5, 0.4]), np.array([0.2, 0.3, 0.5])),
    ]
    laws = {"geometric:0.5": GeometricLaw(0.5), "poisson:1": PoissonLaw(1.0),
            "table:0.25,0.5,0.25": TableLaw((0.25, 0.5, 0.25))}
    ks = (6, 8, 10)
    failures, details = [], []
    for phi, q_hat in instances:
        for name, p in laws.items():
            gaps = []
            for k in ks:
                brute, closed = lemma_inf_oracle(phi, q_hat, p, k)
                gaps.append(brute - closed)
            if min(gaps) < -1e-6:
                failures.append(f"{name} S={len(phi)}: gap below closed form")
            if any(later > earlier + 1e-9 for earlier, later in zip(gaps, gaps[1:])):
                failures.append(f"{name} S={len(phi)}: gap not shrinking")
            if not isinstance(p, GeometricLaw) and gaps[0] > 1e-3:
                failures.append(f"{name} S={len(phi)}: gap {gaps[0]:.2e} at k={ks[0]}")
            rule = "monotone-only" if isinstance(p, GeometricLaw) else f"bounded at k={ks[0]}"
            details.append(f"{name} S={len(phi)} [{rule}] gaps " + "/".join(f"{g:.1e}" for g in gaps))
    return not failures, "; ".join(failures + details)


def check_decay_sanity(options: SuiteOptions):
    Q = single_type_kernel(GeometricLaw(0.5))
    mu = np.array([1.0])
    decay = []
    for n in range(1, 13):
        prob = math.fsum(p for _, p in enumerate_trees(Q, mu, n))
        exact = math.comb(2 * (n - 1), n - 1) / n / 2 ** (2 * n - 1)
        if abs(prob - exact) > 1e-12 * exact:
            return False, f"P{{|T|={n}}} = {prob!r}, expected {exact!r}"
        decay.append(-math.log(prob) / n)
    positive = all(d > 0 for d in decay)
    # n = 1 sits below n = 2 (1/2 vs 1/8); the curve decreases from n = 2 on
    decreasing = all(b < a for a, b in zip(decay[1:], decay[2:]))
    return positive and decreasing, "decay " + ", ".join(f"{d:.4f}" for d in decay)


def stationary_distribution(T) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    pi = np.full(T.shape[0], 1.0 / T.shape[0])
    for _ in range(10_000):
        nxt = pi @ T
        if np.max(np.abs(nxt - pi)) <= 1e-15:
            break
        pi = nxt
    return nxt / nxt.sum()


def check_lln(options: SuiteOptions):
    Q = chain_kernel()
    mu = np.array([0.5, 0.5])
    pi = stationary_distribution(Q.transition)
    target = pi[:, None] * Q.transition
    samples = options.scale(2_000, 200)
    mean = mean_pair_measure(Q, mu, 200, samples, CHECK_SEED)
    if isinstance(mean, Exhausted):
        return False, "sampler exhausted"
    distance = tv_distance(mean, target)
    return distance <= 0.05, f"tv(mean L_X, pi x Q) = {distance:.4f} over {samples} trees"


def random_subconsistent(rng: np.random.Generator) -> Tuple[PairMeasure, OffspringMeasure]:
    alphabet = Alphabet(("a", "b"))
    configs = [alphabet.config(), alphabet.config("a"), alphabet.config("b"),
               alphabet.config("a", "b"), alphabet.config("b", "b")]
    weights = rng.dirichlet(np.ones(2 * len(configs)))
    nu = OffspringMeasure(alphabet, {(a, c): float(weights[a * len(configs) + i])
                                     for a in range(2) for i, c in enumerate(configs)})
    defect = rng.uniform(0.01, 0.05, size=(2, 2))
    return PairMeasure(alphabet, induced_pair(nu).entries + defect), nu


def check_repair(options: SuiteOptions):
    rng = np.random.default_rng(CHECK_SEED)
    ns = np.array([100, 1_000, 10_000])
    slopes = []
    for _ in range(10):
        varpi, nu = random_subconsistent(rng)
        distances = []
        for n in ns:
            pair, repaired = repair_consistency(varpi, nu, int(n))
            if check_consistency(pair, repaired, tol=1e-10) != ConsistencyClass.CONSISTENT:
                return False, f"repair at n={n} is not consistent"
            distances.append(tv_distance(repaired, nu))
        slopes.append(np.polyfit(np.log(ns), np.log(distances), 1)[0])
    worst = max(abs(s + 1.0) for s in slopes)
    return worst <= 0.1, f"log-log slopes in [{min(slopes):.3f}, {max(slopes):.3f}]"


def _run_cli_twice(argv_for: Callable[[Path], List[str]], threads: List[str]) -> List[Dict[str, bytes]]:
    from .cli import main

    outputs = []
    previous = os.environ.get("GWLDP_THREADS")
    try:
        for value in threads:
            os.environ["GWLDP_THREADS"] = value
            with tempfile.TemporaryDirectory() as tmp:
                out = Path(tmp) / "out"
                code = main(argv_for(out))
                if code != 0:
                    raise RuntimeError(f"command exited with {code}")
                outputs.append({
                    str(path.relative_to(out)): path.read_bytes()
                    for path in sorted(out.rglob("*")) if path.is_file() and path.name != "manifest.json"
                })
    finally:
        if previous is None:
            os.environ.pop("GWLDP_THREADS", None)
        else:
            os.environ["GWLDP_THREADS"] = previous
    return outputs


def check_determinism(options: SuiteOptions):
    kernels = Path(__file__).resolve().parent.parent / "sample_kernels"
    chain = str(kernels / "chain_geometric.json")
    samples = str(options.scale(50, 10))
    simulate = _run_cli_twice(
        lambda out: ["simulate", "--kernel", chain, "--n", "20", "--samples", samples,
                     "--seed", "7", "--out", str(out), "--conditioned"],
        ["1", "1", "4"])
    estimate = _run_cli_twice(
        lambda out: ["estimate", "--kernel", chain, "--event", "true", "--n-list", "2,3,4",
                     "--samples", str(options.scale(4_000, 1_000)), "--tilt", "none",
                     "--seed", "7", "--out", str(out)],
        ["1", "1", "4"])
    same = all(o == simulate[0] for o in simulate) and all(o == estimate[0] for o in estimate)
    return same, f"{len(simulate[0])} simulate files, {len(estimate[0])} estimate files compared"


CHECKS: List[Check] = [
    Check("geometric-closed-form", "ip", check_geometric_closed_form, budget=1.0),
    Check("boundary-identity", "ip", check_boundary_identity),
    Check("criticality-zero", "ip", check_criticality_zero),
    Check("geometric-rate-equivalence", "rate", check_geometric_rate_equivalence, budget=1.0),
    Check("empirical-identities", "empirical", check_empirical_identities),
    Check("conditional-law", "trees", check_conditional_law, budget=120.0),
    Check("change-of-measure", "tilting", check_change_of_measure),
    Check("infimum-identity", "rate", check_infimum_identity, budget=300.0),
    Check("decay-sanity", "trees", check_decay_sanity),
    Check("lln", "trees", check_lln, budget=120.0),
    Check("consistency-repair", "empirical", check_repair),
    Check("determinism", "cli", check_determinism),
]


def select_checks(only: Optional[str]) -> List[Check]:
    if not only:
        return list(CHECKS)
    wanted = {w.strip() for w in only.split(",") if w.strip()}
    return [c for c in CHECKS if c.name in wanted or c.group in wanted]


def run_suite(only: Optional[str] = None, closed_form: ClosedForm = ip_geometric_closed,
              quick: bool = False) -> List[VerifyResult]:
    """Run the selected checks; a check that raises or overruns its budget counts as failed."""
    options = SuiteOptions(closed_form=closed_form, quick=quick)
    results = []
    for check in select_checks(only):
        start = time.perf_counter()
        try:
            passed, detail = check.run(options)
        except Exception as e:
            debug_error(e, {"check": check.name})
            passed, detail = False, f"{type(e).__name__}: {e}"
        seconds = time.perf_counter() - start
        if check.budget is not None and seconds > check.budget:
            passed = False
            detail = f"{detail}; took {seconds:.2f}s, budget {check.budget:g}s"
        debug_step("VERIFY", f"{check.name}: {'ok' if passed else 'FAIL'} ({seconds:.2f}s)")
        results.append(VerifyResult(name=check.name, passed=bool(passed), detail=detail, seconds=seconds))
    debug_run(f"verify: {sum(r.passed for r in results)}/{len(results)} checks passed")
    return results


def format_table(results: List[VerifyResult]) -> str:
    width = max((len(r.name) for r in results), default=4)
    lines = [f"{'check':<{width}}  status  seconds  detail"]
    for r in results:
        status = "[OK]  " if r.passed else "[FAIL]"
        lines.append(f"{r.name:<{width}}  {status}  {r.seconds:7.2f}  {r.detail}")
    return "\n".join(lines)
