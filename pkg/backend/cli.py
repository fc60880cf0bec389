"""
Command-line front end: gwldp simulate | rate | estimate | verify.

Exit codes: 0 success, 1 runtime failure (exhausted, overflow, budget),
2 validation error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import platform
import sys
import time
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pydantic
import scipy
from pydantic import ValidationError

from shared.config import get_settings, worker_count
from shared.database import RunLedger
from shared.debug_config import debug_error, debug_run, debug_step, debug_summary, set_debug_level
from shared.errors import DomainError, GWLDPError, KernelValidationError, ResourceBudgetError
from shared.types import DecayPoint, RateRecord, RunManifest, RunStatus, TiltDocument

from . import __version__
from .empirical import (OFFSPRING_HEADER, PAIR_HEADER, offspring_measure, offspring_measure_from_csv,
                        offspring_measure_to_csv, pair_measure_from_csv, pair_measure_tilde,
                        pair_measure_to_csv)
from .engine import decay_curve, simulate_batch
from .laws import GeometricLaw, parse_count_law
from .model import FactoredKernel, load_kernel_spec, truncate_kernel
from .rate import (ip_geometric_closed, legendre_Ip, rate_I, rate_I_geometric, rate_J, rate_Jk,
                   rate_K)
from .tilting import AlwaysEvent, BallEvent, Event, ZERO_TILT, tilt_from_document
from .trees import tree_to_text
from .verify import format_table, run_suite

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_INVALID = 2
GEOMETRIC_CHECK_TOL = 1e-8


def file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_float(value: float) -> str:
    """Shortest round-trip decimal, 'inf' for infinity"""
    return "inf" if math.isinf(value) else repr(float(value))


def parse_grid(text: str) -> List[float]:
    """'start:stop:step' inclusive of stop, or a comma list"""
    if ":" not in text:
        return [float(v) for v in text.split(",")]
    start, stop, step = (float(v) for v in text.split(":"))
    if step <= 0:
        raise DomainError(f"grid step must be positive, got {step}")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(count)]


def parse_n_list(text: str) -> List[int]:
    """'3,4,5', '3..8' or '3:8' (inclusive)"""
    for sep in ("..", ":"):
        if sep in text:
            lo, hi = (int(v) for v in text.split(sep))
            values = list(range(lo, hi + 1))
            break
    else:
        values = [int(v) for v in text.split(",") if v.strip()]
    if not values or any(n < 1 for n in values):
        raise DomainError(f"n-list must contain positive integers, got '{text}'")
    return values


def read_measure(path, alphabet):
    """Offspring or pair measure from CSV, chosen by the header"""
    text = Path(path).read_text(encoding="utf-8")
    header = text.splitlines()[0].strip().split(",") if text.strip() else []
    if header == OFFSPRING_HEADER:
        return "offspring", offspring_measure_from_csv(text, alphabet)
    if header == PAIR_HEADER:
        return "pair", pair_measure_from_csv(text, alphabet)
    raise DomainError(f"{path}: unrecognized measure header {header}")


def parse_event(spec: str, alphabet, inputs: Dict[str, str]) -> Event:
    """'true' or 'ball:center=FILE,radius=R[,kind=pair|offspring]'"""
    if spec.strip().lower() in ("true", "always"):
        return AlwaysEvent()
    kind, _, rest = spec.partition(":")
    if kind != "ball":
        raise DomainError(f"unknown event '{spec}'")
    fields = dict(part.split("=", 1) for part in rest.split(",") if part)
    if "center" not in fields or "radius" not in fields:
        raise DomainError(f"ball event needs center= and radius=, got '{spec}'")
    found, center = read_measure(fields["center"], alphabet)
    wanted = fields.get("kind", found)
    if wanted != found:
        raise DomainError(f"ball kind '{wanted}' does not match the {found} measure in {fields['center']}")
    inputs[fields["center"]] = file_digest(fields["center"])
    return BallEvent(found, center, float(fields["radius"]))


def versions() -> Dict[str, str]:
    return {
        "gwldp": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pydantic": pydantic.VERSION,
    }


def build_manifest(args, argv: Sequence[str], inputs: Dict[str, str], outputs: Dict[str, str],
                   status: RunStatus, started: datetime, t0: float) -> RunManifest:
    flags = {k: v for k, v in vars(args).items() if k != "handler"}
    return RunManifest(
        command=args.command, argv=list(argv), flags=flags, seed=getattr(args, "seed", None),
        threads=worker_count(), versions=versions(), input_digests=inputs, output_digests=outputs,
        status=status, started_at=started.isoformat(), wall_clock_seconds=time.perf_counter() - t0,
    )


def write_outputs(out: Path, files: Dict[str, str]) -> Dict[str, str]:
    """Write text files under out; returns their digests"""
    digests = {}
    for name, text in files.items():
        path = out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        digests[name] = text_digest(text)
    return digests


def finish_run(args, argv, out: Optional[Path], manifest: RunManifest,
               points: Optional[List[DecayPoint]] = None) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "manifest.json").write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    ledger_path = getattr(args, "ledger", None) or get_settings().ledger_path
    if ledger_path:
        ledger = RunLedger(ledger_path)
        run_id = ledger.record_run(manifest)
        if points:
            ledger.record_estimates(run_id, points)
        debug_step("LEDGER", f"run {run_id} recorded in {ledger_path}")


def cmd_simulate(args, argv) -> int:
    started, t0 = datetime.now(), time.perf_counter()
    Q, mu = load_kernel_spec(args.kernel)
    inputs = {args.kernel: file_digest(args.kernel)}
    batch = simulate_batch(Q, mu, args.n, args.samples, args.seed, conditioned=args.conditioned,
                           retry_budget=args.retry_budget)

    files: Dict[str, str] = {}
    for i, tree in enumerate(batch.trees):
        files[f"trees/tree_{i:05d}.txt"] = tree_to_text(tree)
        files[f"measures/offspring_{i:05d}.csv"] = offspring_measure_to_csv(offspring_measure(tree))
        files[f"measures/pair_{i:05d}.csv"] = pair_measure_to_csv(pair_measure_tilde(tree))
    out = Path(args.out)
    outputs = write_outputs(out, files)

    status, code = RunStatus.OK, EXIT_OK
    if batch.exhausted is not None:
        status, code = RunStatus.EXHAUSTED, EXIT_RUNTIME
        print(f"exhausted: no tree of size {args.n} after {batch.exhausted.attempts} attempts "
              f"({len(batch.trees)} of {args.samples} trees written)", file=sys.stderr)
    elif not args.conditioned and batch.overflows:
        print(f"overflow: {batch.overflows} of {args.samples} trees exceeded {args.n} vertices",
              file=sys.stderr)
        if not batch.trees:
            status, code = RunStatus.OVERFLOW, EXIT_RUNTIME

    manifest = build_manifest(args, argv, inputs, outputs, status, started, t0)
    finish_run(args, argv, out, manifest)
    print(f"{len(batch.trees)} trees written to {out} ({batch.total_attempts} attempts)")
    return code


def emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def rate_record(name: str, inputs: Dict[str, str], value: float) -> str:
    digest = text_digest(json.dumps(inputs, sort_keys=True))
    return RateRecord.from_value(name, digest, value).model_dump_json() + "\n"


def cmd_rate_ip(args, argv) -> int:
    p = parse_count_law(args.p)
    if args.x is not None:
        value = legendre_Ip(p, args.x)
        emit(("inf" if math.isinf(value) else f"{value:.7f}") + "\n", args.out)
        return EXIT_OK
    grid = parse_grid(args.x_grid)
    rows = ["x,value"] + [f"{format_float(x)},{format_float(legendre_Ip(p, x))}" for x in grid]
    emit("\n".join(rows) + "\n", args.out)
    return EXIT_OK


def cmd_rate_geometric_check(args, argv) -> int:
    p = GeometricLaw(0.5)
    grid = parse_grid(args.grid)
    worst = max(abs(legendre_Ip(p, x) - ip_geometric_closed(x)) for x in grid)
    print(f"max_abs_deviation,{format_float(worst)}")
    if worst >= GEOMETRIC_CHECK_TOL:
        debug_step("GEOMETRIC_CHECK", f"deviation {worst:.3e} above {GEOMETRIC_CHECK_TOL}", "WARNING")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_rate_J(args, argv) -> int:
    Q, _ = load_kernel_spec(args.kernel)
    _, varpi = read_measure(args.pair, Q.alphabet)
    _, nu = read_measure(args.offspring, Q.alphabet)
    inputs = {path: file_digest(path) for path in (args.kernel, args.pair, args.offspring)}
    if args.k is not None:
        value = rate_Jk(varpi, nu, truncate_kernel(Q, args.k), k=args.k, root_slack=args.root_slack)
        name = f"J_{args.k}"
    else:
        value = rate_J(varpi, nu, Q, root_slack=args.root_slack, project=args.project)
        name = "J"
    emit(rate_record(name, inputs, value), args.out)
    return EXIT_OK


def cmd_rate_K(args, argv) -> int:
    Q, _ = load_kernel_spec(args.kernel)
    _, nu = read_measure(args.offspring, Q.alphabet)
    inputs = {path: file_digest(path) for path in (args.kernel, args.offspring)}
    emit(rate_record("K", inputs, rate_K(nu, Q)), args.out)
    return EXIT_OK


def cmd_rate_I(args, argv) -> int:
    Q, _ = load_kernel_spec(args.kernel)
    if not isinstance(Q, FactoredKernel):
        raise DomainError("rate I needs a factored kernel (count law and transition matrix)")
    _, mu = read_measure(args.pair, Q.alphabet)
    inputs = {path: file_digest(path) for path in (args.kernel, args.pair)}
    if args.geometric:
        value, name = rate_I_geometric(mu, Q.transition), "I_geometric"
    else:
        value, name = rate_I(mu, Q.transition, Q.count_law), "I"
    emit(rate_record(name, inputs, value), args.out)
    return EXIT_OK


def resolve_tilt(spec: str, event: Event, Q):
    if spec == "none":
        return ZERO_TILT
    if spec == "auto":
        return event.suggested_tilt(Q)
    doc = TiltDocument.model_validate_json(Path(spec).read_text(encoding="utf-8"))
    return tilt_from_document(doc, Q.alphabet)


def decay_csv(points: List[DecayPoint]) -> str:
    rows = ["n,estimate,stderr,decay"]
    for p in points:
        decay = format_float(p.decay) if p.finite else "inf"
        rows.append(f"{p.n},{format_float(p.estimate)},{format_float(p.stderr)},{decay}")
    return "\n".join(rows) + "\n"


def cmd_estimate(args, argv) -> int:
    started, t0 = datetime.now(), time.perf_counter()
    Q, mu = load_kernel_spec(args.kernel)
    inputs = {args.kernel: file_digest(args.kernel)}
    event = parse_event(args.event, Q.alphabet, inputs)
    if args.tilt not in ("none", "auto"):
        inputs[args.tilt] = file_digest(args.tilt)
    g = resolve_tilt(args.tilt, event, Q)
    n_list = parse_n_list(args.n_list)

    rows = decay_curve(Q, mu, event, n_list, args.samples, g, args.seed,
                       conditional=args.conditional)
    points = [row.point for row in rows]
    for p in points:
        if not p.finite:
            print(f"warning: n={p.n} had no hits; decay reported as inf", file=sys.stderr)

    csv_text = decay_csv(points)
    report_text = json.dumps([row.report.model_dump() for row in rows], indent=2, sort_keys=True) + "\n"
    out = Path(args.out) if args.out else None
    outputs = {}
    if out is not None:
        outputs = write_outputs(out, {"decay.csv": csv_text, "report.json": report_text})
    else:
        sys.stdout.write(csv_text)
    manifest = build_manifest(args, argv, inputs, outputs, RunStatus.OK, started, t0)
    finish_run(args, argv, out, manifest, points)
    return EXIT_OK


def cmd_verify(args, argv) -> int:
    closed_form = ip_geometric_closed
    if args.corrupt_closed_form:
        def closed_form(x):
            return ip_geometric_closed(x) + 1e-6 * x
    results = run_suite(only=args.only, closed_form=closed_form, quick=args.quick)
    print(format_table(results))
    if not results:
        print(f"no checks match '{args.only}'", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gwldp", description="Conditioned multitype Galton-Watson "
                                     "trees, empirical measures and their rate functions")
    parser.add_argument("--debug-level", default=None, help="BASIC | DETAILED | VERBOSE | TRACE")
    parser.add_argument("--ledger", default=None, help="sqlite run ledger path")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="sample trees and their empirical measures")
    sim.add_argument("--kernel", required=True)
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--samples", type=int, required=True)
    sim.add_argument("--seed", type=int, required=True)
    sim.add_argument("--out", required=True)
    sim.add_argument("--conditioned", action="store_true", help="condition on exactly n vertices")
    sim.add_argument("--retry-budget", type=int, default=None)
    sim.set_defaults(handler=cmd_simulate)

    rate = sub.add_parser("rate", help="evaluate rate functions")
    rate_sub = rate.add_subparsers(dest="rate_command", required=True)

    ip = rate_sub.add_parser("ip", help="Legendre transform I_p")
    ip.add_argument("--p", required=True, help="geometric:q | poisson:lambda | table:p0,p1,...")
    where = ip.add_mutually_exclusive_group(required=True)
    where.add_argument("--x", type=float)
    where.add_argument("--x-grid", help="start:stop:step")
    ip.add_argument("--out", default=None)
    ip.set_defaults(handler=cmd_rate_ip)

    check = rate_sub.add_parser("geometric-check", help="Legendre vs closed form for geometric(1/2)")
    check.add_argument("--grid", default="0.05:5.0:0.05")
    check.set_defaults(handler=cmd_rate_geometric_check)

    j = rate_sub.add_parser("J", help="rate of (pair, offspring) measures")
    j.add_argument("--kernel", required=True)
    j.add_argument("--pair", required=True)
    j.add_argument("--offspring", required=True)
    j.add_argument("--k", type=int, default=None, help="evaluate J_k with the truncated kernel")
    j.add_argument("--root-slack", type=float, default=0.0)
    j.add_argument("--project", action="store_true")
    j.add_argument("--out", default=None)
    j.set_defaults(handler=cmd_rate_J)

    k = rate_sub.add_parser("K", help="rate of the offspring measure")
    k.add_argument("--kernel", required=True)
    k.add_argument("--offspring", required=True)
    k.add_argument("--out", default=None)
    k.set_defaults(handler=cmd_rate_K)

    i = rate_sub.add_parser("I", help="rate of the edge measure of a Markov-chain-indexed tree")
    i.add_argument("--kernel", required=True)
    i.add_argument("--pair", required=True)
    i.add_argument("--geometric", action="store_true", help="use the geometric(1/2) closed form")
    i.add_argument("--out", default=None)
    i.set_defaults(handler=cmd_rate_I)

    est = sub.add_parser("estimate", help="importance-sampled probabilities and decay rates")
    est.add_argument("--kernel", required=True)
    est.add_argument("--event", required=True, help="true | ball:center=FILE,radius=R")
    est.add_argument("--n-list", required=True, help="3,4,5 or 3..8")
    est.add_argument("--samples", type=int, required=True)
    est.add_argument("--tilt", default="none", help="none | auto | FILE")
    est.add_argument("--seed", type=int, required=True)
    est.add_argument("--out", default=None)
    est.add_argument("--conditional", action="store_true", help="estimate P{event | |T| = n}")
    est.set_defaults(handler=cmd_estimate)

    ver = sub.add_parser("verify", help="run the acceptance suite")
    ver.add_argument("--only", default=None, help="check or group names, comma separated")
    ver.add_argument("--quick", action="store_true", help="reduced sample sizes")
    ver.add_argument("--corrupt-closed-form", action="store_true", help=argparse.SUPPRESS)
    ver.set_defaults(handler=cmd_verify)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.debug_level:
        set_debug_level(args.debug_level, get_settings().debug_log_to_file)
    debug_run(f"gwldp {' '.join(argv)}")
    try:
        return args.handler(args, argv)
    except (KernelValidationError, DomainError, ValidationError) as e:
        debug_error(e, {"command": args.command})
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_INVALID
    except ResourceBudgetError as e:
        debug_error(e, {"command": args.command})
        print(f"budget exceeded: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except GWLDPError as e:
        debug_error(e, {"command": args.command})
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as e:
        debug_error(e, {"command": args.command})
        print(f"cannot access file: {e}", file=sys.stderr)
        return EXIT_INVALID
    finally:
        if args.debug_level:
            debug_summary()


if __name__ == "__main__":
    sys.exit(main())
