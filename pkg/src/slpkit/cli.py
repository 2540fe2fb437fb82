"""Command-line interface: ``slp check|sample|estimate|exact|mcmc``.

Every command writes one metadata line first (program hash, seed, limits)
so that a run can be reproduced from its output alone.  Exit status 2
means a parse error, 3 a program that fails validation or is unsupported
by the command, and 4 a result cut short by limits.
"""

from __future__ import annotations

import argparse
import json
import math
import secrets
import sys
from concurrent.futures import ProcessPoolExecutor
from typing import Optional, Sequence, TextIO

import numpy as np

from .exact import (
    UnsupportedError, WeightEvaluator, WeightUndetermined, yield_distribution,
)
from .mcmc import (
    BootstrapError, NoisyClassification, UniformLikelihood, load_dataset, run_chain,
)
from .parser import SLPSyntaxError, parse_goal, parse_term
from .program import BUILTINS, SLP, key_str, load_slp, parse_slp, validate
from .resolution import Limits, enumerate_derivations, yield_of
from .sampling import METHODS, estimate_from_records, sample_many
from .terms import atom_key, format_goal, format_term

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_LIMIT = 4


class CLIError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=True)


def _limits(args) -> Limits:
    return Limits(max_depth=args.max_depth, occurs_check=not args.no_occurs_check)


def _seed(args) -> int:
    return args.seed if args.seed is not None else secrets.randbits(63)


def _rngs(seed: int, shards: int) -> list:
    # a single shard uses the seed directly, so CLI runs match library calls
    if shards == 1:
        return [seed]
    return np.random.SeedSequence(seed).spawn(shards)


def _split(n: int, shards: int) -> list[int]:
    q, r = divmod(n, shards)
    return [q + (i < r) for i in range(shards)]


def _load(path: str, renormalize: bool, tol: float, strict: bool = True) -> SLP:
    try:
        slp = load_slp(path, tol)
    except SLPSyntaxError as e:
        raise CLIError(EXIT_PARSE, f"{path}: {e}") from None
    except OSError as e:
        raise CLIError(EXIT_PARSE, f"{path}: {e.strerror}") from None
    if renormalize:
        slp = slp.renormalized()
    if strict:
        rep = validate(slp, tol)
        if not rep.ok:
            problems = rep.bad_sums + [f"undefined {k}" for k in rep.undefined]
            raise CLIError(EXIT_INVALID, f"{path}: invalid program: {', '.join(problems)}"
                           " (use --renormalize to rescale labels)")
    return slp


def _goal(slp: SLP, text: str) -> tuple:
    try:
        goal = parse_goal(text)
    except SLPSyntaxError as e:
        raise CLIError(EXIT_PARSE, f"goal: {e}") from None
    for a in goal:
        k = atom_key(a)
        if k not in slp.defs and k not in BUILTINS:
            raise CLIError(EXIT_INVALID, f"goal calls undefined predicate {key_str(k)}")
    return goal


def _header(command: str, slp: SLP, path: str, seed, limits: Limits, **extra) -> str:
    meta = {"command": command, "program": path, "sha256": slp.digest(), "seed": seed,
            "limits": {"max_depth": limits.max_depth, "occurs_check": limits.occurs_check}}
    meta.update(extra)
    return _dump(meta)


# ---------------------------------------------------------------------------
# Workers (module level so process pools can pickle them)


def _sample_shard(source: str, path: str, goal_text: str, method: str, n: int, seed,
                  max_depth: int, occurs_check: bool, run_seed: int) -> list[str]:
    slp = parse_slp(source, path)
    goal = parse_goal(goal_text)
    rng = np.random.default_rng(seed)
    return [_dump(r.to_json(run_seed))
            for r in sample_many(slp, goal, method, n, rng, max_depth, occurs_check)]


def _chain(source: str, path: str, goal_text: str, lik: tuple, steps: int, p: float, seed,
           max_depth: int, occurs_check: bool, trace: bool) -> tuple[list[dict], dict]:
    slp = parse_slp(source, path)
    goal = parse_goal(goal_text)
    if lik[0] == "noisy":
        likelihood = NoisyClassification(load_dataset(lik[1]), lik[2])
    else:
        likelihood = UniformLikelihood()
    res = run_chain(slp, goal, likelihood, steps, p, seed,
                    Limits(max_depth=max_depth, occurs_check=occurs_check),
                    keep_trace=trace)
    summary = res.summary()
    summary["steps"] = res.steps
    if lik[0] == "noisy":
        summary["mean_log_likelihood"] = res.mean_log_likelihood(likelihood)
    return [e.to_json() for e in res.trace], summary


def _map(fn, jobs: int, calls: list[tuple]) -> list:
    if jobs <= 1 or len(calls) <= 1:
        return [fn(*c) for c in calls]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(fn, *c) for c in calls]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# Commands


def cmd_check(args, out: TextIO) -> int:
    slp = _load(args.program, args.renormalize, args.tol, strict=False)
    rep = validate(slp, args.tol)
    out.write(_header("check", slp, args.program, None, Limits()) + "\n")
    for line in rep.lines():
        out.write(line + "\n")
    return EXIT_OK if rep.ok else EXIT_INVALID


def cmd_sample(args, out: TextIO) -> int:
    slp = _load(args.program, args.renormalize, args.tol)
    goal = _goal(slp, args.goal)
    limits = _limits(args)
    seed = _seed(args)
    if args.n < 0:
        raise CLIError(EXIT_INVALID, "-n must be non-negative")
    out.write(_header("sample", slp, args.program, seed, limits, goal=format_goal(goal),
                      method=args.method, n=args.n, shards=args.shards) + "\n")
    source = str(slp)
    calls = [(source, args.program, args.goal, args.method, k, s, limits.max_depth,
              limits.occurs_check, seed)
             for k, s in zip(_split(args.n, args.shards), _rngs(seed, args.shards))]
    cut = 0
    for lines in _map(_sample_shard, args.jobs, calls):
        for line in lines:
            cut += '"status":"depth_exceeded"' in line
            out.write(line + "\n")
    if cut:
        print(f"slp: {cut} derivation(s) reached the depth limit", file=sys.stderr)
        return EXIT_LIMIT
    return EXIT_OK


def cmd_estimate(args, out: TextIO) -> int:
    slp = _load(args.program, args.renormalize, args.tol)
    goal = _goal(slp, args.goal)
    try:
        event = parse_term(args.event)
    except SLPSyntaxError as e:
        raise CLIError(EXIT_PARSE, f"event: {e}") from None
    if len(goal) != 1:
        raise CLIError(EXIT_INVALID, "estimate needs a single-atom goal")
    if args.n < 1:
        raise CLIError(EXIT_INVALID, "-n must be at least 1")
    limits = _limits(args)
    seed = _seed(args)
    out.write(_header("estimate", slp, args.program, seed, limits, goal=format_goal(goal),
                      event=format_term(event), method=args.method, n=args.n) + "\n")
    rng = np.random.default_rng(seed)
    est = estimate_from_records(
        sample_many(slp, goal, args.method, args.n, rng, limits.max_depth, limits.occurs_check),
        event)
    out.write(_dump({"event": format_term(event), "value": est.value,
                     "std_error": est.std_error, "n": est.n,
                     "refutations": est.refutations, "ess": est.effective_sample_size}) + "\n")
    if not est.defined:
        print("slp: no refutations sampled; estimate undefined", file=sys.stderr)
        return EXIT_LIMIT
    return EXIT_OK


def _fmt_float(x: float) -> str:
    return repr(float(x))


def cmd_exact(args, out: TextIO) -> int:
    slp = _load(args.program, args.renormalize, args.tol)
    goal = _goal(slp, args.goal)
    limits = _limits(args)
    meta = _header("exact", slp, args.program, None, limits, goal=format_goal(goal),
                   approx_depth=args.approx_depth)
    if len(goal) != 1:
        raise CLIError(EXIT_INVALID, "exact needs a single-atom goal")
    if args.approx_depth is not None:
        return _exact_approx(slp, goal, args.approx_depth, limits, meta, out)
    ev = WeightEvaluator(slp, limits, split=args.split)
    try:
        dist = yield_distribution(slp, goal, limits, ev)
    except UnsupportedError as e:
        raise CLIError(EXIT_INVALID, str(e)) from None
    except WeightUndetermined as e:
        out.write(meta + "\n")
        out.write("#Z=undetermined\n")
        print(f"slp: {e}", file=sys.stderr)
        return EXIT_LIMIT
    except ValueError as e:
        out.write(meta + "\n")
        out.write("#Z=0.0\n")
        print(f"slp: {e}", file=sys.stderr)
        return EXIT_OK
    out.write(meta + "\n")
    out.write(f"#Z={_fmt_float(dist.z)}\n")
    out.write("#yield\tprobability\tweight\n")
    for (y, prob), num in zip(dist.support, dist.numerators):
        out.write(f"{format_term(y)}\t{_fmt_float(prob)}\t{_fmt_float(num)}\n")
    return EXIT_OK


def _exact_approx(slp, goal, depth, limits, meta, out) -> int:
    """Lower bounds from the refutations no longer than ``depth`` steps."""
    if not slp.pure:
        raise CLIError(EXIT_INVALID, "exact inference needs a pure program")
    enum = enumerate_derivations(slp, goal, Limits(max_depth=depth,
                                                   occurs_check=limits.occurs_check),
                                 refutations_only=True)
    acc: dict = {}
    for r in enum.refutations:
        text = format_term(yield_of(r))
        acc[text] = acc.get(text, 0.0) + r.psi
    z = math.fsum(acc.values())
    out.write(meta + "\n")
    out.write(f"#Z>={_fmt_float(z)}\ttruncated={'yes' if enum.truncated else 'no'}"
              f"\tdepth={depth}\n")
    out.write("#yield\tprobability\tweight\n")
    for text, w in acc.items():
        out.write(f"{text}\t{_fmt_float(w / z)}\t{_fmt_float(w)}\n")
    return EXIT_OK


def cmd_mcmc(args, out: TextIO) -> int:
    slp = _load(args.prior, args.renormalize, args.tol)
    goal = _goal(slp, args.goal)
    limits = _limits(args)
    seed = _seed(args)
    if args.likelihood == "noisy":
        if args.data is None:
            raise CLIError(EXIT_INVALID, "--likelihood noisy needs --data")
        try:
            load_dataset(args.data)
        except SLPSyntaxError as e:
            raise CLIError(EXIT_PARSE, f"{args.data}: {e}") from None
        lik = ("noisy", args.data, args.noise)
    else:
        lik = ("uniform",)
    if not 0 < args.p <= 1:
        raise CLIError(EXIT_INVALID, "-p must lie in (0, 1]")
    out.write(_header("mcmc", slp, args.prior, seed, limits, goal=format_goal(goal),
                      likelihood=args.likelihood, noise=args.noise, data=args.data,
                      steps=args.steps, p=args.p, chains=args.chains) + "\n")
    source = str(slp)
    calls = [(source, args.prior, args.goal, lik, args.steps, args.p, s, limits.max_depth,
              limits.occurs_check, not args.no_trace)
             for s in _rngs(seed, args.chains)]
    try:
        results = _map(_chain, args.jobs, calls)
    except BootstrapError as e:
        print(f"slp: {e}", file=sys.stderr)
        return EXIT_LIMIT
    for c, (trace, summary) in enumerate(results):
        for entry in trace:
            if args.chains > 1:
                entry = {"chain": c, **entry}
            out.write(_dump(entry) + "\n")
    for c, (trace, summary) in enumerate(results):
        block = {"summary": summary}
        if args.chains > 1:
            block["chain"] = c
        out.write(_dump(block) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="slp", description="Stochastic logic programs.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, program=True):
        if program:
            p.add_argument("program", help="program file (.slp)")
        p.add_argument("--renormalize", action="store_true",
                       help="rescale each labelled definition to sum to one")
        p.add_argument("--tol", type=float, default=1e-9,
                       help="tolerance on label sums (default: 1e-9)")

    def engine(p):
        p.add_argument("--max-depth", type=int, default=1000,
                       help="resolution depth limit (default: 1000)")
        p.add_argument("--no-occurs-check", action="store_true",
                       help="unify without the occurs check")

    p = sub.add_parser("check", help="validate a program and report label sums")
    common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("sample", help="draw derivations, one JSON record per line")
    common(p)
    engine(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--method", choices=METHODS, default="loglinear")
    p.add_argument("-n", type=int, default=1, help="number of samples")
    p.add_argument("--seed", type=int)
    p.add_argument("--shards", type=int, default=1,
                   help="independent random streams; output is merged in shard order")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for shards")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="Monte Carlo probability of a yield pattern")
    common(p)
    engine(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--event", required=True, help="atom the yield must unify with")
    p.add_argument("--method", choices=METHODS, default="unif_constrained")
    p.add_argument("-n", type=int, default=10000)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("exact", help="exact yield distribution as TSV")
    common(p)
    engine(p)
    p.add_argument("--goal", required=True)
    p.add_argument("--split", action="store_true",
                   help="split goals on shared variables when they do not decompose")
    p.add_argument("--approx-depth", type=int,
                   help="report lower bounds from refutations up to this depth")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("mcmc", help="Metropolis-Hastings over the yields of a prior")
    common(p, program=False)
    engine(p)
    p.add_argument("--prior", required=True, help="prior program file")
    p.add_argument("--goal", required=True, help="goal whose yields are the models")
    p.add_argument("--likelihood", choices=("uniform", "noisy"), default="uniform")
    p.add_argument("--noise", type=float, default=0.1,
                   help="misclassification probability for --likelihood noisy")
    p.add_argument("--data", help="examples, one '+ atom.' or '- atom.' per line")
    p.add_argument("--steps", type=int, default=10000)
    p.add_argument("-p", type=float, default=0.8, dest="p",
                   help="backtracking continuation probability")
    p.add_argument("--seed", type=int)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-trace", action="store_true", help="print only the summary")
    p.set_defaults(func=cmd_mcmc)
    return ap


def main(argv: Optional[Sequence[str]] = None, out: Optional[TextIO] = None) -> int:
    args = build_parser().parse_args(argv)
    out = out or sys.stdout
    for name in ("shards", "chains"):
        if getattr(args, name, 1) < 1:
            print(f"slp: --{name} must be at least 1", file=sys.stderr)
            return EXIT_INVALID
    try:
        return args.func(args, out)
    except CLIError as e:
        print(f"slp: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
