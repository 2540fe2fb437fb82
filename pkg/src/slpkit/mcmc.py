"""Metropolis-Hastings over models defined as yields of an SLP prior.

The chain state is a refutation of the top goal.  A proposal backtracks a
random number of choice points up the current derivation, then samples
loglinearly from the goal it reached, never retaking the branch it came
up by at that first step.  Failed (imaginary) candidates have prior
probability zero and are always rejected.
"""

from __future__ import annotations

import logging
import math
import time
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .machine import Machine, first_answer
from .parser import Diagnostic, SLPSyntaxError, Parser, flatten_conj
from .program import SLP, build_slp
from .resolution import (
    DEFAULT_LIMITS, DepthExceeded, Derivation, Limits, Status,
    replay, resolve_step,
)
from .sampling import sample_backtrackable
from .terms import (
    Clause, Const, Struct, Substitution, Term, VarSupply, canonical_key,
    format_term, goal_vars, list_items,
)

log = logging.getLogger(__name__)

REAL = "real_model"
IMAGINARY = "imaginary"
SELF = "self"


# ---------------------------------------------------------------------------
# Choice points and backtracking


def _is_choice(slp: SLP, clause: Optional[Clause]) -> bool:
    return clause is not None and len(slp.defs[clause.key].clauses) >= 2


def choice_points(slp: SLP, d: Derivation) -> list[int]:
    """Indices of the steps whose selected atom's definition has two or more clauses."""
    return [i for i, s in enumerate(d.steps) if _is_choice(slp, s.clause)]


def backtrack_distribution(n_max: int, p: float, exact: bool = False) -> list:
    """``P(B = n)`` for ``n = 1..n_max``: geometric in ``p``, with the tail mass on ``n_max``.

    With ``exact=True`` the terms are :class:`~fractions.Fraction` values of
    the given float ``p`` and sum to one exactly.  The float version puts
    the rounding residue on the last term so that ``math.fsum`` of the list
    is exactly 1.0.
    """
    if n_max < 1:
        raise ValueError("need at least one choice point")
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    if exact:
        q = Fraction(p)
        return [q ** (n - 1) * (1 - q) for n in range(1, n_max)] + [q ** (n_max - 1)]
    head = [p ** (n - 1) * (1 - p) for n in range(1, n_max)]
    return head + [1.0 - math.fsum(head)]


def sample_backtracks(n_max: int, p: float, random: Callable[[], float]) -> int:
    n = 1
    while n < n_max and random() < p:
        n += 1
    return n


# ---------------------------------------------------------------------------
# Proposals


@dataclass(frozen=True)
class ProposalRecord:
    n_back: int
    n_fwd: int
    l_ci: float
    l_cstar: float
    status: str
    at_step: int = 0

    def to_json(self) -> dict:
        return {"n_back": self.n_back, "n_fwd": self.n_fwd, "l_ci": self.l_ci,
                "l_cstar": self.l_cstar, "status": self.status}


@dataclass(frozen=True, eq=False)
class Candidate:
    choices: tuple
    status: Status
    model: Optional[Term]


@dataclass(frozen=True, eq=False)
class ChainState:
    derivation: Derivation
    model: Term
    likelihood: float
    step_index: int = 0
    choice_points: tuple = ()
    key: object = None

    @property
    def log_likelihood(self) -> float:
        return math.log(self.likelihood) if self.likelihood > 0 else -math.inf


def _yield(initial: tuple, answer: Term) -> Term:
    vs = goal_vars(initial)
    theta = Substitution(dict(zip(vs, answer.args))) if vs else Substitution()
    if len(initial) == 1:
        return theta.apply(initial[0])
    return Struct(",", tuple(theta.apply(a) for a in initial))


def make_state(slp: SLP, d: Derivation, likelihood: Callable[[Term], float],
               step_index: int = 0) -> ChainState:
    if not d.refuted:
        raise ValueError("chain states are refutations")
    model = _yield(d.initial, d.answer_term)
    return ChainState(d, model, likelihood(model), step_index,
                      tuple(choice_points(slp, d)), canonical_key(model))


def propose(slp: SLP, state: ChainState, p: float, rng: np.random.Generator,
            limits: Limits = DEFAULT_LIMITS, machine: Optional[Machine] = None
            ) -> tuple[Candidate, ProposalRecord]:
    """Backtrack-and-resample proposal from ``state``.

    Depth-limited candidates count as imaginary.
    """
    cps = state.choice_points
    if not cps:
        raise ValueError("derivation has no choice points; nothing to propose")
    random = rng.random
    d = state.derivation
    n_back = sample_backtracks(len(cps), p, random)
    j = cps[len(cps) - n_back]
    step = d.steps[j]
    ci = step.clause
    others = [c for c in slp.defs[ci.key].clauses if c is not ci]
    prefix = tuple(s.clause for s in d.steps[:j])
    rest = math.fsum(c.label for c in others)
    if rest <= 0:
        rec = ProposalRecord(n_back, 1, ci.label, 0.0, IMAGINARY, j)
        return Candidate(prefix, Status.FAILED, None), rec
    u = random() * rest
    acc = 0.0
    cstar = others[-1]
    for c in others:
        acc += c.label
        if u < acc:
            cstar = c
            break
    supply = VarSupply(d.next_var)
    r = resolve_step(step.goal, 0, cstar, supply, limits.occurs_check)
    if r is None:
        rec = ProposalRecord(n_back, 1, ci.label, cstar.label, IMAGINARY, j)
        return Candidate(prefix + (cstar,), Status.FAILED, None), rec
    g, theta = r
    m = machine or Machine(slp, limits.max_depth, limits.occurs_check)
    run = m.loglinear(g, theta.apply(step.answer_term), supply.next_id, random,
                      budget=limits.max_depth - j - 1)
    n_fwd = 1 + sum(1 for c in run.choices if _is_choice(slp, c))
    choices = prefix + (cstar,) + tuple(run.choices)
    if run.status is not Status.REFUTED:
        rec = ProposalRecord(n_back, n_fwd, ci.label, cstar.label, IMAGINARY, j)
        return Candidate(choices, run.status, None), rec
    model = _yield(d.initial, run.answer)
    status = SELF if canonical_key(model) == state.key else REAL
    return (Candidate(choices, Status.REFUTED, model),
            ProposalRecord(n_back, n_fwd, ci.label, cstar.label, status, j))


def acceptance_ratio(rec: ProposalRecord, ll_current: float, ll_candidate: float,
                     p: float) -> float:
    """Acceptance probability from backtrack counts, branch labels and likelihoods.

    ``ll_*`` are likelihood values (not logs).
    """
    if rec.status == IMAGINARY:
        return 0.0
    if ll_current <= 0:
        if ll_candidate > 0:
            log.debug("current model has zero likelihood; accepting by convention")
            return 1.0
        return 0.0
    ratio = p ** (rec.n_fwd - rec.n_back) * (1 - rec.l_ci) / (1 - rec.l_cstar)
    return min(ratio * ll_candidate / ll_current, 1.0)


def log_acceptance_ratio(rec: ProposalRecord, log_ll_current: float,
                         log_ll_candidate: float, p: float) -> float:
    if rec.status == IMAGINARY:
        return -math.inf
    if log_ll_current == -math.inf:
        return 0.0 if log_ll_candidate > -math.inf else -math.inf
    out = ((rec.n_fwd - rec.n_back) * math.log(p) + math.log1p(-rec.l_ci)
           - math.log1p(-rec.l_cstar) + log_ll_candidate - log_ll_current)
    return min(out, 0.0)


def mh_step(slp: SLP, state: ChainState, likelihood: Callable[[Term], float], p: float,
            rng: np.random.Generator, limits: Limits = DEFAULT_LIMITS,
            machine: Optional[Machine] = None):
    """One Metropolis-Hastings transition.

    Returns ``(next_state, accepted, record, alpha)``.  ``likelihood``
    should already be bound to its data (and ideally cached).
    """
    cand, rec = propose(slp, state, p, rng, limits, machine)
    if rec.status == IMAGINARY:
        alpha = 0.0
        ll = 0.0
    else:
        ll = likelihood(cand.model)
        alpha = acceptance_ratio(rec, state.likelihood, ll, p)
    if alpha > 0 and (alpha >= 1 or rng.random() < alpha):
        d = replay(slp, state.derivation.initial, cand.choices, Status.REFUTED, limits)
        nxt = ChainState(d, cand.model, ll, state.step_index + 1,
                         tuple(choice_points(slp, d)), canonical_key(cand.model))
        return nxt, True, rec, alpha
    return (ChainState(state.derivation, state.model, state.likelihood, state.step_index + 1,
                       state.choice_points, state.key), False, rec, alpha)


# ---------------------------------------------------------------------------
# Chains


class BootstrapError(RuntimeError):
    pass


@dataclass(frozen=True)
class TraceEntry:
    step: int
    model: str
    accepted: bool
    alpha: float
    n_back: int
    n_fwd: int
    status: str

    def to_json(self) -> dict:
        return {"step": self.step, "model": self.model, "accepted": self.accepted,
                "alpha": self.alpha, "n_back": self.n_back, "n_fwd": self.n_fwd}


@dataclass
class ChainResult:
    trace: list[TraceEntry]
    acceptances: int
    steps: int
    visits: Counter
    models: dict[str, Term]
    wall_time: float
    final: Optional[ChainState] = None
    state_visits: Counter = field(default_factory=Counter)

    @property
    def rate(self) -> float:
        return self.acceptances / self.steps if self.steps else 0.0

    @property
    def distinct_models(self) -> int:
        return len(self.visits)

    def visit_distribution(self) -> dict[str, float]:
        total = sum(self.visits.values())
        return {k: v / total for k, v in self.visits.items()}

    def mean_log_likelihood(self, likelihood: Callable[[Term], float]) -> float:
        """Average of ``log likelihood(M)`` over the steps of the chain."""
        total = sum(self.visits.values())
        acc = 0.0
        for text, n in self.visits.items():
            v = likelihood(self.models[text])
            acc += n * (math.log(v) if v > 0 else -math.inf)
        return acc / total

    def summary(self) -> dict:
        return {"acceptances": self.acceptances, "rate": self.rate,
                "distinct_models": self.distinct_models, "wall_time": self.wall_time}


def bootstrap(slp: SLP, goal: Sequence[Term], rng: np.random.Generator,
              limits: Limits = DEFAULT_LIMITS, retries: int = 100) -> Derivation:
    """Initial refutation by backtrackable sampling."""
    for _ in range(retries):
        rec = sample_backtrackable(slp, goal, rng, limits.max_depth, limits.occurs_check)
        if rec.refuted:
            return rec.derivation
    raise BootstrapError(f"no refutation found in {retries} backtrackable samples")


def run_chain(slp: SLP, goal: Sequence[Term], likelihood: Callable[[Term], float],
              n_steps: int, p: float, seed=None, limits: Limits = DEFAULT_LIMITS,
              retries: int = 100, keep_trace: bool = True,
              on_step: Optional[Callable[[TraceEntry], None]] = None) -> ChainResult:
    """Run ``n_steps`` Metropolis-Hastings transitions from a bootstrapped refutation.

    Visit counts are per step (a rejected proposal counts the current
    model again) and keyed by the printed model term.
    """
    if not 0 < p <= 1:
        raise ValueError("p must lie in (0, 1]")
    goal = tuple(goal)
    rng = np.random.default_rng(seed)
    cached = likelihood if isinstance(likelihood, CachedLikelihood) else CachedLikelihood(likelihood)
    machine = Machine(slp, limits.max_depth, limits.occurs_check)
    t0 = time.perf_counter()
    state = make_state(slp, bootstrap(slp, goal, rng, limits, retries), cached)
    texts: dict = {}
    models: dict = {}

    def text_of(st):
        t = texts.get(st.key)
        if t is None:
            t = texts[st.key] = format_term(st.model)
            models[t] = st.model
        return t

    trace: list[TraceEntry] = []
    visits: Counter = Counter()
    state_visits: Counter = Counter()
    acceptances = 0
    for i in range(1, n_steps + 1):
        if state.choice_points:
            state, accepted, rec, alpha = mh_step(slp, state, cached, p, rng, limits, machine)
            entry = TraceEntry(i, text_of(state), accepted, alpha, rec.n_back, rec.n_fwd,
                               rec.status)
        else:
            accepted = False
            entry = TraceEntry(i, text_of(state), False, 0.0, 0, 0, SELF)
        acceptances += accepted
        visits[entry.model] += 1
        state_visits[state.derivation.clause_path()] += 1
        if keep_trace:
            trace.append(entry)
        if on_step is not None:
            on_step(entry)
    return ChainResult(trace, acceptances, n_steps, visits, models,
                       time.perf_counter() - t0, state, state_visits)


# ---------------------------------------------------------------------------
# Exact kernel quantities on explicit derivations


def _path(d: Derivation) -> list[str]:
    return [s.clause_id for s in d.steps]


def transition_probability(slp: SLP, src: Derivation, dst: Derivation, p: float) -> float:
    """Probability that one proposal from ``src`` produces exactly ``dst``.

    Sums, over every backtrack depth, the chance of stopping there times the
    chance that the restricted-then-loglinear resampling reproduces ``dst``.
    """
    cps = choice_points(slp, src)
    if not cps:
        return 0.0
    dist = backtrack_distribution(len(cps), p)
    sp, dp = _path(src), _path(dst)
    total = 0.0
    for n, pb in enumerate(dist, 1):
        j = cps[len(cps) - n]
        if len(dp) <= j or dp[:j] != sp[:j] or dp[j] == sp[j]:
            continue
        prob = pb * dst.steps[j].label / (1 - src.steps[j].label)
        for s in dst.steps[j + 1:]:
            if s.label is not None:
                prob *= s.label
        total += prob
    return total


def describe_jump(slp: SLP, src: Derivation, dst: Derivation) -> ProposalRecord:
    """The proposal record for the move ``src -> dst`` (deepest common choice point)."""
    sp, dp = _path(src), _path(dst)
    j = 0
    while j < min(len(sp), len(dp)) and sp[j] == dp[j]:
        j += 1
    if j >= len(sp) or j >= len(dp):
        raise ValueError("derivations do not branch apart")
    cps_src = choice_points(slp, src)
    if j not in cps_src:
        raise ValueError("derivations branch at a step that is not a choice point")
    n_back = sum(1 for i in cps_src if i >= j)
    n_fwd = sum(1 for i in choice_points(slp, dst) if i >= j)
    status = REAL if dst.refuted else IMAGINARY
    return ProposalRecord(n_back, n_fwd, src.steps[j].label, dst.steps[j].label, status, j)


# ---------------------------------------------------------------------------
# Likelihoods and data


class CachedLikelihood:
    """Memoises a likelihood on the canonical form of the model term."""

    def __init__(self, fn: Callable[[Term], float]):
        self.fn = fn
        self.cache: dict = {}
        self.evaluations = 0

    def __call__(self, model: Term) -> float:
        k = canonical_key(model)
        v = self.cache.get(k)
        if v is None:
            self.evaluations += 1
            v = self.cache[k] = float(self.fn(model))
        return v


class UniformLikelihood:
    def __call__(self, model: Term) -> float:
        return 1.0


class TableLikelihood:
    """Likelihood looked up by printed model term; unknown models get ``default``."""

    def __init__(self, table: Mapping[Union[str, Term], float], default: float = 0.0):
        from .parser import parse_term
        self.table = {}
        for k, v in table.items():
            t = parse_term(k) if isinstance(k, str) else k
            self.table[format_term(t)] = float(v)
        self.default = default

    def __call__(self, model: Term) -> float:
        return self.table.get(format_term(model), self.default)


@dataclass(frozen=True)
class Dataset:
    examples: tuple[tuple[Term, bool], ...]

    @property
    def positives(self) -> list[Term]:
        return [a for a, pos in self.examples if pos]

    @property
    def negatives(self) -> list[Term]:
        return [a for a, pos in self.examples if not pos]

    def __len__(self):
        return len(self.examples)


def parse_dataset(text: str) -> Dataset:
    """One example per line: ``+ atom.`` or ``- atom.``; ``%`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("%", 1)[0].strip()
        if not line:
            continue
        sign, body = line[0], line[1:]
        if sign not in "+-":
            raise SLPSyntaxError([Diagnostic(lineno, 1, "example must start with + or -")])
        try:
            p = Parser(body)
            atom = p.term()
            p.accept(".")
            if p.tok.kind != "eof":
                p.error("trailing input")
        except SLPSyntaxError as e:
            raise SLPSyntaxError([Diagnostic(lineno, d.col + 1, d.message)
                                  for d in e.diagnostics]) from None
        if not atom.ground:
            raise SLPSyntaxError([Diagnostic(lineno, 2, "examples must be ground")])
        out.append((atom, sign == "+"))
    return Dataset(tuple(out))


def load_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh.read())


def program_of(model: Term) -> SLP:
    """Logic program encoded by a model term.

    The model is a list of clauses, each ``(H :- B)`` or a fact ``H``, or an
    atom whose last argument is such a list (the shape ``model(LP)``).
    """
    if not (model == Const("[]") or (type(model) is Struct and model.functor == ".")):
        if type(model) is Struct:
            model = model.args[-1]
    items, tail = list_items(model)
    if tail != Const("[]"):
        raise ValueError(f"model is not a proper clause list: {format_term(model)}")
    clauses = []
    for it in items:
        if type(it) is Struct and it.functor == ":-" and len(it.args) == 2:
            clauses.append(Clause(it.args[0], tuple(flatten_conj(it.args[1]))))
        else:
            clauses.append(Clause(it))
    return build_slp(clauses, "<model>")


@dataclass(frozen=True)
class Verdict:
    positive: bool
    truncated: bool = False


CLASSIFY_LIMITS = Limits(max_depth=200)


def classify(model: Term, example: Term, limits: Limits = CLASSIFY_LIMITS,
             machine: Optional[Machine] = None) -> Verdict:
    """Whether ``example`` is derivable from the program encoded by ``model``.

    A search that runs past ``limits.max_depth`` counts as negative and is
    flagged as truncated.
    """
    m = machine or Machine(program_of(model), limits.max_depth, limits.occurs_check)
    try:
        return Verdict(first_answer(m.slp, (example,), limits, m) is not None)
    except DepthExceeded:
        return Verdict(False, True)


class NoisyClassification:
    """Each example is classified correctly with probability ``1 - eps``."""

    def __init__(self, dataset: Dataset, eps: float = 0.1, limits: Limits = CLASSIFY_LIMITS):
        if not 0 <= eps <= 1:
            raise ValueError("eps must lie in [0, 1]")
        self.dataset = dataset
        self.eps = eps
        self.limits = limits

    def __call__(self, model: Term) -> float:
        m = Machine(program_of(model), self.limits.max_depth, self.limits.occurs_check)
        out = 1.0
        for atom, positive in self.dataset.examples:
            v = classify(model, atom, self.limits, m)
            out *= (1 - self.eps) if v.positive == positive else self.eps
        return out
