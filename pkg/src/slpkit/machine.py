"""Mutable-binding derivation engine used on the sampling hot paths.

Bindings live in one dict per run and are undone through a trail, so a
step costs a clause instantiation plus a unification; nothing is rebuilt.
A run records only its sequence of input clauses (``None`` marks a
deterministic builtin/unlabelled step).  :func:`slpkit.resolution.replay`
turns such a sequence back into a full :class:`Derivation` on demand.
"""

from __future__ import annotations

from typing import Optional

from .program import SLP
from .resolution import DepthExceeded, Limits, Status
from .terms import Const, Struct, Term, Var, VarSupply, _full, _mk


_UNIFY = ("=", 2)
_NOT = ("\\+", 1)
_AND = (",", 2)


def _conjuncts(t, env) -> list:
    """Atoms of a (possibly nested) conjunction, dereferencing variables."""
    out = []
    stack = [t]
    while stack:
        t = stack.pop()
        while type(t) is Var:
            nxt = env.get(t)
            if nxt is None:
                raise ValueError("cannot call an unbound variable")
            t = nxt
        if type(t) is Struct and t.functor == "," and len(t.args) == 2:
            stack.append(t.args[1])
            stack.append(t.args[0])
        else:
            out.append(t)
    return out


def _key(a):
    return (a.functor, len(a.args)) if type(a) is Struct else (a.name, 0)


def _occurs_in(vid: int, t: Struct, env: dict) -> bool:
    stack = list(t.args)
    while stack:
        a = stack.pop()
        while type(a) is Var:
            nxt = env.get(a)
            if nxt is None:
                if a.id == vid:
                    return True
                break
            a = nxt
        if type(a) is Struct and not a.ground:
            stack.extend(a.args)
    return False


def unify_env(t1: Term, t2: Term, env: dict, trail: Optional[list], oc: bool) -> bool:
    """Unify under ``env``, adding bindings in place (recorded on ``trail``)."""
    stack = [(t1, t2)]
    while stack:
        a, c = stack.pop()
        while type(a) is Var:
            nxt = env.get(a)
            if nxt is None:
                break
            a = nxt
        while type(c) is Var:
            nxt = env.get(c)
            if nxt is None:
                break
            c = nxt
        if a is c:
            continue
        ta, tc = type(a), type(c)
        if ta is Var:
            if tc is Var:
                if c.id == a.id:
                    continue
                if a.id < c.id:
                    a, c = c, a
            elif oc and tc is Struct and not c.ground and _occurs_in(a.id, c, env):
                return False
            env[a] = c
            if trail is not None:
                trail.append(a)
        elif tc is Var:
            if oc and ta is Struct and not a.ground and _occurs_in(c.id, a, env):
                return False
            env[c] = a
            if trail is not None:
                trail.append(c)
        elif ta is Struct:
            if tc is not Struct or a.functor != c.functor or len(a.args) != len(c.args):
                return False
            if a.ground and c.ground:
                if a != c:
                    return False
                continue
            stack.extend(zip(a.args, c.args))
        elif tc is not Const or a.name != c.name:
            return False
    return True


class _HeadCompiler:
    """Generate ``match(args, env, trail, s, oc)`` for one clause.

    The function unifies a goal atom's arguments with the clause head,
    binding goal variables in ``env`` (each recorded on ``trail``), and
    returns the instantiated body, or None on a clash.  Clause variables
    take ids ``s, s+1, ...``.  The first occurrence of a head variable just
    names the goal subterm it meets, so only variables that end up inside
    newly built structure are ever created.
    """

    def __init__(self, clause):
        self.clause = clause
        self.index = {v: i for i, v in enumerate(clause.variables)}
        self.env = {"Var": Var, "Struct": Struct, "Const": Const, "_mk": _mk,
                    "unify_env": unify_env, "_occurs_in": _occurs_in}
        self.lines = ["def match(args, env, trail, s, oc):"]
        self.tmp = 0

    def const(self, t) -> str:
        name = f"k{len(self.env)}"
        self.env[name] = t
        return name

    def emit(self, line: str, depth: int):
        self.lines.append("    " * depth + line)

    def build(self, t, seen: set, depth: int) -> str:
        if type(t) is Var:
            i = self.index[t]
            if i not in seen:
                seen.add(i)
                self.emit(f"v{i} = Var(s + {i})", depth)
            return f"v{i}"
        if t.ground:
            return self.const(t)
        args = "".join(self.build(a, seen, depth) + ", " for a in t.args)
        return f"_mk({t.functor!r}, ({args}), False)"

    def match(self, h, x: str, seen: set, depth: int):
        emit = self.emit
        if type(h) is Var:
            i = self.index[h]
            if i in seen:
                emit(f"if not unify_env(v{i}, {x}, env, trail, oc): return None", depth)
            else:
                seen.add(i)
                emit(f"v{i} = {x}", depth)
            return
        emit(f"while type({x}) is Var:", depth)
        emit(f"y = env.get({x})", depth + 1)
        emit("if y is None: break", depth + 1)
        emit(f"{x} = y", depth + 1)
        if h.ground:
            k = self.const(h)
            emit(f"if type({x}) is Var:", depth)
            emit(f"env[{x}] = {k}; trail.append({x})", depth + 1)
            if type(h) is Const:
                emit(f"elif {x} is not {k} and (type({x}) is not Const or {x}.name != {k}.name):",
                     depth)
            else:
                emit(f"elif {x} is not {k} and not unify_env({k}, {x}, env, trail, oc):", depth)
            emit("return None", depth + 1)
            return
        n = len(h.args)
        emit(f"if type({x}) is Var:", depth)
        before = set(seen)
        built_seen = set(seen)
        t = self.build(h, built_seen, depth + 1)
        emit(f"t = {t}", depth + 1)
        if any(type(v) is Var and self.index[v] in before for v in _vars_of(h)):
            emit(f"if oc and _occurs_in({x}.id, t, env): return None", depth + 1)
        emit(f"env[{x}] = t; trail.append({x})", depth + 1)
        emit(f"elif type({x}) is Struct and {x}.functor == {h.functor!r} "
             f"and len({x}.args) == {n}:", depth)
        emit(f"xa = {x}.args", depth + 1)
        names = []
        for j in range(n):
            self.tmp += 1
            names.append(f"x{self.tmp}")
        emit(", ".join(names) + (", = xa" if n == 1 else " = xa"), depth + 1)
        for hj, xj in zip(h.args, names):
            self.match(hj, xj, seen, depth + 1)
        emit("else:", depth)
        emit("return None", depth + 1)
        seen |= built_seen

    def compile(self):
        c = self.clause
        seen: set = set()
        if type(c.head) is Struct:
            names = [f"x{j}" for j in range(len(c.head.args))]
            self.tmp = len(names)
            self.emit(", ".join(names) + (", = args" if len(names) == 1 else " = args"), 1)
            for hj, xj in zip(c.head.args, names):
                self.match(hj, xj, seen, 1)
        body = "".join(self.build(b, seen, 1) + ", " for b in c.body)
        self.emit(f"return ({body})", 1)
        exec("\n".join(self.lines), self.env)
        return self.env["match"]


def _vars_of(t):
    if type(t) is Var:
        yield t
    elif type(t) is Struct:
        for a in t.args:
            yield from _vars_of(a)


def matcher(clause):
    m = clause.__dict__.get("_match")
    if m is None:
        m = _HeadCompiler(clause).compile()
        object.__setattr__(clause, "_match", m)
    return m


def undo(env: dict, trail: list, mark: int) -> None:
    while len(trail) > mark:
        del env[trail.pop()]


def first_answer(slp: SLP, goal, limits: Limits, machine: Optional["Machine"] = None):
    """First answer of ``goal`` as a substitution on its variables, or None.

    Same contract as :func:`slpkit.resolution.call_impure`.
    """
    from .terms import Substitution, goal_vars
    goal = tuple(goal)
    m = machine or Machine(slp, limits.max_depth, limits.occurs_check)
    env: dict = {}
    ok, _ = m.solve(Machine._push(goal, None), env, [], VarSupply.above(goal).next_id)
    if not ok:
        return None
    vs = goal_vars(goal)
    return Substitution({v: t for v in vs if (t := _full(v, env)) != v})


class Run:
    """Outcome of one machine run.

    ``answer`` is the answer term fully resolved through the final
    bindings (only meaningful for refutations).
    """

    __slots__ = ("status", "choices", "answer", "next_var", "psi_u", "iw")

    def __init__(self, status, choices, answer, next_var, psi_u=None, iw=None):
        self.status = status
        self.choices = choices
        self.answer = answer
        self.next_var = next_var
        self.psi_u = psi_u
        self.iw = iw


class Machine:
    def __init__(self, slp: SLP, max_depth: int = 1000, occurs_check: bool = True):
        self.slp = slp
        self.defs = slp.defs
        self.max_depth = max_depth
        self.oc = occurs_check
        self.limits = Limits(max_depth=max_depth, occurs_check=occurs_check)
        for c in slp.clauses():
            matcher(c)

    def _det(self, atom, env, trail, nv):
        """Run a deterministic call in place; returns (ok, next_var).

        Raises DepthExceeded when the search runs past the depth limit.
        """
        return self.solve((atom, None), env, trail, nv)

    def solve(self, link, env: dict, trail: list, nv: int):
        """First answer of a goal (a linked list of atoms) by depth-first search.

        Labels are ignored.  On success the answer's bindings are left in
        ``env``; on failure every binding made here has been undone.
        """
        defs, oc, maxd = self.defs, self.oc, self.max_depth
        push = self._push
        choices: list = []  # (atom, rest, depth, trail mark, clauses, next index)
        depth = 0
        base = len(trail)
        while True:
            if link is None:
                return True, nv
            if depth >= maxd:
                undo(env, trail, base)
                raise DepthExceeded(f"impure call exceeded depth {maxd}")
            a, rest = link
            k = _key(a)
            resumed = None
            if k == _UNIFY:
                mark = len(trail)
                if unify_env(a.args[0], a.args[1], env, trail, oc):
                    link, depth = rest, depth + 1
                    continue
                undo(env, trail, mark)
            elif k == _NOT:
                mark = len(trail)
                inner = push(_conjuncts(a.args[0], env), None)
                try:
                    ok, nv = self.solve(inner, env, trail, nv)
                except DepthExceeded:
                    undo(env, trail, base)
                    raise
                undo(env, trail, mark)
                if not ok:
                    link, depth = rest, depth + 1
                    continue
            elif k == _AND:
                link = push(_conjuncts(a, env), rest)
                continue
            else:
                d = defs.get(k)
                if d is not None:
                    resumed = (a, rest, depth, len(trail), d.clauses, 0)
            # try clauses for ``resumed``, else backtrack to the latest choice
            while True:
                if resumed is None:
                    if not choices:
                        return False, nv
                    resumed = choices.pop()
                a, rest, cdepth, mark, clauses, i = resumed
                resumed = None
                undo(env, trail, mark)
                args = a.args if type(a) is Struct else ()
                n = len(clauses)
                while i < n:
                    c = clauses[i]
                    i += 1
                    body = c._match(args, env, trail, nv, oc)
                    nv += len(c.variables)
                    if body is not None:
                        if i < n:
                            choices.append((a, rest, cdepth, mark, clauses, i))
                        link = push(body, rest) if body else rest
                        depth = cdepth + 1
                        break
                    undo(env, trail, mark)
                else:
                    continue
                break

    @staticmethod
    def _push(body, stack):
        for b in reversed(body):
            stack = (b, stack)
        return stack

    def loglinear(self, goal, ans: Term, start: int, random, budget: Optional[int] = None) -> Run:
        """Draw each input clause from the whole definition; stop at the first failure.

        ``budget`` overrides the step limit, for runs that continue a
        derivation part-way down.
        """
        defs, oc = self.defs, self.oc
        maxd = self.max_depth if budget is None else budget
        env: dict = {}
        trail: list = []  # never undone
        stack = self._push(goal, None)
        choices: list = []
        nv = start
        status = Status.REFUTED
        while stack is not None:
            if len(choices) >= maxd:
                status = Status.DEPTH
                break
            a, stack = stack
            d = defs.get(_key(a))
            if d is None or not d.labelled:
                try:
                    ok, nv = self._det(a, env, trail, nv)
                except DepthExceeded:
                    status = Status.DEPTH
                    break
                choices.append(None)
                if not ok:
                    status = Status.FAILED
                    break
                continue
            c = d.draw(random())
            choices.append(c)
            body = c._match(a.args if type(a) is Struct else (), env, trail, nv, oc)
            nv += len(c.variables)
            if body is None:
                status = Status.FAILED
                break
            if body:
                stack = self._push(body, stack)
        answer = _full(ans, env) if status is Status.REFUTED else None
        return Run(status, choices, answer, nv)

    def unif_constrained(self, goal, ans: Term, start: int, random) -> Run:
        """Draw only among clauses whose heads unify with the selected atom."""
        defs, oc, maxd = self.defs, self.oc, self.max_depth
        env: dict = {}
        trail: list = []
        stack = self._push(goal, None)
        choices: list = []
        nv = start
        psi_u = iw = 1.0
        status = Status.REFUTED
        while stack is not None:
            if len(choices) >= maxd:
                status = Status.DEPTH
                break
            a, stack = stack
            d = defs.get(_key(a))
            if d is None or not d.labelled:
                try:
                    ok, nv = self._det(a, env, trail, nv)
                except DepthExceeded:
                    status = Status.DEPTH
                    break
                choices.append(None)
                if not ok:
                    status = Status.FAILED
                    break
                continue
            # probe every clause, keeping each survivor's bindings so the
            # chosen one need not be matched twice
            args = a.args if type(a) is Struct else ()
            cands = []
            total = 0.0
            mark = len(trail)
            for c in d.clauses:
                body = c._match(args, env, trail, nv, oc)
                if body is not None:
                    cands.append((c, body, [(v, env[v]) for v in trail[mark:]]))
                    total += c.label
                undo(env, trail, mark)
            if total <= 0:
                status = Status.FAILED
                break
            u = random() * total
            acc = 0.0
            c, body, binds = cands[-1]
            for cand in cands:
                acc += cand[0].label
                if u < acc:
                    c, body, binds = cand
                    break
            choices.append(c)
            psi_u *= c.label / total
            iw *= total
            nv += len(c.variables)
            for v, t in binds:
                env[v] = t
                trail.append(v)
            if body:
                stack = self._push(body, stack)
        answer = _full(ans, env) if status is Status.REFUTED else None
        return Run(status, choices, answer, nv, psi_u, iw)

    def backtrackable(self, goal, ans: Term, start: int, random) -> Run:
        """Depth-first search with label-proportional clause order.

        A failure returns to the most recent choice point, removes the clause
        that was tried there and redraws among the survivors.
        """
        defs, oc, maxd = self.defs, self.oc, self.max_depth
        env: dict = {}
        trail: list = []
        frames: list = []  # (atom, rest of goal, trail mark, #choices, alternatives)
        choices: list = []
        nv = start

        def redraw():
            nonlocal nv
            while frames:
                a, rest, mark, k, alts = frames[-1]
                undo(env, trail, mark)
                del choices[k:]
                total = sum(c.label for c in alts)
                if total <= 0:
                    frames.pop()
                    continue
                u = random() * total
                acc = 0.0
                i = len(alts) - 1
                for j, cand in enumerate(alts):
                    acc += cand.label
                    if u < acc:
                        i = j
                        break
                c = alts.pop(i)
                body = c._match(a.args if type(a) is Struct else (), env, trail, nv, oc)
                nv += len(c.variables)
                if body is not None:
                    choices.append(c)
                    return self._push(body, rest) if body else rest, True
            return None, False

        stack = self._push(goal, None)
        status = Status.REFUTED
        while stack is not None:
            if len(choices) >= maxd:
                status = Status.DEPTH
                break
            a, rest = stack
            d = defs.get(_key(a))
            if d is None or not d.labelled:
                try:
                    ok, nv = self._det(a, env, trail, nv)
                except DepthExceeded:
                    status = Status.DEPTH
                    break
                if ok:
                    choices.append(None)
                    stack = rest
                    continue
                stack, alive = redraw()
                if not alive:
                    status = Status.FAILED
                    break
                continue
            frames.append((a, rest, len(trail), len(choices), list(d.clauses)))
            stack, alive = redraw()
            if not alive:
                status = Status.FAILED
                break
        answer = _full(ans, env) if status is Status.REFUTED else None
        return Run(status, choices, answer, nv)
