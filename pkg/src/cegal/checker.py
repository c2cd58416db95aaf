"""PCTL over DTMCs: formula AST, a small text parser, and numeric evaluation."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

from .dtmc import Dtmc, induce_dtmc
from .model import DecisionRule, MarkovGame

UNTIL_TOL = 1e-12
UNTIL_SWEEP_CAP = 10 ** 6

COMPARATORS = ("<=", "<", ">=", ">")


class CheckerError(ValueError):
    pass


class UnknownLabel(CheckerError, KeyError):
    pass


class UnsupportedSpecification(CheckerError):
    pass


class FixpointNotReached(CheckerError):
    def __init__(self, msg, last_iterate):
        super().__init__(msg)
        self.last_iterate = last_iterate


class FormulaSyntaxError(CheckerError):
    pass


# ---------------------------------------------------------------------------
# state formulas

@dataclass(frozen=True)
class TrueF:
    def __str__(self):
        return "true"


@dataclass(frozen=True)
class Atomic:
    name: str

    def __str__(self):
        return f'"{self.name}"'


@dataclass(frozen=True)
class Not:
    arg: "StateFormula"

    def __str__(self):
        return f"!({self.arg})"


@dataclass(frozen=True)
class And:
    left: "StateFormula"
    right: "StateFormula"

    def __str__(self):
        return f"({self.left} & {self.right})"


@dataclass(frozen=True)
class ProbOp:
    comparator: str
    bound: float
    path: "PathFormula"

    def __post_init__(self):
        if self.comparator not in COMPARATORS:
            raise CheckerError(f"unknown comparator {self.comparator!r}")
        if not 0.0 <= self.bound <= 1.0:
            raise CheckerError(f"probability bound {self.bound} outside [0, 1]")

    def holds(self, prob: float) -> bool:
        return {"<=": prob <= self.bound, "<": prob < self.bound,
                ">=": prob >= self.bound, ">": prob > self.bound}[self.comparator]

    def __str__(self):
        return f"P{self.comparator}{self.bound!r} [ {self.path} ]"


# ---------------------------------------------------------------------------
# path formulas

@dataclass(frozen=True)
class Next:
    arg: "StateFormula"

    def __str__(self):
        return f"X {self.arg}"


@dataclass(frozen=True)
class BoundedUntil:
    left: "StateFormula"
    right: "StateFormula"
    hops: int

    def __post_init__(self):
        if self.hops < 0:
            raise CheckerError("hop bound must be >= 0")

    def __str__(self):
        return f"{self.left} U<={self.hops} {self.right}"


@dataclass(frozen=True)
class Until:
    left: "StateFormula"
    right: "StateFormula"

    def __str__(self):
        return f"{self.left} U {self.right}"


StateFormula = Union[TrueF, Atomic, Not, And, ProbOp]
PathFormula = Union[Next, BoundedUntil, Until]


def unsafe_reach(bound: float, hops: int, label: str = "unsafe") -> ProbOp:
    """P<=bound [ true U<=hops "label" ]"""
    return ProbOp("<=", bound, BoundedUntil(TrueF(), Atomic(label), hops))


# ---------------------------------------------------------------------------
# parser
#
#   state  := conj ( '|' conj )*           (a | b  ==  !(!a & !b))
#   conj   := unary ( '&' unary )*
#   unary  := '!' unary | atom
#   atom   := 'true' | 'false' | '"' label '"' | '(' state ')'
#           | 'P' cmp number '[' path ']'
#   path   := 'X' state | state 'U' ( '<=' int )? state

_TOKEN = re.compile(r'\s*(?:(<=|>=|<|>)|("[^"]*")|([A-Za-z_][A-Za-z_0-9]*)'
                    r'|(\d+(?:\.\d*)?(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?)|(.))')


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            break
        tok = next(g for g in m.groups() if g is not None)
        tokens.append(tok)
        pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expected=None):
        tok = self.peek()
        if tok is None or (expected is not None and tok != expected):
            raise FormulaSyntaxError(f"expected {expected or 'token'}, got {tok!r} at token {self.i}")
        self.i += 1
        return tok

    def state(self):
        left = self.conj()
        while self.peek() == "|":
            self.take()
            left = Not(And(Not(left), Not(self.conj())))
        return left

    def conj(self):
        left = self.unary()
        while self.peek() == "&":
            self.take()
            left = And(left, self.unary())
        return left

    def unary(self):
        if self.peek() == "!":
            self.take()
            return Not(self.unary())
        return self.atom()

    def atom(self):
        tok = self.peek()
        if tok == "true":
            self.take()
            return TrueF()
        if tok == "false":
            self.take()
            return Not(TrueF())
        if tok is not None and tok.startswith('"'):
            self.take()
            return Atomic(tok[1:-1])
        if tok == "(":
            self.take()
            f = self.state()
            self.take(")")
            return f
        if tok == "P":
            self.take()
            cmp = self.take()
            if cmp not in COMPARATORS:
                raise FormulaSyntaxError(f"bad comparator {cmp!r}")
            bound = float(self.take())
            self.take("[")
            path = self.path()
            self.take("]")
            return ProbOp(cmp, bound, path)
        raise FormulaSyntaxError(f"unexpected token {tok!r}")

    def path(self):
        if self.peek() == "X":
            self.take()
            return Next(self.state())
        left = self.state()
        self.take("U")
        if self.peek() == "<=":
            self.take()
            hops = self.take()
            if not hops.isdigit():
                raise FormulaSyntaxError(f"hop bound must be a non-negative integer, got {hops!r}")
            return BoundedUntil(left, self.state(), int(hops))
        return Until(left, self.state())


def parse_formula(text: str) -> StateFormula:
    """Parse e.g. ``P<=0.25 [ true U<=4096 "unsafe" ]``; whitespace-insensitive."""
    p = _Parser(text)
    f = p.state()
    if p.peek() is not None:
        raise FormulaSyntaxError(f"trailing input at {p.peek()!r}")
    return f


# ---------------------------------------------------------------------------
# evaluation

def sat_mask(dtmc: Dtmc, phi: StateFormula) -> np.ndarray:
    n = dtmc.n_states
    if isinstance(phi, TrueF):
        return np.ones(n, dtype=bool)
    if isinstance(phi, Atomic):
        if phi.name not in dtmc.labels:
            raise UnknownLabel(phi.name)
        return dtmc.label_mask(phi.name)
    if isinstance(phi, Not):
        return ~sat_mask(dtmc, phi.arg)
    if isinstance(phi, And):
        return sat_mask(dtmc, phi.left) & sat_mask(dtmc, phi.right)
    if isinstance(phi, ProbOp):
        probs = path_probabilities(dtmc, phi.path)
        return np.array([phi.holds(p) for p in probs], dtype=bool)
    raise CheckerError(f"not a state formula: {phi!r}")


def eval_state_set(dtmc: Dtmc, phi: StateFormula) -> frozenset:
    return frozenset(np.flatnonzero(sat_mask(dtmc, phi)).tolist())


def bounded_until_vector(dtmc: Dtmc, left: np.ndarray, right: np.ndarray, hops: int) -> np.ndarray:
    """x_h over all states for left U<=hops right, given satisfaction masks."""
    x = right.astype(float)
    free = left & ~right
    P = dtmc.P
    for _ in range(hops):
        nxt = np.where(free, P @ x, x)
        if np.array_equal(nxt, x):
            break
        x = nxt
    return x


def until_vector(dtmc: Dtmc, left: np.ndarray, right: np.ndarray,
                 tol: float = UNTIL_TOL, max_sweeps: int = UNTIL_SWEEP_CAP) -> np.ndarray:
    x = right.astype(float)
    free = left & ~right
    P = dtmc.P
    for _ in range(max_sweeps):
        nxt = np.where(free, P @ x, x)
        if np.max(np.abs(nxt - x), initial=0.0) < tol:
            return nxt
        x = nxt
    raise FixpointNotReached(f"until iteration did not settle within {max_sweeps} sweeps", x)


def path_probabilities(dtmc: Dtmc, psi: PathFormula) -> np.ndarray:
    if isinstance(psi, Next):
        return np.asarray(dtmc.P @ sat_mask(dtmc, psi.arg).astype(float)).ravel()
    if isinstance(psi, BoundedUntil):
        return bounded_until_vector(dtmc, sat_mask(dtmc, psi.left), sat_mask(dtmc, psi.right), psi.hops)
    if isinstance(psi, Until):
        return until_vector(dtmc, sat_mask(dtmc, psi.left), sat_mask(dtmc, psi.right))
    raise CheckerError(f"not a path formula: {psi!r}")


def path_probability(dtmc: Dtmc, psi: PathFormula, state: int | None = None) -> float:
    state = dtmc.initial_state if state is None else state
    return float(path_probabilities(dtmc, psi)[state])


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    satisfied: bool
    probability: float

    @property
    def status(self) -> str:
        return "Satisfy" if self.satisfied else "Unsatisfy"

    def __str__(self):
        return f"{self.status} (probability {self.probability!r})"


def check_dtmc(dtmc: Dtmc, phi: StateFormula) -> Verdict:
    if not isinstance(phi, ProbOp) or phi.comparator not in ("<=", "<"):
        raise UnsupportedSpecification(
            "only upper-bounded probability formulas (P<= / P<) are supported at top level")
    prob = path_probability(dtmc, phi.path, dtmc.initial_state)
    return Verdict(phi.holds(prob), prob)


def verify(game: MarkovGame, rule: DecisionRule, phi: StateFormula) -> Verdict:
    return check_dtmc(induce_dtmc(game, rule), phi)


def agent_marginals(dtmc: Dtmc, psi: BoundedUntil | Until, n_agents: int,
                    prefix: str = "unsafe_") -> list[float]:
    """Per-agent reach probabilities: psi's target label swapped for
    ``prefix + str(i)`` for each agent i."""
    out = []
    for i in range(n_agents):
        target = Atomic(f"{prefix}{i}")
        swapped = (BoundedUntil(psi.left, target, psi.hops) if isinstance(psi, BoundedUntil)
                   else Until(psi.left, target))
        out.append(path_probability(dtmc, swapped))
    return out
