"""Clauses, formulas, binary resolution and certificate checking.

Literals are nonzero signed ints: ``v`` is the positive literal of variable
``v`` and ``-v`` its negation. Clauses are kept in canonical order
(ascending variable, negative before positive) so equality and hashing are
structural.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence


class CnfError(Exception):
    """Base class for symbolic-core errors."""


class PivotAbsent(CnfError, ValueError):
    pass


class VarOutOfRange(CnfError, ValueError):
    pass


class NoEmptyClause(CnfError, ValueError):
    pass


def lit_key(lit: int) -> tuple[int, int]:
    return (abs(lit), lit > 0)


class Clause(tuple):
    """Immutable canonical clause. The empty clause is ``Clause()``."""

    __slots__ = ()

    def __new__(cls, lits: Iterable[int] = ()):
        lits = {int(l) for l in lits}
        if 0 in lits:
            raise ValueError("0 is not a literal")
        return super().__new__(cls, sorted(lits, key=lit_key))

    @property
    def tautology(self) -> bool:
        s = set(self)
        return any(-l in s for l in self)

    @property
    def empty(self) -> bool:
        return len(self) == 0

    def variables(self) -> set[int]:
        return {abs(l) for l in self}

    def __repr__(self) -> str:
        return "{" + ",".join(str(l) for l in self) + "}"


Assignment = dict  # variable -> bool


@dataclass
class CnfFormula:
    num_vars: int
    input_clauses: tuple[Clause, ...]
    derived_clauses: list[Clause] = field(default_factory=list)

    def __post_init__(self):
        self.input_clauses = tuple(Clause(c) for c in self.input_clauses)
        for c in self.input_clauses:
            self._check_bounds(c)

    @classmethod
    def from_lists(cls, clauses: Iterable[Iterable[int]], num_vars: int | None = None) -> "CnfFormula":
        clauses = [Clause(c) for c in clauses]
        if num_vars is None:
            num_vars = max((abs(l) for c in clauses for l in c), default=0)
        return cls(num_vars, tuple(clauses))

    def _check_bounds(self, c: Clause) -> None:
        for l in c:
            if abs(l) > self.num_vars:
                raise VarOutOfRange(f"literal {l} exceeds {self.num_vars} variables")

    @property
    def num_inputs(self) -> int:
        return len(self.input_clauses)

    def clause(self, cid: int) -> Clause:
        """Clause by 1-based id; derived clauses follow the inputs."""
        n = len(self.input_clauses)
        if 1 <= cid <= n:
            return self.input_clauses[cid - 1]
        if n < cid <= n + len(self.derived_clauses):
            return self.derived_clauses[cid - n - 1]
        raise KeyError(cid)

    def add_derived(self, c: Clause) -> int:
        c = Clause(c)
        self._check_bounds(c)
        self.derived_clauses.append(c)
        return len(self.input_clauses) + len(self.derived_clauses)

    def pool(self) -> list[Clause]:
        return list(self.input_clauses) + list(self.derived_clauses)

    def copy_inputs(self) -> "CnfFormula":
        """Fresh formula sharing the input clauses, with no derivations."""
        return CnfFormula(self.num_vars, self.input_clauses)


@dataclass(frozen=True)
class ResolutionStep:
    step_id: int
    parent_a: int
    parent_b: int
    pivot: int
    resolvent: Clause


@dataclass
class ResolutionProof:
    steps: list[ResolutionStep] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    @property
    def complete(self) -> bool:
        return bool(self.steps) and self.steps[-1].resolvent.empty


@dataclass(frozen=True)
class CheckReport:
    valid: bool
    failed_step: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.valid

    def to_json(self) -> str:
        return json.dumps({"valid": self.valid, "failed_step": self.failed_step, "reason": self.reason})


def resolve(a: Sequence[int], b: Sequence[int], pivot: int) -> Clause:
    """Resolve ``a`` (containing +pivot) with ``b`` (containing -pivot).

    The result may be a tautology; check ``Clause.tautology``.
    """
    if pivot <= 0 or pivot not in a or -pivot not in b:
        raise PivotAbsent(f"pivot {pivot} not positive in {a} and negative in {b}")
    return Clause([l for l in a if l != pivot] + [l for l in b if l != -pivot])


def resolvable_pivots(a: Iterable[int], b: Iterable[int]) -> list[int]:
    sb = set(b)
    return sorted({abs(l) for l in a if -l in sb})


def oriented_step(step_id: int, ca: int, cb: int, a: Clause, b: Clause, pivot: int) -> ResolutionStep:
    """Build a step, swapping parents so the pivot is positive in ``parent_a``."""
    if pivot in a and -pivot in b:
        return ResolutionStep(step_id, ca, cb, pivot, resolve(a, b, pivot))
    return ResolutionStep(step_id, cb, ca, pivot, resolve(b, a, pivot))


def check_proof(f: CnfFormula, p: ResolutionProof) -> CheckReport:
    """Replay ``p`` against the input clauses of ``f``.

    Step ids must continue consecutively from the last input id; parents must
    name earlier clauses; the stated resolvent must equal the recomputed one;
    the final resolvent must be empty.
    """
    pool: list[Clause] = list(f.input_clauses)
    if not p.steps:
        if any(c.empty for c in pool):
            return CheckReport(True)
        return CheckReport(False, None, "empty proof")
    for s in p.steps:
        expected_id = len(pool) + 1
        if s.step_id != expected_id:
            return CheckReport(False, s.step_id, f"step id {s.step_id}, expected {expected_id}")
        for parent in (s.parent_a, s.parent_b):
            if not 1 <= parent < s.step_id:
                return CheckReport(False, s.step_id, f"parent {parent} is not an earlier clause")
        a, b = pool[s.parent_a - 1], pool[s.parent_b - 1]
        if s.pivot <= 0 or s.pivot not in a or -s.pivot not in b:
            return CheckReport(False, s.step_id, f"pivot {s.pivot} not positive in parent_a and negative in parent_b")
        r = resolve(a, b, s.pivot)
        if r != Clause(s.resolvent):
            return CheckReport(False, s.step_id, f"resolvent {s.resolvent!r} differs from {r!r}")
        pool.append(r)
    if not pool[-1].empty:
        return CheckReport(False, p.steps[-1].step_id, "final resolvent is not empty")
    return CheckReport(True)


def check_assignment(f: CnfFormula, a: Mapping[int, bool]) -> CheckReport:
    """Every input clause must contain a literal made true by ``a``."""
    for v in range(1, f.num_vars + 1):
        if v not in a:
            return CheckReport(False, None, f"variable {v} unassigned")
    for cid, c in enumerate(f.input_clauses, start=1):
        if not any(a[abs(l)] == (l > 0) for l in c):
            return CheckReport(False, cid, f"clause {cid} unsatisfied")
    return CheckReport(True)


def satisfies(c: Iterable[int], a: Mapping[int, bool]) -> bool:
    return any(a.get(abs(l)) == (l > 0) for l in c)


def prune_proof_dag(f: CnfFormula, raw: ResolutionProof) -> ResolutionProof:
    """Keep only ancestors of the final empty-clause step, renumbered.

    One backward sweep marks ancestors and one forward sweep renumbers, so the
    cost is linear in the proof length.
    """
    if not raw.complete:
        raise NoEmptyClause("raw proof does not end in the empty clause")
    n = f.num_inputs
    by_id = {s.step_id: s for s in raw.steps}
    needed: set[int] = set()
    stack = [raw.steps[-1].step_id]
    while stack:
        sid = stack.pop()
        if sid in needed:
            continue
        needed.add(sid)
        s = by_id[sid]
        for parent in (s.parent_a, s.parent_b):
            if parent > n and parent not in needed:
                stack.append(parent)
    remap = {i: i for i in range(1, n + 1)}
    out: list[ResolutionStep] = []
    for s in raw.steps:
        if s.step_id not in needed:
            continue
        new_id = n + len(out) + 1
        remap[s.step_id] = new_id
        out.append(ResolutionStep(new_id, remap[s.parent_a], remap[s.parent_b], s.pivot, s.resolvent))
    return ResolutionProof(out)


def truth_table_satisfiable(f: CnfFormula) -> bool:
    """Exhaustive satisfiability check; only for small variable counts."""
    m = f.num_vars
    if m > 20:
        raise ValueError("truth table limited to 20 variables")
    clauses = [(sum(1 << (l - 1) for l in c if l > 0), sum(1 << (-l - 1) for l in c if l < 0))
               for c in f.input_clauses]
    full = (1 << m) - 1
    for bits in range(1 << m):
        neg = full & ~bits
        if all((p & bits) or (q & neg) for p, q in clauses):
            return True
    return False
