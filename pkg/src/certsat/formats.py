"""DIMACS CNF, TRACECHECK-style resolution traces and assignment files."""

from __future__ import annotations

from typing import Mapping

from .cnf import (
    Clause,
    CnfError,
    CnfFormula,
    ResolutionProof,
    ResolutionStep,
    VarOutOfRange,
    resolvable_pivots,
    resolve,
)


class ParseError(CnfError, SyntaxError, ValueError):
    """Malformed input; ``line`` is the 1-based line number when known."""

    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = self.lineno = line


class DanglingParent(CnfError, ValueError):
    def __init__(self, msg: str, line: int | None = None):
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


def parse_dimacs(text: str) -> CnfFormula:
    num_vars = num_clauses = None
    clauses: list[Clause] = []
    current: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("c") or line.startswith("%"):
            continue
        if line.startswith("p"):
            parts = line.split()
            if len(parts) != 4 or parts[1] != "cnf":
                raise ParseError(f"bad header {line!r}", lineno)
            try:
                num_vars, num_clauses = int(parts[2]), int(parts[3])
            except ValueError:
                raise ParseError(f"bad header {line!r}", lineno) from None
            continue
        if num_vars is None:
            raise ParseError("clause before header", lineno)
        for tok in line.split():
            try:
                lit = int(tok)
            except ValueError:
                raise ParseError(f"bad literal {tok!r}", lineno) from None
            if lit == 0:
                clauses.append(Clause(current))
                current = []
            elif abs(lit) > num_vars:
                raise VarOutOfRange(f"line {lineno}: literal {lit} exceeds {num_vars} variables")
            else:
                current.append(lit)
    if num_vars is None:
        raise ParseError("missing 'p cnf' header")
    if current:
        raise ParseError("unterminated clause")
    if num_clauses is not None and len(clauses) != num_clauses:
        raise ParseError(f"header declares {num_clauses} clauses, found {len(clauses)}")
    return CnfFormula(num_vars, tuple(clauses))


def emit_dimacs(f: CnfFormula) -> str:
    lines = [f"p cnf {f.num_vars} {f.num_inputs}"]
    lines += [" ".join(map(str, c)) + (" 0" if c else "0") for c in f.input_clauses]
    return "\n".join(lines) + "\n"


def _ints(tokens: list[str], lineno: int) -> list[int]:
    try:
        return [int(t) for t in tokens]
    except ValueError:
        raise ParseError("non-integer token", lineno) from None


def parse_trace(text: str, formula: CnfFormula | None = None) -> ResolutionProof:
    """Parse ``<id> <lit...> 0 <parent...> 0`` lines into binary steps.

    Lines with no parents are input clauses and take ids 1..n in order of
    appearance. A line with parents p1..pk is expanded left to right: the
    running clause is resolved with each next parent on their clashing
    variable, each link becoming one binary step with a fresh id. If
    ``formula`` is given, listed input clauses must match its inputs.
    """
    ids: dict[int, int] = {}
    pool: list[Clause] = []
    steps: list[ResolutionStep] = []
    n_inputs = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split()
        if not tokens or tokens[0] == "c":
            continue
        nums = _ints(tokens, lineno)
        if len(nums) < 3 or nums.count(0) < 2 or nums[-1] != 0:
            raise ParseError("expected '<id> <lit...> 0 <parent...> 0'", lineno)
        tid = nums[0]
        z = nums.index(0, 1)
        lits, parents = nums[1:z], nums[z + 1:-1]
        if 0 in parents:
            raise ParseError("stray 0 in parent list", lineno)
        if tid in ids:
            raise ParseError(f"duplicate id {tid}", lineno)
        stated = Clause(lits)
        if not parents:
            if steps:
                raise ParseError("input clause after derived clauses", lineno)
            n_inputs += 1
            if formula is not None:
                if n_inputs > formula.num_inputs or formula.input_clauses[n_inputs - 1] != stated:
                    raise ParseError(f"input clause {tid} does not match formula", lineno)
            pool.append(stated)
            ids[tid] = len(pool)
            continue
        if len(parents) < 2:
            raise ParseError("derived clause needs at least two parents", lineno)
        for p in parents:
            if p not in ids:
                raise DanglingParent(f"parent {p} undefined", lineno)
        cur_id = ids[parents[0]]
        cur = pool[cur_id - 1]
        for i, p in enumerate(parents[1:], start=1):
            pid = ids[p]
            other = pool[pid - 1]
            pivots = resolvable_pivots(cur, other)
            if not pivots:
                raise ParseError(f"parents {parents[i - 1]} and {p} do not clash", lineno)
            pivot = pivots[0]
            if i == len(parents) - 1 and len(pivots) > 1:
                for v in pivots:
                    a, b = (cur, other) if v in cur and -v in other else (other, cur)
                    if resolve(a, b, v) == stated:
                        pivot = v
                        break
            if pivot in cur and -pivot in other:
                step_a, step_b, r = cur_id, pid, resolve(cur, other, pivot)
            else:
                step_a, step_b, r = pid, cur_id, resolve(other, cur, pivot)
            pool.append(r)
            cur_id, cur = len(pool), r
            steps.append(ResolutionStep(cur_id, step_a, step_b, pivot, r))
        if cur != stated:
            raise ParseError(f"chain yields {cur!r}, line states {stated!r}", lineno)
        ids[tid] = cur_id
    if formula is not None and n_inputs != formula.num_inputs:
        raise ParseError(f"trace lists {n_inputs} inputs, formula has {formula.num_inputs}")
    return ResolutionProof(steps)


def emit_trace(p: ResolutionProof, f: CnfFormula) -> str:
    lines = []
    for cid, c in enumerate(f.input_clauses, start=1):
        lines.append(" ".join(map(str, [cid, *c, 0, 0])))
    for s in p.steps:
        lines.append(" ".join(map(str, [s.step_id, *s.resolvent, 0, s.parent_a, s.parent_b, 0])))
    return "\n".join(lines) + "\n"


def emit_assignment(a: Mapping[int, bool], num_vars: int) -> str:
    return "".join(f"v{v} {int(bool(a[v]))}\n" for v in range(1, num_vars + 1))


def parse_assignment(text: str) -> dict[int, bool]:
    out: dict[int, bool] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts:
            continue
        if len(parts) != 2 or not parts[0].startswith("v") or parts[1] not in ("0", "1"):
            raise ParseError(f"expected 'v<id> 0|1', got {raw!r}", lineno)
        try:
            v = int(parts[0][1:])
        except ValueError:
            raise ParseError(f"bad variable {parts[0]!r}", lineno) from None
        out[v] = parts[1] == "1"
    return out
