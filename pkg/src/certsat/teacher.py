"""Certificate-producing DPLL solver used as the training teacher.

Branching is deterministic: lowest unassigned variable, true first. With
proof logging on, every refuted subtree returns the id of a clause that is
falsified by the partial assignment at that node; the two branch clauses are
resolved on the decision variable and unit-propagated literals are resolved
away against their antecedents, so the root ends with the empty clause.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cnf import (
    Clause,
    CnfFormula,
    ResolutionProof,
    ResolutionStep,
    check_assignment,
    check_proof,
    prune_proof_dag,
    resolve,
)
from .formats import emit_assignment, emit_trace, parse_dimacs

log = logging.getLogger(__name__)


class ResourceLimit(RuntimeError):
    pass


@dataclass
class SolveStats:
    decisions: int = 0
    propagations: int = 0
    wall_time: float = 0.0


@dataclass
class SolveResult:
    verdict: str  # "SAT" | "UNSAT"
    assignment: dict[int, bool] | None = None
    proof: ResolutionProof | None = None
    stats: SolveStats = field(default_factory=SolveStats)

    @property
    def sat(self) -> bool:
        return self.verdict == "SAT"


class _Dpll:
    def __init__(self, f: CnfFormula, log_proof: bool, max_decisions: int | None):
        self.f = f
        self.log_proof = log_proof
        self.max_decisions = max_decisions
        self.m = f.num_vars
        self.clauses: list[Clause] = list(f.input_clauses)
        self.value: list[bool | None] = [None] * (self.m + 1)
        self.reason: list[int] = [0] * (self.m + 1)
        self.occurs: dict[int, list[int]] = {}
        for cid, c in enumerate(self.clauses, start=1):
            for l in c:
                self.occurs.setdefault(l, []).append(cid)
        self.trail: list[int] = []
        self.index: dict[Clause, int] = {}
        for cid, c in enumerate(self.clauses, start=1):
            self.index.setdefault(c, cid)
        self.steps: list[ResolutionStep] = []
        self.stats = SolveStats()

    # -- assignment -----------------------------------------------------
    def lit_value(self, l: int) -> bool | None:
        v = self.value[abs(l)]
        return None if v is None else (v == (l > 0))

    def assign(self, l: int, reason: int) -> None:
        self.value[abs(l)] = l > 0
        self.reason[abs(l)] = reason
        self.trail.append(l)

    def undo(self, mark: int) -> None:
        while len(self.trail) > mark:
            l = self.trail.pop()
            self.value[abs(l)] = None
            self.reason[abs(l)] = 0

    def clause_status(self, c: Clause) -> tuple[bool, int, int]:
        """(satisfied, unassigned count, last unassigned literal)."""
        free, last = 0, 0
        for l in c:
            val = self.lit_value(l)
            if val is True:
                return True, 0, 0
            if val is None:
                free += 1
                last = l
        return False, free, last

    def propagate(self, start: int) -> int:
        """Unit propagation from trail position ``start``; returns conflict id or 0."""
        i = start
        while i < len(self.trail):
            falsified = -self.trail[i]
            i += 1
            for cid in self.occurs.get(falsified, ()):
                sat, free, last = self.clause_status(self.clauses[cid - 1])
                if sat:
                    continue
                if free == 0:
                    return cid
                if free == 1:
                    self.stats.propagations += 1
                    self.assign(last, cid)
        return 0

    def initial_units(self) -> int:
        for cid, c in enumerate(self.clauses, start=1):
            if not c:
                return cid
        for cid, c in enumerate(self.clauses, start=1):
            sat, free, last = self.clause_status(c)
            if sat:
                continue
            if free == 0:
                return cid
            if free == 1:
                self.stats.propagations += 1
                self.assign(last, cid)
        return 0

    def pure_literals(self) -> list[int]:
        seen: set[int] = set()
        for c in self.clauses:
            sat, _, _ = self.clause_status(c)
            if sat:
                continue
            for l in c:
                if self.value[abs(l)] is None:
                    seen.add(l)
        return [l for l in seen if -l not in seen]

    # -- proof construction ---------------------------------------------
    def derive(self, ca: int, cb: int, pivot: int) -> int:
        a, b = self.clauses[ca - 1], self.clauses[cb - 1]
        if pivot not in a:
            ca, cb, a, b = cb, ca, b, a
        r = resolve(a, b, pivot)
        known = self.index.get(r)
        if known is not None:
            return known
        self.clauses.append(r)
        cid = len(self.clauses)
        self.index[r] = cid
        self.steps.append(ResolutionStep(cid, ca, cb, pivot, r))
        return cid

    def explain(self, cid: int, mark: int) -> int:
        """Resolve away literals implied on the trail above ``mark``."""
        for l in reversed(self.trail[mark:]):
            if self.reason[abs(l)] and -l in self.clauses[cid - 1]:
                cid = self.derive(self.reason[abs(l)], cid, abs(l))
        return cid

    # -- search ---------------------------------------------------------
    def all_satisfied(self) -> bool:
        return all(self.clause_status(c)[0] for c in self.f.input_clauses)

    def search(self, mark: int, conflict: int):
        """Returns ("SAT", None) or ("UNSAT", clause id falsified above ``mark``)."""
        if conflict:
            cid = self.explain(conflict, mark) if self.log_proof else conflict
            return "UNSAT", cid
        if not self.log_proof:
            for l in self.pure_literals():
                self.assign(l, 0)
        if self.all_satisfied():
            return "SAT", None
        x = next(v for v in range(1, self.m + 1) if self.value[v] is None)
        branch_clauses = []
        for lit in (x, -x):
            self.stats.decisions += 1
            if self.max_decisions is not None and self.stats.decisions > self.max_decisions:
                raise ResourceLimit(f"more than {self.max_decisions} decisions")
            child_mark = len(self.trail)
            self.assign(lit, 0)
            verdict, cid = self.search(child_mark, self.propagate(child_mark))
            if verdict == "SAT":
                return verdict, None
            self.undo(child_mark)
            if self.log_proof and -lit not in self.clauses[cid - 1]:
                # the decision played no part: the clause is already false here
                return "UNSAT", self.explain(cid, mark)
            branch_clauses.append(cid)
        if not self.log_proof:
            return "UNSAT", 0
        cid = self.derive(branch_clauses[1], branch_clauses[0], x)
        return "UNSAT", self.explain(cid, mark)

    def run(self):
        conflict = self.initial_units()
        if conflict == 0 and self.trail:
            conflict = self.propagate(0)
        return self.search(0, conflict)


def solve(f: CnfFormula, log_proof: bool = True, max_decisions: int | None = 1_000_000,
          prune: bool = True) -> SolveResult:
    """Decide ``f`` and return a certificate for the verdict.

    UNSAT proofs are deduplicated (a resolvent already in the pool reuses the
    existing id) and, by default, pruned to ancestors of the empty clause.
    """
    t0 = time.perf_counter()
    d = _Dpll(f, log_proof, max_decisions)
    verdict, cid = d.run()
    d.stats.wall_time = time.perf_counter() - t0
    if verdict == "SAT":
        a = {v: (d.value[v] if d.value[v] is not None else True) for v in range(1, f.num_vars + 1)}
        return SolveResult("SAT", assignment=a, stats=d.stats)
    if not log_proof:
        return SolveResult("UNSAT", stats=d.stats)
    proof = ResolutionProof(d.steps)
    if cid <= f.num_inputs:
        # an input clause is already empty
        proof = ResolutionProof([])
    elif prune:
        proof = prune_proof_dag(f, proof)
    return SolveResult("UNSAT", proof=proof, stats=d.stats)


def is_satisfiable(f: CnfFormula) -> bool:
    return solve(f, log_proof=False).sat


def certify(f: CnfFormula, result: SolveResult) -> bool:
    if result.sat:
        return check_assignment(f, result.assignment).valid
    return check_proof(f, result.proof).valid


def solve_batch(manifest_path: str | Path) -> list[dict]:
    """Solve every record of a dataset manifest, rewriting certificates.

    Records gain ``verdict``, ``certificate``, ``proof_length`` (UNSAT) and
    ``stats``. A record that fails is logged and marked with ``error``; the
    batch continues.
    """
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    records = read_manifest(manifest_path)
    for rec in records:
        try:
            f = parse_dimacs((root / rec["path"]).read_text())
            res = solve(f)
            if not certify(f, res):
                raise RuntimeError("certificate failed its checker")
            stem = Path(rec["path"]).with_suffix("")
            if res.sat:
                cert = stem.with_suffix(".assign")
                (root / cert).write_text(emit_assignment(res.assignment, f.num_vars))
                rec.pop("proof_length", None)
            else:
                cert = stem.with_suffix(".trace")
                (root / cert).write_text(emit_trace(res.proof, f))
                rec["proof_length"] = len(res.proof)
                rec.setdefault("teacher_length", len(res.proof))
            rec["verdict"] = res.verdict
            rec["certificate"] = str(cert)
            # wall time stays out of the manifest so reruns are byte-stable
            rec["stats"] = {"decisions": res.stats.decisions, "propagations": res.stats.propagations}
            rec.pop("error", None)
        except Exception as exc:  # per-record failure, keep going
            log.error("record %s failed: %s", rec.get("id"), exc)
            rec["error"] = str(exc)
    write_manifest(manifest_path, records)
    return records


def read_manifest(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text().splitlines() if line.strip()]


def write_manifest(path: str | Path, records: list[dict]) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
