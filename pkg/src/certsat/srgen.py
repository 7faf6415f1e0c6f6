"""SR(n) paired formula generation.

Clauses are appended until the formula first becomes unsatisfiable; flipping
one literal of that last clause yields the satisfiable twin.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cnf import Clause, CnfFormula, satisfies
from .formats import emit_assignment, emit_dimacs, emit_trace
from .teacher import certify, solve, write_manifest


class GenerationStall(RuntimeError):
    pass


@dataclass(frozen=True)
class SrConfig:
    n_min: int = 10
    n_max: int = 40
    p_bernoulli: float = 0.7
    p_geometric: float = 0.4
    rng_seed: int = 0
    geometric_min: int = 1

    def __post_init__(self):
        if not 1 <= self.n_min <= self.n_max:
            raise ValueError("need 1 <= n_min <= n_max")
        if not 0.0 <= self.p_bernoulli <= 1.0:
            raise ValueError("p_bernoulli must lie in [0, 1]")
        if not 0.0 < self.p_geometric <= 1.0:
            raise ValueError("p_geometric must lie in (0, 1]")
        if self.geometric_min not in (0, 1):
            raise ValueError("geometric_min must be 0 or 1")


@dataclass
class SrPair:
    sat_formula: CnfFormula
    unsat_formula: CnfFormula
    flipped_literal: int

    @property
    def n(self) -> int:
        return self.unsat_formula.num_vars


def clause_size_mean(p_bernoulli: float = 0.7, p_geometric: float = 0.4, geometric_min: int = 1) -> float:
    """Unclamped mean clause width."""
    return 1.0 + p_bernoulli + (1.0 - p_geometric) / p_geometric + geometric_min


def sample_clause(n: int, rng: np.random.Generator, p_bernoulli: float = 0.7,
                  p_geometric: float = 0.4, geometric_min: int = 1) -> Clause:
    """Width ``1 + Bernoulli + Geometric`` clamped to ``n``, distinct variables.

    ``geometric_min=1`` counts trials (support 1, 2, ...), which gives
    NeuroSAT's widths of at least two; ``geometric_min=0`` counts failures.
    """
    k = 1 + int(rng.random() < p_bernoulli) + int(rng.geometric(p_geometric)) - 1 + geometric_min
    k = min(k, n)
    vs = rng.choice(n, size=k, replace=False) + 1
    signs = rng.random(k) < 0.5
    return Clause(int(v) if s else -int(v) for v, s in zip(vs, signs))


def generate_sr_pair(cfg: SrConfig, rng: np.random.Generator) -> SrPair:
    n = int(rng.integers(cfg.n_min, cfg.n_max + 1))
    clauses: list[Clause] = []
    seen: set[Clause] = set()
    model: dict[int, bool] | None = {v: True for v in range(1, n + 1)}
    while True:
        c = sample_clause(n, rng, cfg.p_bernoulli, cfg.p_geometric, cfg.geometric_min)
        if c in seen:
            continue
        if model is not None and satisfies(c, model):
            clauses.append(c)
            seen.add(c)
            continue
        res = solve(CnfFormula(n, tuple(clauses + [c])), log_proof=False)
        if res.sat:
            clauses.append(c)
            seen.add(c)
            model = res.assignment
            continue
        break
    unsat = CnfFormula(n, tuple(clauses + [c]))
    order = [int(i) for i in rng.permutation(len(c))]
    flips = [Clause([-l if j == i else l for j, l in enumerate(c)]) for i in order]
    # prefer flips that do not duplicate an earlier clause
    ranked = sorted(range(len(order)), key=lambda t: flips[t] in seen)
    for t in ranked:
        sat = CnfFormula(n, tuple(clauses + [flips[t]]))
        if solve(sat, log_proof=False).sat:
            return SrPair(sat, unsat, int(c[order[t]]))
    raise GenerationStall(f"no single-literal flip of {c!r} is satisfiable")


def pair_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(cfg: SrConfig, count: int, out_dir: str | Path, kinds: str = "both",
                     distribution: str | None = None) -> list[dict]:
    """Write ``count`` pairs as DIMACS files plus teacher certificates.

    ``kinds`` selects "both", "unsat" or "sat" members of each pair. Returns
    the manifest records, also written to ``<out_dir>/manifest.jsonl``.
    """
    if kinds not in ("both", "unsat", "sat"):
        raise ValueError(f"kinds must be both|unsat|sat, got {kinds!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dist = distribution or f"SR(U({cfg.n_min},{cfg.n_max}))"
    records: list[dict] = []
    for i in range(count):
        pair = generate_sr_pair(cfg, pair_rng(cfg.rng_seed, i))
        members = []
        if kinds in ("both", "unsat"):
            members.append(pair.unsat_formula)
        if kinds in ("both", "sat"):
            members.append(pair.sat_formula)
        for f in members:
            rid = f"f{len(records):04d}"
            res = solve(f)
            if not certify(f, res):
                raise RuntimeError(f"{rid}: teacher certificate failed its checker")
            (out / f"{rid}.cnf").write_text(emit_dimacs(f))
            rec = {"id": rid, "path": f"{rid}.cnf", "n": f.num_vars, "pair": i,
                   "distribution": dist, "verdict": res.verdict}
            if res.sat:
                (out / f"{rid}.assign").write_text(emit_assignment(res.assignment, f.num_vars))
                rec["certificate"] = f"{rid}.assign"
            else:
                (out / f"{rid}.trace").write_text(emit_trace(res.proof, f))
                rec["certificate"] = f"{rid}.trace"
                rec["proof_length"] = rec["teacher_length"] = len(res.proof)
                rec["reduction_depth"] = 0
            records.append(rec)
    write_manifest(out / "manifest.jsonl", records)
    return records

