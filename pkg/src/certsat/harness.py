"""Dual-track episode runner and evaluation metrics.

An episode embeds the formula, then alternates resolution steps chosen by the
policy with symbolic checks of both decoded assignment branches. It stops at
the empty clause (pruned and checked proof), at a checked satisfying
assignment, at saturation, or when the derivation budget runs out. No verdict
is reported without a certificate that passed its checker.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cnf import (
    Clause,
    CnfFormula,
    ResolutionProof,
    ResolutionStep,
    check_assignment,
    check_proof,
    oriented_step,
    prune_proof_dag,
)
from .embedder import FormulaGraph, build_graph, embed_formula, integrate_derived_clause
from .nn.params import ParameterStore
from .policy import PairChoice, Selector, classify_satisfiability, decode_assignment, decoder_logits
from .pool import ClausePool

log = logging.getLogger(__name__)

VERDICTS = ("SAT", "UNSAT", "SATURATED", "TIMEOUT")


@dataclass(frozen=True)
class Limits:
    max_steps: int
    sat_trials: int


@dataclass
class EpisodeConfig:
    variant: str = "full"
    mode: str = "dynamic"
    rounds: int = 16
    k: int = 1
    check_sat: bool = True
    # SAT-by-exhaustion needs a deduplicating, tautology-masking pool
    certify_saturation: bool = True

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass
class Episode:
    formula_id: str
    verdict: str = "TIMEOUT"
    certificate: ResolutionProof | dict | None = None
    steps: list[tuple[PairChoice, Clause]] = field(default_factory=list)
    candidates: list[tuple[str, dict[int, bool]]] = field(default_factory=list)
    branch: str | None = None
    derivations: int = 0
    model_calls: int = 0
    sat_trials: int = 0
    success_step: int | None = None
    short_passes: int = 0
    wall_time: float = 0.0

    @property
    def proof_length(self) -> int | None:
        if self.verdict == "UNSAT":
            return len(self.certificate)
        return None

    @property
    def solved(self) -> bool:
        return self.verdict in ("SAT", "UNSAT")


def apply_limits(f: CnfFormula, record: dict | None = None, ratio: int = 4,
                 flat_cap: int = 1000) -> Limits:
    """Derivation budget ratio x stored proof length (else ``flat_cap``); 2|V| sat trials."""
    length = (record or {}).get("proof_length")
    steps = ratio * int(length) if length else flat_cap
    return Limits(steps, 2 * f.num_vars)


def saturation_model(clauses, num_vars: int) -> dict[int, bool] | None:
    """Model of a resolution-saturated clause set without the empty clause.

    Variables are fixed in increasing order; a variable is forced only by a
    clause whose other literals (all on smaller variables) are already false.
    Saturation guarantees no two clauses force opposite values.
    """
    by_top: dict[int, list[Clause]] = {}
    for c in clauses:
        if c.empty:
            return None
        if not c.tautology:
            by_top.setdefault(max(abs(l) for l in c), []).append(c)
    a: dict[int, bool] = {}
    for v in range(1, num_vars + 1):
        forced = None
        for c in by_top.get(v, ()):
            if all(a[abs(l)] != (l > 0) for l in c if abs(l) != v):
                want = v in c
                if forced is not None and forced != want:
                    return None
                forced = want
        a[v] = bool(forced)
    return a


class _Runner:
    def __init__(self, f, store, cfg, limits, formula_id, rng):
        self.f, self.store, self.cfg, self.limits = f, store, cfg, limits
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.ep = Episode(formula_id)
        self.pool = ClausePool.from_formula(f)
        self.raw: list[ResolutionStep] = []
        self.model = cfg.variant != "random"
        self.graph: FormulaGraph | None = None
        self.state = None

    def try_sat(self) -> bool:
        if not (self.cfg.check_sat and self.model):
            return False
        ep = self.ep
        logits = None
        for branch in ("positive", "negative"):
            if ep.sat_trials >= self.limits.sat_trials:
                return False
            if logits is None:
                logits = decoder_logits(self.store, self.state).value
            a = decode_assignment(self.store, self.state, branch, logits=logits)
            ep.sat_trials += 1
            ep.candidates.append((branch, a))
            if check_assignment(self.f, a).valid:
                ep.verdict, ep.certificate, ep.branch = "SAT", a, branch
                ep.success_step = ep.derivations
                return True
        return False

    def candidates(self) -> list[PairChoice]:
        if self.model:
            return Selector(self.store, self.state, self.pool, self.cfg.variant).iter_cells()
        i, j = np.nonzero(np.triu(self.pool.valid, 1))
        pick = self.rng.permutation(len(i))
        return [PairChoice(int(i[t]) + 1, int(j[t]) + 1, self.pool.pivot(int(i[t]) + 1, int(j[t]) + 1), 0.0)
                for t in pick]

    def saturated(self) -> None:
        ep = self.ep
        ep.verdict = "SATURATED"
        if not self.cfg.certify_saturation:
            return
        a = saturation_model(self.pool.clauses, self.f.num_vars)
        if a is not None and check_assignment(self.f, a).valid:
            ep.verdict, ep.certificate, ep.branch = "SAT", a, "saturation"
            ep.success_step = ep.derivations
        else:
            log.warning("%s: saturated pool gave no model", ep.formula_id)

    def finish_unsat(self) -> None:
        ep = self.ep
        proof = prune_proof_dag(self.f, ResolutionProof(self.raw))
        report = check_proof(self.f, proof)
        if not report.valid:  # never expected; refuse the claim rather than report it
            log.error("%s: derived proof failed its check: %s", ep.formula_id, report.reason)
            ep.verdict = "TIMEOUT"
            return
        ep.verdict, ep.certificate = "UNSAT", proof
        ep.success_step = ep.derivations

    def run(self) -> Episode:
        ep, pool, cfg = self.ep, self.pool, self.cfg
        if any(c.empty for c in self.f.input_clauses):
            ep.verdict, ep.certificate = "UNSAT", ResolutionProof([])
            return ep
        if self.model:
            self.graph = build_graph(self.f)
            self.state = embed_formula(self.graph, self.store, cfg.rounds)
            ep.model_calls += 1
            if self.try_sat():
                return ep
        while ep.derivations < self.limits.max_steps:
            if not pool.has_valid_pair():
                self.saturated()
                return ep
            cands = self.candidates()
            ep.model_calls += 1
            new: list[Clause] = []
            for ch in cands:
                if ep.derivations >= self.limits.max_steps or len(new) == cfg.k:
                    break
                if not pool.valid[ch.c1 - 1, ch.c2 - 1]:
                    continue
                step = oriented_step(len(pool) + 1, ch.c1, ch.c2, pool.clause(ch.c1), pool.clause(ch.c2), ch.pivot)
                cid, added = pool.add(step.resolvent)
                assert added and cid == step.step_id
                self.raw.append(step)
                ep.steps.append((ch, step.resolvent))
                ep.derivations += 1
                new.append(step.resolvent)
                if step.resolvent.empty:
                    self.finish_unsat()
                    return ep
            if len(new) < cfg.k and ep.derivations < self.limits.max_steps:
                ep.short_passes += 1
            if self.model:
                for r in new:
                    self.graph.append(r)
                    integrate_derived_clause(self.state, self.graph, self.store, cfg.mode)
                if self.try_sat():
                    return ep
        ep.verdict = "TIMEOUT"
        return ep


def run_episode(f: CnfFormula, store: ParameterStore | None, cfg: EpisodeConfig | None = None,
                limits: Limits | None = None, formula_id: str = "",
                rng: np.random.Generator | None = None) -> Episode:
    """Run one solver episode. ``cfg.variant == "random"`` picks uniform valid pairs."""
    cfg = cfg or EpisodeConfig()
    limits = limits or apply_limits(f)
    t0 = time.perf_counter()
    ep = _Runner(f, store, cfg, limits, formula_id, rng).run()
    ep.wall_time = time.perf_counter() - t0
    return ep


# -- evaluation ---------------------------------------------------------------------

def _pct(num: int, den: int) -> float | None:
    return 100.0 * num / den if den else None


@dataclass
class DistributionReport:
    distribution: str
    n_sat: int = 0
    n_unsat: int = 0
    proven_sat: int = 0
    proven_unsat: int = 0
    predicted_correct: int = 0
    predicted_total: int = 0
    p_len: list[float] = field(default_factory=list)
    calls: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        n = self.n_sat + self.n_unsat
        return {
            "distribution": self.distribution,
            "proven_sat_pct": _pct(self.proven_sat, self.n_sat),
            "proven_unsat_pct": _pct(self.proven_unsat, self.n_unsat),
            "proven_total_pct": _pct(self.proven_sat + self.proven_unsat, n),
            "predicted_pct": _pct(self.predicted_correct, self.predicted_total),
            "mean_p_len": float(np.mean(self.p_len)) if self.p_len else None,
            "mean_model_calls": float(np.mean(self.calls)) if self.calls else None,
        }


@dataclass
class EvalReport:
    per_distribution: dict[str, DistributionReport]
    episodes: dict[str, Episode]
    reduction: object | None = None

    def summary(self) -> list[dict]:
        return [r.summary() for r in self.per_distribution.values()]


def evaluate(samples, store: ParameterStore | None, cfg: EpisodeConfig | None = None,
             classifier: ParameterStore | None = None, rng: np.random.Generator | None = None,
             limit_ratio: int = 4, flat_cap: int = 1000) -> EvalReport:
    """Run one episode per sample and aggregate per distribution.

    p-Len and normalised model calls are averaged over solved UNSAT records
    only, each relative to the record's original teacher proof length.
    """
    cfg = cfg or EpisodeConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    reports: dict[str, DistributionReport] = {}
    episodes: dict[str, Episode] = {}
    for s in samples:
        rec = s.record
        dist = rec.get("distribution", "all")
        r = reports.setdefault(dist, DistributionReport(dist))
        try:
            ep = run_episode(s.formula, store, cfg, apply_limits(s.formula, rec, limit_ratio, flat_cap),
                             rec.get("id", ""), rng)
        except Exception as exc:  # a crashing record counts as a timeout
            log.error("record %s failed: %s", rec.get("id"), exc)
            ep = Episode(rec.get("id", ""))
        episodes[rec.get("id", str(len(episodes)))] = ep
        if rec["verdict"] == "SAT":
            r.n_sat += 1
            r.proven_sat += ep.verdict == "SAT"
        else:
            r.n_unsat += 1
            if ep.verdict == "UNSAT":
                r.proven_unsat += 1
                teacher = rec.get("teacher_length") or rec.get("proof_length")
                if teacher:
                    r.p_len.append(ep.proof_length / teacher)
                    r.calls.append(ep.model_calls / teacher)
        if classifier is not None:
            g = build_graph(s.formula)
            state = embed_formula(g, classifier, cfg.rounds)
            pred = classify_satisfiability(classifier, state) >= 0.5
            r.predicted_total += 1
            r.predicted_correct += pred == (rec["verdict"] == "SAT")
    return EvalReport(reports, episodes)


# -- generalisation curves --------------------------------------------------------

CURVE_FIELDS = ("iteration", "distribution", "success_pct", "trial_success_pct")


def success_curve(episodes: list[Episode], budgets) -> list[tuple[int, float, float]]:
    """Cumulative SAT success by derivation budget and by sat-trial budget."""
    n = len(episodes)
    it = [e.success_step for e in episodes if e.verdict == "SAT"]
    tr = [e.sat_trials for e in episodes if e.verdict == "SAT"]
    return [(b, 100.0 * sum(s <= b for s in it) / n if n else 0.0,
             100.0 * sum(t <= b for t in tr) / n if n else 0.0) for b in budgets]


def generalization_curve(distributions: dict[str, list], store: ParameterStore, cfg: EpisodeConfig,
                         max_iterations: int = 1000, budgets=None, out_csv: str | Path | None = None,
                         rng: np.random.Generator | None = None) -> list[dict]:
    """SAT success rate against iteration budget for each distribution.

    ``distributions`` maps a label to formulas. Each formula runs once with
    ``max_iterations`` derivations and unlimited sat trials; the step at which
    an assignment was certified gives the whole curve. Budget 0 is first-try
    success from the initial embeddings.
    """
    budgets = list(budgets) if budgets is not None else list(range(0, max_iterations + 1, max(1, max_iterations // 50)))
    rows = []
    for label, formulas in distributions.items():
        eps = [run_episode(f, store, cfg, Limits(max_iterations, 2 * max_iterations + 2), f"{label}/{i}", rng)
               for i, f in enumerate(formulas)]
        for b, pct, tpct in success_curve(eps, budgets):
            rows.append({"iteration": b, "distribution": label, "success_pct": round(pct, 6),
                         "trial_success_pct": round(tpct, 6)})
    if out_csv is not None:
        with open(out_csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CURVE_FIELDS)
            w.writeheader()
            w.writerows(rows)
    return rows


def model_call_bound(ep: Episode, k: int) -> int:
    """Upper bound on forward passes: one initial embedding plus one per full batch.

    A pass whose ranked valid cells run out before ``k`` derivations (only in
    tiny pools) adds one more.
    """
    return math.ceil(ep.derivations / k) + 1 + ep.short_passes
