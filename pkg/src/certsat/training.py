"""Losses, teacher forcing, the training loop and bootstrapped proof reduction.

UNSAT episodes impose the teacher's pair at every step and maximise its
likelihood under the selector (softmax over valid cells only), with step t of
T weighted gamma^(T-t). SAT episodes let the model derive greedily for a few
steps and fit the positive-literal decoder to the teacher assignment at each
step, with the same discounting.
"""

from __future__ import annotations

import contextlib
import csv
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .cnf import CheckReport, ResolutionProof, check_proof, prune_proof_dag, resolve
from .dataset import Sample, store_proof
from .embedder import MODES, build_graph, embed_formula, integrate_derived_clause, lit_node
from .harness import Episode, EpisodeConfig, apply_limits, run_episode
from .nn import autodiff as ad
from .nn.autodiff import Tape, Tensor
from .nn.params import ParameterStore, adam_step, clip_gradients, lr_schedule
from .policy import VARIANTS, Selector, build_model, classifier_logit, decoder_logits, register_classifier
from .pool import ClausePool

log = logging.getLogger(__name__)

TRAIN_LOG_FIELDS = ("epoch", "episode", "loss", "lr", "grad_norm")
STATS_FIELDS = ("pass", "max_depth", "avg_depth", "max_reduction_pct", "avg_reduction_pct",
                "proofs_reduced_pct", "total_reduction_pct", "total_steps")


class TeacherStepInvalid(RuntimeError):
    pass


class BootstrapInvariantError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    d: int = 32
    rounds: int = 16
    epochs: int = 50
    lr0: float = 5e-5
    gamma: float = 0.99
    clip_norm: float = 0.5
    mode: str = "dynamic"
    variant: str = "full"
    sat_step_cap: int = 16
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if self.lr0 <= 0:
            raise ValueError("lr0 must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")

    def episode_config(self, k: int = 1) -> EpisodeConfig:
        return EpisodeConfig(variant=self.variant, mode=self.mode, rounds=self.rounds, k=k)


# -- losses ----------------------------------------------------------------------

def discount_weights(T: int, gamma: float) -> np.ndarray:
    """gamma^(T-t) for t = 1..T, so the last step has weight 1."""
    return gamma ** (T - np.arange(1, T + 1, dtype=np.float64))


def resolution_loss(step_probs, gamma: float) -> float:
    """-(1/T) sum_t gamma^(T-t) log p_t."""
    p = np.asarray(step_probs, dtype=np.float64)
    if p.size == 0:
        raise ValueError("need at least one step")
    return float(-(discount_weights(p.size, gamma) * np.log(p)).sum() / p.size)


def sat_loss(outputs, target, gamma: float) -> float:
    """(1/T) sum_t gamma^(T-t) (1/|V|) sum_v BCE(out_t(v), target(v)).

    ``outputs`` is T x |V| sigmoid outputs, ``target`` the 0/1 teacher values.
    """
    out = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    t = np.asarray(target, dtype=np.float64).reshape(1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        bce = -(np.where(t > 0, np.log(out), 0.0) + np.where(t > 0, 0.0, np.log1p(-out)))
    per_step = bce.mean(axis=1)
    T = out.shape[0]
    return float((discount_weights(T, gamma) * per_step).sum() / T)


def resolution_loss_tensor(log_probs: list[Tensor], gamma: float) -> Tensor:
    T = len(log_probs)
    return ad.scale(ad.dot_const(ad.stack(log_probs), discount_weights(T, gamma)), -1.0 / T)


def sat_loss_tensor(step_logits: list[Tensor], target: np.ndarray, gamma: float) -> Tensor:
    T = len(step_logits)
    m = len(target)
    per = ad.stack([ad.bce_logits_sum(z, target) for z in step_logits])
    return ad.scale(ad.dot_const(per, discount_weights(T, gamma)), 1.0 / (T * m))


# -- teacher forcing ------------------------------------------------------------------

@dataclass
class EpisodeLoss:
    loss: float
    grads: dict[str, np.ndarray] | None
    steps: int
    correct: int


def _check_teacher_step(pool: ClausePool, step, sid: str) -> None:
    a, b = step.parent_a, step.parent_b
    n = len(pool)
    if not (1 <= a <= n and 1 <= b <= n) or a == b:
        raise TeacherStepInvalid(f"{sid}: step {step.step_id} names parents ({a}, {b}) outside the pool")
    if not pool.valid[a - 1, b - 1]:
        raise TeacherStepInvalid(f"{sid}: step {step.step_id} pair ({a}, {b}) is masked")
    if pool.pivot(a, b) != step.pivot:
        raise TeacherStepInvalid(f"{sid}: step {step.step_id} pivot {step.pivot} != {pool.pivot(a, b)}")


def teacher_force_episode(sample: Sample, store: ParameterStore, cfg: TrainConfig,
                          grad: bool = True) -> EpisodeLoss:
    """Loss (and gradients) of one record under teacher forcing."""
    f = sample.formula
    ctx = Tape() if grad else contextlib.nullcontext()
    with ctx as tape:
        pool = ClausePool.from_formula(f)
        g = build_graph(f)
        state = embed_formula(g, store, cfg.rounds)
        correct = 0
        if sample.unsat:
            if sample.proof is None or not sample.proof.steps:
                raise TeacherStepInvalid(f"{sample.id}: no teacher proof")
            lps = []
            for step in sample.proof.steps:
                _check_teacher_step(pool, step, sample.id)
                sel = Selector(store, state, pool, cfg.variant)
                lps.append(sel.log_prob(step.parent_a, step.parent_b))
                ch = sel.choose()
                correct += {ch.c1, ch.c2} == {step.parent_a, step.parent_b}
                r = resolve(pool.clause(step.parent_a), pool.clause(step.parent_b), step.pivot)
                cid, added = pool.add(r)
                if not added or cid != step.step_id or r != step.resolvent:
                    raise TeacherStepInvalid(f"{sample.id}: step {step.step_id} does not replay")
                if r.empty:
                    break
                g.append(r)
                integrate_derived_clause(state, g, store, cfg.mode)
            loss = resolution_loss_tensor(lps, cfg.gamma)
            steps = len(lps)
        else:
            if sample.assignment is None:
                raise TeacherStepInvalid(f"{sample.id}: no teacher assignment")
            target = np.array([1.0 if sample.assignment[v] else 0.0 for v in range(1, f.num_vars + 1)])
            pos = np.array([lit_node(v) for v in range(1, f.num_vars + 1)])
            logits = []
            for _ in range(min(f.num_vars, cfg.sat_step_cap)):
                if not pool.has_valid_pair():
                    break
                ch = Selector(store, state, pool, cfg.variant).choose()
                a, b = pool.clause(ch.c1), pool.clause(ch.c2)
                r = resolve(a, b, ch.pivot) if ch.pivot in a and -ch.pivot in b else resolve(b, a, ch.pivot)
                pool.add(r)
                g.append(r)
                integrate_derived_clause(state, g, store, cfg.mode)
                logits.append(ad.take(decoder_logits(store, state), pos))
            if not logits:
                logits.append(ad.take(decoder_logits(store, state), pos))
            loss = sat_loss_tensor(logits, target, cfg.gamma)
            steps = len(logits)
        grads = None
        if grad:
            tape.backward(loss)
            grads = tape.leaf_grads()
    return EpisodeLoss(loss.item(), grads, steps, correct)


def teacher_forced_accuracy(samples: list[Sample], store: ParameterStore, cfg: TrainConfig) -> float:
    """Fraction of teacher steps where the model's top-1 pair is the teacher's."""
    hit = total = 0
    for s in samples:
        if s.unsat:
            r = teacher_force_episode(s, store, cfg, grad=False)
            hit += r.correct
            total += r.steps
    return hit / total if total else 0.0


# -- training loop ------------------------------------------------------------------

@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    accuracy: float


@dataclass
class TrainResult:
    store: ParameterStore
    log: list[dict] = field(default_factory=list)
    epochs: list[EpochStats] = field(default_factory=list)


def train(samples: list[Sample], cfg: TrainConfig, store: ParameterStore | None = None,
          log_path: str | Path | None = None,
          stop: Callable[[EpochStats], bool] | None = None) -> TrainResult:
    """Batch-size-1 Adam over shuffled records with clipping and linear lr decay.

    The schedule reaches zero on the last update. ``stop`` sees each epoch's
    running statistics (loss and teacher-forced accuracy measured during the
    epoch) and may end training early.
    """
    store = store if store is not None else build_model(cfg.d, cfg.variant, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    total = cfg.epochs * len(samples)
    res = TrainResult(store)
    step = 0
    for epoch in range(cfg.epochs):
        losses, hit, seen = [], 0, 0
        for idx in rng.permutation(len(samples)):
            ep = teacher_force_episode(samples[idx], store, cfg)
            grads, norm = clip_gradients(ep.grads, cfg.clip_norm)
            lr = lr_schedule(step, max(total - 1, 1), cfg.lr0)
            adam_step(store, grads, lr)
            step += 1
            losses.append(ep.loss)
            if samples[idx].unsat:
                hit += ep.correct
                seen += ep.steps
            res.log.append({"epoch": epoch, "episode": int(idx), "loss": ep.loss, "lr": lr, "grad_norm": norm})
        stats = EpochStats(epoch, float(np.mean(losses)) if losses else 0.0, hit / seen if seen else 0.0)
        res.epochs.append(stats)
        log.info("epoch %d loss %.4f acc %.3f", epoch, stats.mean_loss, stats.accuracy)
        if stop is not None and stop(stats):
            break
    if log_path is not None:
        write_csv(log_path, TRAIN_LOG_FIELDS, res.log)
    return res


def train_classifier(samples: list[Sample], store: ParameterStore, cfg: TrainConfig,
                     epochs: int = 10, lr: float = 1e-3) -> ParameterStore:
    """Fit the vote head on SAT/UNSAT labels with every other parameter frozen."""
    if "classifier/W0" not in store.values:
        register_classifier(store, cfg.d)
    store.frozen = {n for n in store.values if not n.startswith("classifier/")}
    rng = np.random.default_rng(cfg.seed)
    try:
        for _ in range(epochs):
            for idx in rng.permutation(len(samples)):
                s = samples[idx]
                with Tape() as tape:
                    state = embed_formula(build_graph(s.formula), store, cfg.rounds)
                    z = ad.reshape(classifier_logit(store, state), (1,))
                    loss = ad.bce_logits_sum(z, [0.0 if s.unsat else 1.0])
                    tape.backward(loss)
                grads, _ = clip_gradients(tape.leaf_grads(), cfg.clip_norm)
                adam_step(store, grads, lr)
    finally:
        store.frozen = set()
    return store


# -- bootstrapping -------------------------------------------------------------------

@dataclass
class ReductionStats:
    depths: list[int]
    reductions: list[float]
    proofs_reduced_pct: float
    total_reduction_pct: float
    total_steps: int

    @property
    def reduced(self) -> list[int]:
        return [i for i, d in enumerate(self.depths) if d > 0]

    def row(self, pass_no: int = 0) -> dict:
        red = self.reduced
        dep = [self.depths[i] for i in red]
        pct = [self.reductions[i] for i in red]
        return {"pass": pass_no,
                "max_depth": max(dep, default=0), "avg_depth": round(float(np.mean(dep)), 4) if dep else 0.0,
                "max_reduction_pct": round(max(pct, default=0.0), 4),
                "avg_reduction_pct": round(float(np.mean(pct)), 4) if pct else 0.0,
                "proofs_reduced_pct": round(self.proofs_reduced_pct, 4),
                "total_reduction_pct": round(self.total_reduction_pct, 4),
                "total_steps": self.total_steps}

    def format(self) -> str:
        r = self.row()
        return "\n".join([
            f"Reduction Depth       max: {r['max_depth']}, avg: {r['avg_depth']:.1f}",
            f"Proof Reduction (%)   max: {r['max_reduction_pct']:.2f}, avg: {r['avg_reduction_pct']:.2f}",
            f"Proofs Reduced (%)    {r['proofs_reduced_pct']:.2f}",
            f"Total Reduction (%)   {r['total_reduction_pct']:.2f}",
        ])


def reduction_stats(samples: list[Sample]) -> ReductionStats:
    """Table-style reduction metrics over UNSAT records (depth/% over reduced ones)."""
    depths, reds, cur, orig = [], [], 0, 0
    for s in samples:
        if not s.unsat:
            continue
        t = int(s.record.get("teacher_length") or len(s.proof))
        p = int(s.record.get("proof_length") or len(s.proof))
        depths.append(int(s.record.get("reduction_depth", 0)))
        reds.append(100.0 * (1 - p / t) if t else 0.0)
        cur += p
        orig += t
    n = len(depths)
    return ReductionStats(depths, reds, 100.0 * sum(d > 0 for d in depths) / n if n else 0.0,
                          100.0 * (1 - cur / orig) if orig else 0.0, cur)


def bootstrap_pass(samples: list[Sample], store: ParameterStore, cfg: TrainConfig,
                   root: str | Path | None = None,
                   roll: Callable[[Sample], Episode] | None = None) -> ReductionStats:
    """Replace stored proofs by strictly shorter verified model proofs.

    Each UNSAT record is rolled with model actions only under the 4x budget.
    ``roll`` can be injected (it must return an Episode). A shorter candidate
    that fails its check aborts the pass with BootstrapInvariantError.
    """
    ep_cfg = EpisodeConfig(variant=cfg.variant, mode=cfg.mode, rounds=cfg.rounds, check_sat=False)
    if roll is None:
        def roll(s: Sample) -> Episode:
            return run_episode(s.formula, store, ep_cfg, apply_limits(s.formula, s.record), s.id)
    for s in samples:
        if not s.unsat:
            continue
        ep = roll(s)
        if ep.verdict != "UNSAT" or not isinstance(ep.certificate, ResolutionProof):
            continue
        stored = int(s.record.get("proof_length") or len(s.proof))
        try:
            proof = prune_proof_dag(s.formula, ep.certificate)
            report = check_proof(s.formula, proof)
        except Exception as exc:
            report = CheckReport(False, None, str(exc))
            proof = ep.certificate
        if len(proof) >= stored:
            continue
        if not report.valid:
            raise BootstrapInvariantError(f"{s.id}: replacement proof rejected: {report.reason}")
        if root is not None:
            store_proof(root, s, proof)
        else:
            s.proof = proof
            s.record["proof_length"] = len(proof)
        s.record.setdefault("teacher_length", stored)
        s.record["reduction_depth"] = int(s.record.get("reduction_depth", 0)) + 1
    return reduction_stats(samples)


def bootstrap_train(samples: list[Sample], cfg: TrainConfig, passes: int, epochs_per_pass: int,
                    store: ParameterStore | None = None, root: str | Path | None = None,
                    stats_csv: str | Path | None = None) -> tuple[ParameterStore, list[ReductionStats]]:
    """Alternate training epochs and bootstrap passes; per-pass stats."""
    series = []
    for p in range(passes):
        if epochs_per_pass > 0:
            sub = TrainConfig(**{**asdict(cfg), "epochs": epochs_per_pass, "seed": cfg.seed + p})
            store = train(samples, sub, store).store
        elif store is None:
            store = build_model(cfg.d, cfg.variant, cfg.seed)
        series.append(bootstrap_pass(samples, store, cfg, root))
    if stats_csv is not None:
        write_csv(stats_csv, STATS_FIELDS, [s.row(i + 1) for i, s in enumerate(series)])
    return store, series


def write_csv(path: str | Path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(fields))
        w.writeheader()
        w.writerows(rows)
