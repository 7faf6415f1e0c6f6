"""Desk-scale acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also collected in
the terminal summary). Criteria 6 to 9 share one trained model.
"""

import dataclasses
import math
import time

import numpy as np
import pytest

from certsat.cnf import Clause, CnfFormula, check_assignment, check_proof, prune_proof_dag, resolve, truth_table_satisfiable
from certsat.dataset import load_samples
from certsat.embedder import FormulaGraph, build_graph, embed_formula, integrate_derived_clause, message_reachability
from certsat.nn.gradcheck import grad_check
from certsat.policy import VARIANTS, NoValidPair, Selector, build_model, count_parameters, register_selector, top_k_candidates
from certsat.pool import ClausePool
from certsat.srgen import SrConfig, generate_dataset, generate_sr_pair, pair_rng
from certsat.teacher import solve
from certsat.training import TrainConfig, bootstrap_train, reduction_stats, resolution_loss, sat_loss, teacher_force_episode, teacher_forced_accuracy, train
from certsat.harness import EpisodeConfig, evaluate
from certsat.dataset import Sample

pytestmark = pytest.mark.slow

SR_5_10 = SrConfig(n_min=5, n_max=10, rng_seed=0)
OVERFIT = TrainConfig(d=32, rounds=8, epochs=200, lr0=5e-3, mode="dynamic", variant="full")


def resolve_choice(pool, ch):
    a, b = pool.clause(ch.c1), pool.clause(ch.c2)
    return resolve(a, b, ch.pivot) if ch.pivot in a and -ch.pivot in b else resolve(b, a, ch.pivot)


# -- 1 ---------------------------------------------------------------------------

def test_c01_certificate_soundness(criterion):
    t0 = time.perf_counter()
    failures = 0
    for i in range(500):
        pair = generate_sr_pair(SR_5_10, pair_rng(SR_5_10.rng_seed, i))
        u, s = solve(pair.unsat_formula), solve(pair.sat_formula)
        failures += u.verdict != "UNSAT" or not check_proof(pair.unsat_formula, u.proof)
        failures += s.verdict != "SAT" or not check_assignment(pair.sat_formula, s.assignment)
    dt = time.perf_counter() - t0
    criterion(1, failures == 0 and dt < 120, f"1000 certificates, {failures} failures, {dt:.1f}s (< 120s)")


# -- 2 ---------------------------------------------------------------------------

def test_c02_teacher_matches_truth_table(criterion):
    rng = np.random.default_rng(2)
    disagree = 0
    for _ in range(500):
        n = int(rng.integers(1, 13))
        clauses = []
        for _ in range(int(rng.integers(1, 5 * n + 2))):
            k = int(rng.integers(1, min(n, 4) + 1))
            vs = rng.choice(n, k, replace=False) + 1
            clauses.append((vs * rng.choice([-1, 1], k)).tolist())
        f = CnfFormula.from_lists(clauses, n)
        disagree += (solve(f).verdict == "SAT") != truth_table_satisfiable(f)
    criterion(2, disagree == 0, f"500 formulas, {disagree} disagreements")


# -- 3 ---------------------------------------------------------------------------

def test_c03_loss_closed_forms(criterion):
    res = resolution_loss([0.5, 0.5], 0.99)
    sat = sat_loss([[0.5, 0.5]], [1, 0], 0.99)
    e_res = abs(res - math.log(2) * 1.99 / 2)
    e_sat = abs(sat - math.log(2))
    criterion(3, e_res < 1e-6 and e_sat < 1e-6,
              f"resolution loss {res:.6f} vs (ln 2)(1.99/2) err {e_res:.1e}; sat loss {sat:.6f} vs ln 2 err {e_sat:.1e}")


# -- 4 ---------------------------------------------------------------------------

def test_c04_gradient_fidelity(criterion):
    pair = generate_sr_pair(SrConfig(n_min=5, n_max=5, rng_seed=0), pair_rng(0, 0))
    f = pair.unsat_formula
    sample = Sample({"verdict": "UNSAT"}, f, proof=solve(f).proof)
    worst, where, refined, floor = 0.0, "", 0, 0.0
    for variant in VARIANTS:
        for mode in ("static", "dynamic"):
            cfg = TrainConfig(d=8, rounds=2, variant=variant, mode=mode)
            store = build_model(8, variant, seed=1)

            def closure():
                r = teacher_force_episode(sample, store, cfg)
                return r.loss, r.grads

            rep = grad_check(closure, store.values, max_per_param=6, rng=np.random.default_rng(0),
                             refine=True, floor=None)
            refined += rep.refined
            floor = max(floor, rep.floor)
            if rep.max_rel_error >= worst:
                worst, where = rep.max_rel_error, f"{variant}/{mode} {rep.worst}"
    criterion(4, worst < 1e-4, f"max relative error {worst:.2e} (< 1e-4) at {where}; "
                               f"{refined} kink-refined entries, floor {floor:.1e}")


# -- 5 ---------------------------------------------------------------------------

def test_c05_parameter_counts(criterion):
    store = build_model(128, "full")
    full, dec = count_parameters(store, "full"), count_parameters(store, "decoder")
    criterion(5, full == 32_768 and dec == 16_512, f"full selector {full}, decoder {dec}")


# -- shared overfit model ------------------------------------------------------------

@pytest.fixture(scope="module")
def overfit(tmp_path_factory):
    root = tmp_path_factory.mktemp("overfit")
    generate_dataset(SR_5_10, 50, root, kinds="unsat")
    manifest = root / "manifest.jsonl"
    samples = load_samples(manifest)
    t0 = time.perf_counter()
    res = train(samples, OVERFIT, stop=lambda e: e.accuracy >= 0.995)
    return {"manifest": manifest, "store": res.store, "seconds": time.perf_counter() - t0,
            "epochs": len(res.epochs)}


def test_c06_overfit(criterion, overfit):
    samples = load_samples(overfit["manifest"])
    t0 = time.perf_counter()
    acc = teacher_forced_accuracy(samples, overfit["store"], OVERFIT)
    rep = evaluate(samples, overfit["store"], OVERFIT.episode_config(1), rng=np.random.default_rng(0))
    proven = rep.summary()[0]["proven_unsat_pct"]
    total = overfit["seconds"] + time.perf_counter() - t0
    ok = acc >= 0.95 and proven >= 90.0 and total < 1800 and overfit["epochs"] <= 200
    criterion(6, ok, f"teacher-forced acc {100 * acc:.1f}% (>= 95), autoregressive {proven:.1f}% (>= 90), "
                     f"{overfit['epochs']} epochs, {total:.0f}s (< 1800)")


def test_c07_beats_random(criterion, overfit, tmp_path):
    generate_dataset(dataclasses.replace(SR_5_10, rng_seed=1), 100, tmp_path, kinds="unsat")
    held = load_samples(tmp_path / "manifest.jsonl")
    cfg = OVERFIT.episode_config(1)
    model = evaluate(held, overfit["store"], cfg, rng=np.random.default_rng(0)).summary()[0]
    rand = evaluate(held, None, dataclasses.replace(cfg, variant="random"),
                    rng=np.random.default_rng(0)).summary()[0]
    gap = model["proven_unsat_pct"] - rand["proven_unsat_pct"]
    criterion(7, gap >= 20.0, f"model {model['proven_unsat_pct']:.1f}% vs random "
                              f"{rand['proven_unsat_pct']:.1f}%, gap {gap:.1f} pp (>= 20)")


def test_c08_bootstrap_monotone(criterion, overfit):
    samples = load_samples(overfit["manifest"])
    totals = [reduction_stats(samples).total_steps]
    _, series = bootstrap_train(samples, OVERFIT, passes=3, epochs_per_pass=0, store=overfit["store"])
    totals += [s.total_steps for s in series]
    monotone = all(b <= a for a, b in zip(totals, totals[1:]))
    valid = all(check_proof(s.formula, s.proof).valid for s in samples)
    shortened = sum(int(s.record.get("reduction_depth", 0)) > 0 for s in samples)
    criterion(8, monotone and valid and shortened >= 1,
              f"stored steps per pass {totals}, all proofs valid={valid}, {shortened} proofs shortened")


def test_c09_top_k(criterion, overfit):
    samples = load_samples(overfit["manifest"])
    runs, invalid = {}, 0
    for k in (1, 3, 5):
        cfg = OVERFIT.episode_config(k)
        rep = evaluate(samples, overfit["store"], cfg, rng=np.random.default_rng(0))
        for s in samples:
            ep = rep.episodes[s.id]
            if ep.verdict == "UNSAT":
                invalid += not check_proof(s.formula, prune_proof_dag(s.formula, ep.certificate)).valid
        runs[k] = rep
    calls_ok = all(runs[3].episodes[s.id].model_calls <= runs[1].episodes[s.id].model_calls for s in samples)
    p1, p3 = runs[1].summary()[0]["mean_p_len"], runs[3].summary()[0]["mean_p_len"]
    plen_ok = p1 is not None and p3 is not None and p3 <= p1
    criterion(9, invalid == 0 and calls_ok and plen_ok,
              f"{invalid} invalid proofs, per-instance calls k=3 <= k=1: {calls_ok}, "
              f"p-Len k=1 {p1}, k=3 {p3}")


# -- 10 --------------------------------------------------------------------------

def _anchored_grids_connected(pool: ClausePool, g: FormulaGraph, trace) -> int:
    """Number of anchored grids in which no member relates to every other member."""
    rel = message_reachability(g, trace)
    bad = 0
    for v in pool.valid_anchors():
        members = np.union1d(pool.with_literal(int(v)), pool.with_literal(-int(v)))
        sub = rel[np.ix_(members, members)]
        bad += not sub.all(axis=1).any()
    return bad


def test_c10_anchored_grids_connected(criterion):
    rng = np.random.default_rng(10)
    store = build_model(8, "anch", seed=3)
    violations, grids = 0, 0
    for ep in range(50):
        pair = generate_sr_pair(SrConfig(n_min=4, n_max=8, rng_seed=10), pair_rng(10, ep))
        for mode in ("static", "dynamic"):
            pool = ClausePool.from_formula(pair.unsat_formula)
            g = FormulaGraph(pool.num_vars, [pool.clause(i) for i in range(1, len(pool) + 1)])
            state = embed_formula(g, store, 2)
            for _ in range(20):
                if not pool.has_valid_pair():
                    break
                violations += _anchored_grids_connected(pool, g, state.trace)
                grids += len(pool.valid_anchors())
                r, c = np.nonzero(pool.valid)
                j = int(rng.integers(len(r)))
                ch_pivot = pool.pivot(int(r[j]) + 1, int(c[j]) + 1)
                a, b = pool.clause(int(r[j]) + 1), pool.clause(int(c[j]) + 1)
                res = resolve(a, b, ch_pivot) if ch_pivot in a else resolve(b, a, ch_pivot)
                pool.add(res)
                if res.empty:
                    break
                g.append(res)
                integrate_derived_clause(state, g, store, mode)
    criterion(10, violations == 0 and grids > 0, f"{grids} anchored grids over 100 episodes, {violations} violations")


# -- 11 --------------------------------------------------------------------------

def _connected(f: CnfFormula) -> bool:
    seen, frontier = {1}, [1]
    adj: dict[int, set[int]] = {}
    for c in f.input_clauses:
        vs = c.variables()
        for v in vs:
            adj.setdefault(v, set()).update(vs)
    while frontier:
        for w in adj.get(frontier.pop(), ()):
            if w not in seen:
                seen.add(w)
                frontier.append(w)
    return len(seen) == f.num_vars


def test_c11_round_bound(criterion):
    rng = np.random.default_rng(11)
    d = 32
    store = build_model(d, "full", seed=4)
    formulas, i = [], 0
    while len(formulas) < 20:
        pair = generate_sr_pair(SrConfig(n_min=3, n_max=8, rng_seed=11), pair_rng(11, i))
        i += 1
        f = pair.sat_formula if i % 2 else pair.unsat_formula
        if _connected(f):
            formulas.append(f)
    missed = 0
    for f in formulas:
        g = build_graph(f)
        n_l, n_c = g.num_literal_nodes, g.num_clause_nodes
        L0, C0 = rng.normal(size=(n_l, d)), rng.normal(size=(n_c, d))
        rounds = f.num_vars + 1
        base = embed_formula(g, store, rounds, init=(L0, C0))
        for node in range(n_l + n_c):
            L1, C1 = L0.copy(), C0.copy()
            (L1[node] if node < n_l else C1[node - n_l])[:] += 1e-3
            moved = embed_formula(g, store, rounds, init=(L1, C1))
            missed += int((moved.E_L.value == base.E_L.value).all(axis=1).sum())
            missed += int((moved.E_C.value == base.E_C.value).all(axis=1).sum())
    criterion(11, missed == 0, f"20 formulas, |V| <= 8, every node perturbed, {missed} uninfluenced nodes")


# -- 12 --------------------------------------------------------------------------

def test_c12_mask_soundness(criterion):
    rng = np.random.default_rng(12)
    store = build_model(4, "full", seed=0)
    register_selector(store, "casc", 4)
    register_selector(store, "anch", 4)
    invalid = checked = 0
    for _ in range(10_000):
        n = int(rng.integers(2, 7))
        cls = {Clause((rng.choice(n, k, replace=False) + 1) * rng.choice([-1, 1], k))
               for k in rng.integers(1, 4, size=int(rng.integers(2, 9))) if k <= n}
        pool = ClausePool(n, sorted(cls))
        for _ in range(int(rng.integers(0, 3))):
            if not pool.has_valid_pair():
                break
            r, c = np.nonzero(pool.valid)
            j = int(rng.integers(len(r)))
            p = pool.pivot(int(r[j]) + 1, int(c[j]) + 1)
            a, b = pool.clause(int(r[j]) + 1), pool.clause(int(c[j]) + 1)
            pool.add(resolve(a, b, p) if p in a else resolve(b, a, p))
        scale = float(rng.choice([0.1, 1.0, 10.0]))
        for name, v in store.values.items():
            store.values[name] = rng.normal(0, scale, v.shape)
        g = FormulaGraph(n, list(pool.clauses))
        state = embed_formula(g, store, 1)
        for variant in VARIANTS:
            sel = Selector(store, state, pool, variant)
            if not pool.has_valid_pair():
                with pytest.raises(NoValidPair):
                    sel.choose()
                continue
            for ch in [sel.choose()] + top_k_candidates(store, state, pool, 3, variant):
                checked += 1
                ok = ch.c1 != ch.c2 and bool(pool.valid[ch.c1 - 1, ch.c2 - 1]) and ch.pivot == pool.pivot(ch.c1, ch.c2)
                if ok:
                    res = resolve_choice(pool, ch)
                    ok = not res.tautology and res not in pool
                invalid += not ok
    criterion(12, invalid == 0, f"10000 draws, {checked} choices checked across {len(VARIANTS)} variants, "
                                f"{invalid} invalid")
