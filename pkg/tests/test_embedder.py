import numpy as np
import pytest

from certsat.cnf import Clause, CnfFormula
from certsat.embedder import (
    FormulaGraph,
    build_graph,
    embed_formula,
    integrate_derived_clause,
    lit_node,
    message_reachability,
    node_lit,
)
from certsat.nn import Tape
from certsat.nn import autodiff as ad
from certsat.policy import build_model, count_parameters

FIG7 = CnfFormula.from_lists([[1, 2], [1, -2], [-1, -2]])


def test_literal_node_layout():
    assert [lit_node(l) for l in (1, -1, 2, -2)] == [0, 1, 2, 3]
    assert all(node_lit(lit_node(l)) == l for l in (3, -3, 7, -1))


def test_fig7_graph():
    g = build_graph(FIG7)
    assert g.num_literal_nodes == 4 and g.num_clause_nodes == 3
    assert len(g.membership_edges()) == 6
    assert g.complement_edges() == [(0, 1), (2, 3)]
    lit_deg, clause_deg = g.degrees()
    assert lit_deg.tolist() == [2, 1, 1, 2]
    assert clause_deg.tolist() == [2, 2, 2]


def test_unit_clause_graph():
    g = build_graph(CnfFormula.from_lists([[1]]))
    assert (g.num_literal_nodes, g.num_clause_nodes) == (2, 1)
    assert g.membership_edges() == [(0, 0)]
    assert len(g.complement_edges()) == 1


def test_graph_append_grows():
    g = FormulaGraph(2, capacity=1)
    for c in ([1], [-1, 2], [2], [-2]):
        g.append(c)
    assert g.incidence.shape == (4, 4)
    assert g.members(1).tolist() == [1, 2]
    assert g.clause_vars(1) == {1, 2}


def test_embedder_parameter_count():
    # d=128: two d-vectors, two 3-layer d->d MLPs with bias, two layer-norm LSTMs
    store = build_model(128, "full")
    d = 128
    mlp = 3 * (d * d + d)
    lstm = lambda i: (i + d) * 4 * d + 4 * d + 4 * d + 2 * d
    assert count_parameters(store, "embedder") == 2 * d + 2 * mlp + lstm(d) + lstm(2 * d) == 429_568


@pytest.fixture(scope="module")
def store():
    return build_model(8, "full", seed=3)


def test_rounds_must_be_positive(store):
    with pytest.raises(ValueError):
        embed_formula(build_graph(FIG7), store, 0)


def test_one_round_moves_states(store):
    s = embed_formula(build_graph(FIG7), store, 1)
    assert s.rounds == 1 and s.trace == [("round", 3)]
    assert not np.allclose(s.E_C.value, store.values["embedder/C_init"])
    assert not np.allclose(s.E_L.value, store.values["embedder/L_init"])
    assert s.E_L.shape == (4, 8) and s.E_C.shape == (3, 8)


def test_equivariance(store):
    rng = np.random.default_rng(0)
    f = CnfFormula.from_lists([[1, -2, 3], [-1, 4], [2, -3, -4], [1, 2], [-4, 3]])
    perm = rng.permutation(4) + 1  # old variable v becomes perm[v-1]
    order = rng.permutation(f.num_inputs)
    ren = lambda l: int(np.sign(l) * perm[abs(l) - 1])
    g2 = CnfFormula.from_lists([[ren(l) for l in f.input_clauses[i]] for i in order], 4)
    s1 = embed_formula(build_graph(f), store, 4)
    s2 = embed_formula(build_graph(g2), store, 4)
    np.testing.assert_allclose(s2.E_C.value, s1.E_C.value[order], atol=1e-9)
    rows = [lit_node(ren(node_lit(n))) for n in range(8)]
    np.testing.assert_allclose(s2.E_L.value[rows], s1.E_L.value, atol=1e-9)


def test_influence_reaches_everything():
    store = build_model(8, "full", seed=1)
    f = CnfFormula.from_lists([[1, 2], [-2, 3], [-3, 4], [-4, -1]])
    g = build_graph(f)
    rng = np.random.default_rng(2)
    L0, C0 = rng.normal(size=(8, 8)), rng.normal(size=(4, 8))
    base = embed_formula(g, store, f.num_vars + 1, init=(L0, C0))
    L1 = L0.copy()
    L1[0] += 1e-3
    moved = embed_formula(g, store, f.num_vars + 1, init=(L1, C0))
    assert np.all(np.any(moved.E_L.value != base.E_L.value, axis=1))
    assert np.all(np.any(moved.E_C.value != base.E_C.value, axis=1))


def _grow(f, mode, store, new):
    g = build_graph(f)
    s = embed_formula(g, store, 2)
    before = s.E_C.value.copy(), s.E_L.value.copy()
    g.append(new)
    integrate_derived_clause(s, g, store, mode)
    return g, s, before


def test_static_keeps_old_clause_rows(store):
    g, s, (c0, l0) = _grow(FIG7, "static", store, Clause([1]))
    np.testing.assert_array_equal(s.E_C.value[:3], c0)
    assert not np.array_equal(s.E_C.value[3], store.values["embedder/C_init"])
    # only literal rows of the new clause move
    changed = np.flatnonzero(np.any(s.E_L.value != l0, axis=1))
    assert changed.tolist() == [lit_node(1)]
    assert s.trace[-1] == ("local", 3)


def test_dynamic_updates_old_rows(store):
    g, s, (c0, _) = _grow(FIG7, "dynamic", store, Clause([1]))
    assert s.E_C.shape == (4, 8)
    assert np.any(s.E_C.value[:3] != c0)
    assert s.trace[-1] == ("round", 4)


def test_duplicate_clause_dynamic(store):
    _, s, _ = _grow(FIG7, "dynamic", store, Clause([1, 2]))
    assert np.all(np.isfinite(s.E_C.value)) and np.all(np.isfinite(s.E_L.value))


def test_integrate_rejects_bad_input(store):
    g = build_graph(FIG7)
    s = embed_formula(g, store, 1)
    with pytest.raises(ValueError):
        integrate_derived_clause(s, g, store, "dynamic")  # nothing appended
    g.append([1])
    with pytest.raises(ValueError):
        integrate_derived_clause(s, g, store, "sideways")


def test_gradient_reaches_initial_vectors(store):
    with Tape() as tape:
        s = embed_formula(build_graph(FIG7), store, 3)
        loss = ad.sum_all(ad.mul(s.E_C, s.E_C))
        tape.backward(loss)
    grads = tape.leaf_grads()
    assert np.linalg.norm(grads["embedder/L_init"]) > 0
    assert np.linalg.norm(grads["embedder/C_init"]) > 0


# -- reachability -------------------------------------------------------------

def test_reachability_inputs():
    f = CnfFormula.from_lists([[1, 2], [2, 3], [4], [-4, 5]])
    g = build_graph(f)
    rel = message_reachability(g, [("round", 4)])
    expected = np.array([[1, 1, 0, 0], [1, 1, 0, 0], [0, 0, 1, 1], [0, 0, 1, 1]], dtype=bool)
    np.testing.assert_array_equal(rel, expected)


def test_reachability_static_derivation():
    f = CnfFormula.from_lists([[1, 2], [-2, 3], [3, 4]])
    g = build_graph(f)
    g.append([1, 3])
    trace = [("round", 3), ("local", 3)]
    rel = message_reachability(g, trace)
    # the derived clause hears from every clause sharing variable 1 or 3
    assert rel[3].tolist() == [True, True, True, True]
    before = message_reachability(g, trace, upto=1)
    assert before.shape == (3, 3)


def test_reachability_rejects_unknown_event():
    with pytest.raises(ValueError):
        message_reachability(build_graph(FIG7), [("teleport", 0)])
