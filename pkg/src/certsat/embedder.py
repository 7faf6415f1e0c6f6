"""Literal/clause formula graph and recurrent message-passing embeddings.

Literal nodes are ordered by (variable, polarity) with the positive literal
first, so literal ``l`` lives at row ``2(|l|-1) + (l < 0)`` and its
complement at that row xor 1. Clause nodes follow pool order and are
append-only.

A round has two phases. Clause states are updated by an LSTM from the sum of
messages of their member literals; literal states are then updated from the
sum of messages of their (freshly updated) clauses concatenated with the
complement literal's previous state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnf import Clause, CnfFormula
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.params import ParameterStore, lstm_cell_step, mlp_forward

SCOPE = "embedder"
MODES = ("static", "dynamic")


def lit_node(lit: int) -> int:
    return 2 * (abs(lit) - 1) + (1 if lit < 0 else 0)


def node_lit(node: int) -> int:
    v = node // 2 + 1
    return -v if node % 2 else v


class FormulaGraph:
    """Bipartite clause/literal membership graph plus complement pairs."""

    def __init__(self, num_vars: int, clauses=(), capacity: int = 32):
        self.num_vars = num_vars
        self.clauses: list[Clause] = []
        self.flip = np.arange(2 * num_vars) ^ 1
        self._inc = np.zeros((max(capacity, len(clauses)), 2 * num_vars))
        self._members: list[np.ndarray] = []
        for c in clauses:
            self.append(c)

    @property
    def num_literal_nodes(self) -> int:
        return 2 * self.num_vars

    @property
    def num_clause_nodes(self) -> int:
        return len(self.clauses)

    @property
    def incidence(self) -> np.ndarray:
        """Clause x literal 0/1 membership matrix (a view, rows = clause nodes)."""
        return self._inc[:len(self.clauses)]

    def members(self, i: int) -> np.ndarray:
        """Literal node indices of clause node ``i``."""
        return self._members[i]

    def clause_vars(self, i: int) -> set[int]:
        return self.clauses[i].variables()

    def append(self, c) -> int:
        """Add a clause node; returns its 0-based index."""
        c = Clause(c)
        k = len(self.clauses)
        if k == self._inc.shape[0]:
            grown = np.zeros((2 * k + 1, self._inc.shape[1]))
            grown[:k] = self._inc
            self._inc = grown
        nodes = np.array(sorted(lit_node(l) for l in c), dtype=np.int64)
        self._inc[k, nodes] = 1.0
        self._members.append(nodes)
        self.clauses.append(c)
        return k

    def membership_edges(self) -> list[tuple[int, int]]:
        return [(i, int(n)) for i, nodes in enumerate(self._members) for n in nodes]

    def complement_edges(self) -> list[tuple[int, int]]:
        return [(2 * v, 2 * v + 1) for v in range(self.num_vars)]

    def degrees(self) -> tuple[np.ndarray, np.ndarray]:
        """Membership degrees of (literal nodes, clause nodes)."""
        inc = self.incidence
        return inc.sum(axis=0).astype(np.int64), inc.sum(axis=1).astype(np.int64)


def build_graph(f: CnfFormula) -> FormulaGraph:
    return FormulaGraph(f.num_vars, f.pool(), capacity=2 * f.num_inputs + 16)


@dataclass
class EmbeddingState:
    L_h: Tensor
    L_c: Tensor
    C_h: Tensor
    C_c: Tensor
    rounds: int = 0
    trace: list[tuple[str, int]] = field(default_factory=list)

    @property
    def E_L(self) -> Tensor:
        return self.L_h

    @property
    def E_C(self) -> Tensor:
        return self.C_h

    @property
    def d(self) -> int:
        return self.L_h.shape[1]


def register_embedder(store: ParameterStore, d: int) -> None:
    s = 1.0 / np.sqrt(d)
    store.add(f"{SCOPE}/L_init", store.rng.normal(0.0, s, d))
    store.add(f"{SCOPE}/C_init", store.rng.normal(0.0, s, d))
    store.add_mlp(f"{SCOPE}/L_msg", [d, d, d, d], activation="relu")
    store.add_mlp(f"{SCOPE}/C_msg", [d, d, d, d], activation="relu")
    store.add_lstm(f"{SCOPE}/C_update", d, d, layer_norm=True)
    store.add_lstm(f"{SCOPE}/L_update", 2 * d, d, layer_norm=True)


def embedding_dim(store: ParameterStore) -> int:
    return store.modules[f"{SCOPE}/C_update"]["hidden"]


def _full_round(s: EmbeddingState, g: FormulaGraph, store: ParameterStore) -> None:
    inc = g.incidence
    msg_l = mlp_forward(store, f"{SCOPE}/L_msg", s.L_h)
    s.C_h, s.C_c = lstm_cell_step(store, f"{SCOPE}/C_update", ad.cmatmul(inc, msg_l), (s.C_h, s.C_c))
    msg_c = mlp_forward(store, f"{SCOPE}/C_msg", s.C_h)
    l_in = ad.concat([ad.cmatmul(inc.T, msg_c), ad.take(s.L_h, g.flip)], axis=1)
    s.L_h, s.L_c = lstm_cell_step(store, f"{SCOPE}/L_update", l_in, (s.L_h, s.L_c))
    s.rounds += 1
    s.trace.append(("round", inc.shape[0]))


def embed_formula(g: FormulaGraph, store: ParameterStore, rounds: int,
                  init: tuple[np.ndarray, np.ndarray] | None = None) -> EmbeddingState:
    """Run ``rounds`` message-passing rounds from the learned initial vectors.

    ``init`` overrides the initial hidden states with explicit
    (literal, clause) matrices; it exists for influence-propagation tests.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    d = embedding_dim(store)
    n_l, n_c = g.num_literal_nodes, g.num_clause_nodes
    if init is None:
        L_h = ad.tile_rows(store[f"{SCOPE}/L_init"], n_l)
        C_h = ad.tile_rows(store[f"{SCOPE}/C_init"], n_c)
    else:
        L_h, C_h = Tensor(init[0]), Tensor(init[1])
    s = EmbeddingState(L_h, Tensor(np.zeros((n_l, d))), C_h, Tensor(np.zeros((n_c, d))))
    for _ in range(rounds):
        _full_round(s, g, store)
    return s


def integrate_derived_clause(s: EmbeddingState, g: FormulaGraph, store: ParameterStore,
                             mode: str = "dynamic") -> EmbeddingState:
    """Give the newest graph clause node an embedding and update per ``mode``.

    The clause must already be appended to ``g``; ``s`` is updated in place
    and returned. Static mode runs one local literal-to-clause then
    clause-to-literal exchange around the new node; dynamic mode runs one
    full round on the whole graph.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be static|dynamic, got {mode!r}")
    k = s.C_h.shape[0]
    if g.num_clause_nodes != k + 1:
        raise ValueError(f"state has {k} clause rows, graph has {g.num_clause_nodes} nodes")
    d = s.d
    s.C_h = ad.concat([s.C_h, ad.reshape(store[f"{SCOPE}/C_init"], (1, d))], axis=0)
    s.C_c = ad.concat([s.C_c, Tensor(np.zeros((1, d)))], axis=0)
    if mode == "dynamic":
        _full_round(s, g, store)
        return s

    lits = g.members(k)
    msg_l = mlp_forward(store, f"{SCOPE}/L_msg", ad.take(s.L_h, lits))
    agg = ad.cmatmul(np.ones((1, len(lits))), msg_l)
    h, c = lstm_cell_step(store, f"{SCOPE}/C_update", agg, (ad.take(s.C_h, [k]), ad.take(s.C_c, [k])))
    s.C_h, s.C_c = ad.put_rows(s.C_h, [k], h), ad.put_rows(s.C_c, [k], c)
    if len(lits):
        sub = g.incidence[:, lits].T
        adj = np.flatnonzero(sub.any(axis=0))
        msg_c = mlp_forward(store, f"{SCOPE}/C_msg", ad.take(s.C_h, adj))
        l_in = ad.concat([ad.cmatmul(sub[:, adj], msg_c), ad.take(s.L_h, g.flip[lits])], axis=1)
        h, c = lstm_cell_step(store, f"{SCOPE}/L_update", l_in, (ad.take(s.L_h, lits), ad.take(s.L_c, lits)))
        s.L_h, s.L_c = ad.put_rows(s.L_h, lits, h), ad.put_rows(s.L_c, lits, c)
    s.trace.append(("local", k))
    return s


def message_reachability(g: FormulaGraph, trace, upto: int | None = None) -> np.ndarray:
    """Which clause nodes have exchanged messages, after ``trace[:upto]``.

    Both literal nodes of a variable form one hub (they are joined by the
    complement edge). A clause that has exchanged messages with a hub, in
    either direction, is connected through it to every other clause that has
    done so at any time, since the hub state carries that information. The
    result is a symmetric boolean matrix over the clause nodes that existed
    at that point, with a true diagonal.
    """
    events = list(trace)[:upto]
    n = 0
    touched: list[set[int]] = []
    for kind, arg in events:
        if kind == "round":
            n = max(n, arg)
            touched.extend(set() for _ in range(n - len(touched)))
            for i in range(arg):
                touched[i] |= g.clause_vars(i)
        elif kind == "local":
            n = max(n, arg + 1)
            touched.extend(set() for _ in range(n - len(touched)))
            touched[arg] |= g.clause_vars(arg)
        else:
            raise ValueError(f"unknown trace event {kind!r}")
    hubs = np.zeros((n, g.num_vars), dtype=bool)
    for i, vs in enumerate(touched):
        hubs[i, [v - 1 for v in vs]] = True
    rel = (hubs.astype(np.int64) @ hubs.T.astype(np.int64)) > 0
    np.fill_diagonal(rel, True)
    return rel
