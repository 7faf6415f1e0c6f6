"""Clause-pair selection heads, assignment decoder and classifier head.

Three selectors score resolution steps over the current clause pool:

* ``full``: S = (E_C W_Q)(E_C W_K)^T / sqrt(d) over every ordered pair.
* ``casc``: two pointer queries, the second conditioned on the first pick.
* ``anch``: pick a pivot variable first, then score the grid of clauses
  containing v (rows) against clauses containing -v (columns).

Invalid cells are masked (treated as -inf). All argmax ties are broken by
canonical clause order, which makes choices equivariant under clause
reordering. Log-probabilities are normalised over valid cells only and are
taken for the unordered pair, since (a, b) and (b, a) denote one resolution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embedder import EmbeddingState, lit_node, register_embedder
from .nn import autodiff as ad
from .nn.autodiff import Tensor
from .nn.params import ParameterStore, mlp_forward
from .pool import ClausePool

VARIANTS = ("full", "casc", "anch")


class NoValidPair(RuntimeError):
    pass


@dataclass(frozen=True)
class PairChoice:
    c1: int
    c2: int
    pivot: int
    score: float
    anchor: int | None = None


@dataclass
class ScoreGrid:
    scores: np.ndarray
    mask: np.ndarray
    rows: np.ndarray
    cols: np.ndarray


# -- registration -------------------------------------------------------------

def register_selector(store: ParameterStore, variant: str, d: int) -> None:
    if variant == "full":
        store.add_mlp("full/q", [d, d], activation=None, bias=False)
        store.add_mlp("full/k", [d, d], activation=None, bias=False)
    elif variant == "casc":
        store.add("casc/W1", store.glorot((2 * d, d)))
        store.add("casc/W2", store.glorot((d, d)))
        store.add("casc/u", store.glorot((d,)))
    elif variant == "anch":
        store.add("anch/W1", store.glorot((d, d)))
        store.add("anch/W2", store.glorot((d, d)))
        store.add("anch/u", store.glorot((d,)))
        store.add_mlp("anch/q", [d, d], activation=None, bias=False)
        store.add_mlp("anch/k", [d, d], activation=None, bias=False)
    else:
        raise ValueError(f"unknown attention variant {variant!r}")


def register_decoder(store: ParameterStore, d: int) -> None:
    store.add_mlp("decoder", [d, d, 1], activation="relu", bias=False)


def register_classifier(store: ParameterStore, d: int) -> None:
    store.add_mlp("classifier", [d, d, d, 1], activation="relu")


def build_model(d: int = 32, variant: str = "full", seed: int = 0,
                classifier: bool = False) -> ParameterStore:
    store = ParameterStore(seed)
    register_embedder(store, d)
    register_selector(store, variant, d)
    register_decoder(store, d)
    if classifier:
        register_classifier(store, d)
    return store


def count_parameters(store: ParameterStore, scope: str = "") -> int:
    return store.count(scope)


def model_variant(store: ParameterStore) -> str:
    found = [v for v in VARIANTS if any(n.startswith(v + "/") for n in store.values)]
    if len(found) != 1:
        raise ValueError(f"expected exactly one selector in the store, found {found}")
    return found[0]


# -- argmax helpers -------------------------------------------------------------

def _best(scores: np.ndarray, keys: np.ndarray) -> int:
    """Index of the max score; ties go to the smallest row of ``keys``."""
    top = np.flatnonzero(scores == scores.max())
    if len(top) == 1:
        return int(top[0])
    return int(top[np.lexsort(keys[top].T[::-1])[0]])


def _ranked(scores: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """All indices by descending score, ties by ascending ``keys`` rows."""
    return np.lexsort(tuple(keys.T[::-1]) + (-scores,))


class Selector:
    """Scores for one pool/embedding snapshot; computes each head lazily."""

    def __init__(self, store: ParameterStore, state: EmbeddingState, pool: ClausePool, variant: str):
        if len(pool) != state.C_h.shape[0]:
            raise ValueError(f"pool has {len(pool)} clauses, embeddings {state.C_h.shape[0]}")
        self.store, self.state, self.pool, self.variant = store, state, pool, variant
        self.valid = pool.valid.copy()
        self.pivots = np.where(self.valid, pool.pivots, 0)
        self.ranks = pool.ranks()
        self.d = state.d
        self._cache: dict = {}

    # full --------------------------------------------------------------------
    def _grid(self, prefix: str, rows: np.ndarray | None = None, cols: np.ndarray | None = None) -> Tensor:
        E = self.state.E_C
        Er = E if rows is None else ad.take(E, rows)
        Ec = E if cols is None else ad.take(E, cols)
        Q = ad.matmul(Er, self.store[f"{prefix}/q/W0"])
        K = ad.matmul(Ec, self.store[f"{prefix}/k/W0"])
        return ad.scale(ad.matmul_t(Q, K), 1.0 / np.sqrt(self.d))

    def full_grid(self) -> Tensor:
        if "full" not in self._cache:
            self._cache["full"] = self._grid("full")
        return self._cache["full"]

    # casc --------------------------------------------------------------------
    def _casc_scores(self, second: Tensor) -> Tensor:
        st = self.store
        q = ad.concat([ad.mean_rows(self.state.E_L), second], axis=0)
        if "casc_B" not in self._cache:
            self._cache["casc_B"] = ad.matmul(self.state.E_C, st["casc/W2"])
        t = ad.tanh(ad.add(self._cache["casc_B"], ad.matmul(q, st["casc/W1"])))
        return ad.matmul(t, st["casc/u"])

    def casc_first(self) -> Tensor:
        if "casc1" not in self._cache:
            self._cache["casc1"] = self._casc_scores(Tensor(np.zeros(self.d)))
        return self._cache["casc1"]

    def casc_second(self, i: int) -> Tensor:
        key = ("casc2", i)
        if key not in self._cache:
            self._cache[key] = self._casc_scores(ad.take(self.state.E_C, i))
        return self._cache[key]

    # anch --------------------------------------------------------------------
    def anchor_scores(self) -> Tensor:
        if "anch_v" not in self._cache:
            st, s = self.store, self.state
            m = s.E_L.shape[0] // 2
            both = ad.add(ad.take(s.E_L, 2 * np.arange(m)), ad.take(s.E_L, 2 * np.arange(m) + 1))
            a = ad.matmul(ad.mean_rows(s.E_C), st["anch/W1"])
            t = ad.tanh(ad.add(ad.matmul(both, st["anch/W2"]), a))
            self._cache["anch_v"] = ad.matmul(t, st["anch/u"])
        return self._cache["anch_v"]

    def anchored(self, v: int) -> tuple[ScoreGrid, Tensor]:
        key = ("anch_grid", v)
        if key not in self._cache:
            rows, cols = self.pool.with_literal(v), self.pool.with_literal(-v)
            S = self._grid("anch", rows, cols)
            mask = self.valid[np.ix_(rows, cols)]
            self._cache[key] = (ScoreGrid(S.value, mask, rows, cols), S)
        return self._cache[key]

    # -- choice ----------------------------------------------------------------
    def _require_valid(self) -> None:
        if not self.valid.any():
            raise NoValidPair("no valid resolution step in the pool")

    def _pair(self, i: int, j: int, score: float, anchor: int | None = None) -> PairChoice:
        return PairChoice(i + 1, j + 1, int(self.pivots[i, j]), float(score), anchor)

    def grid(self) -> ScoreGrid:
        """The grid the variant's final pair decision is made on."""
        n = len(self.pool)
        ids = np.arange(n)
        if self.variant == "full":
            return ScoreGrid(self.full_grid().value, self.valid, ids, ids)
        if self.variant == "anch":
            return self.anchored(self.choose_anchor()[0])[0]
        i = self.choose_first()[0]
        return ScoreGrid(self.casc_second(i).value[None, :], self.valid[i][None, :], np.array([i]), ids)

    def choose_anchor(self) -> tuple[int, float]:
        self._require_valid()
        anchors = self.pool.valid_anchors()
        s = self.anchor_scores().value[anchors - 1]
        b = _best(s, anchors[:, None])
        return int(anchors[b]), float(s[b])

    def choose_first(self) -> tuple[int, float]:
        self._require_valid()
        cand = np.flatnonzero(self.valid.any(axis=1))
        s = self.casc_first().value[cand]
        b = _best(s, self.ranks[cand][:, None])
        return int(cand[b]), float(s[b])

    def iter_cells(self):
        """Valid cells of the decision grid, best first, one per unordered pair."""
        self._require_valid()
        g = self.grid()
        anchor = self.choose_anchor()[0] if self.variant == "anch" else None
        r, c = np.nonzero(g.mask)
        rows, cols = g.rows[r], g.cols[c]
        scores = g.scores[r, c]
        keys = np.stack([self.ranks[rows], self.ranks[cols]], axis=1)
        seen = set()
        for t in _ranked(scores, keys):
            i, j = int(rows[t]), int(cols[t])
            pair = (min(i, j), max(i, j))
            if pair in seen:
                continue
            seen.add(pair)
            yield self._pair(i, j, scores[t], anchor)

    def ranked_cells(self, limit: int | None = None) -> list[PairChoice]:
        out = []
        for ch in self.iter_cells():
            if limit is not None and len(out) >= limit:
                break
            out.append(ch)
        return out

    def choose(self) -> PairChoice:
        self._require_valid()
        g = self.grid()
        anchor = self.choose_anchor()[0] if self.variant == "anch" else None
        r, c = np.nonzero(g.mask)
        rows, cols = g.rows[r], g.cols[c]
        scores = g.scores[r, c]
        b = _best(scores, np.stack([self.ranks[rows], self.ranks[cols]], axis=1))
        return self._pair(int(rows[b]), int(cols[b]), scores[b], anchor)

    # -- likelihood ----------------------------------------------------------
    def log_prob(self, c1: int, c2: int) -> Tensor:
        """log p of resolving the 1-based pair {c1, c2} under this head."""
        i, j = c1 - 1, c2 - 1
        if not self.valid[i, j]:
            raise NoValidPair(f"pair ({c1}, {c2}) is not a valid step")
        if self.variant == "full":
            n = len(self.pool)
            vi, vj = np.nonzero(self.valid)
            flat = ad.reshape(self.full_grid(), (n * n,))
            return ad.log_prob(flat, vi * n + vj, [i * n + j, j * n + i])
        if self.variant == "casc":
            first = np.flatnonzero(self.valid.any(axis=1))
            s1 = self.casc_first()

            def ordered(a, b):
                return ad.add(ad.log_prob(s1, first, [a]),
                              ad.log_prob(self.casc_second(a), np.flatnonzero(self.valid[a]), [b]))

            return ad.logsumexp(ad.stack([ordered(i, j), ordered(j, i)]))
        v = self.pool.pivot(c1, c2)
        anchors = self.pool.valid_anchors()
        lp_v = ad.log_prob(self.anchor_scores(), anchors - 1, [v - 1])
        g, S = self.anchored(v)
        w = len(g.cols)
        vr, vc = np.nonzero(g.mask)
        # a tautological parent can sit on either side, so collect every cell of the pair
        hit = np.isin(g.rows[vr], (i, j)) & np.isin(g.cols[vc], (i, j))
        flat = ad.reshape(S, (S.shape[0] * w,))
        return ad.add(lp_v, ad.log_prob(flat, vr * w + vc, (vr * w + vc)[hit]))


def select_pair_full(store, state, pool) -> PairChoice:
    return Selector(store, state, pool, "full").choose()


def select_pair_cascaded(store, state, pool) -> PairChoice:
    return Selector(store, state, pool, "casc").choose()


def select_pair_anchored(store, state, pool) -> PairChoice:
    return Selector(store, state, pool, "anch").choose()


def top_k_candidates(store, state, pool, k: int, variant: str = "full") -> list[PairChoice]:
    """The ``k`` best cells of one forward pass, before sequential re-validation."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return Selector(store, state, pool, variant).ranked_cells(k)


# -- assignment decoder and classifier ------------------------------------------

def decoder_logits(store: ParameterStore, state: EmbeddingState) -> Tensor:
    """One logit per literal node."""
    return ad.reshape(mlp_forward(store, "decoder", state.E_L), (state.E_L.shape[0],))


def decode_assignment(store: ParameterStore, state: EmbeddingState, branch: str = "positive",
                      logits: np.ndarray | None = None) -> dict[int, bool]:
    """Threshold sigmoid outputs at 0.5 (ties false) on one literal branch.

    The positive branch reads literal v, the negative branch reads literal -v
    and negates the decision.
    """
    z = decoder_logits(store, state).value if logits is None else logits
    m = z.shape[0] // 2
    if branch == "positive":
        return {v: bool(z[lit_node(v)] > 0) for v in range(1, m + 1)}
    if branch == "negative":
        return {v: not bool(z[lit_node(-v)] > 0) for v in range(1, m + 1)}
    raise ValueError(f"branch must be positive|negative, got {branch!r}")


def classifier_logit(store: ParameterStore, state: EmbeddingState) -> Tensor:
    votes = ad.reshape(mlp_forward(store, "classifier", state.E_L), (state.E_L.shape[0],))
    return ad.scale(ad.sum_all(votes), 1.0 / votes.shape[0])


def classify_satisfiability(store: ParameterStore, state: EmbeddingState) -> float:
    """P(sat): sigmoid of the mean literal vote."""
    z = classifier_logit(store, state).item()
    return float(0.5 * (1.0 + np.tanh(0.5 * z)))
