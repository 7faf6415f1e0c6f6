"""Growing clause pool with an incrementally maintained valid-pair mask.

A cell (i, j) is valid when the two clauses clash on exactly one variable
(two or more clashes always give a tautological resolvent), the resolvent is
not a tautology, and the resolvent is not already in the pool. Clauses are
stored as positive/negative bit masks so each insertion updates one mask row
and column with vectorised word operations.
"""

from __future__ import annotations

import numpy as np

from .cnf import Clause, CnfFormula, lit_key

_ONE = np.uint64(1)


def clause_sort_key(c: Clause) -> tuple:
    return tuple(lit_key(l) for l in c)


class ClausePool:
    def __init__(self, num_vars: int, clauses=(), capacity: int = 64):
        self.num_vars = num_vars
        self.words = max(1, (num_vars + 63) // 64)
        self.clauses: list[Clause] = []
        self.index: dict[bytes, int] = {}
        self._by_resolvent: dict[bytes, list[tuple[int, int]]] = {}
        cap = max(capacity, len(clauses) + 1)
        self._pos = np.zeros((cap, self.words), dtype=np.uint64)
        self._neg = np.zeros((cap, self.words), dtype=np.uint64)
        self._valid = np.zeros((cap, cap), dtype=bool)
        self._pivot = np.zeros((cap, cap), dtype=np.int32)
        for c in clauses:
            self.append(Clause(c))

    @classmethod
    def from_formula(cls, f: CnfFormula) -> "ClausePool":
        return cls(f.num_vars, f.input_clauses, capacity=2 * f.num_inputs + 16)

    def __len__(self) -> int:
        return len(self.clauses)

    def __contains__(self, c) -> bool:
        return self.key(Clause(c)) in self.index

    # -- encoding -------------------------------------------------------------
    def _bits(self, c: Clause) -> tuple[np.ndarray, np.ndarray]:
        pos = np.zeros(self.words, dtype=np.uint64)
        neg = np.zeros(self.words, dtype=np.uint64)
        for l in c:
            v = abs(l) - 1
            w, b = divmod(v, 64)
            if l > 0:
                pos[w] |= _ONE << np.uint64(b)
            else:
                neg[w] |= _ONE << np.uint64(b)
        return pos, neg

    def key(self, c: Clause) -> bytes:
        pos, neg = self._bits(c)
        return pos.tobytes() + neg.tobytes()

    def _grow(self, need: int) -> None:
        cap = self._pos.shape[0]
        if need <= cap:
            return
        new = max(need, 2 * cap)

        def grow_rows(a):
            out = np.zeros((new,) + a.shape[1:], dtype=a.dtype)
            out[:cap] = a
            return out

        self._pos, self._neg = grow_rows(self._pos), grow_rows(self._neg)
        for name in ("_valid", "_pivot"):
            a = getattr(self, name)
            out = np.zeros((new, new), dtype=a.dtype)
            out[:cap, :cap] = a
            setattr(self, name, out)

    # -- mutation -------------------------------------------------------------
    def append(self, c: Clause) -> int:
        """Add ``c`` unconditionally (input clauses keep their ids); returns its id."""
        c = Clause(c)
        k = len(self.clauses)
        self._grow(k + 1)
        pos, neg = self._bits(c)
        self._pos[k], self._neg[k] = pos, neg
        key = pos.tobytes() + neg.tobytes()
        self.clauses.append(c)
        self.index.setdefault(key, k + 1)
        # cells whose resolvent is this clause are no longer new
        for i, j in self._by_resolvent.pop(key, ()):
            self._valid[i, j] = self._valid[j, i] = False
        if k:
            P, N = self._pos[:k], self._neg[:k]
            clash = (pos & N) | (neg & P)
            count = np.bitwise_count(clash).sum(axis=1)
            cand = np.flatnonzero(count == 1)
            if cand.size:
                cl = clash[cand]
                Pc, Nc = P[cand], N[cand]
                # orient so the pivot is positive in the first parent
                k_first = np.any(pos & Nc & cl, axis=1)[:, None]
                rp = np.where(k_first, (pos & ~cl) | Pc, (Pc & ~cl) | pos)
                rn = np.where(k_first, neg | (Nc & ~cl), Nc | (neg & ~cl))
                ok = ~np.any(rp & rn, axis=1)
                keys = np.concatenate([rp, rn], axis=1)
                word = np.argmax(cl != 0, axis=1)
                bit = np.log2(cl[np.arange(cand.size), word].astype(np.float64)).astype(np.int64)
                piv = word * 64 + bit + 1
                for t, j in enumerate(cand):
                    if not ok[t]:
                        continue
                    rk = keys[t].tobytes()
                    if rk in self.index:
                        continue
                    j = int(j)
                    self._valid[j, k] = self._valid[k, j] = True
                    self._pivot[j, k] = self._pivot[k, j] = piv[t]
                    self._by_resolvent.setdefault(rk, []).append((j, k))
        return k + 1

    def add(self, c: Clause) -> tuple[int, bool]:
        """Add a derived clause unless already present: ``(id, added)``."""
        c = Clause(c)
        known = self.index.get(self.key(c))
        if known is not None:
            return known, False
        return self.append(c), True

    # -- queries --------------------------------------------------------------
    @property
    def valid(self) -> np.ndarray:
        n = len(self.clauses)
        return self._valid[:n, :n]

    @property
    def pivots(self) -> np.ndarray:
        """Pivot variable per cell; meaningful where ``valid`` holds."""
        n = len(self.clauses)
        return self._pivot[:n, :n]

    def clause(self, cid: int) -> Clause:
        return self.clauses[cid - 1]

    def pivot(self, i: int, j: int) -> int:
        """Pivot variable of a valid 1-based pair, 0 if the cell is invalid."""
        return int(self._pivot[i - 1, j - 1]) if self._valid[i - 1, j - 1] else 0

    def valid_cells(self, upper: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """0-based index arrays of valid cells (only i < j when ``upper``)."""
        v = self.valid
        if upper:
            v = np.triu(v, 1)
        return np.nonzero(v)

    def has_valid_pair(self) -> bool:
        return bool(self.valid.any())

    def valid_anchors(self) -> np.ndarray:
        """Sorted variables (1-based) that are the pivot of at least one valid pair."""
        n = len(self.clauses)
        return np.unique(self._pivot[:n, :n][self.valid])

    def ranks(self) -> np.ndarray:
        """Position of each clause in canonical clause order (ties by id)."""
        order = sorted(range(len(self.clauses)), key=lambda i: (clause_sort_key(self.clauses[i]), i))
        r = np.empty(len(order), dtype=np.int64)
        r[order] = np.arange(len(order))
        return r

    def with_literal(self, lit: int) -> np.ndarray:
        """0-based indices of clauses containing ``lit``."""
        w, b = divmod(abs(lit) - 1, 64)
        bits = (self._pos if lit > 0 else self._neg)[:len(self.clauses), w]
        return np.flatnonzero((bits >> np.uint64(b)) & _ONE)


def valid_pair_mask(clauses, num_vars: int | None = None) -> np.ndarray:
    clauses = [Clause(c) for c in clauses]
    if num_vars is None:
        num_vars = max((abs(l) for c in clauses for l in c), default=1)
    return ClausePool(num_vars, clauses).valid.copy()
