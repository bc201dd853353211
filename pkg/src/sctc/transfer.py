"""Exact component-decoder transfer functions on the BEC.

Conditioned on the all-zero codeword (valid by linearity), the forward
erasure-decoder message at a stationary position is a random subset of trellis
states containing state 0, and that subset evolves as a finite Markov chain
driven by the i.i.d. per-stream erasure pattern.  Solving for the stationary
distributions of the forward and backward set chains and averaging the
branch-ambiguity indicator over the in-section erasure pattern gives the
extrinsic erasure probability of every output stream exactly, with no
sampling or interpolation.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .bcjr import ERASED, UNRESOLVED, _luts
from .trellis import Trellis

__all__ = [
    "MetricStateChain",
    "TransferEval",
    "TransferFunction",
    "build_chain",
    "stationary",
    "transfer_exact",
    "build_transfer",
]

RESIDUAL_TOL = 1e-12
_Q_FLOOR = 1e-30  # below this a prior is treated as exactly zero


class TransferSolverError(RuntimeError):
    """Stationary solve failed beyond tolerance; indicates a chain bug."""


@dataclass(frozen=True, eq=False)
class MetricStateChain:
    """Markov chain of decoder uncertainty sets for one scan direction.

    nodes are state-set bitmasks, each containing state 0 (the true path);
    trans[e, i] is the node reached from node i when the erased-stream set is
    the bitmask e.  The chain is closed under every pattern by construction.
    """

    direction: str
    c: int
    nodes: tuple[int, ...]
    trans: np.ndarray          # (2**c, n) int64 node indices
    full_index: int
    zero_index: int

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def transition_matrix(self, q) -> np.ndarray:
        """Row-stochastic T(q); rows sum to 1 for any q in [0,1]^c."""
        w = pattern_weights(np.asarray(q, dtype=np.float64)[None, :], self.c)[0]
        n = self.n_nodes
        T = np.zeros((n, n))
        for e in range(1 << self.c):
            if w[e]:
                np.add.at(T, (np.arange(n), self.trans[e]), w[e])
        return T


def pattern_weights(Q: np.ndarray, c: int) -> np.ndarray:
    """(a, c) priors -> (a, 2**c) probabilities of each erased-stream set."""
    a = Q.shape[0]
    W = np.ones((a, 1 << c))
    for e in range(1 << c):
        for k in range(c):
            W[:, e] *= Q[:, k] if (e >> k) & 1 else 1.0 - Q[:, k]
    return W


def _pattern_obs(e: int, c: int) -> int:
    """Erased-set bitmask -> observation word under all-zero conditioning."""
    return sum((ERASED if (e >> k) & 1 else 0) * 3 ** k for k in range(c))


@lru_cache(maxsize=None)
def build_chain(trellis: Trellis, direction: str) -> MetricStateChain:
    """Enumerate the uncertainty-set chain by closure from the full set and {0}."""
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    luts = _luts(trellis)
    table = luts.trans_f if direction == "forward" else luts.trans_b
    c = trellis.c
    full = luts.full_mask
    nodes = []
    index = {}
    stack = [full, 1]
    while stack:
        m = stack.pop()
        if m in index:
            continue
        index[m] = len(nodes)
        nodes.append(m)
        if len(nodes) > 4096:
            raise ValueError("uncertainty-set chain too large for exact analysis")
        for e in range(1 << c):
            stack.append(int(table[m, _pattern_obs(e, c)]))
    trans = np.empty((1 << c, len(nodes)), dtype=np.int64)
    for e in range(1 << c):
        obs = _pattern_obs(e, c)
        for i, m in enumerate(nodes):
            trans[e, i] = index[int(table[m, obs])]
    return MetricStateChain(direction=direction, c=c, nodes=tuple(nodes),
                            trans=trans, full_index=index[full],
                            zero_index=index[1])


# --- support analysis --------------------------------------------------------

def _support_code(q: np.ndarray) -> int:
    """Base-3 word: digit k is 0, 1 or 2 for q_k == 0, interior, == 1."""
    code = 0
    for k, v in enumerate(q):
        code += (0 if v <= 0.0 else 2 if v >= 1.0 else 1) * 3 ** k
    return code


def _allowed_patterns(sigma: int, c: int) -> list[int]:
    digits = [(sigma // 3 ** k) % 3 for k in range(c)]
    out = []
    for e in range(1 << c):
        ok = all((digits[k] != 0) if (e >> k) & 1 else (digits[k] != 2)
                 for k in range(c))
        if ok:
            out.append(e)
    return out


def _closed_classes(chain: MetricStateChain, patterns) -> tuple[list[list[int]], np.ndarray]:
    """Strongly connected components with no exit, plus the reachability matrix."""
    n = chain.n_nodes
    adj = np.eye(n, dtype=bool)
    for e in patterns:
        adj[np.arange(n), chain.trans[e]] = True
    reach = adj.copy()
    while True:
        nxt = reach | (reach @ reach)
        if (nxt == reach).all():
            break
        reach = nxt
    mutual = reach & reach.T
    seen = np.zeros(n, dtype=bool)
    closed = []
    for i in range(n):
        if seen[i]:
            continue
        comp = np.flatnonzero(mutual[i])
        seen[comp] = True
        if not (reach[comp][:, ~np.isin(np.arange(n), comp)]).any():
            closed.append([int(j) for j in comp])
    return closed, reach


@lru_cache(maxsize=None)
def _sigma_direct_ok(chain: MetricStateChain, sigma: int) -> bool:
    closed, _ = _closed_classes(chain, _allowed_patterns(sigma, chain.c))
    return len(closed) == 1


def _solve_stationary_dense(T: np.ndarray) -> np.ndarray:
    n = T.shape[0]
    A = T.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    return np.linalg.solve(A, b)


def stationary(chain: MetricStateChain, q) -> np.ndarray:
    """Stationary node distribution at prior vector q.

    Interior q gives the unique stationary distribution.  On the boundary the
    chain may be reducible; the returned vector is then the long-run limit of
    the process started at the full-uncertainty node (absorption-weighted
    mixture of the closed classes it can reach).
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (chain.c,) or (q < 0).any() or (q > 1).any():
        raise ValueError("q must be c probabilities in [0, 1]")
    q = np.where(q < _Q_FLOOR, 0.0, q)
    T = chain.transition_matrix(q)
    sigma = _support_code(q)
    patterns = _allowed_patterns(sigma, chain.c)
    closed, reach = _closed_classes(chain, patterns)
    n = chain.n_nodes
    pi = np.zeros(n)
    reachable_closed = [cls for cls in closed if reach[chain.full_index, cls[0]]]
    if not reachable_closed:
        raise TransferSolverError("no closed class reachable (chain bug)")
    if len(reachable_closed) == 1:
        cls = reachable_closed[0]
        sub = T[np.ix_(cls, cls)]
        pi[cls] = _solve_stationary_dense(sub)
    else:
        members = set()
        for cls in closed:
            members |= set(cls)
        transient = [i for i in range(n) if i not in members and reach[chain.full_index, i]]
        t_idx = {i: r for r, i in enumerate(transient)}
        B = T[np.ix_(transient, transient)] if transient else np.zeros((0, 0))
        weights = []
        for cls in reachable_closed:
            if chain.full_index in cls:
                weights.append(1.0)
                continue
            if not transient:
                weights.append(0.0)
                continue
            r = T[np.ix_(transient, cls)].sum(axis=1)
            h = np.linalg.solve(np.eye(len(transient)) - B, r)
            weights.append(h[t_idx[chain.full_index]] if chain.full_index in t_idx else 0.0)
        for w, cls in zip(weights, reachable_closed):
            if w <= 0:
                continue
            sub = T[np.ix_(cls, cls)]
            pi[cls] += w * _solve_stationary_dense(sub)
    residual = np.abs(pi @ T - pi).max()
    if residual > RESIDUAL_TOL or abs(pi.sum() - 1.0) > RESIDUAL_TOL:
        raise TransferSolverError(f"stationary residual {residual:.2e}")
    return np.clip(pi, 0.0, None)


@dataclass(frozen=True)
class TransferEval:
    """Exact extrinsic erasure probabilities p for input priors q."""

    p: tuple[float, ...]
    q: tuple[float, ...]
    chain_sizes: tuple[int, int]
    residual: float


class TransferFunction:
    """Compiled exact evaluator for one component trellis.

    Chain construction happens once per trellis; every evaluation is two
    dense stationary solves plus a contraction with precomputed ambiguity
    tables, so density evolution can call it per slot per iteration.
    """

    def __init__(self, trellis: Trellis):
        self.trellis = trellis
        self.c = trellis.c
        self.fwd = build_chain(trellis, "forward")
        self.bwd = build_chain(trellis, "backward")
        luts = _luts(trellis)
        nf, nb, c = self.fwd.n_nodes, self.bwd.n_nodes, self.c
        P = 1 << c

        self.Mf = np.zeros((P, nf, nf))
        for e in range(P):
            self.Mf[e, np.arange(nf), self.fwd.trans[e]] = 1.0
        self.Mb = np.zeros((P, nb, nb))
        for e in range(P):
            self.Mb[e, np.arange(nb), self.bwd.trans[e]] = 1.0

        # amb[k, e, i, j] = 1 iff stream k is ambiguous between forward node i
        # and backward node j when the erased set among the other streams is e
        self.amb = np.zeros((c, P, nf, nb))
        fmasks = np.array(self.fwd.nodes)
        bmasks = np.array(self.bwd.nodes)
        for k in range(c):
            for e in range(P):
                if (e >> k) & 1:
                    continue
                obs = _pattern_obs(e | (1 << k), c)
                verd = luts.ext[k, fmasks[:, None], obs, bmasks[None, :]]
                self.amb[k, e] = verd == UNRESOLVED

        self._sigma_ok = {}
        for sigma in range(3 ** c):
            self._sigma_ok[sigma] = (_sigma_direct_ok(self.fwd, sigma)
                                     and _sigma_direct_ok(self.bwd, sigma))
        if not self._sigma_ok[_support_code(np.full(c, 0.5))]:
            raise TransferSolverError("interior chain is reducible (chain bug)")
        self._ok_arr = np.array([self._sigma_ok[s] for s in range(3 ** c)],
                                dtype=np.uint8)

    # -- single exact evaluation ---------------------------------------------

    def evaluate(self, q) -> TransferEval:
        q = np.asarray(q, dtype=np.float64)
        pf = stationary(self.fwd, q)
        pb = stationary(self.bwd, q)
        p = self._contract(q[None, :], pf[None, :], pb[None, :])[0]
        residual = max(np.abs(pf @ self.fwd.transition_matrix(q) - pf).max(),
                       np.abs(pb @ self.bwd.transition_matrix(q) - pb).max())
        return TransferEval(p=tuple(float(v) for v in p),
                            q=tuple(float(v) for v in q),
                            chain_sizes=(self.fwd.n_nodes, self.bwd.n_nodes),
                            residual=float(residual))

    # -- batched evaluation for density evolution ----------------------------

    def evaluate_batch(self, Q: np.ndarray) -> np.ndarray:
        """Exact p for each row of Q, shape (a, c) -> (a, c).

        Hot path is a compiled per-row solve; rows whose prior support makes
        the chain reducible (or whose solve drifts beyond tolerance) are
        recomputed through the careful stationary() path, so the result is
        exact for every q in [0,1]^c.
        """
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        a = Q.shape[0]
        if a == 0:
            return np.zeros((0, self.c))
        out = np.empty((a, self.c))
        flags = np.zeros(a, dtype=np.uint8)
        _transfer_rows(Q, self.Mf, self.Mb, self.amb, self._ok_arr, out, flags)
        for r in np.flatnonzero(flags):
            q = np.where(Q[r] < _Q_FLOOR, 0.0, Q[r])
            pf = stationary(self.fwd, q)
            pb = stationary(self.bwd, q)
            out[r] = self._contract(q[None, :], pf[None, :], pb[None, :])[0]
        return np.clip(out, 0.0, 1.0)

    def _contract(self, Q: np.ndarray, pf: np.ndarray, pb: np.ndarray) -> np.ndarray:
        a = Q.shape[0]
        out = np.zeros((a, self.c))
        for k in range(self.c):
            for e in range(1 << self.c):
                if (e >> k) & 1:
                    continue
                w = np.ones(a)
                for j in range(self.c):
                    if j == k:
                        continue
                    w *= Q[:, j] if (e >> j) & 1 else 1.0 - Q[:, j]
                if not w.any():
                    continue
                out[:, k] += w * np.einsum("ai,ij,aj->a", pf, self.amb[k, e], pb)
        return np.clip(out, 0.0, 1.0)


@njit(cache=True)
def _transfer_rows(Q, Mf, Mb, amb, sigma_ok, out, flags):
    """Per-row exact transfer evaluation; flags rows needing the careful path.

    Row recipe: erasure-pattern weights -> stationary distribution of each
    set chain by dense elimination with partial pivoting -> contraction with
    the ambiguity tables.  A row is flagged when its prior support makes the
    direct solve invalid or the solve leaves tolerance.
    """
    a, c = Q.shape
    P = 1 << c
    nf = Mf.shape[1]
    nb = Mb.shape[1]
    w = np.empty(P)
    pif = np.empty(nf)
    pib = np.empty(nb)
    A = np.empty((max(nf, nb), max(nf, nb) + 1))
    q = np.empty(c)
    for r in range(a):
        sigma = 0
        p3 = 1
        for k in range(c):
            v = Q[r, k]
            if v < 1e-30:
                v = 0.0
            q[k] = v
            sigma += (0 if v <= 0.0 else 2 if v >= 1.0 else 1) * p3
            p3 *= 3
        if not sigma_ok[sigma]:
            flags[r] = 1
            continue
        for e in range(P):
            we = 1.0
            for k in range(c):
                we *= q[k] if (e >> k) & 1 else 1.0 - q[k]
            w[e] = we
        ok = _stationary_small(w, Mf, A, pif)
        ok = ok and _stationary_small(w, Mb, A, pib)
        if not ok:
            flags[r] = 1
            continue
        for k in range(c):
            pk = 0.0
            for e in range(P):
                if (e >> k) & 1:
                    continue
                we = 1.0
                for j in range(c):
                    if j == k:
                        continue
                    we *= q[j] if (e >> j) & 1 else 1.0 - q[j]
                if we == 0.0:
                    continue
                s = 0.0
                for i in range(nf):
                    if pif[i] == 0.0:
                        continue
                    row = 0.0
                    for jj in range(nb):
                        row += amb[k, e, i, jj] * pib[jj]
                    s += pif[i] * row
                pk += we * s
            out[r, k] = min(max(pk, 0.0), 1.0)


@njit(cache=True)
def _stationary_small(w, M, A, pi):
    """Solve pi T(w) = pi, sum pi = 1 by elimination; False when out of tolerance."""
    P, n, _ = M.shape
    # A = [T^T - I | e_n] with the last equation replaced by normalization
    for i in range(n):
        for j in range(n):
            v = 0.0
            for e in range(P):
                if w[e] != 0.0:
                    v += w[e] * M[e, j, i]
            A[i, j] = v
        A[i, i] -= 1.0
        A[i, n] = 0.0
    for j in range(n):
        A[n - 1, j] = 1.0
    A[n - 1, n] = 1.0

    for col in range(n):
        piv = col
        best = abs(A[col, col])
        for i in range(col + 1, n):
            if abs(A[i, col]) > best:
                best = abs(A[i, col])
                piv = i
        if best < 1e-14:
            return False
        if piv != col:
            for j in range(col, n + 1):
                tmp = A[col, j]
                A[col, j] = A[piv, j]
                A[piv, j] = tmp
        inv = 1.0 / A[col, col]
        for i in range(col + 1, n):
            f = A[i, col] * inv
            if f != 0.0:
                for j in range(col, n + 1):
                    A[i, j] -= f * A[col, j]
    for i in range(n - 1, -1, -1):
        v = A[i, n]
        for j in range(i + 1, n):
            v -= A[i, j] * pi[j]
        pi[i] = v / A[i, i]

    # stationarity residual and nonnegativity guard
    res = 0.0
    for j in range(n):
        tj = 0.0
        for i in range(n):
            if pi[i] != 0.0:
                acc = 0.0
                for e in range(P):
                    if w[e] != 0.0:
                        acc += w[e] * M[e, i, j]
                tj += pi[i] * acc
        d = abs(tj - pi[j])
        if d > res:
            res = d
        if pi[j] < -1e-12:
            return False
    if res > 1e-12:
        return False
    for j in range(n):
        if pi[j] < 0.0:
            pi[j] = 0.0
    return True


@lru_cache(maxsize=None)
def build_transfer(trellis: Trellis) -> TransferFunction:
    return TransferFunction(trellis)


def transfer_exact(trellis: Trellis, q) -> TransferEval:
    """Exact extrinsic erasure probabilities of every output stream at priors q."""
    return build_transfer(trellis).evaluate(q)
