"""Exact symbol-wise MAP decoding over the BEC via set-based forward/backward passes.

Erasure decoding never needs probabilities: the forward (backward) message at a
position is the set of trellis states consistent with all observations before
(after) it, and a symbol is resolved exactly when every surviving branch agrees
on it.  State sets are bitmasks and all per-position work is table lookups, so
the same tables drive the single-block decoder, the Monte Carlo transfer
estimator and the chain simulator.

Observation encoding: one base-3 digit per stream, 0/1 = known bit value,
2 = erased; a position's observation is the little-endian base-3 word of its
stream digits.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numba import njit

from .trellis import Trellis

__all__ = [
    "ERASED",
    "UNRESOLVED",
    "ErasurePattern",
    "ExtrinsicOutcome",
    "InconsistentObservations",
    "erasure_bcjr",
    "mc_transfer_estimate",
]

ERASED = 2        # observation digit: no channel/a-priori knowledge
UNRESOLVED = 2    # verdict digit: decoder cannot pin the symbol
_NOPATH = 3       # verdict digit: no surviving branch (corrupt input)

ErasurePattern = np.ndarray  # (c, N) int8 of digits {0, 1, 2}


class InconsistentObservations(ValueError):
    """No codeword is consistent with the given observations."""


@dataclass(frozen=True)
class ExtrinsicOutcome:
    """Per-position, per-stream verdicts: bit value 0/1 or UNRESOLVED."""

    extrinsic: np.ndarray    # (c, N) int8
    aposteriori: np.ndarray  # (c, N) int8


@dataclass(frozen=True, eq=False)
class ErasureLuts:
    """Transition and verdict tables for one trellis.

    trans_f[mask, obs] is the forward image of state-set `mask` through a
    section observed as `obs`; trans_b is the preimage on the reversed
    trellis.  ext[k, fmask, obs, bmask] is the extrinsic verdict for stream k
    (its own digit in obs is ignored), app the a-posteriori one.
    """

    n_states: int
    c: int
    trans_f: np.ndarray
    trans_b: np.ndarray
    ext: np.ndarray
    app: np.ndarray
    full_mask: int


def _obs_compatible(trellis, s, u, obs_digits):
    out = int(trellis.outputs[s, u])
    for k, d in enumerate(obs_digits):
        if d != ERASED and ((out >> k) & 1) != d:
            return False
    return True


@lru_cache(maxsize=None)
def _luts(trellis: Trellis) -> ErasureLuts:
    S, c = trellis.n_states, trellis.c
    if S > 12:
        raise ValueError("erasure decoding tables support up to 12 trellis states")
    n_masks, n_obs = 1 << S, 3 ** c
    digits = [[(o // 3 ** k) % 3 for k in range(c)] for o in range(n_obs)]

    branches = [(s, u, int(trellis.next_state[s, u]), int(trellis.outputs[s, u]))
                for s in range(S) for u in range(trellis.n_inputs)]

    trans_f = np.zeros((n_masks, n_obs), dtype=np.int64)
    trans_b = np.zeros((n_masks, n_obs), dtype=np.int64)
    for obs in range(n_obs):
        dg = digits[obs]
        ok = [(s, u, ns) for (s, u, ns, _) in branches
              if _obs_compatible(trellis, s, u, dg)]
        for mask in range(n_masks):
            f = 0
            bwd = 0
            for s, u, ns in ok:
                if (mask >> s) & 1:
                    f |= 1 << ns
                if (mask >> ns) & 1:
                    bwd |= 1 << s
            trans_f[mask, obs] = f
            trans_b[mask, obs] = bwd

    ext = np.zeros((c, n_masks, n_obs, n_masks), dtype=np.int8)
    app = np.zeros((c, n_masks, n_obs, n_masks), dtype=np.int8)
    for k in range(c):
        for obs in range(n_obs):
            dg = digits[obs]
            dg_excl = list(dg)
            dg_excl[k] = ERASED
            surv = [(s, ns, (out >> k) & 1) for (s, u, ns, out) in branches
                    if _obs_compatible(trellis, s, u, dg_excl)]
            for fmask in range(n_masks):
                for bmask in range(n_masks):
                    vals = {v for (s, ns, v) in surv
                            if (fmask >> s) & 1 and (bmask >> ns) & 1}
                    if not vals:
                        verdict = _NOPATH
                    elif len(vals) == 2:
                        verdict = UNRESOLVED
                    else:
                        verdict = vals.pop()
                    ext[k, fmask, obs, bmask] = verdict
                    if dg[k] != ERASED:
                        app[k, fmask, obs, bmask] = dg[k] if verdict != _NOPATH else _NOPATH
                    else:
                        app[k, fmask, obs, bmask] = verdict
    return ErasureLuts(n_states=S, c=c, trans_f=trans_f, trans_b=trans_b,
                       ext=ext, app=app, full_mask=n_masks - 1)


@njit(cache=True)
def _scan_batch(obs, trans, start):
    """Propagate state-set masks through all positions; obs is (B, N)."""
    B, N = obs.shape
    masks = np.empty((B, N + 1), dtype=np.int64)
    for b in range(B):
        m = start[b]
        masks[b, 0] = m
        for n in range(N):
            m = trans[m, obs[b, n]]
            masks[b, n + 1] = m
    return masks


def _boundary_mask(kind: str, luts: ErasureLuts) -> int:
    if kind == "known-zero":
        return 1
    if kind == "free":
        return luts.full_mask
    raise ValueError(f"unknown boundary {kind!r}")


def erasure_bcjr(trellis: Trellis, pattern: ErasurePattern,
                 boundary=("known-zero", "known-zero")) -> ExtrinsicOutcome:
    """Decode one block of observations; boundary is (left, right) of
    {"known-zero", "free"}.

    Raises InconsistentObservations if no path survives, which cannot happen
    for observations produced by a BEC acting on a codeword.
    """
    pattern = np.asarray(pattern, dtype=np.int8)
    c, N = pattern.shape
    if c != trellis.c or N < 1:
        raise ValueError("pattern shape must be (c, N) with N >= 1")
    luts = _luts(trellis)
    pow3 = 3 ** np.arange(c, dtype=np.int64)
    obs = (pattern.astype(np.int64).T @ pow3)[None, :]

    start_f = np.array([_boundary_mask(boundary[0], luts)], dtype=np.int64)
    start_b = np.array([_boundary_mask(boundary[1], luts)], dtype=np.int64)
    fmasks = _scan_batch(obs, luts.trans_f, start_f)
    bmasks = _scan_batch(obs[:, ::-1], luts.trans_b, start_b)[:, ::-1]
    if fmasks[0, -1] == 0 or bmasks[0, 0] == 0:
        raise InconsistentObservations("no surviving path")

    fm = fmasks[0, :-1]
    bm = bmasks[0, 1:]
    o = obs[0]
    ext = np.empty((c, N), dtype=np.int8)
    app = np.empty((c, N), dtype=np.int8)
    for k in range(c):
        ext[k] = luts.ext[k, fm, o, bm]
        app[k] = luts.app[k, fm, o, bm]
    if (ext == _NOPATH).any():
        raise InconsistentObservations("no surviving branch at some position")
    return ExtrinsicOutcome(extrinsic=ext, aposteriori=app)


def mc_transfer_estimate(trellis: Trellis, q, n_positions: int, trials: int,
                         seed: int):
    """Monte Carlo estimate of the extrinsic-erasure transfer function.

    Transmits the all-zero codeword (valid by linearity and BEC symmetry),
    erases stream k independently with probability q[k], decodes with free
    boundaries and returns the per-stream unresolved fraction over the central
    half of the window, plus its standard error across trials.  The outer 25%
    on each side is discarded so the estimate reflects the stationary
    interior.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (trellis.c,) or (q < 0).any() or (q > 1).any():
        raise ValueError("q must be c probabilities in [0, 1]")
    if n_positions < 50 * max(trellis.code.memory, 1):
        raise ValueError("window too short for a stationary estimate")
    if trials < 1:
        raise ValueError("need at least one trial")
    luts = _luts(trellis)
    c, N = trellis.c, n_positions

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    child_seeds = np.random.SeedSequence(seed).spawn(trials)
    erased = np.empty((trials, N, c), dtype=bool)
    for t, ss in enumerate(child_seeds):
        erased[t] = np.random.default_rng(ss).random((N, c)) < q[None, :]

    # all-zero codeword: digit is 0 when observed, ERASED otherwise
    pow3 = 3 ** np.arange(c, dtype=np.int64)
    obs = (erased.astype(np.int64) * 2) @ pow3

    start = np.full(trials, luts.full_mask, dtype=np.int64)
    fmasks = _scan_batch(obs, luts.trans_f, start)
    bmasks = _scan_batch(obs[:, ::-1], luts.trans_b, start)[:, ::-1]

    lo, hi = N // 4, N // 4 + N // 2
    fm = fmasks[:, lo:hi]
    bm = bmasks[:, lo + 1:hi + 1]
    o = obs[:, lo:hi]
    p_hat = np.empty(c)
    stderr = np.empty(c)
    for k in range(c):
        unresolved = luts.ext[k, fm, o, bm] == UNRESOLVED
        per_trial = unresolved.mean(axis=1)
        p_hat[k] = per_trial.mean()
        stderr[k] = per_trial.std(ddof=1) / np.sqrt(trials) if trials > 1 else 0.0
    return p_hat, stderr
