"""Convolutional component codes from octal generator matrices, and their trellises.

Octal convention: the octal number is expanded to binary and read with the
most significant bit as the constant (D^0) coefficient, so 7 -> 1+D+D^2,
5 -> 1+D^2, 21 -> 1+D^4.  Every representable polynomial therefore has a
nonzero constant term, which is exactly what realizable feedback requires.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

__all__ = [
    "ComponentCode",
    "Trellis",
    "parse_generator",
    "build_trellis",
    "encode",
    "preset",
    "PRESETS",
]

# Built-in generator matrices: the 4-state rate-2/3 braided component code and
# the 4-state rate-1/2 recursive systematic code used for the parallel/serial
# concatenations.
PRESETS = {
    "bcc-rate23": "1 0 1/7; 0 1 5/7",
    "pcc-rate12": "1 5/7",
}


def _octal_to_poly(token: str) -> int:
    """Octal token -> polynomial bitmask with bit i = coefficient of D^i."""
    if not token or any(ch not in "01234567" for ch in token):
        raise ValueError(f"malformed octal token: {token!r}")
    value = int(token, 8)
    if value == 0:
        return 0
    bits = bin(value)[2:]          # MSB first = lowest degree first
    return int(bits[::-1], 2)


def _poly_deg(p: int) -> int:
    return p.bit_length() - 1 if p else -1


def _poly_mul(a: int, b: int) -> int:
    out = 0
    while b:
        if b & 1:
            out ^= a
        a <<= 1
        b >>= 1
    return out


def _poly_divmod(a: int, b: int) -> tuple[int, int]:
    if b == 0:
        raise ZeroDivisionError("polynomial division by zero")
    q = 0
    db = _poly_deg(b)
    while _poly_deg(a) >= db:
        shift = _poly_deg(a) - db
        q ^= 1 << shift
        a ^= b << shift
    return q, a


def _poly_gcd(a: int, b: int) -> int:
    while b:
        a, b = b, _poly_divmod(a, b)[1]
    return a if a else 1


def _poly_lcm(a: int, b: int) -> int:
    return _poly_mul(_poly_divmod(a, _poly_gcd(a, b))[0], b)


@dataclass(frozen=True)
class ComponentCode:
    """A rational-generator convolutional encoder, rate b/c.

    generator[i][j] is the (numerator, denominator) pair of entry (i, j),
    each a GF(2) polynomial bitmask.  memory is the register size of the
    realization (see build_trellis); the trellis has 2**memory states.
    """

    name: str
    b: int
    c: int
    generator: tuple[tuple[tuple[int, int], ...], ...]
    memory: int

    @property
    def n_states(self) -> int:
        return 1 << self.memory

    def systematic_streams(self) -> tuple[int, ...]:
        """Output indices that reproduce an input stream exactly (identity columns)."""
        out = []
        for j in range(self.c):
            col = [self.generator[i][j] for i in range(self.b)]
            hits = [i for i, (num, den) in enumerate(col) if num == den != 0]
            zeros = all(num == 0 for i, (num, den) in enumerate(col) if i not in hits)
            if len(hits) == 1 and zeros:
                out.append(j)
        return tuple(out)


def _column_realization(code_entries, j):
    """Observer-form register for output column j: (den, nums per input, cells)."""
    dens = [den for (num, den) in code_entries if num != 0]
    den = 1
    for d in dens:
        den = _poly_lcm(den, d)
    nums = []
    for num, d in code_entries:
        scale, rem = _poly_divmod(den, d)
        assert rem == 0
        nums.append(_poly_mul(num, scale))
    nu = max([_poly_deg(den)] + [_poly_deg(n) for n in nums if n] + [0])
    return den, nums, nu


def parse_generator(spec: str, name: str = "") -> ComponentCode:
    """Parse an octal generator-matrix string into a ComponentCode.

    Grammar: rows separated by ';', entries by whitespace (commas and
    parentheses are ignored), entry = OCTAL or OCTAL/OCTAL.  A missing
    denominator defaults to 1.
    """
    cleaned = spec.replace("(", " ").replace(")", " ").replace(",", " ")
    rows = [r.strip() for r in cleaned.split(";")]
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError("empty generator matrix")
    matrix = []
    for r in rows:
        entries = []
        for tok in r.split():
            if "/" in tok:
                num_s, den_s = tok.split("/", 1)
                num, den = _octal_to_poly(num_s), _octal_to_poly(den_s)
            else:
                num, den = _octal_to_poly(tok), 1
            if den == 0 or not den & 1:
                raise ValueError(f"denominator without nonzero constant term: {tok!r}")
            if num == 0:
                den = 1
            else:
                g = _poly_gcd(num, den)
                num, den = _poly_divmod(num, g)[0], _poly_divmod(den, g)[0]
            entries.append((num, den))
        matrix.append(tuple(entries))
    c = len(matrix[0])
    if any(len(r) != c for r in matrix):
        raise ValueError("generator rows have unequal length")
    b = len(matrix)
    if b > c:
        raise ValueError("more inputs than outputs")
    memory = 0
    for j in range(c):
        _, _, nu = _column_realization([matrix[i][j] for i in range(b)], j)
        memory += nu
    return ComponentCode(name=name or spec, b=b, c=c,
                         generator=tuple(matrix), memory=memory)


def preset(name: str) -> ComponentCode:
    return parse_generator(PRESETS[name], name=name)


@dataclass(frozen=True, eq=False)
class Trellis:
    """Branch-labeled state machine of a ComponentCode.

    next_state[s, u] and outputs[s, u] map (state, input tuple) to the next
    state and the c output bits packed as a bitmask (bit k = stream k).
    Deterministic by construction: exactly one branch per (state, input).
    """

    code: ComponentCode
    n_states: int
    b: int
    c: int
    next_state: np.ndarray
    outputs: np.ndarray
    stream_roles: tuple[str, ...]
    _term_input: np.ndarray = field(repr=False, default=None)

    @property
    def n_inputs(self) -> int:
        return 1 << self.b

    def output_bit(self, state: int, u: int, stream: int) -> int:
        return (int(self.outputs[state, u]) >> stream) & 1


@lru_cache(maxsize=None)
def build_trellis(code: ComponentCode) -> Trellis:
    """Realize the code as a trellis, state 0 = all-zero register.

    Each output column is realized by its own observer-form register over
    the column's common denominator; identity columns need no cells.  The
    total register size equals code.memory, so the paper's rate-2/3 code
    gets the 4-state trellis its generator calls for.
    """
    b, c = code.b, code.c
    columns = []
    offset = 0
    for j in range(c):
        den, nums, nu = _column_realization([code.generator[i][j] for i in range(b)], j)
        den_taps = [(den >> l) & 1 for l in range(nu + 1)]
        num_taps = [[(n >> l) & 1 for l in range(nu + 1)] for n in nums]
        columns.append((offset, nu, den_taps, num_taps))
        offset += nu
    memory = offset
    n_states = 1 << memory
    n_inputs = 1 << b

    next_state = np.zeros((n_states, n_inputs), dtype=np.int64)
    outputs = np.zeros((n_states, n_inputs), dtype=np.int64)
    for s in range(n_states):
        for u in range(n_inputs):
            ubits = [(u >> i) & 1 for i in range(b)]
            ns = 0
            out = 0
            for j, (off, nu, den_taps, num_taps) in enumerate(columns):
                cells = [(s >> (off + l)) & 1 for l in range(nu)]
                y = sum(num_taps[i][0] & ubits[i] for i in range(b)) & 1
                if nu:
                    y ^= cells[0]
                out |= y << j
                for l in range(nu):
                    nxt = cells[l + 1] if l + 1 < nu else 0
                    for i in range(b):
                        nxt ^= num_taps[i][l + 1] & ubits[i]
                    nxt ^= den_taps[l + 1] & y
                    ns |= nxt << (off + l)
            next_state[s, u] = ns
            outputs[s, u] = out

    sys_streams = code.systematic_streams()
    roles = []
    for j in range(c):
        if j in sys_streams:
            roles.append("info" if b == 1 else f"info-{j + 1}")
        else:
            roles.append("parity")

    # Reachability from state 0 within `memory` steps (spec invariant).
    reach = {0}
    for _ in range(memory):
        reach |= {int(next_state[s, u]) for s in reach for u in range(n_inputs)}
    if len(reach) != n_states:
        raise ValueError("degenerate generator: trellis states unreachable from zero")

    # Per-state input driving the register one BFS step closer to zero,
    # used by encode(..., terminate=True).
    term = np.full(n_states, -1, dtype=np.int64)
    dist = np.full(n_states, -1, dtype=np.int64)
    dist[0] = 0
    frontier = [0]
    while frontier:
        nxt_frontier = []
        for t in frontier:
            for s in range(n_states):
                for u in range(n_inputs):
                    if next_state[s, u] == t and dist[s] < 0:
                        dist[s] = dist[t] + 1
                        term[s] = u
                        nxt_frontier.append(s)
        frontier = nxt_frontier

    return Trellis(code=code, n_states=n_states, b=b, c=c,
                   next_state=next_state, outputs=outputs,
                   stream_roles=tuple(roles), _term_input=term)


def encode(trellis: Trellis, inputs, initial_state: int = 0,
           terminate: bool = False):
    """Walk the trellis over b input streams; returns (c output streams, final state).

    With terminate=True, at most `memory` extra steps are appended whose
    inputs drive the register to zero; the returned streams include them.
    """
    inputs = np.asarray(inputs, dtype=np.int64)
    if inputs.ndim == 1:
        inputs = inputs[None, :]
    if inputs.shape[0] != trellis.b:
        raise ValueError(f"expected {trellis.b} input streams, got {inputs.shape[0]}")
    n = inputs.shape[1]
    if trellis.b > 1 and len({inputs.shape[1]}) != 1:
        raise ValueError("input streams must have equal length")

    u_words = np.zeros(n, dtype=np.int64)
    for i in range(trellis.b):
        u_words |= (inputs[i] & 1) << i

    out = np.zeros((trellis.c, n), dtype=np.int64)
    s = int(initial_state)
    for k in range(n):
        u = int(u_words[k])
        w = int(trellis.outputs[s, u])
        for j in range(trellis.c):
            out[j, k] = (w >> j) & 1
        s = int(trellis.next_state[s, u])

    if terminate:
        tail = []
        guard = trellis.code.memory + 1
        while s != 0:
            guard -= 1
            if guard < 0:
                raise ValueError("register cannot be driven to zero")
            u = int(trellis._term_input[s])
            if u < 0:
                raise ValueError("register cannot be driven to zero")
            w = int(trellis.outputs[s, u])
            tail.append([(w >> j) & 1 for j in range(trellis.c)])
            s = int(trellis.next_state[s, u])
        if tail:
            out = np.concatenate([out, np.array(tail, dtype=np.int64).T], axis=1)
    return out, s
