"""A5/1 and a family of smaller ciphers with the same three-register shape.

Registers are plain integers. Bit 0 is the low (input) end of a register and
bit ``length - 1`` is the output bit. A state packs into one word as
``r1 | r2 << l1 | r3 << (l1 + l2)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

__all__ = [
    "CipherSpec",
    "CipherState",
    "KeyCandidates",
    "A5_1",
    "toy_spec",
    "MICRO_TOY",
    "TOY",
    "majority",
    "clock",
    "advance",
    "state_from_key",
    "load_state",
    "keystream",
    "pack",
    "unpack",
    "forward_image",
    "forward_image_batch",
    "backclock_candidates",
    "rollback",
    "recover_key",
    "parse_cipher",
]


@dataclass(frozen=True)
class CipherSpec:
    reg_lengths: tuple[int, int, int]
    tap_positions: tuple[tuple[int, ...], tuple[int, ...], tuple[int, ...]]
    clock_bit: tuple[int, int, int]
    key_bits: int = 64
    frame_bits: int = 22
    mix_clocks: int = 100
    burst_bits: int = 114
    name: str = "custom"

    def __post_init__(self) -> None:
        if len(self.reg_lengths) != 3 or len(self.tap_positions) != 3 or len(self.clock_bit) != 3:
            raise ValueError("a cipher has exactly three registers")
        for n, taps, cb in zip(self.reg_lengths, self.tap_positions, self.clock_bit):
            if n < 1:
                raise ValueError(f"register length must be positive, got {n}")
            if not 0 <= cb < n:
                raise ValueError(f"clock bit {cb} outside register of length {n}")
            if not taps or any(not 0 <= t < n for t in taps):
                raise ValueError(f"taps {taps} invalid for register of length {n}")
        if self.state_width > 64:
            raise ValueError(f"state width {self.state_width} does not fit a 64-bit word")
        if self.key_bits < 1 or self.frame_bits < 0 or self.mix_clocks < 0 or self.burst_bits < 1:
            raise ValueError("key_bits, frame_bits, mix_clocks, burst_bits out of range")

    @property
    def state_width(self) -> int:
        return sum(self.reg_lengths)

    @property
    def masks(self) -> tuple[int, int, int]:
        return tuple((1 << n) - 1 for n in self.reg_lengths)  # type: ignore[return-value]

    @property
    def tap_masks(self) -> tuple[int, int, int]:
        return tuple(sum(1 << t for t in taps) for taps in self.tap_positions)  # type: ignore[return-value]

    def describe(self) -> str:
        if self.name == "a5_1":
            return "a5_1"
        return "toy:" + ",".join(str(n) for n in self.reg_lengths)


class CipherState(NamedTuple):
    r1: int
    r2: int
    r3: int


class KeyCandidates(NamedTuple):
    keys: frozenset[int]
    truncated: bool


A5_1 = CipherSpec(
    reg_lengths=(19, 22, 23),
    tap_positions=((13, 16, 17, 18), (20, 21), (7, 20, 21, 22)),
    clock_bit=(8, 10, 10),
    name="a5_1",
)


def toy_spec(l1: int, l2: int, l3: int, *, mix_clocks: int = 25,
             frame_bits: int = 8, key_bits: int | None = None) -> CipherSpec:
    """Reduced cipher: taps on the top two bits, clock bit in the middle.

    The session key is as wide as the state unless ``key_bits`` says otherwise.
    """
    lengths = (l1, l2, l3)
    if any(n < 2 for n in lengths):
        raise ValueError("toy registers need at least 2 bits")
    return CipherSpec(
        reg_lengths=lengths,
        tap_positions=tuple((n - 1, n - 2) for n in lengths),  # type: ignore[arg-type]
        clock_bit=tuple(n // 2 for n in lengths),  # type: ignore[arg-type]
        key_bits=key_bits if key_bits is not None else sum(lengths),
        frame_bits=frame_bits,
        mix_clocks=mix_clocks,
        name="toy",
    )


MICRO_TOY = toy_spec(3, 3, 3)
TOY = toy_spec(7, 8, 9)


def parse_cipher(text: str, *, mix_clocks: int | None = None) -> CipherSpec:
    """Parse ``a5_1`` or ``toy:<l1>,<l2>,<l3>``."""
    text = text.strip()
    if text == "a5_1":
        if mix_clocks is None:
            return A5_1
        return CipherSpec(A5_1.reg_lengths, A5_1.tap_positions, A5_1.clock_bit,
                          mix_clocks=mix_clocks, name="a5_1")
    if text.startswith("toy:"):
        try:
            l1, l2, l3 = (int(p) for p in text[4:].split(","))
        except ValueError:
            raise ValueError(f"bad toy cipher description {text!r}") from None
        if mix_clocks is None:
            return toy_spec(l1, l2, l3)
        return toy_spec(l1, l2, l3, mix_clocks=mix_clocks)
    raise ValueError(f"unknown cipher {text!r}")


def _parity(x: int) -> int:
    return bin(x).count("1") & 1


def majority(b1: int, b2: int, b3: int) -> int:
    return (b1 & b2) | (b1 & b3) | (b2 & b3)


def clock(spec: CipherSpec, state: CipherState) -> tuple[CipherState, int]:
    """One majority-ruled clocking. Returns the new state and its output bit."""
    regs = list(state)
    bits = [(r >> cb) & 1 for r, cb in zip(regs, spec.clock_bit)]
    maj = majority(*bits)
    out = 0
    for i in range(3):
        if bits[i] == maj:
            fb = _parity(regs[i] & spec.tap_masks[i])
            regs[i] = ((regs[i] << 1) & spec.masks[i]) | fb
        out ^= regs[i] >> (spec.reg_lengths[i] - 1)
    return CipherState(*regs), out


def advance(spec: CipherSpec, state: CipherState, n: int) -> CipherState:
    for _ in range(n):
        state, _ = clock(spec, state)
    return state


def keystream(spec: CipherSpec, state: CipherState, n: int) -> list[int]:
    """The next ``n`` output bits from ``state``, in order."""
    if n < 1:
        raise ValueError("keystream length must be at least 1")
    bits = []
    for _ in range(n):
        state, bit = clock(spec, state)
        bits.append(bit)
    return bits


def _load_clock(spec: CipherSpec, regs: list[int], bit: int) -> None:
    for i in range(3):
        fb = _parity(regs[i] & spec.tap_masks[i]) ^ bit
        regs[i] = ((regs[i] << 1) & spec.masks[i]) | fb


def load_state(spec: CipherSpec, key: int, frame: int) -> CipherState:
    """Key then frame, LSB first, all registers clocked regularly."""
    if not 0 <= key < 1 << spec.key_bits:
        raise ValueError(f"key does not fit in {spec.key_bits} bits")
    if not 0 <= frame < 1 << spec.frame_bits:
        raise ValueError(f"frame does not fit in {spec.frame_bits} bits")
    regs = [0, 0, 0]
    for i in range(spec.key_bits):
        _load_clock(spec, regs, (key >> i) & 1)
    for i in range(spec.frame_bits):
        _load_clock(spec, regs, (frame >> i) & 1)
    return CipherState(*regs)


def state_from_key(spec: CipherSpec, key: int, frame: int) -> CipherState:
    """Post-setup state: load key and frame, then discard ``mix_clocks`` outputs."""
    return advance(spec, load_state(spec, key, frame), spec.mix_clocks)


def pack(spec: CipherSpec, state: CipherState) -> int:
    l1, l2, _ = spec.reg_lengths
    for r, m in zip(state, spec.masks):
        if r & ~m:
            raise ValueError(f"register value {r:#x} too wide for {spec.describe()}")
    return state.r1 | (state.r2 << l1) | (state.r3 << (l1 + l2))


def unpack(spec: CipherSpec, word: int) -> CipherState:
    width = spec.state_width
    if word < 0 or word >> width:
        raise ValueError(f"word {word:#x} has bits above the {width}-bit state")
    l1, l2, _ = spec.reg_lengths
    m1, m2, m3 = spec.masks
    return CipherState(word & m1, (word >> l1) & m2, (word >> (l1 + l2)) & m3)


def forward_image(spec: CipherSpec, x: int) -> int:
    """First ``state_width`` keystream bits from state ``x``; bit i is keystream bit i."""
    state = unpack(spec, int(x))
    out = 0
    for i in range(spec.state_width):
        state, bit = clock(spec, state)
        out |= bit << i
    return out


def _word_dtype(spec: CipherSpec):
    return np.uint32 if spec.state_width <= 32 else np.uint64


def _shift_batch(spec: CipherSpec, k: int, r: np.ndarray) -> np.ndarray:
    dt = r.dtype.type
    fb = r >> dt(spec.tap_positions[k][0])
    for t in spec.tap_positions[k][1:]:
        fb = fb ^ (r >> dt(t))
    return ((r << dt(1)) & dt(spec.masks[k])) | (fb & dt(1))


# slices of this many states keep the working set in cache
_BATCH_SLICE = 1 << 16


def forward_image_batch(spec: CipherSpec, xs: np.ndarray) -> np.ndarray:
    """Vectorised :func:`forward_image` over an array of packed states."""
    dt = _word_dtype(spec)
    xs = np.asarray(xs).astype(dt, copy=False)
    if len(xs) <= _BATCH_SLICE:
        return _forward_image_slice(spec, xs)
    out = np.empty_like(xs)
    for i in range(0, len(xs), _BATCH_SLICE):
        out[i:i + _BATCH_SLICE] = _forward_image_slice(spec, xs[i:i + _BATCH_SLICE])
    return out


def _forward_image_slice(spec: CipherSpec, xs: np.ndarray) -> np.ndarray:
    dt = xs.dtype.type
    l1, l2, _ = spec.reg_lengths
    one = dt(1)
    regs = [xs & dt(spec.masks[0]), (xs >> dt(l1)) & dt(spec.masks[1]),
            (xs >> dt(l1 + l2)) & dt(spec.masks[2])]
    cbs = [dt(c) for c in spec.clock_bit]
    tops = [dt(n - 1) for n in spec.reg_lengths]
    out = np.zeros_like(xs)
    for i in range(spec.state_width):
        c = [(regs[k] >> cbs[k]) & one for k in range(3)]
        maj = (c[0] + c[1] + c[2]) >> one
        for k in range(3):
            regs[k] = np.where(c[k] == maj, _shift_batch(spec, k, regs[k]), regs[k])
        bit = ((regs[0] >> tops[0]) ^ (regs[1] >> tops[1]) ^ (regs[2] >> tops[2])) & one
        out |= bit << dt(i)
    return out


def _unshift_options(spec: CipherSpec, k: int, r: int, inject: int = 0) -> list[int]:
    """Register values p with ((p << 1) & mask) | (taps(p) ^ inject) == r."""
    n = spec.reg_lengths[k]
    low = r & 1
    options = []
    for hi in (0, 1):
        p = (r >> 1) | (hi << (n - 1))
        if _parity(p & spec.tap_masks[k]) ^ inject == low:
            options.append(p)
    return options


_SHIFT_SUBSETS = ((0, 1, 2), (0, 1), (0, 2), (1, 2))


def backclock_candidates(spec: CipherSpec, state: CipherState) -> set[CipherState]:
    """Every state that :func:`clock` maps onto ``state`` (possibly none)."""
    found: set[CipherState] = set()
    for moved in _SHIFT_SUBSETS:
        per_reg = []
        for k in range(3):
            if k in moved:
                per_reg.append(_unshift_options(spec, k, state[k]))
            else:
                per_reg.append([state[k]])
        for p1 in per_reg[0]:
            for p2 in per_reg[1]:
                for p3 in per_reg[2]:
                    prev = (p1, p2, p3)
                    bits = [(r >> cb) & 1 for r, cb in zip(prev, spec.clock_bit)]
                    maj = majority(*bits)
                    if tuple(k for k in range(3) if bits[k] == maj) == moved:
                        found.add(CipherState(*prev))
    return found


def rollback(spec: CipherSpec, state: CipherState, n: int, limit: int = 1 << 16) -> set[CipherState]:
    """All states that reach ``state`` after exactly ``n`` clocks.

    Raises RuntimeError if the frontier ever grows past ``limit``.
    """
    frontier = {state}
    for _ in range(n):
        nxt: set[CipherState] = set()
        for s in frontier:
            nxt |= backclock_candidates(spec, s)
        if len(nxt) > limit:
            raise RuntimeError(f"rollback frontier exceeded {limit} states")
        frontier = nxt
        if not frontier:
            break
    return frontier


def _unload_frame(spec: CipherSpec, state: CipherState, frame: int) -> CipherState:
    regs = list(state)
    for i in reversed(range(spec.frame_bits)):
        bit = (frame >> i) & 1
        for k in range(3):
            (regs[k],) = _unshift_options(spec, k, regs[k], bit)
    return CipherState(*regs)


@lru_cache(maxsize=8)
def _key_load_matrix(spec: CipherSpec) -> tuple[int, ...]:
    """Column i is the packed state reached by loading only key bit i."""
    cols = []
    for i in range(spec.key_bits):
        regs = [0, 0, 0]
        for j in range(spec.key_bits):
            _load_clock(spec, regs, int(i == j))
        cols.append(pack(spec, CipherState(*regs)))
    return tuple(cols)


def _solve_gf2(cols: Sequence[int], target: int, nvars: int) -> tuple[int | None, list[int]]:
    """Solve sum(x_i * cols[i]) == target over GF(2).

    Returns one solution (or None) and a basis of the null space, both as
    bit masks over the variables.
    """
    # rows: (row bits over variables, rhs bit), one per state bit
    width = max((c.bit_length() for c in cols), default=0)
    width = max(width, target.bit_length())
    rows = []
    for b in range(width):
        coeffs = 0
        for i, c in enumerate(cols):
            if (c >> b) & 1:
                coeffs |= 1 << i
        rows.append([coeffs, (target >> b) & 1])
    pivots: list[int] = []
    r = 0
    for var in range(nvars):
        sel = next((j for j in range(r, len(rows)) if (rows[j][0] >> var) & 1), None)
        if sel is None:
            continue
        rows[r], rows[sel] = rows[sel], rows[r]
        for j in range(len(rows)):
            if j != r and (rows[j][0] >> var) & 1:
                rows[j][0] ^= rows[r][0]
                rows[j][1] ^= rows[r][1]
        pivots.append(var)
        r += 1
    if any(row[0] == 0 and row[1] for row in rows[r:]):
        return None, []
    particular = 0
    for i, var in enumerate(pivots):
        if rows[i][1]:
            particular |= 1 << var
    free = [v for v in range(nvars) if v not in pivots]
    basis = []
    for fv in free:
        vec = 1 << fv
        for i, var in enumerate(pivots):
            if (rows[i][0] >> fv) & 1:
                vec |= 1 << var
        basis.append(vec)
    return particular, basis


def recover_key(spec: CipherSpec, state: CipherState, frame: int,
                max_candidates: int = 1 << 10) -> KeyCandidates:
    """All keys K with ``state_from_key(spec, K, frame) == state``.

    The majority-clocked warm-up is undone by depth-first back-clocking, the
    frame load by exact register unshifting, and the key load (linear in the
    key) by elimination over GF(2).
    """
    if any(spec.reg_lengths[k] - 1 not in spec.tap_positions[k] for k in range(3)):
        raise ValueError("key recovery needs the top bit of every register among its taps")
    cols = _key_load_matrix(spec)
    keys: set[int] = set()
    truncated = False

    def emit(loaded: CipherState) -> bool:
        nonlocal truncated
        particular, basis = _solve_gf2(cols, pack(spec, loaded), spec.key_bits)
        if particular is None:
            return True
        for combo in range(1 << len(basis)):
            k = particular
            for j, vec in enumerate(basis):
                if (combo >> j) & 1:
                    k ^= vec
            if k not in keys and len(keys) >= max_candidates:
                truncated = True
                return False
            keys.add(k)
        return True

    # iterative DFS so the depth never touches the recursion limit
    stack = [(state, spec.mix_clocks)]
    seen: set[tuple[CipherState, int]] = set()
    while stack:
        s, depth = stack.pop()
        if (s, depth) in seen:
            continue
        seen.add((s, depth))
        if depth == 0:
            if not emit(_unload_frame(spec, s, frame)):
                break
            continue
        for prev in backclock_candidates(spec, s):
            stack.append((prev, depth - 1))
    return KeyCandidates(frozenset(keys), truncated)
