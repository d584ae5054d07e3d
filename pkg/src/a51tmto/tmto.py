"""Rainbow chains over the cipher's state-to-keystream map.

A chain alternates the cipher's forward image with a per-color XOR reduction.
Only ``(start, end)`` survives; everything else is recomputed on demand.

Two segment disciplines are supported. FIXED runs ``steps_per_color`` links
per color. DP keeps stepping within a color until the value has ``dp_bits``
low zero bits (a distinguished point), then moves to the next color.

The scalar functions here define behaviour; the ``*_batch`` engines are
numpy versions of the same recurrences used for bulk work.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from functools import cached_property

import numpy as np

from .cipher import CipherSpec, _word_dtype, forward_image, forward_image_batch

log = logging.getLogger(__name__)

MASK64 = (1 << 64) - 1
COVERAGE_GUARD_BITS = 28
DP_RETRIES = 4


class Mode(IntEnum):
    FIXED = 0
    DP = 1


class WidthExceedsGuard(ValueError):
    pass


def mix64(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class TableParams:
    state_width: int
    n_colors: int
    steps_per_color: int = 1
    dp_bits: int = 0
    max_segment_steps: int = 0
    mode: Mode = Mode.FIXED
    table_id: int = 0
    reduction_seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if not 1 <= self.state_width <= 64:
            raise ValueError(f"state width {self.state_width} outside 1..64")
        if self.n_colors < 1:
            raise ValueError("n_colors must be at least 1")
        if self.mode is Mode.FIXED and self.steps_per_color < 1:
            raise ValueError("FIXED mode needs steps_per_color >= 1")
        if self.mode is Mode.DP:
            if not 1 <= self.dp_bits < self.state_width:
                raise ValueError(f"dp_bits must be in 1..{self.state_width - 1}")
            if self.max_segment_steps < 1 << self.dp_bits:
                raise ValueError("max_segment_steps must be at least 2**dp_bits")
        if not 0 <= self.table_id <= MASK64 or not 0 <= self.reduction_seed <= MASK64:
            raise ValueError("table_id and reduction_seed are unsigned 64-bit values")

    @property
    def mask(self) -> int:
        return (1 << self.state_width) - 1

    @property
    def chain_length(self) -> int:
        """Links per chain in FIXED mode."""
        return self.n_colors * self.steps_per_color

    @cached_property
    def constants(self) -> tuple[int, ...]:
        return tuple(color_constant(self, c) for c in range(self.n_colors))

    def with_table_id(self, table_id: int) -> "TableParams":
        return TableParams(self.state_width, self.n_colors, self.steps_per_color, self.dp_bits,
                           self.max_segment_steps, self.mode, table_id, self.reduction_seed)

    def is_distinguished(self, x: int) -> bool:
        return x & ((1 << self.dp_bits) - 1) == 0


@dataclass(frozen=True, order=True)
class ChainRecord:
    start: int
    end: int


@dataclass
class RainbowTable:
    """In-memory table, sorted by end with unique ends."""

    params: TableParams
    ends: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return len(self.ends)

    def records(self) -> list[ChainRecord]:
        return [ChainRecord(int(s), int(e)) for s, e in zip(self.starts, self.ends)]


@dataclass
class BuildReport:
    requested: int
    generated: int = 0
    rejected: int = 0
    lost: int = 0
    merged: int = 0
    final: int = 0
    f_evals: int = 0
    wall_time: float = 0.0
    segment_lengths: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64), repr=False)

    @property
    def chains_per_second(self) -> float:
        return self.generated / self.wall_time if self.wall_time > 0 else float("inf")


def color_constant(params: TableParams, color: int) -> int:
    return mix64(params.reduction_seed ^ ((params.table_id << 32) + color))


def reduction(params: TableParams, color: int, x: int) -> int:
    if not 0 <= color < params.n_colors:
        raise IndexError(f"color {color} outside 0..{params.n_colors - 1}")
    return (x ^ params.constants[color]) & params.mask


def step(cipher: CipherSpec, params: TableParams, color: int, x: int) -> int:
    return reduction(params, color, forward_image(cipher, x))


def _check_width(cipher: CipherSpec, params: TableParams) -> None:
    if cipher.state_width != params.state_width:
        raise ValueError(f"table width {params.state_width} does not match cipher width {cipher.state_width}")


def chain_walk(cipher: CipherSpec, params: TableParams, start: int) -> list[tuple[int, int, int]] | None:
    """Every value that enters the forward image, as ``(color, step, value)``.

    Returns None when a DP segment overflows.
    """
    _check_width(cipher, params)
    out = []
    x = start
    for color in range(params.n_colors):
        k = 0
        while True:
            out.append((color, k, x))
            x = step(cipher, params, color, x)
            k += 1
            if params.mode is Mode.FIXED:
                if k == params.steps_per_color:
                    break
            elif params.is_distinguished(x):
                break
            elif k >= params.max_segment_steps:
                return None
    out.append((params.n_colors, 0, x))
    return out


def generate_chain(cipher: CipherSpec, params: TableParams, start: int) -> ChainRecord | None:
    """Walk one chain from ``start``; None means the chain was rejected."""
    if not 0 <= start <= params.mask:
        raise ValueError(f"start {start:#x} outside the state space")
    walk = chain_walk(cipher, params, start)
    if walk is None:
        return None
    return ChainRecord(start, walk[-1][2])


# --- vectorised engines ---------------------------------------------------

def _constants_array(params: TableParams, dtype) -> np.ndarray:
    return np.array([c & params.mask for c in params.constants], dtype=dtype)


def advance_fixed(cipher: CipherSpec, params: TableParams, values: np.ndarray, pos: np.ndarray,
                  stop, trace: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Step FIXED-mode chain values from position ``pos`` up to ``stop``.

    Position p is the p-th value entering the forward image; its link uses
    color ``p // steps_per_color``. Returns the values and per-element
    forward-image counts. ``trace`` collects every value that was stepped.
    """
    dt = _word_dtype(cipher)
    consts = _constants_array(params, dt)
    v = np.array(values, dtype=dt)
    p = np.array(pos, dtype=np.int64)
    stop = np.broadcast_to(np.asarray(stop, dtype=np.int64), p.shape)
    evals = np.zeros(len(v), dtype=np.int64)
    while True:
        act = np.flatnonzero(p < stop)
        if act.size == 0:
            break
        x = v[act]
        if trace is not None:
            trace.append(x)
        v[act] = forward_image_batch(cipher, x) ^ consts[p[act] // params.steps_per_color]
        p[act] += 1
        evals[act] += 1
    return v, evals


def advance_dp(cipher: CipherSpec, params: TableParams, values: np.ndarray, colors: np.ndarray,
               counts: np.ndarray, stop_color, trace: list | None = None,
               seg_lengths: list | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Step DP-mode chain values until each reaches color ``stop_color``.

    ``counts`` is the number of links already taken in the current segment.
    Returns values, an ``alive`` mask (False where a segment overflowed) and
    per-element forward-image counts.
    """
    dt = _word_dtype(cipher)
    consts = _constants_array(params, dt)
    dpmask = dt((1 << params.dp_bits) - 1)
    v = np.array(values, dtype=dt)
    c = np.array(colors, dtype=np.int64)
    n = np.array(counts, dtype=np.int64)
    stop = np.broadcast_to(np.asarray(stop_color, dtype=np.int64), c.shape)
    alive = np.ones(len(v), dtype=bool)
    evals = np.zeros(len(v), dtype=np.int64)
    while True:
        act = np.flatnonzero(alive & (c < stop))
        if act.size == 0:
            break
        x = v[act]
        if trace is not None:
            trace.append(x)
        y = forward_image_batch(cipher, x) ^ consts[c[act]]
        v[act] = y
        n[act] += 1
        evals[act] += 1
        hit = (y & dpmask) == 0
        done = act[hit]
        if seg_lengths is not None:
            seg_lengths.append(n[done].copy())
        c[done] += 1
        n[done] = 0
        over = act[~hit]
        alive[over[n[over] >= params.max_segment_steps]] = False
    return v, alive, evals


def generate_chains_batch(cipher: CipherSpec, params: TableParams, starts: np.ndarray,
                          seg_lengths: list | None = None) -> tuple[np.ndarray, np.ndarray, int]:
    """Ends, success mask and forward-image count for many starts at once."""
    _check_width(cipher, params)
    starts = np.asarray(starts)
    zeros = np.zeros(len(starts), dtype=np.int64)
    if params.mode is Mode.FIXED:
        ends, evals = advance_fixed(cipher, params, starts, zeros, params.chain_length)
        ok = np.ones(len(starts), dtype=bool)
    else:
        ends, ok, evals = advance_dp(cipher, params, starts, zeros, zeros, params.n_colors,
                                     seg_lengths=seg_lengths)
    return ends.astype(np.uint64), ok, int(evals.sum())


def _generate_chunk(args):
    cipher, params, starts, want_segments = args
    segs: list | None = [] if want_segments else None
    ends, ok, evals = generate_chains_batch(cipher, params, starts, seg_lengths=segs)
    seg = np.concatenate(segs) if segs else np.zeros(0, dtype=np.int64)
    return ends, ok, evals, seg


# --- table construction ---------------------------------------------------

class StartSampler:
    """Seeded source of distinct random chain starts."""

    def __init__(self, width: int, seed: int, table_id: int = 0):
        self.width = width
        self.mask = (1 << width) - 1
        self.rng = np.random.Generator(np.random.PCG64([seed & MASK64, table_id & MASK64]))
        self.used: set[int] = set()

    def draw(self, n: int) -> np.ndarray:
        if len(self.used) + n > 1 << self.width:
            raise ValueError(f"cannot draw {n} more distinct starts from a {self.width}-bit space")
        out: list[int] = []
        while len(out) < n:
            raw = self.rng.bit_generator.random_raw(max(2 * (n - len(out)), 16))
            for x in (raw & np.uint64(self.mask)).tolist():
                if x not in self.used:
                    self.used.add(x)
                    out.append(x)
                    if len(out) == n:
                        break
        return np.array(out, dtype=np.uint64)


def dedup_sorted(ends: np.ndarray, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sort by end; for a repeated end keep only the smallest start."""
    ends = np.asarray(ends, dtype=np.uint64)
    starts = np.asarray(starts, dtype=np.uint64)
    order = np.lexsort((starts, ends))
    ends, starts = ends[order], starts[order]
    keep = np.ones(len(ends), dtype=bool)
    keep[1:] = ends[1:] != ends[:-1]
    return ends[keep], starts[keep]


def build_table(cipher: CipherSpec, params: TableParams, n_chains: int, seed: int = 0, *,
                workers: int = 1, starts=None, chunk_size: int = 1 << 15) -> tuple[RainbowTable, BuildReport]:
    """Generate ``n_chains`` chains, sort by end and drop merged duplicates.

    Starts come from a sampler seeded by ``(seed, table_id)`` unless given
    explicitly. Rejected DP chains get fresh starts up to ``DP_RETRIES``
    times. The result does not depend on ``workers`` or ``chunk_size``.
    """
    _check_width(cipher, params)
    if n_chains < 1 and starts is None:
        raise ValueError("n_chains must be at least 1")
    t0 = time.perf_counter()
    sampler = StartSampler(params.state_width, seed, params.table_id)
    if starts is None:
        pending = sampler.draw(n_chains)
    else:
        pending = np.asarray(starts, dtype=np.uint64)
        if len(set(pending.tolist())) != len(pending):
            raise ValueError("explicit starts must be distinct")
        sampler.used.update(pending.tolist())
        n_chains = len(pending)
    report = BuildReport(requested=n_chains)
    good_ends, good_starts, segs = [], [], []
    want_segments = params.mode is Mode.DP
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for attempt in range(DP_RETRIES + 1):
            chunks = [(cipher, params, pending[i:i + chunk_size], want_segments)
                      for i in range(0, len(pending), chunk_size)]
            results = list(pool.map(_generate_chunk, chunks)) if pool else [_generate_chunk(c) for c in chunks]
            failed = []
            for (_, _, block, _), (ends, ok, evals, seg) in zip(chunks, results):
                report.f_evals += evals
                good_ends.append(ends[ok])
                good_starts.append(block[ok])
                failed.append(block[~ok])
                segs.append(seg)
            n_failed = sum(len(f) for f in failed)
            report.rejected += n_failed
            if n_failed == 0:
                break
            if attempt == DP_RETRIES:
                report.lost = n_failed
                break
            try:
                pending = sampler.draw(n_failed)
            except ValueError:
                report.lost = n_failed
                break
    finally:
        if pool:
            pool.shutdown()
    ends = np.concatenate(good_ends) if good_ends else np.zeros(0, dtype=np.uint64)
    sts = np.concatenate(good_starts) if good_starts else np.zeros(0, dtype=np.uint64)
    report.generated = len(ends)
    ends, sts = dedup_sorted(ends, sts)
    report.final = len(ends)
    report.merged = report.generated - report.final
    report.segment_lengths = np.concatenate(segs) if segs else np.zeros(0, dtype=np.int64)
    report.wall_time = time.perf_counter() - t0
    log.info("table %d: %d requested, %d generated, %d rejected, %d merged, %d kept",
             params.table_id, report.requested, report.generated, report.rejected,
             report.merged, report.final)
    return RainbowTable(params, ends, sts), report


def coverage_values(cipher: CipherSpec, params: TableParams, starts) -> np.ndarray:
    """Sorted distinct values that enter the forward image anywhere in the chains."""
    starts = np.asarray(starts)
    trace: list = []
    zeros = np.zeros(len(starts), dtype=np.int64)
    if params.mode is Mode.FIXED:
        advance_fixed(cipher, params, starts, zeros, params.chain_length, trace=trace)
    else:
        advance_dp(cipher, params, starts, zeros, zeros, params.n_colors, trace=trace)
    if not trace:
        return np.zeros(0, dtype=np.uint64)
    return np.unique(np.concatenate(trace)).astype(np.uint64)


def coverage(cipher: CipherSpec, params: TableParams, table, guard_bits: int = COVERAGE_GUARD_BITS) -> int:
    """Exact number of distinct states the table can recover."""
    _check_width(cipher, params)
    if params.state_width > guard_bits:
        raise WidthExceedsGuard(f"state width {params.state_width} exceeds enumeration guard {guard_bits}")
    return len(coverage_values(cipher, params, np.asarray(table.starts)))
