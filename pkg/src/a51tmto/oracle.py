"""Ground truth for small state spaces.

Nothing here calls the chain-stepping code in :mod:`a51tmto.tmto`. The
forward image is tabulated by a separate vectorised simulator and chains are
re-walked by indexing into that table, so agreement between the two paths
is a meaningful check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .attack import KeystreamSample, attack_many, pack_bits, predict_success
from .cipher import CipherSpec, CipherState, clock, keystream, unpack
from .tmto import Mode, TableParams, WidthExceedsGuard, build_table

ENUMERATION_GUARD_BITS = 28
BACKCLOCK_GUARD_BITS = 12


class CollisionNotFound(LookupError):
    pass


def _guard(width: int, limit: int = ENUMERATION_GUARD_BITS) -> None:
    if width > limit:
        raise WidthExceedsGuard(f"state width {width} exceeds enumeration guard {limit}")


def _dtype(width: int):
    return np.uint32 if width <= 32 else np.uint64


@dataclass
class ImageTable:
    spec: CipherSpec
    images: np.ndarray

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, x: int) -> int:
        return int(self.images[x])


def _images_of(spec: CipherSpec, xs: np.ndarray) -> np.ndarray:
    # one boolean "moves" mask per register and popcount parity for feedback
    dt = xs.dtype.type
    offs = (0, spec.reg_lengths[0], spec.reg_lengths[0] + spec.reg_lengths[1])
    regs = [(xs >> dt(o)) & dt((1 << n) - 1) for o, n in zip(offs, spec.reg_lengths)]
    clk = [dt(1 << b) for b in spec.clock_bit]
    top = [dt(1 << (n - 1)) for n in spec.reg_lengths]
    tapm = [dt(sum(1 << t for t in taps)) for taps in spec.tap_positions]
    lowm = [dt((1 << n) - 1) for n in spec.reg_lengths]
    out = np.zeros_like(xs)
    for i in range(spec.state_width):
        a, b, c = ((regs[k] & clk[k]) != 0 for k in range(3))
        maj = (a & b) | (a & c) | (b & c)
        for k, bit in enumerate((a, b, c)):
            moves = bit == maj
            par = (np.bitwise_count(regs[k] & tapm[k]) & 1).astype(dt)
            shifted = ((regs[k] << dt(1)) | par) & lowm[k]
            np.copyto(regs[k], shifted, where=moves)
        o = ((regs[0] & top[0]) != 0) ^ ((regs[1] & top[1]) != 0) ^ ((regs[2] & top[2]) != 0)
        out |= o.astype(dt) << dt(i)
    return out


def build_image_table(spec: CipherSpec, guard_bits: int = ENUMERATION_GUARD_BITS,
                      chunk: int = 1 << 16) -> ImageTable:
    """Forward image of every state, by exhaustive evaluation."""
    _guard(spec.state_width, guard_bits)
    n = 1 << spec.state_width
    dt = _dtype(spec.state_width)
    images = np.empty(n, dtype=dt)
    for lo in range(0, n, chunk):
        images[lo:lo + chunk] = _images_of(spec, np.arange(lo, min(lo + chunk, n), dtype=dt))
    return ImageTable(spec, images)


def _splitmix_finalize(x: int) -> int:
    m = 0xFFFFFFFFFFFFFFFF
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & m
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & m
    x ^= x >> 31
    return x


def reduction_constants(params: TableParams) -> np.ndarray:
    mask = (1 << params.state_width) - 1
    ks = [_splitmix_finalize(params.reduction_seed ^ ((params.table_id << 32) + c)) & mask
          for c in range(params.n_colors)]
    return np.array(ks, dtype=_dtype(params.state_width))


def walk_fixed(params: TableParams, starts, image_table: ImageTable) -> np.ndarray:
    """Matrix of chain values: column p is position p, the last column is the end."""
    if params.mode is not Mode.FIXED:
        raise ValueError("walk_fixed needs a FIXED-mode table")
    ks = reduction_constants(params)
    img = image_table.images
    length = params.n_colors * params.steps_per_color
    out = np.empty((len(starts), length + 1), dtype=img.dtype)
    out[:, 0] = np.asarray(starts, dtype=img.dtype)
    for p in range(length):
        out[:, p + 1] = img[out[:, p]] ^ ks[p // params.steps_per_color]
    return out


def walk_dp(params: TableParams, start: int, image_table: ImageTable) -> list[tuple[int, int, int]] | None:
    """One DP-mode chain as (color, step, value) triples, end last; None if rejected."""
    ks = reduction_constants(params)
    img = image_table.images
    low = (1 << params.dp_bits) - 1
    x = int(start)
    out = []
    for color in range(params.n_colors):
        for k in range(params.max_segment_steps):
            out.append((color, k, x))
            x = int(img[x] ^ ks[color])
            if x & low == 0:
                break
        else:
            return None
    out.append((params.n_colors, 0, x))
    return out


def _covered_mask(params: TableParams, starts, image_table: ImageTable) -> np.ndarray:
    seen = np.zeros(len(image_table), dtype=bool)
    starts = np.asarray(starts, dtype=image_table.images.dtype)
    if len(starts) == 0:
        return seen
    if params.mode is Mode.FIXED:
        walk = walk_fixed(params, starts, image_table)
        seen[walk[:, :-1].ravel()] = True
        return seen
    ks = reduction_constants(params)
    img = image_table.images
    low = image_table.images.dtype.type((1 << params.dp_bits) - 1)
    v = starts.copy()
    color = np.zeros(len(v), dtype=np.int64)
    run = np.zeros(len(v), dtype=np.int64)
    while True:
        live = (color < params.n_colors) & (run < params.max_segment_steps)
        if not live.any():
            break
        seen[v[live]] = True
        v[live] = img[v[live]] ^ ks[color[live]]
        run[live] += 1
        done = live & ((v & low) == 0)
        color[done] += 1
        run[done] = 0
    return seen


def exact_coverage(params: TableParams, table, image_table: ImageTable) -> int:
    """Distinct states entering the forward image across all stored chains."""
    _guard(params.state_width)
    return int(_covered_mask(params, np.asarray(table.starts), image_table).sum())


def union_coverage(tables, image_table: ImageTable) -> np.ndarray:
    seen = np.zeros(len(image_table), dtype=bool)
    for t in tables:
        seen |= _covered_mask(t.params, np.asarray(t.starts), image_table)
    return seen


@dataclass(frozen=True)
class CollisionPair:
    start_a: int
    start_b: int
    color: int
    step: int
    color_b: int | None = None
    step_b: int | None = None


def find_collision_pairs(params: TableParams, image_table: ImageTable, *, n_chains: int = 4096,
                         seed: int = 0, cross_color: bool = False, limit: int = 20) -> list[CollisionPair]:
    """Search random FIXED-mode chains for coinciding values.

    Same-color pairs first meet at the same (color, step). Cross-color pairs
    share a value at positions of different colors but never share a value
    at the same position.
    """
    _guard(params.state_width)
    if params.mode is not Mode.FIXED:
        raise ValueError("collision search walks FIXED-mode chains")
    n_chains = min(n_chains, len(image_table))
    rng = np.random.default_rng(seed)
    starts = rng.choice(len(image_table), size=n_chains, replace=False).astype(image_table.images.dtype)
    walk = walk_fixed(params, starts, image_table)
    s = params.steps_per_color
    length = walk.shape[1] - 1
    pairs: list[CollisionPair] = []
    if not cross_color:
        for p in range(1, length):
            col, prev = walk[:, p], walk[:, p - 1]
            order = np.argsort(col, kind="stable")
            sc = col[order]
            groups = np.flatnonzero(sc[1:] == sc[:-1])
            for g in groups:
                a, b = int(order[g]), int(order[g + 1])
                if prev[a] != prev[b]:
                    sa, sb = sorted((int(starts[a]), int(starts[b])))
                    pairs.append(CollisionPair(sa, sb, p // s, p % s))
                    if len(pairs) >= limit:
                        return pairs
        return pairs
    vals = walk[:, :length].ravel()
    rows = np.repeat(np.arange(n_chains), length)
    pos = np.tile(np.arange(length), n_chains)
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    bounds = np.flatnonzero(np.diff(sv)) + 1
    for grp in np.split(order, bounds):
        if len(grp) < 2:
            continue
        for i, j in combinations(grp.tolist(), 2):
            ra, rb = int(rows[i]), int(rows[j])
            pa, pb = int(pos[i]), int(pos[j])
            if ra == rb or pa // s == pb // s:
                continue
            if np.any(walk[ra] == walk[rb]):
                continue
            pairs.append(CollisionPair(int(starts[ra]), int(starts[rb]), pa // s, pa % s, pb // s, pb % s))
            if len(pairs) >= limit:
                return pairs
            break
    return pairs


def find_collision_pair(params: TableParams, image_table: ImageTable, **kw) -> CollisionPair:
    pairs = find_collision_pairs(params, image_table, limit=1, **kw)
    if not pairs:
        raise CollisionNotFound("no collision within the search budget")
    return pairs[0]


def exhaustive_predecessors(spec: CipherSpec) -> dict[CipherState, set[CipherState]]:
    """Preimage set of every state under one clocking, by full enumeration."""
    _guard(spec.state_width, BACKCLOCK_GUARD_BITS)
    pre: dict[CipherState, set[CipherState]] = {unpack(spec, w): set() for w in range(1 << spec.state_width)}
    for w in range(1 << spec.state_width):
        s = unpack(spec, w)
        pre[clock(spec, s)[0]].add(s)
    return pre


@dataclass
class ExperimentResult:
    empirical: float
    predicted: float
    stderr: float
    coverage: int
    state_space: int
    successes: int
    n_targets: int

    @property
    def deviation(self) -> float:
        """Distance between empirical and predicted in standard errors."""
        if self.stderr == 0:
            return 0.0 if self.empirical == self.predicted else math.inf
        return abs(self.empirical - self.predicted) / self.stderr


def success_rate_experiment(cipher: CipherSpec, params: TableParams, n_tables: int, chains_per_table: int,
                            n_targets: int, samples_per_target: int, seed: int = 0, *,
                            image_table: ImageTable | None = None, workers: int = 1,
                            tables=None) -> ExperimentResult:
    """Empirical attack success against the coverage-based prediction.

    Each target is a random post-setup state; its samples are keystream
    windows at distinct random offsets inside one burst. A target counts as
    broken when the attack returns its true post-setup state.
    """
    _guard(cipher.state_width)
    if image_table is None:
        image_table = build_image_table(cipher)
    if tables is None:
        tables = []
        if chains_per_table > 0:
            for i in range(n_tables):
                tb, _ = build_table(cipher, params.with_table_id(i), chains_per_table, seed, workers=workers)
                tables.append(tb)
    n_states = 1 << cipher.state_width
    cov = int(union_coverage(tables, image_table).sum())
    predicted = predict_success(cov, n_states, samples_per_target)
    rng = np.random.default_rng([seed, 0x5EED])
    w = cipher.state_width
    n_windows = cipher.burst_bits - w + 1
    if samples_per_target > n_windows:
        raise ValueError(f"a burst only has {n_windows} windows")
    truth, targets = [], []
    for _ in range(n_targets):
        s0 = int(rng.integers(n_states))
        bits = keystream(cipher, unpack(cipher, s0), cipher.burst_bits)
        offs = sorted(rng.choice(n_windows, size=samples_per_target, replace=False).tolist())
        truth.append(s0)
        targets.append([KeystreamSample(pack_bits(bits[o:o + w]), o) for o in offs])
    if tables and samples_per_target:
        reports = attack_many(targets, tables, cipher)
        wins = sum(s0 in r.post_setup_states for s0, r in zip(truth, reports))
    else:
        wins = 0
    empirical = wins / n_targets if n_targets else 0.0
    stderr = math.sqrt(predicted * (1 - predicted) / n_targets) if n_targets else 0.0
    return ExperimentResult(empirical, predicted, stderr, cov, n_states, wins, n_targets)
