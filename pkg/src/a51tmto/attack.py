"""Online phase: keystream windows in, internal states and session keys out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cipher import (CipherSpec, _word_dtype, forward_image_batch, keystream, pack, recover_key,
                     rollback, unpack)
from .table_store import find_many
from .tmto import Mode, _constants_array, advance_dp, advance_fixed

# upper bound on hypothesis elements processed in one vectorised pass
_BATCH_ELEMENTS = 1 << 20


class BurstTooShort(ValueError):
    pass


@dataclass(frozen=True)
class KeystreamSample:
    window: int
    clock_offset: int
    source_tag: str = ""


@dataclass
class LookupResult:
    candidates: set[int] = field(default_factory=set)
    f_evals: int = 0
    lookups: int = 0
    false_alarms: int = 0


@dataclass
class SampleOutcome:
    sample: int
    table: int
    status: str
    false_alarms: int
    f_evals: int
    lookups: int


@dataclass
class AttackReport:
    outcomes: list[SampleOutcome] = field(default_factory=list)
    f_evals: int = 0
    lookups: int = 0
    wall_time: float = 0.0
    hit: tuple[int, int] | None = None
    states: set[int] = field(default_factory=set)
    post_setup_states: set[int] = field(default_factory=set)
    keys: set[int] = field(default_factory=set)
    key_search_truncated: bool = False

    @property
    def success(self) -> bool:
        return bool(self.post_setup_states)

    def summary_lines(self, width: int) -> list[str]:
        digits = (width + 3) // 4
        lines = [f"status={'hit' if self.success else 'nohit'}"]
        if self.hit is not None:
            lines.append(f"hit_sample={self.hit[0]}")
            lines.append(f"hit_table={self.hit[1]}")
        lines += [f"state=0x{s:0{digits}x}" for s in sorted(self.states)]
        lines += [f"post_setup=0x{s:0{digits}x}" for s in sorted(self.post_setup_states)]
        lines += [f"key=0x{k:016x}" for k in sorted(self.keys)]
        if self.key_search_truncated:
            lines.append("key_search=truncated")
        lines += [
            f"samples_tried={len({o.sample for o in self.outcomes})}",
            f"false_alarms={sum(o.false_alarms for o in self.outcomes)}",
            f"f_evals={self.f_evals}",
            f"lookups={self.lookups}",
            f"wall_time={self.wall_time:.3f}",
        ]
        return lines


def pack_bits(bits: Sequence[int]) -> int:
    word = 0
    for i, b in enumerate(bits):
        word |= (b & 1) << i
    return word


def derive_samples(burst: Sequence[int], cipher: CipherSpec, tag: str = "") -> list[KeystreamSample]:
    """Every state-width window of a keystream burst, tagged with its offset."""
    w = cipher.state_width
    if len(burst) < w:
        raise BurstTooShort(f"burst of {len(burst)} bits is shorter than the {w}-bit state")
    return [KeystreamSample(pack_bits(burst[i:i + w]), i, f"{tag}@{i}" if tag else str(i))
            for i in range(len(burst) - w + 1)]


def predict_success(coverage: int, state_space: int, n_samples: int) -> float:
    """Chance that at least one of ``n_samples`` independent states is covered."""
    if not 0 <= coverage <= state_space or n_samples < 0:
        raise ValueError("need 0 <= coverage <= state_space and n_samples >= 0")
    return 1.0 - (1.0 - coverage / state_space) ** n_samples


def lookup_bound(params) -> int:
    """Worst-case forward-image count of the end-reaching walks for one window.

    Exact in FIXED mode; in DP mode it uses the maximum segment length.
    Regeneration of matched chains comes on top.
    """
    if params.mode is Mode.FIXED:
        n = params.chain_length
        return n * (n - 1) // 2
    t = params.n_colors
    return params.max_segment_steps * t * (t + 1) // 2


def _hypotheses(params) -> int:
    return params.chain_length if params.mode is Mode.FIXED else params.n_colors


def _lookup_chunk(cipher: CipherSpec, table, windows: np.ndarray, hyps: np.ndarray) -> list[LookupResult]:
    # hyps: FIXED positions or DP colors to try for every window
    params = table.params
    dt = _word_dtype(cipher)
    consts = _constants_array(params, dt)
    n = len(windows)
    w = np.asarray(windows, dtype=dt)
    t = params.n_colors
    per = len(hyps)
    hyp = np.tile(np.asarray(hyps, dtype=np.int64), n)
    widx = np.repeat(np.arange(n, dtype=np.int64), per)

    if params.mode is Mode.FIXED:
        s = params.steps_per_color
        v0 = w[widx] ^ consts[hyp // s]
        ends, evals = advance_fixed(cipher, params, v0, hyp + 1, params.chain_length)
        alive = np.ones(len(ends), dtype=bool)
    else:
        dpmask = dt((1 << params.dp_bits) - 1)
        v0 = w[widx] ^ consts[hyp]
        at_dp = (v0 & dpmask) == 0
        ends, alive, evals = advance_dp(cipher, params, v0, hyp + at_dp, np.where(at_dp, 0, 1), t)

    hit, ridx = find_many(table, ends.astype(np.uint64))
    hit &= alive
    h = np.flatnonzero(hit)
    f_evals = np.bincount(widx, weights=evals, minlength=n).astype(np.int64)
    lookups = np.bincount(widx, weights=alive, minlength=n).astype(np.int64)
    results = [LookupResult(f_evals=int(f_evals[i]), lookups=int(lookups[i])) for i in range(n)]
    if h.size == 0:
        return results

    starts = np.asarray(table.starts)[ridx[h]].astype(dt)
    hw = widx[h]
    target = w[hw]
    found: list[tuple[int, int]] = []
    if params.mode is Mode.FIXED:
        x, ev = advance_fixed(cipher, params, starts, np.zeros(len(h), dtype=np.int64), hyp[h])
        fx = forward_image_batch(cipher, x)
        ev += 1
        good = np.flatnonzero(fx == target)
        found = list(zip(hw[good].tolist(), x[good].tolist()))
    else:
        j = hyp[h]
        z = np.zeros(len(h), dtype=np.int64)
        v, _, ev = advance_dp(cipher, params, starts, z, z, j)
        dpmask = dt((1 << params.dp_bits) - 1)
        count = np.zeros(len(h), dtype=np.int64)
        active = np.ones(len(h), dtype=bool)
        while True:
            a = np.flatnonzero(active)
            if a.size == 0:
                break
            fx = forward_image_batch(cipher, v[a])
            ev[a] += 1
            m = fx == target[a]
            found += list(zip(hw[a[m]].tolist(), v[a[m]].tolist()))
            nv = fx ^ consts[j[a]]
            v[a] = nv
            count[a] += 1
            active[a[((nv & dpmask) == 0) | (count[a] >= params.max_segment_steps)]] = False
    regen = np.bincount(hw, weights=ev, minlength=n).astype(np.int64)
    for i in range(n):
        results[i].f_evals += int(regen[i])
    for i, x in found:
        results[i].candidates.add(int(x))
    hits_per_window = np.bincount(hw, minlength=n)
    good_per_window = np.zeros(n, dtype=np.int64)
    for i, _ in found:
        good_per_window[i] += 1
    for i in np.flatnonzero(hits_per_window).tolist():
        results[i].false_alarms = int(max(hits_per_window[i] - good_per_window[i], 0))
    return results


def _lookup_all(cipher: CipherSpec, table, windows: np.ndarray, hyps: np.ndarray) -> list[LookupResult]:
    step = max(1, _BATCH_ELEMENTS // len(hyps))
    out: list[LookupResult] = []
    for i in range(0, len(windows), step):
        out += _lookup_chunk(cipher, table, windows[i:i + step], hyps)
    return out


def lookup_batch(cipher: CipherSpec, table, windows, *, first_hit: bool = False) -> list[LookupResult]:
    """Look up many keystream windows in one table.

    Every hypothesis position is walked to a chain end and searched for; hits
    are regenerated from their start and kept only when the regenerated value
    really maps onto the window.

    With ``first_hit`` the hypotheses are tried one color at a time, last
    color first, and a window stops at the first color that yields a
    verified preimage. That is cheaper on hits but may leave other preimages
    of the same window unreported.
    """
    params = table.params
    if params.state_width != cipher.state_width:
        raise ValueError("table width does not match cipher")
    windows = np.asarray(windows, dtype=np.uint64)
    per = _hypotheses(params)
    if not first_hit:
        return _lookup_all(cipher, table, windows, np.arange(per, dtype=np.int64))
    out = [LookupResult() for _ in range(len(windows))]
    block = params.steps_per_color if params.mode is Mode.FIXED else 1
    active = np.arange(len(windows))
    for hi in range(per, 0, -block):
        if active.size == 0:
            break
        part = _lookup_all(cipher, table, windows[active], np.arange(hi - block, hi, dtype=np.int64))
        for i, res in zip(active.tolist(), part):
            acc = out[i]
            acc.f_evals += res.f_evals
            acc.lookups += res.lookups
            acc.false_alarms += res.false_alarms
            acc.candidates |= res.candidates
        active = np.array([i for i in active.tolist() if not out[i].candidates], dtype=np.int64)
    return out


def lookup_sample(cipher: CipherSpec, sample: KeystreamSample, table) -> set[int]:
    return lookup_batch(cipher, table, [sample.window])[0].candidates


def _replays(cipher: CipherSpec, word: int, samples: Sequence[KeystreamSample]) -> bool:
    w = cipher.state_width
    span = max(s.clock_offset for s in samples) + w
    bits = keystream(cipher, unpack(cipher, word), span)
    return all(pack_bits(bits[s.clock_offset:s.clock_offset + w]) == s.window for s in samples)


def _resolve(cipher: CipherSpec, samples: Sequence[KeystreamSample], i: int,
             candidates: set[int]) -> tuple[set[int], set[int]]:
    """Roll candidates back to offset 0 and keep what replays every sample.

    Returns the surviving post-setup states and the candidates they came from.
    """
    off = samples[i].clock_offset
    post, states = set(), set()
    for x in candidates:
        for s0 in rollback(cipher, unpack(cipher, x), off):
            word = pack(cipher, s0)
            if _replays(cipher, word, samples):
                post.add(word)
                states.add(x)
    return post, states


def _finish_keys(cipher, report, want_key, frame, max_keys):
    if want_key and report.post_setup_states:
        if frame is None:
            raise ValueError("key recovery needs the frame number")
        for word in sorted(report.post_setup_states):
            res = recover_key(cipher, unpack(cipher, word), frame, max_keys)
            report.keys |= res.keys
            report.key_search_truncated |= res.truncated


def attack(samples: Sequence[KeystreamSample], tables: Sequence, cipher: CipherSpec, *,
           want_key: bool = False, frame: int | None = None, batch_size: int = 1,
           max_keys: int = 1 << 10) -> AttackReport:
    """Samples outer, tables inner; stop at the first hit that survives replay.

    With ``batch_size > 1`` lookups for that many samples are computed
    together; the hit chosen is still the first in (sample, table) order, but
    the cost counters include the whole batch.
    """
    t0 = time.perf_counter()
    report = AttackReport()
    if not samples:
        raise ValueError("attack needs at least one sample")
    for tb in tables:
        if tb.params.state_width != cipher.state_width:
            raise ValueError("table width does not match cipher")
    if tables:
        for lo in range(0, len(samples), batch_size):
            chunk = range(lo, min(lo + batch_size, len(samples)))
            per_table = [lookup_batch(cipher, tb, [samples[i].window for i in chunk]) for tb in tables]
            for k, i in enumerate(chunk):
                for j in range(len(tables)):
                    res = per_table[j][k]
                    report.f_evals += res.f_evals
                    report.lookups += res.lookups
                    post, states = _resolve(cipher, samples, i, res.candidates) if res.candidates else (set(), set())
                    status = "found" if post else ("false_alarm" if res.false_alarms or res.candidates else "not_found")
                    report.outcomes.append(SampleOutcome(i, j, status, res.false_alarms, res.f_evals, res.lookups))
                    if post and report.hit is None:
                        report.hit = (i, j)
                        report.states = states
                        report.post_setup_states = post
                if report.hit is not None:
                    break
            if report.hit is not None:
                break
    _finish_keys(cipher, report, want_key, frame, max_keys)
    report.wall_time = time.perf_counter() - t0
    return report


def attack_many(targets: Sequence[Sequence[KeystreamSample]], tables: Sequence, cipher: CipherSpec) -> list[AttackReport]:
    """Independent attacks on many targets with lookups batched across all of them.

    Each report's counters cover all of its samples, not just those before
    the hit.
    """
    t0 = time.perf_counter()
    flat = [(ti, si) for ti, samples in enumerate(targets) for si in range(len(samples))]
    windows = [targets[ti][si].window for ti, si in flat]
    per_table = [lookup_batch(cipher, tb, windows) for tb in tables] if windows else []
    index = {pair: k for k, pair in enumerate(flat)}
    reports = []
    for ti, samples in enumerate(targets):
        report = AttackReport()
        for si in range(len(samples)):
            for j in range(len(tables)):
                res = per_table[j][index[(ti, si)]]
                report.f_evals += res.f_evals
                report.lookups += res.lookups
                if report.hit is not None:
                    continue
                post, states = _resolve(cipher, samples, si, res.candidates) if res.candidates else (set(), set())
                status = "found" if post else ("false_alarm" if res.false_alarms or res.candidates else "not_found")
                report.outcomes.append(SampleOutcome(si, j, status, res.false_alarms, res.f_evals, res.lookups))
                if post:
                    report.hit = (si, j)
                    report.states = states
                    report.post_setup_states = post
        reports.append(report)
    elapsed = time.perf_counter() - t0
    for r in reports:
        r.wall_time = elapsed / max(len(reports), 1)
    return reports
