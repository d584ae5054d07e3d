import random

import pytest
from hypothesis import given, settings, strategies as st

from a51tmto.cipher import (A5_1, MICRO_TOY, TOY, CipherState, advance, backclock_candidates, clock,
                            forward_image, keystream, load_state, majority, pack, parse_cipher,
                            recover_key, rollback, state_from_key, toy_spec, unpack)
from a51tmto.oracle import exhaustive_predecessors
from reference_a51 import _majority_clock, _setup, reference_keystream

# 228-bit outputs of the straight-line reference simulator, hex MSB first
# (the final nibble carries 4 padding bits)
KAT = [
    (0xEFCDAB8967452312, 0x134, "534eaa582fe8151ab6e1855a728c093f4d68d757ed949b4cbe41b7c6b0"),
    (0x1, 0x0, "ea36ac11f8f23f48be6ab439a068c9a349eaf9adbf52787f0da11890a0"),
    (0xFFFFFFFFFFFFFFFF, 0x3FFFFF, "9ecc0c773fe335b41c1282205df9de10dbf11610865bae850a75bf6860"),
    (0x0123456789ABCDEF, 0x2A5F1, "d78d82bd597d013afb0e8b2c06be05fd9c250b030231b1d8f83dbf5e40"),
    (0xDEADBEEFCAFEF00D, 0x1, "1e6da5de34fc119b4d4b835efeb75c65764f086aa03dc3d9811e892d20"),
    (0x8000000000000000, 0x200000, "b92ddb0ccd85d40531a9ba8c7af280c9e1f0484203ff64c9887c220180"),
]


def hex_bits(h, n):
    v = int(h, 16)
    total = len(h) * 4
    return [(v >> (total - 1 - i)) & 1 for i in range(n)]


def _ref_state(regs):
    return CipherState(*(sum(b << i for i, b in enumerate(r)) for r in regs))


def test_majority_truth_table():
    for a in (0, 1):
        for b in (0, 1):
            for c in (0, 1):
                assert majority(a, b, c) == (1 if a + b + c >= 2 else 0)


def test_toy_clock_moves_majority_registers():
    # clock bits of (3,3,3) sit at bit 1; r3 disagrees and stays put
    s = CipherState(0b010, 0b011, 0b100)
    nxt, out = clock(MICRO_TOY, s)
    assert nxt.r3 == 0b100
    fb1 = ((0b010 >> 2) ^ (0b010 >> 1)) & 1
    fb2 = ((0b011 >> 2) ^ (0b011 >> 1)) & 1
    assert nxt == CipherState(((0b010 << 1) & 7) | fb1, ((0b011 << 1) & 7) | fb2, 0b100)
    assert out == (nxt.r1 >> 2) ^ (nxt.r2 >> 2) ^ (nxt.r3 >> 2)


def test_zero_state_is_fixed_point():
    z = CipherState(0, 0, 0)
    assert clock(A5_1, z) == (z, 0)
    assert keystream(TOY, z, 50) == [0] * 50


@given(st.integers(0, (1 << 64) - 1))
@settings(max_examples=200, deadline=None)
def test_two_or_three_registers_move(word):
    s = unpack(A5_1, word)
    nxt, _ = clock(A5_1, s)
    moved = sum(a != b for a, b in zip(s, nxt))
    # a register can shift into the same value only when all its bits agree
    assert moved <= 3
    bits = [(r >> cb) & 1 for r, cb in zip(s, A5_1.clock_bit)]
    assert sum(b == majority(*bits) for b in bits) >= 2


def test_pack_layout():
    assert pack(A5_1, CipherState(0, 1, 0)) == 0x80000
    assert pack(A5_1, CipherState(1, 0, 0)) == 1
    assert pack(A5_1, CipherState(0, 0, 1)) == 1 << 41
    with pytest.raises(ValueError):
        unpack(A5_1, 1 << 64)
    with pytest.raises(ValueError):
        pack(A5_1, CipherState(1 << 19, 0, 0))


@given(st.integers(0, (1 << 64) - 1))
def test_pack_unpack_round_trip(word):
    assert pack(A5_1, unpack(A5_1, word)) == word


@pytest.mark.parametrize("key,frame,hexout", KAT)
def test_a51_known_answers(key, frame, hexout):
    expect = hex_bits(hexout, 228)
    got = keystream(A5_1, state_from_key(A5_1, key, frame), 228)
    assert got == expect


def test_kat_table_matches_reference_simulator():
    for key, frame, hexout in KAT:
        ref = reference_keystream(key.to_bytes(8, "little"), frame)
        assert ref == hex_bits(hexout, 228)


def test_post_setup_state_matches_reference():
    for key, frame, _ in KAT:
        regs = _setup(key.to_bytes(8, "little"), frame)
        assert load_state(A5_1, key, frame) == _ref_state(regs)
        for _ in range(100):
            regs = _majority_clock(*regs)
        assert state_from_key(A5_1, key, frame) == _ref_state(regs)
    assert pack(A5_1, state_from_key(A5_1, 1, 0)) == 0x879DDA8001FA2A35


def test_keystream_concatenates():
    s = state_from_key(TOY, 0x123456, 5)
    assert keystream(TOY, s, 30) + keystream(TOY, advance(TOY, s, 30), 20) == keystream(TOY, s, 50)


def test_forward_image_bit_order():
    s = state_from_key(TOY, 77, 3)
    bits = keystream(TOY, s, TOY.state_width)
    assert forward_image(TOY, pack(TOY, s)) == sum(b << i for i, b in enumerate(bits))


def test_backclock_matches_enumeration_on_micro_toy():
    pre = exhaustive_predecessors(MICRO_TOY)
    for s, expect in pre.items():
        assert backclock_candidates(MICRO_TOY, s) == expect


@given(st.integers(0, (1 << 64) - 1))
@settings(max_examples=100, deadline=None)
def test_backclock_sound_on_a51(word):
    s = unpack(A5_1, word)
    nxt, _ = clock(A5_1, s)
    cands = backclock_candidates(A5_1, nxt)
    assert s in cands
    assert all(clock(A5_1, c)[0] == nxt for c in cands)


def test_rollback_returns_ancestors():
    s = unpack(TOY, 0xABCDE)
    later = advance(TOY, s, 12)
    back = rollback(TOY, later, 12)
    assert s in back
    assert all(advance(TOY, c, 12) == later for c in back)


def test_rollback_garden_of_eden_is_empty():
    pre = exhaustive_predecessors(MICRO_TOY)
    orphans = [s for s, p in pre.items() if not p]
    assert orphans
    assert rollback(MICRO_TOY, orphans[0], 3) == set()


def test_recover_key_toy_round_trip():
    rng = random.Random(4)
    for _ in range(20):
        key = rng.getrandbits(TOY.key_bits)
        frame = rng.getrandbits(TOY.frame_bits)
        res = recover_key(TOY, state_from_key(TOY, key, frame), frame)
        assert key in res.keys
        assert not res.truncated
        assert all(state_from_key(TOY, k, frame) == state_from_key(TOY, key, frame) for k in res.keys)


def test_recover_key_a51_round_trip():
    key, frame = 0xEFCDAB8967452312, 0x134
    res = recover_key(A5_1, state_from_key(A5_1, key, frame), frame)
    assert key in res.keys


def test_recover_key_truncates():
    spec = toy_spec(7, 8, 9, key_bits=30)
    key, frame = 0x2ABCDEF1, 9
    full = recover_key(spec, state_from_key(spec, key, frame), frame)
    assert key in full.keys and len(full.keys) >= 2 ** 6
    capped = recover_key(spec, state_from_key(spec, key, frame), frame, max_candidates=4)
    assert capped.truncated and len(capped.keys) == 4


def test_recover_key_needs_top_tap():
    from a51tmto.cipher import CipherSpec
    odd = CipherSpec((5, 5, 5), ((0, 2), (1, 3), (2, 4)), (2, 2, 2), key_bits=15, frame_bits=4, mix_clocks=5)
    with pytest.raises(ValueError):
        recover_key(odd, CipherState(1, 2, 3), 0)


def test_parse_cipher():
    assert parse_cipher("a5_1") == A5_1
    assert parse_cipher("toy:7,8,9") == TOY
    assert parse_cipher("toy:7,8,9", mix_clocks=3).mix_clocks == 3
    for bad in ("toy:1,2", "des", "toy:a,b,c"):
        with pytest.raises(ValueError):
            parse_cipher(bad)


def test_load_rejects_oversized_inputs():
    with pytest.raises(ValueError):
        load_state(TOY, 1 << 24, 0)
    with pytest.raises(ValueError):
        load_state(TOY, 0, 256)
