import numpy as np
import pytest

from a51tmto.attack import (BurstTooShort, KeystreamSample, attack, attack_many, derive_samples, lookup_batch,
                            lookup_bound, lookup_sample, pack_bits, predict_success)
from a51tmto.cipher import A5_1, TOY, forward_image, keystream, pack, rollback, state_from_key, unpack
from a51tmto.tmto import Mode, TableParams, build_table, chain_walk

PARAMS = TableParams(24, 8, 8, reduction_seed=7)


@pytest.fixture(scope="module")
def table():
    tb, _ = build_table(TOY, PARAMS, 20000, seed=1)
    return tb


def test_derive_samples_counts_and_windows():
    burst = [(i * 7) % 3 & 1 for i in range(114)]
    samples = derive_samples(burst, A5_1)
    assert len(samples) == 51
    assert samples[10].clock_offset == 10
    assert samples[10].window == pack_bits(burst[10:74])
    assert len(derive_samples(burst, TOY, "b")) == 91
    with pytest.raises(BurstTooShort):
        derive_samples(burst[:63], A5_1)


def test_predict_success():
    assert predict_success(0, 100, 5) == 0.0
    assert predict_success(100, 100, 1) == 1.0
    assert predict_success(50, 100, 0) == 0.0
    assert predict_success(50, 100, 2) == pytest.approx(0.75)
    with pytest.raises(ValueError):
        predict_success(101, 100, 1)


def test_lookup_bound():
    assert lookup_bound(TableParams(24, 16, 16)) == 256 * 255 // 2
    assert lookup_bound(TableParams(24, 16, 1)) == 16 * 17 // 2 - 16
    assert lookup_bound(TableParams(24, 4, dp_bits=4, max_segment_steps=64, mode=Mode.DP)) == 64 * 10


def test_planted_states_are_found(table):
    rng = np.random.default_rng(0)
    rows = rng.choice(len(table), 40, replace=False)
    planted = []
    for r in rows:
        walk = chain_walk(TOY, PARAMS, int(table.starts[r]))
        planted.append(walk[int(rng.integers(len(walk) - 1))][2])
    results = lookup_batch(TOY, table, [forward_image(TOY, x) for x in planted])
    for x, res in zip(planted, results):
        assert x in res.candidates
        assert all(forward_image(TOY, c) == forward_image(TOY, x) for c in res.candidates)


def test_first_hit_is_cheaper_and_still_sound(table):
    walk = chain_walk(TOY, PARAMS, int(table.starts[5]))
    y = forward_image(TOY, walk[60][2])
    full = lookup_batch(TOY, table, [y])[0]
    quick = lookup_batch(TOY, table, [y], first_hit=True)[0]
    assert quick.candidates and quick.candidates <= full.candidates
    assert quick.f_evals < full.f_evals


def test_miss_returns_nothing_with_full_walk(table):
    res = lookup_batch(TOY, table, [0])[0]
    if not res.candidates:
        assert res.f_evals >= lookup_bound(PARAMS)
    assert lookup_sample(TOY, KeystreamSample(0, 0), table) == res.candidates


def test_false_alarms_are_filtered(table):
    rng = np.random.default_rng(2)
    windows = rng.integers(0, 1 << 24, 300)
    results = lookup_batch(TOY, table, windows)
    assert sum(r.false_alarms for r in results) > 0
    for w, r in zip(windows.tolist(), results):
        assert all(forward_image(TOY, c) == w for c in r.candidates)


def test_attack_recovers_post_setup_state(table):
    walk = chain_walk(TOY, PARAMS, int(table.starts[11]))
    inner = walk[20][2]
    # offset 9 into the burst: roll the covered state back to a post-setup one
    pre = sorted(rollback(TOY, unpack(TOY, inner), 9))
    assert pre
    s0 = pre[0]
    bits = keystream(TOY, s0, 114)
    samples = derive_samples(bits, TOY)
    report = attack(samples, [table], TOY)
    assert report.success
    assert pack(TOY, s0) in report.post_setup_states
    for word in report.post_setup_states:
        assert keystream(TOY, unpack(TOY, word), 114) == bits


def test_attack_with_key(table):
    # search keys until one lands on a covered post-setup trajectory
    rng = np.random.default_rng(9)
    for _ in range(200):
        key, frame = int(rng.integers(1 << 24)), int(rng.integers(256))
        bits = keystream(TOY, state_from_key(TOY, key, frame), 114)
        report = attack(derive_samples(bits, TOY), [table], TOY, want_key=True, frame=frame, batch_size=16)
        if report.success:
            assert key in report.keys
            for k in report.keys:
                assert keystream(TOY, state_from_key(TOY, k, frame), 114) == bits
            return
    pytest.fail("no covered target in 200 tries")


def test_attack_needs_frame_for_key(table):
    s = unpack(TOY, int(table.starts[0]))
    bits = keystream(TOY, s, 114)
    with pytest.raises(ValueError):
        attack(derive_samples(bits, TOY), [table], TOY, want_key=True)


def test_attack_without_tables():
    report = attack([KeystreamSample(5, 0)], [], TOY)
    assert not report.success and report.f_evals == 0 and report.lookups == 0
    with pytest.raises(ValueError):
        attack([], [], TOY)


def test_attack_rejects_width_mismatch(table):
    with pytest.raises(ValueError):
        attack([KeystreamSample(5, 0)], [table], A5_1)


def test_attack_many_matches_single(table):
    rng = np.random.default_rng(4)
    targets = []
    for _ in range(6):
        s = unpack(TOY, int(rng.integers(1 << 24)))
        bits = keystream(TOY, s, 114)
        targets.append(derive_samples(bits, TOY)[::10])
    many = attack_many(targets, [table], TOY)
    for samples, rep in zip(targets, many):
        assert rep.post_setup_states == attack(samples, [table], TOY).post_setup_states


def test_summary_lines(table):
    report = attack([KeystreamSample(5, 0)], [table], TOY)
    lines = report.summary_lines(24)
    assert lines[0] in ("status=hit", "status=nohit")
    assert any(l.startswith("f_evals=") for l in lines)


def _clean_miss_costs(params, n_chains):
    tb, _ = build_table(TOY, params, n_chains, seed=6)
    windows = np.random.default_rng(8).integers(0, 1 << 24, 300)
    res = lookup_batch(TOY, tb, windows)
    return [r.f_evals for r in res if not r.candidates and not r.false_alarms]


def test_single_step_fixed_miss_within_triangular_bound():
    t = 16
    costs = _clean_miss_costs(TableParams(24, t, 1, reduction_seed=2), 5000)
    assert costs and max(costs) <= t * (t + 1) // 2


def test_dp_miss_within_segment_bound():
    params = TableParams(24, 4, dp_bits=4, max_segment_steps=64, mode=Mode.DP, reduction_seed=2)
    costs = _clean_miss_costs(params, 3000)
    assert costs and max(costs) <= lookup_bound(params)
