"""Command-line front end.

Every failure prints one line ``error: <Kind>: <detail>`` on stderr and exits
nonzero. Successful runs print ``key=value`` lines.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import oracle
from .attack import KeystreamSample, attack, derive_samples, predict_success
from .cipher import CipherSpec, backclock_candidates, keystream, pack, parse_cipher, state_from_key
from .table_store import (ParamsMismatch, TableFormatError, load_table_dir, merge_shards,
                          table_filename, write_table)
from .tmto import (Mode, TableParams, WidthExceedsGuard, build_table, chain_walk, coverage,
                   generate_chains_batch)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_NOHIT = 3
EXIT_FORMAT = 4
EXIT_GUARD = 5
EXIT_MISMATCH = 6


class UsageError(ValueError):
    pass


class VerificationFailed(RuntimeError):
    pass


def parse_hex(text: str, bits: int, flag: str) -> int:
    digits = text[2:] if text.lower().startswith("0x") else text
    try:
        value = int(digits, 16)
    except ValueError:
        raise UsageError(f"{flag} {text!r} is not hexadecimal") from None
    if value >> bits:
        raise UsageError(f"{flag} {text!r} does not fit in {bits} bits")
    return value


def bits_to_hex(bits) -> str:
    padded = list(bits) + [0] * (-len(bits) % 4)
    return "".join(f"{int(''.join(map(str, padded[i:i + 4])), 2):x}" for i in range(0, len(padded), 4))


def hex_to_bits(text: str, flag: str) -> list[int]:
    digits = text[2:] if text.lower().startswith("0x") else text
    try:
        return [int(b) for d in digits for b in f"{int(d, 16):04b}"]
    except ValueError:
        raise UsageError(f"{flag} {text!r} is not hexadecimal") from None


def _word(width: int, value: int) -> str:
    return f"0x{value:0{(width + 3) // 4}x}"


def _cipher(args) -> CipherSpec:
    try:
        return parse_cipher(args.cipher, mix_clocks=args.mix_clocks)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _params(args, cipher: CipherSpec, table_id: int = 0) -> TableParams:
    mode = Mode.DP if args.mode == "dp" else Mode.FIXED
    max_seg = args.max_segment if args.max_segment else 16 << args.dp_bits
    try:
        return TableParams(cipher.state_width, args.colors, args.steps,
                           args.dp_bits if mode is Mode.DP else 0,
                           max_seg if mode is Mode.DP else 0, mode, table_id, args.reduction_seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _out(lines) -> None:
    for line in lines:
        print(line)


def _load_tables(directory, cipher: CipherSpec):
    tables = load_table_dir(directory)
    for t in tables:
        if t.params.state_width != cipher.state_width:
            raise ParamsMismatch(f"{t.path} has width {t.params.state_width}, cipher has {cipher.state_width}")
    return tables


def cmd_keystream(args) -> int:
    cipher = _cipher(args)
    key = parse_hex(args.key, cipher.key_bits, "--key")
    frame = parse_hex(args.frame, cipher.frame_bits, "--frame")
    count = args.count or cipher.burst_bits
    s0 = state_from_key(cipher, key, frame)
    bits = keystream(cipher, s0, count)
    _out([f"cipher={cipher.describe()}", f"post_setup={_word(cipher.state_width, pack(cipher, s0))}",
          f"count={count}", f"bits={''.join(map(str, bits))}", f"hex={bits_to_hex(bits)}"])
    return EXIT_OK


def cmd_generate(args) -> int:
    cipher = _cipher(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(args.tables):
        params = _params(args, cipher, table_id=args.first_table + i)
        table, rep = build_table(cipher, params, args.chains, args.seed, workers=args.workers)
        path = out / table_filename(args.prefix, params.table_id)
        write_table(path, params, table)
        lines = [f"table={path}", f"requested={rep.requested}", f"generated={rep.generated}",
                 f"rejected={rep.rejected}", f"lost={rep.lost}", f"merged={rep.merged}",
                 f"final={rep.final}", f"f_evals={rep.f_evals}", f"wall_time={rep.wall_time:.3f}",
                 f"chains_per_second={rep.chains_per_second:.1f}"]
        if params.mode is Mode.DP and len(rep.segment_lengths):
            lines.append(f"mean_segment={rep.segment_lengths.mean():.2f}")
        _out(lines)
    return EXIT_OK


def cmd_merge(args) -> int:
    summary = merge_shards(args.shards, args.out)
    _out(f"{k}={v}" for k, v in summary.items())
    return EXIT_OK


def cmd_attack(args) -> int:
    cipher = _cipher(args)
    w = cipher.state_width
    samples: list[KeystreamSample] = []
    if args.burst:
        bits = hex_to_bits(args.burst, "--burst")
        if args.count:
            bits = bits[:args.count]
        samples += derive_samples(bits, cipher, tag="burst")
    offsets = args.offset or []
    if args.sample:
        if len(offsets) not in (0, len(args.sample)):
            raise UsageError("give one --offset per --sample")
        for i, text in enumerate(args.sample):
            off = offsets[i] if offsets else 0
            samples.append(KeystreamSample(parse_hex(text, w, "--sample"), off, f"sample{i}"))
    if not samples:
        raise UsageError("supply --sample/--offset pairs or --burst")
    frame = parse_hex(args.frame, cipher.frame_bits, "--frame") if args.frame is not None else None
    if args.want_key and frame is None:
        raise UsageError("--want-key needs --frame")
    tables = _load_tables(args.table_dir, cipher) if args.table_dir else []
    report = attack(samples, tables, cipher, want_key=args.want_key, frame=frame, batch_size=args.batch)
    _out([f"tables={len(tables)}", f"samples={len(samples)}"] + report.summary_lines(w))
    return EXIT_OK if report.success else EXIT_NOHIT


def cmd_coverage(args) -> int:
    cipher = _cipher(args)
    tables = _load_tables(args.table_dir, cipher)
    image = oracle.build_image_table(cipher)
    n = 1 << cipher.state_width
    for t in tables:
        fast = coverage(cipher, t.params, t)
        exact = oracle.exact_coverage(t.params, t, image)
        _out([f"table={t.path}", f"records={len(t)}", f"coverage={fast}", f"oracle_coverage={exact}",
              f"fraction={fast / n:.6f}"])
    union = int(oracle.union_coverage(tables, image).sum())
    _out([f"union_coverage={union}", f"state_space={n}",
          f"predicted_success={predict_success(union, n, args.samples_per_target):.6f}"])
    return EXIT_OK


def _check(name: str, ok: bool, detail: str, failures: list[str]) -> None:
    print(f"check={name} result={'pass' if ok else 'FAIL'} {detail}")
    if not ok:
        failures.append(name)


def cmd_verify(args) -> int:
    cipher = _cipher(args)
    if cipher.state_width > oracle.ENUMERATION_GUARD_BITS:
        raise WidthExceedsGuard(f"state width {cipher.state_width} exceeds enumeration guard "
                                f"{oracle.ENUMERATION_GUARD_BITS}")
    failures: list[str] = []
    image = oracle.build_image_table(cipher)
    rng = np.random.default_rng(args.seed)

    if cipher.state_width <= oracle.BACKCLOCK_GUARD_BITS:
        pre = oracle.exhaustive_predecessors(cipher)
        bad = sum(backclock_candidates(cipher, s) != p for s, p in pre.items())
        _check("backclock_completeness", bad == 0, f"states={len(pre)} mismatches={bad}", failures)

    if args.table_dir:
        tables = _load_tables(args.table_dir, cipher)
    else:
        params = _params(args, cipher)
        tables = [build_table(cipher, params, args.chains, args.seed)[0]]

    for t in tables:
        p = t.params
        k = min(len(t), args.spot)
        pick = np.sort(rng.choice(len(t), size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
        starts = np.asarray(t.starts)[pick]
        ends, ok, _ = generate_chains_batch(cipher, p, starts)
        regen_ok = bool(np.all(ok) and np.array_equal(ends, np.asarray(t.ends)[pick]))
        _check("chain_regeneration", regen_ok, f"records_checked={k}", failures)
        if p.mode is Mode.FIXED and k:
            walk = oracle.walk_fixed(p, starts, image)
            mism = 0
            for row, s in zip(walk, starts.tolist()):
                mine = [v for _, _, v in chain_walk(cipher, p, s)]
                mism += mine != row.tolist()
            _check("dual_path_walk", mism == 0, f"chains={k} mismatches={mism}", failures)
        fast, exact = coverage(cipher, p, t), oracle.exact_coverage(p, t, image)
        _check("coverage", fast == exact, f"tmto={fast} oracle={exact}", failures)

    if args.targets:
        res = oracle.success_rate_experiment(cipher, tables[0].params, len(tables), 0, args.targets,
                                             args.samples_per_target, args.seed, image_table=image,
                                             tables=tables)
        _check("success_rate", res.deviation <= 3.0,
               f"empirical={res.empirical:.4f} predicted={res.predicted:.4f} stderr={res.stderr:.4f}", failures)
    if failures:
        raise VerificationFailed(", ".join(failures))
    print("verify=pass")
    return EXIT_OK


def cmd_experiment(args) -> int:
    cipher = _cipher(args)
    params = _params(args, cipher)
    t0 = time.perf_counter()
    res = oracle.success_rate_experiment(cipher, params, args.tables, args.chains, args.targets,
                                         args.samples_per_target, args.seed, workers=args.workers)
    _out([f"targets={res.n_targets}", f"successes={res.successes}", f"empirical={res.empirical:.6f}",
          f"predicted={res.predicted:.6f}", f"stderr={res.stderr:.6f}", f"deviation_se={res.deviation:.3f}",
          f"coverage={res.coverage}", f"state_space={res.state_space}",
          f"wall_time={time.perf_counter() - t0:.3f}"])
    return EXIT_OK


def _add_cipher(p: argparse.ArgumentParser, default: str = "a5_1") -> None:
    p.add_argument("--cipher", default=default, help="a5_1 or toy:<l1>,<l2>,<l3>")
    p.add_argument("--mix-clocks", type=int, default=None, help="override warm-up clockings")


def _add_table_params(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=("fixed", "dp"), default="fixed")
    p.add_argument("--colors", type=int, default=8)
    p.add_argument("--steps", type=int, default=8, help="links per color (fixed mode)")
    p.add_argument("--dp-bits", type=int, default=8)
    p.add_argument("--max-segment", type=int, default=0, help="DP segment cutoff (default 16 * 2**dp_bits)")
    p.add_argument("--reduction-seed", type=int, default=0)
    p.add_argument("--chains", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="a51tmto", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keystream", help="print keystream for a key and frame")
    _add_cipher(p)
    p.add_argument("--key", required=True)
    p.add_argument("--frame", required=True)
    p.add_argument("--count", type=int, default=0)
    p.set_defaults(func=cmd_keystream)

    p = sub.add_parser("generate", help="build and write rainbow tables")
    _add_cipher(p)
    _add_table_params(p)
    p.add_argument("--tables", type=int, default=1)
    p.add_argument("--first-table", type=int, default=0)
    p.add_argument("--out", default=".")
    p.add_argument("--prefix", default="table")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("merge", help="merge sorted table shards")
    p.add_argument("--out", required=True)
    p.add_argument("shards", nargs="+")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("attack", help="recover a state (and key) from keystream")
    _add_cipher(p)
    p.add_argument("--table-dir")
    p.add_argument("--sample", action="append", help="keystream window, hex")
    p.add_argument("--offset", action="append", type=int, help="clock offset of the matching --sample")
    p.add_argument("--burst", help="keystream burst, hex, MSB first per digit")
    p.add_argument("--count", type=int, default=0, help="burst length in bits")
    p.add_argument("--frame")
    p.add_argument("--want-key", action="store_true")
    p.add_argument("--batch", type=int, default=1, help="samples looked up together")
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("coverage", help="exact coverage of toy tables")
    _add_cipher(p, "toy:7,8,9")
    p.add_argument("--table-dir", required=True)
    p.add_argument("--samples-per-target", type=int, default=1)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("verify", help="cross-check against the exhaustive oracle")
    _add_cipher(p, "toy:3,3,3")
    _add_table_params(p)
    p.add_argument("--table-dir")
    p.add_argument("--spot", type=int, default=256, help="records regenerated per table")
    p.add_argument("--targets", type=int, default=200)
    p.add_argument("--samples-per-target", type=int, default=1)
    p.set_defaults(func=cmd_verify, colors=4, steps=4, chains=64)

    p = sub.add_parser("experiment", help="measure attack success against prediction")
    _add_cipher(p, "toy:7,8,9")
    _add_table_params(p)
    p.add_argument("--tables", type=int, default=1)
    p.add_argument("--targets", type=int, default=400)
    p.add_argument("--samples-per-target", type=int, default=12)
    p.set_defaults(func=cmd_experiment)
    return parser


_ERROR_EXITS = (
    (UsageError, EXIT_USAGE),
    (TableFormatError, EXIT_FORMAT),
    (WidthExceedsGuard, EXIT_GUARD),
    (ParamsMismatch, EXIT_MISMATCH),
    (VerificationFailed, EXIT_FAILED),
    (OSError, EXIT_FAILED),
    (ValueError, EXIT_USAGE),
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except tuple(cls for cls, _ in _ERROR_EXITS) as exc:
        code = next(c for cls, c in _ERROR_EXITS if isinstance(exc, cls))
        msg = " ".join(str(exc).split())
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
