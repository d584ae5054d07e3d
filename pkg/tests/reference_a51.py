"""Straight-line A5/1 simulator used only as a known-answer oracle.

Registers are plain lists of bits, index 0 = least significant bit. Nothing
here is shared with the package implementation.
"""

R1_LEN, R2_LEN, R3_LEN = 19, 22, 23
R1_TAPS, R2_TAPS, R3_TAPS = (13, 16, 17, 18), (20, 21), (7, 20, 21, 22)
R1_CLK, R2_CLK, R3_CLK = 8, 10, 10


def _shift(reg, taps, inject=0):
    fb = inject
    for t in taps:
        fb ^= reg[t]
    return [fb] + reg[:-1]


def _setup(key_bytes, frame):
    r1, r2, r3 = [0] * R1_LEN, [0] * R2_LEN, [0] * R3_LEN
    for i in range(64):
        bit = (key_bytes[i // 8] >> (i % 8)) & 1
        r1, r2, r3 = _shift(r1, R1_TAPS, bit), _shift(r2, R2_TAPS, bit), _shift(r3, R3_TAPS, bit)
    for i in range(22):
        bit = (frame >> i) & 1
        r1, r2, r3 = _shift(r1, R1_TAPS, bit), _shift(r2, R2_TAPS, bit), _shift(r3, R3_TAPS, bit)
    return r1, r2, r3


def _majority_clock(r1, r2, r3):
    a, b, c = r1[R1_CLK], r2[R2_CLK], r3[R3_CLK]
    maj = 1 if a + b + c >= 2 else 0
    if a == maj:
        r1 = _shift(r1, R1_TAPS)
    if b == maj:
        r2 = _shift(r2, R2_TAPS)
    if c == maj:
        r3 = _shift(r3, R3_TAPS)
    return r1, r2, r3


def reference_keystream(key_bytes, frame, nbits=228, mix=100):
    r1, r2, r3 = _setup(key_bytes, frame)
    for _ in range(mix):
        r1, r2, r3 = _majority_clock(r1, r2, r3)
    out = []
    for _ in range(nbits):
        r1, r2, r3 = _majority_clock(r1, r2, r3)
        out.append(r1[-1] ^ r2[-1] ^ r3[-1])
    return out


def bits_to_bytes_msb(bits):
    out = bytearray((len(bits) + 7) // 8)
    for i, b in enumerate(bits):
        out[i // 8] |= b << (7 - i % 8)
    return bytes(out)


if __name__ == "__main__":
    key = bytes([0x12, 0x23, 0x45, 0x67, 0x89, 0xAB, 0xCD, 0xEF])
    ks = reference_keystream(key, 0x134)
    print(bits_to_bytes_msb(ks[:114]).hex())
    print(bits_to_bytes_msb(ks[114:]).hex())
