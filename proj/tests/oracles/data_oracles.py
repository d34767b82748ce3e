#!/usr/bin/env python3
"""Independent recounts for the data-pipeline fixtures.

Writes tests/fixtures/data/lengths_1000.txt (deterministic LCG draws, a few
outside the edge range) and prints the per-bin tallies plus the token count of
paragraph.txt, which the C++ tests freeze as constants.
"""
import bisect
import pathlib
import re

HERE = pathlib.Path(__file__).resolve().parent
FIX = HERE.parent / "fixtures" / "data"
EDGES = [0, 1024, 2048, 4096, 8192, 16384, 32768]


def lcg(seed):
    state = seed
    while True:
        state = (6364136223846793005 * state + 1442695040888963407) % (1 << 64)
        yield state >> 33


def main():
    gen = lcg(12345)
    lengths = []
    for _ in range(1000):
        r = next(gen)
        # Log-ish spread: mostly inside the edges, some overflow and negatives.
        lengths.append(int(r % 40000) - 100 if r % 7 else int(r % 9000))
    (FIX / "lengths_1000.txt").write_text("\n".join(map(str, lengths)) + "\n")

    under = sum(1 for t in lengths if t < EDGES[0])
    over = sum(1 for t in lengths if t >= EDGES[-1])
    counts = [0] * (len(EDGES) - 1)
    for t in lengths:
        if EDGES[0] <= t < EDGES[-1]:
            counts[bisect.bisect_right(EDGES, t) - 1] += 1
    print("underflow", under)
    print("counts", counts)
    print("overflow", over)

    text = (FIX / "paragraph.txt").read_text()
    words = re.findall(r"[A-Za-z0-9_\x80-\U0010ffff]+", text)
    punct = re.findall(r"[^\sA-Za-z0-9_\x80-\U0010ffff]", text)
    print("paragraph words", len(words), "punct", len(punct), "tokens", len(words) + len(punct))


if __name__ == "__main__":
    main()
