#!/usr/bin/env python3
"""Writes the bundled fusion fixture: 472 media, 3 classes, text
probabilities missing for 45% of them, three graph tables that cover all."""

import json
import math
import random
import sys
from pathlib import Path

LABELS = ["high", "mixed", "low"]
N = 472
MISSING = 0.45


def softmax(z):
    m = max(z)
    e = [math.exp(v - m) for v in z]
    s = sum(e)
    return [round(v / s, 6) for v in e[:-1]] + [round(1.0 - sum(round(v / s, 6) for v in e[:-1]), 6)]


def noisy(rng, y, signal, noise):
    z = [rng.gauss(0.0, noise) for _ in LABELS]
    z[y] += signal
    return softmax(z)


def table(source, rows):
    return {"metadata": {"source": source, "labels": LABELS}, "probabilities": rows}


def main(out):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240601)
    ids = [f"m{i:03d}" for i in range(N)]
    weights = [0.5, 0.3, 0.2]
    gold = {i: rng.choices(range(3), weights)[0] for i in ids}
    order = ids[:]
    rng.shuffle(order)
    missing = set(order[: round(MISSING * N)])

    text_a = {i: noisy(rng, gold[i], 1.6, 1.0) for i in ids if i not in missing}
    text_b = {i: noisy(rng, gold[i], 1.2, 1.0) for i in ids if i not in missing}
    graphs = [{i: noisy(rng, gold[i], 1.4 + 0.1 * s, 1.0) for i in ids} for s in range(3)]

    (out / "text_a.json").write_text(json.dumps(table("text-a", text_a), indent=1, sort_keys=True) + "\n")
    (out / "text_b.json").write_text(json.dumps(table("text-b", text_b), indent=1, sort_keys=True) + "\n")
    for s, g in enumerate(graphs):
        (out / f"graph_{s}.json").write_text(json.dumps(table(f"graph-{s}", g), indent=1, sort_keys=True) + "\n")
    with open(out / "gold.tsv", "w") as f:
        f.write("id\tlabel\n")
        for i in ids:
            f.write(f"{i}\t{LABELS[gold[i]]}\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/fusion")
