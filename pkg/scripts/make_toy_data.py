"""Regenerate the bundled toy interaction log.

Eight communities of five nodes; each time window draws 40 interactions,
almost all inside one community.  Run from the repository root:

    python3 scripts/make_toy_data.py > src/convdysat/data/toy_edges.txt
"""

import sys

import numpy as np


def generate(groups=8, size=5, steps=4, per_step=40, cross=0.05, seed=2021):
    rng = np.random.default_rng(seed)
    lines = ["# toy interaction log: node_a node_b weight timestamp"]
    for s in range(steps):
        for _ in range(per_step):
            g = rng.integers(groups)
            a = g * size + rng.integers(size)
            if rng.random() < cross:
                g = (g + 1 + rng.integers(groups - 1)) % groups
            b = g * size + rng.integers(size)
            while b == a:
                b = g * size + rng.integers(size)
            lines.append(f"n{a:02d} n{b:02d} 1 {1000 * s + int(rng.integers(999))}")
    # pins the last window's right edge so every window has equal width
    lines.append(f"n00 n01 1 {1000 * steps - 1}")
    return "\n".join(lines) + "\n"


if __name__ == "__main__":
    sys.stdout.write(generate())
