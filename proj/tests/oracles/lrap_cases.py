"""Freeze LRAP values from scikit-learn for random small cases with ties."""
import json
import random
import sys

import numpy as np
from sklearn.metrics import label_ranking_average_precision_score


def main():
    rng = random.Random(20240612)
    cases = []
    for _ in range(200):
        rows, cols = rng.randint(1, 6), rng.randint(1, 8)
        y = [[rng.random() < 0.4 for _ in range(cols)] for _ in range(rows)]
        for r in y:
            if not any(r):
                r[rng.randrange(cols)] = True
        levels = rng.choice([3, 5, 1000])
        f = [[rng.randrange(levels) / levels for _ in range(cols)] for _ in range(rows)]
        y01 = [[int(v) for v in r] for r in y]
        value = label_ranking_average_precision_score(np.array(y01), np.array(f))
        cases.append({"y": y01, "f": f, "lrap": float(value)})
    json.dump(cases, sys.stdout, indent=None)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
