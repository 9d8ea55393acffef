#!/usr/bin/env python3
"""Freezes the fuzzy topic-normalization table with a plain dynamic-programming
edit distance, independent of the C++ code.

    python3 fuzzy_table.py FEATURED_TXT > fuzzy_pairs.json
"""
import json
import sys

RAW = [
    "machinelearning", "Machine-Learning", "machine_learning", "deep-learning", "deeplearning",
    "computervision", "Computer-Vision", "computer vision", "pythn", "python3", "javascrip",
    "reactjs", "React", "databases", "data_base", "djang0", "Django", "tensorflow2", "Tensor-Flow",
    "kubernets", "bitcoin", "block-chain", "blockchains", "naturallanguageprocessing", "nlp",
    "homework", "my-project", "wip", "cryptocurrencies", "reinforcementlearning",
]


def distance(a, b):
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def ratio(a, b):
    a, b = a.lower(), b.lower()
    longest = max(len(a), len(b))
    return 100.0 if longest == 0 else 100.0 * (1 - distance(a, b) / longest)


def key(t):
    return "".join(c for c in t.lower() if c not in "-_ \t\n")


def main():
    featured = []
    for line in open(sys.argv[1], encoding="utf-8"):
        line = line.strip()
        if line and not line.startswith("#") and line not in featured:
            featured.append(line)
    rows = []
    for raw in RAW:
        best, best_score = None, -1.0
        for f in featured:
            s = 100.0 if key(raw) == key(f) else ratio(raw, f)
            if s > best_score:
                best, best_score = f, s
        rows.append({"raw": raw, "expected": best if best_score >= 90 else None,
                     "best": best, "ratio": ratio(raw, best)})
    json.dump(rows, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()
