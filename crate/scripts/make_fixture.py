#!/usr/bin/env python3
"""Generate the bundled replay fixture.

Column averages equal the published per-model averages exactly: scores are
binary except for one fractional cell per model, and costs come in symmetric
pairs mean*(1 - d), mean*(1 + d).
"""

import argparse
import csv
import random
from decimal import Decimal
from pathlib import Path

MODELS = [
    ("claude-instant-v1", "0.5900", "0.001236"),
    ("claude-v1", "0.6480", "0.005870"),
    ("claude-v2", "0.5116", "0.006153"),
    ("meta/llama-2-70b-chat", "0.6059", "0.001337"),
    ("WizardLM/WizardLM-13B-V1.2", "0.5392", "0.000142"),
    ("meta/code-llama-instruct-34b-chat", "0.5040", "0.000550"),
    ("mistralai/mistral-7b-chat", "0.4999", "0.000139"),
    ("gpt-3.5-turbo-1106", "0.6867", "0.000709"),
    ("gpt-4-1106-preview", "0.8048", "0.007943"),
    ("zero-one-ai/Yi-34B-Chat", "0.7153", "0.000558"),
    ("mistralai/mixtral-8x7b-chat", "0.6504", "0.000414"),
]


def score_column(mean: Decimal, n: int, rng: random.Random) -> list[str]:
    total = mean * n
    ones = int(total)
    frac = total - ones
    cells = ["1"] * ones + ([str(frac.normalize())] if frac else [])
    cells += ["0"] * (n - len(cells))
    rng.shuffle(cells)
    return cells


def cost_column(mean: Decimal, n: int, rng: random.Random) -> list[str]:
    cells = []
    for _ in range(n // 2):
        d = Decimal(rng.randint(0, 500)) / 1000
        cells += [str(mean * (1 - d)), str(mean * (1 + d))]
    rng.shuffle(cells)
    return cells


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "fixtures")
    ap.add_argument("--queries", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240501)
    ap.add_argument("--alpha", type=float, default=0.4)
    ap.add_argument("--full-cap-model", default="WizardLM/WizardLM-13B-V1.2")
    args = ap.parse_args()
    assert args.queries % 2 == 0

    rng = random.Random(args.seed)
    cols = []
    for name, mu, cost in MODELS:
        cols.append(score_column(Decimal(mu), args.queries, rng))
        cols.append(cost_column(Decimal(cost), args.queries, rng))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "replay.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        header = ["query_id"]
        for name, _, _ in MODELS:
            header += [f"{name}__score", f"{name}__cost"]
        w.writerow(header)
        for q in range(args.queries):
            w.writerow([f"q{q:05d}"] + [c[q] for c in cols])

    with open(args.out / "manifest.toml", "w") as f:
        for i, (name, _, _) in enumerate(MODELS):
            alpha = 1.0 if name == args.full_cap_model else args.alpha
            f.write(f'[[model]]\nmodel_id = "{name}"\nalpha = {alpha}\nrelease_index = {i}\n\n')


if __name__ == "__main__":
    main()
