"""Regenerate the bundled toy datasets and model weights under src/pathwise/data.

    python tools/make_assets.py [--seed 7]

Everything is synthetic and deterministic given the seed. Models are trained
with plain full-batch gradient descent on softmax cross-entropy; only rows the
model classifies with a comfortable margin are kept as fixtures.
"""
from __future__ import annotations

import argparse
import csv
import json
from pathlib import Path

import numpy as np

from pathwise.io import write_pgm
from pathwise.models import MLPClassifier, save_model

OUT = Path(__file__).resolve().parents[1] / "src" / "pathwise" / "data"

TABULAR_FEATURES = [
    "months_oldest_trade",
    "months_recent_trade",
    "pct_never_delinquent",
    "num_total_trades",
    "num_inquiries",
    "utilization",
]
VOCAB = ["car", "engine", "tire", "bought", "new", "used", "god", "church", "faith", "doctor", "medic", "pregnant"]
TEXT_CLASSES = ["rec.autos", "soc.religion", "sci.med"]
DIGITS = ["zero", "one", "seven"]


def _train(X, y, sizes, rng, epochs=4000, lr=0.5, l2=1e-4):
    """Tiny dense net (relu hidden layers) trained by full-batch gradient descent."""
    dims = [X.shape[1], *sizes]
    Ws = [rng.normal(0, 1 / np.sqrt(a), (b, a)) for a, b in zip(dims, dims[1:])]
    bs = [np.zeros(b) for b in dims[1:]]
    Y = np.eye(dims[-1])[y]
    for _ in range(epochs):
        hs, pre = [X], []
        for k, (W, b) in enumerate(zip(Ws, bs)):
            a = hs[-1] @ W.T + b
            pre.append(a)
            hs.append(np.maximum(a, 0) if k < len(Ws) - 1 else a)
        z = hs[-1] - hs[-1].max(axis=1, keepdims=True)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        g = (p - Y) / len(X)
        for k in reversed(range(len(Ws))):
            gW = g.T @ hs[k] + l2 * Ws[k]
            gb = g.sum(axis=0)
            if k > 0:
                g = (g @ Ws[k]) * (pre[k - 1] > 0)
            Ws[k] -= lr * gW
            bs[k] -= lr * gb
    acts = ["relu"] * (len(Ws) - 1) + ["id"]
    return MLPClassifier([(W, b, a) for W, b, a in zip(Ws, bs, acts)], "prob")


def _confident(model, X, min_margin, limit):
    keep = []
    for k, x in enumerate(X):
        p = np.sort(model.predict(x))
        if p[-1] - p[-2] >= min_margin:
            keep.append(k)
        if len(keep) == limit:
            break
    return keep


def make_tabular(rng):
    n = 400
    X = np.column_stack([
        rng.gamma(3.0, 0.6, n),
        rng.gamma(1.5, 0.4, n),
        rng.uniform(0.3, 1.0, n),
        rng.gamma(2.0, 0.8, n),
        rng.poisson(1.2, n).astype(float),
        rng.uniform(0.0, 1.0, n),
    ])
    score = 0.9 * X[:, 0] - 0.6 * X[:, 1] + 3.0 * X[:, 2] + 0.3 * X[:, 3] - 0.5 * X[:, 4] - 1.5 * X[:, 5] - 2.2
    y = (score + rng.normal(0, 0.3, n) > 0).astype(int)
    model = _train(X, y, [8, 2], rng, epochs=6000, lr=0.1)
    keep = _confident(model, X[300:], 0.4, 24)
    with open(OUT / "toy_tabular.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABULAR_FEATURES + ["label"])
        for k in keep:
            w.writerow([f"{v:.4f}" for v in X[300 + k]] + [int(y[300 + k])])
    save_model(model, OUT / "tabular_model.json")


def make_text(rng):
    topic = {
        0: [0, 1, 2, 3, 4, 5],
        1: [6, 7, 8, 3],
        2: [9, 10, 11, 4],
    }
    n = 600
    y = rng.choice(3, n, p=[0.5, 0.25, 0.25])
    X = np.zeros((n, len(VOCAB)))
    for i, c in enumerate(y):
        words = rng.choice(topic[c], rng.integers(2, 6))
        noise = rng.choice(len(VOCAB), rng.integers(0, 2))
        counts = np.bincount(np.concatenate([words, noise]), minlength=len(VOCAB)).astype(float)
        X[i] = counts / counts.max()
    # empty documents carry the majority label, as a bag-of-words model would learn from short posts
    X[:30] = 0.0
    y[:30] = 0
    model = _train(X, y, [3], rng, epochs=3000, lr=1.0)
    keep = _confident(model, X[400:], 0.3, 16)
    with open(OUT / "toy_text.jsonl", "w", encoding="utf-8") as fh:
        for k in keep:
            x = X[400 + k]
            tokens = {VOCAB[j]: round(float(x[j]), 4) for j in np.flatnonzero(x)}
            fh.write(json.dumps({"tokens": tokens, "label": int(y[400 + k])}) + "\n")
    save_model(model, OUT / "text_model.json")
    (OUT / "text_vocab.json").write_text(json.dumps({"vocabulary": VOCAB, "classes": TEXT_CLASSES}), encoding="utf-8")


def _digit(cls, rng):
    img = np.zeros((8, 8))
    if cls == 0:
        img[1:7, 2] = img[1:7, 5] = 1.0
        img[1, 2:6] = img[6, 2:6] = 1.0
    elif cls == 1:
        img[1:7, 4] = 1.0
        img[1:7, 3] = 0.6
    else:
        img[1, 1:7] = 1.0
        for r in range(2, 7):
            img[r, 7 - r] = 1.0
    img = np.roll(img, (rng.integers(-1, 2), rng.integers(-1, 2)), axis=(0, 1))
    img = img * rng.uniform(0.7, 1.0) + rng.uniform(0, 0.15, img.shape)
    return np.clip(img, 0, 1).reshape(-1)


def make_digits(rng):
    n = 450
    y = rng.integers(0, 3, n)
    X = np.array([_digit(c, rng) for c in y])
    model = _train(X, y, [16, 3], rng, epochs=3000, lr=0.5)
    keep = _confident(model, X[300:], 0.4, 16)
    digits = OUT / "digits"
    digits.mkdir(exist_ok=True)
    for old in digits.glob("*.pgm"):
        old.unlink()
    for i, k in enumerate(keep):
        write_pgm(digits / f"digit_{i:02d}_{DIGITS[y[300 + k]]}.pgm", X[300 + k], 8, 8)
    save_model(model, OUT / "digits_model.json")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    OUT.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(args.seed)
    make_tabular(rng)
    make_text(rng)
    make_digits(rng)
    print(f"assets written to {OUT}")


if __name__ == "__main__":
    main()
