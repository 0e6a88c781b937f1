#!/usr/bin/env python3
"""Plain-SGD reference and scripted FedAsync aggregation, written independently
of the C++ engine. Used to confirm that the accuracy thresholds pinned in the
C++ tests are attainable for the stated data distributions; it shares no RNG
stream with the C++ code, so it checks the distribution-level claim over many
seeds and records the worst case.

Output: tests/fixtures/reference_sgd.json
"""

import json
import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "fixtures", "reference_sgd.json")


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def sgd(w, b, x, y, epochs, batch, lr, rng):
    k = b.shape[0]
    for _ in range(epochs):
        order = rng.permutation(len(x))
        for start in range(0, len(x), batch):
            idx = order[start:start + batch]
            p = softmax(x[idx] @ w.T + b)
            p[np.arange(len(idx)), y[idx]] -= 1.0
            p /= len(idx)
            w = w - lr * (p.T @ x[idx])
            b = b - lr * p.sum(axis=0)
    return w, b


def accuracy(w, b, x, y):
    return float(np.mean(np.argmax(x @ w.T + b, axis=1) == y))


def blobs(rng, centers, n, sigma):
    xs, ys = [], []
    for k, c in enumerate(centers):
        xs.append(c + sigma * rng.normal(size=(n, len(c))))
        ys.append(np.full(n, k))
    return np.concatenate(xs), np.concatenate(ys)


def glorot(rng, din, dout):
    s = np.sqrt(6.0 / (din + dout))
    return rng.uniform(-s, s, size=(dout, din)), np.zeros(dout)


def two_blob_case(seed):
    rng = np.random.default_rng(seed)
    centers = [np.array([-2.0, -2.0]), np.array([2.0, 2.0])]
    x, y = blobs(rng, centers, 100, 1.0)
    xt, yt = blobs(rng, centers, 100, 1.0)
    w, b = glorot(rng, 2, 2)
    w, b = sgd(w, b, x, y, 20, 10, 0.05, rng)
    return accuracy(w, b, x, y), accuracy(w, b, xt, yt)


def unit_centers(rng, k, d, separation):
    # Orthonormal directions (k <= d), matching the C++ generator's contract.
    q, _ = np.linalg.qr(rng.normal(size=(d, k)))
    return separation * q.T


def separation10_case(seed):
    rng = np.random.default_rng(seed)
    centers = unit_centers(rng, 2, 8, 10.0)
    x, y = blobs(rng, centers, 100, 1.0)
    w, b = glorot(rng, 8, 2)
    w, b = sgd(w, b, x, y, 5, 16, 0.05, rng)
    return accuracy(w, b, x, y)


def fedasync_case(seed, clients=8, sessions=10, alpha=0.6, a=0.5):
    """Round-robin schedule: every client fetches at the start of a round and
    submits in index order, so client i sees staleness i. This is harsher than
    the free-running schedule, where staleness is usually smaller."""
    rng = np.random.default_rng(seed)
    centers = unit_centers(rng, 2, 16, 6.0)
    x, y = blobs(rng, centers, 200, 1.0)
    xt, yt = blobs(rng, centers, 200, 1.0)
    order = np.argsort(y, kind="stable")
    shards = np.array_split(order, clients)
    rng.shuffle(shards)
    gw, gb = glorot(rng, 16, 2)
    for _ in range(sessions):
        base = (gw.copy(), gb.copy())
        for i, shard in enumerate(shards):
            lw, lb = sgd(base[0], base[1], x[shard], y[shard], 5, 16, 0.05, rng)
            eff = alpha * (i + 1) ** (-a)
            gw = (1 - eff) * gw + eff * lw
            gb = (1 - eff) * gb + eff * lb
    return accuracy(gw, gb, xt, yt)


def main():
    seeds = range(50)
    two = [two_blob_case(s) for s in seeds]
    sep10 = [separation10_case(s) for s in seeds]
    fed = [fedasync_case(s) for s in seeds]
    result = {
        "two_blob_train_accuracy_min": min(t for t, _ in two),
        "two_blob_heldout_accuracy_min": min(h for _, h in two),
        "separation10_train_accuracy_min": min(sep10),
        "fedasync_shards1_heldout_accuracy_min": min(fed),
        "fedasync_shards1_heldout_accuracy_mean": float(np.mean(fed)),
        "seeds": len(seeds),
    }
    with open(OUT, "w") as f:
        json.dump(result, f, indent=1)
    print(json.dumps(result, indent=1))


if __name__ == "__main__":
    main()
