"""Independent reference implementations used only by tests.

These deliberately avoid the library's vectorized code paths: plain loops,
scalar math, and per-vector dot products.
"""

from __future__ import annotations

import math

import numpy as np


def protonet_task_accuracy(cache, episode) -> float:
    """Support-mean prototypes + softmax over cosine similarity, from scratch."""
    n, k = episode.support_indices.shape
    m = episode.query_indices.shape[1]
    prototypes = []
    for row in range(n):
        total = [0.0] * cache.visual_dim
        for idx in episode.support_indices[row]:
            vec = cache.vectors[idx]
            for d in range(cache.visual_dim):
                total[d] += float(vec[d])
        prototypes.append([t / k for t in total])

    def cosine(a, b):
        dot = sum(x * y for x, y in zip(a, b))
        na = math.sqrt(sum(x * x for x in a))
        nb = math.sqrt(sum(y * y for y in b))
        return dot / (na * nb)

    correct = 0
    for row in range(n):
        for idx in episode.query_indices[row]:
            query = [float(x) for x in cache.vectors[idx]]
            sims = [cosine(query, p) for p in prototypes]
            exps = [math.exp(s) for s in sims]
            z = sum(exps)
            probs = [e / z for e in exps]
            best = 0
            for t in range(1, n):
                if probs[t] > probs[best]:
                    best = t
            correct += best == row
    return correct / (n * m)


def protonet_accuracies(cache, spec, sample_episode_fn, tasks: int) -> list[float]:
    return [
        protonet_task_accuracy(cache, sample_episode_fn(cache, spec, ti))
        for ti in range(tasks)
    ]


def softmax_oracle(scores):
    exps = [math.exp(s) for s in scores]
    z = sum(exps)
    return [e / z for e in exps]


def mean_and_ci95_oracle(values):
    n = len(values)
    mean = sum(values) / n
    var = sum((v - mean) ** 2 for v in values) / n
    return mean, 1.96 * math.sqrt(var) / math.sqrt(n)
