"""Reference computations kept independent of the code under test."""

import math

import numpy as np


def brute_force_top_k(stem_lists, fact_ids, query, k, k1=1.2, b=0.75, scale=1.0):
    """Score every fact from a dense term-frequency matrix, sort, truncate.

    Returns ``[(fact_id, score), ...]``. Ties go to the smaller fact_id.
    """
    vocab = sorted({s for stems in stem_lists for s in stems})
    col = {s: j for j, s in enumerate(vocab)}
    n_docs = len(stem_lists)
    tf = np.zeros((n_docs, len(vocab)))
    for i, stems in enumerate(stem_lists):
        for s in stems:
            tf[i, col[s]] += 1.0
    dl = tf.sum(axis=1)
    avg = float(sum(len(s) for s in stem_lists)) / n_docs
    df = (tf > 0).sum(axis=0)

    scores = np.zeros(n_docs)
    for s in query:
        if s not in col:
            continue
        j = col[s]
        w = math.log((n_docs - int(df[j]) + 0.5) / (int(df[j]) + 0.5)) * scale
        t = tf[:, j]
        r = np.where(t > 0, t * (k1 + 1.0) / (t + k1 * (1.0 - b + b * dl / avg)), 0.0)
        scores = scores + w * r
    ids = np.asarray(fact_ids)
    order = np.lexsort((ids, -scores))[:k]
    return [(int(ids[i]), float(scores[i])) for i in order]
