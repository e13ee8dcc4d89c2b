"""Retriever supervision from reader cross-attention.

Attention onto each retrieved fact is pooled into one score per fact,
optionally biased towards facts that contain an answer stem, and turned into
a target distribution. The retriever's distribution comes from query/fact
embedding dot products; the two are compared with KL divergence.
"""

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from stemkg.stemming import EMPTY_POLICY, StopWordPolicy, stems_of

FULL, HALF = "full", "half"
MAX, MEAN, TOPHALF = "max", "mean", "tophalf"


@dataclass(frozen=True)
class SignalConfig:
    layer_scope: str = FULL
    token_agg: str = MAX
    answer_bias: Optional[float] = None

    def __post_init__(self):
        if self.layer_scope not in (FULL, HALF):
            raise ValueError(f"layer_scope must be {FULL!r} or {HALF!r}")
        if self.token_agg not in (MAX, MEAN, TOPHALF):
            raise ValueError(f"token_agg must be one of {MAX!r}, {MEAN!r}, {TOPHALF!r}")


@dataclass
class AttentionRecord:
    """Cross-attention of the first decoded token, head-averaged, shape (layers, tokens)."""

    scores: np.ndarray

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ValueError("attention scores must be a layers x tokens array")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("attention scores must be finite")

    @property
    def layer_count(self) -> int:
        return self.scores.shape[0]

    @property
    def token_count(self) -> int:
        return self.scores.shape[1]


def validate_spans(spans, token_count: int):
    """``spans`` is a list of ``(fact_id, start, end)`` half-open token ranges."""
    if not spans:
        raise ValueError("no fact spans given")
    ordered = sorted(spans, key=lambda s: s[1])
    prev_end = 0
    seen = set()
    for fid, start, end in ordered:
        if fid in seen:
            raise ValueError(f"fact {fid} has more than one span")
        seen.add(fid)
        if not 0 <= start < end <= token_count:
            raise ValueError(f"span {fid}: [{start}, {end}) is empty or outside 0..{token_count}")
        if start < prev_end:
            raise ValueError(f"span {fid} overlaps the previous span")
        prev_end = end


def _pool(values: np.ndarray, how: str) -> float:
    if how == MAX:
        return float(values.max())
    if how == MEAN:
        return float(values.mean())
    top = np.sort(values)[::-1][: math.ceil(values.size / 2)]
    return float(top.mean())


def aggregate_attention(rec: AttentionRecord, spans, cfg: SignalConfig = SignalConfig()) -> dict:
    """One attention score per fact.

    Tokens of a span are pooled within each selected layer, then the
    per-layer values are averaged. ``half`` keeps the last ceil(L/2) layers.
    """
    validate_spans(spans, rec.token_count)
    layers = rec.scores
    if cfg.layer_scope == HALF:
        layers = layers[rec.layer_count - math.ceil(rec.layer_count / 2):]
    out = {}
    for fid, start, end in spans:
        per_layer = [_pool(row[start:end], cfg.token_agg) for row in layers]
        out[fid] = float(np.mean(per_layer))
    return out


def apply_answer_bias(scores: dict, contains_answer, bias: float = 1.0) -> dict:
    return {f: s + bias if f in contains_answer else s for f, s in scores.items()}


def _softmax(keys, logits) -> dict:
    if not keys:
        raise ValueError("softmax over an empty set")
    x = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("scores must be finite")
    e = np.exp(x - x.max())
    p = e / e.sum()
    return dict(zip(keys, p.tolist()))


def target_distribution(scores: dict) -> dict:
    keys = list(scores)
    return _softmax(keys, [scores[k] for k in keys])


def retriever_distribution(query_emb, fact_embs: dict) -> dict:
    q = np.asarray(query_emb, dtype=np.float64)
    keys = list(fact_embs)
    dots = []
    for k in keys:
        v = np.asarray(fact_embs[k], dtype=np.float64)
        if v.shape != q.shape:
            raise ValueError(f"fact {k}: embedding shape {v.shape} does not match query {q.shape}")
        dots.append(float(q @ v))
    return _softmax(keys, dots)


def kl_loss(a: dict, o: dict) -> float:
    """KL(A || O) in nats; facts with zero target mass contribute nothing."""
    if set(a) != set(o):
        raise ValueError("target and retriever distributions cover different facts")
    total = 0.0
    for f, p in a.items():
        if p == 0.0:
            continue
        q = o[f]
        if q <= 0.0:
            raise ValueError(f"retriever probability of fact {f} is 0 where the target is not")
        total += p * (math.log(p) - math.log(q))
    return total


def facts_with_answer(fact_texts: dict, gt_stems, policy: StopWordPolicy = EMPTY_POLICY) -> set:
    """Ids of facts whose text shares a stem with the ground-truth answers."""
    return {f for f, text in fact_texts.items() if not set(gt_stems).isdisjoint(stems_of(text, policy))}


def load_attention(path):
    """Read ``{"scores": [[...], ...], "spans": [[fact_id, start, end], ...]}``."""
    with open(path, encoding="utf-8") as f:
        obj = json.load(f)
    rec = AttentionRecord(obj["scores"])
    spans = [(int(fid), int(s), int(e)) for fid, s, e in obj["spans"]]
    return rec, spans


def load_embeddings(path):
    """JSON-lines ``{"fact_id": ..., "vector": [...]}``; a ``"query"`` fact_id holds the query vector."""
    query, facts = None, {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj["fact_id"] == "query":
                query = obj["vector"]
            else:
                facts[int(obj["fact_id"])] = obj["vector"]
    if query is None:
        raise ValueError(f"{path}: no query vector (fact_id \"query\")")
    return query, facts
