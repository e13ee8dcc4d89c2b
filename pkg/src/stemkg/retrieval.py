"""Stem-keyed inverted index and BM25 ranking over fact sentences."""

import heapq
import math
import struct
import zlib
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional

from stemkg.stemming import EMPTY_POLICY, StopWordPolicy

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_K = 10

MAGIC = b"STEMBM25"
FORMAT_VERSION = 1


class IndexFormatError(ValueError):
    pass


class IndexVersionError(IndexFormatError):
    pass


@dataclass(frozen=True)
class RetrievalResult:
    fact_id: int
    score: float
    rank: int


@dataclass
class Bm25Index:
    N: int
    doc_freq: dict
    postings: dict  # stem -> list of (fact_id, tf), ascending fact_id
    doc_len: dict
    avg_doc_len: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    log_base: Optional[float] = None  # None: natural log
    texts: dict = field(default_factory=dict)
    policy: StopWordPolicy = EMPTY_POLICY

    def __post_init__(self):
        self.fact_ids = sorted(self.doc_len)
        self._idf_cache = {}
        # Another log base only rescales every score by one constant. Sums are
        # kept in natural-log units and scaled on output, so rounding cannot
        # break ties differently from the natural-log ranking.
        self._scale = 1.0 if self.log_base is None else 1.0 / math.log(self.log_base)

    def _ln_idf(self, s: str) -> float:
        if self.N == 0:
            raise ValueError("idf is undefined on an empty index")
        try:
            return self._idf_cache[s]
        except KeyError:
            pass
        n = self.doc_freq.get(s, 0)
        w = math.log((self.N - n + 0.5) / (n + 0.5))
        self._idf_cache[s] = w
        return w

    def idf(self, s: str) -> float:
        """Inverse document frequency; negative when the stem is in over half the facts."""
        return self._ln_idf(s) * self._scale

    def _saturate(self, tf, dl):
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.avg_doc_len)
        return tf * (self.k1 + 1.0) / (tf + norm)

    def tf(self, s: str, fact_id: int) -> int:
        plist = self.postings.get(s)
        if not plist:
            return 0
        i = bisect_left(plist, (fact_id, 0))
        if i < len(plist) and plist[i][0] == fact_id:
            return plist[i][1]
        return 0

    def term_score(self, s: str, fact_id: int) -> float:
        if fact_id not in self.doc_len:
            raise KeyError(f"unknown fact_id {fact_id}")
        tf = self.tf(s, fact_id)
        if tf == 0:
            return 0.0
        return self._saturate(tf, self.doc_len[fact_id])

    def score(self, query, fact_id: int) -> float:
        """Sum of idf * term score over query stems; repeated stems count again."""
        total = 0.0
        for s in _stems(query):
            total += self._ln_idf(s) * self.term_score(s, fact_id)
        return total * self._scale

    def accumulate(self, query) -> dict:
        """Natural-log scores of every fact sharing at least one stem with the query."""
        acc = {}
        for s in _stems(query):
            plist = self.postings.get(s)
            if not plist:
                continue
            w = self._ln_idf(s)
            for fid, tf in plist:
                acc[fid] = acc.get(fid, 0.0) + w * self._saturate(tf, self.doc_len[fid])
        return acc

    def retrieve_top_k(self, query, k: int = DEFAULT_K) -> list[RetrievalResult]:
        """Top-k facts by score, ties broken by ascending fact_id.

        Facts sharing no stem with the query score exactly 0; they rank
        after every positive score and before any negative one.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        acc = self.accumulate(query)
        ranked = heapq.nsmallest(k, ((-s, f) for f, s in acc.items() if s > 0))
        if len(ranked) < k:
            for f in self.fact_ids:
                if acc.get(f, 0.0) == 0.0:
                    ranked.append((0.0, f))
                    if len(ranked) == k:
                        break
        if len(ranked) < k:
            ranked.extend(heapq.nsmallest(k - len(ranked), ((-s, f) for f, s in acc.items() if s < 0)))
        return [RetrievalResult(f, -ns * self._scale if ns else 0.0, r) for r, (ns, f) in enumerate(ranked, 1)]

    # Persistence

    def to_bytes(self) -> bytes:
        w = _Writer()
        w.f64(self.k1)
        w.f64(self.b)
        w.f64(0.0 if self.log_base is None else self.log_base)
        w.f64(self.avg_doc_len)
        w.u32(self.N)
        for fid in self.fact_ids:
            w.i64(fid)
            w.u32(self.doc_len[fid])
            w.str(self.texts.get(fid, ""))
        stems = sorted(self.postings)
        w.u32(len(stems))
        for s in stems:
            w.str(s)
            plist = self.postings[s]
            w.u32(len(plist))
            for fid, tf in plist:
                w.i64(fid)
                w.u32(tf)
        for words in (sorted(self.policy.stop_set), sorted(self.policy.keep_set)):
            w.u32(len(words))
            for word in words:
                w.str(word)
        payload = bytes(w.buf)
        return MAGIC + struct.pack("<IQ", FORMAT_VERSION, len(payload)) + payload + struct.pack("<I", zlib.crc32(payload))

    @classmethod
    def from_bytes(cls, data: bytes) -> "Bm25Index":
        if len(data) < 8 or data[:8] != MAGIC:
            raise IndexVersionError("not a stemkg index (bad magic bytes)")
        if len(data) < 20:
            raise IndexFormatError("truncated index header")
        version, size = struct.unpack_from("<IQ", data, 8)
        if version != FORMAT_VERSION:
            raise IndexVersionError(f"index format version {version}, expected {FORMAT_VERSION}")
        if len(data) != 20 + size + 4:
            raise IndexFormatError(f"index file size mismatch: {len(data)} bytes, header declares {size + 24}")
        payload = data[20:20 + size]
        (crc,) = struct.unpack_from("<I", data, 20 + size)
        if zlib.crc32(payload) != crc:
            raise IndexFormatError("index checksum mismatch")

        r = _Reader(payload)
        k1, b, base, avg = r.f64(), r.f64(), r.f64(), r.f64()
        n = r.u32()
        doc_len, texts = {}, {}
        for _ in range(n):
            fid = r.i64()
            doc_len[fid] = r.u32()
            text = r.str()
            if text:
                texts[fid] = text
        postings, doc_freq = {}, {}
        for _ in range(r.u32()):
            s = r.str()
            plist = [(r.i64(), r.u32()) for _ in range(r.u32())]
            postings[s] = plist
            doc_freq[s] = len(plist)
        stop = frozenset(r.str() for _ in range(r.u32()))
        keep = frozenset(r.str() for _ in range(r.u32()))
        if not r.done():
            raise IndexFormatError("trailing bytes in index payload")
        return cls(n, doc_freq, postings, doc_len, avg, k1, b, base or None, texts, StopWordPolicy(stop, keep))


def _stems(query):
    return getattr(query, "stems", query)


def build_index(corpus, k1: float = DEFAULT_K1, b: float = DEFAULT_B, log_base: Optional[float] = None,
                policy: StopWordPolicy = EMPTY_POLICY) -> Bm25Index:
    """Index fact sentences by the stem multiset of their text."""
    if k1 < 0:
        raise ValueError("k1 must be >= 0")
    if not 0.0 <= b <= 1.0:
        raise ValueError("b must lie in [0, 1]")
    if log_base is not None and (log_base <= 0 or log_base == 1):
        raise ValueError("log_base must be positive and != 1")
    doc_len, texts, postings = {}, {}, {}
    for fact in corpus:
        if fact.fact_id in doc_len:
            raise ValueError(f"duplicate fact_id {fact.fact_id}")
        doc_len[fact.fact_id] = len(fact.stem_seq)
        texts[fact.fact_id] = fact.text
        for s, tf in Counter(fact.stem_seq).items():
            postings.setdefault(s, []).append((fact.fact_id, tf))
    for plist in postings.values():
        plist.sort()
    n = len(doc_len)
    avg = sum(doc_len[f] for f in sorted(doc_len)) / n if n else 0.0
    doc_freq = {s: len(p) for s, p in postings.items()}
    return Bm25Index(n, doc_freq, postings, doc_len, avg, k1, b, log_base, texts, policy)


def idf(index: Bm25Index, s: str) -> float:
    return index.idf(s)


def term_score(index: Bm25Index, s: str, fact_id: int) -> float:
    return index.term_score(s, fact_id)


def score(index: Bm25Index, query, fact_id: int) -> float:
    return index.score(query, fact_id)


def retrieve_top_k(index: Bm25Index, query, k: int = DEFAULT_K) -> list[RetrievalResult]:
    return index.retrieve_top_k(query, k)


def save_index(index: Bm25Index, path):
    with open(path, "wb") as f:
        f.write(index.to_bytes())


def load_index(path) -> Bm25Index:
    with open(path, "rb") as f:
        return Bm25Index.from_bytes(f.read())


class _Writer:
    def __init__(self):
        self.buf = bytearray()

    def f64(self, v):
        self.buf += struct.pack("<d", v)

    def u32(self, v):
        self.buf += struct.pack("<I", v)

    def i64(self, v):
        self.buf += struct.pack("<q", v)

    def str(self, s):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.buf += raw


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def _take(self, fmt):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise IndexFormatError("truncated index payload")
        (v,) = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return v

    def f64(self):
        return self._take("<d")

    def u32(self):
        return self._take("<I")

    def i64(self):
        return self._take("<q")

    def str(self):
        n = self.u32()
        if self.pos + n > len(self.data):
            raise IndexFormatError("truncated index payload")
        s = bytes(self.data[self.pos:self.pos + n]).decode("utf-8")
        self.pos += n
        return s

    def done(self):
        return self.pos == len(self.data)
