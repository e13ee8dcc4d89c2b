"""KG construction: ingestion, blocklisting, corpus filtering, frequent-relation dedup."""

import logging
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional

from stemkg.stemming import VqaCorpus, stems_of

logger = logging.getLogger(__name__)

DEFAULT_FREQUENT_THRESHOLD = 10_000


def entity_key(text: str) -> str:
    """Identity used for grouping and counting: lowercased, whitespace collapsed."""
    return " ".join(text.lower().split())


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    source: str = ""
    confidence: Optional[float] = None

    def __post_init__(self):
        for name in ("head", "relation", "tail"):
            value = getattr(self, name).strip()
            if not value:
                raise ValueError(f"empty {name}")
            object.__setattr__(self, name, value)

    @property
    def pair(self):
        return entity_key(self.head), entity_key(self.tail)

    def to_row(self) -> str:
        return f"{self.head}\t{self.relation}\t{self.tail}"


@dataclass
class SourceSpec:
    name: str
    path: str = ""
    has_confidence: bool = False
    max_triples_by_confidence: Optional[int] = None
    relation_blocklist: frozenset = frozenset()

    def __post_init__(self):
        if self.max_triples_by_confidence is not None and self.max_triples_by_confidence <= 0:
            raise ValueError("max_triples_by_confidence must be positive")
        self.relation_blocklist = frozenset(r.lower() for r in self.relation_blocklist)
        if self.max_triples_by_confidence is not None:
            self.has_confidence = True


@dataclass
class RowError:
    source: str
    lineno: int
    message: str

    def __str__(self):
        return f"{self.source}:{self.lineno}: {self.message}"


class IngestError(ValueError):
    """Raised after a full pass over a source when any row failed to parse."""

    def __init__(self, errors):
        self.errors = list(errors)
        head = "; ".join(str(e) for e in self.errors[:5])
        more = f" (+{len(self.errors) - 5} more)" if len(self.errors) > 5 else ""
        super().__init__(f"{len(self.errors)} malformed row(s): {head}{more}")


def parse_rows(spec: SourceSpec, lines: Iterable[str]):
    """Parse TSV rows into ``(triples, errors)``; ``#`` lines and blanks are skipped."""
    triples, errors = [], []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) not in (3, 4):
            errors.append(RowError(spec.name, lineno, f"expected 3 or 4 tab-separated fields, got {len(parts)}"))
            continue
        confidence = None
        if len(parts) == 4 and parts[3].strip():
            try:
                confidence = float(parts[3])
            except ValueError:
                errors.append(RowError(spec.name, lineno, f"bad confidence {parts[3]!r}"))
                continue
            if not 0.0 <= confidence <= 1.0:
                errors.append(RowError(spec.name, lineno, f"confidence {confidence} outside [0, 1]"))
                continue
        if spec.has_confidence and confidence is None:
            errors.append(RowError(spec.name, lineno, "missing confidence"))
            continue
        try:
            triple = Triple(parts[0], parts[1], parts[2], spec.name, confidence)
        except ValueError as exc:
            errors.append(RowError(spec.name, lineno, str(exc)))
            continue
        triples.append(triple)
    return triples, errors


def ingest_source(spec: SourceSpec, records: Iterable[str]) -> list[Triple]:
    """Parse one source, drop blocklisted relations and apply the confidence cap.

    The blocklist is applied before the cap. Capped output keeps the
    top-N rows by confidence (ties by input order) in their input order.
    """
    parsed, errors = parse_rows(spec, records)
    if errors:
        raise IngestError(errors)
    triples = [t for t in parsed if t.relation.lower() not in spec.relation_blocklist]

    cap = spec.max_triples_by_confidence
    if cap is not None and len(triples) > cap:
        order = sorted(range(len(triples)), key=lambda i: (-triples[i].confidence, i))
        keep = sorted(order[:cap])
        triples = [triples[i] for i in keep]
    return triples


def ingest_all(specs, workers: int = 1) -> list[Triple]:
    """Ingest several sources, merged in the order the specs are given."""

    def run(spec):
        with open(spec.path, encoding="utf-8") as f:
            return ingest_source(spec, f)

    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, specs))
    else:
        parts = [run(s) for s in specs]
    merged = []
    for spec, part in zip(specs, parts):
        logger.info("source %s: %d triples", spec.name, len(part))
        merged.extend(part)
    return merged


@dataclass
class RelationStats:
    counts: Counter = field(default_factory=Counter)
    frequent_threshold: int = DEFAULT_FREQUENT_THRESHOLD

    def is_frequent(self, relation: str) -> bool:
        return self.counts[relation] > self.frequent_threshold

    @property
    def frequent(self) -> set:
        return {r for r, n in self.counts.items() if n > self.frequent_threshold}


def compute_relation_frequencies(triples, threshold: int = DEFAULT_FREQUENT_THRESHOLD) -> RelationStats:
    return RelationStats(Counter(t.relation for t in triples), threshold)


def filter_by_corpus(triples, corpus: VqaCorpus) -> list[Triple]:
    """Keep a triple iff its head and its tail each contain at least one corpus stem.

    Stop words need no special handling here: the corpus never holds them.
    """

    def hits(text):
        return any(s in corpus for s in stems_of(text))

    return [t for t in triples if hits(t.head) and hits(t.tail)]


def dedup_frequent_relations(triples, stats: RelationStats) -> list[Triple]:
    """Drop frequent-relation triples that share their (head, tail) pair with others.

    If every triple of a group has a frequent relation, the one whose
    relation is least common survives (ties: smallest relation string, then
    first in input order). Output keeps input order.
    """
    groups = defaultdict(list)
    for i, t in enumerate(triples):
        groups[t.pair].append(i)

    drop = set()
    for members in groups.values():
        if len(members) < 2:
            continue
        frequent = [i for i in members if stats.is_frequent(triples[i].relation)]
        if not frequent:
            continue
        if len(frequent) < len(members):
            drop.update(frequent)
        else:
            keep = min(members, key=lambda i: (stats.counts[triples[i].relation], triples[i].relation, i))
            drop.update(i for i in members if i != keep)
    return [t for i, t in enumerate(triples) if i not in drop]


@dataclass
class KgSnapshot:
    triples: list
    entity_count: int
    relation_count: int
    triple_count: int

    def stats_line(self) -> str:
        return f"triples={self.triple_count} entities={self.entity_count} relations={self.relation_count}"

    def save(self, path):
        """Write the snapshot TSV and its ``.stats`` sidecar."""
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for t in self.triples:
                f.write(t.to_row() + "\n")
        with open(f"{path}.stats", "w", encoding="utf-8", newline="\n") as f:
            f.write(self.stats_line() + "\n")


def kg_stats(triples) -> KgSnapshot:
    triples = list(triples)
    entities = set()
    for t in triples:
        entities.update(t.pair)
    relations = {t.relation for t in triples}
    return KgSnapshot(triples, len(entities), len(relations), len(triples))


def load_snapshot(path, source: str = "kg") -> KgSnapshot:
    with open(path, encoding="utf-8") as f:
        return kg_stats(ingest_source(SourceSpec(source), f))


def build_kg(triples, corpus: VqaCorpus, threshold: int = DEFAULT_FREQUENT_THRESHOLD) -> KgSnapshot:
    """Corpus filtering, then frequent-relation dedup on the survivors."""
    kept = filter_by_corpus(triples, corpus)
    stats = compute_relation_frequencies(kept, threshold)
    logger.info("corpus filter kept %d of %d triples; frequent relations: %s",
                len(kept), len(triples), sorted(stats.frequent))
    return kg_stats(dedup_frequent_relations(kept, stats))
