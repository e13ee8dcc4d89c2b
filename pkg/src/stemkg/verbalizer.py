"""Triple verbalization: relation templates and fact sentences."""

import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional

from stemkg.kg import KgSnapshot, Triple
from stemkg.stemming import EMPTY_POLICY, StopWordPolicy, normalize_text, stems_of

MANUAL = "manual"
AUTO = "auto"

_SLOT = re.compile(r"\{(head|tail)\}")
_CAMEL = re.compile(r"[A-Z]+(?=[A-Z][a-z])|[A-Z]?[a-z]+|[A-Z]+|[^A-Za-z]+")
_MAX_WORD = 24


def default_dictionary() -> frozenset:
    text = resources.files("stemkg.data").joinpath("segment_words.txt").read_text("utf-8")
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip() and not w.startswith("#"))


def _greedy_split(chunk: str, dictionary) -> list[str]:
    if chunk in dictionary:
        return [chunk]
    pieces, residue = [], ""
    i, n = 0, len(chunk)
    while i < n:
        for j in range(min(n, i + _MAX_WORD), i, -1):
            if chunk[i:j] in dictionary:
                if residue:
                    pieces.append(residue)
                    residue = ""
                pieces.append(chunk[i:j])
                i = j
                break
        else:
            residue += chunk[i]
            i += 1
    if residue:
        pieces.append(residue)
    return pieces


def segment_relation(relation: str, dictionary=None) -> list[str]:
    """Split a relation name into lowercase words.

    Underscores, whitespace and camel-case boundaries split first; each
    remaining fused chunk is cut by greedy longest match against
    ``dictionary``. Characters that match no word are kept as their own piece.
    """
    if dictionary is None:
        dictionary = default_dictionary()
    pieces = []
    for part in re.split(r"[_\s]+", relation.strip()):
        for chunk in _CAMEL.findall(part):
            pieces.extend(_greedy_split(chunk.lower(), dictionary))
    return pieces


@dataclass(frozen=True)
class Template:
    relation: str
    pattern: str
    origin: str = MANUAL

    def __post_init__(self):
        slots = _SLOT.findall(self.pattern)
        if sorted(slots) != ["head", "tail"]:
            raise ValueError(f"template for {self.relation!r} needs exactly one {{head}} and one {{tail}}: {self.pattern!r}")

    def render(self, head: str, tail: str) -> str:
        values = {"head": head, "tail": tail}
        return _SLOT.sub(lambda m: values[m.group(1)], self.pattern)


def auto_template(relation: str, dictionary=None) -> Template:
    words = " ".join(segment_relation(relation, dictionary))
    return Template(relation, f"{{head}} {words} {{tail}}", AUTO)


def relation_key(relation: str) -> str:
    """``RelatedTo``, ``related_to`` and ``related to`` share one key."""
    return re.sub(r"[_\s]+", "", relation).lower()


@dataclass
class TemplateRegistry:
    manual: dict = field(default_factory=dict)
    dictionary: frozenset = field(default_factory=default_dictionary)
    _auto: dict = field(default_factory=dict, repr=False)

    def add(self, relation: str, pattern: str):
        self.manual[relation_key(relation)] = Template(relation, pattern, MANUAL)

    def lookup(self, relation: str) -> Template:
        key = relation_key(relation)
        if key in self.manual:
            return self.manual[key]
        if relation not in self._auto:
            self._auto[relation] = auto_template(relation, self.dictionary)
        return self._auto[relation]

    @classmethod
    def from_lines(cls, lines: Iterable[str], dictionary=None) -> "TemplateRegistry":
        reg = cls() if dictionary is None else cls(dictionary=frozenset(dictionary))
        for lineno, line in enumerate(lines, 1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"template line {lineno}: expected 'relation<TAB>pattern'")
            reg.add(parts[0].strip(), parts[1].strip())
        return reg

    @classmethod
    def load(cls, path, dictionary=None) -> "TemplateRegistry":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(f, dictionary)

    @classmethod
    def default(cls) -> "TemplateRegistry":
        text = resources.files("stemkg.data").joinpath("templates.tsv").read_text("utf-8")
        return cls.from_lines(text.splitlines())


@dataclass(frozen=True)
class FactSentence:
    fact_id: int
    triple: Triple
    text: str
    stem_seq: tuple
    length: int

    @property
    def stems(self) -> frozenset:
        return frozenset(self.stem_seq)


def make_fact(fact_id: int, triple: Triple, text: str, policy: StopWordPolicy = EMPTY_POLICY) -> FactSentence:
    return FactSentence(fact_id, triple, text, tuple(stems_of(text, policy)), len(normalize_text(text)))


def verbalize(triple: Triple, registry: TemplateRegistry, fact_id: int = 0,
              policy: StopWordPolicy = EMPTY_POLICY) -> FactSentence:
    text = registry.lookup(triple.relation).render(triple.head, triple.tail)
    return make_fact(fact_id, triple, text, policy)


def build_fact_corpus(kg, registry: Optional[TemplateRegistry] = None,
                      policy: StopWordPolicy = EMPTY_POLICY) -> list[FactSentence]:
    """One fact sentence per triple, ids assigned by input position from 0."""
    triples = kg.triples if isinstance(kg, KgSnapshot) else list(kg)
    registry = registry or TemplateRegistry.default()
    return [verbalize(t, registry, i, policy) for i, t in enumerate(triples)]


def save_fact_corpus(facts, path):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for fs in facts:
            t = fs.triple
            f.write(f"{fs.fact_id}\t{t.head}\t{t.relation}\t{t.tail}\t{fs.text}\n")


def load_fact_corpus(path, policy: StopWordPolicy = EMPTY_POLICY) -> list[FactSentence]:
    facts = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 tab-separated fields")
            facts.append(make_fact(int(parts[0]), Triple(*parts[1:4]), parts[4], policy))
    return facts
