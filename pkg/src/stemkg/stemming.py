"""Text normalization, stop-word policy and the VQA stem corpus."""

import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable

from stemkg.porter import porter_stem

_NON_WORD = re.compile(r"[^a-z0-9\s]+")
_ALPHA_DIGIT = re.compile(r"(?<=[a-z])(?=[0-9])|(?<=[0-9])(?=[a-z])")


def stem(word: str) -> str:
    """Single-pass Porter stem. Non-alphabetic tokens pass through unchanged."""
    return porter_stem(word)


def normalize_text(text: str) -> list[str]:
    """Lowercase, turn punctuation into spaces and split.

    Digit runs become standalone tokens, so ``"2nd"`` gives ``["2", "nd"]``.
    """
    text = _NON_WORD.sub(" ", text.lower())
    text = _ALPHA_DIGIT.sub(" ", text)
    return text.split()


@dataclass(frozen=True)
class StopWordPolicy:
    stop_set: frozenset = frozenset()
    keep_set: frozenset = frozenset()

    def removes(self, token: str) -> bool:
        return token in self.stop_set and token not in self.keep_set

    def filter(self, tokens: Iterable[str]) -> list[str]:
        return [t for t in tokens if not self.removes(t)]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "StopWordPolicy":
        stop, keep = set(), set()
        for line in lines:
            word = line.strip().lower()
            if not word or word.startswith("#"):
                continue
            if word.startswith("+"):
                keep.add(word[1:].strip())
            else:
                stop.add(word)
        return cls(frozenset(stop), frozenset(keep))

    @classmethod
    def load(cls, path) -> "StopWordPolicy":
        with open(path, encoding="utf-8") as f:
            return cls.from_lines(f)

    @classmethod
    def default(cls) -> "StopWordPolicy":
        text = resources.files("stemkg.data").joinpath("stopwords.txt").read_text("utf-8")
        return cls.from_lines(text.splitlines())

    def to_lines(self) -> list[str]:
        return sorted(self.stop_set) + sorted("+" + w for w in self.keep_set)


EMPTY_POLICY = StopWordPolicy()


def stems_of(text: str, policy: StopWordPolicy = EMPTY_POLICY) -> list[str]:
    """Normalize, drop stop words, stem. Order and duplicates are preserved."""
    return [stem(t) for t in policy.filter(normalize_text(text))]


@dataclass
class VqaCorpus:
    """Stem -> frequency lexicon that gates which KG triples survive."""

    counts: Counter = field(default_factory=Counter)

    def __contains__(self, s):
        return s in self.counts

    def __len__(self):
        return len(self.counts)

    def items_sorted(self):
        return sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))

    def save(self, path):
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            for s, n in self.items_sorted():
                f.write(f"{s}\t{n}\n")

    @classmethod
    def load(cls, path) -> "VqaCorpus":
        counts = Counter()
        with open(path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ValueError(f"{path}:{lineno}: expected 'stem<TAB>frequency'")
                counts[parts[0]] = int(parts[1])
        return cls(counts)


def example_texts(example) -> list[str]:
    return [example.question, *example.answers.strings(), example.caption, example.ocr_text]


def build_vqa_corpus(dataset, policy: StopWordPolicy = EMPTY_POLICY) -> VqaCorpus:
    """Count stems over question, every answer, caption and OCR of each example.

    Each distinct answer string is counted once, regardless of how many
    annotators gave it.
    """
    counts = Counter()
    for ex in dataset:
        for text in example_texts(ex):
            counts.update(stems_of(text, policy))
    return VqaCorpus(counts)


def read_word_list(path) -> list[str]:
    return [w.strip().lower() for w in Path(path).read_text("utf-8").splitlines() if w.strip()]
