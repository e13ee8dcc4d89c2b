"""Query-side text: image text, stem query and the two reader contexts."""

import json
from dataclasses import dataclass

from stemkg.evaluation import AnswerSet
from stemkg.stemming import EMPTY_POLICY, StopWordPolicy, stems_of

DEFAULT_BUDGET = 130
JOINT = "joint"
SEPARATE = "separate"


@dataclass(frozen=True)
class VqaExample:
    example_id: str
    question: str
    caption: str = ""
    ocr_text: str = ""
    answers: AnswerSet = AnswerSet(())

    def __post_init__(self):
        if not self.question or not self.question.strip():
            raise ValueError(f"example {self.example_id!r}: empty question")

    @classmethod
    def from_json(cls, obj: dict) -> "VqaExample":
        if "example_id" not in obj:
            raise ValueError("missing example_id")
        if not isinstance(obj.get("question"), str):
            raise ValueError(f"example {obj['example_id']!r}: missing question")
        return cls(
            example_id=str(obj["example_id"]),
            question=obj["question"],
            caption=obj.get("caption") or "",
            ocr_text=obj.get("ocr") or "",
            answers=AnswerSet.from_raw(obj.get("answers") or []),
        )


class DatasetError(ValueError):
    def __init__(self, errors):
        self.errors = errors
        super().__init__("; ".join(errors[:5]) + (f" (+{len(errors) - 5} more)" if len(errors) > 5 else ""))


def load_dataset(path) -> dict:
    """Read a JSON-lines dataset into an ordered ``example_id -> VqaExample`` map."""
    examples, errors = {}, []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                ex = VqaExample.from_json(json.loads(line))
            except (ValueError, TypeError) as exc:
                errors.append(f"{path}:{lineno}: {exc}")
                continue
            if ex.example_id in examples:
                errors.append(f"{path}:{lineno}: duplicate example_id {ex.example_id!r}")
                continue
            examples[ex.example_id] = ex
    if errors:
        raise DatasetError(errors)
    return examples


def image_text(ocr: str, caption: str) -> str:
    """OCR text first, then the caption; empty parts are skipped."""
    return " ".join(p.strip() for p in (ocr, caption) if p and p.strip())


@dataclass(frozen=True)
class StemQuery:
    stems: tuple
    image_len: int  # length of the de-duplicated image-text prefix

    @property
    def t(self) -> int:
        return len(self.stems)


def build_stem_query(question: str, v_text: str, policy: StopWordPolicy = EMPTY_POLICY) -> StemQuery:
    """Image-text stems (first occurrence only) followed by every question stem.

    Repeats inside the question, and between question and image text, are
    kept so that what the question stresses weighs more.
    """
    prefix = tuple(dict.fromkeys(stems_of(v_text, policy)))
    return StemQuery(prefix + tuple(stems_of(question, policy)), len(prefix))


def example_query(ex: VqaExample, policy: StopWordPolicy = EMPTY_POLICY) -> StemQuery:
    return build_stem_query(ex.question, image_text(ex.ocr_text, ex.caption), policy)


@dataclass(frozen=True)
class ReaderContexts:
    background: str
    knowledge: str
    facts_used: int
    facts_dropped: int

    @property
    def L_b(self) -> int:
        return len(self.background.split())

    @property
    def L_k(self) -> int:
        return len(self.knowledge.split())

    @property
    def empty_knowledge(self) -> bool:
        return self.facts_used == 0


def _knowledge(texts) -> str:
    return " ".join(["fact:", ". ".join(texts)]) if texts else "fact:"


def assemble_contexts(question: str, v_text: str, facts, budget: int = DEFAULT_BUDGET) -> ReaderContexts:
    """Background and knowledge texts with their ``question:``/``context:``/``fact:`` prefixes.

    ``facts`` are fact sentences (or plain strings) in rank order. Only the
    knowledge text is cut, by whole facts from the lowest rank, until its
    whitespace token count fits ``budget``.
    """
    texts = [getattr(f, "text", f) for f in facts]
    background = f"question: {question} context: {v_text}".rstrip()
    keep = len(texts)
    while keep > 0 and len(_knowledge(texts[:keep]).split()) > budget:
        keep -= 1
    return ReaderContexts(background, _knowledge(texts[:keep]), keep, len(texts) - keep)


def attention_pair_count(l_b: int, l_k: int, mode: str = SEPARATE) -> int:
    """Self-attention score count when encoding the two contexts jointly or separately."""
    if l_b < 0 or l_k < 0:
        raise ValueError("lengths must be >= 0")
    if mode == JOINT:
        return (l_b + l_k) ** 2
    if mode == SEPARATE:
        return l_b * l_b + l_k * l_k
    raise ValueError(f"unknown mode {mode!r}")
