"""VQA answer metrics (EM, Inc, Stem with the min(1, n/3) credit) and Inc-based Recall@K."""

from collections import Counter
from dataclasses import dataclass, field

from stemkg.stemming import EMPTY_POLICY, StopWordPolicy, normalize_text, stem, stems_of

METRICS = ("em", "inc", "stem")


@dataclass(frozen=True)
class AnswerSet:
    """Ground-truth answers with the number of annotators who gave each."""

    answers: tuple  # ((answer, count), ...)
    total: int = 10

    def __post_init__(self):
        seen = set()
        for a, n in self.answers:
            if n < 1:
                raise ValueError(f"annotator count for {a!r} must be >= 1")
            if a in seen:
                raise ValueError(f"duplicate answer {a!r}")
            seen.add(a)
        if sum(n for _, n in self.answers) > self.total:
            raise ValueError("answer counts exceed the number of annotators")

    @classmethod
    def from_raw(cls, raw, total=None) -> "AnswerSet":
        """Accept a list of answer strings (one per annotator) or ``[answer, count]`` pairs."""
        counts = Counter()
        for item in raw:
            if isinstance(item, str):
                counts[item.strip()] += 1
            else:
                answer, n = item
                counts[str(answer).strip()] += int(n)
        return cls(tuple(counts.items()), max(total or 10, sum(counts.values())))

    def strings(self) -> list[str]:
        return [a for a, _ in self.answers]


def normalize_answer(text: str, policy: StopWordPolicy = EMPTY_POLICY) -> list[str]:
    return policy.filter(normalize_text(text))


def answer_score(matched_counts) -> float:
    """Best min(1, n/3) credit among the matched ground-truth answers; 0 if none matched."""
    best = 0.0
    for n in matched_counts:
        if n < 0:
            raise ValueError("annotator counts must be >= 0")
        best = max(best, min(1.0, n / 3))
    return best


def em_match(ans, gt) -> bool:
    return bool(ans) and list(ans) == list(gt)


def _contains(longer, shorter) -> bool:
    m = len(shorter)
    return any(longer[i:i + m] == shorter for i in range(len(longer) - m + 1))


def inc_match(ans, gt) -> bool:
    """Either token list occurs contiguously inside the other. Empty lists never match."""
    ans, gt = list(ans), list(gt)
    if not ans or not gt:
        return False
    if len(ans) <= len(gt):
        return _contains(gt, ans)
    return _contains(ans, gt)


def stem_match(ans, gt) -> bool:
    return not {stem(t) for t in ans}.isdisjoint(stem(t) for t in gt)


MATCHERS = {"em": em_match, "inc": inc_match, "stem": stem_match}


def example_scores(ans: str, answers: AnswerSet, policy: StopWordPolicy = EMPTY_POLICY) -> dict:
    pred = normalize_answer(ans, policy)
    gts = [(normalize_answer(a, policy), n) for a, n in answers.answers]
    return {
        name: answer_score(n for gt, n in gts if match(pred, gt))
        for name, match in MATCHERS.items()
    }


@dataclass
class MetricReport:
    per_example: dict = field(default_factory=dict)  # example_id -> {metric: score}
    means: dict = field(default_factory=dict)  # metric -> percentage

    def to_json(self) -> dict:
        return {m: round(self.means[m], 2) for m in METRICS}

    def table(self) -> str:
        lines = ["metric  score", "------  ------"]
        lines += [f"{m.upper():<6}  {self.means[m]:6.2f}" for m in METRICS]
        lines.append(f"n={len(self.per_example)}")
        return "\n".join(lines)


class MissingExamplesError(KeyError):
    def __init__(self, ids):
        self.ids = sorted(ids, key=str)
        super().__init__(f"no dataset entry for example ids: {', '.join(map(str, self.ids))}")


def evaluate_answers(predictions, dataset, policy: StopWordPolicy = EMPTY_POLICY) -> MetricReport:
    """Score predictions against the dataset.

    ``predictions`` maps example_id -> answer string (or is an iterable of
    ``(example_id, answer)``); ``dataset`` maps example_id -> VqaExample.
    """
    if isinstance(predictions, dict):
        predictions = predictions.items()
    predictions = list(predictions)
    missing = [eid for eid, _ in predictions if eid not in dataset]
    if missing:
        raise MissingExamplesError(missing)
    report = MetricReport()
    for eid, ans in predictions:
        report.per_example[eid] = example_scores(ans, dataset[eid].answers, policy)
    n = len(report.per_example)
    for m in METRICS:
        total = sum(s[m] for s in report.per_example.values())
        report.means[m] = 100.0 * total / n if n else 0.0
    return report


@dataclass
class RecallReport:
    recall: dict  # K -> fraction of examples
    n: int = 0

    def to_json(self) -> dict:
        return {str(k): v for k, v in sorted(self.recall.items())}


def answer_stems(answers: AnswerSet, policy: StopWordPolicy = EMPTY_POLICY) -> set:
    return {stem(t) for a in answers.strings() for t in normalize_answer(a, policy)}


def first_hit_rank(fact_texts, gt_stems, policy: StopWordPolicy = EMPTY_POLICY):
    """1-based rank of the first fact containing a ground-truth stem, or None."""
    for rank, text in enumerate(fact_texts, 1):
        if not gt_stems.isdisjoint(stems_of(text, policy)):
            return rank
    return None


def inc_recall_at_k(retrieved, dataset, ks, policy: StopWordPolicy = EMPTY_POLICY) -> RecallReport:
    """Fraction of examples whose top-K facts contain a stem of some ground-truth answer.

    ``retrieved`` maps example_id -> ranked list of fact texts. Every
    dataset example must be covered.
    """
    missing = [eid for eid in dataset if eid not in retrieved]
    if missing:
        raise MissingExamplesError(missing)
    hits = [first_hit_rank(retrieved[eid], answer_stems(ex.answers, policy), policy)
            for eid, ex in dataset.items()]
    n = len(hits)
    recall = {}
    for k in ks:
        if k < 0:
            raise ValueError("K must be >= 0")
        ok = sum(1 for r in hits if r is not None and r <= k)
        recall[k] = ok / n if n else 0.0
    return RecallReport(recall, n)
