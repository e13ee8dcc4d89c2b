"""Batch commands chaining KG construction, indexing, retrieval and evaluation.

Exit status: 0 on success, 1 for bad input or usage, 2 for an internal error.
Logs go to stderr; data only to the paths given with ``--out``.
"""

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from stemkg import __version__
from stemkg import kg as kgmod
from stemkg.evaluation import AnswerSet, answer_stems, evaluate_answers, inc_recall_at_k
from stemkg.query import DEFAULT_BUDGET, assemble_contexts, example_query, image_text, load_dataset
from stemkg.retrieval import DEFAULT_B, DEFAULT_K, DEFAULT_K1, build_index, load_index, save_index
from stemkg.stemming import StopWordPolicy, VqaCorpus, build_vqa_corpus
from stemkg.training_signal import (
    AttentionRecord, SignalConfig, aggregate_attention, apply_answer_bias, facts_with_answer, kl_loss,
    load_embeddings, retriever_distribution, target_distribution,
)
from stemkg.verbalizer import TemplateRegistry, build_fact_corpus, save_fact_corpus

logger = logging.getLogger("stemkg")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out, command, inputs, params):
    """Sidecar ``<out>.manifest.json`` recording inputs (with sha256), parameters and version."""
    manifest = {
        "command": command,
        "inputs": {name: {"path": str(p), "sha256": _digest(p)} for name, p in inputs.items() if p},
        "params": params,
        "version": __version__,
    }
    Path(f"{out}.manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", "utf-8")


def _require(*paths):
    for p in paths:
        if p and not Path(p).is_file():
            raise InputError(f"no such file: {p}")


def _policy(path):
    if path:
        _require(path)
        return StopWordPolicy.load(path)
    return StopWordPolicy.default()


def _write_lines(path, lines):
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for line in lines:
            f.write(line + "\n")


def load_source_specs(path) -> list:
    """Sources file: ``{"sources": [{"name", "path", "has_confidence",
    "max_triples_by_confidence", "relation_blocklist"}, ...]}``.
    Relative paths resolve against the sources file's directory.
    """
    _require(path)
    obj = json.loads(Path(path).read_text("utf-8"))
    base = Path(path).parent
    specs = []
    for entry in obj.get("sources", []):
        src = Path(entry["path"])
        if not src.is_absolute():
            src = base / src
        _require(src)
        specs.append(kgmod.SourceSpec(
            name=entry["name"],
            path=str(src),
            has_confidence=bool(entry.get("has_confidence", False)),
            max_triples_by_confidence=entry.get("max_triples_by_confidence"),
            relation_blocklist=frozenset(entry.get("relation_blocklist", [])),
        ))
    return specs


def cmd_build_corpus(args):
    _require(args.dataset)
    dataset = load_dataset(args.dataset)
    corpus = build_vqa_corpus(dataset.values(), _policy(args.stopwords))
    corpus.save(args.out)
    logger.info("corpus: %d stems from %d examples", len(corpus), len(dataset))
    write_manifest(args.out, "build-corpus", {"dataset": args.dataset, "stopwords": args.stopwords}, {})


def cmd_build_kg(args):
    specs = load_source_specs(args.sources)
    _require(args.corpus)
    corpus = VqaCorpus.load(args.corpus)
    triples = kgmod.ingest_all(specs, workers=args.workers)
    snapshot = kgmod.build_kg(triples, corpus, args.threshold)
    snapshot.save(args.out)
    logger.info("kg: %s", snapshot.stats_line())
    inputs = {"sources": args.sources, "corpus": args.corpus}
    inputs.update({f"source:{s.name}": s.path for s in specs})
    write_manifest(args.out, "build-kg", inputs, {"threshold": args.threshold})


def cmd_index(args):
    _require(args.kg, args.templates)
    policy = _policy(args.stopwords)
    registry = TemplateRegistry.load(args.templates) if args.templates else TemplateRegistry.default()
    snapshot = kgmod.load_snapshot(args.kg)
    facts = build_fact_corpus(snapshot, registry, policy)
    index = build_index(facts, args.k1, args.b, policy=policy)
    save_index(index, args.out)
    if args.facts_out:
        save_fact_corpus(facts, args.facts_out)
    logger.info("index: %d facts, %d stems, avg length %.3f", index.N, len(index.postings), index.avg_doc_len)
    write_manifest(args.out, "index", {"kg": args.kg, "templates": args.templates, "stopwords": args.stopwords},
                   {"k1": args.k1, "b": args.b})


def _format_ranked(example_id, results) -> str:
    ranked = ", ".join(f"[{r.fact_id}, {r.score:.6f}]" for r in results)
    return f'{{"query_id": {json.dumps(example_id)}, "ranked": [{ranked}]}}'


def cmd_retrieve(args):
    _require(args.index, args.dataset)
    index = load_index(args.index)
    dataset = load_dataset(args.dataset)
    policy = _policy(args.stopwords) if args.stopwords else index.policy

    def run(ex):
        return _format_ranked(ex.example_id, index.retrieve_top_k(example_query(ex, policy), args.k))

    examples = list(dataset.values())
    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            lines = list(pool.map(run, examples))
    else:
        lines = [run(ex) for ex in examples]
    _write_lines(args.out, lines)
    write_manifest(args.out, "retrieve", {"index": args.index, "dataset": args.dataset, "stopwords": args.stopwords},
                   {"k": args.k})


def load_retrieval_dump(path) -> dict:
    """``query_id -> [fact_id, ...]`` in rank order."""
    _require(path)
    ranked = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ranked[str(obj["query_id"])] = [int(fid) for fid, _ in obj["ranked"]]
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad retrieval row ({exc})") from exc
    return ranked


def _fact_texts(index, ranked):
    try:
        return {eid: [index.texts[f] for f in fids] for eid, fids in ranked.items()}
    except KeyError as exc:
        raise InputError(f"retrieval dump names fact {exc} which is not in the index") from exc


def cmd_contexts(args):
    _require(args.index, args.dataset)
    index = load_index(args.index)
    dataset = load_dataset(args.dataset)
    texts = _fact_texts(index, load_retrieval_dump(args.retrieval))
    missing = [eid for eid in dataset if eid not in texts]
    if missing:
        raise InputError(f"retrieval dump lacks examples: {', '.join(missing[:10])}")
    lines = []
    for eid, ex in dataset.items():
        ctx = assemble_contexts(ex.question, image_text(ex.ocr_text, ex.caption), texts[eid], args.budget)
        row = {"example_id": eid, "background": ctx.background, "knowledge": ctx.knowledge}
        if ctx.facts_dropped:
            row["facts_dropped"] = ctx.facts_dropped
        if ctx.empty_knowledge and texts[eid]:
            row["empty_knowledge"] = True
        lines.append(json.dumps(row, ensure_ascii=False))
    _write_lines(args.out, lines)
    write_manifest(args.out, "contexts", {"retrieval": args.retrieval, "dataset": args.dataset, "index": args.index},
                   {"budget": args.budget})


def _load_predictions(path):
    _require(path)
    preds = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                preds.append((str(obj["example_id"]), str(obj["ans"])))
            except (ValueError, KeyError, TypeError) as exc:
                raise InputError(f"{path}:{lineno}: bad prediction row ({exc})") from exc
    return preds


def _emit(obj, text, out):
    print(text)
    if out:
        Path(out).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", "utf-8")


def cmd_eval(args):
    _require(args.dataset)
    dataset = load_dataset(args.dataset)
    report = evaluate_answers(_load_predictions(args.predictions), dataset, _policy(args.stopwords))
    result = report.to_json()
    if args.retrieval:
        result["recall_at_k"] = _recall(args, dataset).to_json()
    _emit(result, report.table(), args.out)


def _recall(args, dataset):
    _require(args.index)
    index = load_index(args.index)
    texts = _fact_texts(index, load_retrieval_dump(args.retrieval))
    policy = _policy(args.stopwords) if args.stopwords else index.policy
    return inc_recall_at_k(texts, dataset, args.ks, policy)


def cmd_recall(args):
    _require(args.dataset)
    report = _recall(args, load_dataset(args.dataset))
    table = "\n".join(f"R@{k:<4} {100 * v:6.2f}" for k, v in sorted(report.recall.items()))
    _emit({"recall_at_k": report.to_json(), "n": report.n}, table, args.out)


def cmd_signal(args):
    _require(args.attention, args.embeddings)
    obj = json.loads(Path(args.attention).read_text("utf-8"))
    rec = AttentionRecord(obj["scores"])
    spans = [(int(fid), int(s), int(e)) for fid, s, e in obj["spans"]]
    cfg = SignalConfig(args.layer_scope, args.agg, args.bias)
    scores = aggregate_attention(rec, spans, cfg)
    if cfg.answer_bias:
        if "contains_answer" in obj:
            flagged = {int(f) for f in obj["contains_answer"]}
        elif "fact_texts" in obj and "answers" in obj:
            gt = answer_stems(AnswerSet.from_raw(obj["answers"]), _policy(args.stopwords))
            flagged = facts_with_answer({int(f): t for f, t in obj["fact_texts"].items()}, gt)
        else:
            raise InputError("--bias needs 'contains_answer' or 'fact_texts' + 'answers' in the attention file")
        scores = apply_answer_bias(scores, flagged, cfg.answer_bias)
    query, fact_embs = load_embeddings(args.embeddings)
    missing = [f for f in scores if f not in fact_embs]
    if missing:
        raise InputError(f"no embedding for facts {missing}")
    a = target_distribution(scores)
    o = retriever_distribution(query, {f: fact_embs[f] for f in a})
    result = {
        "kl": kl_loss(a, o),
        "per_fact_A": {str(f): p for f, p in a.items()},
        "per_fact_O": {str(f): p for f, p in o.items()},
    }
    text = json.dumps(result, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", "utf-8")
    else:
        print(text)


def _positive_int(v):
    n = int(v)
    if n < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return n


def _nonneg_float(v):
    x = float(v)
    if x < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return x


def _unit_float(v):
    x = float(v)
    if not 0.0 <= x <= 1.0:
        raise argparse.ArgumentTypeError("must lie in [0, 1]")
    return x


def _ks(v):
    try:
        ks = [int(x) for x in v.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers")
    if not ks or any(k < 0 for k in ks):
        raise argparse.ArgumentTypeError("expected non-negative integers")
    return ks


def make_parser():
    p = _Parser(prog="stemkg", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("build-corpus", help="stem lexicon from a VQA dataset")
    s.add_argument("--dataset", required=True)
    s.add_argument("--stopwords")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_corpus)

    s = sub.add_parser("build-kg", help="filter and dedup triples into a KG snapshot")
    s.add_argument("--sources", required=True, help="JSON file listing the triple sources")
    s.add_argument("--corpus", required=True)
    s.add_argument("--threshold", type=int, default=kgmod.DEFAULT_FREQUENT_THRESHOLD)
    s.add_argument("--workers", type=_positive_int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_build_kg)

    s = sub.add_parser("index", help="verbalize a KG snapshot and build the BM25 index")
    s.add_argument("--kg", required=True)
    s.add_argument("--templates")
    s.add_argument("--stopwords")
    s.add_argument("--k1", type=_nonneg_float, default=DEFAULT_K1)
    s.add_argument("--b", type=_unit_float, default=DEFAULT_B)
    s.add_argument("--facts-out")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_index)

    s = sub.add_parser("retrieve", help="top-k facts per dataset example")
    s.add_argument("--index", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--stopwords", help="override the policy stored in the index")
    s.add_argument("--k", type=_positive_int, default=DEFAULT_K)
    s.add_argument("--threads", type=_positive_int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("contexts", help="background and knowledge reader inputs")
    s.add_argument("--retrieval", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_contexts)

    s = sub.add_parser("eval", help="EM / Inc / Stem accuracy of predictions")
    s.add_argument("--predictions", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--stopwords")
    s.add_argument("--retrieval", help="also report Inc-based Recall@K (needs --index)")
    s.add_argument("--index")
    s.add_argument("--ks", type=_ks, default=[1, 5, 10])
    s.add_argument("--out", help="write the JSON report here")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("recall", help="Inc-based Recall@K of a retrieval dump")
    s.add_argument("--retrieval", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--index", required=True)
    s.add_argument("--stopwords")
    s.add_argument("--ks", type=_ks, default=[1, 5, 10])
    s.add_argument("--out")
    s.set_defaults(func=cmd_recall)

    s = sub.add_parser("signal", help="attention-derived target vs retriever distribution")
    s.add_argument("--attention", required=True)
    s.add_argument("--embeddings", required=True)
    s.add_argument("--layer-scope", choices=["full", "half"], default="full")
    s.add_argument("--agg", choices=["max", "mean", "tophalf"], default="max")
    s.add_argument("--bias", type=float, default=None)
    s.add_argument("--stopwords")
    s.add_argument("--out")
    s.set_defaults(func=cmd_signal)
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and args.retrieval and not args.index:
        print("stemkg eval: --retrieval needs --index", file=sys.stderr)
        return 1
    try:
        args.func(args)
    except kgmod.IngestError as exc:
        for err in exc.errors:
            logger.error("%s", err)
        return 1
    except (InputError, OSError, ValueError, KeyError) as exc:
        logger.error("%s", exc)
        return 1
    except Exception:
        logger.exception("internal error")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
