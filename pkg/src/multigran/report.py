"""Render the comparison reports from pipeline artifacts.

All output is byte-deterministic: fixed float formatting, sorted keys, no
timestamps or absolute paths, so identically seeded runs produce identical
report files.
"""

from __future__ import annotations

import json
from pathlib import Path

from . import data as dio
from . import probing
from . import sampling

SYSTEM_LABELS = {
    "baseline": "dual-encoder",
    "vanilla": "vanilla-ensemble",
    "mgt": "mgt-ensemble",
}

TASK_LABELS = {probing.BOW_TASK: "BoW", probing.ABSTRACT_TASK: "topic"}


def _fmt(value) -> str:
    return f"{value:.6f}"


def _table(header, rows) -> str:
    widths = [max(len(str(row[i])) for row in [header] + rows) for i in range(len(header))]
    lines = []
    for row in [header] + rows:
        lines.append("  ".join(str(cell).ljust(w) for cell, w in zip(row, widths)).rstrip())
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"


def render_retrieval(eval_payload: dict, levels: int) -> str:
    systems = eval_payload["systems"]
    rn_keys = sorted(next(iter(systems.values()))["r_n_at_k"]) if systems else []
    header = ["system", "MRR", "Hits@1"] + [f"R_{key}" for key in rn_keys]
    rows = []
    for name in ("baseline", "vanilla", "mgt"):
        if name not in systems:
            continue
        rep = systems[name]
        label = SYSTEM_LABELS[name]
        if name != "baseline":
            label += f" ({levels})"
        rows.append([label, _fmt(rep["mrr"]), _fmt(rep["hits_at_1"])]
                    + [_fmt(rep["r_n_at_k"][key]) for key in rn_keys])
    out = ["next-utterance retrieval (test split)", "", _table(header, rows)]
    if eval_payload["significance"]:
        out.append("paired bootstrap on MRR (two-sided):")
        for pair, p in sorted(eval_payload["significance"].items()):
            a, b = pair.split("_vs_")
            out.append(f"  {SYSTEM_LABELS[a]} vs {SYSTEM_LABELS[b]}: p = {_fmt(p)}")
        out.append("")
    return "\n".join(out)


def _granularity_label(level: int, levels: int) -> str:
    if level == 1:
        return "highest granularity"
    if level == levels:
        return "highest abstraction"
    return f"level {level}"


def render_granularity(probe_payload: dict) -> str:
    results = probe_payload["granularity"]["results"]
    levels = sorted({r["level"] for r in results})
    kinds = [k for k in (probing.BOW_TASK, probing.ABSTRACT_TASK)
             if any(r["task"] == k for r in results)]
    by_cell = {(r["level"], r["task"]): r["micro_f1"] for r in results}
    header = ["model (negatives)"] + [f"{TASK_LABELS[k]} F1" for k in kinds]
    rows = []
    for level in levels:
        rows.append([f"level {level} ({_granularity_label(level, len(levels))})"]
                    + [_fmt(by_cell[(level, k)]) for k in kinds])
    out = ["granularity probes (frozen representations, test split)", "", _table(header, rows)]
    corr = probe_payload["granularity"].get("spearman_fineness", {})
    if corr:
        out.append("spearman correlation of F1 with fineness (level 1 = finest):")
        for kind in sorted(corr):
            out.append(f"  {TASK_LABELS[kind]}: rho = {_fmt(corr[kind])}")
        out.append("")
    return "\n".join(out)


def render_transfer(probe_payload: dict, levels: int) -> str:
    transfer = probe_payload["transfer"]
    labels = {
        "baseline": "dual-encoder",
        "vanilla_concat": f"vanilla-ensemble ({levels})",
        "mgt_concat": f"mgt-ensemble ({levels})",
    }
    kinds = [k for k in (probing.BOW_TASK, probing.ABSTRACT_TASK)
             if any(k in cells for cells in transfer.values())]
    header = ["representation"] + [f"{TASK_LABELS[k]} F1" for k in kinds]
    rows = []
    for name in ("baseline", "vanilla_concat", "mgt_concat"):
        if name not in transfer:
            continue
        rows.append([labels[name]]
                    + [_fmt(transfer[name][k]["micro_f1"]) for k in kinds])
    out = ["transfer probes (frozen representations, test split)", "", _table(header, rows)]
    finetune = probe_payload.get("finetune", {})
    if finetune:
        out.append("fine-tuned (encoder unfrozen):")
        for model_name in sorted(finetune):
            for kind in sorted(finetune[model_name]):
                out.append(f"  {model_name} / {TASK_LABELS[kind]}: "
                           f"F1 = {_fmt(finetune[model_name][kind]['micro_f1'])}")
        out.append("")
    return "\n".join(out)


def render_qualitative(run) -> str:
    """One dialog with its sampled negatives at every granularity level."""
    vocab = dio.Vocabulary.load(run.path("data/vocab.json"))
    train = dio.load_corpus(run.path("data/train.jsonl"))
    pool = sampling.load_pool(run.path("pool/pool.jsonl"))

    def detok(token_ids):
        return " ".join(vocab.id_to_token[t] for t in token_ids)

    example = train[0]
    out = ["sampled negatives by granularity level (training example 0)", ""]
    for speaker, text in example.turns:
        out.append(f"  {speaker}: {text}")
    out.append(f"  ground truth: {example.response}")
    out.append("")
    for level in range(1, run.config.granularities + 1):
        _, examples = dio.load_train_corpus(run.path(f"corpora/level_{level}.jsonl"))
        first_neg = examples[0].negative_indices[0]
        tag = _granularity_label(level, run.config.granularities)
        out.append(f"  level {level} ({tag}): {detok(pool.responses[first_neg])}")
    out.append("")
    return "\n".join(out)


def write_reports(run) -> list:
    eval_payload = json.loads(run.path("eval/retrieval.json").read_text(encoding="utf-8"))
    probe_payload = json.loads(run.path("probes/probe_results.json").read_text(encoding="utf-8"))
    levels = run.config.granularities
    reports_dir = run.path("reports")
    reports_dir.mkdir(parents=True, exist_ok=True)
    rendered = {
        "reports/retrieval.txt": render_retrieval(eval_payload, levels),
        "reports/granularity.txt": render_granularity(probe_payload),
        "reports/transfer.txt": render_transfer(probe_payload, levels),
        "reports/qualitative.txt": render_qualitative(run),
    }
    combined = {"retrieval": eval_payload, "probes": probe_payload}
    for rel, text in rendered.items():
        run.path(rel).write_text(text, encoding="utf-8")
    run.path("reports/summary.json").write_text(
        json.dumps(combined, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return sorted(rendered) + ["reports/summary.json"]
