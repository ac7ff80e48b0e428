"""Staged experiment pipeline with an on-disk manifest per run directory.

Stages run in a fixed order (generate, train-baseline, build-buckets,
train-mgt, evaluate, probe, report); every stage records its artifacts and
their content hashes in manifest.json. Re-running a completed stage with the
same seed is a no-op; a missing prerequisite raises a stage-order error
naming the artifact; a hash mismatch means out-of-band tampering and raises
an integrity error; changing the configuration under an existing manifest
raises a drift error. Every stochastic choice derives from the run seed.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dio
from . import ensemble as ens
from . import metrics
from . import probing
from . import sampling
from . import training
from .config import RunConfig
from .errors import DriftError, IntegrityError, StageOrderError
from .model import checkpoint_fingerprint, init_model, load_checkpoint
from .store import file_sha256

log = logging.getLogger(__name__)

MANIFEST_KIND = "multigran-run-manifest"
STAGE_ORDER = ("generate", "train_baseline", "build_buckets", "train_mgt",
               "evaluate", "probe", "report")


@dataclass
class Run:
    run_dir: Path
    config: RunConfig
    manifest: dict

    def path(self, rel: str) -> Path:
        return self.run_dir / rel

    def save_manifest(self) -> None:
        payload = json.dumps(self.manifest, sort_keys=True, indent=2) + "\n"
        self.path("manifest.json").write_text(payload, encoding="utf-8")

    def stage(self, name: str) -> dict:
        return self.manifest["stages"].get(name)


def open_run(run_dir, config: RunConfig) -> Run:
    """Create a run directory or re-open it, rejecting configuration drift."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = run_dir / "manifest.json"
    snapshot = config.snapshot()
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        old = manifest.get("config", {})
        if old != snapshot:
            changed = sorted(k for k in set(old) | set(snapshot) if old.get(k) != snapshot.get(k))
            raise DriftError(f"configuration drift vs manifest snapshot: {', '.join(changed)}")
        return Run(run_dir=run_dir, config=config, manifest=manifest)
    run_id = hashlib.sha256(config.snapshot_json().encode()).hexdigest()[:12]
    manifest = {"kind": MANIFEST_KIND, "version": 1, "run_id": run_id,
                "seed": config.seed, "config": snapshot, "stages": {}}
    run = Run(run_dir=run_dir, config=config, manifest=manifest)
    run.save_manifest()
    (run_dir / "config.txt").write_text(
        "".join(f"{k} = {v}\n" for k, v in sorted(snapshot.items())), encoding="utf-8")
    return run


def _verify_stage(run: Run, name: str) -> None:
    entry = run.stage(name)
    if entry is None:
        raise StageOrderError(f"stage {name!r} has not run yet (required artifact missing)")
    for rel, expected in entry["artifacts"].items():
        path = run.path(rel)
        if not path.exists():
            raise StageOrderError(f"stage {name!r} artifact missing: {rel}")
        if file_sha256(path) != expected:
            raise IntegrityError(f"artifact {rel} does not match its manifest hash")


def require(run: Run, name: str) -> None:
    """Enforce that every stage up to and including `name` is complete and intact."""
    for stage in STAGE_ORDER[: STAGE_ORDER.index(name) + 1]:
        _verify_stage(run, stage)


def _finish_stage(run: Run, name: str, artifact_paths, extra: dict = None) -> None:
    artifacts = {}
    for rel in artifact_paths:
        artifacts[rel] = file_sha256(run.path(rel))
    entry = {"artifacts": artifacts}
    if extra:
        entry.update(extra)
    run.manifest["stages"][name] = entry
    run.save_manifest()


def _already_done(run: Run, name: str) -> bool:
    if run.stage(name) is None:
        return False
    _verify_stage(run, name)
    log.info("stage %s already complete; skipping", name)
    return True


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# data access helpers


def load_splits(run: Run) -> dict:
    return {name: dio.load_corpus(run.path(f"data/{name}.jsonl"))
            for name in ("train", "valid", "test")}


def load_vocab(run: Run) -> dio.Vocabulary:
    return dio.Vocabulary.load(run.path("data/vocab.json"))


def _contexts(split, vocab, truncation):
    return [dio.context_token_ids(ex, vocab, truncation) for ex in split]


# ---------------------------------------------------------------------------
# stages


def stage_generate(run: Run) -> bool:
    if _already_done(run, "generate"):
        return False
    cfg = run.config
    spec = dio.GeneratorSpec(
        topics=dio.builtin_topics(cfg.topics), train_dialogs=cfg.dialogs,
        valid_dialogs=cfg.valid_dialogs, test_dialogs=cfg.test_dialogs, candidates=cfg.k,
    )
    splits = dio.generate_synthetic_corpus(spec, cfg.seed)
    for name, split in splits.items():
        dio.write_corpus(split, run.path(f"data/{name}.jsonl"))
    vocab = dio.build_vocab(splits["train"], cfg.vocab_size)
    vocab.save(run.path("data/vocab.json"))
    _finish_stage(run, "generate",
                  [f"data/{n}.jsonl" for n in ("train", "valid", "test")] + ["data/vocab.json"],
                  {"vocab_hash": vocab.content_hash})
    return True


def _epoch_records(result: training.TrainResult, run: Run) -> list:
    return [{"epoch": r.epoch, "mean_loss": r.mean_loss, "valid_mrr": r.valid_mrr,
             "checkpoint": str(Path(r.checkpoint).relative_to(run.run_dir))}
            for r in result.epochs]


def stage_train_baseline(run: Run) -> bool:
    if _already_done(run, "train_baseline"):
        return False
    require(run, "generate")
    cfg = run.config
    splits = load_splits(run)
    vocab = load_vocab(run)
    sampler = sampling.NegativeSampler(splits["train"], vocab, cfg.k, cfg.seed, cfg.truncation)
    examples = sampler.corpus(None)
    dio.write_train_corpus(run.path("corpora/baseline.jsonl"), examples, level=None,
                           k=cfg.k, pool_fingerprint="uniform")
    model = init_model(vocab.size, cfg.emb_dim, cfg.hidden, (cfg.seed, "baseline"),
                       vocab.content_hash)
    valid = dio.eval_examples(splits["valid"], vocab, cfg.truncation)
    result = training.train(
        model, examples, sampler.responses, valid, epochs=cfg.epochs, lr=cfg.lr,
        batch_size=cfg.batch_size, clip_norm=cfg.clip_norm, seed=(cfg.seed, "baseline"),
        checkpoint_dir=run.path("checkpoints/baseline"),
    )
    records = _epoch_records(result, run)
    artifacts = ["corpora/baseline.jsonl"] + [r["checkpoint"] for r in records]
    _finish_stage(run, "train_baseline", artifacts,
                  {"epochs": records, "best": records[result.best_epoch - 1]["checkpoint"]})
    return True


def stage_build_buckets(run: Run) -> bool:
    if _already_done(run, "build_buckets"):
        return False
    require(run, "train_baseline")
    cfg = run.config
    splits = load_splits(run)
    vocab = load_vocab(run)
    best_rel = run.stage("train_baseline")["best"]
    fingerprint = checkpoint_fingerprint(run.path(best_rel))
    model = load_checkpoint(run.path(best_rel))
    responses = [vocab.encode_text(ex.response) for ex in splits["train"]]
    pool = sampling.build_pool(responses, model.response_encoder, fingerprint)
    sampling.write_pool(pool, run.path("pool/pool.jsonl"))
    sampler = sampling.NegativeSampler(splits["train"], vocab, cfg.k, cfg.seed,
                                       cfg.truncation, pool=pool, levels=cfg.granularities)
    artifacts = ["pool/pool.jsonl"]
    for level in range(1, cfg.granularities + 1):
        rel = f"corpora/level_{level}.jsonl"
        dio.write_train_corpus(run.path(rel), sampler.corpus(level), level=level,
                               k=cfg.k, pool_fingerprint=fingerprint)
        artifacts.append(rel)
    _finish_stage(run, "build_buckets", artifacts, {"encoder_fingerprint": fingerprint})
    return True


def stage_train_mgt(run: Run) -> bool:
    if _already_done(run, "train_mgt"):
        return False
    require(run, "build_buckets")
    cfg = run.config
    splits = load_splits(run)
    vocab = load_vocab(run)
    valid = dio.eval_examples(splits["valid"], vocab, cfg.truncation)
    fingerprint = run.stage("build_buckets")["encoder_fingerprint"]
    pool = sampling.load_pool(run.path("pool/pool.jsonl"))
    if pool.encoder_fingerprint != fingerprint:
        raise IntegrityError("pool fingerprint does not match the bucket stage record")
    artifacts = []
    levels_meta = {}
    for level in range(1, cfg.granularities + 1):
        header, examples = dio.load_train_corpus(run.path(f"corpora/level_{level}.jsonl"))
        if header["pool_fingerprint"] != fingerprint:
            raise IntegrityError(f"corpus level_{level} was sampled from a different pool")
        resampler = None
        if cfg.resample_per_epoch:
            sampler = sampling.NegativeSampler(
                splits["train"], vocab, cfg.k, cfg.seed, cfg.truncation,
                pool=pool, levels=cfg.granularities, cache_buckets=True)
            resampler = lambda epoch, lvl=level, s=sampler: s.corpus(lvl, epoch_tag=epoch)
        model = init_model(vocab.size, cfg.emb_dim, cfg.hidden, (cfg.seed, "level", level),
                           vocab.content_hash, granularity_level=level)
        result = training.train(
            model, examples, pool.responses, valid, epochs=cfg.epochs, lr=cfg.lr,
            batch_size=cfg.batch_size, clip_norm=cfg.clip_norm,
            seed=(cfg.seed, "level", level), checkpoint_dir=run.path(f"checkpoints/level_{level}"),
            resampler=resampler,
        )
        records = _epoch_records(result, run)
        levels_meta[str(level)] = {"epochs": records,
                                   "best": records[result.best_epoch - 1]["checkpoint"]}
        artifacts.extend(r["checkpoint"] for r in records)
    _finish_stage(run, "train_mgt", artifacts, {"levels": levels_meta})
    return True


def _bundle_paths(run: Run) -> dict:
    """Member checkpoint paths for the vanilla and mgt ensembles."""
    cfg = run.config
    baseline = run.stage("train_baseline")
    ranked = sorted(baseline["epochs"], key=lambda r: (-r["valid_mrr"], r["epoch"]))
    vanilla = [r["checkpoint"] for r in ranked[: cfg.granularities]]
    levels = run.stage("train_mgt")["levels"]
    mgt = [levels[str(lvl)]["best"] for lvl in range(1, cfg.granularities + 1)]
    return {"vanilla": vanilla, "mgt": mgt, "baseline": [baseline["best"]]}


def stage_evaluate(run: Run) -> bool:
    if _already_done(run, "evaluate"):
        return False
    require(run, "train_mgt")
    cfg = run.config
    splits = load_splits(run)
    vocab = load_vocab(run)
    test = dio.eval_examples(splits["test"], vocab, cfg.truncation)
    paths = _bundle_paths(run)
    systems = ["baseline"]
    if cfg.ensemble_mode in ("vanilla", "both"):
        systems.append("vanilla")
    if cfg.ensemble_mode in ("mgt", "both"):
        systems.append("mgt")
    artifacts = []
    reports = {}
    for system in systems:
        member_paths = [run.path(rel) for rel in paths[system]]
        if system != "baseline":
            rel = f"bundles/{system}.json"
            ens.write_bundle_manifest(run.path(rel), member_paths, system)
            artifacts.append(rel)
            bundle = ens.load_bundle(run.path(rel))
        else:
            bundle = ens.single_bundle(load_checkpoint(member_paths[0]),
                                       checkpoint_fingerprint(member_paths[0]))
        rows, truths = ens.ensemble_scores(bundle, test)
        report = metrics.evaluate_scores(rows, truths, cfg.parsed_rn_pairs(), label=system)
        reports[system] = report
        rel = f"eval/ranks_{system}.json"
        _write_json(run.path(rel), {"system": system, "ranks": list(map(int, report.ranks))})
        artifacts.append(rel)
    significance = {}
    for a, b in (("mgt", "baseline"), ("mgt", "vanilla"), ("vanilla", "baseline")):
        if a in reports and b in reports:
            significance[f"{a}_vs_{b}"] = metrics.paired_significance(
                reports[a].ranks, reports[b].ranks, cfg.bootstrap_iterations, cfg.seed)
    payload = {
        "systems": {name: rep.to_json_dict() for name, rep in reports.items()},
        "significance": significance,
    }
    _write_json(run.path("eval/retrieval.json"), payload)
    artifacts.append("eval/retrieval.json")
    _finish_stage(run, "evaluate", artifacts)
    return True


def stage_probe(run: Run) -> bool:
    if _already_done(run, "probe"):
        return False
    require(run, "evaluate")
    cfg = run.config
    splits = load_splits(run)
    vocab = load_vocab(run)
    contexts = {name: _contexts(split, vocab, cfg.truncation)
                for name, split in splits.items()}
    kinds = {"bow": (probing.BOW_TASK,), "abstract": (probing.ABSTRACT_TASK,),
             "both": (probing.BOW_TASK, probing.ABSTRACT_TASK)}[cfg.probe_task]

    def build_tasks(split):
        out = {}
        if probing.BOW_TASK in kinds:
            out[probing.BOW_TASK] = probing.bow_task(split, vocab)
        if probing.ABSTRACT_TASK in kinds:
            out[probing.ABSTRACT_TASK] = probing.topic_task(split, cfg.topics)
        return out

    tasks = {name: build_tasks(split) for name, split in splits.items()}
    probe_cfg = probing.ProbeConfig(lr=cfg.probe_lr, epochs=cfg.probe_epochs,
                                    batch_size=cfg.probe_batch, seed=cfg.seed)
    cache_dir = run.path("probes/cache")
    paths = _bundle_paths(run)

    def features_for(rel_paths):
        per_split = {name: [] for name in splits}
        for rel in rel_paths:
            path = run.path(rel)
            fp = checkpoint_fingerprint(path)
            model = load_checkpoint(path)
            for name in splits:
                per_split[name].append(probing.freeze_and_encode(
                    model, contexts[name], fingerprint=fp, cache_dir=cache_dir))
        return {name: np.concatenate(mats, axis=1) for name, mats in per_split.items()}

    # granularity sweep over the individual mgt members
    level_feats = {}
    for level, rel in enumerate(paths["mgt"], start=1):
        level_feats[level] = features_for([rel])
    sweep = probing.granularity_sweep(
        {lvl: f["train"] for lvl, f in level_feats.items()},
        tasks["train"],
        {lvl: f["valid"] for lvl, f in level_feats.items()},
        tasks["valid"],
        {lvl: f["test"] for lvl, f in level_feats.items()},
        tasks["test"],
        probe_cfg,
    )
    # transfer probes: single baseline vs concatenated ensembles
    transfer_inputs = {
        "baseline": features_for(paths["baseline"]),
        "vanilla_concat": features_for(paths["vanilla"]),
        "mgt_concat": features_for(paths["mgt"]),
    }
    transfer = {}
    for name, feats in transfer_inputs.items():
        transfer[name] = {}
        for kind in kinds:
            head, _ = probing.train_probe(feats["train"], tasks["train"][kind],
                                          feats["valid"], tasks["valid"][kind], probe_cfg)
            active = probing.active_labels(tasks["train"][kind].targets)
            res = probing.evaluate_probe(head, feats["test"], tasks["test"][kind], active)
            transfer[name][kind] = {"micro_f1": res.micro_f1, "precision": res.precision,
                                    "recall": res.recall}
    # fine-tuned rows: baseline encoder on both tasks, random init on the abstract task
    finetune = {}
    if cfg.finetune:
        def finetune_run(model, kind):
            return probing.finetune_probe(
                model, contexts["train"], tasks["train"][kind],
                lambda m: probing.freeze_and_encode(m, contexts["valid"]),
                tasks["valid"][kind], contexts["test"], tasks["test"][kind],
                probe_cfg, encoder_epochs=cfg.finetune_epochs, batch_size=cfg.batch_size)

        for kind in kinds:
            model = load_checkpoint(run.path(paths["baseline"][0]))
            res = finetune_run(model, kind)
            finetune.setdefault("baseline", {})[kind] = {"micro_f1": res.micro_f1}
        if probing.ABSTRACT_TASK in kinds:
            random_model = init_model(vocab.size, cfg.emb_dim, cfg.hidden,
                                      (cfg.seed, "random-finetune"), vocab.content_hash)
            res = finetune_run(random_model, probing.ABSTRACT_TASK)
            finetune["random_init"] = {probing.ABSTRACT_TASK: {"micro_f1": res.micro_f1}}

    payload = {
        "granularity": {
            "results": [
                {"level": r.level, "task": r.kind, "micro_f1": r.micro_f1,
                 "precision": r.precision, "recall": r.recall,
                 "excluded_labels": r.excluded_labels}
                for r in sweep["results"]
            ],
            "spearman_fineness": sweep["spearman"],
        },
        "transfer": transfer,
        "finetune": finetune,
    }
    _write_json(run.path("probes/probe_results.json"), payload)
    _finish_stage(run, "probe", ["probes/probe_results.json"])
    return True


def stage_report(run: Run) -> bool:
    if _already_done(run, "report"):
        return False
    require(run, "probe")
    from . import report as report_mod

    artifacts = report_mod.write_reports(run)
    _finish_stage(run, "report", artifacts)
    return True


STAGE_FUNCTIONS = {
    "generate": stage_generate,
    "train_baseline": stage_train_baseline,
    "build_buckets": stage_build_buckets,
    "train_mgt": stage_train_mgt,
    "evaluate": stage_evaluate,
    "probe": stage_probe,
    "report": stage_report,
}


def run_all(run: Run) -> None:
    for name in STAGE_ORDER:
        STAGE_FUNCTIONS[name](run)
