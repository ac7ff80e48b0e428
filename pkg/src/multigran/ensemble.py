"""Ensemble inference: average the members' softmax distributions.

Each member's softmax is computed independently over its own logits; the
output probability for candidate i is the mean of the member probabilities.
Per-candidate member probabilities are summed in canonically sorted order so
the output is exactly invariant to member permutation.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IntegrityError, ParseError
from .model import DualEncoder, candidate_logits, checkpoint_fingerprint, load_checkpoint

BUNDLE_KIND = "multigran-ensemble-bundle"
MODES = ("mgt", "vanilla", "single")


@dataclass
class EnsembleBundle:
    members: list            # DualEncoder, in granularity (or rank) order
    fingerprints: list       # checkpoint fingerprints, aligned with members
    mode: str
    vocab_hash: str

    def __post_init__(self):
        if not self.members:
            raise ConfigurationError("an ensemble needs at least one member")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown ensemble mode {self.mode!r}")
        hidden = self.members[0].hidden
        for m in self.members:
            if m.vocab_hash != self.vocab_hash:
                raise IntegrityError("ensemble members disagree on vocabulary hash")
            if m.hidden != hidden:
                raise IntegrityError("ensemble members disagree on hidden size")

    def __len__(self) -> int:
        return len(self.members)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def average_probabilities(member_probs: np.ndarray) -> np.ndarray:
    # sort per candidate before summing: one canonical reduction order, so
    # member permutation cannot change the result even in the last ulp
    ordered = np.sort(member_probs, axis=0)
    return ordered.sum(axis=0) / member_probs.shape[0]


def ensemble_predict(bundle: EnsembleBundle, context, candidates) -> np.ndarray:
    """Probability vector over k candidates for one context."""
    if len(candidates) < 2:
        raise ConfigurationError("ensemble prediction needs k >= 2 candidates")
    member_probs = np.stack([
        softmax_rows(candidate_logits(m, [context], [candidates])[0])
        for m in bundle.members
    ])
    return average_probabilities(member_probs)


def ensemble_scores(bundle: EnsembleBundle, examples, batch_size: int = 64):
    """Probability rows for (context, candidates, truth) triples; returns (rows, truths)."""
    rows = []
    truths = [t for _, _, t in examples]
    for start in range(0, len(examples), batch_size):
        chunk = examples[start : start + batch_size]
        contexts = [c for c, _, _ in chunk]
        cands = [cs for _, cs, _ in chunk]
        member_probs = np.stack([
            softmax_rows(candidate_logits(m, contexts, cands)) for m in bundle.members
        ])  # members x n x k
        rows.extend(average_probabilities(member_probs[:, i]) for i in range(len(chunk)))
    return rows, truths


# ---------------------------------------------------------------------------
# bundle manifests


def write_bundle_manifest(path, member_paths, mode: str) -> None:
    """Member paths are stored relative to the manifest when possible."""
    path = Path(path)
    base = path.parent.resolve()

    def relativise(p):
        try:
            return os.path.relpath(Path(p).resolve(), base)
        except ValueError:
            return str(p)

    payload = {
        "kind": BUNDLE_KIND, "version": 1, "mode": mode,
        "members": [relativise(p) for p in member_paths],
        "fingerprints": [checkpoint_fingerprint(p) for p in member_paths],
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_bundle(path) -> EnsembleBundle:
    path = Path(path)
    payload = json.loads(path.read_text(encoding="utf-8"))
    if payload.get("kind") != BUNDLE_KIND:
        raise ParseError(f"{path}: not an ensemble bundle manifest")
    members = []
    fingerprints = []
    for member_rel, expected in zip(payload["members"], payload["fingerprints"]):
        member_path = Path(member_rel)
        if not member_path.is_absolute():
            member_path = path.parent / member_path
        actual = checkpoint_fingerprint(member_path)
        if actual != expected:
            raise IntegrityError(
                f"{member_path}: checkpoint fingerprint changed since the bundle was written"
            )
        members.append(load_checkpoint(member_path))
        fingerprints.append(actual)
    return EnsembleBundle(
        members=members, fingerprints=fingerprints, mode=payload["mode"],
        vocab_hash=members[0].vocab_hash,
    )


def single_bundle(model: DualEncoder, fingerprint: str = "") -> EnsembleBundle:
    return EnsembleBundle(members=[model], fingerprints=[fingerprint], mode="single",
                          vocab_hash=model.vocab_hash)
