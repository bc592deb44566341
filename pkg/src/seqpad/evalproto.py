"""Train/test protocols, score fusion and TDR @ FDR.

Scores are spoofness: a presentation is declared a spoof when its score is
at or above the threshold. FDR is the fraction of live presentations so
declared; TDR the fraction of spoof presentations.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ingest import DataError, Manifest

DEFAULT_FDR = 0.002


@dataclass
class SplitPlan:
    name: str
    train_ids: List[str]
    test_ids: List[str]
    fold_index: Optional[int] = None
    held_out_material: Optional[str] = None

    def to_dict(self) -> dict:
        return {"name": self.name, "train_ids": list(self.train_ids), "test_ids": list(self.test_ids),
                "fold_index": self.fold_index, "held_out_material": self.held_out_material}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitPlan":
        return cls(d["name"], list(d["train_ids"]), list(d["test_ids"]), d.get("fold_index"),
                   d.get("held_out_material"))


def save_splits(plans: Sequence[SplitPlan], path) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in plans], indent=2) + "\n")


def load_splits(path) -> List[SplitPlan]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [SplitPlan.from_dict(d) for d in data]


def _live_subjects(manifest: Manifest) -> List[str]:
    return sorted({r.subject_id for r in manifest.live()})


def make_known_material_folds(manifest: Manifest, k: int = 5, seed: int = 0) -> List[SplitPlan]:
    """k folds: live subjects split k ways, spoofs split k ways within each material variant."""
    subjects = _live_subjects(manifest)
    if len(subjects) < k:
        raise DataError(f"need at least {k} live subjects for {k} folds, found {len(subjects)}")
    rng = np.random.default_rng(seed)
    fold_of_subject = {s: i % k for i, s in enumerate(rng.permutation(subjects).tolist())}
    fold_of = {}
    for r in manifest.live():
        fold_of[r.presentation_id] = fold_of_subject[r.subject_id]
    variants: Dict[str, List[str]] = {}
    for r in manifest.spoof():
        variants.setdefault(r.material_variant or r.material, []).append(r.presentation_id)
    offset = 0
    for key in sorted(variants):
        ids = rng.permutation(sorted(variants[key])).tolist()
        for i, pid in enumerate(ids):
            fold_of[pid] = (i + offset) % k
        offset += len(ids)  # rotate so small variants do not all land in fold 0
    order = [r.presentation_id for r in manifest.records]
    plans = []
    for f in range(k):
        test = [p for p in order if fold_of[p] == f]
        train = [p for p in order if fold_of[p] != f]
        plans.append(SplitPlan(f"known-material-fold{f}", train, test, fold_index=f))
    return plans


def make_cross_material_split(manifest: Manifest, material: str, seed: int = 0,
                              live_test_fraction: float = 0.2) -> SplitPlan:
    """Hold out every variant of ``material`` plus a subject-disjoint share of live data."""
    held = [r.presentation_id for r in manifest.spoof() if r.material == material]
    if not held:
        known = ", ".join(manifest.materials()) or "none"
        raise DataError(f"material {material!r} has no presentations (known: {known})")
    subjects = _live_subjects(manifest)
    rng = np.random.default_rng(seed)
    n_test = max(1, int(round(live_test_fraction * len(subjects)))) if subjects else 0
    if subjects and n_test >= len(subjects):
        n_test = len(subjects) - 1
    test_subjects = set(rng.permutation(subjects).tolist()[:n_test])
    held_set = set(held)
    test, train = [], []
    for r in manifest.records:
        if r.presentation_id in held_set or (r.label == "live" and r.subject_id in test_subjects):
            test.append(r.presentation_id)
        elif r.label == "live" or r.material != material:
            train.append(r.presentation_id)
    return SplitPlan(f"cross-material-{material}", train, test, held_out_material=material)


def check_split(plan: SplitPlan, manifest: Manifest) -> None:
    """Raise ``AssertionError`` if a split violates its invariants."""
    by_id = manifest.by_id()
    train, test = set(plan.train_ids), set(plan.test_ids)
    assert not train & test, "train and test share presentations"
    assert len(train) == len(plan.train_ids) and len(test) == len(plan.test_ids), "duplicate ids"
    live_train = {by_id[p].subject_id for p in train if by_id[p].label == "live"}
    live_test = {by_id[p].subject_id for p in test if by_id[p].label == "live"}
    assert not live_train & live_test, "live subjects overlap between train and test"
    if plan.held_out_material is not None:
        assert not any(by_id[p].material == plan.held_out_material for p in train), \
            "held-out material present in training"
        held = {r.presentation_id for r in manifest.spoof() if r.material == plan.held_out_material}
        assert held <= test, "held-out material missing from test"


# -- scores --------------------------------------------------------------------

def fuse_scores(scores: Sequence[float]) -> float:
    if len(scores) == 0:
        raise ValueError("cannot fuse an empty score list")
    return float(np.mean(np.asarray(scores, dtype=np.float64)))


@dataclass
class ScoreEntry:
    presentation_id: str
    label: str
    score: float
    sequence_scores: List[float] = field(default_factory=list)


@dataclass
class ScoreTable:
    entries: List[ScoreEntry]

    @classmethod
    def from_sequence_scores(cls, rows) -> "ScoreTable":
        """``rows``: iterable of (presentation_id, label, per-sequence scores)."""
        return cls([ScoreEntry(pid, label, fuse_scores(s), [float(v) for v in s]) for pid, label, s in rows])

    def arrays(self):
        live = np.array([e.score for e in self.entries if e.label == "live"], dtype=np.float64)
        spoof = np.array([e.score for e in self.entries if e.label == "spoof"], dtype=np.float64)
        return live, spoof

    def to_list(self) -> List[dict]:
        return [{"presentation_id": e.presentation_id, "label": e.label, "score": e.score,
                 "sequence_scores": e.sequence_scores} for e in self.entries]

    @classmethod
    def from_list(cls, rows: List[dict]) -> "ScoreTable":
        return cls([ScoreEntry(r["presentation_id"], r["label"], float(r["score"]),
                               [float(v) for v in r.get("sequence_scores", [])]) for r in rows])


@dataclass
class MetricsReport:
    fdr_target: float
    tdr: float
    fdr: float
    threshold: float  # math.inf when no observed score is feasible
    n_live: int
    n_spoof: int
    roc: List[dict]

    def to_dict(self) -> dict:
        return {
            "fdr_target": self.fdr_target, "tdr": self.tdr, "fdr": self.fdr,
            "threshold": None if math.isinf(self.threshold) else self.threshold,
            "n_live": self.n_live, "n_spoof": self.n_spoof,
            "roc": [{**p, "threshold": None if math.isinf(p["threshold"]) else p["threshold"]}
                    for p in self.roc],
        }


def roc_sweep(live: np.ndarray, spoof: np.ndarray):
    """(thresholds ascending incl. +inf, fdr, tdr) at every observed score."""
    thresholds = np.append(np.unique(np.concatenate([live, spoof])), np.inf)
    live_s, spoof_s = np.sort(live), np.sort(spoof)
    fdr = (len(live_s) - np.searchsorted(live_s, thresholds, side="left")) / len(live_s)
    tdr = (len(spoof_s) - np.searchsorted(spoof_s, thresholds, side="left")) / len(spoof_s)
    return thresholds, fdr, tdr


def tdr_at_fdr(table, fdr_target: float = DEFAULT_FDR) -> MetricsReport:
    """Highest TDR over thresholds whose FDR stays within ``fdr_target``.

    Among thresholds with equal TDR the largest is reported.
    """
    live, spoof = table.arrays() if isinstance(table, ScoreTable) else (np.asarray(table[0], float),
                                                                       np.asarray(table[1], float))
    if len(live) == 0 or len(spoof) == 0:
        raise DataError("TDR @ FDR needs both live and spoof scores")
    thr, fdr, tdr = roc_sweep(live, spoof)
    feasible = np.nonzero(fdr <= fdr_target)[0]  # never empty: +inf gives FDR 0
    best_tdr = tdr[feasible].max()
    pick = feasible[tdr[feasible] == best_tdr][-1]
    roc = [{"threshold": float(t), "fdr": float(f), "tdr": float(d)} for t, f, d in zip(thr, fdr, tdr)]
    return MetricsReport(fdr_target, float(tdr[pick]), float(fdr[pick]), float(thr[pick]),
                         len(live), len(spoof), roc)


def aggregate_folds(reports: Sequence[MetricsReport]) -> dict:
    """Mean and sample standard deviation of TDR across folds or held-out materials."""
    if not reports:
        raise ValueError("no reports to aggregate")
    tdrs = np.array([r.tdr for r in reports])
    single = len(tdrs) == 1
    return {"mean_tdr": float(tdrs.mean()), "std_tdr": 0.0 if single else float(tdrs.std(ddof=1)),
            "n": len(tdrs), "single_fold": single}
