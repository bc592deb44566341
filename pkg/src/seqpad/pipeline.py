"""Stage wiring: manifest -> preprocessing -> training -> scores -> metrics."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import evalproto, model as model_mod
from .config import Config
from .demosaic import RgbFrame, demosaic_bilinear
from .estimators import SpoofSequenceClassifier
from .ingest import DataError, FrameSequence, Manifest, MinutiaSet, load_sequence, read_minutiae_frames
from .minutiae import ReferenceSelection, detect_sequence, select_reference
from .patchseq import extract_patch_sequences, to_model_input, whole_frame_sequence

log = logging.getLogger(__name__)

EXTERNAL_MINUTIAE = "minutiae.csv"


@dataclass
class Prepared:
    presentation_id: str
    label: Optional[str]
    subject_id: str
    reference_index: Optional[int]
    inputs: np.ndarray  # (k, T, H, W, 3)


def external_reference(path, seq: FrameSequence) -> ReferenceSelection:
    """Reference selection from a minutiae file; frames absent from the file count as empty."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"minutiae file {path} does not exist")
    read = {s.frame_index: s for s in read_minutiae_frames(path, seq.shape)}
    space = next(iter(read.values())).coordinate_space
    bad = [i for i in read if not 0 <= i < seq.frame_count]
    if bad:
        raise DataError(f"{path}: frame index {bad[0]} outside a {seq.frame_count}-frame sequence")
    return select_reference([read.get(i, MinutiaSet([], i, space)) for i in range(seq.frame_count)])


def reference_for(seq: FrameSequence, rgb: Sequence[RgbFrame], directory: Path, cfg: Config,
                  minutiae_path=None) -> ReferenceSelection:
    if minutiae_path is not None:
        return external_reference(minutiae_path, seq)
    if cfg.minutiae_source == "external":
        return external_reference(directory / EXTERNAL_MINUTIAE, seq)
    return detect_sequence(rgb, cfg.detector_params())


def sequences_for(directory, cfg: Config, presentation_id: str = "", label: Optional[str] = None,
                  minutiae_path=None):
    """Patch sequences (or the whole-frame sequence) of one presentation directory.

    ``minutiae_path`` overrides both the detector and the presentation's own
    minutiae file.
    """
    directory = Path(directory)
    seq = load_sequence(directory)
    rgb = [demosaic_bilinear(f) for f in seq.frames]
    pid = presentation_id or seq.presentation_id
    if cfg.whole_frame:
        return seq, None, [whole_frame_sequence(rgb, pid, label)]
    ref = reference_for(seq, rgb, directory, cfg, minutiae_path)
    return seq, ref, extract_patch_sequences(rgb, ref, cfg.patch_size, pid, label)


def prepare(directory, cfg: Config, input_size: int, presentation_id: str = "", label: Optional[str] = None,
            subject_id: str = "", dtype=np.float64) -> Prepared:
    seq, ref, patch_seqs = sequences_for(directory, cfg, presentation_id, label)
    inputs = np.stack([to_model_input(ps, input_size) for ps in patch_seqs]).astype(dtype)
    return Prepared(presentation_id or seq.presentation_id, label, subject_id,
                    None if ref is None else ref.reference_index, inputs)


def prepare_manifest(manifest: Manifest, ids: Sequence[str], cfg: Config, input_size: int,
                     dtype=np.float64) -> Dict[str, Prepared]:
    by_id = manifest.by_id()

    def one(pid):
        r = by_id[pid]
        return prepare(manifest.resolve(r), cfg, input_size, pid, r.label, r.subject_id, dtype)

    ids = list(ids)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(cfg.jobs) as pool:
            done = list(pool.map(one, ids))
    else:
        done = [one(pid) for pid in ids]
    return dict(zip(ids, done))


def stack_training(prepared: Dict[str, Prepared], ids: Sequence[str]):
    xs, ys, groups = [], [], []
    for pid in ids:
        p = prepared[pid]
        xs.append(p.inputs)
        ys += [p.label] * len(p.inputs)
        groups += [p.subject_id or pid] * len(p.inputs)
    return np.concatenate(xs), np.array(ys), np.array(groups, dtype=object)


def score_prepared(clf: SpoofSequenceClassifier, prepared: Dict[str, Prepared], ids: Sequence[str]):
    spoof_col = list(clf.classes_).index("spoof")
    rows = []
    for pid in ids:
        p = prepared[pid]
        probs = clf.predict_proba(p.inputs)[:, spoof_col]
        rows.append((pid, p.label, [float(v) for v in probs]))
    return evalproto.ScoreTable.from_sequence_scores(rows)


def _metrics(table: evalproto.ScoreTable, target: float, with_roc: bool = True) -> dict:
    live, _ = table.arrays()
    out = {"target": evalproto.tdr_at_fdr(table, target).to_dict()}
    fallback = max(target, 1.0 / len(live))
    out["fallback"] = evalproto.tdr_at_fdr(table, fallback).to_dict()
    if not with_roc:
        for v in out.values():
            v.pop("roc")
    return out


def make_plans(manifest: Manifest, cfg: Config, protocol: str, material: Optional[str]) -> List[evalproto.SplitPlan]:
    if protocol == "known-material":
        plans = evalproto.make_known_material_folds(manifest, cfg.folds, cfg.seed)
        if cfg.fold is not None:
            if not 0 <= cfg.fold < len(plans):
                raise DataError(f"fold {cfg.fold} out of range for {len(plans)} folds")
            plans = [plans[cfg.fold]]
        return plans
    if protocol == "cross-material":
        mats = [material] if material else manifest.materials()
        return [evalproto.make_cross_material_split(manifest, m, cfg.seed, cfg.live_test_fraction) for m in mats]
    raise DataError(f"unknown protocol {protocol!r}")


def run_pipeline(manifest: Manifest, cfg: Config, protocol: str = "known-material",
                 material: Optional[str] = None, out_dir=None) -> dict:
    """Run every split of a protocol end to end and return the report dictionary."""
    plans = make_plans(manifest, cfg, protocol, material)
    first = manifest.resolve(manifest.records[0])
    seq_len = load_sequence(first).frame_count
    mcfg = cfg.model_config(seq_len)
    tcfg = cfg.train_config()
    dtype = np.dtype(mcfg.dtype)
    needed = sorted({p for plan in plans for p in plan.train_ids + plan.test_ids})
    log.info("config %s", json.dumps(cfg.to_dict(), sort_keys=True))
    log.info("preprocessing %d presentations", len(needed))
    prepared = prepare_manifest(manifest, needed, cfg, mcfg.backbone.input_size, dtype)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    split_reports, target_reports, fallback_reports = [], [], []
    for plan in plans:
        for pid in plan.train_ids + plan.test_ids:
            if prepared[pid].inputs.shape[1] != seq_len:
                raise DataError(f"{pid}: {prepared[pid].inputs.shape[1]} frames, expected {seq_len}")
        x, y, groups = stack_training(prepared, plan.train_ids)
        log.info("%s: %d training sequences from %d presentations", plan.name, len(x), len(plan.train_ids))
        clf = _classifier(mcfg, tcfg)
        clf.fit(x, y, groups=groups)
        clf.model_.meta = {"pipeline_config": cfg.to_dict(), "split": plan.name}
        table = score_prepared(clf, prepared, plan.test_ids)
        metrics = _metrics(table, cfg.fdr_target)
        rep = {"name": plan.name, "fold_index": plan.fold_index, "held_out_material": plan.held_out_material,
               "n_train_presentations": len(plan.train_ids), "n_test_presentations": len(plan.test_ids),
               "n_train_sequences": int(len(x)), "epochs_run": len(clf.history_),
               "metrics": metrics["target"], "fallback": metrics["fallback"]}
        if cfg.report_untrained:
            untrained = SpoofSequenceClassifier.from_model(model_mod.build(mcfg, seed=cfg.seed), clf.classes_)
            rep["untrained"] = _metrics(score_prepared(untrained, prepared, plan.test_ids), cfg.fdr_target,
                                        with_roc=False)
        split_reports.append(rep)
        target_reports.append(evalproto.tdr_at_fdr(table, cfg.fdr_target))
        fallback_reports.append(evalproto.tdr_at_fdr(table, rep["fallback"]["fdr_target"]))
        if out is not None:
            model_mod.save(clf.model_, out / f"{plan.name}.ckpt")
            (out / f"{plan.name}.scores.json").write_text(json.dumps(table.to_list(), indent=2) + "\n")
        log.info("%s: TDR %.4f @ FDR %.4f (fallback TDR %.4f @ FDR %.4f)", plan.name,
                 rep["metrics"]["tdr"], rep["metrics"]["fdr"], rep["fallback"]["tdr"], rep["fallback"]["fdr"])
    report = {
        "protocol": protocol,
        "material": material,
        "config": cfg.to_dict(),
        "model": mcfg.to_dict(),
        "splits": split_reports,
        "aggregate": evalproto.aggregate_folds(target_reports),
        "fallback_aggregate": evalproto.aggregate_folds(fallback_reports),
    }
    if cfg.report_untrained:
        report["untrained_aggregate"] = {
            "target_mean_tdr": float(np.mean([s["untrained"]["target"]["tdr"] for s in split_reports])),
            "fallback_mean_tdr": float(np.mean([s["untrained"]["fallback"]["tdr"] for s in split_reports])),
        }
    return report


def _classifier(mcfg: model_mod.ModelConfig, tcfg: model_mod.TrainConfig) -> SpoofSequenceClassifier:
    return SpoofSequenceClassifier(lr=tcfg.lr, batch_size=tcfg.batch_size, max_epochs=tcfg.max_epochs,
                                   patience=tcfg.patience, val_fraction=tcfg.val_fraction,
                                   random_state=tcfg.seed, model_config=mcfg)


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
