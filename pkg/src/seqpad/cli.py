"""Command-line entry point: ``seqpad <subcommand> ...``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import evalproto, model as model_mod
from .config import Config
from .demosaic import demosaic_bilinear, visualize
from .estimators import SpoofSequenceClassifier
from .ingest import DataError, RawFrame, load_manifest, load_sequence, read_pgm, write_minutiae, write_ppm
from .model import CheckpointError, TrainingError
from .pipeline import (make_plans, prepare, prepare_manifest, run_pipeline, score_prepared, sequences_for,
                       stack_training, write_report)
from .tensorcore import NonFiniteGradient

log = logging.getLogger("seqpad")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


def _config(args) -> Config:
    cfg = Config.load(args.config) if getattr(args, "config", None) else Config()
    overrides = {}
    for key in ("seed", "jobs", "fold"):
        if getattr(args, key, None) is not None:
            overrides[key] = getattr(args, key)
    if getattr(args, "fdr", None) is not None:
        overrides["fdr_target"] = args.fdr
    cfg = cfg.with_overrides(**overrides)
    log.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def cmd_synth(args) -> int:
    from .synthgen import generate_dataset, hard_cues, strong_cues
    base = (hard_cues if args.hard else strong_cues)(num_minutiae=args.minutiae, height=args.height,
                                                     width=args.width, frames=args.frames)
    m = generate_dataset(args.live, args.spoof, args.subjects, args.materials, args.seed, args.out,
                         hard=args.hard, base=base)
    print(f"wrote {len(m)} presentations; manifest {Path(args.out) / 'manifest.jsonl'}")
    return EXIT_OK


def cmd_demosaic(args) -> int:
    rgb = demosaic_bilinear(RawFrame(read_pgm(args.input)))
    if args.visualize:
        rgb = visualize(rgb)
    write_ppm(args.output, rgb.pixels)
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _config(args).with_overrides(whole_frame=False)
    _, ref, _ = sequences_for(args.presentation, cfg, minutiae_path=args.external)
    write_minutiae(ref.reference_minutiae, args.out)
    print(f"reference frame {ref.reference_index}: {len(ref.reference_minutiae)} minutiae "
          f"(per-frame counts {ref.per_frame_counts})")
    return EXIT_OK


def cmd_extract(args) -> int:
    cfg = _config(args).with_overrides(patch_size=args.size, whole_frame=args.whole_frame)
    seq, ref, seqs = sequences_for(args.presentation, cfg, minutiae_path=args.minutiae)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    index = {"presentation_id": seq.presentation_id, "patch_size": None if args.whole_frame else args.size,
             "whole_frame": args.whole_frame, "reference_index": None if ref is None else ref.reference_index,
             "sequences": []}
    for i, ps in enumerate(seqs):
        files = []
        for t, patch in enumerate(ps.patches):
            name = f"seq{i:03d}_t{t:02d}.ppm"
            write_ppm(out / name, patch)
            files.append(name)
        index["sequences"].append({"center": ps.center, "files": files})
    (out / "index.json").write_text(json.dumps(index, indent=2) + "\n")
    print(f"{len(seqs)} sequences written to {out}")
    return EXIT_OK


def cmd_make_splits(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    plans = make_plans(manifest, cfg, args.protocol, args.material)
    for p in plans:
        evalproto.check_split(p, manifest)
    evalproto.save_splits(plans, args.out)
    print(f"{len(plans)} split(s) written to {args.out}")
    return EXIT_OK


def _pick_split(path, index: int) -> evalproto.SplitPlan:
    plans = evalproto.load_splits(path)
    if not 0 <= index < len(plans):
        raise DataError(f"split index {index} out of range ({len(plans)} splits)")
    return plans[index]


def cmd_train(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    plan = _pick_split(args.split, args.split_index)
    seq_len = load_sequence(manifest.resolve(manifest.records[0])).frame_count
    mcfg = cfg.model_config(seq_len)
    tcfg = cfg.train_config()
    prepared = prepare_manifest(manifest, plan.train_ids, cfg, mcfg.backbone.input_size, np.dtype(mcfg.dtype))
    x, y, groups = stack_training(prepared, plan.train_ids)
    clf = SpoofSequenceClassifier(lr=tcfg.lr, batch_size=tcfg.batch_size, max_epochs=tcfg.max_epochs,
                                  patience=tcfg.patience, val_fraction=tcfg.val_fraction,
                                  random_state=tcfg.seed, model_config=mcfg)
    clf.fit(x, y, groups=groups)
    clf.model_.meta = {"pipeline_config": cfg.to_dict(), "split": plan.name}
    model_mod.save(clf.model_, args.out)
    print(f"trained on {len(x)} sequences for {len(clf.history_)} epochs; checkpoint {args.out}")
    return EXIT_OK


def cmd_score(args) -> int:
    mdl = model_mod.load(args.ckpt)
    cfg = Config.from_dict(mdl.meta.get("pipeline_config", {})) if mdl.meta.get("pipeline_config") else Config()
    if args.config:
        cfg = Config.load(args.config)
    clf = SpoofSequenceClassifier.from_model(mdl)
    size = mdl.config.backbone.input_size
    dtype = np.dtype(mdl.config.dtype)
    if args.manifest:
        manifest = load_manifest(args.manifest)
        ids = _pick_split(args.split, args.split_index).test_ids if args.split else [r.presentation_id for r in manifest]
        prepared = prepare_manifest(manifest, ids, cfg, size, dtype)
    elif args.presentation:
        prepared = {}
        for d in args.presentation:
            p = prepare(d, cfg, size, dtype=dtype)
            prepared[p.presentation_id] = p
        ids = list(prepared)
    else:
        raise DataError("score needs --presentation or --manifest")
    table = score_prepared(clf, prepared, ids)
    Path(args.out).write_text(json.dumps(table.to_list(), indent=2) + "\n")
    print(f"scored {len(ids)} presentation(s) -> {args.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    table = evalproto.ScoreTable.from_list(json.loads(Path(args.scores).read_text()))
    report = evalproto.tdr_at_fdr(table, args.fdr)
    write_report(report.to_dict(), args.report)
    print(f"TDR {report.tdr:.4f} @ FDR {report.fdr:.4f} (target {args.fdr})")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    manifest = load_manifest(args.manifest)
    start = time.perf_counter()
    report = run_pipeline(manifest, cfg, args.protocol, args.material, args.out)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(report, out / "report.json")
    log.info("pipeline finished in %.1f s", time.perf_counter() - start)
    agg = report["aggregate"]
    print(f"mean TDR {agg['mean_tdr']:.4f} +/- {agg['std_tdr']:.4f} @ FDR {cfg.fdr_target} "
          f"over {agg['n']} split(s); report {out / 'report.json'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seqpad", description="Temporal fingerprint spoof detection pipeline")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def common(p, seed=True):
        p.add_argument("--config", help="JSON config file")
        if seed:
            p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int, help="worker threads for preprocessing")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--live", type=int, required=True)
    p.add_argument("--spoof", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hard", action="store_true", help="weaker liveness cues")
    p.add_argument("--subjects", type=int, default=20)
    p.add_argument("--materials", type=int, default=3)
    p.add_argument("--minutiae", type=int, default=6)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=192)
    p.add_argument("--frames", type=int, default=10)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("demosaic", help="Bayer PGM -> RGB PPM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--visualize", action="store_true")
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("detect-minutiae", help="reference-frame minutiae of one presentation")
    p.add_argument("presentation")
    p.add_argument("--out", required=True)
    p.add_argument("--external", help="use this minutiae CSV instead of the detector")
    common(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("extract-patches", help="write patch sequences of one presentation")
    p.add_argument("presentation")
    p.add_argument("--minutiae", help="minutiae CSV to use instead of the detector")
    p.add_argument("--size", type=int, default=192)
    p.add_argument("--out", required=True)
    p.add_argument("--whole-frame", action="store_true")
    common(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("make-splits", help="known-material folds or cross-material split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=["known-material", "cross-material"], default="known-material")
    p.add_argument("--material")
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_make_splits)

    p = sub.add_parser("train", help="train on the training side of a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--split-index", type=int, default=0)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="spoofness scores from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--presentation", action="append")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--split-index", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("evaluate", help="TDR @ FDR from a score file")
    p.add_argument("--scores", required=True)
    p.add_argument("--fdr", type=float, default=evalproto.DEFAULT_FDR)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="run a whole protocol from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--protocol", choices=["known-material", "cross-material"], default="known-material")
    p.add_argument("--material")
    p.add_argument("--fold", type=int)
    p.add_argument("--fdr", type=float)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_pipeline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on usage errors
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (TrainingError, NonFiniteGradient, FloatingPointError) as exc:
        print(f"seqpad: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, CheckpointError, FileNotFoundError, ValueError, KeyError) as exc:
        print(f"seqpad: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
