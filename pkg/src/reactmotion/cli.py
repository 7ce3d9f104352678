"""Command-line entry point: ``reactmotion <command> ...``.

Exit codes: 0 success, 2 validation error, 3 divergence, 4 I/O or protocol
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import DivergenceError, ReactMotionError, ValidationError
from .formats import read_clip, read_pair, read_tracks, write_clip, write_tracks
from .preprocess import (
    GapPolicy,
    SparseTrack,
    check_pixel_bounds,
    interpolate_gaps,
    map_segment_to_h36m,
    pair_segments,
    standardize_clip,
)
from .skeleton import JointSetName, MotionClip, PairedClip, SkeletonTopology, default_topology

log = logging.getLogger("reactmotion")


def _topology(path) -> SkeletonTopology:
    return SkeletonTopology.from_file(path) if path else default_topology()


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


# -- preprocess ------------------------------------------------------------------


def cmd_preprocess(args) -> int:
    """2D COCO tracks become lifting-ready H36M 2D tracks; lifted 3D tracks become clip pairs."""
    topo = _topology(args.ref_bones)
    policy = GapPolicy(args.max_gap, args.min_len)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = sorted(Path(args.inp).glob("*.track"))
    if not files:
        raise ValidationError(f"no .track files in {args.inp}")
    for path in files:
        tf = read_tracks(path)
        if tf.joint_set is JointSetName.COCO17 and tf.dim == 2:
            mapped = []
            for track in tf.tracks.values():
                if args.check_pixels:
                    check_pixel_bounds(track)
                for seg in interpolate_gaps(track, policy):
                    seg = map_segment_to_h36m(seg)
                    mapped.append(SparseTrack(seg.person_id, dict(zip(seg.frame_indices, seg.coords))))
            merged: dict[int, dict] = {}
            for t in mapped:
                merged.setdefault(t.person_id, {}).update(t.frames)
            dest = out / f"{path.stem}.h36m2d.track"
            write_tracks({p: SparseTrack(p, f) for p, f in merged.items()}, dest, JointSetName.H36M17, 2)
            log.info("%s: %d dense segments -> %s", path.name, len(mapped), dest.name)
        elif tf.joint_set is JointSetName.H36M17 and tf.dim == 3:
            segs = {p: interpolate_gaps(t, policy) for p, t in tf.tracks.items()}
            pairs = pair_segments(segs.get(0, []), segs.get(1, []), policy.min_clip_len)
            for k, pair in enumerate(pairs):
                std = PairedClip(standardize_clip(pair.subject, topo), standardize_clip(pair.counterpart, topo))
                write_clip(std, out / f"{path.stem}_{k:03d}.clip")
            log.info("%s: %d paired clips", path.name, len(pairs))
        else:
            raise ValidationError(f"{path}: expected COCO17 2D or H36M17 3D tracks")
    return 0


# -- train -----------------------------------------------------------------------


def _load_pairs(args):
    from .synthetic import synthetic_corpus

    if args.synthetic:
        return synthetic_corpus(args.synthetic, args.synthetic_frames, seed=args.seed)
    if not args.data:
        raise ValidationError("give --data <dir> or --synthetic N")
    files = sorted(Path(args.data).glob("*.clip"))
    if not files:
        raise ValidationError(f"no .clip files in {args.data}")
    return [read_pair(f) for f in files]


def cmd_train(args) -> int:
    from .models import ModelConfig
    from .nn import OptimizerConfig
    from .training import TrainRunConfig, evaluate_loss, split_dataset, train, write_loss_csv

    pairs = _load_pairs(args)
    train_pairs, test_pairs = split_dataset(pairs, args.split, args.seed)
    model_cfg = ModelConfig(
        arch=args.model,
        use_person_id=args.id_embed,
        d_model=args.d_model,
        n_heads=args.heads,
        d_ffn=args.d_ffn,
        n_encoder_layers=args.enc_layers,
        n_decoder_layers=args.dec_layers,
        dropout=args.dropout,
        seg_len=args.seg_len,
        n_routers=args.routers,
    )
    run = TrainRunConfig(
        model=model_cfg,
        optimizer=OptimizerConfig(learning_rate=args.lr, batch_size=args.batch_size, algorithm=args.optimizer),
        epochs=args.epochs,
        seed=args.seed,
        split_fraction=args.split,
        max_steps=args.max_steps,
        grad_clip=args.grad_clip,
        stride=args.stride,
    )
    result = train(run, train_pairs, args.out)
    loss_csv = Path(args.loss_csv) if args.loss_csv else Path(args.out).with_suffix(".loss.csv")
    write_loss_csv(result.history, loss_csv)
    test_loss = evaluate_loss(result.model, test_pairs)
    print(json.dumps({
        "checkpoint": str(args.out),
        "steps": len(result.history),
        "final_train_loss": result.losses[-1] if result.losses else None,
        "test_loss": test_loss,
        "train_clips": len(train_pairs),
        "test_clips": len(test_pairs),
    }))
    return 0


# -- generate / eval / export ------------------------------------------------------------


def cmd_generate(args) -> int:
    from .generation import run_offline, run_stream
    from .training import load_checkpoint

    model = load_checkpoint(args.ckpt)
    topo = _topology(args.topo)
    clip = read_clip(args.pair)
    try:
        if args.mode == "offline":
            if not isinstance(clip, PairedClip):
                raise ValidationError("offline generation needs a file with both fighters")
            generated, subject = run_offline(model, clip, args.horizon, topo)
        else:
            subject_clip = clip.subject if isinstance(clip, PairedClip) else clip
            generated, subject = run_stream(model, subject_clip, args.horizon, topo)
    except DivergenceError as exc:
        if exc.partial is not None and len(exc.partial[0]):
            write_clip(PairedClip(exc.partial[1], exc.partial[0]), args.out)
            log.error("partial output (%d frames) written to %s", len(exc.partial[0]), args.out)
        raise
    write_clip(PairedClip(subject, generated), args.out)
    log.info("wrote %d generated frames to %s", len(generated), args.out)
    return 0


def _generated_of(clip) -> tuple[MotionClip, MotionClip | None]:
    if isinstance(clip, PairedClip):
        return clip.counterpart, clip.subject
    return clip, None


def cmd_eval(args) -> int:
    from .metrics import bone_drift, displacement_xcorr, smoothness, write_drift_csv, write_smoothness_csv

    topo = _topology(args.topo)
    generated, subject = _generated_of(read_clip(args.generated))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    drift = bone_drift(generated, topo)
    smooth = smoothness(generated)
    write_drift_csv(drift, out / "drift.csv")
    write_smoothness_csv(smooth, out / "smoothness.csv")
    summary = {"drift": drift.summary(), "smoothness": smooth.summary()}
    if subject is not None:
        lag, r = displacement_xcorr(subject, generated)
        summary["displacement_xcorr"] = {"lag": lag, "r": r}
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary))
    return 0


def cmd_export_frames(args) -> int:
    from .export import export_frames

    clip = read_clip(args.clip)
    if not isinstance(clip, PairedClip):
        raise ValidationError("export needs a file with subject and generated frames")
    written = export_frames(clip.subject, clip.counterpart, args.out)
    log.info("wrote %d files to %s", len(written), args.out)
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    serve(args.port, args.ckpt, args.host, _topology(args.topo))
    return 0


def cmd_accumulate(args) -> int:
    from .harness import HarnessConfig, run_error_accumulation

    cfg = HarnessConfig(
        n_pairs=args.pairs,
        n_frames=args.frames,
        horizon=args.horizon,
        max_steps=args.steps,
        seed=args.seed,
    )
    for r in run_error_accumulation(args.out, cfg):
        s = r.report.summary() if r.report else {}
        print(f"{r.name}: horizon={s.get('horizon', 0)} mean={s.get('mean', float('nan')):.4g} "
              f"final={s.get('final_mean', float('nan')):.4g} diverged_at={r.diverged_at}")
    return 0


# -- parser ----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="reactmotion", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("preprocess", help="interpolate, map, retarget and normalize tracks")
    s.add_argument("--in", dest="inp", required=True, help="directory of .track files")
    s.add_argument("--out", required=True)
    s.add_argument("--max-gap", type=int, default=3)
    s.add_argument("--min-len", type=int, default=30)
    s.add_argument("--ref-bones", help="topology JSON with reference bone lengths")
    s.add_argument("--check-pixels", action="store_true", help="enforce 1920x1080 pixel bounds on 2D input")
    s.set_defaults(func=cmd_preprocess)

    s = sub.add_parser("train", help="train one model")
    s.add_argument("--model", choices=["simple", "inverted", "crossseg"], default="simple")
    s.add_argument("--id-embed", type=_on_off, default=False, metavar="on|off")
    s.add_argument("--epochs", type=int, default=50)
    s.add_argument("--max-steps", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--data", help="directory of paired .clip files")
    s.add_argument("--synthetic", type=int, default=0, metavar="N", help="train on N synthetic pairs instead")
    s.add_argument("--synthetic-frames", type=int, default=200)
    s.add_argument("--out", required=True, help="checkpoint path")
    s.add_argument("--loss-csv")
    s.add_argument("--split", type=float, default=0.1)
    s.add_argument("--stride", type=int, default=1)
    s.add_argument("--lr", type=float, default=1e-4)
    s.add_argument("--batch-size", type=int, default=32)
    s.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    s.add_argument("--grad-clip", type=float)
    s.add_argument("--d-model", type=int, default=512)
    s.add_argument("--heads", type=int, default=8)
    s.add_argument("--d-ffn", type=int, default=2048)
    s.add_argument("--enc-layers", type=int, default=2)
    s.add_argument("--dec-layers", type=int, default=1)
    s.add_argument("--dropout", type=float, default=0.1)
    s.add_argument("--seg-len", type=int, default=5)
    s.add_argument("--routers", type=int, default=30)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="closed-loop generation from a clip file")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--pair", required=True, help="clip file (both fighters for offline mode)")
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--mode", choices=["offline", "stream"], default="offline")
    s.add_argument("--topo")
    s.add_argument("--out", required=True, help="output clip file (subject + generated)")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("eval", help="drift and smoothness reports")
    s.add_argument("--generated", required=True)
    s.add_argument("--topo")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("export-frames", help="PNG line drawings plus CSV")
    s.add_argument("--clip", required=True, help="clip file with subject and generated frames")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_frames)

    s = sub.add_parser("serve", help="RMX1 streaming server")
    s.add_argument("--port", type=int, required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--topo")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("accumulate", help="error-accumulation study on synthetic data")
    s.add_argument("--out", required=True)
    s.add_argument("--pairs", type=int, default=4)
    s.add_argument("--frames", type=int, default=200)
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_accumulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ReactMotionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
