"""Command-line entry points.

Subcommands: preprocess, train, generate, evaluate, ablate. Exit codes:
0 success, 2 bad input, 3 degenerate geometry, 4 training divergence,
5 alignment mismatch. ELGAR_THREADS caps worker threads where frames
are processed independently.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .audio import build_features, extract_f0, read_wav
from .conditions import ConditionTrack, load_condition_track, save_condition_track
from .config import RunConfig, echo_config, load_config, thread_count
from .denoiser import read_checkpoint, write_checkpoint
from .diffusion import GuidanceConfig, cosine_schedule
from .errors import (
    DegenerateConfiguration,
    ElgarError,
    NonFiniteActivation,
    NoPlayablePosition,
    ShapeMismatch,
)
from .geometry import RawTake, load_raw_take, normalize_take
from .metrics import evaluate
from .motion import MotionSequence, bow_endpoints
from .motionfile import read_motion, write_motion
from .pipeline import (
    ablation_table,
    generate_motion,
    make_synthetic_dataset,
    run_ablation,
)
from .skeleton import end_site_positions, fk_world
from .training import slice_dataset, train, write_log

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_GEOMETRY = 3
EXIT_DIVERGENCE = 4
EXIT_ALIGNMENT = 5


def _fail(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _annotate_from_f0(
    motion: MotionSequence, f0: np.ndarray, skeleton, cello
) -> ConditionTrack:
    """Derive contact annotations for a normalized take from its f0 track:
    the intent nearest the hand per voiced frame, plus the measured
    fingertip and bow-endpoint distances."""
    from .cello import activating_string, select_intent
    from .geometry import point_segment_distance

    track = ConditionTrack(
        fps=motion.fps, f0=f0, features=build_features(f0, None, motion.fps)
    )
    pos, world = fk_world(motion.rotations(), skeleton)
    sites = end_site_positions(pos, world, skeleton)
    tip_idx = skeleton.anchor_end_sites("left_fingertips")
    frog, tip = bow_endpoints(pos, motion.bow_dir(), cello.bow_length, skeleton)
    for k in range(len(motion)):
        if f0[k] <= 0:
            continue
        intent, finger, _ = select_intent(float(f0[k]), sites[k, tip_idx], cello)
        track.annotated[k] = True
        track.note_finger[k] = -1 if finger is None else finger
        track.string_index[k] = intent.string_index
        track.contact[k] = intent.contact_point
        track.is_open[k] = intent.is_open_string
        track.d_cp[k] = np.linalg.norm(sites[k, tip_idx] - intent.contact_point, axis=1)
        seg0, seg1 = activating_string(intent, cello)
        track.d_ends[k, 0] = point_segment_distance(frog[k], seg0, seg1)[0]
        track.d_ends[k, 1] = point_segment_distance(tip[k], seg0, seg1)[0]
    return track


def cmd_preprocess(args) -> int:
    cfg = _config_of(args)
    try:
        raw = load_raw_take(args.take)
    except (OSError, ValueError, KeyError) as exc:
        return _fail(EXIT_INPUT, f"cannot read take: {exc}")
    skeleton = cfg.load_skeleton()
    cello = cfg.load_cello()
    if raw.motion is None:
        return _fail(EXIT_INPUT, "take carries no motion features (rotation form required)")
    try:
        motion_raw = np.asarray(raw.motion, dtype=np.float64)
        workers = thread_count()
        if workers > 1 and len(raw.frames) >= 2 * workers:
            chunks = np.array_split(np.arange(len(raw.frames)), workers)
            def run(idx):
                sub = RawTake(raw.fps, [raw.frames[i] for i in idx])
                return normalize_take(sub, cello.landmarks)
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, chunks))
            transforms = [t for p in parts for t in p.transforms]
            rmsd = np.concatenate([p.rmsd for p in parts])
        else:
            normalized = normalize_take(raw, cello.landmarks)
            transforms = normalized.transforms
            rmsd = normalized.rmsd
    except DegenerateConfiguration as exc:
        return _fail(EXIT_GEOMETRY, str(exc))
    if motion_raw.shape[0] != len(raw.frames):
        return _fail(EXIT_INPUT, "motion rows and keypoint frames disagree in count")

    # local joint rotations are invariant to the per-frame rigid alignment;
    # only the world-frame bow direction rotates with it
    feats = motion_raw.copy()
    for k, t in enumerate(transforms):
        feats[k, -3:] = t.rotation @ feats[k, -3:]
    try:
        motion = MotionSequence(raw.fps, feats)
    except ShapeMismatch as exc:
        return _fail(EXIT_INPUT, f"bad motion features: {exc}")

    f0 = np.zeros(len(motion)) if raw.f0 is None else np.asarray(raw.f0, dtype=np.float64)
    if f0.size != len(motion):
        return _fail(EXIT_INPUT, "f0 track length disagrees with the take")
    try:
        track = _annotate_from_f0(motion, f0, skeleton, cello)
    except NoPlayablePosition as exc:
        return _fail(EXIT_INPUT, f"unplayable pitch in the f0 track: {exc}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_motion(out.with_suffix(".elgr"), motion)
    save_condition_track(out.with_suffix(".cond.jsonl"), track)
    print(f"aligned {len(motion)} frames; cello RMSD mean {rmsd.mean():.2e} m max {rmsd.max():.2e} m")
    print(f"wrote {out.with_suffix('.elgr')} and {out.with_suffix('.cond.jsonl')}")
    return EXIT_OK


def _load_dataset(cfg: RunConfig, skeleton, cello):
    ds = cfg.dataset
    if ds.kind == "synthetic":
        return make_synthetic_dataset(
            skeleton,
            cello,
            n_train_scores=ds.n_train_scores,
            n_test_scores=ds.n_test_scores,
            notes_per_score=ds.notes_per_score,
            note_durations=tuple(ds.note_durations),
            fps=cfg.fps,
            seed=ds.seed,
        )
    if ds.kind != "dir":
        raise ShapeMismatch(f"unknown dataset kind {ds.kind!r}")
    root = Path(ds.path or ".")
    takes = []
    for motion_path in sorted(root.glob("*.elgr")):
        cond_path = motion_path.with_suffix("").with_suffix(".cond.jsonl")
        if not cond_path.exists():
            raise ShapeMismatch(f"{motion_path} lacks a matching condition file")
        motion = read_motion(motion_path)
        track = load_condition_track(cond_path)
        takes.append((motion, track, np.ones(len(motion), dtype=bool)))
    if not takes:
        raise ShapeMismatch(f"no .elgr takes under {root}")
    from .pipeline import SyntheticDataset

    return SyntheticDataset(train=slice_dataset(takes), test=[])


def cmd_train(args) -> int:
    cfg = _config_of(args, required=True)
    skeleton = cfg.load_skeleton()
    cello = cfg.load_cello()
    try:
        data = _load_dataset(cfg, skeleton, cello)
    except ShapeMismatch as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not data.train:
        return _fail(EXIT_INPUT, "training dataset is empty")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    schedule = cosine_schedule(cfg.timesteps)
    guidance = GuidanceConfig(w=cfg.guidance_w, cond_dropout=cfg.cond_dropout)
    try:
        result = train(
            data.train,
            cfg.denoiser,
            schedule,
            guidance,
            skeleton,
            cello,
            weights=cfg.weights,
            optimizer=cfg.optimizer,
            steps=cfg.train_steps,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            log_every=cfg.log_every,
            checkpoint_path=out / "model.ckpt",
            checkpoint_every=cfg.checkpoint_every,
        )
    except NonFiniteActivation as exc:
        print(f"training diverged; last good checkpoint retained: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    write_checkpoint(out / "model.ckpt", result.params)
    write_log(out / "train_log.csv", result.log)
    print(f"trained {cfg.train_steps} steps; checkpoint {out/'model.ckpt'}")
    return EXIT_OK


def _condition_from_args(args, cfg: RunConfig) -> ConditionTrack | None:
    if args.condition:
        return load_condition_track(args.condition)
    if args.audio:
        clip = read_wav(args.audio)
        f0 = extract_f0(clip, cfg.fps)
        feats = build_features(f0, clip, cfg.fps)
        return ConditionTrack(fps=cfg.fps, f0=f0, features=feats)
    return None


def cmd_generate(args) -> int:
    cfg = _config_of(args)
    try:
        params = read_checkpoint(args.checkpoint)
    except (OSError, ShapeMismatch) as exc:
        return _fail(EXIT_INPUT, f"cannot read checkpoint: {exc}")
    try:
        track = _condition_from_args(args, cfg)
    except (OSError, ValueError, ShapeMismatch) as exc:
        return _fail(EXIT_INPUT, f"cannot build the condition: {exc}")
    if track is None:
        return _fail(EXIT_INPUT, "generate needs --audio or --condition")
    if args.duration is not None:
        frames = int(round(args.duration * cfg.fps))
        if frames > len(track):
            return _fail(EXIT_ALIGNMENT, f"condition has {len(track)} frames, need {frames}")
        track = track.slice(0, frames)
    schedule = cosine_schedule(cfg.timesteps)
    seq = generate_motion(
        params,
        track,
        schedule,
        steps=args.steps if args.steps is not None else cfg.sample_steps,
        guidance_w=args.guidance_w if args.guidance_w is not None else cfg.guidance_w,
        seed=args.seed if args.seed is not None else cfg.seed,
        overlap_s=args.overlap_s if args.overlap_s is not None else cfg.overlap_s,
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_motion(out, seq)
    print(f"generated {len(seq)} frames -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config_of(args)
    skeleton = cfg.load_skeleton()
    cello = cfg.load_cello()
    try:
        seq = read_motion(args.motion)
        track = _condition_from_args(args, cfg)
    except (OSError, ShapeMismatch, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    if track is None:
        return _fail(EXIT_INPUT, "evaluate needs --audio or --condition")
    if len(track) != len(seq):
        return _fail(EXIT_INPUT, f"motion has {len(seq)} frames but condition has {len(track)}")
    gt = None
    if args.gt:
        gt = read_motion(args.gt)
        if len(gt) != len(seq):
            return _fail(EXIT_INPUT, "ground-truth motion length disagrees")
    report = evaluate(seq, track.f0, skeleton, cello, gt=gt)
    print(report.table())
    if gt is None:
        print("note: bowing F1 and cosine similarity need --gt; fields left null")
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(report.to_json(), encoding="utf-8")
        print(f"report -> {args.out}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config_of(args, required=True)
    skeleton = cfg.load_skeleton()
    cello = cfg.load_cello()
    try:
        data = _load_dataset(cfg, skeleton, cello)
    except ShapeMismatch as exc:
        return _fail(EXIT_INPUT, str(exc))
    if not data.train or not data.test:
        return _fail(EXIT_INPUT, "ablation needs synthetic train and test scores")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    schedule = cosine_schedule(cfg.timesteps)
    guidance = GuidanceConfig(w=cfg.guidance_w, cond_dropout=cfg.cond_dropout)
    try:
        rows, results = run_ablation(
            data,
            cfg.denoiser,
            schedule,
            guidance,
            skeleton,
            cello,
            optimizer=cfg.optimizer,
            steps=cfg.train_steps,
            batch_size=cfg.batch_size,
            seed=cfg.seed,
            sample_steps=cfg.sample_steps,
            base_weights=cfg.weights,
            log_every=cfg.log_every,
        )
    except NonFiniteActivation:
        return EXIT_DIVERGENCE
    table = ablation_table(rows)
    print(table)
    (out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(
        json.dumps([r.__dict__ for r in rows], indent=1), encoding="utf-8"
    )
    for name, result in results.items():
        slug = name.replace("/", "").replace(" ", "_")
        write_checkpoint(out / f"model_{slug}.ckpt", result.params)
        write_log(out / f"log_{slug}.csv", result.log)
    print(f"ablation artifacts -> {out}")
    return EXIT_OK


def _config_of(args, required: bool = False) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif required:
        raise SystemExit(_fail(EXIT_INPUT, "this command needs --config"))
    else:
        cfg = RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="elgar",
        description=(
            "Audio-conditioned cello performance motion: preprocess takes, train "
            "the toy diffusion model, generate motion (5 s slices, 4 s overlap, "
            "so n slices span 5 + (n-1) seconds), evaluate, and ablate."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize a raw take onto the shared instrument")
    p.add_argument("take", help="raw take JSON")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(fn=cmd_preprocess)

    p = sub.add_parser("train", help="train the denoiser on 5-second slices")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("generate", help="sample motion for audio or a condition file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--audio", default=None)
    p.add_argument("--condition", default=None)
    p.add_argument("--duration", type=float, default=None, help="seconds to generate")
    p.add_argument("--guidance-w", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--overlap-s", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("evaluate", help="score a motion file against its audio")
    p.add_argument("--motion", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--audio", default=None)
    p.add_argument("--condition", default=None)
    p.add_argument("--gt", default=None, help="reference motion for the bowing scores")
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("ablate", help="train and score the three contact-loss presets")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except DegenerateConfiguration as exc:
        return _fail(EXIT_GEOMETRY, str(exc))
    except ElgarError as exc:
        return _fail(EXIT_INPUT, str(exc))


if __name__ == "__main__":
    sys.exit(main())
