"""Command-line entry point.

Every command writes its outputs into ``--out`` together with ``run.json``
(resolved configuration, argv and SHA-256 of each artifact). ``rerun``
replays a recorded ``run.json`` into a new directory.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import baselines, persistence
from .codec import IdentityCodec, LearnedCodec, train_codec
from .data import make_dataset
from .denoiser import DenoiserConfig, build_denoiser
from .diffusion import build_schedule
from .metrics import Embedder, TextAnchor, evaluate_transition
from .tasks import (
    DEFAULT_DDIM_STEPS,
    TransitionRequest,
    animate,
    assemble_story,
    format_segments,
    parse_storyboard,
    predict_autoregressive,
    transition,
)
from .training import TrainConfig, train

log = logging.getLogger("seine")


class CLIError(Exception):
    pass


def load_model(path):
    """Rebuild (denoiser, codec, schedule, config) from a checkpoint."""
    tensors, config = persistence.load_checkpoint(path)
    arch = DenoiserConfig.from_dict(config["architecture"])
    tc = config["train"]
    model = build_denoiser(arch)
    persistence.load_into(model, tensors, prefix="denoiser.")
    model.eval()
    if tc.get("codec", "identity") == "learned":
        codec = LearnedCodec(tc["codec_channels"], tc["codec_factor"])
        persistence.load_into(codec.net, tensors, prefix="codec.")
    else:
        codec = IdentityCodec()
    sched = build_schedule(tc["T"], tc["beta_start"], tc["beta_end"], tc["terminal_abar"])
    return model, codec, sched, config


def _finish(args, out: Path, config: dict) -> None:
    persistence.write_run_manifest(out, args.command, args.argv, config)
    print(f"wrote {out}")


def cmd_train(args) -> None:
    defaults = TrainConfig().to_dict()
    text = Path(args.config).read_text() if args.config else ""
    cfg = TrainConfig.from_dict(persistence.parse_config_text(text, defaults))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(persistence.format_config_text(cfg.to_dict()))
    clips = make_dataset(cfg.dataset_count, cfg.dataset_seed, cfg.frames, cfg.height, cfg.width)
    extra = None
    if cfg.codec == "learned":
        codec = train_codec(clips, cfg.codec_channels, cfg.codec_factor, steps=cfg.codec_steps, seed=cfg.seed)
        extra = lambda: {f"codec.{k}": v for k, v in codec.state_dict().items()}  # noqa: E731
    elif cfg.codec == "identity":
        codec = IdentityCodec()
    else:
        raise CLIError(f"unknown codec {cfg.codec!r}")
    result = train(cfg, clips, codec, out_dir=out, extra_state=extra)
    log.info("final loss (mean of last 200 steps): %.5f", np.mean([l for _, l in result.history[-200:]]) if result.history else float("nan"))
    _finish(args, out, cfg.to_dict())


def _sampler_config(args, **more) -> dict:
    return {"ckpt": str(args.ckpt), "ckpt_sha256": persistence.file_sha256(args.ckpt), "seed": args.seed, "steps": args.steps, **more}


def cmd_transition(args) -> None:
    model, codec, sched, _ = load_model(args.ckpt)
    s1, s2 = persistence.read_image(args.s1), persistence.read_image(args.s2)
    req = TransitionRequest(s1, s2, args.prompt, args.frames, args.seed, args.steps)
    clip = transition(req, model, codec, sched)
    out = Path(args.out)
    persistence.write_video(out, clip, {"prompt": args.prompt})
    _finish(args, out, _sampler_config(args, frames=args.frames, prompt=args.prompt))


def cmd_predict(args) -> None:
    model, codec, sched, _ = load_model(args.ckpt)
    seed_clip = persistence.read_video(args.seed_video)
    clip = predict_autoregressive(
        model, codec, sched, seed_clip, args.iterations, args.overlap, args.prompt, args.frames, args.seed, args.steps
    )
    out = Path(args.out)
    persistence.write_video(out, clip, {"prompt": clip.caption})
    _finish(args, out, _sampler_config(args, iterations=args.iterations, overlap=args.overlap, frames=args.frames))


def cmd_animate(args) -> None:
    model, codec, sched, _ = load_model(args.ckpt)
    image = persistence.read_image(args.image)
    clip = animate(image, args.prompt, model, codec, sched, args.frames, args.seed, args.steps)
    out = Path(args.out)
    persistence.write_video(out, clip, {"prompt": args.prompt})
    _finish(args, out, _sampler_config(args, frames=args.frames, prompt=args.prompt))


def cmd_story(args) -> None:
    model, codec, sched, _ = load_model(args.ckpt)
    board_path = Path(args.board)
    board = parse_storyboard(board_path.read_text(), base_dir=board_path.parent)
    clip, segments = assemble_story(board, model, codec, sched, args.seed, (args.height, args.width), args.steps)
    out = Path(args.out)
    persistence.write_video(out, clip)
    (out / "segments.txt").write_text(format_segments(segments))
    _finish(args, out, _sampler_config(args, board=str(board_path), board_sha256=persistence.file_sha256(board_path)))


def cmd_baseline(args) -> None:
    s1, s2 = persistence.read_image(args.s1), persistence.read_image(args.s2)
    config = {"method": args.method, "frames": args.frames}
    if args.method == "dissolve":
        clip = baselines.cross_dissolve(s1, s2, args.frames, args.prompt)
    elif args.method == "morph":
        if not args.points:
            raise CLIError("morph needs --points")
        p1, p2 = baselines.read_points(Path(args.points).read_text())
        clip = baselines.morph_with_correspondences(s1, s2, p1, p2, args.frames, args.prompt)
        config["points_sha256"] = persistence.file_sha256(args.points)
    elif args.method == "latent-interp":
        codec = load_model(args.ckpt)[1] if args.ckpt else IdentityCodec()
        clip = baselines.latent_interp(codec, s1, s2, args.frames, args.prompt)
    else:
        if not args.ckpt:
            raise CLIError("inversion-interp needs --ckpt")
        model, codec, sched, _ = load_model(args.ckpt)
        clip = baselines.inversion_interp(model, codec, sched, s1, s2, args.prompt, args.frames, args.steps, args.spherical)
        config.update(steps=args.steps, spherical=args.spherical)
    if args.ckpt:
        config["ckpt_sha256"] = persistence.file_sha256(args.ckpt)
    out = Path(args.out)
    persistence.write_video(out, clip, {"prompt": args.prompt, "method": args.method})
    _finish(args, out, config)


def cmd_eval(args) -> None:
    clip = persistence.read_video(args.video)
    s1, s2 = persistence.read_image(args.s1), persistence.read_image(args.s2)
    codec = None
    if args.embedder == "codec":
        codec = load_model(args.ckpt)[1] if args.ckpt else IdentityCodec()
    emb = Embedder(args.embedder, codec=codec)
    h, w = clip.size
    report = evaluate_transition(clip, s1, s2, args.prompt, emb, TextAnchor(h, w), args.scenes_mode, str(args.video))
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_text())
    print(f"sim_text={report.sim_text:.4f} sim_scenes={report.sim_scenes:.4f} sim_frames={report.sim_frames:.4f}")


def cmd_dataset(args) -> None:
    out = Path(args.out)
    clips = make_dataset(args.count, args.seed, args.frames, args.height, args.width)
    for i, clip in enumerate(clips):
        persistence.write_video(out / f"clip_{i:04d}", clip)
    (out / "captions.txt").write_text("".join(f"clip_{i:04d} {c.caption}\n" for i, c in enumerate(clips)))
    _finish(args, out, {"count": args.count, "seed": args.seed, "frames": args.frames, "height": args.height, "width": args.width})


def cmd_rerun(args) -> None:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if "--out" not in argv:
        raise CLIError("recorded run has no --out")
    argv[argv.index("--out") + 1] = str(args.out)
    code = main(argv)
    if code:
        raise CLIError(f"replay exited with status {code}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="seine", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def sampler(p, frames=True):
        p.add_argument("--ckpt", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=DEFAULT_DDIM_STEPS, help="DDIM steps")
        if frames:
            p.add_argument("--frames", type=int, default=16)

    p = sub.add_parser("train", help="train the denoiser on a synthetic dataset")
    p.add_argument("--config", help="key = value config file (defaults for missing keys)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transition", help="generate frames between two scenes")
    p.add_argument("--s1", required=True)
    p.add_argument("--s2", required=True)
    p.add_argument("--prompt", required=True)
    sampler(p)
    p.set_defaults(func=cmd_transition)

    p = sub.add_parser("predict", help="autoregressively extend a video")
    p.add_argument("--seed-video", required=True)
    p.add_argument("--iterations", type=int, required=True)
    p.add_argument("--overlap", type=int, default=2)
    p.add_argument("--prompt")
    sampler(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("animate", help="animate a still image")
    p.add_argument("--image", required=True)
    p.add_argument("--prompt", required=True)
    sampler(p)
    p.set_defaults(func=cmd_animate)

    p = sub.add_parser("story", help="assemble shots and transitions from a storyboard")
    p.add_argument("--board", required=True)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    sampler(p, frames=False)
    p.set_defaults(func=cmd_story)

    p = sub.add_parser("baseline", help="comparison transition methods")
    p.add_argument("--method", required=True, choices=["dissolve", "morph", "latent-interp", "inversion-interp"])
    p.add_argument("--s1", required=True)
    p.add_argument("--s2", required=True)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--prompt", default="")
    p.add_argument("--points", help="correspondences, 'x1 y1 x2 y2' per line (morph)")
    p.add_argument("--ckpt", help="checkpoint (inversion-interp; codec for latent-interp)")
    p.add_argument("--steps", type=int, default=DEFAULT_DDIM_STEPS)
    p.add_argument("--spherical", action="store_true", help="slerp instead of lerp (inversion-interp)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("eval", help="transition metrics for a video")
    p.add_argument("--video", required=True)
    p.add_argument("--s1", required=True)
    p.add_argument("--s2", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--embedder", choices=["pooled", "flatten", "codec"], default="pooled")
    p.add_argument("--scenes-mode", choices=["max", "mean"], default="max")
    p.add_argument("--ckpt", help="checkpoint supplying the codec for --embedder codec")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dataset", help="export synthetic clips as video containers")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--height", type=int, default=16)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("rerun", help="replay a recorded run.json into a new directory")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (CLIError, ValueError, OSError, KeyError) as exc:
        print(f"seine {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
