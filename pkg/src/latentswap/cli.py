"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config
from .data import (
    load_dataset,
    load_frame_dir,
    load_image,
    load_landmarks,
    load_mask,
    save_frame_dir,
    save_image,
)
from .errors import LatentSwapError
from .nets import LandmarkSet
from .pipeline import create_state, fit, pretrain_generator, swap_image
from .video import VideoOptions, swap_video

logger = logging.getLogger("latentswap")

CHECKPOINT_NAME = "checkpoint.lswp"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _require_file(path, what):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _run_config(args):
    cfg = load_config(_require_file(args.config, "config file")) if args.config else RunConfig()
    model, train = cfg.model, cfg.train
    if args.resolution is not None:
        model = replace(model, resolution=args.resolution)
    if args.seed is not None:
        train = replace(train, seed=args.seed)
    if getattr(args, "iterations", None) is not None:
        train = replace(train, iterations=args.iterations)
    return replace(cfg, model=model, train=train)


def _load_state(args):
    state = load_checkpoint(_require_file(args.checkpoint, "checkpoint"))
    if args.resolution is not None and args.resolution != state.models.cfg.resolution:
        raise LatentSwapError(
            f"--resolution {args.resolution} does not match the checkpoint ({state.models.cfg.resolution})"
        )
    state.models.eval()
    return state


def cmd_train(args):
    cfg = _run_config(args)
    state = create_state(cfg.model, cfg.train, provider_names=cfg.providers)
    data = load_dataset(args.data, cfg.model.resolution, landmark_estimator=state.providers.landmark_estimator)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log_every = max(1, cfg.train.iterations // 20)

    def progress(st):
        if st.iteration % log_every == 0:
            logger.info("iteration %d: %s", st.iteration, st.history[-1])

    fit(state, data, callback=progress)
    save_checkpoint(state, out / CHECKPOINT_NAME)
    (out / "history.json").write_text(json.dumps(state.history))
    print(out / CHECKPOINT_NAME)
    return 0


def cmd_pretrain(args):
    cfg = _run_config(args)
    state = create_state(cfg.model, cfg.train, provider_names=cfg.providers)
    data = load_dataset(args.data, cfg.model.resolution, landmark_estimator=state.providers.landmark_estimator)
    steps = args.steps if args.steps is not None else cfg.train.pretrain_steps
    history = pretrain_generator(state, data, steps)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(state, out / CHECKPOINT_NAME)
    (out / "pretrain_history.json").write_text(json.dumps(history))
    print(out / CHECKPOINT_NAME)
    return 0


def cmd_swap(args):
    state = _load_state(args)
    r = state.models.cfg.resolution
    x_s = load_image(_require_file(args.source, "source image"), r)
    x_t = load_image(_require_file(args.target, "target image"), r)
    m_t = load_mask(_require_file(args.mask, "mask"), r)
    l_s = load_landmarks(_require_file(args.source_landmarks, "source landmarks"))
    l_t = load_landmarks(_require_file(args.target_landmarks, "target landmarks"))
    with torch.no_grad():
        res = swap_image(state.models, x_s, x_t, m_t, l_s, l_t, state.config.swap_options)
    save_image(res.final[0], args.out)
    if args.side_output:
        save_image(res.side_output[0], args.side_output)
    return 0


def _estimate_landmarks(state, image):
    with torch.no_grad():
        coords = state.providers.landmark_estimator(image.unsqueeze(0))[0]
    return LandmarkSet(coords.reshape(-1, 2).double().numpy())


def cmd_swap_video(args):
    state = _load_state(args)
    r = state.models.cfg.resolution
    x_s = load_image(_require_file(args.source, "source image"), r)
    l_s = (
        load_landmarks(_require_file(args.source_landmarks, "source landmarks"))
        if args.source_landmarks
        else _estimate_landmarks(state, x_s)
    )
    targets = load_frame_dir(args.target_dir, r)
    video_cfg = load_config(_require_file(args.config, "config file")).video if args.config else VideoOptions()
    options = replace(video_cfg, mode=args.mode)
    result = swap_video(x_s, targets, state.models, state.providers, l_s, options, state.config.swap_options)
    save_frame_dir(result.frames, args.out)
    if result.objective_history:
        Path(args.out, "objective.json").write_text(json.dumps(result.objective_history))
    return 0


def evaluate_pairs(state, pairs):
    """Swap every manifest entry and compute the evaluation report."""
    prov = state.providers
    r = state.models.cfg.resolution
    sources, targets, finals, labels = [], [], [], []
    source_index = {}
    for entry in pairs:
        x_s = load_image(entry["source"], r)
        x_t = load_image(entry["target"], r)
        m_t = load_mask(entry["mask"], r)
        l_s = load_landmarks(entry["source_landmarks"]) if "source_landmarks" in entry else _estimate_landmarks(state, x_s)
        l_t = load_landmarks(entry["target_landmarks"]) if "target_landmarks" in entry else _estimate_landmarks(state, x_t)
        with torch.no_grad():
            res = swap_image(state.models, x_s, x_t, m_t, l_s, l_t, state.config.swap_options)
        finals.append(res.final[0])
        targets.append(x_t)
        key = str(entry["source"])
        if key not in source_index:
            source_index[key] = len(sources)
            sources.append(x_s)
        labels.append(source_index[key])
    with torch.no_grad():
        emb_f = [prov.identity_embedder(y) for y in finals]
        emb_s = [prov.identity_embedder(x) for x in sources]
        report = {
            "id_similarity": float(np.mean([metrics.cosine_similarity(e, emb_s[l]) for e, l in zip(emb_f, labels)])),
            "id_retrieval": metrics.id_retrieval_rate(emb_f, emb_s, labels),
            "pose_error": metrics.attribute_error(finals, targets, prov.pose_estimator),
            "expression_error": metrics.attribute_error(finals, targets, prov.expression_estimator),
            "fid": metrics.fid(targets, finals, prov.identity_embedder) if len(finals) >= 2 else None,
        }
    return report


def cmd_evaluate(args):
    state = _load_state(args)
    manifest = _require_file(args.pairs, "pairs manifest")
    entries = json.loads(manifest.read_text())
    base = manifest.parent
    pairs = [{k: (base / v if isinstance(v, str) else v) for k, v in e.items()} for e in entries]
    for i, e in enumerate(pairs):
        for key in ("source", "target", "mask"):
            if key not in e:
                raise LatentSwapError(f"pairs[{i}] is missing {key!r}")
            _require_file(e[key], f"pairs[{i}].{key}")
    report = evaluate_pairs(state, pairs)
    Path(args.report).write_text(json.dumps(report, indent=2, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_self_test(args):
    from .selftest import run_self_test

    return 0 if run_self_test() else 2


def build_parser():
    p = _Parser(prog="latentswap", description="Latent-space face swapping.")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train the swapping networks")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train)

    pt = sub.add_parser("pretrain-generator", help="reconstruction-only warm-up of generator and inverter")
    pt.add_argument("--config")
    pt.add_argument("--data", required=True)
    pt.add_argument("--out", required=True)
    pt.add_argument("--steps", type=int)
    pt.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("swap", help="swap a single image pair")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--source", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--source-landmarks", required=True)
    s.add_argument("--target-landmarks", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--side-output")
    s.set_defaults(func=cmd_swap)

    v = sub.add_parser("swap-video", help="swap a source face into a frame directory")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--source", required=True)
    v.add_argument("--source-landmarks")
    v.add_argument("--target-dir", required=True)
    v.add_argument("--mode", choices=["independent", "temporal"], default="independent")
    v.add_argument("--config")
    v.add_argument("--out", required=True)
    v.set_defaults(func=cmd_swap_video)

    e = sub.add_parser("evaluate", help="compute identity, attribute and FID metrics")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--pairs", required=True)
    e.add_argument("--report", required=True)
    e.set_defaults(func=cmd_evaluate)

    st = sub.add_parser("self-test", help="run the built-in invariant checks")
    st.set_defaults(func=cmd_self_test)
    return p


def run_cli(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:
        # --help
        return int(exc.code or 0)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (LatentSwapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
