"""Command-line surface: corpus generation, two training stages, evaluation,
prediction, and ablation sweeps.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .ablation import AblationPlan, run_ablation
from .align import pretrain_align, random_frozen_encoders, retrieval_top1
from .checkpoint import (align_from_checkpoint, checkpoint_from_align,
                         checkpoint_from_stage2, fusion_from_checkpoint,
                         load_checkpoint, save_checkpoint)
from .config import load_config
from .corpus import (generate_annotations, generate_corpus, read_annotations,
                     read_features, write_annotations, write_features)
from .errors import DataFormatError, NumericError, UsageError
from .metrics import evaluate
from .training import train_stage2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _triple(text, cast, what):
    parts = text.split(",")
    if len(parts) != 3:
        raise UsageError(f"{what} needs three comma-separated values, got {text!r}")
    return tuple(cast(p) for p in parts)


def build_parser():
    parser = _Parser(prog="emikit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--dims", help="D_v,D_a,D_s")
    p.add_argument("--noise", help="sigma_v,sigma_a,sigma_s")
    p.add_argument("--out", required=True)
    p.add_argument("--annotations", help="also write annotation records here")

    p = sub.add_parser("pretrain-align", help="stage-1 contrastive alignment")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("train", help="stage-2 fusion training")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--encoders", help="stage-1 checkpoint; omitted = random frozen encoders")
    p.add_argument("--out", required=True)
    p.add_argument("--log")

    p = sub.add_parser("eval", help="Pearson report for a fusion checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)

    p = sub.add_parser("predict", help="per-sample predictions as JSON lines")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="modality/module ablation sweep")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--plan", help="JSON plan file; omitted = default plan")
    p.add_argument("--out", required=True)
    return parser


def _cmd_gen_data(args):
    cfg = load_config(args.config, {
        "seed": args.seed, "n_samples": args.count, "frames": args.frames})
    dims = _triple(args.dims, int, "--dims") if args.dims else (cfg.dim_v, cfg.dim_a, cfg.dim_s)
    noise = _triple(args.noise, float, "--noise") if args.noise \
        else (cfg.noise_v, cfg.noise_a, cfg.noise_s)
    samples = generate_corpus(cfg.seed, cfg.n_samples, cfg.frames, dims=dims,
                              noise=noise, frame_rate_hz=cfg.frame_rate_hz)
    write_features(args.out, samples)
    if args.annotations:
        write_annotations(args.annotations, generate_annotations(samples, cfg.seed))
    print(f"wrote {len(samples)} samples to {args.out}")
    return 0


def _sync_dims(cfg, samples):
    cfg.dim_v = samples[0].visual.dim
    cfg.dim_a = samples[0].audio.dim
    cfg.dim_s = samples[0].text.dim
    cfg.frames = samples[0].visual.length
    return cfg


def _cmd_pretrain_align(args):
    cfg = load_config(args.config)
    samples = read_features(args.data)
    _sync_dims(cfg, samples)
    annotations = read_annotations(args.annotations)
    result = pretrain_align(samples, annotations, cfg, log_path=args.log)
    save_checkpoint(args.out, checkpoint_from_align(result, cfg))
    prompts = [s.id for s in samples]  # retrieval report on the training pairs
    from .corpus import render_prompt
    f_text = result.encode_prompts([render_prompt(annotations[i]) for i in prompts])
    f_v = result.encode_means(np.stack([s.visual.frames.mean(axis=0) for s in samples]),
                              "visual")
    f_a = result.encode_means(np.stack([s.audio.frames.mean(axis=0) for s in samples]),
                              "audio")
    print(json.dumps({
        "final_loss": result.history[-1]["loss"] if result.history else None,
        "retrieval_text_to_visual": retrieval_top1(f_text, f_v),
        "retrieval_text_to_audio": retrieval_top1(f_text, f_a),
    }))
    return 0


def _cmd_train(args):
    cfg = load_config(args.config)
    samples = read_features(args.data)
    _sync_dims(cfg, samples)
    if args.encoders:
        encoders = align_from_checkpoint(load_checkpoint(args.encoders))
    else:
        encoders = random_frozen_encoders(cfg, (cfg.dim_v, cfg.dim_a, cfg.dim_s))
    result = train_stage2(samples, cfg, encoders=encoders, log_path=args.log)
    save_checkpoint(args.out, checkpoint_from_stage2(result, cfg))
    last = result.history[-1]
    print(json.dumps({
        "epochs": len(result.history),
        "best_epoch": result.best_epoch,
        "best_val_rho": None if not np.isfinite(result.best_rho) else result.best_rho,
        "final_train_loss": last["train_loss"],
    }))
    return 0


def _cmd_eval(args):
    model = fusion_from_checkpoint(load_checkpoint(args.checkpoint))
    samples = read_features(args.data)
    report = evaluate(model, samples)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def _cmd_predict(args):
    model = fusion_from_checkpoint(load_checkpoint(args.checkpoint))
    samples = read_features(args.data)
    with open(args.out, "w", encoding="utf-8") as fh:
        for sample in samples:
            yhat = model.predict(sample)
            fh.write(json.dumps({"id": sample.id, "yhat": [float(v) for v in yhat]}) + "\n")
    print(f"wrote {len(samples)} predictions to {args.out}")
    return 0


def _cmd_ablate(args):
    cfg = load_config(args.config)
    samples = read_features(args.data)
    _sync_dims(cfg, samples)
    plan = AblationPlan.from_json(args.plan) if args.plan else AblationPlan()
    result = run_ablation(plan, samples, cfg,
                          progress=lambda row: print(f"done: {row['cell']}", file=sys.stderr))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(result.to_json() + "\n")
    print(result.text_table())
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "pretrain-align": _cmd_pretrain_align,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "ablate": _cmd_ablate,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return _HANDLERS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
