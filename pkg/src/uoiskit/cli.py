"""Command line front end: gen, train-hpg, train-hdnet, infer, eval, report.

Every subcommand is a pure function of (config, seed): rerunning with the
same inputs writes byte-identical outputs, which is why manifests carry no
timestamps or absolute paths. Exit codes: 0 success, 2 config error,
3 data error, 4 numerical error. Set UOISKIT_LOG=debug|info|warning for
line-oriented JSON logs on stderr.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .config import config_dict, load_config
from .errors import ConfigError, DatasetError, NumericalError, UoiskitError
from .hdnet import build_training_set, train_hdnet
from .hpghead import train_hpg_head
from .metrics import evaluate_dataset, render_table
from .pipeline import ABLATIONS, infer_scene
from .proposer import RecordingProposer, make_proposer
from .seeding import derive_seed
from .synthgen import (
    generate_dataset,
    generate_scene,
    mask_from_record,
    mask_record,
    read_dataset,
    write_dataset,
)
from .tinynn import load_mlp, save_mlp

LOG = logging.getLogger("uoiskit")
PREDICTIONS_NAME = "predictions.json"
PROPOSALS_NAME = "proposals.json"

_LEVELS = {"debug": logging.DEBUG, "info": logging.INFO,
           "warning": logging.WARNING, "error": logging.ERROR}


def _setup_logging():
    level = _LEVELS.get(os.environ.get("UOISKIT_LOG", "").lower(),
                        logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    LOG.handlers = [handler]
    LOG.setLevel(level)
    LOG.propagate = False


def _log(level, event, **extra):
    LOG.log(level, json.dumps({"event": event, **extra}, sort_keys=True))


def _write_json(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path


def _write_training_log(ckpt_path, history):
    """Per-epoch JSONL next to the checkpoint, plus the selected epoch."""
    lines = [json.dumps({"event": "epoch", **h}, sort_keys=True)
             for h in history]
    best = min(history, key=lambda h: (h["val_loss"], h["epoch"]))
    lines.append(json.dumps({"event": "selected", "epoch": best["epoch"],
                             "val_loss": best["val_loss"]}, sort_keys=True))
    path = Path(str(ckpt_path) + ".log.jsonl")
    path.write_text("\n".join(lines) + "\n")
    return path


# ------------------------------------------------------------------ gen


def _scene_job(payload):
    scene_cfg, seed = payload
    return generate_scene(scene_cfg, seed)


def cmd_gen(args):
    cfg = load_config(args.config, seed=args.seed, count=args.count)
    _log(logging.INFO, "gen", scenes=cfg.n_scenes, seed=cfg.seed)
    if args.jobs > 1:
        jobs = [(cfg.scene, derive_seed(cfg.seed, i))
                for i in range(cfg.n_scenes)]
        with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
            scenes = list(pool.map(_scene_job, jobs))
    else:
        scenes = generate_dataset(cfg.scene, cfg.n_scenes, cfg.seed)
    extra = {"config": config_dict(cfg), "seed": cfg.seed}
    manifest = write_dataset(scenes, args.out, extra=extra)
    print(manifest)
    return 0


# ---------------------------------------------------------------- train


def cmd_train_hpg(args):
    cfg = load_config(args.config, seed=args.seed)
    scenes = read_dataset(args.data)
    _log(logging.INFO, "train-hpg", scenes=len(scenes),
         epochs=cfg.train_hpg.max_epochs)
    net, history = train_hpg_head(scenes, spec=cfg.heatmap, cfg=cfg.train_hpg,
                                  hidden=cfg.hpg.hidden, w_fg=cfg.hpg.w_fg,
                                  w_h=cfg.hpg.w_h)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mlp(out, net, cfg.train_hpg)
    _write_training_log(out, history)
    print(out)
    return 0


def cmd_train_hdnet(args):
    cfg = load_config(args.config, seed=args.seed)
    scenes = read_dataset(args.data)
    _log(logging.INFO, "train-hdnet", scenes=len(scenes),
         prompts_per_scene=cfg.hdnet.prompts_per_scene)
    samples = build_training_set(scenes, cfg.hdnet.prompts_per_scene,
                                 cfg.hdnet.bg_fraction, cfg.oracle,
                                 seed=derive_seed(cfg.seed, 0xDA7A))
    net, history = train_hdnet(samples, cfg.train_hdnet,
                               hidden=cfg.hdnet.hidden)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mlp(out, net, cfg.train_hdnet)
    _write_training_log(out, history)
    print(out)
    return 0


# ---------------------------------------------------------------- infer


def _detection_record(det):
    return {"mask": mask_record(det.mask), "score": det.score,
            "prompt": [det.prompt.x, det.prompt.y], "slot": det.slot}


def _infer_job(payload):
    scene, hpg_net, hdnet_net, proposer, pipe_cfg, seed, ablation = payload
    dets = infer_scene(scene, hpg_net, hdnet_net, proposer, pipe_cfg,
                       seed=seed, ablation=ablation)
    return [_detection_record(d) for d in dets]


def cmd_infer(args):
    cfg = load_config(args.config, seed=args.seed)
    if args.proposer == "replay" and args.replay is None:
        raise ConfigError("--proposer replay needs --replay <proposals.json>")
    if args.hdnet is None and args.ablation != "no-hdnet":
        raise ConfigError("--hdnet checkpoint required unless --ablation no-hdnet")
    scenes = read_dataset(args.data)
    hpg_net = load_mlp(args.hpg)
    hdnet_net = load_mlp(args.hdnet) if args.hdnet is not None else None
    proposer = make_proposer(args.proposer, cfg.oracle, args.replay)
    if args.record:
        proposer = RecordingProposer(proposer)

    jobs = [(scene, hpg_net, hdnet_net, proposer, cfg.pipeline,
             derive_seed(cfg.seed, i), args.ablation)
            for i, scene in enumerate(scenes)]
    # recording keeps state on the proposer, so it cannot cross process
    # boundaries; everything else parallelizes scene by scene
    if args.jobs > 1 and not args.record:
        with concurrent.futures.ProcessPoolExecutor(args.jobs) as pool:
            all_dets = list(pool.map(_infer_job, jobs))
    else:
        all_dets = [_infer_job(j) for j in jobs]

    rows = [{"index": i, "detections": dets}
            for i, dets in enumerate(all_dets)]
    _log(logging.INFO, "infer", scenes=len(rows),
         detections=sum(len(r["detections"]) for r in rows))
    payload = {
        "version": 1,
        "scene_count": len(rows),
        "seed": cfg.seed,
        "ablation": args.ablation,
        "proposer": args.proposer,
        "config": config_dict(cfg),
        "scenes": rows,
    }
    out = Path(args.out)
    path = _write_json(out / PREDICTIONS_NAME, payload)
    if args.record:
        proposer.save(out / PROPOSALS_NAME)
    print(path)
    return 0


# ----------------------------------------------------------------- eval


def _predictions_path(path):
    p = Path(path)
    if p.is_dir():
        p = p / PREDICTIONS_NAME
    if not p.is_file():
        raise DatasetError(f"prediction manifest not found: {p}")
    return p


def read_predictions(path):
    """Load a prediction manifest: (per-scene mask lists, manifest dict)."""
    p = _predictions_path(path)
    try:
        payload = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"corrupt prediction manifest {p}: {exc}") from exc
    if not isinstance(payload, dict) or "scenes" not in payload:
        raise DatasetError(f"prediction manifest {p} has no scene list")
    by_index = {}
    for row in payload["scenes"]:
        by_index[int(row["index"])] = [mask_from_record(d["mask"])
                                       for d in row["detections"]]
    count = int(payload.get("scene_count", len(by_index)))
    scenes = []
    for i in range(count):
        if i not in by_index:
            raise DatasetError(f"scene {i} missing from predictions {p}")
        scenes.append(by_index[i])
    return scenes, payload


def _report_json(report):
    return {
        "overlap": list(report.overlap),
        "boundary": list(report.boundary),
        "f75": report.f75,
        "pixel_pooled": report.pixel_pooled,
        "per_scene": [
            {"overlap": list(s["overlap"]), "boundary": list(s["boundary"]),
             "f75": s["f75"]}
            for s in report.per_scene
        ],
    }


def _ablation_sibling(path, ablation):
    p = Path(path)
    if p.is_dir() or not p.suffix:
        return p.with_name(p.name + "-" + ablation)
    return p.with_name(p.stem + "-" + ablation + p.suffix)


def _label(meta):
    ab = meta.get("ablation", "none")
    return "full" if ab == "none" else ab


def cmd_eval(args):
    gt_scenes = read_dataset(args.gt)
    gts = [list(s.instances) for s in gt_scenes]
    preds, meta = read_predictions(args.pred)
    if len(preds) != len(gts):
        raise DatasetError(f"{len(preds)} predicted scenes vs {len(gts)} gt scenes")
    reports = {_label(meta): evaluate_dataset(preds, gts,
                                              pixel_pooled=args.pooled)}
    if args.ablation != "none":
        sibling = _ablation_sibling(args.pred, args.ablation)
        ab_preds, ab_meta = read_predictions(sibling)
        if ab_meta.get("ablation") != args.ablation:
            raise DatasetError(
                f"{sibling} holds ablation {ab_meta.get('ablation')!r}, "
                f"expected {args.ablation!r}")
        reports[args.ablation] = evaluate_dataset(ab_preds, gts,
                                                  pixel_pooled=args.pooled)
    table = render_table(reports)
    payload = {
        "version": 1,
        "config": meta.get("config"),
        "seed": meta.get("seed"),
        "reports": {k: _report_json(r) for k, r in reports.items()},
    }
    out = Path(args.out)
    _write_json(out / "report.json", payload)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


# ---------------------------------------------------------------- report


def cmd_report(args):
    from . import report as report_mod

    gt_scenes = read_dataset(args.gt)
    preds, meta = read_predictions(args.pred)
    if len(preds) != len(gt_scenes):
        raise DatasetError(
            f"{len(preds)} predicted scenes vs {len(gt_scenes)} gt scenes")
    hpg_net = load_mlp(args.hpg) if args.hpg is not None else None
    written = report_mod.generate_report(
        gt_scenes, preds, Path(args.out), label=_label(meta),
        train_log=args.train_log, hpg_net=hpg_net, n_panels=args.scenes)
    for path in written:
        print(path)
    return 0


# ----------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(
        prog="uoiskit",
        description="synthetic tabletop instance segmentation toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="TOML run config (defaults apply when omitted)")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config's global seed")

    p = sub.add_parser("gen", parents=[common],
                       help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="dataset directory to write")
    p.add_argument("--count", type=int, default=None,
                   help="override the config's scene count")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel scene workers")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train-hpg", parents=[common],
                       help="train the foreground/heat head")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.set_defaults(func=cmd_train_hpg)

    p = sub.add_parser("train-hdnet", parents=[common],
                       help="train the score refinement net")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out", required=True, help="checkpoint path to write")
    p.set_defaults(func=cmd_train_hdnet)

    p = sub.add_parser("infer", parents=[common],
                       help="run the pipeline over a dataset")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--hpg", required=True, help="head checkpoint")
    p.add_argument("--hdnet", default=None,
                   help="refiner checkpoint (optional with --ablation no-hdnet)")
    p.add_argument("--out", required=True, help="prediction directory to write")
    p.add_argument("--proposer", choices=("oracle", "replay"),
                   default="oracle")
    p.add_argument("--replay", default=None,
                   help="recorded proposals for --proposer replay")
    p.add_argument("--record", action="store_true",
                   help="save every proposal for later replay (forces --jobs 1)")
    p.add_argument("--ablation", choices=ABLATIONS, default="none")
    p.add_argument("--jobs", type=int, default=1,
                   help="parallel scene workers")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True,
                   help="prediction directory or manifest")
    p.add_argument("--gt", required=True, help="ground-truth dataset directory")
    p.add_argument("--out", required=True, help="report directory to write")
    p.add_argument("--ablation", choices=ABLATIONS, default="none",
                   help="also score the sibling '<pred>-<ablation>' manifest "
                        "for an A/B pair")
    p.add_argument("--pooled", action="store_true",
                   help="pool pixel counts across scenes instead of averaging")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report",
                       help="render figures and per-scene CSV for a run")
    p.add_argument("--pred", required=True,
                   help="prediction directory or manifest")
    p.add_argument("--gt", required=True, help="ground-truth dataset directory")
    p.add_argument("--out", required=True, help="figure directory to write")
    p.add_argument("--train-log", default=None,
                   help="training log (.log.jsonl) to plot")
    p.add_argument("--hpg", default=None,
                   help="head checkpoint for heatmap panels")
    p.add_argument("--scenes", type=int, default=4,
                   help="number of scenes to render panels for")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    try:
        return args.func(args)
    except ConfigError as exc:
        _log(logging.ERROR, "config-error", message=str(exc))
        return 2
    except NumericalError as exc:
        _log(logging.ERROR, "numerical-error", message=str(exc))
        return 4
    except UoiskitError as exc:
        _log(logging.ERROR, "data-error", type=type(exc).__name__,
             message=str(exc))
        return 3
    except OSError as exc:
        _log(logging.ERROR, "io-error", message=str(exc))
        return 3


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    sys.exit(main())
