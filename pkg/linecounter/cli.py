import argparse
import logging
import os
import signal
import sys
import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from linecounter.augment import AugmentConfig
from linecounter.checkpoint import loadCheckpoint
from linecounter.errors import ConfigError, LineCounterError, ManifestError
from linecounter.evaluation import DEFAULT_THRESHOLD, evaluateCorpus
from linecounter.inference import ForegroundMethod, Postprocess, predictLineMap, writeVisualization
from linecounter.model import CounterOrder, ModelConfig, MonotonePlacement, MONOTONE_PREACTIVATIONS, build
from linecounter.pgm import loadPairs, readImage, readLineMap, readManifest, writeImage, writeLineMap, writeManifest
from linecounter.synth import SynthSpec, synthPage
from linecounter.train import BEST_CHECKPOINT, TrainConfig, Trainer, TrainerState, splitPairs
from linecounter.utils import getThroughput, loadConfig, setupLogger, signalHandler, threadCount, writeCSV, writeJson

logger = logging.getLogger(__name__)

RESOLVED_CONFIG = "resolved_config.json"
ABLATION_FIELDS = ["name", "counter_order", "h_bidirectional", "v_bidirectional", "placement", "preactivation",
                   "dr", "ra", "fm", "error"]
EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_ERROR = 2
EXIT_INTERRUPTED = 130


@dataclass
class RunConfig:
    """
    Everything one command needs, merged from config.yaml and the command line.

    Written to resolved_config.json next to the command's outputs.
    """

    command: str
    seed: int = 0
    manifest: str = None
    checkpoint: str = None
    out: str = None
    model: ModelConfig = field(default_factory=ModelConfig)
    synth: SynthSpec = field(default_factory=SynthSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    infer: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def fromArgs(cls, args, config):
        model = ModelConfig.fromDict(config.get("model", {}))
        synth = SynthSpec.fromDict({k: v for k, v in config.get("synth", {}).items() if k != "count"})
        train = TrainConfig.fromDict(config.get("train", {}))
        augment = AugmentConfig.fromDict(config.get("augment", {}))
        infer = {"fg_threshold": 0.5, "fg_method": "threshold", "postprocess": "none", "visualize": True, "png": False}
        infer.update(config.get("infer", {}))
        evaluation = {"match_threshold": DEFAULT_THRESHOLD}
        evaluation.update(config.get("eval", {}))

        seed = _pick(args, "seed", train.seed)
        model = _modelOverrides(model, args)
        synth = replace(
            synth,
            seed=seed,
            page_size=_pick(args, "page_size", synth.page_size),
            line_count=_pick(args, "lines", synth.line_count),
        )
        train = replace(
            train,
            seed=seed,
            epochs=_pick(args, "epochs", train.epochs),
            batch_size=_pick(args, "batch_size", train.batch_size),
            lr=_pick(args, "lr", train.lr),
            patience=_pick(args, "patience", train.patience),
            fg_threshold=_pick(args, "fg_threshold", train.fg_threshold),
            match_threshold=_pick(args, "match_threshold", train.match_threshold),
        )
        if getattr(args, "no_augment", False):
            augment = replace(augment, enabled=False)
        for key in ("fg_threshold", "fg_method", "postprocess", "png"):
            infer[key] = _pick(args, key, infer[key])
        if getattr(args, "no_visualize", False):
            infer["visualize"] = False
        evaluation["match_threshold"] = _pick(args, "match_threshold", evaluation["match_threshold"])
        try:
            ForegroundMethod(infer["fg_method"])
            Postprocess(infer["postprocess"])
        except ValueError as e:
            raise ConfigError(str(e)) from None

        return cls(
            command=args.command,
            seed=seed,
            manifest=getattr(args, "manifest", None),
            checkpoint=getattr(args, "checkpoint", None) or getattr(args, "resume", None),
            out=_pick(args, "out", os.path.join(config.get("folder", {}).get("runs", "runs"), args.command)),
            model=model,
            synth=synth,
            train=train,
            augment=augment,
            infer=infer,
            eval=evaluation,
        )

    def toDict(self):
        return {
            "command": self.command,
            "seed": self.seed,
            "manifest": self.manifest,
            "checkpoint": self.checkpoint,
            "out": self.out,
            "model": self.model.toDict(),
            "synth": self.synth.toDict(),
            "train": self.train.toDict(),
            "augment": self.augment.toDict(),
            "infer": dict(self.infer),
            "eval": dict(self.eval),
            "extra": dict(self.extra),
        }

    def writeResolved(self, out_dir=None):
        out_dir = out_dir or self.out
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, RESOLVED_CONFIG)
        writeJson(path, self.toDict())
        logger.debug(f"Wrote {path}")
        return path


# ---------------------------- Argument parsing ---------------------------- #


def parseSize(value):
    try:
        height, width = (int(v) for v in value.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {value!r}") from None
    return height, width


def parseRange(value):
    try:
        low, high = (int(v) for v in value.split("-"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected MIN-MAX, got {value!r}") from None
    return low, high


def parseChannels(value):
    try:
        return tuple(int(v) for v in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}") from None


def parseBidi(value):
    flags = {"1": True, "true": True, "bi": True, "0": False, "false": False, "uni": False}
    parts = value.lower().split(",")
    if len(parts) != 2 or any(p not in flags for p in parts):
        raise argparse.ArgumentTypeError(f"expected two flags like 1,1 or bi,uni, got {value!r}")
    return tuple(flags[p] for p in parts)


def buildParser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: config.yaml at the repository root)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--seed", type=int, help="Run seed")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--input-size", type=parseSize, help="Model input HxW (default 192x128)")
    model.add_argument("--encoder-channels", type=parseChannels, help="Filters per encoder stage (default 16,32,64)")
    model.add_argument("--counter-order", choices=[o.value for o in CounterOrder])
    model.add_argument("--counter-bidi", type=parseBidi, help="Bidirectional flags of the first and second GRU (default 1,1)")
    model.add_argument("--monotone-placement", choices=[p.value for p in MonotonePlacement])
    model.add_argument("--monotone-act", choices=[a.value for a in MONOTONE_PREACTIVATIONS])

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--manifest", required=True, help="Training dataset manifest")
    training.add_argument("--val-manifest", help="Validation manifest (default: a held-out split of --manifest)")
    training.add_argument("--epochs", type=int)
    training.add_argument("--batch-size", type=int, help="Default 4")
    training.add_argument("--lr", type=float, help="Initial learning rate (default 1e-4)")
    training.add_argument("--patience", type=int, help="Epochs without FM improvement before halving lr (default 20)")
    training.add_argument("--no-augment", action="store_true")

    inference = argparse.ArgumentParser(add_help=False)
    inference.add_argument("--fg-threshold", type=float, help="Text pixels are darker than this (default 0.5)")
    inference.add_argument("--fg-method", choices=[m.value for m in ForegroundMethod])
    inference.add_argument("--postprocess", choices=[p.value for p in Postprocess])
    inference.add_argument("--match-threshold", type=float, help="One-to-one match threshold (default 0.9)")

    parser = argparse.ArgumentParser(prog="linecounter", description="Line counting text-line segmentation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--count", type=int, help="Number of pages (default 250)")
    p.add_argument("--page-size", type=parseSize, help="Page HxW (default 192x128)")
    p.add_argument("--lines", type=parseRange, help="Line count range MIN-MAX (default 3-8)")

    p = sub.add_parser("train", parents=[common, model, training, inference], help="Train a model")
    p.add_argument("--resume", help="Continue from this checkpoint and the state file beside it")

    p = sub.add_parser("infer", parents=[common, inference], help="Segment page images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("images", nargs="+", help="8-bit PGM pages")
    p.add_argument("--input-size", type=parseSize, help="Run the model at this HxW instead of the trained size")
    p.add_argument("--png", action="store_true", default=None, help="Write the visualization as PNG")
    p.add_argument("--no-visualize", action="store_true")

    p = sub.add_parser("eval", parents=[common, inference], help="Score predictions against ground truth")
    p.add_argument("--manifest", required=True, help="Ground-truth manifest")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--pred-dir", help="Directory holding <image stem>_lines.pgm predictions")
    source.add_argument("--checkpoint", help="Predict with this checkpoint instead")

    p = sub.add_parser("ablate", parents=[common, model, training, inference], help="Train and score a grid of configurations")
    p.add_argument("--grid", choices=["topology", "monotone", "all", "single"], default="all")
    p.add_argument("--test-manifest", help="Pages to score each configuration on (default: --manifest)")
    return parser


def _pick(args, name, default):
    value = getattr(args, name, None)
    return default if value is None else value


def _modelOverrides(model, args):
    overrides = {
        "input_size": getattr(args, "input_size", None),
        "encoder_channels": getattr(args, "encoder_channels", None),
        "counter_order": getattr(args, "counter_order", None),
        "counter_bidirectional": getattr(args, "counter_bidi", None),
        "monotone_placement": getattr(args, "monotone_placement", None),
        "monotone_preactivation": getattr(args, "monotone_act", None),
    }
    return replace(model, **{k: v for k, v in overrides.items() if v is not None})


# ---------------------------- Commands ---------------------------- #


def pageSeeds(seed, count):
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def cmdSynth(spec, count, out_dir, threads=1):
    """
    Generate `count` synthetic pages and a manifest.

    Returns:
        str: Path of manifest.json.
    """
    spec.validate()
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    os.makedirs(out_dir, exist_ok=True)

    def makePage(args):
        index, seed = args
        image, linemap = synthPage(spec, seed)
        image_name, linemap_name = f"page_{index:05d}.pgm", f"page_{index:05d}_gt.pgm"
        writeImage(os.path.join(out_dir, image_name), image)
        writeLineMap(os.path.join(out_dir, linemap_name), linemap)
        return {"image_path": image_name, "linemap_path": linemap_name}

    started = time.time()
    jobs = list(enumerate(pageSeeds(spec.seed, count)))
    with ThreadPoolExecutor(max_workers=threads) as pool:
        entries = list(pool.map(makePage, jobs))

    manifest_path = os.path.join(out_dir, "manifest.json")
    writeManifest(manifest_path, entries)
    logger.info(f"Wrote {count} pages and {manifest_path} in {time.time() - started:.1f} s")
    return manifest_path


def cmdTrain(run, val_manifest=None, resume=None):
    """
    Train per the run config; returns the finished Trainer.
    """
    pairs = loadPairs(run.manifest)
    if not pairs:
        raise ManifestError(f"{run.manifest}: no training pages")
    if val_manifest:
        train_pairs, val_pairs = pairs, loadPairs(val_manifest)
    else:
        train_pairs, val_pairs = splitPairs(pairs, run.train.val_fraction, run.seed)

    if resume:
        trainer = Trainer.resume(resume, train_pairs, val_pairs, run.train, run.out, run.augment)
        run.model = trainer.model.config
        logger.info(f"Resuming from {resume} after epoch {trainer.train_state['epoch']}")
    else:
        model = build(run.model.validate(), seed=run.seed)
        trainer = Trainer(model, train_pairs, val_pairs, run.train, run.out, run.augment)
    run.extra["parameter_count"] = trainer.model.parameterCount()
    run.writeResolved()

    previous = signal.signal(signal.SIGINT, lambda sig, frame: signalHandler(sig, frame, trainer))
    try:
        trainer.train()
    finally:
        signal.signal(signal.SIGINT, previous)
    return trainer


def cmdInfer(checkpoint, image_paths, out_dir, infer, input_size=None):
    """
    Write one 16-bit line-map PGM (plus an optional color visualization) per input page.

    Returns:
        list[str]: Written line-map paths, in input order.
    """
    model = loadModel(checkpoint, input_size)
    os.makedirs(out_dir, exist_ok=True)
    outputs = []
    started = time.time()
    for image_path in image_paths:
        image = readImage(image_path)
        linemap = predictLineMap(model, image, infer["fg_threshold"], infer["fg_method"], infer["postprocess"])
        stem = Path(image_path).stem
        out_path = os.path.join(out_dir, f"{stem}_lines.pgm")
        writeLineMap(out_path, linemap)
        outputs.append(out_path)
        if infer.get("visualize", True):
            extension = "png" if infer.get("png") else "ppm"
            writeVisualization(os.path.join(out_dir, f"{stem}_lines.{extension}"), linemap, png=infer.get("png", False))
        logger.debug(f"{image_path}: {int(linemap.max(initial=0))} lines -> {out_path}")
    elapsed = time.time() - started
    logger.info(f"Segmented {len(outputs)} pages ({getThroughput(elapsed, len(outputs)):.2f} pages/s)")
    return outputs


def cmdEval(manifest, out_dir, threshold=DEFAULT_THRESHOLD, pred_dir=None, checkpoint=None, infer=None):
    """
    Score predicted line maps against a ground-truth manifest and write report.json / report.txt.
    """
    entries = readManifest(manifest)
    names = [Path(e["image_path"]).stem for e in entries]
    started = time.time()
    if checkpoint:
        model = loadModel(checkpoint)
        infer = infer or {}
        detections = [
            predictLineMap(model, readImage(e["image_path"]), infer.get("fg_threshold", 0.5),
                           infer.get("fg_method", "threshold"), infer.get("postprocess", "none"))
            for e in entries
        ]
        seconds = time.time() - started
    else:
        detections = []
        for name in names:
            path = os.path.join(pred_dir, f"{name}_lines.pgm")
            if not os.path.exists(path):
                raise ManifestError(f"{manifest}: no prediction {path} for page {name}")
            detections.append(readLineMap(path, renumber=False))
        seconds = None
    ground_truth = [readLineMap(e["linemap_path"]) for e in entries]

    report = evaluateCorpus(list(zip(ground_truth, detections)), threshold, source=manifest, names=names,
                            seconds=seconds)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        f.write(report.toJson() + "\n")
    with open(os.path.join(out_dir, "report.txt"), "w") as f:
        f.write(report.toTable() + "\n")
    logger.info(f"DR {report.dr:.4f}  RA {report.ra:.4f}  FM {report.fm:.4f} over {len(entries)} pages")
    return report


def loadModel(checkpoint, input_size=None):
    model, _, _ = loadCheckpoint(checkpoint)
    if input_size:
        model.config = replace(model.config, input_size=tuple(input_size)).validate()
    return model


# ---------------------------- Ablation ---------------------------- #


def ablationGrid(name, base):
    """
    Model configurations of an ablation grid, as (row name, ModelConfig).

    topology: counter order x horizontal GRU bi/uni x vertical GRU bi/uni, without
    monotone enforcement (8 rows). monotone: the no-cumsum baseline plus every
    non-negative pre-activation placed before and after the decoder (9 rows).
    """
    rows = []
    if name == "single":
        return [("single", base)]
    if name in ("topology", "all"):
        for order in CounterOrder:
            for h_bi in (True, False):
                for v_bi in (True, False):
                    bidi = (h_bi, v_bi) if order == CounterOrder.HORIZONTAL_FIRST else (v_bi, h_bi)
                    label = f"{'h' if order == CounterOrder.HORIZONTAL_FIRST else 'v'}first_h{'bi' if h_bi else 'uni'}_v{'bi' if v_bi else 'uni'}"
                    rows.append((label, replace(base, counter_order=order, counter_bidirectional=bidi,
                                                monotone_placement=MonotonePlacement.NONE)))
    if name in ("monotone", "all"):
        rows.append(("baseline", replace(base, monotone_placement=MonotonePlacement.NONE)))
        for placement in (MonotonePlacement.BEFORE_DECODER, MonotonePlacement.AFTER_DECODER):
            for act in MONOTONE_PREACTIVATIONS:
                label = f"{placement.value.split('_')[0]}_{act.value}"
                rows.append((label, replace(base, monotone_placement=placement, monotone_preactivation=act)))
    return rows


def runAblationConfig(job):
    """
    Train one grid row and score its best checkpoint. Never raises: a failure is
    recorded in the row's "error" field.
    """
    name, model_config, base_run, yaml_config, test_manifest, val_manifest = job
    setupLogger(yaml_config, f"ablate_{name}")
    order = CounterOrder(model_config["counter_order"])
    first, second = model_config["counter_bidirectional"]
    h_bi, v_bi = (first, second) if order == CounterOrder.HORIZONTAL_FIRST else (second, first)
    row = {
        "name": name,
        "counter_order": order.value,
        "h_bidirectional": h_bi,
        "v_bidirectional": v_bi,
        "placement": model_config["monotone_placement"],
        "preactivation": model_config["monotone_preactivation"],
        "dr": "", "ra": "", "fm": "", "error": "",
    }
    try:
        run_config = replace(base_run, model=ModelConfig.fromDict(model_config), out=os.path.join(base_run.out, name),
                             extra={})
        trainer = cmdTrain(run_config, val_manifest=val_manifest)
        report = cmdEval(test_manifest, run_config.out, run_config.eval["match_threshold"],
                         checkpoint=os.path.join(run_config.out, BEST_CHECKPOINT), infer=run_config.infer)
        row.update(dr=report.dr, ra=report.ra, fm=report.fm)
        if trainer.trainer_state == TrainerState.INTERRUPTED:
            row["error"] = "interrupted"
    except Exception as e:
        logger.exception(f"Ablation row {name} failed")
        row["error"] = f"{type(e).__name__}: {' '.join(str(e).split())}"
    return row


def cmdAblate(run, grid, yaml_config, test_manifest=None, val_manifest=None, threads=1):
    """
    Train every configuration of the grid with the same seed and epoch count.

    Returns:
        list[dict]: One row per configuration (ablation.csv / ablation.txt in run.out).
    """
    rows = ablationGrid(grid, run.model)
    test_manifest = test_manifest or run.manifest
    jobs = [(name, config.toDict(), run, yaml_config, test_manifest, val_manifest) for name, config in rows]
    logger.info(f"Ablation grid '{grid}': {len(jobs)} configurations, {threads} worker(s)")

    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(runAblationConfig, jobs))
    else:
        results = []
        for job in jobs:
            results.append(runAblationConfig(job))
            setupLogger(yaml_config, "ablate", mode="a")

    os.makedirs(run.out, exist_ok=True)
    csv_path = os.path.join(run.out, "ablation.csv")
    if os.path.exists(csv_path):
        os.remove(csv_path)
    for row in results:
        writeCSV(csv_path, row, ABLATION_FIELDS)
    with open(os.path.join(run.out, "ablation.txt"), "w") as f:
        f.write(formatAblationTable(results) + "\n")
    failed = [r["name"] for r in results if r["error"]]
    if failed:
        logger.warning(f"{len(failed)} configuration(s) failed: {', '.join(failed)}")
    return results


def formatAblationTable(rows):
    header = f"{'configuration':<24} {'order':<17} {'H':<3} {'V':<3} {'placement':<15} {'act':<13} {'DR':>7} {'RA':>7} {'FM':>7}"
    lines = [header, "-" * len(header)]
    for r in rows:
        scores = " ".join(f"{r[k]:>7.4f}" if r[k] != "" else f"{'-':>7}" for k in ("dr", "ra", "fm"))
        h = "↔" if r["h_bidirectional"] else "→"
        v = "↕" if r["v_bidirectional"] else "↓"
        line = f"{r['name']:<24} {r['counter_order']:<17} {h:<3} {v:<3} {r['placement']:<15} {r['preactivation']:<13} {scores}"
        if r["error"]:
            line += f"  ({r['error']})"
        lines.append(line)
    return "\n".join(lines)


# ---------------------------- Entry point ---------------------------- #


def dispatch(argv=None):
    args = buildParser().parse_args(argv)
    yaml_config = loadConfig(args.config)
    setupLogger(yaml_config, args.command)
    config = RunConfig.fromArgs(args, yaml_config)
    threads = threadCount()

    if args.command == "synth":
        count = _pick(args, "count", yaml_config.get("synth", {}).get("count", 250))
        config.extra["count"] = count
        config.writeResolved()
        cmdSynth(config.synth, count, config.out, threads)
    elif args.command == "train":
        trainer = cmdTrain(config, val_manifest=args.val_manifest, resume=args.resume)
        if trainer.trainer_state == TrainerState.INTERRUPTED:
            return EXIT_INTERRUPTED
    elif args.command == "infer":
        config.extra["images"] = list(args.images)
        if args.input_size:
            config.extra["input_size"] = list(args.input_size)
        config.writeResolved()
        cmdInfer(args.checkpoint, args.images, config.out, config.infer, args.input_size)
    elif args.command == "eval":
        config.extra["pred_dir"] = args.pred_dir
        config.writeResolved()
        cmdEval(args.manifest, config.out, config.eval["match_threshold"], args.pred_dir, args.checkpoint, config.infer)
    elif args.command == "ablate":
        config.extra.update(grid=args.grid, test_manifest=args.test_manifest, val_manifest=args.val_manifest)
        config.writeResolved()
        cmdAblate(config, args.grid, yaml_config, args.test_manifest, args.val_manifest, threads)
    return EXIT_OK


def main(argv=None):
    """
    Run one command and map failures to a single stderr line.

    Returns:
        int: 0 when every output was written, 2 for a known error, 1 otherwise.
    """
    try:
        return dispatch(argv)
    except (LineCounterError, OSError) as e:
        print(f"error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_ERROR
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"error: {type(e).__name__}: {' '.join(str(e).split())}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
