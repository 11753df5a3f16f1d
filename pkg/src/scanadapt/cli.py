"""Command line front end.

Subcommands wire the library modules into reproducible batch pipelines:

  gen-scenes   synthesize a labeled two-domain benchmark
  pretrain     supervised source-only training, emits a checkpoint
  adapt        the full self-training adaptation loop
  filter       standalone pseudo-label filtering over target scans
  augment      standalone augmentation of paired scans
  mix          standalone pitch-region mixing of paired scans
  eval         per-class IoU table for a checkpoint or prediction dir
  report       digest telemetry into plot-ready report CSVs

Every command takes --config/--seed/--out/--jobs; the config file path
falls back to $SCANADAPT_CONFIG. Outputs are written atomically and an
exclusive lock file serializes commands per output directory. Exit
codes: 0 success, 2 configuration error, 3 data error.
"""

import argparse
import fcntl
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__, kernel_backend, model, scanio, telemetry
from .augment import run_pipeline, uniform_jitter
from .cloud import LabelSet
from .config import ConfigError, RunConfig
from .features import NUM_FEATURES
from .filtering import (
    ConfidenceSet,
    ThresholdState,
    batch_stats,
    ema_update,
    filter_labels,
    fixed_threshold_filter,
    reject_bottom_percentile,
)
from .metrics import iou
from .mixing import mix_pair, save_mixed_scan
from .rng import (
    STREAM_AUGMENT,
    STREAM_INIT,
    STREAM_MIX,
    STREAM_SCENE,
    STREAM_TRAIN,
    RandomStream,
)
from .scenes import CLASS_NAMES, default_source_spec, default_target_spec, generate_scene
from .train import (
    AUGMENT_PRIOR,
    AUGMENT_UNIFORM,
    FILTER_DYNAMIC,
    ConfidenceHistogram,
    _telemetry_row,
    adapt,
    evaluate,
    load_checkpoint,
    pretrain,
    save_checkpoint,
    teacher_confidences,
)

ENV_CONFIG = "SCANADAPT_CONFIG"
EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3

LOCK_NAME = ".scanadapt.lock"


class DataError(Exception):
    """Missing or malformed input data."""


# ---------------------------------------------------------------- helpers


def _scan_files(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    files = sorted(directory.glob("*.bin"))
    if not files:
        raise DataError(f"no .bin scans under {directory}")
    return files


def _load_pairs(directory, num_classes, class_map=None, need_labels=True):
    """Scans plus side-by-side .label files, sorted by name."""
    out = []
    for scan_path in _scan_files(directory):
        cloud = scanio.load_scan(scan_path)
        label_path = scan_path.with_suffix(".label")
        labels = None
        if label_path.exists():
            labels = scanio.load_labels(
                label_path, num_classes, class_map, expected_count=len(cloud)
            )
        elif need_labels:
            raise DataError(f"missing label file {label_path}")
        out.append((scan_path.stem, cloud, labels))
    return out


def _load_class_map(cfg):
    path = cfg.data["class_map"]
    return scanio.load_class_map(path) if path else None


def _need(value, what) -> str:
    if not value:
        raise DataError(f"{what} is required but not configured")
    return value


def _checkpoint_params(args, cfg):
    path = args.checkpoint or cfg.data["checkpoint"]
    _need(path, "a checkpoint (--checkpoint or data.checkpoint)")
    if not Path(path).exists():
        raise DataError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _map_jobs(jobs, fn, items):
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _fresh_state(cfg) -> ThresholdState:
    f = cfg.filter_cfg()
    return ThresholdState(
        cfg.num_classes,
        momentum_global=f.momentum_global,
        momentum_class=f.momentum_class,
        period=f.period,
        warmup_len=f.warmup_len,
    )


def _echo_config(config_path, cfg: RunConfig, out: Path) -> None:
    if config_path:
        scanio.atomic_write_bytes(out / "config.yaml", Path(config_path).read_bytes())
    effective = yaml.safe_dump(cfg.raw, sort_keys=True).encode()
    scanio.atomic_write_bytes(out / "effective_config.yaml", effective)


def _write_meta(out: Path, command: str, cfg: RunConfig) -> None:
    meta = {
        "command": command,
        "seed": cfg.seed,
        "version": __version__,
        "kernel_backend": kernel_backend,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    scanio.atomic_write_bytes(
        out / "run_meta.json", json.dumps(meta, indent=2).encode() + b"\n"
    )


# ------------------------------------------------------------- commands


def cmd_gen_scenes(args, cfg: RunConfig, out: Path) -> int:
    scenes = cfg.scenes
    stream = RandomStream(cfg.seed, STREAM_SCENE)
    plans = []
    for domain_id, domain, count, factory in (
        (0, "source", int(scenes["source_count"]), default_source_spec),
        (1, "target", int(scenes["target_count"]), default_target_spec),
    ):
        try:
            spec = factory(**scenes[domain])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"scenes.{domain}: {exc}")
        (out / domain).mkdir(parents=True, exist_ok=True)
        plans += [(domain_id, domain, spec, i) for i in range(count)]

    def build(plan):
        domain_id, domain, spec, i = plan
        cloud, labels = generate_scene(spec, stream, domain_id, i)
        scanio.save_scan(out / domain / f"{i:06d}.bin", cloud)
        scanio.save_labels(out / domain / f"{i:06d}.label", labels)

    _map_jobs(args.jobs, build, plans)
    print(f"wrote {len(plans)} scenes under {out}")
    return EXIT_OK


def cmd_pretrain(args, cfg: RunConfig, out: Path) -> int:
    class_map = _load_class_map(cfg)
    source = [
        (cloud, labels)
        for _, cloud, labels in _load_pairs(
            _need(cfg.data["source"], "data.source"), cfg.num_classes, class_map
        )
    ]
    train_cfg = cfg.train_cfg()
    init = model.init_params(
        NUM_FEATURES, train_cfg.hidden, cfg.num_classes,
        RandomStream(cfg.seed, STREAM_INIT).generator(),
    )
    params = pretrain(
        source, init, train_cfg.pretrain_epochs, train_cfg.learning_rate,
        RandomStream(cfg.seed, STREAM_TRAIN), cfg.feature_cfg(),
    )
    save_checkpoint(out / "checkpoint.ckpt", params, params, _fresh_state(cfg), 0)
    print(f"pretrained on {len(source)} scans -> {out / 'checkpoint.ckpt'}")
    return EXIT_OK


def cmd_adapt(args, cfg: RunConfig, out: Path) -> int:
    _, teacher, _, _ = _checkpoint_params(args, cfg)
    class_map = _load_class_map(cfg)
    source = [
        (cloud, labels)
        for _, cloud, labels in _load_pairs(
            _need(cfg.data["source"], "data.source"), cfg.num_classes, class_map
        )
    ]
    target = [
        cloud
        for _, cloud, _ in _load_pairs(
            _need(cfg.data["target"], "data.target"), cfg.num_classes,
            class_map, need_labels=False,
        )
    ]
    result = adapt(
        source,
        target,
        teacher,
        cfg.seed,
        train_cfg=cfg.train_cfg(),
        filter_cfg=cfg.filter_cfg(),
        augment_cfg=cfg.augment_cfg(),
        mix_cfg=cfg.mix_cfg(),
        feature_cfg=cfg.feature_cfg(),
        capture_first_iteration=cfg.dump_first_iteration,
    )
    train_cfg = cfg.train_cfg()
    save_checkpoint(
        out / "checkpoint.ckpt", result.student, result.teacher, result.state,
        train_cfg.iterations,
    )
    telemetry.write_training_log(
        out / telemetry.TRAINING_LOG, result.telemetry, cfg.num_classes
    )
    telemetry.write_filter_log(
        out / telemetry.FILTER_LOG, result.telemetry, cfg.num_classes
    )
    telemetry.write_histogram(out / telemetry.HISTOGRAM_FILE, result.histogram)
    if result.first_iteration is not None:
        dump = out / "first_iteration"
        dump.mkdir(exist_ok=True)
        scanio.save_labels(dump / "filtered.label", result.first_iteration["filtered"])
        for key in ("s2t", "t2s"):
            mixed = result.first_iteration[key]
            save_mixed_scan(
                mixed, dump / f"{key}.bin", dump / f"{key}.label", dump / f"{key}.prov"
            )
    print(
        f"adapted for {train_cfg.iterations} iterations -> {out / 'checkpoint.ckpt'}"
    )
    return EXIT_OK


def cmd_filter(args, cfg: RunConfig, out: Path) -> int:
    _, teacher, _, _ = _checkpoint_params(args, cfg)
    class_map = _load_class_map(cfg)
    target = _load_pairs(
        _need(cfg.data["target"], "data.target"), cfg.num_classes,
        class_map, need_labels=False,
    )
    filter_cfg = cfg.filter_cfg()
    feature_cfg = cfg.feature_cfg()
    batch = cfg.train_cfg().batch_size
    state = _fresh_state(cfg)
    label_dir = out / "labels"
    label_dir.mkdir(exist_ok=True)
    rows = []
    hist = ConfidenceHistogram(cfg.num_classes)

    for b in range(0, len(target), batch):
        chunk = target[b : b + batch]
        confs = []
        rejects = []
        for _, cloud, _ in chunk:
            conf = teacher_confidences(teacher, cloud, filter_cfg.alpha, feature_cfg)
            hist.add(conf)
            confs.append(conf)
            rejects.append(
                reject_bottom_percentile(conf, filter_cfg.bottom_fraction)
                if filter_cfg.mode == FILTER_DYNAMIC
                else None
            )
        if filter_cfg.mode == FILTER_DYNAMIC:
            pooled = ConfidenceSet.concat(confs)
            pooled_rej = np.concatenate(rejects)
            state = ema_update(state, batch_stats(pooled, pooled_rej))
            filtered = [filter_labels(c, state, r) for c, r in zip(confs, rejects)]
        else:
            pooled = ConfidenceSet.concat(confs)
            filtered = [
                fixed_threshold_filter(c, filter_cfg.fixed_threshold) for c in confs
            ]
        for (stem, _, _), labels in zip(chunk, filtered):
            scanio.save_labels(label_dir / f"{stem}.label", labels)
        pooled_labels = LabelSet(
            np.concatenate([f.labels for f in filtered]), cfg.num_classes
        )
        rows.append(
            _telemetry_row(b // batch, pooled, pooled_labels, state, filter_cfg)
        )

    telemetry.write_filter_log(out / telemetry.FILTER_LOG, rows, cfg.num_classes)
    telemetry.write_histogram(out / telemetry.HISTOGRAM_FILE, hist)
    save_checkpoint(out / "filter_state.ckpt", teacher, teacher, state, len(rows))
    print(f"filtered {len(target)} scans -> {label_dir}")
    return EXIT_OK


def _paired_scans(cfg, need_target_labels, args):
    """Source (cloud, labels) and target (cloud, labels) lists, paired by
    sorted order; target labels come from --target-labels / config."""
    class_map = _load_class_map(cfg)
    source = _load_pairs(
        _need(cfg.data["source"], "data.source"), cfg.num_classes, class_map
    )
    target = _load_pairs(
        _need(cfg.data["target"], "data.target"), cfg.num_classes,
        class_map, need_labels=False,
    )
    label_dir = getattr(args, "target_labels", None) or cfg.data["target_labels"]
    tgt = []
    for stem, cloud, own_labels in target:
        if label_dir:
            path = Path(label_dir) / f"{stem}.label"
            if not path.exists():
                raise DataError(f"missing target label file {path}")
            labels = scanio.load_labels(
                path, cfg.num_classes, None, expected_count=len(cloud)
            )
        elif own_labels is not None:
            labels = own_labels
        elif need_target_labels:
            raise DataError(
                "target labels required: give data.target_labels or --target-labels"
            )
        else:
            labels = LabelSet(
                np.full(len(cloud), -1, dtype=np.int64), cfg.num_classes
            )
        tgt.append((stem, cloud, labels))
    return source, tgt


def cmd_augment(args, cfg: RunConfig, out: Path) -> int:
    source, target = _paired_scans(cfg, need_target_labels=False, args=args)
    pairs = min(len(source), len(target))
    augment_cfg = cfg.augment_cfg()
    train_cfg = cfg.train_cfg()
    stream = RandomStream(cfg.seed, STREAM_AUGMENT)
    (out / "source").mkdir(exist_ok=True)
    (out / "target").mkdir(exist_ok=True)

    def process(i):
        src_stem, src_cloud, src_labels = source[i]
        tgt_stem, tgt_cloud, tgt_labels = target[i]
        g = stream.generator(i)
        if train_cfg.augment_mode == AUGMENT_PRIOR:
            src_cloud, src_labels, tgt_cloud, tgt_labels = run_pipeline(
                src_cloud, src_labels, tgt_cloud, tgt_labels,
                augment_cfg, g, train_cfg.stages,
            )
        elif train_cfg.augment_mode == AUGMENT_UNIFORM:
            src_cloud = uniform_jitter(
                src_cloud, train_cfg.uniform_sigma, augment_cfg.jitter_clamp, g
            )
            tgt_cloud = uniform_jitter(
                tgt_cloud, train_cfg.uniform_sigma, augment_cfg.jitter_clamp, g
            )
        scanio.save_scan(out / "source" / f"{src_stem}.bin", src_cloud)
        scanio.save_labels(out / "source" / f"{src_stem}.label", src_labels)
        scanio.save_scan(out / "target" / f"{tgt_stem}.bin", tgt_cloud)
        scanio.save_labels(out / "target" / f"{tgt_stem}.label", tgt_labels)

    _map_jobs(args.jobs, process, range(pairs))
    print(f"augmented {pairs} scan pairs under {out}")
    return EXIT_OK


def cmd_mix(args, cfg: RunConfig, out: Path) -> int:
    source, target = _paired_scans(cfg, need_target_labels=True, args=args)
    pairs = min(len(source), len(target))
    mix_cfg = cfg.mix_cfg()
    stream = RandomStream(cfg.seed, STREAM_MIX)
    for d in ("s2t", "t2s"):
        (out / d).mkdir(exist_ok=True)

    def process(i):
        _, src_cloud, src_labels = source[i]
        _, tgt_cloud, tgt_labels = target[i]
        g = stream.generator(i)
        regions = int(g.choice(np.asarray(mix_cfg.region_choices)))
        s2t, t2s = mix_pair(
            src_cloud, src_labels, tgt_cloud, tgt_labels, regions, mix_cfg.bounds
        )
        for key, mixed in (("s2t", s2t), ("t2s", t2s)):
            base = out / key / f"{i:06d}"
            save_mixed_scan(
                mixed,
                base.with_suffix(".bin"),
                base.with_suffix(".label"),
                base.with_suffix(".prov"),
            )

    _map_jobs(args.jobs, process, range(pairs))
    print(f"mixed {pairs} scan pairs under {out}")
    return EXIT_OK


def cmd_eval(args, cfg: RunConfig, out: Path) -> int:
    class_map = _load_class_map(cfg)
    truth_pairs = _load_pairs(
        _need(cfg.data["target"], "data.target"), cfg.num_classes, class_map
    )
    pred_dir = args.predictions or cfg.data["predictions"]
    if pred_dir:
        preds = []
        truths = []
        for stem, cloud, labels in truth_pairs:
            path = Path(pred_dir) / f"{stem}.label"
            if not path.exists():
                raise DataError(f"missing prediction file {path}")
            pred = scanio.load_labels(
                path, cfg.num_classes, None, expected_count=len(cloud)
            )
            preds.append(pred.labels)
            truths.append(labels.labels)
        report = iou(
            LabelSet(np.concatenate(preds), cfg.num_classes),
            LabelSet(np.concatenate(truths), cfg.num_classes),
        )
    else:
        _, teacher, _, _ = _checkpoint_params(args, cfg)
        report = evaluate(
            teacher,
            [(cloud, labels) for _, cloud, labels in truth_pairs],
            cfg.feature_cfg(),
        )

    names = (
        CLASS_NAMES
        if cfg.num_classes == len(CLASS_NAMES)
        else tuple(f"class_{c}" for c in range(cfg.num_classes))
    )
    width = max(len(n) for n in names)
    print(f"{'class'.ljust(width)}  IoU%")
    rows = []
    for c, name in enumerate(names):
        val = report.per_class[c]
        shown = "-" if np.isnan(val) else f"{val:.1f}"
        print(f"{name.ljust(width)}  {shown}")
        rows.append([c, name, val, int(report.support[c])])
    print(f"{'mIoU'.ljust(width)}  {report.miou:.1f}")
    telemetry.write_csv(
        out / "eval_results.csv", ["class", "name", "iou", "support"], rows
    )
    scanio.atomic_write_bytes(
        out / "miou.txt", f"{report.miou!r}\n".encode()
    )
    return EXIT_OK


def cmd_report(args, cfg: RunConfig, out: Path) -> int:
    tel_dir = args.telemetry or cfg.data["telemetry"]
    _need(tel_dir, "a telemetry directory (--telemetry or data.telemetry)")
    try:
        summary = telemetry.build_report(tel_dir, out)
    except FileNotFoundError as exc:
        raise DataError(str(exc))
    kept = summary["retained"]
    shown = ", ".join(
        "-" if np.isnan(v) else f"{v:.2f}" for v in kept
    )
    print(f"retained fractions by class: {shown}")
    print(f"report files written under {out}")
    return EXIT_OK


# ---------------------------------------------------------------- driver


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scanadapt",
        description="Deterministic LiDAR domain adaptation pipelines.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "--config",
        default=os.environ.get(ENV_CONFIG),
        help=f"YAML config file (default: ${ENV_CONFIG})",
    )
    common.add_argument("--seed", type=int, default=None, help="override config seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")

    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, extra=()):
        sp = sub.add_parser(name, parents=[common], help=help_text)
        for flag, kw in extra:
            sp.add_argument(flag, **kw)
        sp.set_defaults(func=func)
        return sp

    add("gen-scenes", cmd_gen_scenes, "synthesize a labeled two-domain benchmark")
    add("pretrain", cmd_pretrain, "supervised source-only training")
    add(
        "adapt",
        cmd_adapt,
        "run the self-training adaptation loop",
        extra=[("--checkpoint", {"default": None, "help": "pretrained checkpoint"})],
    )
    add(
        "filter",
        cmd_filter,
        "filter pseudo-labels over target scans",
        extra=[("--checkpoint", {"default": None, "help": "teacher checkpoint"})],
    )
    add(
        "augment",
        cmd_augment,
        "augment paired source/target scans",
        extra=[("--target-labels", {"default": None, "help": "target label dir"})],
    )
    add(
        "mix",
        cmd_mix,
        "mix paired source/target scans",
        extra=[("--target-labels", {"default": None, "help": "filtered target label dir"})],
    )
    add(
        "eval",
        cmd_eval,
        "score predictions or a checkpoint against truth labels",
        extra=[
            ("--checkpoint", {"default": None, "help": "model checkpoint"}),
            ("--predictions", {"default": None, "help": "predicted label dir"}),
        ],
    )
    add(
        "report",
        cmd_report,
        "digest telemetry into report CSVs",
        extra=[("--telemetry", {"default": None, "help": "telemetry directory"})],
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    lock_handle = None
    try:
        cfg = RunConfig.load(args.config, seed=args.seed, out=args.out)
        out_dir = cfg.out
        if not out_dir:
            raise ConfigError("no output directory (give --out or config key 'out')")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        lock_handle = open(out / LOCK_NAME, "w")
        try:
            fcntl.flock(lock_handle, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            raise DataError(f"output directory {out} is locked by another run")
        _echo_config(args.config, cfg, out)
        code = args.func(args, cfg, out)
        _write_meta(out, args.command, cfg)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, scanio.ScanFormatError, FileNotFoundError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    finally:
        if lock_handle is not None:
            lock_handle.close()


if __name__ == "__main__":
    sys.exit(main())
