"""Command-line entry point: ``progseg {synth,segment,eval,render,sweep}``.

Settings come from an optional YAML config file and are overridden by
flags. Every subcommand writes ``manifest.json`` into its output directory
recording the resolved settings, seed included.

Exit codes: 0 success, 2 usage or spec error, 3 I/O error, 4 degenerate
correlation (outputs of the last good state are still written).
"""

from __future__ import annotations

import argparse
import colorsys
import concurrent.futures
import csv
import dataclasses
import json
import logging
import os
import sys
import time

import numpy as np
import yaml

from progseg import __version__, metrics, progressive, synth
from progseg.denoise import EdConfig, MAPPING_ALIASES
from progseg.errors import EmptyFile, LengthMismatch, MalformedRecord, OutOfBounds, ProgsegError, SpecInvalid
from progseg.events import NOISE, load_events, load_labels, save_events, save_labels
from progseg.motion import MeConfig, choose_window, cluster_images, initialize
from progseg.progressive import LoopConfig
from progseg.warp import write_pgm

log = logging.getLogger("progseg")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_DEGENERATE = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "format": "csv",
    "iterations": 7,
    "clusters": 3,
    "mapping": "tanh",
    "window": 5,
    "noise_threshold": 0.5,
    "jobs": 1,
    "filter_radius": 1,
    "filter_dt": 0.01,
    "batch_size": 20000,
}
ME_KEYS = {f.name for f in dataclasses.fields(MeConfig)}
ROC_THRESHOLDS = np.round(np.linspace(0.0, 1.0, 21), 10)
GRAY = (128, 128, 128)


class UsageError(Exception):
    pass


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a mapping")
    data = {k.replace("-", "_"): v for k, v in data.items()}
    unknown = set(data) - set(DEFAULTS) - ME_KEYS - {"me"}
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    return data


def resolve(args):
    """Builtin defaults < config file < flags."""
    config = _load_config(args.config)
    settings = dict(DEFAULTS)
    me = {k: v for k, v in config.items() if k in ME_KEYS}
    me.update(config.get("me") or {})
    settings.update({k: v for k, v in config.items() if k in DEFAULTS})
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if settings["mapping"] not in MAPPING_ALIASES and settings["mapping"] not in MAPPING_ALIASES.values():
        raise UsageError(f"unknown mapping {settings['mapping']!r}")
    if settings["window"] != "auto":
        me["window"] = settings["window"]
    try:
        settings["me"] = dataclasses.asdict(MeConfig(**me))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad motion settings: {exc}") from None
    return settings


def window_arg(text):
    if text == "auto":
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"window must be an odd integer or 'auto', got {text!r}") from None


def _configs(settings, packet=None):
    """Algorithm configs; ``window: auto`` is resolved on ``packet``."""
    me = MeConfig(**settings["me"])
    if settings["window"] == "auto" and packet is not None:
        me = dataclasses.replace(me, window=choose_window(packet, me, int(settings["seed"])))
    ed = EdConfig(mapping=settings["mapping"])
    loop = LoopConfig(iterations=int(settings["iterations"]), noise_threshold=float(settings["noise_threshold"]))
    return me, ed, loop


def _out_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def write_manifest(out, command, args, settings, **extra):
    manifest = {
        "command": command,
        "version": __version__,
        "config": args.config,
        "out": out,
        "seed": settings.get("seed"),
        "settings": settings,
        **extra,
    }
    with open(os.path.join(out, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return manifest


def _ext(fmt):
    return ".csv" if fmt == "csv" else ".bin"


# ---------------------------------------------------------------- images


def cluster_colors(n):
    """Evenly spaced saturated hues, as 0-255 RGB triples."""
    return [tuple(int(round(255 * c)) for c in colorsys.hsv_to_rgb(k / max(n, 1), 0.85, 1.0)) for k in range(n)]


def composite_image(packet, labels, n_clusters):
    """RGB image: majority cluster hue per pixel, gray where only noise fired, black where nothing did."""
    labels = np.asarray(labels)
    h, w = packet.height, packet.width
    counts = np.zeros((n_clusters + 1, h, w), dtype=np.int64)
    slot = np.where(labels == NOISE, 0, labels)
    np.add.at(counts, (slot, packet.y, packet.x), 1)
    img = np.zeros((h, w, 3), dtype=np.uint8)
    img[counts[0] > 0] = GRAY
    real = counts[1:].sum(axis=0) > 0
    winner = np.argmax(counts[1:], axis=0)
    palette = np.array(cluster_colors(n_clusters), dtype=np.uint8)
    img[real] = palette[winner[real]]
    return img


def write_ppm(img, path):
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img, dtype=np.uint8).tobytes())


# ------------------------------------------------------------- commands


def cmd_synth(args):
    settings = resolve(args)
    out = _out_dir(args.out)
    fmt = settings["format"]
    seed = int(settings["seed"])
    sequences = []
    if args.suite:
        for name, labeled in synth.standard_suite(seed):
            sequences.append((name, labeled, float(name.split("_n")[1])))
        specs = [s.to_dict() for s in synth.standard_scenes(seed)]
    else:
        if args.spec is None:
            raise UsageError("synth needs a scene spec file or --suite")
        spec = synth.load_spec(args.spec)
        if args.seed is not None:
            spec = dataclasses.replace(spec, seed=seed)
        settings["seed"] = spec.seed
        name = os.path.splitext(os.path.basename(args.spec))[0]
        sequences.append((name, synth.generate_scene(spec), spec.noise))
        specs = [spec.to_dict()]
    entries = []
    for name, labeled, noise in sequences:
        events = os.path.join(out, name + _ext(fmt))
        sidecar = os.path.join(out, name + ".labels")
        save_events(labeled.packet, events, fmt)
        save_labels(labeled.labels, sidecar)
        entries.append({"name": name, "events": os.path.basename(events), "labels": os.path.basename(sidecar),
                        "noise": noise, "n_events": len(labeled)})
    write_manifest(out, "synth", args, settings, scenes=specs, sequences=entries)
    print(f"wrote {len(entries)} sequence(s) to {out}")
    return EXIT_OK


def _load_packet(args, path):
    return load_events(path, getattr(args, "input_format", None), getattr(args, "width", None),
                       getattr(args, "height", None))


def cmd_segment(args):
    settings = resolve(args)
    out = _out_dir(args.out)
    packet = _load_packet(args, args.events)
    me_cfg, ed_cfg, loop_cfg = _configs(settings, packet)
    k = int(settings["clusters"])
    result = progressive.run_batched(packet, k, int(settings["batch_size"]), me_cfg, ed_cfg, loop_cfg,
                                    seed=int(settings["seed"]))
    save_labels(result.labels, os.path.join(out, "labels.txt"))
    progressive.save_confidences(result.state.C, os.path.join(out, "confidence.csv"))
    progressive.save_trace(result.trace, os.path.join(out, "trace.csv"))
    for j, img in enumerate(cluster_images(packet, result.state, me_cfg), start=1):
        write_pgm(img, os.path.join(out, f"wiwe_{j}.pgm"))
    write_ppm(composite_image(packet, result.labels, k), os.path.join(out, "segmentation.ppm"))
    thetas = [[th.vx, th.vy] for th in result.thetas]
    write_manifest(out, "segment", args, settings, inputs=[args.events], thetas=thetas, window=me_cfg.window,
                   degenerate=result.degenerate, iterations_run=len(result.trace) - 1)
    for j, (vx, vy) in enumerate(thetas, start=1):
        print(f"cluster {j}: v = ({vx:.3f}, {vy:.3f}) px/s, {int(np.sum(result.labels == j))} events")
    print(f"noise: {int(np.sum(result.labels == NOISE))} events")
    if result.degenerate:
        log.warning("degenerate event correlation; outputs hold the last good state")
        return EXIT_DEGENERATE
    return EXIT_OK


def load_confidences(path, n_events):
    """Per-event max confidence from a long-format ``event,cluster,value`` CSV."""
    scores = np.zeros(n_events)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["event", "cluster", "value"]:
            raise ProgsegError(f"{path}: expected header event,cluster,value")
        for row in reader:
            i, value = int(row[0]), float(row[2])
            if not 0 <= i < n_events:
                raise LengthMismatch(f"{path}: event index {i} out of range")
            scores[i] = max(scores[i], value)
    return scores


def evaluate(pred, gt, name="sequence"):
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted labels for {len(gt)} ground-truth labels")
    report = metrics.iou_report(pred, gt)
    rows = [[name, obj, f"{100 * v:.2f}", f"{100 * report.miou:.2f}"] for obj, v in report.per_object.items()]
    return report, rows


def cmd_eval(args):
    settings = resolve(args)
    pred = load_labels(args.pred)
    gt = load_labels(args.gt)
    out = _out_dir(args.out)
    name = os.path.splitext(os.path.basename(args.gt))[0]
    report, rows = evaluate(pred, gt, name)
    with open(os.path.join(out, "iou.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sequence", "object", "IoU", "MIoU"])
        w.writerows(rows)
    noise_mask = gt == NOISE
    if args.confidence:
        scores = load_confidences(args.confidence, len(gt))
    else:
        scores = (pred != NOISE).astype(np.float64)
    roc = metrics.denoise_roc(scores, noise_mask, ROC_THRESHOLDS)
    with open(os.path.join(out, "roc.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fpr", "tpr"])
        for p in roc:
            w.writerow([f"{p.threshold:.2f}", "" if p.fpr is None else f"{p.fpr:.6f}",
                        "" if p.tpr is None else f"{p.tpr:.6f}"])
    lines = [f"sequence: {name}", f"events: {len(gt)} ({int(noise_mask.sum())} ground-truth noise)"]
    for obj, v in report.per_object.items():
        lines.append(f"object {obj}: IoU {100 * v:.2f} (cluster {report.matching[obj]})")
    lines.append(f"MIoU {100 * report.miou:.2f}")
    if noise_mask.any() and (~noise_mask).any():
        lines.append(f"denoising AUC {metrics.roc_auc(scores, noise_mask):.4f}")
    with open(os.path.join(out, "summary.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    write_manifest(out, "eval", args, settings, inputs=[args.pred, args.gt, args.confidence])
    print("\n".join(lines))
    return EXIT_OK


def cmd_render(args):
    settings = resolve(args)
    out = _out_dir(args.out)
    packet = _load_packet(args, args.events)
    labels = load_labels(args.labels) if args.labels else np.ones(len(packet), dtype=np.int64)
    if len(labels) != len(packet):
        raise LengthMismatch(f"{len(labels)} labels for {len(packet)} events")
    k = max(int(labels.max()) if len(labels) else 1, 1)
    write_ppm(composite_image(packet, labels, k), os.path.join(out, "composite.ppm"))
    if args.theta:
        from progseg.warp import WarpParams, accumulate_weighted

        for j, spec in enumerate(args.theta, start=1):
            vx, vy = (float(v) for v in spec.split(","))
            weights = (labels == j).astype(np.float64) if args.labels else np.ones(len(packet))
            write_pgm(accumulate_weighted(packet, weights, WarpParams(vx, vy), packet.t0),
                      os.path.join(out, f"wiwe_{j}.pgm"))
    write_manifest(out, "render", args, settings, inputs=[args.events, args.labels], thetas=args.theta)
    print(f"wrote images to {out}")
    return EXIT_OK


METHODS = ("progressive", "me_only", "filter_me")


def _sweep_cell(job):
    """One (sequence, method) run; returns (name, method, MIoU or None, error)."""
    name, events_path, labels_path, method, settings = job
    try:
        packet = load_events(events_path)
        gt = load_labels(labels_path)
        me_cfg, ed_cfg, loop_cfg = _configs(settings, packet)
        k, seed = int(settings["clusters"]), int(settings["seed"])
        if method == "filter_me":
            pred, _ = progressive.run_filtered(packet, k, settings["filter_radius"], settings["filter_dt"],
                                               me_cfg, seed)
        else:
            if method == "me_only":
                loop_cfg = dataclasses.replace(loop_cfg, iterations=0)
            state = initialize(packet, k, seed, me_cfg)
            pred = progressive.run(packet, k, me_cfg, ed_cfg, loop_cfg, seed=seed, state=state).labels
        report, rows = evaluate(pred, gt, name)
        return name, method, report.miou * 100.0, rows, None
    except Exception as exc:  # recorded per cell
        return name, method, None, [], f"{type(exc).__name__}: {exc}"


def format_table(levels, table):
    header = ["method"] + [f"n={n:.2f}" for n in levels]
    body = [[m] + ["" if table[m].get(n) is None else f"{table[m][n]:.2f}" for n in levels] for m in METHODS]
    widths = [max(len(r[c]) for r in [header] + body) for c in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r))
    return "\n".join([fmt(header)] + [fmt(r) for r in body]) + "\n"


def cmd_sweep(args):
    settings = resolve(args)
    suite_manifest = os.path.join(args.suite, "manifest.json")
    with open(suite_manifest) as fh:
        sequences = json.load(fh)["sequences"]
    out = _out_dir(args.out)
    jobs = [
        (s["name"], os.path.join(args.suite, s["events"]), os.path.join(args.suite, s["labels"]), m, settings)
        for s in sequences
        for m in METHODS
    ]
    t0 = time.time()
    n_jobs = max(1, int(settings["jobs"]))
    if n_jobs == 1:
        results = [_sweep_cell(j) for j in jobs]
    else:
        with concurrent.futures.ProcessPoolExecutor(n_jobs) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    noise_of = {s["name"]: float(s["noise"]) for s in sequences}
    levels = sorted(set(noise_of.values()))
    cells = {m: {n: [] for n in levels} for m in METHODS}
    failures = []
    per_sequence = []
    for name, method, miou, rows, error in results:
        if error is not None:
            failures.append({"sequence": name, "method": method, "error": error})
            log.warning("%s/%s failed: %s", name, method, error)
            continue
        cells[method][noise_of[name]].append(miou)
        per_sequence.extend([method] + r for r in rows)
    table = {m: {n: (float(np.mean(v)) if v else None) for n, v in cells[m].items()} for m in METHODS}
    with open(os.path.join(out, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method"] + [f"{n:.2f}" for n in levels])
        for m in METHODS:
            w.writerow([m] + ["" if table[m][n] is None else f"{table[m][n]:.2f}" for n in levels])
    with open(os.path.join(out, "sweep.txt"), "w") as fh:
        fh.write(format_table(levels, table))
    with open(os.path.join(out, "iou.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "sequence", "object", "IoU", "MIoU"])
        w.writerows(per_sequence)
    write_manifest(out, "sweep", args, settings, inputs=[args.suite], failures=failures,
                   seconds=round(time.time() - t0, 1))
    sys.stdout.write(format_table(levels, table))
    if len(failures) == len(jobs):
        return EXIT_IO
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p, io_format=True):
    p.add_argument("--config", help="YAML file of settings (flags win)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--jobs", type=int)
    if io_format:
        p.add_argument("--format", choices=("csv", "binary"))


def _algorithm(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--mapping", choices=sorted(MAPPING_ALIASES))
    p.add_argument("--window", type=window_arg, help="variance window (odd) or 'auto'")
    p.add_argument("--noise-threshold", dest="noise_threshold", type=float)


def _geometry(p):
    p.add_argument("--width", type=int, help="sensor width when the file does not declare it")
    p.add_argument("--height", type=int)
    p.add_argument("--input-format", dest="input_format", choices=("csv", "binary"),
                   help="input format (default: from the extension)")


def build_parser():
    parser = argparse.ArgumentParser(prog="progseg", description="Joint motion segmentation and denoising of event streams")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic sequences with ground truth")
    p.add_argument("spec", nargs="?", help="YAML scene spec")
    p.add_argument("--suite", action="store_true", help="the 4-scene x 5-noise standard suite")
    _common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("segment", help="segment an event file")
    p.add_argument("events")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="events per segmentation batch")
    _common(p)
    _algorithm(p)
    _geometry(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="score predicted labels against ground truth")
    p.add_argument("pred")
    p.add_argument("gt")
    p.add_argument("--confidence", help="confidence CSV written by segment, for the ROC")
    _common(p, io_format=False)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="draw labelled events and warped images")
    p.add_argument("events")
    p.add_argument("--labels")
    p.add_argument("--theta", action="append", metavar="VX,VY", help="velocity of cluster j (repeatable; write --theta=-5,2 for negatives)")
    _common(p, io_format=False)
    _geometry(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("sweep", help="noise-level x method MIoU table over a synthesized suite")
    p.add_argument("suite", help="directory written by 'synth --suite'")
    _common(p, io_format=False)
    _algorithm(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (OSError, MalformedRecord, OutOfBounds, EmptyFile) as exc:
        print(f"progseg: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, SpecInvalid, LengthMismatch, ValueError) as exc:
        print(f"progseg: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ProgsegError as exc:
        print(f"progseg: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
