"""Command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import attribution, pipeline, saliency, segeval, synth
from .config import ConfigError, PipelineConfig, default_ini, load_config
from .gaze import read_fixations_csv, write_fixations_csv
from .scene import DimensionError, FormatError

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_USAGE = 64

SUBCOMMANDS = ("fixations", "attribute", "seg-eval", "stats", "saliency", "synth", "report")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _threads(n: int) -> int:
    if n == 0:
        return os.cpu_count() or 1
    return max(1, n)


def _config(args) -> PipelineConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    else:
        from .config import parse_config

        cfg = parse_config(default_ini(), Path.cwd())
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fixations(args) -> int:
    cfg = _config(args)
    frames = Path(args.frames) if args.frames else cfg.path("frames")
    corpus = pipeline.load_corpus(cfg, pipeline._require(frames, "frames corpus"))
    fixes = pipeline.run_fixations(cfg, corpus.camera, Path(args.gaze) if args.gaze else None)
    out = _out_dir(args) / "fixations.csv"
    write_fixations_csv(fixes, out)
    print(f"{len(fixes)} fixations -> {out}")
    return EXIT_OK


def cmd_attribute(args) -> int:
    cfg = _config(args)
    if args.alpha is not None:
        cfg.alpha = args.alpha
    if args.dof is not None:
        cfg.dof = args.dof
    if args.include_background:
        cfg.include_background = True
    if args.chi_mode:
        cfg.chi_mode = args.chi_mode
    cfg.validate()
    crit = attribution.chi_square_critical(cfg.dof, cfg.alpha)
    print(f"critical value chi2(dof={cfg.dof}, alpha={cfg.alpha}) = {crit:.3f}")
    frames = Path(args.frames) if args.frames else (cfg.path("frames") if args.config else None)
    if frames is None:
        return EXIT_OK
    corpus = pipeline.load_corpus(cfg, pipeline._require(frames, "frames corpus"))
    if args.fixations:
        fixes = read_fixations_csv(args.fixations)
    else:
        fixes = pipeline.run_fixations(cfg, corpus.camera)
    profiles = pipeline.load_profiles(cfg, corpus.camera, [f.dog_id for f in fixes])
    records, summary = pipeline.run_attribution(cfg, fixes, corpus, profiles, _threads(args.threads))
    out = _out_dir(args)
    attribution.write_records(records, corpus.taxonomy, out / "attribution.jsonl")
    agg = attribution.aggregate_distribution(records)
    doc = {
        "summary": summary.to_json(),
        "critical_value": crit,
        "aggregate_distribution": None if agg is None else pipeline._named(agg, corpus.taxonomy),
    }
    if args.pred:
        pred = pipeline.load_corpus(cfg, pipeline._require(Path(args.pred), "predicted corpus"))
        cmp = attribution.compare_attributions(
            fixes, corpus, pred, profiles, cfg.chi_mode, cfg.include_background, cfg.dof, cfg.alpha, args.use_counts
        )
        doc["chi_square"] = cmp.summary()
    pipeline.dump_json(doc, out / "attribution_summary.json")
    print(json.dumps(summary.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_seg_eval(args) -> int:
    cfg = _config(args)
    gt = pipeline.load_corpus(cfg, pipeline._require(Path(args.gt), "ground-truth corpus"))
    pred = pipeline.load_corpus(cfg, pipeline._require(Path(args.pred), "predicted corpus"))
    report = segeval.evaluate(gt, pred, args.iou_threshold if args.iou_threshold is not None else cfg.iou_threshold)
    out = _out_dir(args)
    pipeline.dump_json(report.to_json(), out / "seg_eval.json")
    text = report.to_text()
    (out / "seg_eval.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_stats(args) -> int:
    cfg = _config(args)
    corpus = pipeline.load_corpus(cfg, pipeline._require(Path(args.frames), "frames corpus"))
    records = attribution.read_records(pipeline._require(Path(args.attribution), "attribution records"), corpus.taxonomy)
    weighted = cfg.weighted_lr if args.weighted_lr is None else args.weighted_lr
    doc, text = pipeline.stats_report(records, corpus, weighted)
    out = _out_dir(args)
    pipeline.dump_json(doc, out / "stats.json")
    (out / "stats.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_saliency(args) -> int:
    cfg = _config(args)
    tax = cfg.taxonomy
    records = attribution.read_records(pipeline._require(Path(args.attribution), "attribution records"), tax)
    if args.mode:
        cfg.saliency_mode = args.mode
    out = _out_dir(args)
    if args.maps:
        maps = {k: saliency.load_map(p) for k, p in saliency.map_files(pipeline._require(Path(args.maps), "map directory")).items()}
        source = "maps"
    else:
        images = pipeline._require(Path(args.images) if args.images else cfg.path("images"), "image directory")
        files = saliency.map_files(images, suffixes=(".png",))
        maps = {k: saliency.saliency_map(saliency.load_image(p), cfg.saliency_mode) for k, p in files.items()}
        source = cfg.saliency_mode
    scores, idx, frames = saliency.score_fixations(records, maps)
    if len(scores) == 0:
        raise pipeline.ValidationError("no attributed fixation falls on a frame with a saliency map")
    summary = {"source": source, "n_fixations": int(len(scores)), "n_maps": len(frames)}
    for fpr_mode in ("per-frame", "pooled"):
        roc = saliency.auc_judd(
            scores, [maps[f] for f in frames], idx, seed=cfg.seed, jitter=cfg.jitter,
            thresholds=cfg.auc_thresholds, fpr_mode=fpr_mode,
        )
        summary[f"auc_{fpr_mode}"] = roc.auc
        if fpr_mode == cfg.fpr_mode:
            roc.write_csv(out / "roc.csv")
            summary["auc"] = roc.auc
    pipeline.dump_json(summary, out / "saliency.json")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise FileNotFoundError(f"{args.config}: {exc.strerror}") from None
        cfg = synth.synth_config_from_ini(text)
    else:
        cfg = synth.SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.n_fixations is not None:
        cfg.n_fixations = args.n_fixations
    if args.render_every is not None:
        cfg.render_every = args.render_every
    result = synth.synth_corpus(cfg)
    out = _out_dir(args)
    paths = synth.write_synth(result, out)
    ini = default_ini().replace("[camera]\n", f"[camera]\nwidth_px = {cfg.width_px}\nheight_px = {cfg.height_px}\n", 1)
    ini = ini.replace("hfov_deg = 101.55", f"hfov_deg = {cfg.hfov_deg}").replace("vfov_deg = 73.60", f"vfov_deg = {cfg.vfov_deg}")
    ini = ini.replace("fps = 29.96", f"fps = {cfg.fps}").replace("seed = 0", f"seed = {cfg.seed}")
    (out / "pipeline.ini").write_text(ini)
    pipeline.log_event("synth", fixations=cfg.n_fixations, frames=len(result.corpus), nulls=result.manifest["null_fixations"])
    print(f"wrote {len(result.corpus)} frames, {len(result.gaze)} gaze streams to {out}")
    return EXIT_OK if paths else EXIT_IO


def cmd_report(args) -> int:
    cfg = _config(args)
    doc = pipeline.run_report(cfg, _out_dir(args), _threads(args.threads))
    print((Path(args.out_dir) / "report.txt").read_text(), end="")
    if doc.get("manifest_pass") is False:
        return EXIT_VALIDATION
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="egogaze", description="Gaze-to-object attribution and evaluation toolkit.")
    parser.add_argument("--log-level", default="INFO", help="logging level (default INFO)")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}", parser_class=_Parser)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="pipeline INI file")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = all cores")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("fixations", help="detect fixations in gaze CSVs")
    common(p)
    p.add_argument("--gaze", help="directory of <dog>.csv gaze streams")
    p.add_argument("--frames", help="segmentation corpus (for the camera header)")
    p.set_defaults(func=cmd_fixations)

    p = sub.add_parser("attribute", help="attribute fixations to object classes")
    common(p)
    p.add_argument("--frames")
    p.add_argument("--fixations", help="fixations CSV; detected from gaze when omitted")
    p.add_argument("--alpha", type=float)
    p.add_argument("--dof", type=int)
    p.add_argument("--include-background", action="store_true")
    p.add_argument("--chi-mode", choices=("pearson", "symmetric"))
    p.add_argument("--pred", help="predicted corpus; adds chi-square distances against --frames")
    p.add_argument("--use-counts", action="store_true", help="chi-square on raw pixel counts")
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("seg-eval", help="segmentation metrics of predictions against ground truth")
    common(p)
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--iou-threshold", type=float)
    p.set_defaults(func=cmd_seg_eval)

    p = sub.add_parser("stats", help="behavior table and statistical tests")
    common(p)
    p.add_argument("--attribution", required=True, help="attribution JSON-lines")
    p.add_argument("--frames", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--weighted-lr", dest="weighted_lr", action="store_true", default=None)
    g.add_argument("--unweighted-lr", dest="weighted_lr", action="store_false")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("saliency", help="AUC-Judd of saliency maps at fixations")
    common(p)
    p.add_argument("--attribution", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--maps", help="directory of grayscale maps named by frame index")
    g.add_argument("--generate", action="store_true", help="generate maps from --images")
    p.add_argument("--images")
    p.add_argument("--mode", choices=("color", "gray"))
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("synth", help="write a synthetic corpus with planted truth")
    common(p)
    p.add_argument("--out", dest="out_dir", help="output directory (alias of --out-dir)")
    p.add_argument("--n-fixations", type=int)
    p.add_argument("--render-every", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("report", help="run every stage and write report.json / report.txt")
    common(p)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    # an unknown subcommand is a usage error, not an argparse choice error
    first, skip = None, False
    for a in argv:
        if skip:
            skip = False
        elif a == "--log-level":
            skip = True
        elif not a.startswith("-"):
            first = a
            break
    if first is None or first not in SUBCOMMANDS:
        if any(a in ("-h", "--help") for a in argv) and first is None:
            parser.print_help()
            return EXIT_OK
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits on --help and on bad arguments; hand the status back instead
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=getattr(logging, str(args.log_level).upper(), logging.INFO),
        format="level=%(levelname)s %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        pipeline.log_event(args.command, logging.ERROR, error=json.dumps(str(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ConfigError, FormatError, DimensionError, synth.SynthError, pipeline.ValidationError, ValueError, KeyError) as exc:
        pipeline.log_event(args.command, logging.ERROR, error=json.dumps(str(exc)))
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
