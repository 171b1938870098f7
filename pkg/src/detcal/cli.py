"""Command-line interface: ``detcal {evaluate,calibrate,simulate,plot}``.

Exit codes: 0 success, 1 invalid configuration or input, 2 I/O failure,
3 computation failure (for example every bin neglected). Failures print one
line ``detcal: error[<category>]: <message>`` to stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .calibration import HistogramCalibrator, calibrate_detections
from .dataset_io import (
    DataFormatError,
    atomic_write_text,
    check_references,
    dump_json,
    filter_category,
    load_detections,
    load_ground_truth,
    save_detections,
)
from .experiment import ExperimentConfig, ExperimentReport, calibrate_then_nms, run_experiment
from .matching import MatchConfig, match
from .metrics import BinningScheme, NoRetainedSamplesError
from .plotting import format_d_ece, heatmap_svg, reliability_svg
from .postprocess import PipelineConfig, run_pipeline
from .reporting import to_csv, to_table
from .samples import FeatureSubset
from .synthetic import GeneratorConfig, write

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_COMPUTATION = 0, 1, 2, 3

_SUBSETS = [s.value for s in FeatureSubset]
_STAGES = {
    "type": "array",
    "items": {
        "type": "object",
        "minProperties": 1,
        "maxProperties": 1,
        "properties": {
            "top_k": {"type": "integer", "minimum": 1},
            "nms": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
            "threshold": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        },
        "additionalProperties": False,
    },
}
_BINS = {
    "type": "object",
    "propertyNames": {"enum": _SUBSETS},
    "additionalProperties": {
        "oneOf": [
            {"type": "integer", "minimum": 1},
            {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        ]
    },
}
_IOU = {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1}

RUN_SCHEMA = {
    "type": "object",
    "required": ["ground_truth", "detections"],
    "additionalProperties": False,
    "properties": {
        "ground_truth": {"type": "string"},
        "detections": {"type": "string"},
        "category": {"type": ["integer", "string"]},
        "output_dir": {"type": "string"},
        "variants": {"type": "object", "minProperties": 1, "additionalProperties": _STAGES},
        "iou_thresholds": {"type": "array", "items": _IOU, "minItems": 1},
        "subsets": {"type": "array", "items": {"enum": _SUBSETS}, "minItems": 1},
        "split_ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "repeats": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "eval_bins": _BINS,
        "calib_bins": _BINS,
        "min_bin_count": {"type": "integer", "minimum": 1},
        "weighting": {"enum": ["retained", "total"]},
        "split_by": {"enum": ["sample", "image"]},
        "exclude_crowd": {"type": "boolean"},
        "fallback": {"enum": ["identity", "global", "nearest"]},
        "figure_iou": _IOU,
        "grid_n": {"type": "integer", "minimum": 1},
        "n_conf_bins": {"type": "integer", "minimum": 1},
        "n_jobs": {"type": "integer"},
        "calibrate_then_nms": {
            "type": "object",
            "additionalProperties": False,
            "required": ["nms_threshold"],
            "properties": {
                "nms_threshold": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "iou_threshold": _IOU,
                "subset": {"enum": _SUBSETS},
                "calib_subset": {"enum": _SUBSETS},
                "pipeline": _STAGES,
                "rethreshold": {"type": ["number", "null"], "minimum": 0, "exclusiveMaximum": 1},
            },
        },
        "calibrate": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "pipeline": _STAGES,
                "iou_threshold": _IOU,
                "subset": {"enum": _SUBSETS},
            },
        },
    },
}

GENERATOR_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n_images": {"type": "integer", "minimum": 1},
        "gt_per_image": {"type": "integer", "minimum": 0},
        "cluster_size": {"type": "integer", "minimum": 1},
        "confidence_model": {
            "type": "object",
            "required": ["type"],
            "properties": {
                "type": {"enum": ["constant", "true_precision", "distorted"]},
                "confidence": {"type": "number", "minimum": 0, "maximum": 1},
                "temperature": {"type": "number", "exclusiveMinimum": 0},
                "shift": {"type": "number"},
            },
            "additionalProperties": False,
        },
        "jitter": {"type": "number", "minimum": 0},
        "fp_rate": {"type": "number", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0},
        "image_width": {"type": "integer", "minimum": 1},
        "image_height": {"type": "integer", "minimum": 1},
        "p_range": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "fp_confidence": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "box_noise": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
        "category": {"type": "integer"},
        "category_name": {"type": "string"},
    },
}

_EXPERIMENT_KEYS = (
    "iou_thresholds", "subsets", "split_ratio", "repeats", "seed", "eval_bins", "calib_bins",
    "min_bin_count", "weighting", "split_by", "exclude_crowd", "fallback", "figure_iou",
    "grid_n", "n_conf_bins", "n_jobs",
)


class CliError(Exception):
    def __init__(self, category, message, code):
        super().__init__(message)
        self.category = category
        self.code = code


def _validation(message):
    return CliError("validation", message, EXIT_VALIDATION)


def _read_config(path, schema):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError("io", f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise _validation(f"{path}: invalid JSON ({exc})") from exc
    try:
        jsonschema.validate(doc, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise _validation(f"{path}: {where}: {exc.message}") from exc
    return doc


def _resolve(base, p):
    p = Path(p)
    return p if p.is_absolute() else Path(base).parent / p


def _load_inputs(cfg, config_path):
    gt_path = _resolve(config_path, cfg["ground_truth"])
    det_path = _resolve(config_path, cfg["detections"])
    for p in (gt_path, det_path):
        if not p.is_file():
            raise CliError("io", f"input file not found: {p}", EXIT_IO)
    try:
        ground_truths, images = load_ground_truth(gt_path)
        detections = load_detections(det_path)
        check_references(detections, images)
    except DataFormatError as exc:
        raise _validation(str(exc)) from exc
    except OSError as exc:
        raise CliError("io", f"cannot read input: {exc}", EXIT_IO) from exc
    if "category" in cfg:
        detections, ground_truths = filter_category(detections, ground_truths, cfg["category"])
    return detections, ground_truths, images


def _experiment_config(cfg, seed):
    kwargs = {k: cfg[k] for k in _EXPERIMENT_KEYS if k in cfg}
    if "variants" in cfg:
        kwargs["variants"] = cfg["variants"]
    if seed is not None:
        kwargs["seed"] = seed
    if "iou_thresholds" in kwargs:
        kwargs["iou_thresholds"] = tuple(kwargs["iou_thresholds"])
    if "subsets" in kwargs:
        kwargs["subsets"] = tuple(kwargs["subsets"])
    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise _validation(str(exc)) from exc


def _out_dir(args, cfg, config_path):
    if args.out:
        return Path(args.out)
    if "output_dir" in cfg:
        return _resolve(config_path, cfg["output_dir"])
    raise _validation("no output directory: pass --out or set output_dir")


def _use_color():
    return "NO_COLOR" not in os.environ and sys.stdout.isatty()


def cmd_evaluate(args):
    cfg = _read_config(args.config, RUN_SCHEMA)
    exp_cfg = _experiment_config(cfg, args.seed)
    out_dir = _out_dir(args, cfg, args.config)
    cnn_cfg = cfg.get("calibrate_then_nms")
    cnn_pipeline = None
    if cnn_cfg is not None:
        try:
            cnn_pipeline = PipelineConfig.from_list(cnn_cfg.get("pipeline", []))
        except (TypeError, ValueError) as exc:
            raise _validation(str(exc)) from exc
    data = _load_inputs(cfg, args.config)

    try:
        report = run_experiment(exp_cfg, data)
        if cnn_cfg is not None:
            subset = cnn_cfg.get("subset", "conf")
            result = calibrate_then_nms(
                *data,
                calib_scheme=exp_cfg.calib_scheme(cnn_cfg.get("calib_subset", subset)),
                nms_threshold=cnn_cfg["nms_threshold"],
                iou_threshold=cnn_cfg.get("iou_threshold", exp_cfg.plot_iou),
                subset=subset,
                seed=exp_cfg.seed,
                split_ratio=exp_cfg.split_ratio,
                base_pipeline=cnn_pipeline,
                eval_scheme=exp_cfg.eval_scheme(subset),
                min_bin_count=exp_cfg.min_bin_count,
                weighting=exp_cfg.weighting,
                rethreshold=cnn_cfg.get("rethreshold"),
                grid_n=exp_cfg.grid_n,
                n_conf_bins=exp_cfg.n_conf_bins,
                exclude_crowd=exp_cfg.exclude_crowd,
                fallback=exp_cfg.fallback,
            )
            report.calibrate_then_nms = {"nms_threshold": cnn_cfg["nms_threshold"], **result.to_dict()}
    except NoRetainedSamplesError as exc:
        raise CliError("computation", str(exc), EXIT_COMPUTATION) from exc
    except ValueError as exc:
        raise CliError("computation", str(exc), EXIT_COMPUTATION) from exc

    doc = report.to_dict()
    json_text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    csv_text = to_csv(report)
    table_text = to_table(report)
    try:
        atomic_write_text(out_dir / "report.json", json_text)
        atomic_write_text(out_dir / "report.csv", csv_text)
        atomic_write_text(out_dir / "report.txt", table_text)
    except OSError as exc:
        raise CliError("io", f"cannot write report: {exc}", EXIT_IO) from exc
    if args.format == "json":
        sys.stdout.write(json_text)
    elif args.format == "csv":
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(to_table(report, color=_use_color()))
    return EXIT_OK


def cmd_calibrate(args):
    cfg = _read_config(args.config, RUN_SCHEMA)
    exp_cfg = _experiment_config(cfg, args.seed)
    out_dir = _out_dir(args, cfg, args.config)
    section = cfg.get("calibrate", {})
    try:
        pipeline = PipelineConfig.from_list(section["pipeline"]) if "pipeline" in section \
            else PipelineConfig.standard(None)
        match_cfg = MatchConfig(section.get("iou_threshold", exp_cfg.iou_thresholds[0]), exp_cfg.exclude_crowd)
    except (TypeError, ValueError) as exc:
        raise _validation(str(exc)) from exc
    detections, ground_truths, images = _load_inputs(cfg, args.config)
    subset = section.get("subset", "conf")
    scheme = exp_cfg.calib_scheme(subset)
    try:
        processed = run_pipeline(detections, pipeline)
        samples = match(processed, ground_truths, images, match_cfg)
        est = HistogramCalibrator(scheme.subset.value, scheme.bins, scheme.ranges, exp_cfg.fallback).fit(samples)
        calibrated = calibrate_detections(est, processed, images)
    except ValueError as exc:
        raise CliError("computation", str(exc), EXIT_COMPUTATION) from exc
    try:
        dump_json(out_dir / "calibrator.json", est.to_dict())
        save_detections(out_dir / "calibrated_detections.json", calibrated)
    except OSError as exc:
        raise CliError("io", f"cannot write outputs: {exc}", EXIT_IO) from exc
    print(f"fitted {subset} calibrator on {len(samples)} samples -> {out_dir}")
    return EXIT_OK


def cmd_simulate(args):
    doc = _read_config(args.config, GENERATOR_SCHEMA)
    if args.seed is not None:
        doc["seed"] = args.seed
    try:
        gen_cfg = GeneratorConfig.from_dict(doc)
    except (TypeError, ValueError) as exc:
        raise _validation(str(exc)) from exc
    if not args.out:
        raise _validation("simulate needs --out")
    try:
        gt_path, det_path = write(gen_cfg, args.out)
    except ValueError as exc:
        raise _validation(str(exc)) from exc
    except OSError as exc:
        raise CliError("io", f"cannot write outputs: {exc}", EXIT_IO) from exc
    print(f"wrote {gt_path} and {det_path}")
    return EXIT_OK


def _slug(text):
    return "".join(c if c.isalnum() or c in "-." else "_" for c in str(text)).replace("@", "_")


def cmd_plot(args):
    report_path = args.report or args.config
    if report_path is None:
        raise _validation("plot needs a report path")
    try:
        with open(report_path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CliError("io", f"cannot read {report_path}: {exc.strerror or exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise _validation(f"{report_path}: invalid JSON ({exc})") from exc
    try:
        report = ExperimentReport.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise _validation(f"{report_path}: not a valid report ({exc})") from exc
    if not report.figures and report.calibrate_then_nms is None:
        raise _validation(f"{report_path}: report has no reliability or heatmap sections")
    if not args.out:
        raise _validation("plot needs --out")
    out_dir = Path(args.out)

    outputs = {}
    try:
        for fig in report.figures:
            stem = f"{_slug(fig['variant'])}_iou{fig['iou_threshold']:g}_{fig['stage']}"
            label = f"{fig['variant']} {fig['stage']}"
            outputs[f"reliability_{stem}.svg"] = reliability_svg(
                fig["reliability"], f"{label}: D-ECE = {format_d_ece(fig['d_ece'])}")
            outputs[f"heatmap_{stem}.svg"] = heatmap_svg(
                fig["heatmap"], f"{label}: D-ECE = {format_d_ece(fig['heatmap_d_ece'])}")
        cnn = report.calibrate_then_nms
        if cnn is not None:
            label = f"calibrated then NMS@{cnn['nms_threshold']:g}"
            outputs["reliability_calibrate_then_nms.svg"] = reliability_svg(
                cnn["reliability"], f"{label}: D-ECE = {format_d_ece(cnn['d_ece'])}")
            outputs["heatmap_calibrate_then_nms.svg"] = heatmap_svg(
                cnn["heatmap"], f"{label}: D-ECE = {format_d_ece(cnn['d_ece'])}")
    except (KeyError, TypeError, ValueError) as exc:
        raise _validation(f"{report_path}: malformed figure section ({exc})") from exc
    try:
        for name, text in outputs.items():
            atomic_write_text(out_dir / name, text)
    except OSError as exc:
        raise CliError("io", f"cannot write plots: {exc}", EXIT_IO) from exc
    print(f"wrote {len(outputs)} SVG files to {out_dir}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="detcal", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"detcal {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON configuration file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--format", choices=("json", "csv", "table"), default="table",
                       help="what to print on stdout")

    p = sub.add_parser("evaluate", help="run the calibration experiment grid and write reports")
    common(p)
    p.set_defaults(func=cmd_evaluate)
    p = sub.add_parser("calibrate", help="fit a histogram-binning calibrator and rescore detections")
    common(p)
    p.set_defaults(func=cmd_calibrate)
    p = sub.add_parser("simulate", help="write synthetic ground truth and detections")
    common(p)
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("plot", help="render SVG figures from an evaluation report")
    p.add_argument("report", nargs="?", help="report.json written by evaluate")
    common(p, config_required=False)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("detcal: error[validation]: --seed must be non-negative", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except CliError as exc:
        message = " ".join(str(exc).split())
        print(f"detcal: error[{exc.category}]: {message}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
