"""Command-line front end: prep, train, tune, predict, evaluate and synth."""
import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, edgeprep, pipeline, synthetic
from .errors import ConvergenceError, FormatError, InvalidArgumentError
from .evaltune import GridSpec
from .imgio import IMAGE_SUFFIXES, read_image, write_image

log = logging.getLogger("braincsvm")


def _config_args(p):
    g = p.add_argument_group("pipeline configuration")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--sigma", type=float, default=1.0, help="Gaussian denoising sigma (default 1.0)")
    g.add_argument("--contour-levels", type=int, default=edgeprep.DEFAULT_LEVELS)
    g.add_argument("--no-special-prep", action="store_true", help="skip the edge-differencing step")


def _model_args(p):
    _config_args(p)
    g = p.add_argument_group("model")
    g.add_argument("--features", choices=("final", "all-pools"), default="final")
    g.add_argument("--epochs", type=int, default=50, help="convnet epochs; 0 keeps random filters")
    g.add_argument("--lr", type=float, default=0.01)
    g.add_argument("--batch", type=int, default=16)
    g.add_argument("--cost-ratio", type=float, default=4.0, help="penalty multiplier r for missed positives")
    g.add_argument("--C", type=float, help="override C for both stages")
    g.add_argument("--g", type=float, help="override g for both stages")
    g.add_argument("--params", type=Path, help="JSON written by 'tune' with per-stage C and g")


def _data_args(p):
    p.add_argument("--data", type=Path, required=True, help="directory with normal/ benign/ malignant/")
    p.add_argument("--split", type=float, default=0.8, help="training fraction (default 0.8)")


def build_config(args):
    cfg = pipeline.PipelineConfig(
        sigma=args.sigma, contour_levels=args.contour_levels, special=not args.no_special_prep,
        features=args.features, seed=args.seed, epochs=args.epochs, lr=args.lr, batch=args.batch,
        cost_ratio=args.cost_ratio,
    )
    if args.params is not None:
        tuned = json.loads(args.params.read_text())
        cfg = dataclasses.replace(cfg, presence=pipeline.StageParams(**tuned["presence"]),
                                  severity=pipeline.StageParams(**tuned["severity"]))
    for stage in ("presence", "severity"):
        old = getattr(cfg, stage)
        new = pipeline.StageParams(args.C if args.C is not None else old.C, args.g if args.g is not None else old.g)
        cfg = dataclasses.replace(cfg, **{stage: new})
    return cfg


def _save_image(path, img):
    path.parent.mkdir(parents=True, exist_ok=True)
    write_image(path, img)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------- commands

def cmd_prep(args):
    cfg = pipeline.PipelineConfig(sigma=args.sigma, contour_levels=args.contour_levels,
                                  special=not args.no_special_prep, seed=args.seed)
    count = 0
    for path in sorted(p for p in args.data.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES):
        rel = path.relative_to(args.data)
        out = pipeline.preprocess(read_image(path), cfg)
        _save_image(args.out / rel, out)
        if args.emit_contours:
            bands = edgeprep.contour(out, cfg.contour_levels)
            _save_image(args.out / rel.with_name(rel.stem + "_contour.pgm"),
                        edgeprep.contour_image(bands, cfg.contour_levels))
        count += 1
    print(f"preprocessed {count} image(s) into {args.out}")


def cmd_train(args):
    cfg = build_config(args)
    train, test = pipeline.split(pipeline.ingest(args.data), args.split, args.seed)
    log.info("training on %d samples (%d held out)", len(train), len(test))
    model = pipeline.fit(train, cfg)
    pipeline.save(model, args.model)
    if args.curve:
        _write_csv(args.curve, ["epoch", "loss", "accuracy"], model.curve.rows())
    print(f"saved model to {args.model}: stage 1 keeps {int(model.presence.mask.sum())} features, "
          f"stage 2 keeps {int(model.severity.mask.sum())}")


def cmd_tune(args):
    cfg = build_config(args)
    grid = GridSpec(C_values=tuple(args.C_values), g_values=tuple(args.g_values), folds=args.folds)
    train, _ = pipeline.split(pipeline.ingest(args.data), args.split, args.seed)
    results = pipeline.tune(train, cfg, grid)
    args.out.mkdir(parents=True, exist_ok=True)
    chosen = {}
    for k, name in ((1, "presence"), (2, "severity")):
        res = results[k]
        _write_csv(args.out / f"{name}_grid.csv", ["C", "g", "mean_recall", "mean_accuracy"], res.csv_rows())
        chosen[name] = {"C": res.best.C, "g": res.best.g}
        print(f"{name}: C={res.best.C:g} g={res.best.g:g} "
              f"(recall {res.best.mean_recall:.4f}, accuracy {res.best.mean_accuracy:.4f})")
    (args.out / "tune.json").write_text(json.dumps(chosen, indent=2) + "\n")


def cmd_predict(args):
    model = pipeline.load(args.model)
    images = [read_image(p) for p in args.images]
    w = csv.writer(sys.stdout)
    w.writerow(["image", "label", "presence_score", "severity_score"])
    for path, pred in zip(args.images, pipeline.predict_many(model, images)):
        s2 = "" if pred.severity_score is None else f"{pred.severity_score:.6f}"
        w.writerow([str(path), pred.label, f"{pred.presence_score:.6f}", s2])


def cmd_evaluate(args):
    model = pipeline.load(args.model)
    samples = pipeline.ingest(args.data)
    if not args.all:
        seed = model.config.seed if args.seed is None else args.seed
        _, samples = pipeline.split(samples, args.split, seed)
    report = pipeline.evaluate(model, samples)
    doc = report.as_dict()
    doc["n_samples"] = len(samples)
    text = json.dumps(doc, indent=2, sort_keys=True)
    if args.metrics:
        Path(args.metrics).write_text(text + "\n")
    if args.confusion:
        rows = [[stage] + [doc[stage]["confusion"][k] for k in ("tp", "fp", "tn", "fn")]
                for stage in ("presence", "severity") if stage in doc]
        _write_csv(args.confusion, ["stage", "tp", "fp", "tn", "fn"], rows)
    print(text)


def cmd_synth(args):
    for img, label, name in synthetic.phantom_set(args.per_class, seed=args.seed):
        _save_image(args.out / label / name, img)
    print(f"wrote {3 * args.per_class} phantom images under {args.out}")


def make_parser():
    ap = argparse.ArgumentParser(prog="braincsvm", description=__doc__)
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prep", help="write preprocessed copies of an image tree")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--emit-contours", action="store_true", help="also write each contour map as <name>_contour.pgm")
    _config_args(p)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("train", help="fit both stages and save a model file")
    _data_args(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--curve", type=Path, help="training-curve CSV")
    _model_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tune", help="cross-validated (C, g) grid search per stage")
    _data_args(p)
    p.add_argument("--out", type=Path, required=True, help="directory for grid CSVs and tune.json")
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--C-values", type=float, nargs="+", default=list(GridSpec().C_values))
    p.add_argument("--g-values", type=float, nargs="+", default=list(GridSpec().g_values))
    _model_args(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("predict", help="classify images with a saved model")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("images", type=Path, nargs="+")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="confusion matrices and metrics on held-out data")
    _data_args(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--seed", type=int, help="split seed (default: the model's training seed)")
    p.add_argument("--all", action="store_true", help="evaluate every sample instead of the held-out split")
    p.add_argument("--metrics", type=Path, help="metrics JSON output")
    p.add_argument("--confusion", type=Path, help="confusion-matrix CSV output")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("synth", help="write a synthetic phantom dataset")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)
    return ap


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (InvalidArgumentError, FormatError, ConvergenceError, FileNotFoundError) as exc:
        print(f"braincsvm: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
