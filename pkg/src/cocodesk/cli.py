"""Command-line entry point.

Exit status: 0 success, 1 invalid input or usage (including a failed
gradient check), 2 runtime failure such as divergence or I/O errors. Every
output file embeds the resolved configuration, and all randomness derives
from ``--seed``.
"""
import argparse
import json
import logging
import os
from pathlib import Path
import sys

import numpy as np

from . import coco, data, fusion, gradcheck, metrics, reports
from .errors import ValidationError
from .train import LOSS_KINDS, TrainConfig, extract_features, train

OUT_ENV = "COCODESK_OUT"


class UsageError(ValidationError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n\n{self.format_help()}")


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v.strip()]


def _alpha(text):
    if str(text).strip().lower() == "auto":
        return None
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError("alpha must be positive or 'auto'")
    return value


def build_parser():
    p = Parser(prog="cocodesk", description="COCO loss laboratory", allow_abbrev=False)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    def common(sp):
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=None,
                        help=f"output directory (default: ${OUT_ENV} or the current directory)")
        sp.add_argument("--config", default=None, help="flat 'key = value' file; flags win")
        return sp

    sp = common(sub.add_parser("alpha", help="print the feature scale bounds",
                               allow_abbrev=False))
    sp.add_argument("--classes", type=int, required=True)
    sp.add_argument("--target-loss", type=float, default=coco.DEFAULT_TARGET_LOSS)

    sp = common(sub.add_parser("train", help="train an MLP with one of the losses",
                               allow_abbrev=False))
    sp.add_argument("--loss", choices=LOSS_KINDS, default="coco")
    sp.add_argument("--dataset", choices=("synth", "mnist"), default="synth")
    sp.add_argument("--classes", type=int, default=4)
    sp.add_argument("--input-dim", type=int, default=16)
    sp.add_argument("--per-class", type=int, default=200)
    sp.add_argument("--spread", type=float, default=0.1)
    sp.add_argument("--data-seed", type=int, default=None,
                    help="seed for synthetic data (default: --seed)")
    sp.add_argument("--images", default=None, help="IDX image file (mnist)")
    sp.add_argument("--labels", default=None, help="IDX label file (mnist)")
    sp.add_argument("--limit", type=int, default=None, help="use only the first N samples")
    sp.add_argument("--epochs", type=int, default=30)
    sp.add_argument("--batch-size", type=int, default=32)
    sp.add_argument("--hidden", type=_int_list, default=[64])
    sp.add_argument("--feature-dim", type=int, default=8)
    sp.add_argument("--lr", type=float, default=0.05)
    sp.add_argument("--momentum", type=float, default=0.9)
    sp.add_argument("--weight-decay", type=float, default=0.005)
    sp.add_argument("--alpha", type=_alpha, default=None, help="positive value or 'auto'")
    sp.add_argument("--centroid-mode", choices=(coco.PARAMETRIC, coco.BATCH),
                    default=coco.PARAMETRIC)
    sp.add_argument("--center-weight", type=float, default=1.0)
    sp.add_argument("--triplet-margin", type=float, default=0.2)

    sp = common(sub.add_parser("gradcheck", help="finite-difference gradient checks",
                               allow_abbrev=False))
    sp.add_argument("--loss", choices=gradcheck.LOSS_KINDS + ("all",), default="all")
    sp.add_argument("--seeds", type=int, default=12)
    sp.add_argument("--dims", type=_int_list, default=[2, 8, 64])
    sp.add_argument("--classes", type=_int_list, default=[2, 10, 100])
    sp.add_argument("--batch-size", type=int, default=8)
    sp.add_argument("--tolerance", type=float, default=1e-5)

    for name, helptext in (("pairs", "positive/negative cosine statistics"),
                           ("verify", "threshold-sweep verification")):
        sp = common(sub.add_parser(name, help=helptext, allow_abbrev=False))
        sp.add_argument("--features", required=True, help="feature CSV dump")
        sp.add_argument("--max-pairs", type=int, default=20000)
        if name == "pairs":
            sp.add_argument("--bins", type=int, default=metrics.HIST_BINS)

    sp = common(sub.add_parser("identify", help="top-1 identification with distractors",
                               allow_abbrev=False))
    sp.add_argument("--probes", required=True)
    sp.add_argument("--gallery", required=True)
    sp.add_argument("--distractors", required=True)
    sp.add_argument("--counts", type=_int_list, default=[10, 100, 1000])
    sp.add_argument("--trials", type=int, default=20)

    sp = common(sub.add_parser("fuse", help="calibrate, merge and assign region scores",
                               allow_abbrev=False))
    sp.add_argument("--test", required=True, help="score table JSON to label")
    sp.add_argument("--validation", default=None, help="labelled score table JSON to fit on")
    sp.add_argument("--calibrations", default=None,
                    help="previously written fusion JSON to reuse instead of fitting")
    sp.add_argument("--step", type=float, default=fusion.GAMMA_STEP)

    sp = common(sub.add_parser("align", help="least-squares affine keypoint alignment",
                               allow_abbrev=False))
    sp.add_argument("--source", required=True, help="keypoint CSV point_id,x,y")
    sp.add_argument("--target", required=True, help="keypoint CSV point_id,x,y")
    return p


def read_config_file(path):
    values = {}
    with open(path) as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def resolve(argv):
    """Parse ``argv`` and fold in the config file; explicit flags win."""
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    sp = _subparser(parser, args.command)
    if extra:
        sp.error(f"unrecognized arguments: {' '.join(extra)}")
    if not args.config:
        return args
    actions = {a.dest: a for a in sp._actions if a.option_strings}
    given = set()
    for a in sp._actions:
        for opt in a.option_strings:
            if any(tok == opt or tok.startswith(opt + "=") for tok in argv):
                given.add(a.dest)
    for key, raw in read_config_file(args.config).items():
        if key not in actions or key in ("config", "help"):
            raise UsageError(f"{args.config}: unknown key {key!r} for '{args.command}'")
        if key in given:
            continue
        action = actions[key]
        try:
            value = action.type(raw) if action.type else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise UsageError(f"{args.config}: bad value for {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise UsageError(f"{args.config}: {key!r} must be one of {list(action.choices)}")
        setattr(args, key, value)
    return args


def echo(args):
    """Resolved parameters; where outputs go and where they were read from is not one."""
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("verbose", "out", "config")}


def out_dir(args):
    path = Path(args.out or os.environ.get(OUT_ENV) or ".")
    path.mkdir(parents=True, exist_ok=True)
    return path


def cmd_alpha(args):
    exact = coco.optimal_alpha(args.classes, args.target_loss, coco.EXACT_BOUND)
    closed = coco.optimal_alpha(args.classes, args.target_loss, coco.CLOSED_FORM)
    print(f"exact_bound {exact:.17g}")
    print(f"closed_form {closed:.17g}")
    if args.out or os.environ.get(OUT_ENV):
        reports.dump_json(out_dir(args) / "alpha.json", {
            "config": echo(args), "exact_bound": exact, "closed_form": closed,
            "loss_infimum_at_exact_bound": coco.loss_infimum(exact, args.classes)})
    return 0


def load_dataset(args):
    if args.dataset == "mnist":
        if not (args.images and args.labels):
            raise UsageError("--dataset mnist needs --images and --labels")
        ds = data.load_idx(args.images, args.labels)
    else:
        seed = args.seed if args.data_seed is None else args.data_seed
        ds = data.synth_clusters(args.classes, args.input_dim, args.per_class, args.spread, seed)
    if args.limit is not None:
        ds = ds.subset(np.arange(min(args.limit, len(ds))))
    return ds


def cmd_train(args):
    ds = load_dataset(args)
    cfg = TrainConfig(loss_kind=args.loss, epochs=args.epochs, batch_size=args.batch_size,
                      hidden=tuple(args.hidden), feature_dim=args.feature_dim,
                      learning_rate=args.lr, momentum=args.momentum,
                      weight_decay=args.weight_decay, alpha=args.alpha,
                      centroid_mode=args.centroid_mode, center_weight=args.center_weight,
                      triplet_margin=args.triplet_margin, seed=args.seed)
    out = out_dir(args)
    run = train(ds, cfg, checkpoint_path=out / "checkpoint.bin",
                extra_config={"cli": echo(args)})
    reports.dump_json(out / "metrics.json", run.metrics())
    feats = extract_features(run.model, ds.inputs)
    data.write_features_csv(out / "features.csv", feats, ds.labels, {
        "run_id": run.run_id, "config": json.dumps(run.config, sort_keys=True)})
    last = run.per_epoch[-1]
    print(f"run {run.run_id}: final mean loss {last['mean_loss']:.6g}, "
          f"train accuracy {last['train_accuracy']:.4f}")
    return 0


def cmd_gradcheck(args):
    kinds = ("coco", "softmax", "center", "triplet") if args.loss == "all" else (args.loss,)
    config = {"dim": args.dims, "num_classes": args.classes, "batch_size": args.batch_size}
    seeds = [args.seed + i for i in range(args.seeds)]
    doc = {"config": echo(args), "results": {}}
    ok = True
    for kind in kinds:
        rep = gradcheck.check_gradients(kind, config, seeds)
        passed = rep.passed(args.tolerance)
        ok &= passed
        doc["results"][kind] = {"max_relative_error": rep.max_relative_error,
                                "worst_coordinate": list(rep.worst_coordinate),
                                "checked": rep.checked, "skipped": rep.skipped,
                                "passed": passed}
        print(f"{kind:10s} max_rel_err {rep.max_relative_error:.3e} checked {rep.checked} "
              f"skipped {rep.skipped} {'PASS' if passed else 'FAIL'}")
    reports.dump_json(out_dir(args) / "gradcheck.json", doc)
    return 0 if ok else 1


def cmd_pairs(args):
    feats, labels = data.read_features_csv(args.features)
    st = metrics.pair_stats(feats, labels, args.max_pairs, args.seed, args.bins)
    out = out_dir(args)
    cfg = echo(args)
    reports.write_histogram_csv(out / "histogram.csv", st, cfg)
    reports.dump_json(out / "pairs.json", {
        "config": cfg, "n_positive": int(st.positive_cosines.size),
        "n_negative": int(st.negative_cosines.size), "mean_pos": st.mean_pos,
        "mean_neg": st.mean_neg, "separation": st.separation})
    print(f"mean_pos {st.mean_pos:.6f} mean_neg {st.mean_neg:.6f} "
          f"separation {st.separation:.6f}")
    return 0


def cmd_verify(args):
    feats, labels = data.read_features_csv(args.features)
    scores, same = metrics.pairs_from_features(feats, labels, args.max_pairs, args.seed)
    res = metrics.verify(scores, same)
    out = out_dir(args)
    cfg = echo(args)
    reports.write_roc_csv(out / "roc.csv", res, cfg)
    reports.dump_json(out / "verify.json", {
        "config": cfg, "accuracy": res.accuracy,
        "best_threshold": reports.finite_or_none(res.best_threshold), "auc": res.auc,
        "n_pairs": int(scores.size)})
    print(f"accuracy {res.accuracy:.6f} threshold {res.best_threshold:.6f} auc {res.auc:.6f}")
    return 0


def cmd_identify(args):
    probes, probe_ids = data.read_features_csv(args.probes)
    gallery, gallery_ids = data.read_features_csv(args.gallery)
    distractors, _ = data.read_features_csv(args.distractors)
    res = metrics.identify(probes, probe_ids, gallery, gallery_ids, distractors,
                           args.counts, args.trials, args.seed)
    out = out_dir(args)
    cfg = echo(args)
    reports.write_cmc_csv(out / "cmc.csv", res, cfg)
    reports.dump_json(out / "identify.json", {
        "config": cfg, "distractor_counts": res.distractor_counts,
        "top1_accuracy": res.top1_accuracy})
    for c, a in zip(res.distractor_counts, res.top1_accuracy):
        print(f"distractors {c:>7d} top1 {a:.4f}")
    return 0


def cmd_fuse(args):
    test = fusion.ScoreTable.from_json(fusion.load_json(args.test))
    meta = {"config": echo(args)}
    if args.calibrations:
        regions, cals, weights = fusion.read_fusion_document(fusion.load_json(args.calibrations))
        if regions != test.regions:
            raise ValidationError(f"calibrations cover {regions}, test table has {test.regions}")
        meta["fit"] = {"source": str(args.calibrations)}
    elif args.validation:
        val = fusion.ScoreTable.from_json(fusion.load_json(args.validation))
        if val.regions != test.regions:
            raise ValidationError("validation and test tables must list the same regions")
        cals, weights, val_acc = fusion.fit_fusion(val, args.step)
        meta["fit"] = {"source": str(args.validation), "validation_top1": val_acc,
                       "scope": "fitted on this validation table only"}
    else:
        raise UsageError("fuse needs --validation or --calibrations")
    merged, assigned = fusion.apply_fusion(test, cals, weights)
    if test.probe_labels is not None:
        meta["test_top1"] = float(np.mean(assigned == test.probe_labels))
    meta["assignments"] = assigned.tolist()
    meta["merged_scores"] = merged.tolist()
    doc = fusion.fusion_document(test.regions, cals, weights, meta)
    reports.dump_json(out_dir(args) / "fusion.json", doc)
    if "test_top1" in meta:
        print(f"test top1 {meta['test_top1']:.4f}")
    print("weights " + " ".join(f"{r}={w:.2f}" for r, w in zip(test.regions, weights)))
    return 0


def cmd_align(args):
    src_ids, p = fusion.read_keypoints(args.source)
    dst_ids, q = fusion.read_keypoints(args.target)
    if src_ids != dst_ids:
        raise ValidationError("source and target keypoint files must list the same point ids")
    amap = fusion.fit_affine(p, q)
    residual = fusion.affine_residual(amap, p, q)
    reports.dump_json(out_dir(args) / "affine.json",
                      {"config": echo(args), **amap.to_dict(), "max_residual": residual})
    print(f"A {amap.A.tolist()} b {amap.b.tolist()} residual {residual:.3e}")
    return 0


COMMANDS = {
    "alpha": cmd_alpha,
    "train": cmd_train,
    "gradcheck": cmd_gradcheck,
    "pairs": cmd_pairs,
    "verify": cmd_verify,
    "identify": cmd_identify,
    "fuse": cmd_fuse,
    "align": cmd_align,
}


def run(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = resolve(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ArithmeticError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())
