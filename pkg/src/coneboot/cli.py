"""Command-line entry point.

Subcommands cover the whole method end to end: synthetic corpus generation,
CV mask generation, the review service, test-set sampling, base and
refinement training, full experiment runs, report rendering, and applying a
trained model for de-identification. Every command that writes outputs
drops an ``effective_config.json`` snapshot next to them, and all
randomness is surfaced as ``--seed`` flags.

Exit codes: 0 success, 1 usage error, 2 runtime failure. ``CONEBOOT_LOG``
sets the log level (debug/info/warning/error).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("coneboot")


def _setup_logging() -> None:
    level = os.environ.get("CONEBOOT_LOG", "info").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _snapshot(out_dir: Path, command: str, args: argparse.Namespace) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command}
    doc.update({k: v for k, v in vars(args).items() if k != "func" and not k.startswith("_")})
    (out_dir / "effective_config.json").write_text(json.dumps(doc, indent=2, default=str) + "\n")


def _add_net_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input-size", type=int, default=64)
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--base-channels", type=int, default=4)
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learning-rate", type=float, default=2.5e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--eval-every", type=int, default=5)
    p.add_argument("--validation-fraction", type=float, default=0.2)


def _net_config(args):
    from .segnet import NetConfig

    return NetConfig(
        input_size=args.input_size, depth=args.depth,
        base_channels=args.base_channels, dtype=args.dtype,
    )


def _train_config(args, seed: int):
    from .segnet import TrainConfig

    return TrainConfig(
        learning_rate=args.learning_rate, batch_size=args.batch_size,
        epochs=args.epochs, eval_every=args.eval_every,
        validation_fraction=args.validation_fraction, seed=seed,
    )


def _carrier_plan(args, root: str, seed: int):
    # one-off training shares the experiment plumbing through a minimal plan
    from .experiment import ExperimentPlan

    return ExperimentPlan(
        dataset_root=root, output_root=str(Path(args.out).parent or "."),
        replicates=2, seeds=[seed, seed + 1],
        frames_per_sequence=args.frames_per_sequence,
        eval_frames_per_sequence=args.eval_frames,
        net=_net_config(args), train=_train_config(args, seed),
    )


# --- subcommand implementations --------------------------------------------------


def cmd_synth(args) -> int:
    from .synthcone import make_corpus

    manifest = make_corpus(args.root, n_train=args.train, n_test=args.test, n_bad=args.bad, seed=args.seed)
    _snapshot(Path(args.root), "synth", args)
    print(f"wrote {len(manifest.entries)} sequences under {args.root}")
    return 0


def cmd_maskgen(args) -> int:
    from .frames import load_manifest, load_sequence, write_png_gray
    from .maskgen import MaskAlgorithm, generate_mask

    root = Path(args.root)
    algo = MaskAlgorithm(
        args.algo, threshold_block=args.block, threshold_offset=args.offset,
        hull_on_largest_component=args.largest_component,
    )
    manifest = load_manifest(root / "manifest.json")
    for entry in manifest.entries:
        seq = load_sequence(root / entry.path)
        mask = generate_mask(seq, algo)
        write_png_gray(mask.bits.astype(np.uint8) * 255, root / entry.path / f"mask_{args.algo}.png")
    _snapshot(root, "maskgen", args)
    print(f"wrote mask_{args.algo}.png for {len(manifest.entries)} sequences")
    return 0


def cmd_review_serve(args) -> int:
    import uvicorn

    from .review_service import create_app

    app = create_app(args.root, mask_algo=args.algo, ui_dir=args.ui_dir)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_testset_sample(args) -> int:
    from .frames import load_manifest, write_manifest
    from .review import sample_testsets

    root = Path(args.root)
    manifest = load_manifest(root / "manifest.json")
    manifest = sample_testsets(manifest, args.n, args.seed, n_bad=args.n_bad)
    write_manifest(manifest, root / "manifest.json")
    rep = manifest.ids_in_split("representative_test")
    bad = manifest.ids_in_split("bad_mask_test")
    print(f"representative_test: {len(rep)} sequences, bad_mask_test: {len(bad)} sequences")
    return 0


def cmd_train_base(args) -> int:
    from . import segnet
    from .experiment import Dataset, build_eval_pairs, build_training_pairs

    plan = _carrier_plan(args, args.root, args.seed)
    ds = Dataset(args.root)
    train_ids = ds.manifest.ids_in_split("train_good")
    if not train_ids:
        raise ValueError("manifest has no train_good sequences")
    pairs = build_training_pairs(ds, train_ids, plan, args.seed, use_truth=False, algorithm=args.algo)
    curve_eval = build_eval_pairs(ds, ds.manifest.ids_in_split("representative_test"), plan) or None
    params, curve = segnet.train(pairs, curve_eval, plan.net, plan.train)
    segnet.save_weights(args.out, params, plan.net)
    _snapshot(Path(args.out).parent, "train_base", args)
    last = curve.points[-1] if curve.points else None
    print(f"saved {args.out}" + (f" (final val loss {last.validation_loss:.4f})" if last else ""))
    return 0


def cmd_train_refine(args) -> int:
    from . import segnet
    from .experiment import Dataset, build_eval_pairs, build_training_pairs, make_folds

    params, net = segnet.load_weights(args.weights)
    plan = _carrier_plan(args, args.root, args.seed)
    plan = dataclasses.replace(plan, net=net, fold_seed=args.fold_seed, folds=args.folds)
    ds = Dataset(args.root)
    rep_ids = ds.manifest.ids_in_split("representative_test")
    rotations = make_folds(rep_ids, args.folds, args.fold_seed)
    refine_ids, eval_ids = rotations[args.fold_index]
    pairs = build_training_pairs(ds, refine_ids, plan, args.seed, use_truth=True)
    curve_eval = build_eval_pairs(ds, eval_ids, plan)
    refined, curve = segnet.train(pairs, curve_eval, net, plan.train, initial_weights=params)
    segnet.save_weights(args.out, refined, net)
    _snapshot(Path(args.out).parent, "train_refine", args)
    acc = curve.points[-1].test_accuracy if curve.points else None
    print(f"saved {args.out}" + (f" (held-out curve accuracy {acc:.4f})" if acc is not None else ""))
    return 0


def cmd_experiment_run(args) -> int:
    from .experiment import ExperimentPlan, run_experiment

    plan = ExperimentPlan.from_json(Path(args.plan).read_text())
    results = run_experiment(plan, save_weights=not args.no_weights)
    out = Path(plan.output_root)
    _snapshot(out, "experiment_run", args)
    print(f"{len(results)} results -> {out / 'results.csv'}")
    if args.report:
        from .report import build_report

        (out / "report.md").write_text(build_report(results))
        print(f"report -> {out / 'report.md'}")
    return 0


def cmd_experiment_plan(args) -> int:
    from .experiment import desk_plan

    plan = desk_plan(args.root, args.out_root)
    Path(args.out).write_text(plan.to_json() + "\n")
    print(f"wrote {args.out}")
    return 0


def cmd_report(args) -> int:
    from .experiment import load_results
    from .report import build_report

    results = load_results(args.results)
    text = build_report(results, alpha=args.alpha)
    if args.out:
        Path(args.out).write_text(text)
        print(f"report -> {args.out}")
    else:
        print(text)
    return 0


def cmd_deid_apply(args) -> int:
    from . import segnet
    from .frames import load_manifest, load_sequence, write_png_gray
    from .metrics import apply_mask
    from .experiment import _net_input

    params, net = segnet.load_weights(args.weights)
    root = Path(args.root)
    out_root = Path(args.out_root)
    manifest = load_manifest(root / "manifest.json")
    n = 0
    for entry in manifest.entries:
        seq = load_sequence(root / entry.path)
        out_dir = out_root / entry.sequence_id
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, frame in enumerate(seq.frames):
            image = _net_input(frame, net.input_size, net.np_dtype)
            mask = segnet.predict_mask(params, image, net, out_size=(frame.width, frame.height))
            cleaned = apply_mask(frame, mask)
            write_png_gray(cleaned.pixels, out_dir / f"frame_{i:03d}.png")
            n += 1
    _snapshot(out_root, "deid_apply", args)
    print(f"de-identified {n} frames -> {out_root}")
    return 0


# --- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coneboot", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic desk-scale corpus")
    p.add_argument("--root", required=True)
    p.add_argument("--train", type=int, default=60)
    p.add_argument("--test", type=int, default=12)
    p.add_argument("--bad", type=int, default=6)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("maskgen", help="write CV masks for every sequence")
    p.add_argument("root")
    p.add_argument("--algo", choices=["threshold", "filled", "hull"], default="hull")
    p.add_argument("--block", type=int, default=51)
    p.add_argument("--offset", type=float, default=4.0)
    p.add_argument("--largest-component", action="store_true")
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("review", help="review service")
    rsub = p.add_subparsers(dest="review_command", required=True)
    ps = rsub.add_parser("serve", help="serve the triage API (and UI if built)")
    ps.add_argument("root")
    ps.add_argument("--algo", choices=["threshold", "filled", "hull"], default="hull")
    ps.add_argument("--host", default="127.0.0.1")
    ps.add_argument("--port", type=int, default=8008)
    ps.add_argument("--ui-dir", default=None)
    ps.set_defaults(func=cmd_review_serve)

    p = sub.add_parser("testset", help="test-set sampling")
    tsub = p.add_subparsers(dest="testset_command", required=True)
    pt = tsub.add_parser("sample", help="assign representative and bad-mask test splits")
    pt.add_argument("root")
    pt.add_argument("--n", type=int, default=33)
    pt.add_argument("--n-bad", type=int, default=None)
    pt.add_argument("--seed", type=int, required=True)
    pt.set_defaults(func=cmd_testset_sample)

    p = sub.add_parser("train", help="model training")
    trsub = p.add_subparsers(dest="train_command", required=True)
    pb = trsub.add_parser("base", help="train a base model on CV masks")
    pb.add_argument("root")
    pb.add_argument("--algo", choices=["threshold", "filled", "hull"], required=True)
    pb.add_argument("--out", required=True)
    pb.add_argument("--seed", type=int, default=101)
    pb.add_argument("--frames-per-sequence", type=int, default=3)
    pb.add_argument("--eval-frames", type=int, default=10)
    _add_net_flags(pb)
    _add_train_flags(pb)
    pb.set_defaults(func=cmd_train_base)

    pr = trsub.add_parser("refine", help="continue training on a hand-labeled fold")
    pr.add_argument("root")
    pr.add_argument("--weights", required=True)
    pr.add_argument("--out", required=True)
    pr.add_argument("--fold-index", type=int, default=0)
    pr.add_argument("--folds", type=int, default=3)
    pr.add_argument("--fold-seed", type=int, default=5150)
    pr.add_argument("--seed", type=int, default=101)
    pr.add_argument("--frames-per-sequence", type=int, default=3)
    pr.add_argument("--eval-frames", type=int, default=10)
    _add_net_flags(pr)
    _add_train_flags(pr)
    pr.set_defaults(func=cmd_train_refine)

    p = sub.add_parser("experiment", help="replicate-run experiments")
    esub = p.add_subparsers(dest="experiment_command", required=True)
    pe = esub.add_parser("run", help="run a plan")
    pe.add_argument("--plan", required=True)
    pe.add_argument("--no-weights", action="store_true")
    pe.add_argument("--report", action="store_true", help="also render report.md")
    pe.set_defaults(func=cmd_experiment_run)
    pp = esub.add_parser("plan", help="write the standard desk-scale plan")
    pp.add_argument("--root", required=True)
    pp.add_argument("--out-root", required=True)
    pp.add_argument("--out", required=True)
    pp.set_defaults(func=cmd_experiment_plan)
    prr = esub.add_parser("report", help="alias of the top-level report command")
    prr.add_argument("--results", required=True)
    prr.add_argument("--out", default=None)
    prr.add_argument("--alpha", type=float, default=0.05)
    prr.set_defaults(func=cmd_report)

    p = sub.add_parser("report", help="render Markdown tables from a results file")
    p.add_argument("--results", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("deid", help="de-identification")
    dsub = p.add_subparsers(dest="deid_command", required=True)
    pd = dsub.add_parser("apply", help="mask every frame of a dataset with a trained model")
    pd.add_argument("root")
    pd.add_argument("--weights", required=True)
    pd.add_argument("--out-root", required=True)
    pd.set_defaults(func=cmd_deid_apply)

    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors; --help exits 0
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # surfaced as a runtime failure, not a traceback
        log.error("%s", exc, exc_info=os.environ.get("CONEBOOT_LOG", "").lower() == "debug")
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
