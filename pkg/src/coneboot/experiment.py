"""Orchestration of the full bootstrap-and-refine method.

A plan names the dataset, the mask algorithms to compare, and the training
protocol; a run produces, per algorithm: the CV-only baseline, `replicates`
independently seeded base models, and all fold rotations of refinement on
the hand-labeled representative set. Every model is scored on the
representative set (held-out third for folds), on the bad-mask set, and for
de-identification (a frame passes iff its predicted mask keeps no
text-region pixel).

All randomness flows from seeds recorded in the plan, so reruns are
byte-identical; wall-clock timings are deliberately kept out of the results
file and go to the log instead.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import segnet
from .frames import (
    DatasetManifest,
    Frame,
    FrameSequence,
    load_manifest,
    load_png_gray,
    load_sequence,
    resize_bilinear,
)
from .maskgen import BinaryMask, MaskAlgorithm, MaskKind, generate_mask
from .metrics import deid_leakage, pixel_accuracy, resize_mask_nearest, set_accuracy
from .segnet import LearningCurve, NetConfig, TrainConfig

log = logging.getLogger(__name__)

STAGE_CV = "cv_only"
STAGE_BASE = "base"


def fold_stage(k: int) -> str:
    return f"fold_{k + 1}"


@dataclass
class ExperimentPlan:
    dataset_root: str
    output_root: str
    mask_algorithms: list[str] = field(default_factory=lambda: ["threshold", "filled", "hull"])
    replicates: int = 6
    frames_per_sequence: int = 10
    folds: int = 3
    seeds: list[int] = field(default_factory=lambda: [101, 102, 103, 104, 105, 106])
    eval_frames_per_sequence: int = 10
    eval_seed: int = 9001
    fold_seed: int = 5150
    threshold_block: int = 51
    threshold_offset: float = 4.0
    refine_epochs: int | None = None
    also_full_set_eval: bool = False
    net: NetConfig = field(default_factory=NetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self) -> None:
        if self.replicates < 2:
            raise ValueError("replicates must be >= 2 (statistics need a distribution)")
        if self.folds < 2:
            raise ValueError("folds must be >= 2")
        if len(self.seeds) != self.replicates:
            raise ValueError(f"need {self.replicates} seeds, got {len(self.seeds)}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("replicate seeds must be distinct")
        for a in self.mask_algorithms:
            MaskKind(a)

    def algo(self, name: str) -> MaskAlgorithm:
        return MaskAlgorithm(MaskKind(name), self.threshold_block, self.threshold_offset)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentPlan":
        doc = json.loads(text)
        doc["net"] = NetConfig(**doc.get("net", {}))
        doc["train"] = TrainConfig(**doc.get("train", {}))
        return cls(**doc)


def desk_plan(dataset_root: str, output_root: str) -> ExperimentPlan:
    """The standard laptop-scale plan used by the replication suite."""
    return ExperimentPlan(
        dataset_root=str(dataset_root),
        output_root=str(output_root),
        frames_per_sequence=3,
        eval_frames_per_sequence=10,
        net=NetConfig(input_size=64, depth=3, base_channels=4, dtype="float32"),
        train=TrainConfig(learning_rate=2.5e-3, batch_size=8, epochs=10, eval_every=5, seed=0),
    )


@dataclass
class RunResult:
    algorithm: str
    stage: str
    replicate: int
    curve: LearningCurve
    rep_accuracy: float
    bad_accuracy: float
    deid_pass: int
    deid_total: int
    full_rep_accuracy: float | None = None
    wall_time_s: float = 0.0  # logged only, never persisted

    def __post_init__(self) -> None:
        for v in (self.rep_accuracy, self.bad_accuracy):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"accuracy out of range: {v}")


# --- dataset access ----------------------------------------------------------


def _subseed(seed: int, sequence_id: str) -> int:
    digest = hashlib.sha256(f"{seed}:{sequence_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def select_frames(seq: FrameSequence, k: int, seed: int) -> list[Frame]:
    """Uniform without-replacement frame draw, deterministic per
    (sequence id, seed); short sequences contribute everything."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not seq.frames:
        raise ValueError(f"sequence {seq.id!r} is empty")
    rng = np.random.default_rng(_subseed(seed, seq.id))
    if len(seq.frames) < k:
        log.warning("sequence %s has %d < %d frames; using all", seq.id, len(seq.frames), k)
        return list(seq.frames)
    idx = np.sort(rng.choice(len(seq.frames), size=k, replace=False))
    return [seq.frames[i] for i in idx]


class Dataset:
    """Loads sequences, truth masks, and text masks once, keeps them in
    memory, and caches generated CV masks per algorithm."""

    def __init__(self, root: str | Path, manifest: DatasetManifest | None = None):
        self.root = Path(root)
        self.manifest = manifest or load_manifest(self.root / "manifest.json")
        self._seqs: dict[str, FrameSequence] = {}
        self._truths: dict[str, BinaryMask] = {}
        self._texts: dict[str, BinaryMask] = {}
        self._cv_masks: dict[tuple[str, str], BinaryMask] = {}

    def sequence(self, sid: str) -> FrameSequence:
        if sid not in self._seqs:
            self._seqs[sid] = load_sequence(self.root / self.manifest.entry(sid).path)
        return self._seqs[sid]

    def truth(self, sid: str) -> BinaryMask:
        if sid not in self._truths:
            path = self.root / self.manifest.entry(sid).path / "truth_mask.png"
            if not path.exists():
                raise FileNotFoundError(f"no truth mask for {sid} at {path}")
            self._truths[sid] = BinaryMask(load_png_gray(path) > 127)
        return self._truths[sid]

    def text_mask(self, sid: str) -> BinaryMask | None:
        if sid not in self._texts:
            path = self.root / self.manifest.entry(sid).path / "text_mask.png"
            self._texts[sid] = BinaryMask(load_png_gray(path) > 127) if path.exists() else None
        return self._texts[sid]

    def cv_mask(self, sid: str, algo: MaskAlgorithm) -> BinaryMask:
        key = (sid, algo.kind.value)
        if key not in self._cv_masks:
            self._cv_masks[key] = generate_mask(self.sequence(sid), algo)
        return self._cv_masks[key]


def _net_input(frame: Frame, size: int, dtype: np.dtype) -> np.ndarray:
    resized = resize_bilinear(frame, size, size)
    return (resized.pixels / 255.0).astype(dtype)


def _net_target(mask: BinaryMask, size: int, dtype: np.dtype) -> np.ndarray:
    return resize_mask_nearest(mask, size, size).bits.astype(dtype)


def build_training_pairs(
    ds: Dataset, ids: list[str], plan: ExperimentPlan, seed: int, use_truth: bool, algorithm: str = ""
) -> list[tuple[np.ndarray, np.ndarray]]:
    size, dtype = plan.net.input_size, plan.net.np_dtype
    pairs = []
    for sid in ids:
        seq = ds.sequence(sid)
        mask = ds.truth(sid) if use_truth else ds.cv_mask(sid, plan.algo(algorithm))
        target = _net_target(mask, size, dtype)
        for frame in select_frames(seq, plan.frames_per_sequence, seed):
            pairs.append((_net_input(frame, size, dtype), target))
    return pairs


def build_eval_pairs(ds: Dataset, ids: list[str], plan: ExperimentPlan) -> list[tuple[np.ndarray, np.ndarray]]:
    size, dtype = plan.net.input_size, plan.net.np_dtype
    pairs = []
    for sid in ids:
        seq = ds.sequence(sid)
        target = _net_target(ds.truth(sid), size, dtype)
        for frame in select_frames(seq, plan.eval_frames_per_sequence, plan.eval_seed):
            pairs.append((_net_input(frame, size, dtype), target))
    return pairs


def make_folds(rep_ids: list[str], folds: int, seed: int) -> list[tuple[list[str], list[str]]]:
    """Rotations of (refine_ids, eval_ids); partition is by sequence and
    every sequence appears exactly once as evaluation data."""
    if len(rep_ids) < folds:
        raise ValueError(f"testset of {len(rep_ids)} sequences cannot form {folds} folds")
    rng = np.random.default_rng(seed)
    order = [rep_ids[i] for i in rng.permutation(len(rep_ids))]
    groups = [list(g) for g in np.array_split(np.array(order, dtype=object), folds)]
    rotations = []
    for k in range(folds):
        eval_ids = sorted(groups[k])
        refine_ids = sorted(x for g in (groups[:k] + groups[k + 1:]) for x in g)
        if set(eval_ids) & set(refine_ids):
            raise AssertionError("fold leakage: evaluation sequence in refinement set")
        rotations.append((refine_ids, eval_ids))
    return rotations


# --- model evaluation ----------------------------------------------------------


def _predict_batches(params, images: np.ndarray, cfg: NetConfig, batch: int = 8) -> np.ndarray:
    outs = []
    for s in range(0, len(images), batch):
        y, _ = segnet.forward(params, images[s:s + batch], cfg)
        outs.append(y >= 0.5)
    return np.concatenate(outs, axis=0)


def evaluate_model(
    ds: Dataset, params: dict[str, np.ndarray], ids: list[str], plan: ExperimentPlan, with_deid: bool = False
) -> tuple[float, int, int]:
    """Native-resolution per-frame accuracy (and de-id pass counts) of a
    trained model over the given sequences."""
    size, dtype = plan.net.input_size, plan.net.np_dtype
    accs: list[float] = []
    passes = total = 0
    for sid in ids:
        seq = ds.sequence(sid)
        truth = ds.truth(sid)
        text = ds.text_mask(sid) if with_deid else None
        frames = select_frames(seq, plan.eval_frames_per_sequence, plan.eval_seed)
        images = np.stack([_net_input(f, size, dtype) for f in frames])[:, None]
        preds = _predict_batches(params, images, plan.net, plan.train.batch_size)
        for p in preds:
            mask = resize_mask_nearest(BinaryMask(p[0]), truth.width, truth.height)
            accs.append(pixel_accuracy(mask, truth))
            if text is not None:
                total += 1
                if deid_leakage(mask, text) == 0.0:
                    passes += 1
    return set_accuracy(accs), passes, total


def evaluate_cv(
    ds: Dataset, algorithm: str, ids: list[str], plan: ExperimentPlan, with_deid: bool = False
) -> tuple[float, int, int]:
    """Same scoring applied to the raw CV masks (one mask per sequence,
    counted once per evaluated frame)."""
    algo = plan.algo(algorithm)
    accs: list[float] = []
    passes = total = 0
    for sid in ids:
        mask = ds.cv_mask(sid, algo)
        truth = ds.truth(sid)
        acc = pixel_accuracy(mask, truth)
        text = ds.text_mask(sid) if with_deid else None
        n = len(select_frames(ds.sequence(sid), plan.eval_frames_per_sequence, plan.eval_seed))
        accs.extend([acc] * n)
        if text is not None:
            leak = deid_leakage(mask, text)
            total += n
            passes += n if leak == 0.0 else 0
    return set_accuracy(accs), passes, total


# --- stage runners ---------------------------------------------------------------


def run_cv_baseline(ds: Dataset, plan: ExperimentPlan) -> list[RunResult]:
    results = []
    rep_ids = ds.manifest.ids_in_split("representative_test")
    bad_ids = ds.manifest.ids_in_split("bad_mask_test")
    for algorithm in plan.mask_algorithms:
        rep_acc, _, _ = evaluate_cv(ds, algorithm, rep_ids, plan)
        bad_acc, passes, total = evaluate_cv(ds, algorithm, bad_ids, plan, with_deid=True)
        results.append(RunResult(algorithm, STAGE_CV, 0, LearningCurve(), rep_acc, bad_acc, passes, total))
        log.info("cv baseline %s: rep %.4f bad %.4f deid %d/%d", algorithm, rep_acc, bad_acc, passes, total)
    return results


def run_base(
    ds: Dataset, plan: ExperimentPlan, algorithm: str, replicate: int
) -> tuple[RunResult, dict[str, np.ndarray]]:
    t0 = time.monotonic()
    seed = plan.seeds[replicate]
    train_ids = ds.manifest.ids_in_split("train_good")
    if not train_ids:
        raise ValueError("manifest has no train_good sequences")
    rep_ids = ds.manifest.ids_in_split("representative_test")
    bad_ids = ds.manifest.ids_in_split("bad_mask_test")
    pairs = build_training_pairs(ds, train_ids, plan, seed, use_truth=False, algorithm=algorithm)
    curve_eval = build_eval_pairs(ds, rep_ids, plan)
    cfg = dataclasses.replace(plan.train, seed=seed)
    params, curve = segnet.train(pairs, curve_eval, plan.net, cfg)
    rep_acc, _, _ = evaluate_model(ds, params, rep_ids, plan)
    bad_acc, passes, total = evaluate_model(ds, params, bad_ids, plan, with_deid=True)
    result = RunResult(
        algorithm, STAGE_BASE, replicate, curve, rep_acc, bad_acc, passes, total,
        wall_time_s=time.monotonic() - t0,
    )
    log.info(
        "base %s r%d: rep %.4f bad %.4f deid %d/%d (%.1fs)",
        algorithm, replicate, rep_acc, bad_acc, passes, total, result.wall_time_s,
    )
    return result, params


def run_refinement_folds(
    ds: Dataset,
    plan: ExperimentPlan,
    algorithm: str,
    replicate: int,
    base_weights: dict[str, np.ndarray],
    weights_dir: Path | None = None,
) -> list[RunResult]:
    seed = plan.seeds[replicate]
    rep_ids = ds.manifest.ids_in_split("representative_test")
    bad_ids = ds.manifest.ids_in_split("bad_mask_test")
    results = []
    for k, (refine_ids, eval_ids) in enumerate(make_folds(rep_ids, plan.folds, plan.fold_seed)):
        t0 = time.monotonic()
        pairs = build_training_pairs(ds, refine_ids, plan, seed, use_truth=True)
        curve_eval = build_eval_pairs(ds, eval_ids, plan)
        epochs = plan.refine_epochs if plan.refine_epochs is not None else plan.train.epochs
        cfg = dataclasses.replace(plan.train, seed=_subseed(seed, fold_stage(k)) % (2**31), epochs=epochs)
        params, curve = segnet.train(pairs, curve_eval, plan.net, cfg, initial_weights=base_weights)
        if weights_dir is not None:
            segnet.save_weights(weights_dir / f"{fold_stage(k)}_{algorithm}_r{replicate}.cbw", params, plan.net)
        rep_acc, _, _ = evaluate_model(ds, params, eval_ids, plan)
        full_acc = evaluate_model(ds, params, rep_ids, plan)[0] if plan.also_full_set_eval else None
        bad_acc, passes, total = evaluate_model(ds, params, bad_ids, plan, with_deid=True)
        result = RunResult(
            algorithm, fold_stage(k), replicate, curve, rep_acc, bad_acc, passes, total,
            full_rep_accuracy=full_acc, wall_time_s=time.monotonic() - t0,
        )
        log.info(
            "%s %s r%d: held-out %.4f bad %.4f deid %d/%d (%.1fs)",
            fold_stage(k), algorithm, replicate, rep_acc, bad_acc, passes, total, result.wall_time_s,
        )
        results.append(result)
    return results


def run_experiment(plan: ExperimentPlan, save_weights: bool = True) -> list[RunResult]:
    """Execute the whole plan and persist results under the output root."""
    out = Path(plan.output_root)
    out.mkdir(parents=True, exist_ok=True)
    (out / "plan.json").write_text(plan.to_json() + "\n")
    ds = Dataset(plan.dataset_root)
    results = run_cv_baseline(ds, plan)
    wdir: Path | None = None
    if save_weights:
        wdir = out / "weights"
        wdir.mkdir(exist_ok=True)
    for algorithm in plan.mask_algorithms:
        for replicate in range(plan.replicates):
            base_result, base_params = run_base(ds, plan, algorithm, replicate)
            results.append(base_result)
            if wdir is not None:
                segnet.save_weights(wdir / f"base_{algorithm}_r{replicate}.cbw", base_params, plan.net)
            results.extend(run_refinement_folds(ds, plan, algorithm, replicate, base_params, weights_dir=wdir))
    results = sort_results(results)
    persist_results(results, out / "results.csv")
    return results


# --- persistence -------------------------------------------------------------------


_CSV_HEADER = (
    "kind,algorithm,stage,replicate,epoch,train_loss,val_loss,curve_acc,"
    "rep_acc,full_rep_acc,bad_acc,deid_pass,deid_total"
)


def _stage_order(stage: str) -> tuple:
    if stage == STAGE_CV:
        return (0, 0)
    if stage == STAGE_BASE:
        return (1, 0)
    return (2, int(stage.split("_")[1]))


def sort_results(results: list[RunResult]) -> list[RunResult]:
    return sorted(results, key=lambda r: (r.algorithm, _stage_order(r.stage), r.replicate))


def _fmt(x: float | int | None) -> str:
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    return format(float(x), ".17g")


def persist_results(results: list[RunResult], path: str | Path) -> None:
    lines = [_CSV_HEADER]
    for r in results:
        for pt in r.curve.points:
            lines.append(
                f"curve,{r.algorithm},{r.stage},{r.replicate},{pt.epoch},"
                f"{_fmt(pt.train_loss)},{_fmt(pt.validation_loss)},{_fmt(pt.test_accuracy)},,,,,"
            )
        lines.append(
            f"summary,{r.algorithm},{r.stage},{r.replicate},,,,,"
            f"{_fmt(r.rep_accuracy)},{_fmt(r.full_rep_accuracy)},{_fmt(r.bad_accuracy)},"
            f"{r.deid_pass},{r.deid_total}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def load_results(path: str | Path) -> list[RunResult]:
    text = Path(path).read_text().splitlines()
    if not text or text[0] != _CSV_HEADER:
        raise ValueError(f"unrecognized results file {path}")
    curves: dict[tuple, LearningCurve] = {}
    results: list[RunResult] = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != len(_CSV_HEADER.split(",")):
            raise ValueError(f"malformed results row at line {lineno}")
        kind, algorithm, stage, replicate = parts[0], parts[1], parts[2], int(parts[3])
        key = (algorithm, stage, replicate)
        if kind == "curve":
            curves.setdefault(key, LearningCurve()).append(
                segnet.CurvePoint(
                    epoch=int(parts[4]),
                    train_loss=float(parts[5]),
                    validation_loss=float(parts[6]),
                    test_accuracy=float(parts[7]) if parts[7] else None,
                )
            )
        elif kind == "summary":
            results.append(
                RunResult(
                    algorithm=algorithm,
                    stage=stage,
                    replicate=replicate,
                    curve=curves.pop(key, LearningCurve()),
                    rep_accuracy=float(parts[8]),
                    full_rep_accuracy=float(parts[9]) if parts[9] else None,
                    bad_accuracy=float(parts[10]),
                    deid_pass=int(parts[11]),
                    deid_total=int(parts[12]),
                )
            )
        else:
            raise ValueError(f"unknown row kind {kind!r} at line {lineno}")
    if curves:
        raise ValueError(f"curve rows without a summary: {sorted(curves)}")
    return results
